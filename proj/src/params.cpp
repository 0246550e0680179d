#include "csiwm/params.hpp"

#include <cstring>
#include <stdexcept>

namespace csiwm {

void ParamSet::add(std::string name, Tensor value, bool decay) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), std::move(value), decay});
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].value;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].value;
}

Index ParamSet::scalar_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || entries_[i].value.shape() != other.entries_[i].value.shape()) {
      return false;
    }
  }
  return true;
}

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    mix(e.value.ptr(), std::size_t(e.value.size()) * sizeof(double));
  }
  return h;
}

BoundParams::BoundParams(const ParamSet& params, bool trainable) {
  for (const auto& e : params.entries()) {
    index_[e.name] = vars_.size();
    names_.push_back(e.name);
    vars_.push_back(trainable ? ad::parameter(e.value) : ad::constant(e.value));
  }
}

BoundParams::BoundParams(std::vector<std::string> names, std::vector<ad::Var> vars)
    : vars_(std::move(vars)), names_(std::move(names)) {
  if (names_.size() != vars_.size()) throw std::invalid_argument("BoundParams: names and vars differ in count");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!index_.emplace(names_[i], i).second) throw std::invalid_argument("duplicate parameter name: " + names_[i]);
  }
}

const ad::Var& BoundParams::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unbound parameter: " + name);
  return vars_[it->second];
}

std::vector<Tensor> BoundParams::grads() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const auto& v : vars_) out.push_back(v.grad());
  return out;
}

}  // namespace csiwm
