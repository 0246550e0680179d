#pragma once

#include "csiwm/autodiff.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace csiwm {

/// Ordered collection of named tensors. Order is insertion order and is the
/// order used for serialization and optimizer state.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool decay = true;  // receives decoupled weight decay
  };

  void add(std::string name, Tensor value, bool decay = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  Index scalar_count() const;

  /// Same names, order and shapes.
  bool same_layout(const ParamSet& other) const;
  /// FNV-1a over names and raw value bytes.
  std::uint64_t hash() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Graph leaves bound to a ParamSet for one forward pass.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(const ParamSet& params, bool trainable);
  /// Binds existing graph leaves under the given names.
  BoundParams(std::vector<std::string> names, std::vector<ad::Var> vars);

  const ad::Var& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<ad::Var>& vars() const { return vars_; }
  const std::vector<std::string>& names() const { return names_; }

  /// Gradients in ParamSet order (zeros where nothing arrived).
  std::vector<Tensor> grads() const;

 private:
  std::vector<ad::Var> vars_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace csiwm
