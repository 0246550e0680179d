#include "csiwm/checkpoint.hpp"

#include "csiwm/binary_io.hpp"

#include <json.hpp>

#include <limits>
#include <map>
#include <vector>

namespace csiwm {
namespace {

using Json = nlohmann::ordered_json;

/// Every stored tensor with its serialized name, in file order.
template <typename State>
auto tensor_slots(State& s) {
  using T = std::conditional_t<std::is_const_v<State>, const Tensor, Tensor>;
  std::vector<std::pair<std::string, T*>> out;
  auto params = [&](const std::string& prefix, auto& set) {
    for (auto& e : set.entries()) out.emplace_back(prefix + "/" + e.name, &e.value);
  };
  auto& m = s.model;
  params("online", m.online);
  params("online_stats", m.online_stats);
  params("target", m.target);
  params("target_stats", m.target_stats);
  params("predictor", m.predictor);
  params("idm", m.idm);
  auto adam = [&](const std::string& prefix, auto& state, const ParamSet& layout) {
    for (std::size_t i = 0; i < layout.size(); ++i) {
      out.emplace_back(prefix + ".m/" + layout.entries()[i].name, &state.m[i]);
      out.emplace_back(prefix + ".v/" + layout.entries()[i].name, &state.v[i]);
    }
  };
  adam("adam.encoder", s.adam_encoder, m.online);
  adam("adam.predictor", s.adam_predictor, m.predictor);
  return out;
}

[[noreturn]] void mismatch(const std::string& what) { throw CheckpointError(CheckpointError::Kind::kMismatch, what); }

std::string shape_text(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + ")";
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const auto& st = ckpt.state;
  if (st.adam_encoder.m.size() != st.model.online.size() || st.adam_predictor.m.size() != st.model.predictor.size()) {
    throw std::invalid_argument("checkpoint: optimizer state does not match the parameters");
  }
  RunConfig cfg = ckpt.config;
  cfg.model = st.model.config;
  Json meta;
  meta["config"] = Json::parse(dump_run_config(cfg));
  meta["global_step"] = st.global_step;
  meta["adam_steps"] = {st.adam_encoder.step, st.adam_predictor.step};
  const std::string blob = meta.dump(2);

  io::ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, sizeof kCheckpointMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(blob.size());
  w.put_bytes(blob);
  const auto slots = tensor_slots(st);
  w.put<std::uint32_t>(std::uint32_t(slots.size()));
  for (const auto& [name, t] : slots) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw std::invalid_argument("tensor name too long");
    w.put<std::uint16_t>(std::uint16_t(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(std::uint8_t(t->rank()));
    for (Index d : t->shape()) w.put<std::uint32_t>(std::uint32_t(d));
    for (Index i = 0; i < t->size(); ++i) w.put<float>(float((*t)[i]));
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  using Kind = CheckpointError::Kind;
  io::ByteReader r(bytes);
  try {
    if (r.get_bytes(sizeof kCheckpointMagic) != std::string_view(kCheckpointMagic, sizeof kCheckpointMagic)) {
      throw CheckpointError(Kind::kBadMagic, "not a checkpoint (bad magic)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(Kind::kBadVersion, "unsupported checkpoint version " + std::to_string(version) +
                                                   " (this build reads version " +
                                                   std::to_string(kCheckpointVersion) + ")");
    }
    const auto blob_size = r.get<std::uint64_t>();
    if (blob_size > r.remaining()) throw io::TruncatedError("truncated: config blob runs past end of file");
    const auto blob = r.get_bytes(std::size_t(blob_size));

    Checkpoint ck;
    Json meta;
    try {
      meta = Json::parse(blob);
      ck.config = parse_run_config(meta.at("config").dump());
      ck.state.global_step = meta.at("global_step").get<std::int64_t>();
      ck.state.adam_encoder.step = meta.at("adam_steps").at(0).get<std::int64_t>();
      ck.state.adam_predictor.step = meta.at("adam_steps").at(1).get<std::int64_t>();
    } catch (const Json::exception& e) {
      throw CheckpointError(Kind::kMalformed, std::string("checkpoint metadata: ") + e.what());
    } catch (const ConfigError& e) {
      throw CheckpointError(Kind::kMalformed, std::string("checkpoint config: ") + e.what());
    }
    if (meta.size() != 3) throw CheckpointError(Kind::kMalformed, "checkpoint metadata has unexpected keys");

    auto& st = ck.state;
    const std::int64_t global_step = st.global_step;
    const std::int64_t steps[2] = {st.adam_encoder.step, st.adam_predictor.step};
    st.model = init_model(ck.config.model, ck.config.train.seed);
    st.adam_encoder = AdamState::zeros_like(st.model.online);
    st.adam_predictor = AdamState::zeros_like(st.model.predictor);
    st.global_step = global_step;
    st.adam_encoder.step = steps[0];
    st.adam_predictor.step = steps[1];

    std::map<std::string, Tensor*> expected;
    for (auto& [name, t] : tensor_slots(st)) expected.emplace(name, t);
    const auto count = r.get<std::uint32_t>();
    if (count != expected.size()) {
      mismatch("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
               std::to_string(expected.size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::string name(r.get_bytes(r.get<std::uint16_t>()));
      const auto it = expected.find(name);
      if (it == expected.end()) mismatch("unexpected or repeated tensor '" + name + "'");
      Tensor& t = *it->second;
      const auto rank = r.get<std::uint8_t>();
      Shape shape(rank);
      for (auto& d : shape) d = Index(r.get<std::uint32_t>());
      if (shape != t.shape()) {
        mismatch("tensor '" + name + "' has shape " + shape_text(shape) + ", model expects " + shape_text(t.shape()));
      }
      for (Index j = 0; j < t.size(); ++j) t[j] = double(r.get<float>());
      expected.erase(it);
    }
    if (r.remaining() != 0) throw CheckpointError(Kind::kMalformed, "trailing bytes after the last tensor");
    return ck;
  } catch (const io::TruncatedError& e) {
    throw CheckpointError(Kind::kTruncated, std::string("checkpoint ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::atomic_write(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace csiwm
