#include "xlate/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "xlate/io.hpp"

namespace xlate {

namespace {
constexpr char kMagic[8] = {'X', 'L', 'A', 'T', 'E', 'C', 'K', '1'};
constexpr int kFormatVersion = 1;
}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_blocks", c.n_blocks},       {"d_model", c.d_model},         {"n_heads", c.n_heads},
       {"head_dim", c.head_dim},       {"multi_query", c.multi_query}, {"mlp_ratio", c.mlp_ratio},
       {"vocab_size", c.vocab_size},   {"context_len", c.context_len}, {"n_experts", c.n_experts},
       {"gate_uses_position", c.gate_uses_position}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n_blocks = j.value("n_blocks", d.n_blocks);
  c.d_model = j.value("d_model", d.d_model);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.head_dim = j.value("head_dim", d.head_dim);
  c.multi_query = j.value("multi_query", d.multi_query);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.context_len = j.value("context_len", d.context_len);
  c.n_experts = j.value("n_experts", d.n_experts);
  c.gate_uses_position = j.value("gate_uses_position", d.gate_uses_position);
}

void to_json(nlohmann::json& j, const LoraSettings& s) { j = {{"rank", s.rank}, {"alpha", s.alpha}, {"dropout", s.dropout}}; }

void from_json(const nlohmann::json& j, LoraSettings& s) {
  LoraSettings d;
  s.rank = j.value("rank", d.rank);
  s.alpha = j.value("alpha", d.alpha);
  s.dropout = j.value("dropout", d.dropout);
}

template <typename Scalar>
std::vector<std::pair<std::string, NamedTensors<Scalar>>> weight_groups(const Model<Scalar>& model) {
  std::vector<std::pair<std::string, NamedTensors<Scalar>>> out;
  out.emplace_back("backbone", model.backbone.named_parameters());
  for (const auto& e : model.experts) out.emplace_back("expert:" + e.tag, e.named_parameters());
  if (model.gate) out.emplace_back("gate", NamedTensors<Scalar>{{"weight", model.gate->weight}, {"bias", model.gate->bias}});
  return out;
}

template <typename Scalar>
std::string group_hash(const NamedTensors<Scalar>& tensors) {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& [name, t] : tensors) {
    h = fnv1a(name.data(), name.size(), h);
    for (Index d : t.shape()) {
      const auto v = static_cast<std::int64_t>(d);
      h = fnv1a(&v, sizeof v, h);
    }
    for (Index i = 0; i < t.size(); ++i) {
      const double v = static_cast<double>(t.data()[i]);
      h = fnv1a(&v, sizeof v, h);
    }
  }
  return hex64(h);
}

template <typename Scalar>
std::map<std::string, std::string> group_hashes(const Model<Scalar>& model) {
  std::map<std::string, std::string> out;
  for (const auto& [name, tensors] : weight_groups(model)) out[name] = group_hash(tensors);
  return out;
}

template <typename Scalar>
Model<Scalar> clone_model(const Model<Scalar>& model) {
  Model<Scalar> m = model;
  auto copy = [](Tensor<Scalar>& t) { t = t.clone(t.requires_grad()); };
  copy(m.backbone.token_embedding);
  copy(m.backbone.position_embedding);
  copy(m.backbone.final_gain);
  copy(m.backbone.final_bias);
  for (auto& b : m.backbone.blocks) {
    for (Tensor<Scalar>* t : {&b.ln1_gain, &b.ln1_bias, &b.qkv_weight, &b.qkv_bias, &b.proj_weight, &b.proj_bias, &b.ln2_gain,
                              &b.ln2_bias, &b.up_weight, &b.up_bias, &b.down_weight, &b.down_bias}) {
      copy(*t);
    }
  }
  for (auto& e : m.experts) {
    for (auto& s : e.sites) {
      copy(s.a);
      copy(s.b);
    }
  }
  if (m.gate) {
    copy(m.gate->weight);
    copy(m.gate->bias);
  }
  return m;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Model<Scalar>& model, const nlohmann::json& meta) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["config"] = model.config();
  header["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : model.experts) experts.push_back({{"tag", e.tag}, {"lora", e.settings}});
  header["experts"] = experts;
  header["has_gate"] = model.gate.has_value();

  std::string payload;
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& [name, tensors] : weight_groups(model)) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [tname, t] : tensors) {
      entries.push_back({{"name", tname}, {"shape", t.shape()}, {"offset", payload.size() / sizeof(double)}});
      for (Index i = 0; i < t.size(); ++i) {
        const double v = static_cast<double>(t.data()[i]);
        char buf[sizeof v];
        std::memcpy(buf, &v, sizeof v);
        payload.append(buf, sizeof v);
      }
    }
    groups.push_back({{"name", name}, {"hash", group_hash(tensors)}, {"tensors", entries}});
  }
  header["groups"] = groups;

  const std::string h = header.dump();
  const std::uint64_t len = h.size();
  std::string file(kMagic, sizeof kMagic);
  file.append(reinterpret_cast<const char*>(&len), sizeof len);
  file += h;
  file += payload;
  write_text_atomic(path, file);
}

namespace {

struct RawCheckpoint {
  nlohmann::json header;
  std::string payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError(path.string() + " is not a checkpoint");
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated header");
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": corrupt header: " + e.what());
  }
  if (raw.header.value("format_version", 0) != kFormatVersion) throw DataError(path.string() + ": unsupported checkpoint version");
  if (with_payload) {
    std::ostringstream ss;
    ss << in.rdbuf();
    raw.payload = ss.str();
  }
  return raw;
}

}  // namespace

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) { return read_raw(path, false).header; }

template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  const RawCheckpoint raw = read_raw(path, true);
  const nlohmann::json& h = raw.header;
  Model<Scalar> model;
  const ModelConfig config = h.at("config").get<ModelConfig>();
  model.backbone = Backbone<Scalar>::init(config, 0);
  for (const auto& e : h.at("experts")) {
    model.experts.push_back(init_expert<Scalar>(config, e.at("lora").get<LoraSettings>(), e.at("tag").get<std::string>(), 0));
  }
  if (h.at("has_gate").get<bool>()) model.gate = GateNetwork<Scalar>::init(config.d_model, config.n_experts, 0);

  const std::size_t n_doubles = raw.payload.size() / sizeof(double);
  auto groups = weight_groups(model);
  const auto& stored = h.at("groups");
  if (stored.size() != groups.size()) throw DataError(path.string() + ": group list does not match header");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& [name, tensors] = groups[g];
    if (stored[g].at("name") != name || stored[g].at("tensors").size() != tensors.size()) {
      throw DataError(path.string() + ": unexpected group layout for " + name);
    }
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const auto& entry = stored[g].at("tensors")[k];
      Tensor<Scalar>& t = tensors[k].second;
      if (entry.at("name") != tensors[k].first || entry.at("shape").get<Shape>() != t.shape()) {
        throw DataError(path.string() + ": tensor " + name + "/" + tensors[k].first + " has unexpected shape");
      }
      const auto offset = entry.at("offset").get<std::size_t>();
      if (offset + static_cast<std::size_t>(t.size()) > n_doubles) throw DataError(path.string() + ": truncated payload");
      for (Index i = 0; i < t.size(); ++i) {
        double v;
        std::memcpy(&v, raw.payload.data() + (offset + static_cast<std::size_t>(i)) * sizeof(double), sizeof v);
        t.mutable_data()[i] = static_cast<Scalar>(v);
      }
    }
    if (group_hash(tensors) != stored[g].at("hash")) throw DataError(path.string() + ": hash mismatch in group " + name);
  }
  model.freeze_all();
  if (meta) *meta = h.at("meta");
  return model;
}

bool AuditReport::ok() const {
  for (const auto& e : entries) {
    if (e.changed && !e.expected_change) return false;
  }
  return true;
}

std::vector<std::string> AuditReport::changed_groups() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.changed) out.push_back(e.group);
  }
  return out;
}

std::string AuditReport::summary() const {
  std::ostringstream out;
  for (const auto& e : entries) {
    out << (e.changed ? "changed  " : "unchanged") << "  " << e.group;
    if (e.changed && !e.expected_change) out << "  (UNEXPECTED)";
    out << "\n";
  }
  return out.str();
}

nlohmann::json AuditReport::to_json() const {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& e : entries) groups.push_back({{"group", e.group}, {"changed", e.changed}, {"expected", e.expected_change}});
  return {{"ok", ok()}, {"groups", groups}};
}

AuditReport audit_frozen(const std::map<std::string, std::string>& before, const std::map<std::string, std::string>& after,
                         const std::set<std::string>& expected_changed) {
  for (const auto& [name, hash] : before) {
    if (!after.count(name)) throw ContractError("audit: group " + name + " missing after training");
  }
  for (const auto& [name, hash] : after) {
    if (!before.count(name)) throw ContractError("audit: group " + name + " missing before training");
  }
  AuditReport r;
  for (const auto& [name, hash] : before) r.entries.push_back({name, after.at(name) != hash, expected_changed.count(name) > 0});
  return r;
}

#define XLATE_INSTANTIATE(S)                                                                                              \
  template std::vector<std::pair<std::string, NamedTensors<S>>> weight_groups(const Model<S>&);                          \
  template std::string group_hash(const NamedTensors<S>&);                                                               \
  template std::map<std::string, std::string> group_hashes(const Model<S>&);                                             \
  template Model<S> clone_model(const Model<S>&);                                                                        \
  template void save_checkpoint(const std::filesystem::path&, const Model<S>&, const nlohmann::json&);                  \
  template Model<S> load_checkpoint(const std::filesystem::path&, nlohmann::json*);

XLATE_INSTANTIATE(float)
XLATE_INSTANTIATE(double)

}  // namespace xlate
