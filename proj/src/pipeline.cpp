#include "xlate/pipeline.hpp"

#include <random>

#include "xlate/checkpoint.hpp"
#include "xlate/io.hpp"

namespace xlate {

namespace {

const char* precision_name(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

Precision parse_precision(const std::string& s) {
  if (s == "float32") return Precision::float32;
  if (s == "float64") return Precision::float64;
  throw ConfigError("precision must be float32 or float64, got " + s);
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("optimizer must be adam or sgd, got " + s);
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown key " + where + "." + key);
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for ") + key + ": " + e.what());
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

enum Purpose : std::uint32_t { kCorpus = 1, kBackbone, kExperts, kGate, kPretrain, kTrain, kGateData, kSchedule, kGateSchedule };

}  // namespace

RunConfig RunConfig::desk() {
  RunConfig c;
  c.corpus.programs_per_language = 1500;
  c.corpus.test_per_language = 60;
  c.corpus.python_programs = 1500;
  c.model = ModelConfig::desk(0);
  c.lora = {16, 32.0, 0.05};
  c.pretrain_epochs = 2;
  c.train.batch_size = 8;
  c.train.lr_scale = 1000;
  c.gate.epochs = 2;
  return c;
}

void RunConfig::validate() const {
  if (corpus.programs_per_language < 2) throw ConfigError("corpus.programs_per_language must be >= 2");
  if (corpus.test_per_language < 1) throw ConfigError("corpus.test_per_language must be >= 1");
  if (corpus.python_programs < 0) throw ConfigError("corpus.python_programs must be >= 0");
  if (bpe_merges < 0) throw ConfigError("bpe_merges must be >= 0");
  ModelConfig m = model;
  m.vocab_size = std::max(m.vocab_size, 1);
  m.validate();
  if (m.n_experts != kNumSourceLangs) throw ConfigError("model.n_experts must be 5");
  if (lora.rank < 1) throw ConfigError("lora.rank must be >= 1");
  if (lora.dropout < 0 || lora.dropout >= 1) throw ConfigError("lora.dropout must be in [0, 1)");
  if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be >= 0");
  if (!(pretrain_lr > 0)) throw ConfigError("pretrain_lr must be > 0");
  schedule.validate();
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(train.lr_scale > 0)) throw ConfigError("train.lr_scale must be > 0");
  if (gate.epochs < 0 || !(gate.lr > 0)) throw ConfigError("gate.epochs must be >= 0 and gate.lr > 0");
  if (gate_generic_fraction < 0 || gate_generic_fraction > 1) throw ConfigError("gate_generic_fraction must be in [0, 1]");
}

nlohmann::json RunConfig::to_json() const {
  const auto& g = corpus.generator;
  nlohmann::json model_json = model;
  model_json.erase("vocab_size");
  return {{"seed", seed},
          {"corpus",
           {{"programs_per_language", corpus.programs_per_language},
            {"test_per_language", corpus.test_per_language},
            {"python_programs", corpus.python_programs},
            {"min_statements", g.min_statements},
            {"max_statements", g.max_statements},
            {"function_probability", g.function_probability},
            {"print_probability", g.print_probability},
            {"max_literal", g.max_literal}}},
          {"bpe_merges", bpe_merges},
          {"model", model_json},
          {"lora", lora},
          {"precision", precision_name(precision)},
          {"pretrain", {{"epochs", pretrain_epochs}, {"lr", pretrain_lr}}},
          {"schedule", xlate::to_json(schedule)},
          {"train",
           {{"batch_size", train.batch_size},
            {"lr_scale", train.lr_scale},
            {"optimizer", train.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"},
            {"clip_norm", train.optimizer.clip_norm},
            {"target_only", train.target_only},
            {"keep_fraction", train.keep_fraction}}},
          {"gate", {{"epochs", gate.epochs}, {"lr", gate.lr}, {"generic_fraction", gate_generic_fraction}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c = desk();
  reject_unknown(j, {"seed", "corpus", "bpe_merges", "model", "lora", "precision", "pretrain", "schedule", "train", "gate", "output_dir"},
                 "config");
  read(j, "seed", c.seed);
  read(j, "bpe_merges", c.bpe_merges);
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("precision")) c.precision = parse_precision(j.at("precision").get<std::string>());
  if (j.contains("corpus")) {
    const auto& k = j.at("corpus");
    reject_unknown(k, {"programs_per_language", "test_per_language", "python_programs", "min_statements", "max_statements",
                       "function_probability", "print_probability", "max_literal"},
                   "corpus");
    read(k, "programs_per_language", c.corpus.programs_per_language);
    read(k, "test_per_language", c.corpus.test_per_language);
    read(k, "python_programs", c.corpus.python_programs);
    read(k, "min_statements", c.corpus.generator.min_statements);
    read(k, "max_statements", c.corpus.generator.max_statements);
    read(k, "function_probability", c.corpus.generator.function_probability);
    read(k, "print_probability", c.corpus.generator.print_probability);
    read(k, "max_literal", c.corpus.generator.max_literal);
  }
  if (j.contains("model")) {
    const auto& k = j.at("model");
    reject_unknown(k, {"n_blocks", "d_model", "n_heads", "head_dim", "multi_query", "mlp_ratio", "context_len", "n_experts",
                       "gate_uses_position"},
                   "model");
    nlohmann::json merged = c.model;
    merged.update(k);
    c.model = merged.get<ModelConfig>();
  }
  if (j.contains("lora")) {
    reject_unknown(j.at("lora"), {"rank", "alpha", "dropout"}, "lora");
    nlohmann::json merged = c.lora;
    merged.update(j.at("lora"));
    c.lora = merged.get<LoraSettings>();
  }
  if (j.contains("pretrain")) {
    const auto& k = j.at("pretrain");
    reject_unknown(k, {"epochs", "lr"}, "pretrain");
    read(k, "epochs", c.pretrain_epochs);
    read(k, "lr", c.pretrain_lr);
  }
  if (j.contains("schedule")) {
    const auto& k = j.at("schedule");
    reject_unknown(k, {"stages", "decay_within_stage", "seed"}, "schedule");
    read(k, "decay_within_stage", c.schedule.decay_within_stage);
    if (k.contains("stages")) {
      c.schedule.stages.clear();
      for (const auto& st : k.at("stages")) {
        reject_unknown(st, {"name", "epochs", "lr"}, "schedule.stages[]");
        c.schedule.stages.push_back({st.value("name", std::string("stage")), st.value("epochs", 2), st.value("lr", 1e-5)});
      }
    }
  }
  if (j.contains("train")) {
    const auto& k = j.at("train");
    reject_unknown(k, {"batch_size", "lr_scale", "optimizer", "clip_norm", "target_only", "keep_fraction"}, "train");
    read(k, "batch_size", c.train.batch_size);
    read(k, "lr_scale", c.train.lr_scale);
    if (k.contains("optimizer")) c.train.optimizer.kind = parse_optimizer(k.at("optimizer").get<std::string>());
    read(k, "clip_norm", c.train.optimizer.clip_norm);
    read(k, "target_only", c.train.target_only);
    read(k, "keep_fraction", c.train.keep_fraction);
  }
  if (j.contains("gate")) {
    const auto& k = j.at("gate");
    reject_unknown(k, {"epochs", "lr", "generic_fraction"}, "gate");
    read(k, "epochs", c.gate.epochs);
    read(k, "lr", c.gate.lr);
    read(k, "generic_fraction", c.gate_generic_fraction);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  try {
    return from_json(read_json(path));
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::hash() const {
  const std::string s = to_json().dump();
  return hex64(fnv1a(s.data(), s.size()));
}

Workspace prepare_workspace(const RunConfig& config, const Logger& log) {
  config.validate();
  Workspace ws;
  ws.corpus = generate_toy_corpus(derive_seed(config.seed, kCorpus), config.corpus);
  write_corpus(ws.corpus, config.seed, config.output_dir / "corpus");
  std::vector<std::string> texts;
  for (Lang l : kSourceLangs) {
    for (const auto& p : ws.corpus.train[static_cast<std::size_t>(l)]) texts.push_back(sample_text(lang_tag(l), p.src_code, p.py_code));
  }
  for (const auto& py : ws.corpus.python) texts.push_back(py);
  ws.tokenizer = Tokenizer::train(texts, config.bpe_merges);
  ws.tokenizer.save(config.output_dir / "tokenizer.json");
  if (log) log("corpus and tokenizer written to " + config.output_dir.string() + " (vocab " + std::to_string(ws.tokenizer.vocab_size()) + ")");
  return ws;
}

Workspace load_workspace(const RunConfig& config) {
  const auto dir = config.output_dir;
  if (!std::filesystem::exists(dir / "tokenizer.json")) throw DataError("no tokenizer in " + dir.string() + "; run the corpus step first");
  return {read_corpus(dir / "corpus"), Tokenizer::load(dir / "tokenizer.json")};
}

std::vector<StageData> pretraining_data(const Workspace& ws, const RunConfig& config) {
  const int ctx = config.model.context_len;
  StageData data{"pretrain", {}};
  for (const auto& py : ws.corpus.python) {
    data.samples.push_back(build_text_sample(Lang::py, py, ws.tokenizer, ctx));
    try {
      data.samples.push_back(build_copy_sample(py, ws.tokenizer, ctx));
    } catch (const ContextError&) {
      // long programs only contribute the plain LM sample
    }
  }
  for (Lang l : kSourceLangs) {
    for (const auto& p : ws.corpus.train[static_cast<std::size_t>(l)]) {
      data.samples.push_back(build_text_sample(l, p.src_code, ws.tokenizer, ctx));
      try {
        data.samples.push_back(build_copy_sample(p.src_code, ws.tokenizer, ctx, l));
      } catch (const ContextError&) {
      }
    }
  }
  return {std::move(data)};
}

StageData gate_data(const Workspace& ws, const RunConfig& config) {
  std::mt19937_64 rng(derive_seed(config.seed, kGateData));
  std::bernoulli_distribution generic(config.gate_generic_fraction);
  StageData data{"moe", {}};
  SampleOptions opts;
  opts.context_len = config.model.context_len;
  opts.target_only = config.train.target_only;
  for (const auto& p : build_moe_dataset(ws.corpus.train)) {
    opts.tag = generic(rng) ? TagMode::generic : TagMode::language;
    data.samples.push_back(build_sample(p, ws.tokenizer, opts));
  }
  return data;
}

template <typename Scalar>
Model<Scalar> init_model(const RunConfig& config, int vocab_size) {
  ModelConfig mc = config.model;
  mc.vocab_size = vocab_size;
  Model<Scalar> m;
  m.backbone = Backbone<Scalar>::init(mc, derive_seed(config.seed, kBackbone));
  for (Lang l : kSourceLangs) {
    m.experts.push_back(init_expert<Scalar>(mc, config.lora, lang_tag(l), derive_seed(config.seed, kExperts) + static_cast<std::uint64_t>(l)));
  }
  m.gate = GateNetwork<Scalar>::init(mc.d_model, mc.n_experts, derive_seed(config.seed, kGate));
  m.freeze_all();
  return m;
}

namespace {

TrainSettings settings_for(const RunConfig& config, std::uint32_t purpose, const Logger& log) {
  TrainSettings s = config.train;
  s.seed = derive_seed(config.seed, purpose);
  s.log = log;
  return s;
}

}  // namespace

template <typename Scalar>
TrainReport run_pretrain(Model<Scalar>& model, const Workspace& ws, const RunConfig& config, const Logger& log) {
  TrainSettings s = settings_for(config, kPretrain, log);
  s.lr_scale = 1.0;
  TrainReport r = pretrain_backbone(model, pretraining_data(ws, config), config.pretrain_epochs, config.pretrain_lr, s);
  r.config["run"] = config.to_json();
  r.config["run_hash"] = config.hash();
  return r;
}

template <typename Scalar>
TrainReport run_train_expert(Model<Scalar>& model, Lang lang, const Workspace& ws, const RunConfig& config, const Logger& log) {
  SampleOptions opts;
  opts.context_len = config.model.context_len;
  opts.target_only = config.train.target_only;
  const auto& programs = ws.corpus.train.at(static_cast<std::size_t>(expert_slot(lang)));
  if (programs.empty()) throw DataError("no training programs for " + std::string(lang_name(lang)));
  CurriculumSchedule schedule = config.schedule;
  schedule.seed = derive_seed(config.seed, kSchedule) + static_cast<std::uint64_t>(lang);
  TrainReport r = train_expert(model, lang, curriculum_data(programs, ws.tokenizer, opts), schedule,
                               settings_for(config, kTrain + 16 * static_cast<std::uint32_t>(lang), log));
  r.config["run"] = config.to_json();
  r.config["run_hash"] = config.hash();
  return r;
}

template <typename Scalar>
TrainReport run_train_gate(Model<Scalar>& model, const Workspace& ws, const RunConfig& config, const Logger& log) {
  GateSchedule g = config.gate;
  g.seed = derive_seed(config.seed, kGateSchedule);
  TrainReport r = train_gate(model, gate_data(ws, config), g, settings_for(config, kGateData, log));
  r.config["run"] = config.to_json();
  r.config["run_hash"] = config.hash();
  return r;
}

std::filesystem::path model_path(const RunConfig& config) { return config.output_dir / "model.ckpt"; }

std::filesystem::path report_path(const RunConfig& config, const std::string& name) {
  return config.output_dir / "reports" / (name + ".json");
}

template <typename Scalar>
void save_model(const Model<Scalar>& model, const RunConfig& config) {
  save_checkpoint(model_path(config), model, {{"run_hash", config.hash()}, {"run", config.to_json()}});
}

template <typename Scalar>
Model<Scalar> load_model(const RunConfig& config, bool force) {
  const auto path = model_path(config);
  if (!std::filesystem::exists(path)) throw DataError("no checkpoint at " + path.string() + "; run pretrain first");
  nlohmann::json meta;
  Model<Scalar> m = load_checkpoint<Scalar>(path, &meta);
  const std::string stored = meta.value("run_hash", std::string());
  if (!force && stored != config.hash()) {
    throw ConfigError("checkpoint " + path.string() + " was written under config " + stored + ", current config is " +
                      config.hash() + " (use --force to override)");
  }
  return m;
}

void write_report(const RunConfig& config, const std::string& name, const nlohmann::json& report) {
  const auto path = report_path(config, name);
  std::filesystem::create_directories(path.parent_path());
  write_text_atomic(path, report.dump(2) + "\n");
}

template <typename Scalar>
PipelineRun<Scalar> run_pipeline(const RunConfig& config, const Logger& log) {
  PipelineRun<Scalar> run{prepare_workspace(config, log), {}, {}};
  run.model = init_model<Scalar>(config, run.workspace.tokenizer.vocab_size());
  auto phase = [&](std::string name, TrainReport r) {
    write_report(config, name, r.to_json());
    save_model(run.model, config);
    run.phases.push_back({std::move(name), std::move(r)});
  };
  phase("pretrain", run_pretrain(run.model, run.workspace, config, log));
  for (Lang l : kSourceLangs) {
    phase("train-expert-" + std::string(lang_name(l)), run_train_expert(run.model, l, run.workspace, config, log));
  }
  phase("train-gate", run_train_gate(run.model, run.workspace, config, log));
  return run;
}

nlohmann::json EvaluationSummary::to_json() const {
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : per_expert) experts.push_back(e.to_json());
  return {{"routing", routing.to_json()},
          {"routing_generic", routing_generic.to_json()},
          {"routed", routed.to_json()},
          {"baseline", baseline.to_json()},
          {"per_expert", experts}};
}

template <typename Scalar>
EvaluationSummary evaluate_all(const Model<Scalar>& model, const Workspace& ws, const RunConfig& config) {
  EvaluationSummary s;
  const auto& test = ws.corpus.test;
  s.routing = evaluate_routing(model, test, ws.tokenizer, TagMode::language);
  s.routing_generic = evaluate_routing(model, test, ws.tokenizer, TagMode::generic);
  s.routed = evaluate_translation(model, test, ws.tokenizer, TagMode::language);
  for (std::size_t e = 0; e < model.experts.size(); ++e) {
    s.per_expert.push_back(evaluate_translation(model, test, ws.tokenizer, TagMode::language, static_cast<int>(e)));
  }
  // Same initial experts as init_model.
  Model<Scalar> fresh = model;
  for (std::size_t e = 0; e < fresh.experts.size(); ++e) {
    fresh.experts[e] = init_expert<Scalar>(fresh.config(), config.lora, fresh.experts[e].tag,
                                           derive_seed(config.seed, kExperts) + static_cast<std::uint64_t>(kSourceLangs[e]));
  }
  s.baseline = evaluate_translation(fresh, test, ws.tokenizer, TagMode::language);
  return s;
}

#define XLATE_INSTANTIATE(S)                                                                                           \
  template Model<S> init_model(const RunConfig&, int);                                                                 \
  template TrainReport run_pretrain(Model<S>&, const Workspace&, const RunConfig&, const Logger&);                     \
  template TrainReport run_train_expert(Model<S>&, Lang, const Workspace&, const RunConfig&, const Logger&);           \
  template TrainReport run_train_gate(Model<S>&, const Workspace&, const RunConfig&, const Logger&);                   \
  template void save_model(const Model<S>&, const RunConfig&);                                                         \
  template Model<S> load_model(const RunConfig&, bool);                                                                \
  template PipelineRun<S> run_pipeline(const RunConfig&, const Logger&);                                               \
  template EvaluationSummary evaluate_all(const Model<S>&, const Workspace&, const RunConfig&);

XLATE_INSTANTIATE(float)
XLATE_INSTANTIATE(double)

}  // namespace xlate
