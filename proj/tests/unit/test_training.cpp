#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "small_model.hpp"
#include "xlate/checkpoint.hpp"
#include "xlate/pipeline.hpp"
#include "xlate/training.hpp"

using namespace xlate;
using xlate::testing::tiny_config;
using xlate::testing::tiny_model;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "xlate_test_training";
  std::filesystem::create_directories(dir);
  return dir / name;
}

RunConfig small_run() {
  RunConfig c = RunConfig::desk();
  c.corpus.programs_per_language = 12;
  c.corpus.test_per_language = 4;
  c.corpus.python_programs = 12;
  c.model.n_blocks = 1;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.head_dim = 8;
  c.model.mlp_ratio = 2;
  c.lora = {2, 8.0, 0.05};
  c.train.batch_size = 4;
  c.output_dir = temp_path("run");
  return c;
}

struct Fixture {
  RunConfig config = small_run();
  Workspace ws;
  Model<double> model;

  Fixture() {
    ws.corpus = generate_toy_corpus(3, config.corpus);
    std::vector<std::string> texts;
    for (const auto& lang : ws.corpus.train) {
      for (const auto& p : lang) texts.push_back(sample_text(lang_tag(p.src_lang), p.src_code, p.py_code));
    }
    ws.tokenizer = Tokenizer::train(texts, 64);
    model = init_model<double>(config, ws.tokenizer.vocab_size());
  }

  std::vector<StageData> stages(Lang lang) const {
    SampleOptions o;
    o.context_len = config.model.context_len;
    return curriculum_data(ws.corpus.train[static_cast<std::size_t>(lang)], ws.tokenizer, o);
  }

  TrainSettings settings(std::uint64_t seed = 1) const {
    TrainSettings s = config.train;
    s.seed = seed;
    return s;
  }
};

}  // namespace

// ---- schedule

TEST(Schedule, StandardIsValidAndDecreasing) {
  const CurriculumSchedule s = CurriculumSchedule::standard();
  EXPECT_NO_THROW(s.validate());
  ASSERT_EQ(s.stages.size(), 2u);
  EXPECT_EQ(s.stages[0].name, "snippet");
  EXPECT_EQ(s.stages[1].name, "program");
  EXPECT_EQ(s.stages[0].epochs, 2);
  EXPECT_EQ(s.stages[1].epochs, 2);
  EXPECT_GT(s.stages[0].lr, s.stages[1].lr);
}

TEST(Schedule, RejectsOutOfRangeAndNonDecreasingRates) {
  CurriculumSchedule s = CurriculumSchedule::standard();
  s.stages[0].lr = 2e-5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = CurriculumSchedule::standard();
  s.stages[1].lr = 5e-7;
  EXPECT_THROW(s.validate(), ConfigError);
  s = CurriculumSchedule::standard();
  s.stages[1].lr = s.stages[0].lr;
  EXPECT_THROW(s.validate(), ConfigError);
  s.stages.clear();
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Schedule, LinearDecayWithinStage) {
  CurriculumSchedule s = CurriculumSchedule::standard();
  EXPECT_DOUBLE_EQ(s.lr_at(0, 0.0), 1e-5);
  EXPECT_DOUBLE_EQ(s.lr_at(0, 0.5), 5.5e-6);
  EXPECT_DOUBLE_EQ(s.lr_at(0, 1.0), 1e-6);
  EXPECT_DOUBLE_EQ(s.lr_at(1, 0.0), 1e-6);
  EXPECT_DOUBLE_EQ(s.lr_at(1, 0.7), 1e-6);
  s.decay_within_stage = false;
  EXPECT_DOUBLE_EQ(s.lr_at(0, 0.9), 1e-5);
}

TEST(Schedule, EpochSeedsAreDistinct) {
  const CurriculumSchedule s = CurriculumSchedule::standard(42);
  std::set<std::uint64_t> seeds;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    for (int epoch = 0; epoch < 8; ++epoch) seeds.insert(s.epoch_seed(stage, epoch));
  }
  EXPECT_EQ(seeds.size(), 32u);
  EXPECT_EQ(s.epoch_seed(1, 1), CurriculumSchedule::standard(42).epoch_seed(1, 1));
  EXPECT_NE(s.epoch_seed(1, 1), CurriculumSchedule::standard(43).epoch_seed(1, 1));
}

// ---- optimiser

TEST(Optimizer, SgdStepMatchesHandUpdate) {
  Tensor<double> w = Tensor<double>::from({3}, {1.0, -2.0, 0.5});
  w.set_requires_grad(true);
  w.grad_buffer() = Vec<double>::Map(std::vector<double>{0.1, 0.2, -0.2}.data(), 3);
  Optimizer<double> opt({w}, {OptimizerKind::sgd, 1.0});
  const double norm = opt.step(0.5);
  EXPECT_DOUBLE_EQ(norm, 0.3);
  EXPECT_DOUBLE_EQ(w.data()[0], 1.0 - 0.05);
  EXPECT_DOUBLE_EQ(w.data()[1], -2.0 - 0.1);
  EXPECT_DOUBLE_EQ(w.data()[2], 0.5 + 0.1);
  EXPECT_FALSE(w.has_grad());
}

TEST(Optimizer, ClipsToUnitGlobalNorm) {
  Tensor<double> a = Tensor<double>::from({1}, {0.0});
  Tensor<double> b = Tensor<double>::from({1}, {0.0});
  a.grad_buffer()[0] = 3.0;
  b.grad_buffer()[0] = 4.0;
  Optimizer<double> opt({a, b}, {OptimizerKind::sgd, 1.0});
  EXPECT_DOUBLE_EQ(opt.step(1.0), 5.0);
  EXPECT_DOUBLE_EQ(a.data()[0], -0.6);
  EXPECT_DOUBLE_EQ(b.data()[0], -0.8);
}

TEST(Optimizer, AdamFirstStepIsSignTimesRate) {
  Tensor<double> w = Tensor<double>::from({2}, {0.0, 0.0});
  w.grad_buffer() = Vec<double>::Map(std::vector<double>{0.3, -0.001}.data(), 2);
  OptimizerSettings s;
  s.eps = 0.0;
  Optimizer<double> opt({w}, s);
  opt.step(0.01);
  EXPECT_NEAR(w.data()[0], -0.01, 1e-15);
  EXPECT_NEAR(w.data()[1], 0.01, 1e-15);
}

// ---- checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
  auto m = tiny_model<double>(tiny_config(), 5);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, m, {{"note", "x"}});
  nlohmann::json meta;
  const auto back = load_checkpoint<double>(path, &meta);
  EXPECT_EQ(meta.at("note"), "x");
  EXPECT_EQ(group_hashes(back), group_hashes(m));
  const auto a = weight_groups(m), b = weight_groups(back);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t g = 0; g < a.size(); ++g) {
    for (std::size_t k = 0; k < a[g].second.size(); ++k) {
      EXPECT_TRUE((a[g].second[k].second.data().array() == b[g].second[k].second.data().array()).all());
    }
  }
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.experts[1].settings, m.experts[1].settings);
}

TEST(Checkpoint, FloatRoundTrip) {
  auto m = tiny_model<float>(tiny_config(), 6);
  const auto path = temp_path("float.ckpt");
  save_checkpoint(path, m);
  EXPECT_EQ(group_hashes(load_checkpoint<float>(path)), group_hashes(m));
}

TEST(Checkpoint, HeaderListsGroups) {
  auto m = tiny_model<double>(tiny_config(), 5);
  const auto path = temp_path("header.ckpt");
  save_checkpoint(path, m);
  const auto h = read_checkpoint_header(path);
  std::vector<std::string> names;
  for (const auto& g : h.at("groups")) names.push_back(g.at("name"));
  EXPECT_EQ(names, (std::vector<std::string>{"backbone", "expert:e0", "expert:e1", "expert:e2", "gate"}));
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  auto m = tiny_model<double>(tiny_config(), 5);
  const auto path = temp_path("corrupt.ckpt");
  save_checkpoint(path, m);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::string flipped = bytes;
    flipped[flipped.size() - 3] ^= 0x40;
    std::ofstream(path, std::ios::binary) << flipped;
    EXPECT_THROW(load_checkpoint<double>(path), DataError);
  }
  {
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 16);
    EXPECT_THROW(load_checkpoint<double>(path), DataError);
  }
  {
    std::ofstream(path, std::ios::binary) << "not a checkpoint at all";
    EXPECT_THROW(load_checkpoint<double>(path), DataError);
  }
  EXPECT_THROW(load_checkpoint<double>(temp_path("missing.ckpt")), DataError);
}

TEST(Checkpoint, CloneSharesNoStorage) {
  auto m = tiny_model<double>(tiny_config(), 7);
  const auto before = group_hashes(m);
  auto c = clone_model(m);
  c.backbone.blocks[0].qkv_weight.mutable_data()[0] += 1.0;
  c.experts[0].sites[0].b.mutable_data()[0] += 1.0;
  c.gate->bias.mutable_data()[0] += 1.0;
  EXPECT_EQ(group_hashes(m), before);
  const auto after = group_hashes(c);
  EXPECT_NE(after.at("backbone"), before.at("backbone"));
  EXPECT_NE(after.at("expert:e0"), before.at("expert:e0"));
  EXPECT_EQ(after.at("expert:e1"), before.at("expert:e1"));
  EXPECT_NE(after.at("gate"), before.at("gate"));
}

TEST(Checkpoint, HashSeesSingleUlpChange) {
  auto m = tiny_model<double>(tiny_config(), 8);
  const auto before = group_hashes(m);
  double& v = m.experts[2].sites[0].a.mutable_data()[3];
  v = std::nextafter(v, 1e9);
  const auto after = group_hashes(m);
  EXPECT_NE(after.at("expert:e2"), before.at("expert:e2"));
  EXPECT_EQ(after.at("backbone"), before.at("backbone"));
}

// ---- audit

TEST(Audit, IdenticalModelsAreAllUnchanged) {
  auto m = tiny_model<double>(tiny_config(), 9);
  const auto h = group_hashes(m);
  const AuditReport r = audit_frozen(h, h, {});
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(r.changed_groups().empty());
  EXPECT_EQ(r.entries.size(), 5u);
}

TEST(Audit, UnexpectedChangeFails) {
  auto m = tiny_model<double>(tiny_config(), 9);
  const auto before = group_hashes(m);
  m.gate->weight.mutable_data()[0] += 1e-3;
  const auto after = group_hashes(m);
  EXPECT_TRUE(audit_frozen(before, after, {"gate"}).ok());
  const AuditReport r = audit_frozen(before, after, {"expert:e0"});
  EXPECT_FALSE(r.ok());
  EXPECT_EQ(r.changed_groups(), std::vector<std::string>{"gate"});
}

TEST(Audit, ArchitectureMismatchThrows) {
  auto a = tiny_model<double>(tiny_config(), 9);
  auto b = a;
  b.experts.pop_back();
  EXPECT_THROW(audit_frozen(group_hashes(a), group_hashes(b), {}), ContractError);
}

// ---- training phases

TEST(TrainExpert, OnlyTargetExpertChanges) {
  Fixture f;
  CurriculumSchedule s = CurriculumSchedule::standard(3);
  s.stages[0].epochs = 1;
  s.stages[1].epochs = 1;
  TrainSettings t = f.settings();
  t.lr_scale = 100;
  const TrainReport r = train_expert(f.model, Lang::js, f.stages(Lang::js), s, t);
  EXPECT_TRUE(r.audit().ok());
  EXPECT_EQ(r.audit().changed_groups(), std::vector<std::string>{"expert:<js>"});
  EXPECT_EQ(r.hashes_before.at("backbone"), r.hashes_after.at("backbone"));
  EXPECT_EQ(r.hashes_after, group_hashes(f.model));
  ASSERT_EQ(r.stages.size(), 2u);
  EXPECT_EQ(r.stages[0].name, "snippet");
  EXPECT_EQ(r.stages[1].name, "program");
  EXPECT_EQ(r.stages[1].first_step, r.stages[0].steps);
  EXPECT_EQ(r.losses.size(), r.stages[0].steps + r.stages[1].steps);
}

TEST(TrainExpert, LearningRatesFollowScheduleTimesScale) {
  Fixture f;
  CurriculumSchedule s = CurriculumSchedule::standard(3);
  TrainSettings t = f.settings();
  t.lr_scale = 10;
  const TrainReport r = train_expert(f.model, Lang::cpp, f.stages(Lang::cpp), s, t);
  ASSERT_FALSE(r.learning_rates.empty());
  EXPECT_DOUBLE_EQ(r.learning_rates.front(), 1e-4);
  const std::size_t boundary = r.stages[1].first_step;
  for (std::size_t i = 1; i < boundary; ++i) EXPECT_LT(r.learning_rates[i], r.learning_rates[i - 1]);
  for (std::size_t i = boundary; i < r.learning_rates.size(); ++i) EXPECT_DOUBLE_EQ(r.learning_rates[i], 1e-5);
  std::set<std::uint64_t> seeds;
  for (const auto& st : r.stages) seeds.insert(st.epoch_seeds.begin(), st.epoch_seeds.end());
  EXPECT_EQ(seeds.size(), 4u);
}

TEST(TrainExpert, ZeroEpochsLeavesExpertAtInit) {
  Fixture f;
  CurriculumSchedule s = CurriculumSchedule::standard();
  s.stages[0].epochs = 0;
  s.stages[1].epochs = 0;
  const TrainReport r = train_expert(f.model, Lang::php, f.stages(Lang::php), s, f.settings());
  EXPECT_TRUE(r.losses.empty());
  EXPECT_TRUE(r.audit().changed_groups().empty());
  for (const auto& site : f.model.experts[static_cast<std::size_t>(Lang::php)].sites) EXPECT_TRUE(site.b.data().isZero(0.0));
}

TEST(TrainExpert, BitReproducible) {
  Fixture a, b;
  CurriculumSchedule s = CurriculumSchedule::standard(11);
  s.stages[0].epochs = 1;
  const TrainReport ra = train_expert(a.model, Lang::java, a.stages(Lang::java), s, a.settings(4));
  const TrainReport rb = train_expert(b.model, Lang::java, b.stages(Lang::java), s, b.settings(4));
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_EQ(ra.hashes_after, rb.hashes_after);
  Fixture c;
  const TrainReport rc = train_expert(c.model, Lang::java, c.stages(Lang::java), CurriculumSchedule::standard(12), c.settings(4));
  EXPECT_NE(ra.losses, rc.losses);
}

TEST(TrainExpert, HeldOutLossDrops) {
  Fixture f;
  SampleOptions o;
  o.context_len = f.config.model.context_len;
  std::vector<TranslationSample> held_out;
  for (const auto& p : f.ws.corpus.test[static_cast<std::size_t>(Lang::cpp)]) held_out.push_back(build_sample(p, f.ws.tokenizer, o));
  const int slot = expert_slot(Lang::cpp);
  const double before = evaluate_loss(f.model, held_out, RouteMode::infer, slot);
  EXPECT_DOUBLE_EQ(before, evaluate_loss(f.model, held_out, RouteMode::none, -1));
  TrainSettings t = f.settings();
  t.lr_scale = 1000;
  train_expert(f.model, Lang::cpp, f.stages(Lang::cpp), CurriculumSchedule::standard(5), t);
  EXPECT_LT(evaluate_loss(f.model, held_out, RouteMode::infer, slot), before);
}

TEST(TrainExpert, FixedBatchLossDecreasesForFiftySteps) {
  Fixture f;
  auto stages = f.stages(Lang::csharp);
  StageData one{"fixed", {stages[1].samples.begin(), stages[1].samples.begin() + 4}};
  auto& expert = f.model.experts[static_cast<std::size_t>(Lang::csharp)];
  expert.settings.dropout = 0.0;
  // Nonzero B so both A and B receive gradient from the first step.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (auto& site : expert.sites) {
    for (Index i = 0; i < site.b.size(); ++i) site.b.mutable_data()[i] = normal(rng);
  }
  CurriculumSchedule s;
  s.stages = {{"fixed", 50, 1e-5}};
  TrainSettings t = f.settings();
  t.batch_size = 4;
  t.keep_fraction = 1.0;
  t.optimizer.kind = OptimizerKind::sgd;
  t.lr_scale = 2000;
  const TrainReport r = train_expert(f.model, Lang::csharp, {one}, s, t);
  ASSERT_EQ(r.losses.size(), 50u);
  for (std::size_t i = 1; i < r.losses.size(); ++i) EXPECT_LT(r.losses[i], r.losses[i - 1]) << "step " << i;
}

TEST(TrainExpert, NanLossAborts) {
  Fixture f;
  f.model.backbone.final_gain.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_expert(f.model, Lang::cpp, f.stages(Lang::cpp), CurriculumSchedule::standard(), f.settings());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(TrainExpert, RejectsEmptyCorpusAndStageMismatch) {
  Fixture f;
  std::vector<StageData> empty{{"snippet", {}}, {"program", {}}};
  EXPECT_THROW(train_expert(f.model, Lang::cpp, empty, CurriculumSchedule::standard(), f.settings()), DataError);
  EXPECT_THROW(train_expert(f.model, Lang::cpp, {f.stages(Lang::cpp)[0]}, CurriculumSchedule::standard(), f.settings()),
               ConfigError);
}

TEST(TrainGate, OnlyGateChanges) {
  Fixture f;
  for (Lang l : kSourceLangs) {
    CurriculumSchedule s = CurriculumSchedule::standard(1);
    s.stages[0].epochs = 1;
    s.stages[1].epochs = 0;
    TrainSettings t = f.settings();
    t.max_steps = 3;
    t.lr_scale = 100;
    train_expert(f.model, l, f.stages(l), s, t);
  }
  const auto before = group_hashes(f.model);
  GateSchedule g;
  g.epochs = 1;
  TrainSettings t = f.settings();
  t.lr_scale = 100;
  const TrainReport r = train_gate(f.model, gate_data(f.ws, f.config), g, t);
  EXPECT_EQ(r.hashes_before, before);
  EXPECT_EQ(r.audit().changed_groups(), std::vector<std::string>{"gate"});
  EXPECT_TRUE(r.audit().ok());
}

TEST(TrainGate, ZeroEpochsKeepsInit) {
  Fixture f;
  GateSchedule g;
  g.epochs = 0;
  const TrainReport r = train_gate(f.model, gate_data(f.ws, f.config), g, f.settings());
  EXPECT_TRUE(r.audit().changed_groups().empty());
}

TEST(TrainGate, MissingExpertIsNamed) {
  Fixture f;
  f.model.experts.erase(f.model.experts.begin() + 3);
  try {
    train_gate(f.model, gate_data(f.ws, f.config), GateSchedule{}, f.settings());
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("<java>"), std::string::npos);
  }
}

TEST(Pretrain, OnlyBackboneChanges) {
  Fixture f;
  TrainSettings t = f.settings();
  t.max_steps = 4;
  const TrainReport r = pretrain_backbone(f.model, pretraining_data(f.ws, f.config), 1, 1e-3, t);
  EXPECT_EQ(r.losses.size(), 4u);
  EXPECT_EQ(r.audit().changed_groups(), std::vector<std::string>{"backbone"});
}

TEST(GateData, GenericShareFollowsConfig) {
  Fixture f;
  f.config.gate_generic_fraction = 0.0;
  for (const auto& s : gate_data(f.ws, f.config).samples) EXPECT_EQ(s.tag, TagMode::language);
  f.config.gate_generic_fraction = 1.0;
  const StageData all = gate_data(f.ws, f.config);
  EXPECT_EQ(all.samples.size(), 5u * 12u);
  for (const auto& s : all.samples) {
    EXPECT_EQ(s.tag, TagMode::generic);
    EXPECT_TRUE(f.ws.tokenizer.is_special(s.ids[0], "<code>"));
  }
}

// ---- run configuration

TEST(RunConfig, JsonRoundTripAndHash) {
  RunConfig c = RunConfig::desk();
  c.seed = 99;
  c.lora.rank = 3;
  c.schedule.decay_within_stage = false;
  const RunConfig back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  c.gate.lr = 1e-4;
  EXPECT_NE(back.hash(), c.hash());
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(RunConfig::from_json({{"sed", 1}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"train", {{"batch", 3}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"precision", "half"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"model", {{"d_model", 30}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"schedule", {{"stages", {{{"name", "a"}, {"epochs", 1}, {"lr", 1e-3}}}}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"seed", "x"}}), ConfigError);
}

TEST(RunConfig, CheckpointCarriesHash) {
  Fixture f;
  std::filesystem::create_directories(f.config.output_dir);
  save_model(f.model, f.config);
  EXPECT_EQ(read_checkpoint_header(model_path(f.config)).at("meta").at("run_hash"), f.config.hash());
  EXPECT_NO_THROW(load_model<double>(f.config));
  RunConfig other = f.config;
  other.seed += 1;
  EXPECT_THROW(load_model<double>(other), ConfigError);
  EXPECT_NO_THROW(load_model<double>(other, true));
}
