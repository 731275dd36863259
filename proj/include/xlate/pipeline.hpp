#pragma once

// Run configuration and the end-to-end phases shared by the CLI and the
// acceptance harness. A run directory holds:
//   corpus/           generated pairs and manifest
//   tokenizer.json
//   model.ckpt        updated in place by every training phase
//   reports/*.json    one TrainReport per phase, evaluation results

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "json.hpp"
#include "xlate/data.hpp"
#include "xlate/evaluation.hpp"
#include "xlate/model.hpp"
#include "xlate/tokenizer.hpp"
#include "xlate/training.hpp"

namespace xlate {

enum class Precision { float32, float64 };

struct RunConfig {
  std::uint64_t seed = 7;
  CorpusOptions corpus;
  int bpe_merges = 512;
  ModelConfig model;  // vocab_size is taken from the tokenizer
  LoraSettings lora;
  Precision precision = Precision::float32;

  int pretrain_epochs = 6;
  double pretrain_lr = 2e-3;

  CurriculumSchedule schedule = CurriculumSchedule::standard();
  TrainSettings train;
  GateSchedule gate;
  double gate_generic_fraction = 0.5;  // share of gate samples tagged <code>

  std::filesystem::path output_dir = "run";

  static RunConfig desk();
  void validate() const;
  /// Every field except output_dir.
  nlohmann::json to_json() const;
  /// Missing keys keep desk() defaults; unknown keys are a ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  std::string hash() const;
};

using Logger = std::function<void(const std::string&)>;

struct Workspace {
  ToyCorpus corpus;
  Tokenizer tokenizer;
};

/// Generates the corpus, trains the tokenizer and writes both.
Workspace prepare_workspace(const RunConfig& config, const Logger& log = {});
Workspace load_workspace(const RunConfig& config);

/// Backbone-pretraining samples: toy-Python LM, Python copy pairs and
/// monolingual source programs.
std::vector<StageData> pretraining_data(const Workspace& ws, const RunConfig& config);
/// Balanced gate set; a seeded `gate_generic_fraction` of samples use <code>.
StageData gate_data(const Workspace& ws, const RunConfig& config);

/// Fresh model: backbone, five fresh experts, untrained gate.
template <typename Scalar>
Model<Scalar> init_model(const RunConfig& config, int vocab_size);

template <typename Scalar>
TrainReport run_pretrain(Model<Scalar>& model, const Workspace& ws, const RunConfig& config, const Logger& log = {});
template <typename Scalar>
TrainReport run_train_expert(Model<Scalar>& model, Lang lang, const Workspace& ws, const RunConfig& config,
                             const Logger& log = {});
template <typename Scalar>
TrainReport run_train_gate(Model<Scalar>& model, const Workspace& ws, const RunConfig& config, const Logger& log = {});

std::filesystem::path model_path(const RunConfig& config);
std::filesystem::path report_path(const RunConfig& config, const std::string& name);

/// Saves with the run-config hash in the checkpoint metadata.
template <typename Scalar>
void save_model(const Model<Scalar>& model, const RunConfig& config);
/// Refuses a checkpoint written under a different config unless `force`.
template <typename Scalar>
Model<Scalar> load_model(const RunConfig& config, bool force = false);

void write_report(const RunConfig& config, const std::string& name, const nlohmann::json& report);

struct PhaseReport {
  std::string name;
  TrainReport report;
};

template <typename Scalar>
struct PipelineRun {
  Workspace workspace;
  Model<Scalar> model;
  std::vector<PhaseReport> phases;  // pretrain, five experts, gate
};

/// Corpus, pretraining, every expert, then the gate. The checkpoint and the
/// phase reports are written after each phase.
template <typename Scalar>
PipelineRun<Scalar> run_pipeline(const RunConfig& config, const Logger& log = {});

struct EvaluationSummary {
  ConfusionMatrix routing;
  ConfusionMatrix routing_generic;
  TranslationEval routed;
  TranslationEval baseline;                // every expert replaced by a fresh one
  std::vector<TranslationEval> per_expert;  // slot order, gate bypassed
  nlohmann::json to_json() const;
};

template <typename Scalar>
EvaluationSummary evaluate_all(const Model<Scalar>& model, const Workspace& ws, const RunConfig& config);

}  // namespace xlate
