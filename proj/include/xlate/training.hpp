#pragma once

// Optimisers, the curriculum schedule and the three training phases:
// backbone pretraining, per-language expert fine-tuning and gate training.

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "xlate/checkpoint.hpp"
#include "xlate/data.hpp"
#include "xlate/model.hpp"
#include "xlate/tokenizer.hpp"

namespace xlate {

enum class OptimizerKind { sgd, adam };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double clip_norm = 1.0;  // global L2 norm; <= 0 disables clipping
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Updates a fixed parameter list from accumulated gradients.
template <typename Scalar>
class Optimizer {
 public:
  Optimizer(std::vector<Tensor<Scalar>> params, OptimizerSettings settings);

  /// Clips, applies one update with learning rate `lr`, clears gradients and
  /// returns the pre-clip gradient norm.
  double step(double lr);
  void zero_grad();
  std::size_t step_count() const { return steps_; }

 private:
  std::vector<Tensor<Scalar>> params_;
  OptimizerSettings settings_;
  std::vector<Vec<Scalar>> m_, v_;
  std::size_t steps_ = 0;
};

struct CurriculumStage {
  std::string name;  // "snippet" or "program"
  int epochs = 2;
  double lr = 1e-5;
};

struct CurriculumSchedule {
  std::vector<CurriculumStage> stages;
  bool decay_within_stage = true;  // linear from this stage's lr to the next one's
  std::uint64_t seed = 0;

  /// snippet (2 epochs, 1e-5) then program (2 epochs, 1e-6).
  static CurriculumSchedule standard(std::uint64_t seed = 0);

  /// Rates must lie in [1e-6, 1e-5] and strictly decrease; epochs >= 0.
  void validate() const;
  /// Rate for `stage` at fractional progress in [0, 1] through that stage.
  double lr_at(std::size_t stage, double progress) const;
  /// Shuffle seed; distinct for every (stage, epoch).
  std::uint64_t epoch_seed(std::size_t stage, int epoch) const;
};

struct TrainSettings {
  int batch_size = 8;
  double lr_scale = 1.0;  // multiplies every scheduled rate
  OptimizerSettings optimizer;
  bool target_only = false;
  double keep_fraction = 0.95;
  std::uint64_t seed = 0;
  int max_steps = -1;  // < 0: no limit
  std::function<void(const std::string&)> log;
};

struct StageRecord {
  std::string name;
  std::string dataset;  // "<name> n=<count> ids=<hash>"
  std::size_t first_step = 0;
  std::size_t steps = 0;
  std::vector<std::uint64_t> epoch_seeds;
};

struct TrainReport {
  std::string phase;
  std::vector<double> losses;
  std::vector<double> learning_rates;
  std::vector<StageRecord> stages;
  double wall_seconds = 0;
  std::map<std::string, std::string> hashes_before;
  std::map<std::string, std::string> hashes_after;
  std::set<std::string> expected_changed;
  nlohmann::json config;

  AuditReport audit() const { return audit_frozen(hashes_before, hashes_after, expected_changed); }
  nlohmann::json to_json() const;
};

/// One labelled data set fed to a training stage.
struct StageData {
  std::string name;
  std::vector<TranslationSample> samples;
};

/// Backbone language modelling over arbitrary samples (every backbone weight
/// trains, experts and gate stay frozen).
template <typename Scalar>
TrainReport pretrain_backbone(Model<Scalar>& model, const std::vector<StageData>& stages, int epochs, double lr,
                              const TrainSettings& settings);

/// Fine-tunes the expert tagged `lang_tag(lang)`. `stage_samples` holds one
/// data set per schedule stage.
template <typename Scalar>
TrainReport train_expert(Model<Scalar>& model, Lang lang, const std::vector<StageData>& stage_samples,
                         const CurriculumSchedule& schedule, const TrainSettings& settings);

struct GateSchedule {
  int epochs = 2;
  double lr = 5e-5;
  std::uint64_t seed = 0;
};

/// Trains only the gate with weighted expert mixing.
template <typename Scalar>
TrainReport train_gate(Model<Scalar>& model, const StageData& data, const GateSchedule& schedule, const TrainSettings& settings);

/// Samples for the two curriculum stages of one language: snippets of the
/// first-half programs, then the second-half programs.
std::vector<StageData> curriculum_data(std::span<const TranslationPair> programs, const Tokenizer& tokenizer,
                                       const SampleOptions& options);

/// Mean masked next-token loss of `samples` under the given routing.
template <typename Scalar>
double evaluate_loss(const Model<Scalar>& model, std::span<const TranslationSample> samples, RouteMode mode, int expert,
                     int batch_size = 8);

nlohmann::json to_json(const CurriculumSchedule& s);
nlohmann::json to_json(const TrainSettings& s);

}  // namespace xlate
