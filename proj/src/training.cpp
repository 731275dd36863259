#include "xlate/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "xlate/io.hpp"

namespace xlate {

template <typename Scalar>
Optimizer<Scalar>::Optimizer(std::vector<Tensor<Scalar>> params, OptimizerSettings settings)
    : params_(std::move(params)), settings_(settings) {
  for (const auto& p : params_) {
    m_.push_back(Vec<Scalar>::Zero(p.size()));
    v_.push_back(Vec<Scalar>::Zero(p.size()));
  }
}

template <typename Scalar>
void Optimizer<Scalar>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename Scalar>
double Optimizer<Scalar>::step(double lr) {
  double sq = 0;
  for (const auto& p : params_) {
    if (p.has_grad()) sq += p.grad().template cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double clip = settings_.clip_norm > 0 && norm > settings_.clip_norm ? settings_.clip_norm / norm : 1.0;
  ++steps_;
  const double bc1 = 1 - std::pow(settings_.beta1, static_cast<double>(steps_));
  const double bc2 = 1 - std::pow(settings_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<Scalar>& p = params_[i];
    if (!p.has_grad()) continue;
    const Vec<Scalar> g = p.grad() * static_cast<Scalar>(clip);
    Vec<Scalar>& w = p.mutable_data();
    if (settings_.kind == OptimizerKind::sgd) {
      w -= static_cast<Scalar>(lr) * g;
    } else {
      const auto b1 = static_cast<Scalar>(settings_.beta1), b2 = static_cast<Scalar>(settings_.beta2);
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      const auto step = static_cast<Scalar>(lr / bc1);
      const auto denom = (v_[i].array() / static_cast<Scalar>(bc2)).sqrt() + static_cast<Scalar>(settings_.eps);
      w.array() -= step * m_[i].array() / denom;
    }
  }
  zero_grad();
  return norm;
}

CurriculumSchedule CurriculumSchedule::standard(std::uint64_t seed) {
  CurriculumSchedule s;
  s.stages = {{"snippet", 2, 1e-5}, {"program", 2, 1e-6}};
  s.seed = seed;
  return s;
}

void CurriculumSchedule::validate() const {
  if (stages.empty()) throw ConfigError("curriculum schedule has no stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (s.epochs < 0) throw ConfigError("stage " + s.name + ": epochs must be >= 0");
    if (!(s.lr >= 1e-6 - 1e-18 && s.lr <= 1e-5 + 1e-18)) {
      throw ConfigError("stage " + s.name + ": learning rate " + std::to_string(s.lr) + " outside [1e-6, 1e-5]");
    }
    if (i > 0 && !(s.lr < stages[i - 1].lr)) throw ConfigError("learning rates must strictly decrease across stages");
  }
}

double CurriculumSchedule::lr_at(std::size_t stage, double progress) const {
  const double start = stages.at(stage).lr;
  if (!decay_within_stage || stage + 1 >= stages.size()) return start;
  const double end = stages[stage + 1].lr;
  return start + (end - start) * std::clamp(progress, 0.0, 1.0);
}

std::uint64_t CurriculumSchedule::epoch_seed(std::size_t stage, int epoch) const {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(stage),
                    static_cast<std::uint32_t>(epoch)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

nlohmann::json to_json(const CurriculumSchedule& s) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : s.stages) stages.push_back({{"name", st.name}, {"epochs", st.epochs}, {"lr", st.lr}});
  return {{"stages", stages}, {"decay_within_stage", s.decay_within_stage}, {"seed", s.seed}};
}

nlohmann::json to_json(const TrainSettings& s) {
  return {{"batch_size", s.batch_size},
          {"lr_scale", s.lr_scale},
          {"optimizer", s.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"},
          {"clip_norm", s.optimizer.clip_norm},
          {"target_only", s.target_only},
          {"keep_fraction", s.keep_fraction},
          {"seed", s.seed},
          {"max_steps", s.max_steps}};
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : stages) {
    st.push_back({{"name", s.name}, {"dataset", s.dataset}, {"first_step", s.first_step}, {"steps", s.steps},
                  {"epoch_seeds", s.epoch_seeds}});
  }
  return {{"phase", phase},
          {"losses", losses},
          {"learning_rates", learning_rates},
          {"stages", st},
          {"wall_seconds", wall_seconds},
          {"hashes_before", hashes_before},
          {"hashes_after", hashes_after},
          {"expected_changed", expected_changed},
          {"audit", audit().to_json()},
          {"config", config}};
}

std::vector<StageData> curriculum_data(std::span<const TranslationPair> programs, const Tokenizer& tokenizer,
                                       const SampleOptions& options) {
  std::vector<std::size_t> counts;
  for (const auto& p : programs) counts.push_back(tokenizer.encode(p.src_code).size() + tokenizer.encode(p.py_code).size());
  const CurriculumSplit split = curriculum_split(programs, counts);
  StageData snippets{"snippet", {}}, full{"program", {}};
  for (const auto& s : split.snippets) snippets.samples.push_back(build_sample(s, tokenizer, options));
  for (const auto& p : split.programs) full.samples.push_back(build_sample(p, tokenizer, options));
  return {std::move(snippets), std::move(full)};
}

namespace {

using Clock = std::chrono::steady_clock;

template <typename Scalar>
struct Batch {
  TokenBatch tokens;
  std::vector<int> targets;
  std::vector<Scalar> mask;
  std::vector<int> prompt_lengths;
};

// Next-token targets: position t predicts ids[t + 1]; the last column has no target.
template <typename Scalar>
Batch<Scalar> make_batch(std::span<const TranslationSample> samples, int pad_id) {
  const PaddedBatch p = pad_all(samples, pad_id);
  Batch<Scalar> b;
  b.tokens = {static_cast<Index>(p.batch), static_cast<Index>(p.seq), p.ids};
  b.targets.assign(p.ids.size(), pad_id);
  b.mask.assign(p.ids.size(), Scalar(0));
  for (std::size_t r = 0; r < p.batch; ++r) {
    for (std::size_t t = 0; t + 1 < p.seq; ++t) {
      b.targets[r * p.seq + t] = p.ids[r * p.seq + t + 1];
      b.mask[r * p.seq + t] = static_cast<Scalar>(p.mask[r * p.seq + t + 1]);
    }
  }
  b.prompt_lengths = p.prompt_lengths;
  return b;
}

template <typename Scalar>
Tensor<Scalar> batch_loss(const Model<Scalar>& model, const Batch<Scalar>& b, RouteMode mode, int expert, bool training,
                          std::uint64_t dropout_seed) {
  RoutingContext<Scalar> routing;
  if (mode == RouteMode::none) {
    routing = RoutingContext<Scalar>::backbone_only();
  } else if (expert >= 0) {
    routing = RoutingContext<Scalar>::fixed(expert, b.tokens.batch);
  } else {
    routing = route(model, b.tokens, mode, std::span<const int>(b.prompt_lengths));
  }
  const Tensor<Scalar> logits = forward_logits(model, b.tokens, routing, ForwardOptions{training, dropout_seed});
  return cross_entropy_masked(logits, std::span<const int>(b.targets), std::span<const Scalar>(b.mask));
}

std::string dataset_identity(const StageData& data, std::span<const std::size_t> kept) {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (std::size_t i : kept) {
    const auto& ids = data.samples[i].ids;
    h = fnv1a(ids.data(), ids.size() * sizeof(int), h);
  }
  return data.name + " n=" + std::to_string(kept.size()) + " ids=" + hex64(h);
}

// Shared epoch loop. `lr_for(stage, progress)` gives the rate before scaling.
template <typename Scalar>
void run_stages(Model<Scalar>& model, const std::vector<StageData>& stages, const std::vector<int>& epochs,
                const std::function<double(std::size_t, double)>& lr_for,
                const std::function<std::uint64_t(std::size_t, int)>& seed_for, RouteMode mode, int expert,
                std::vector<Tensor<Scalar>> params, const TrainSettings& settings, int pad_id, TrainReport& report) {
  if (settings.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  Optimizer<Scalar> opt(std::move(params), settings.optimizer);
  std::size_t step = 0;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageData& data = stages[s];
    std::vector<std::size_t> lengths;
    for (const auto& x : data.samples) lengths.push_back(x.ids.size());
    const std::vector<std::size_t> kept =
        data.samples.empty() ? std::vector<std::size_t>{} : select_shortest(lengths, settings.keep_fraction).kept;
    StageRecord rec{data.name, dataset_identity(data, kept), step, 0, {}};

    const std::size_t per_epoch = (kept.size() + static_cast<std::size_t>(settings.batch_size) - 1) / settings.batch_size;
    const std::size_t total = per_epoch * static_cast<std::size_t>(std::max(epochs[s], 0));
    std::size_t done = 0;
    for (int epoch = 0; epoch < epochs[s]; ++epoch) {
      const std::uint64_t eseed = seed_for(s, epoch);
      rec.epoch_seeds.push_back(eseed);
      std::vector<std::size_t> order = kept;
      std::mt19937_64 rng(eseed);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(settings.batch_size)) {
        if (settings.max_steps >= 0 && step >= static_cast<std::size_t>(settings.max_steps)) break;
        std::vector<TranslationSample> chunk;
        for (std::size_t k = first; k < std::min(order.size(), first + settings.batch_size); ++k) chunk.push_back(data.samples[order[k]]);
        const Batch<Scalar> b = make_batch<Scalar>(chunk, pad_id);
        const double lr = settings.lr_scale * lr_for(s, total ? static_cast<double>(done) / static_cast<double>(total) : 0.0);
        const Tensor<Scalar> loss = batch_loss(model, b, mode, expert, true, settings.seed ^ (0x5851F42D4C957F2Dull * (step + 1)));
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value)) {
          std::ostringstream msg;
          msg << report.phase << ": non-finite loss at step " << step << " (stage " << data.name << ", epoch " << epoch
              << ", lr " << lr << ", batch " << b.tokens.batch << "x" << b.tokens.seq << ")";
          throw NumericError(msg.str());
        }
        backward(loss);
        const double gnorm = opt.step(lr);
        if (!std::isfinite(gnorm)) {
          throw NumericError(report.phase + ": non-finite gradient norm at step " + std::to_string(step));
        }
        report.losses.push_back(value);
        report.learning_rates.push_back(lr);
        ++step;
        ++done;
        ++rec.steps;
        if (settings.log && step % 25 == 0) {
          std::ostringstream msg;
          msg << report.phase << " step " << step << " " << data.name << " epoch " << epoch << " loss " << value << " lr " << lr;
          settings.log(msg.str());
        }
      }
    }
    report.stages.push_back(std::move(rec));
  }
}

template <typename Scalar>
void begin(TrainReport& report, const Model<Scalar>& model, std::string phase, std::set<std::string> expected) {
  report.phase = std::move(phase);
  report.hashes_before = group_hashes(model);
  report.expected_changed = std::move(expected);
}

template <typename Scalar>
void finish(TrainReport& report, Model<Scalar>& model, Clock::time_point start) {
  model.freeze_all();
  report.hashes_after = group_hashes(model);
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

template <typename Scalar>
TrainReport pretrain_backbone(Model<Scalar>& model, const std::vector<StageData>& stages, int epochs, double lr,
                              const TrainSettings& settings) {
  const auto start = Clock::now();
  TrainReport report;
  begin(report, model, "pretrain", {"backbone"});
  report.config = {{"settings", to_json(settings)}, {"epochs", epochs}, {"lr", lr}, {"model", model.config()}};
  model.freeze_all();
  model.backbone.set_trainable(true);
  std::vector<Tensor<Scalar>> params;
  for (auto& [name, t] : model.backbone.named_parameters()) params.push_back(t);
  const std::vector<int> ep(stages.size(), epochs);
  run_stages<Scalar>(
      model, stages, ep, [lr](std::size_t, double) { return lr; },
      [&](std::size_t s, int e) {
        std::seed_seq seq{static_cast<std::uint32_t>(settings.seed), 0x70u, static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(e)};
        std::uint32_t out[2];
        seq.generate(out, out + 2);
        return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
      },
      RouteMode::none, -1, std::move(params), settings, Tokenizer::kPad, report);
  finish(report, model, start);
  return report;
}

template <typename Scalar>
TrainReport train_expert(Model<Scalar>& model, Lang lang, const std::vector<StageData>& stage_samples,
                         const CurriculumSchedule& schedule, const TrainSettings& settings) {
  schedule.validate();
  const std::string tag = lang_tag(lang);
  const int expert = model.expert_index(tag);
  if (expert < 0) throw ContractError("train_expert: model has no expert " + tag);
  if (stage_samples.size() != schedule.stages.size()) {
    throw ConfigError("train_expert: " + std::to_string(stage_samples.size()) + " data sets for " +
                      std::to_string(schedule.stages.size()) + " schedule stages");
  }
  std::size_t n = 0;
  for (const auto& s : stage_samples) n += s.samples.size();
  if (n == 0) throw DataError("train_expert: empty corpus for " + tag);

  const auto start = Clock::now();
  TrainReport report;
  begin(report, model, "train-expert " + std::string(lang_name(lang)), {"expert:" + tag});
  report.config = {{"settings", to_json(settings)}, {"schedule", to_json(schedule)}, {"model", model.config()}, {"expert", tag}};
  model.freeze_all();
  auto& e = model.experts[static_cast<std::size_t>(expert)];
  e.set_trainable(true);
  std::vector<Tensor<Scalar>> params;
  for (auto& [name, t] : e.named_parameters()) params.push_back(t);
  std::vector<int> epochs;
  for (const auto& st : schedule.stages) epochs.push_back(st.epochs);
  run_stages<Scalar>(
      model, stage_samples, epochs, [&](std::size_t s, double p) { return schedule.lr_at(s, p); },
      [&](std::size_t s, int ep) { return schedule.epoch_seed(s, ep); }, RouteMode::infer, expert, std::move(params), settings,
      Tokenizer::kPad, report);
  finish(report, model, start);
  return report;
}

template <typename Scalar>
TrainReport train_gate(Model<Scalar>& model, const StageData& data, const GateSchedule& schedule, const TrainSettings& settings) {
  if (!model.gate) throw ContractError("train_gate: model has no gate");
  std::vector<std::string> missing;
  for (Lang l : kSourceLangs) {
    if (model.expert_index(lang_tag(l)) < 0) missing.push_back(lang_tag(l));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ContractError("train_gate: missing experts " + list);
  }
  if (data.samples.empty()) throw DataError("train_gate: empty data set");
  if (schedule.epochs < 0) throw ConfigError("gate epochs must be >= 0");

  const auto start = Clock::now();
  TrainReport report;
  begin(report, model, "train-gate", {"gate"});
  report.config = {{"settings", to_json(settings)},
                   {"schedule", {{"epochs", schedule.epochs}, {"lr", schedule.lr}, {"seed", schedule.seed}}},
                   {"model", model.config()}};
  model.freeze_all();
  model.gate->set_trainable(true);
  std::vector<Tensor<Scalar>> params{model.gate->weight, model.gate->bias};
  run_stages<Scalar>(
      model, {data}, {schedule.epochs}, [&](std::size_t, double) { return schedule.lr; },
      [&](std::size_t, int ep) {
        std::seed_seq seq{static_cast<std::uint32_t>(schedule.seed), 0x9au, static_cast<std::uint32_t>(ep)};
        std::uint32_t out[2];
        seq.generate(out, out + 2);
        return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
      },
      RouteMode::train, -1, std::move(params), settings, Tokenizer::kPad, report);
  finish(report, model, start);
  return report;
}

template <typename Scalar>
double evaluate_loss(const Model<Scalar>& model, std::span<const TranslationSample> samples, RouteMode mode, int expert,
                     int batch_size) {
  if (samples.empty()) throw DataError("evaluate_loss: no samples");
  NoGradGuard no_grad;
  double total = 0, weight = 0;
  for (std::size_t first = 0; first < samples.size(); first += static_cast<std::size_t>(batch_size)) {
    const auto chunk = samples.subspan(first, std::min(samples.size() - first, static_cast<std::size_t>(batch_size)));
    const Batch<Scalar> b = make_batch<Scalar>(chunk, Tokenizer::kPad);
    double w = 0;
    for (Scalar m : b.mask) w += static_cast<double>(m);
    total += static_cast<double>(batch_loss(model, b, mode, expert, false, 0).item()) * w;
    weight += w;
  }
  return total / weight;
}

#define XLATE_INSTANTIATE(S)                                                                                                  \
  template class Optimizer<S>;                                                                                               \
  template TrainReport pretrain_backbone(Model<S>&, const std::vector<StageData>&, int, double, const TrainSettings&);       \
  template TrainReport train_expert(Model<S>&, Lang, const std::vector<StageData>&, const CurriculumSchedule&,               \
                                    const TrainSettings&);                                                                   \
  template TrainReport train_gate(Model<S>&, const StageData&, const GateSchedule&, const TrainSettings&);                   \
  template double evaluate_loss(const Model<S>&, std::span<const TranslationSample>, RouteMode, int, int);

XLATE_INSTANTIATE(float)
XLATE_INSTANTIATE(double)

}  // namespace xlate
