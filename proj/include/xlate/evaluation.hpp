#pragma once

// Held-out evaluation: gate routing confusion and translation quality.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xlate/codebleu.hpp"
#include "xlate/data.hpp"
#include "xlate/model.hpp"
#include "xlate/tokenizer.hpp"

namespace xlate {

/// Routes every pair's prompt (tag, source, <py>) and tallies predicted
/// expert slot against the true language.
template <typename Scalar>
ConfusionMatrix evaluate_routing(const Model<Scalar>& model, const PerLanguage& pairs, const Tokenizer& tokenizer, TagMode tag);

struct Translation {
  std::string python;  // marker form, trimmed
  int expert = -1;
  double expert_probability = 0;
  std::vector<double> gate_probs;
  bool finished = false;  // stopped at <end-of-text>
};

/// Greedy translation of one source program. `forced_expert` unset: the gate
/// decides (backbone only when the model has no gate); -1: backbone only.
template <typename Scalar>
Translation translate(const Model<Scalar>& model, const Tokenizer& tokenizer, Lang lang, const std::string& source, TagMode tag,
                      std::optional<int> forced_expert = std::nullopt);

struct TranslationEval {
  std::array<CodeBleuReport, kNumSourceLangs> per_lang{};
  CodeBleuReport overall;
  double parse_rate = 0;
  std::size_t count = 0;

  nlohmann::json to_json() const;
  std::string table(const std::string& title) const;
};

template <typename Scalar>
TranslationEval evaluate_translation(const Model<Scalar>& model, const PerLanguage& pairs, const Tokenizer& tokenizer, TagMode tag,
                                     std::optional<int> forced_expert = std::nullopt);

}  // namespace xlate
