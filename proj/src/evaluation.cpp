#include "xlate/evaluation.hpp"

#include <cstdio>
#include <sstream>

namespace xlate {

namespace {

std::vector<int> prompt_ids(const Tokenizer& tokenizer, Lang lang, const std::string& source, TagMode tag) {
  const std::string t = tag == TagMode::language ? lang_tag(lang) : "<code>";
  return tokenizer.encode(t + " " + source + " <py>");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(' ');
  return s.substr(b, e - b + 1);
}

}  // namespace

template <typename Scalar>
ConfusionMatrix evaluate_routing(const Model<Scalar>& model, const PerLanguage& pairs, const Tokenizer& tokenizer, TagMode tag) {
  if (!model.gate) throw ContractError("evaluate_routing: model has no gate");
  NoGradGuard no_grad;
  ConfusionMatrix m;
  for (Lang lang : kSourceLangs) {
    for (const auto& p : pairs[static_cast<std::size_t>(lang)]) {
      const TokenBatch batch = TokenBatch::single(prompt_ids(tokenizer, lang, p.src_code, tag));
      const Tensor<Scalar> probs = gate_probs(*model.gate, embed(model.backbone, batch, model.config().gate_uses_position));
      m.add(select_expert(std::span<const Scalar>(probs.data().data(), static_cast<std::size_t>(probs.size()))), expert_slot(lang));
    }
  }
  return m;
}

template <typename Scalar>
Translation translate(const Model<Scalar>& model, const Tokenizer& tokenizer, Lang lang, const std::string& source, TagMode tag,
                      std::optional<int> forced_expert) {
  const std::vector<int> prompt = prompt_ids(tokenizer, lang, source, tag);
  GenerateOptions options;
  options.end_token = tokenizer.eot_id();
  options.max_new_tokens = model.config().context_len - static_cast<int>(prompt.size());
  const Generation<Scalar> g = generate(model, prompt, options, forced_expert);
  Translation t;
  std::vector<int> produced(g.tokens.begin() + static_cast<std::ptrdiff_t>(prompt.size()), g.tokens.end());
  t.finished = !produced.empty() && produced.back() == tokenizer.eot_id();
  t.python = trim(tokenizer.decode(produced));
  t.expert = g.expert;
  t.expert_probability = static_cast<double>(g.expert_probability);
  for (Scalar p : g.gate_probs) t.gate_probs.push_back(static_cast<double>(p));
  return t;
}

template <typename Scalar>
TranslationEval evaluate_translation(const Model<Scalar>& model, const PerLanguage& pairs, const Tokenizer& tokenizer, TagMode tag,
                                     std::optional<int> forced_expert) {
  TranslationEval ev;
  std::vector<CodeBleuReport> all;
  std::size_t parsed = 0;
  for (Lang lang : kSourceLangs) {
    std::vector<CodeBleuReport> reports;
    for (const auto& p : pairs[static_cast<std::size_t>(lang)]) {
      const Translation t = translate(model, tokenizer, lang, p.src_code, tag, forced_expert);
      reports.push_back(codebleu(t.python, p.py_code));
      parsed += reports.back().candidate_parses ? 1 : 0;
    }
    if (!reports.empty()) ev.per_lang[static_cast<std::size_t>(lang)] = mean_report(reports);
    all.insert(all.end(), reports.begin(), reports.end());
  }
  if (all.empty()) throw DataError("evaluate_translation: no test pairs");
  ev.overall = mean_report(all);
  ev.count = all.size();
  ev.parse_rate = static_cast<double>(parsed) / static_cast<double>(all.size());
  return ev;
}

nlohmann::json TranslationEval::to_json() const {
  nlohmann::json langs = nlohmann::json::object();
  for (Lang l : kSourceLangs) langs[lang_name(l)] = xlate::to_json(per_lang[static_cast<std::size_t>(l)]);
  return {{"per_language", langs}, {"overall", xlate::to_json(overall)}, {"parse_rate", parse_rate}, {"count", count}};
}

std::string TranslationEval::table(const std::string& title) const {
  std::vector<ScoreRow> rows;
  for (Lang l : kSourceLangs) rows.push_back({std::string(lang_display(l)) + " -> Python", per_lang[static_cast<std::size_t>(l)]});
  rows.push_back({"mean", overall});
  std::ostringstream out;
  out << title << "\n" << codebleu_table(rows);
  char buf[64];
  std::snprintf(buf, sizeof buf, "parse rate %.1f%% of %zu\n", 100 * parse_rate, count);
  out << buf;
  return out.str();
}

#define XLATE_INSTANTIATE(S)                                                                                              \
  template ConfusionMatrix evaluate_routing(const Model<S>&, const PerLanguage&, const Tokenizer&, TagMode);            \
  template Translation translate(const Model<S>&, const Tokenizer&, Lang, const std::string&, TagMode, std::optional<int>); \
  template TranslationEval evaluate_translation(const Model<S>&, const PerLanguage&, const Tokenizer&, TagMode, std::optional<int>);

XLATE_INSTANTIATE(float)
XLATE_INSTANTIATE(double)

}  // namespace xlate
