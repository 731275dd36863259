#include "xlate/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "xlate/errors.hpp"
#include "xlate/io.hpp"
#include "xlate/toy/render.hpp"

namespace xlate {

void validate(const TranslationPair& pair) {
  if (pair.src_lang == Lang::py) throw DataError("source language must be one of cpp, csharp, js, java, php");
  if (pair.src_code.empty()) throw DataError("empty " + std::string(lang_name(pair.src_lang)) + " code");
  if (pair.py_code.empty()) throw DataError("empty py code");
  for (const auto& s : pair.snippets) validate(s);
}

nlohmann::json to_json(const TranslationPair& pair) {
  nlohmann::json j{{std::string(lang_name(pair.src_lang)), pair.src_code}, {"py", pair.py_code}};
  if (!pair.snippets.empty()) {
    nlohmann::json snippets = nlohmann::json::array();
    for (const auto& s : pair.snippets) snippets.push_back(to_json(s));
    j["snippets"] = std::move(snippets);
  }
  return j;
}

TranslationPair pair_from_json(const nlohmann::json& record, Lang lang) {
  const std::string key(lang_name(lang));
  if (!record.is_object() || !record.contains(key) || !record.contains("py")) {
    throw DataError("record lacks \"" + key + "\" or \"py\": " + record.dump().substr(0, 120));
  }
  TranslationPair p;
  p.src_lang = lang;
  p.src_code = record.at(key).get<std::string>();
  p.py_code = record.at("py").get<std::string>();
  if (record.contains("snippets")) {
    for (const auto& s : record.at("snippets")) {
      TranslationPair sp = pair_from_json(s, lang);
      sp.granularity = Granularity::snippet;
      p.snippets.push_back(std::move(sp));
    }
  }
  validate(p);
  return p;
}

namespace {

TranslationPair make_pair(const toy::Program& program, Lang lang) {
  TranslationPair p;
  p.src_lang = lang;
  p.src_code = toy::render(program, lang);
  p.py_code = toy::render(program, Lang::py);
  for (std::size_t i = 0; i < program.body.size(); ++i) {
    p.snippets.push_back({lang, toy::render_statement(program, i, lang), toy::render_statement(program, i, Lang::py),
                          Granularity::snippet, {}});
  }
  return p;
}

}  // namespace

ToyCorpus generate_toy_corpus(std::uint64_t seed, const CorpusOptions& options) {
  if (options.programs_per_language < 1) throw ConfigError("programs_per_language must be >= 1");
  ToyCorpus corpus;
  for (Lang lang : kSourceLangs) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(expert_slot(lang)) + 1};
    std::mt19937_64 rng(seq);
    auto& train = corpus.train[static_cast<std::size_t>(expert_slot(lang))];
    auto& test = corpus.test[static_cast<std::size_t>(expert_slot(lang))];
    std::set<std::string> seen;
    for (int i = 0; i < options.programs_per_language; ++i) {
      train.push_back(make_pair(toy::generate_program(rng, options.generator), lang));
      seen.insert(train.back().py_code);
    }
    int attempts = 0;
    while (static_cast<int>(test.size()) < options.test_per_language) {
      if (++attempts > 100 * (options.test_per_language + 1)) throw DataError("could not draw enough unseen test programs");
      TranslationPair p = make_pair(toy::generate_program(rng, options.generator), lang);
      if (seen.insert(p.py_code).second) test.push_back(std::move(p));
    }
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0u};
  std::mt19937_64 rng(seq);
  for (int i = 0; i < options.python_programs; ++i) {
    corpus.python.push_back(toy::render(toy::generate_program(rng, options.generator), Lang::py));
  }
  return corpus;
}

std::vector<nlohmann::json> ingest_xlcost(const std::filesystem::path& src_file, const std::filesystem::path& py_file, Lang lang) {
  if (lang == Lang::py) throw DataError("ingest: source language must not be py");
  auto lines = [](const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      out.push_back(line);
    }
    while (!out.empty() && out.back().empty()) out.pop_back();
    return out;
  };
  const auto src = lines(src_file);
  const auto py = lines(py_file);
  if (src.size() != py.size()) {
    throw DataError("ingest: " + src_file.string() + " has " + std::to_string(src.size()) + " samples but " +
                    py_file.string() + " has " + std::to_string(py.size()));
  }
  std::vector<nlohmann::json> out;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].empty() || py[i].empty()) throw DataError("ingest: empty sample on line " + std::to_string(i + 1));
    out.push_back({{std::string(lang_name(lang)), src[i]}, {"py", py[i]}});
  }
  return out;
}

std::string sample_text(const std::string& tag, const std::string& src, const std::string& py) {
  return tag + " " + src + " <py> " + py;
}

namespace {

TranslationSample finish_sample(std::vector<int> ids, const Tokenizer& tok, int context_len, bool target_only,
                                int py_occurrence, std::string_view separator = "<py>") {
  ids.push_back(tok.eot_id());
  if (static_cast<int>(ids.size()) > context_len) {
    throw ContextError("sample of " + std::to_string(ids.size()) + " tokens exceeds context length " + std::to_string(context_len));
  }
  TranslationSample s;
  int seen = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (tok.is_special(ids[i], separator) && ++seen == py_occurrence) s.prompt_length = static_cast<int>(i) + 1;
  }
  if (s.prompt_length == 0) throw DataError("sample has no <py> separator");
  s.mask.assign(ids.size(), 1.0f);
  s.mask[0] = 0.0f;
  if (target_only) std::fill(s.mask.begin(), s.mask.begin() + s.prompt_length, 0.0f);
  s.ids = std::move(ids);
  return s;
}

}  // namespace

TranslationSample build_sample(const TranslationPair& pair, const Tokenizer& tokenizer, const SampleOptions& options) {
  validate(pair);
  const std::string tag = options.tag == TagMode::language ? lang_tag(pair.src_lang) : "<code>";
  std::vector<int> ids = tokenizer.encode(sample_text(tag, pair.src_code, pair.py_code));
  const auto py_count = std::count_if(ids.begin(), ids.end(), [&](int id) { return tokenizer.is_special(id, "<py>"); });
  if (py_count != 1) throw DataError("sample must contain exactly one <py> token, found " + std::to_string(py_count));
  TranslationSample s = finish_sample(std::move(ids), tokenizer, options.context_len, options.target_only, 1);
  s.lang = pair.src_lang;
  s.tag = options.tag;
  return s;
}

TranslationSample build_copy_sample(const std::string& code, const Tokenizer& tokenizer, int context_len, Lang lang) {
  if (code.empty()) throw DataError("empty code");
  const std::string tag = lang_tag(lang);
  TranslationSample s =
      finish_sample(tokenizer.encode(tag + " " + code + " " + tag + " " + code), tokenizer, context_len, false, 2, tag);
  s.lang = lang;
  return s;
}

TranslationSample build_text_sample(Lang lang, const std::string& code, const Tokenizer& tokenizer, int context_len) {
  if (code.empty()) throw DataError("empty code");
  std::vector<int> ids = tokenizer.encode(lang_tag(lang) + " " + code);
  ids.push_back(tokenizer.eot_id());
  if (static_cast<int>(ids.size()) > context_len) {
    throw ContextError("sample of " + std::to_string(ids.size()) + " tokens exceeds context length " + std::to_string(context_len));
  }
  TranslationSample s;
  s.mask.assign(ids.size(), 1.0f);
  s.mask[0] = 0.0f;
  s.ids = std::move(ids);
  s.prompt_length = 1;
  s.lang = lang;
  return s;
}

Selection select_shortest(std::span<const std::size_t> lengths, double keep_fraction) {
  if (keep_fraction <= 0.0 || keep_fraction > 1.0) throw ConfigError("keep fraction must be in (0, 1]");
  Selection sel;
  const std::size_t n = lengths.size();
  if (n == 0) return sel;
  auto drop = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * (1.0 - keep_fraction) - 1e-9));
  drop = std::min(drop, n - 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  sel.dropped.assign(order.end() - static_cast<std::ptrdiff_t>(drop), order.end());
  sel.kept.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(drop));
  std::sort(sel.kept.begin(), sel.kept.end());
  std::sort(sel.dropped.begin(), sel.dropped.end());
  for (std::size_t i : sel.kept) sel.padded_length = std::max(sel.padded_length, lengths[i]);
  return sel;
}

namespace {

PaddedBatch assemble(std::span<const TranslationSample> samples, Selection sel, int pad_id) {
  PaddedBatch b;
  b.batch = sel.kept.size();
  b.seq = sel.padded_length;
  b.ids.assign(b.batch * b.seq, pad_id);
  b.mask.assign(b.batch * b.seq, 0.0f);
  for (std::size_t r = 0; r < sel.kept.size(); ++r) {
    const TranslationSample& s = samples[sel.kept[r]];
    std::copy(s.ids.begin(), s.ids.end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.seq));
    std::copy(s.mask.begin(), s.mask.end(), b.mask.begin() + static_cast<std::ptrdiff_t>(r * b.seq));
    b.prompt_lengths.push_back(s.prompt_length);
    b.langs.push_back(s.lang);
  }
  b.selection = std::move(sel);
  return b;
}

std::vector<std::size_t> lengths_of(std::span<const TranslationSample> samples) {
  std::vector<std::size_t> out;
  for (const auto& s : samples) out.push_back(s.ids.size());
  return out;
}

}  // namespace

PaddedBatch pad_batch(std::span<const TranslationSample> samples, int pad_id, double keep_fraction) {
  if (samples.empty()) throw DataError("pad_batch: no samples");
  const auto lengths = lengths_of(samples);
  return assemble(samples, select_shortest(lengths, keep_fraction), pad_id);
}

PaddedBatch pad_all(std::span<const TranslationSample> samples, int pad_id) {
  if (samples.empty()) throw DataError("pad_all: no samples");
  return assemble(samples, select_shortest(lengths_of(samples), 1.0), pad_id);
}

CurriculumSplit curriculum_split(std::span<const TranslationPair> programs, std::span<const std::size_t> token_counts) {
  if (programs.size() != token_counts.size()) throw ContractError("curriculum_split: one token count per program required");
  if (programs.size() < 2) throw DataError("curriculum_split: need at least two programs, got " + std::to_string(programs.size()));
  const std::size_t total = std::accumulate(token_counts.begin(), token_counts.end(), std::size_t{0});
  std::size_t cum = 0, k = 0;
  while (k < programs.size()) {
    cum += token_counts[k++];
    if (2 * cum >= total) break;
  }
  CurriculumSplit split;
  split.boundary = std::min(k, programs.size() - 1);
  for (std::size_t i = 0; i < split.boundary; ++i) {
    if (programs[i].snippets.empty()) throw DataError("curriculum_split: program " + std::to_string(i) + " has no snippets");
    split.snippets.insert(split.snippets.end(), programs[i].snippets.begin(), programs[i].snippets.end());
  }
  split.programs.assign(programs.begin() + static_cast<std::ptrdiff_t>(split.boundary), programs.end());
  return split;
}

std::size_t balanced_take(std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw DataError("build_moe_dataset: no corpora");
  const std::size_t n = *std::min_element(sizes.begin(), sizes.end());
  if (n == 0) throw DataError("build_moe_dataset: a corpus is empty");
  return n;
}

std::vector<TranslationPair> build_moe_dataset(const PerLanguage& corpora) {
  std::vector<std::size_t> sizes;
  for (const auto& c : corpora) sizes.push_back(c.size());
  const std::size_t n = balanced_take(sizes);
  std::vector<TranslationPair> out;
  for (const auto& c : corpora) out.insert(out.end(), c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

std::string detokenize_python(const std::string& markers) {
  std::string out, line;
  int depth = 0;
  auto flush = [&] {
    out += std::string(static_cast<std::size_t>(4 * depth), ' ') + line + "\n";
    line.clear();
  };
  for (const auto& tok : toy::split_tokens(markers)) {
    if (tok == toy::kNewline) {
      flush();
    } else if (tok == toy::kIndent) {
      if (!line.empty()) throw DataError("INDENT in the middle of a line");
      ++depth;
    } else if (tok == toy::kDedent) {
      if (!line.empty()) throw DataError("DEDENT in the middle of a line");
      if (depth == 0) throw DataError("unbalanced DEDENT");
      --depth;
    } else {
      if (!line.empty()) line.push_back(' ');
      line += tok;
    }
  }
  if (!line.empty()) {
    flush();
    out.pop_back();
  }
  return out;
}

std::string serialize_python(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  int depth = 0;
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    if (first % 4 != 0) throw DataError("indentation of " + std::to_string(first) + " spaces is not a multiple of 4");
    const int level = static_cast<int>(first / 4);
    if (level > depth + 1) throw DataError("indentation jumps more than one level");
    if (level == depth + 1) tokens.emplace_back(toy::kIndent);
    for (; depth > level; --depth) tokens.emplace_back(toy::kDedent);
    depth = level;
    for (auto& t : toy::split_tokens(line)) tokens.push_back(std::move(t));
    tokens.emplace_back(toy::kNewline);
  }
  return toy::join_tokens(tokens);
}

Manifest make_manifest(const ToyCorpus& corpus, std::uint64_t seed) {
  Manifest m;
  m.seed = seed;
  auto count = [](const std::vector<TranslationPair>& v) {
    std::size_t snippets = 0;
    for (const auto& p : v) snippets += p.snippets.size();
    return std::array<std::size_t, 2>{snippets, v.size()};
  };
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    m.train[i] = count(corpus.train[i]);
    m.test[i] = count(corpus.test[i]);
  }
  m.python = corpus.python.size();
  return m;
}

nlohmann::json to_json(const Manifest& m) {
  nlohmann::json langs = nlohmann::json::object();
  for (Lang l : kSourceLangs) {
    const auto i = static_cast<std::size_t>(expert_slot(l));
    langs[std::string(lang_name(l))] = {{"train", {{"snippet", m.train[i][0]}, {"program", m.train[i][1]}}},
                                        {"test", {{"snippet", m.test[i][0]}, {"program", m.test[i][1]}}}};
  }
  return {{"seed", m.seed}, {"languages", langs}, {"python_programs", m.python}};
}

std::string manifest_table(const Manifest& m) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %10s %10s %10s %10s\n", "language", "snip/train", "prog/train", "snip/test", "prog/test");
  out << buf;
  for (Lang l : kSourceLangs) {
    const auto i = static_cast<std::size_t>(expert_slot(l));
    std::snprintf(buf, sizeof buf, "%-12s %10zu %10zu %10zu %10zu\n", std::string(lang_display(l)).c_str(), m.train[i][0],
                  m.train[i][1], m.test[i][0], m.test[i][1]);
    out << buf;
  }
  return out.str();
}

void write_corpus(const ToyCorpus& corpus, std::uint64_t seed, const std::filesystem::path& dir) {
  for (Lang l : kSourceLangs) {
    const auto i = static_cast<std::size_t>(expert_slot(l));
    for (auto [split, pairs] : {std::pair{"train", &corpus.train[i]}, std::pair{"test", &corpus.test[i]}}) {
      std::vector<nlohmann::json> records;
      for (const auto& p : *pairs) records.push_back(to_json(p));
      write_jsonl(dir / split / (std::string(lang_name(l)) + ".jsonl"), records);
    }
  }
  std::vector<nlohmann::json> py;
  for (const auto& p : corpus.python) py.push_back({{"py", p}});
  write_jsonl(dir / "python.jsonl", py);
  const Manifest m = make_manifest(corpus, seed);
  write_text_atomic(dir / "manifest.json", to_json(m).dump(2) + "\n");
  write_text_atomic(dir / "manifest.txt", manifest_table(m));
}

ToyCorpus read_corpus(const std::filesystem::path& dir) {
  ToyCorpus corpus;
  for (Lang l : kSourceLangs) {
    const auto i = static_cast<std::size_t>(expert_slot(l));
    for (auto [split, pairs] : {std::pair{"train", &corpus.train[i]}, std::pair{"test", &corpus.test[i]}}) {
      for (const auto& r : read_jsonl(dir / split / (std::string(lang_name(l)) + ".jsonl"))) pairs->push_back(pair_from_json(r, l));
    }
  }
  for (const auto& r : read_jsonl(dir / "python.jsonl")) corpus.python.push_back(r.at("py").get<std::string>());
  return corpus;
}

}  // namespace xlate
