#pragma once

// Corpus generation and ingestion, sample construction, padding, curriculum
// split and the balanced routing set.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xlate/lang.hpp"
#include "xlate/tokenizer.hpp"
#include "xlate/toy/generate.hpp"

namespace xlate {

enum class Granularity { snippet, program };

struct TranslationPair {
  Lang src_lang = Lang::cpp;
  std::string src_code;
  std::string py_code;  // marker form
  Granularity granularity = Granularity::program;
  std::vector<TranslationPair> snippets;  // program pairs only

  bool operator==(const TranslationPair&) const = default;
};

/// Throws DataError unless both sides are nonempty and the source language is
/// one of the five supported ones.
void validate(const TranslationPair& pair);

/// {"<lang>": src, "py": py} plus "snippets" when present.
nlohmann::json to_json(const TranslationPair& pair);
TranslationPair pair_from_json(const nlohmann::json& record, Lang lang);

using PerLanguage = std::array<std::vector<TranslationPair>, kNumSourceLangs>;

struct ToyCorpus {
  PerLanguage train;
  PerLanguage test;
  std::vector<std::string> python;  // standalone toy-Python programs, marker form
};

struct CorpusOptions {
  int programs_per_language = 200;
  int test_per_language = 40;
  int python_programs = 400;
  toy::GeneratorOptions generator;
};

/// Deterministic in `seed`. Each language draws its own programs; test
/// programs never repeat a training program of the same language.
ToyCorpus generate_toy_corpus(std::uint64_t seed, const CorpusOptions& options = {});

/// One sample per line in each file, aligned by line number.
std::vector<nlohmann::json> ingest_xlcost(const std::filesystem::path& src_file, const std::filesystem::path& py_file, Lang lang);

enum class TagMode { language, generic };

struct TranslationSample {
  std::vector<int> ids;      // <tag> src <py> py <end-of-text>
  std::vector<float> mask;   // 1 where ids[i] is a loss target
  int prompt_length = 0;     // tokens up to and including <py>
  Lang lang = Lang::cpp;
  TagMode tag = TagMode::language;
};

struct SampleOptions {
  TagMode tag = TagMode::language;
  bool target_only = false;  // loss on tokens after <py> only
  int context_len = 256;
};

std::string sample_text(const std::string& tag, const std::string& src, const std::string& py);
TranslationSample build_sample(const TranslationPair& pair, const Tokenizer& tokenizer, const SampleOptions& options);
/// "<tag> code <tag> code <end-of-text>"; the prompt ends at the second tag.
TranslationSample build_copy_sample(const std::string& code, const Tokenizer& tokenizer, int context_len, Lang lang = Lang::py);
/// Monolingual sample "<tag> code <end-of-text>"; the prompt is the tag alone.
TranslationSample build_text_sample(Lang lang, const std::string& code, const Tokenizer& tokenizer, int context_len);

struct Selection {
  std::vector<std::size_t> kept;     // original indices, corpus order
  std::vector<std::size_t> dropped;  // the longest ceil(5%) (at most n - 1)
  std::size_t padded_length = 0;     // longest kept sample
};

/// Keeps the shortest 95% by token count. Ties drop the later sample.
Selection select_shortest(std::span<const std::size_t> lengths, double keep_fraction = 0.95);

struct PaddedBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> ids;       // [batch, seq]
  std::vector<float> mask;    // [batch, seq], 0 on padding
  std::vector<int> prompt_lengths;
  std::vector<Lang> langs;
  Selection selection;
};

/// Drops the longest 5% and pads the rest with <pad> to a common length.
PaddedBatch pad_batch(std::span<const TranslationSample> samples, int pad_id, double keep_fraction = 0.95);

/// Pads every sample (nothing dropped) to the longest one.
PaddedBatch pad_all(std::span<const TranslationSample> samples, int pad_id);

struct CurriculumSplit {
  std::vector<TranslationPair> snippets;  // snippets of the first-half programs
  std::vector<TranslationPair> programs;  // second-half programs
  std::size_t boundary = 0;               // number of programs in the first half
};

/// Accumulates token counts in corpus order until reaching half the total;
/// the boundary program stays in the first half. At least one program always
/// remains in the second half.
CurriculumSplit curriculum_split(std::span<const TranslationPair> programs, std::span<const std::size_t> token_counts);

/// Balanced routing set: the first min(size) programs of each language.
std::vector<TranslationPair> build_moe_dataset(const PerLanguage& corpora);
std::size_t balanced_take(std::span<const std::size_t> sizes);

/// Marker form to indented text (4 spaces per level).
std::string detokenize_python(const std::string& markers);
/// Indented text to canonical marker form (trailing DEDENTs omitted).
std::string serialize_python(const std::string& text);

struct Manifest {
  std::uint64_t seed = 0;
  std::array<std::array<std::size_t, 2>, kNumSourceLangs> train{};  // [snippet, program]
  std::array<std::array<std::size_t, 2>, kNumSourceLangs> test{};
  std::size_t python = 0;
};

Manifest make_manifest(const ToyCorpus& corpus, std::uint64_t seed);
nlohmann::json to_json(const Manifest& m);
std::string manifest_table(const Manifest& m);

void write_corpus(const ToyCorpus& corpus, std::uint64_t seed, const std::filesystem::path& dir);
ToyCorpus read_corpus(const std::filesystem::path& dir);

}  // namespace xlate
