#pragma once

// CodeBLEU over toy-Python in marker form: BLEU, keyword-weighted n-gram
// match, AST subtree match and def-use data-flow match.

#include <array>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "xlate/lang.hpp"

namespace xlate {

using TokenList = std::vector<std::string>;

/// Clipped (unsmoothed) n-gram precision; 0 when the candidate has no n-grams.
double ngram_precision(const TokenList& candidate, const TokenList& reference, int n);

/// Geometric mean of clipped n-gram precisions times the brevity penalty.
/// A zero match count at n >= 2 is replaced by 1 / (candidate n-grams + 1).
double bleu(const TokenList& candidate, const TokenList& reference, int max_n = 4);

/// As bleu, with every n-gram containing a keyword counted `keyword_weight` times.
double weighted_ngram(const TokenList& candidate, const TokenList& reference, const std::set<std::string>& keywords,
                      double keyword_weight = 5.0, int max_n = 4);

/// Fraction of reference subtrees (nodes with children, identifiers and
/// literals normalised) found in the candidate, multiset clipped.
double syntax_match(const TokenList& candidate, const TokenList& reference);

/// Fraction of reference def-use edges found in the candidate. Endpoints are
/// statement shapes, so renaming and reordering independent statements do
/// not change the score. 1 when the reference has no edges.
double dataflow_match(const TokenList& candidate, const TokenList& reference);

struct CodeBleuWeights {
  double bleu = 0.25, weighted = 0.25, syntax = 0.25, dataflow = 0.25;
};

struct CodeBleuReport {
  double bleu = 0, weighted_bleu = 0, syntax_match = 0, dataflow_match = 0, composite = 0;
  bool candidate_parses = false;
  std::size_t count = 1;
};

std::set<std::string> python_keyword_set();

/// Throws DataError when the reference does not parse.
CodeBleuReport codebleu(const TokenList& candidate, const TokenList& reference, const CodeBleuWeights& weights = {});
CodeBleuReport codebleu(const std::string& candidate, const std::string& reference, const CodeBleuWeights& weights = {});

/// Mean of per-pair reports.
CodeBleuReport mean_report(const std::vector<CodeBleuReport>& reports);

nlohmann::json to_json(const CodeBleuReport& r);

struct ScoreRow {
  std::string label;
  CodeBleuReport report;
};
/// Aligned text table, scores x100 with two decimals.
std::string codebleu_table(const std::vector<ScoreRow>& rows);

/// Rows = predicted expert, columns = true language.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumSourceLangs>, kNumSourceLangs> counts{};

  void add(int predicted, int truth);
  std::size_t column_total(int truth) const;
  double accuracy(int truth) const;
  double overall_accuracy() const;
  /// Share of the given true-language columns' mass predicted inside the same set.
  double block_share(const std::vector<int>& languages) const;
  std::string table() const;
  nlohmann::json to_json() const;
};

}  // namespace xlate
