#include "xlate/codebleu.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "xlate/errors.hpp"
#include "xlate/toy/parse.hpp"
#include "xlate/toy/render.hpp"

namespace xlate {
namespace {

using Gram = std::vector<std::string>;
using WeightFn = std::function<double(const Gram&)>;

std::map<Gram, std::size_t> ngram_counts(const TokenList& tokens, std::size_t n) {
  std::map<Gram, std::size_t> out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++out[Gram(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

double ngram_score(const TokenList& candidate, const TokenList& reference, int max_n, const WeightFn& weight) {
  if (reference.empty()) throw DomainError("bleu: empty reference");
  if (max_n < 1) throw DomainError("bleu: max_n must be >= 1");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto cand = ngram_counts(candidate, static_cast<std::size_t>(n));
    const auto ref = ngram_counts(reference, static_cast<std::size_t>(n));
    double matched = 0.0, total = 0.0;
    for (const auto& [gram, count] : cand) {
      const double w = weight(gram);
      total += w * static_cast<double>(count);
      auto it = ref.find(gram);
      if (it != ref.end()) matched += w * static_cast<double>(std::min(count, it->second));
    }
    double p;
    if (matched > 0.0) {
      p = matched / total;
    } else if (n == 1) {
      return 0.0;
    } else {
      p = 1.0 / (total + 1.0);
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

// ---- syntax trees

struct Node {
  std::string label;
  std::vector<Node> children;
};

Node leaf(std::string label) { return {std::move(label), {}}; }

Node expr_tree(const toy::Expr& e) {
  switch (e.kind) {
    case toy::Expr::Kind::integer: return leaf("NUM");
    case toy::Expr::Kind::variable: return leaf("ID");
    case toy::Expr::Kind::binary: return {"binop" + e.name, {expr_tree(e.operands[0]), expr_tree(e.operands[1])}};
    case toy::Expr::Kind::call: {
      Node args{"args", {}};
      for (const auto& a : e.operands) args.children.push_back(expr_tree(a));
      return {"call", {leaf("ID"), std::move(args)}};
    }
  }
  return leaf("?");
}

Node block_tree(const std::string& label, const std::vector<toy::Stmt>& body);

Node stmt_tree(const toy::Stmt& s) {
  switch (s.kind) {
    case toy::Stmt::Kind::assign: return {"assign", {leaf("ID"), expr_tree(s.expr)}};
    case toy::Stmt::Kind::print: return {"print", {expr_tree(s.expr)}};
    case toy::Stmt::Kind::return_: return {"return", {expr_tree(s.expr)}};
    case toy::Stmt::Kind::if_: {
      Node n{"if", {expr_tree(s.expr), block_tree("block", s.body)}};
      if (s.has_else) n.children.push_back(block_tree("else", s.orelse));
      return n;
    }
    case toy::Stmt::Kind::while_: return {"while", {expr_tree(s.expr), block_tree("block", s.body)}};
    case toy::Stmt::Kind::def: {
      Node params{"params", {}};
      for (std::size_t i = 0; i < s.params.size(); ++i) params.children.push_back(leaf("ID"));
      return {"def", {leaf("ID"), std::move(params), block_tree("block", s.body)}};
    }
  }
  return leaf("?");
}

Node block_tree(const std::string& label, const std::vector<toy::Stmt>& body) {
  Node n{label, {}};
  for (const auto& s : body) n.children.push_back(stmt_tree(s));
  return n;
}

std::string sexp(const Node& n) {
  if (n.children.empty()) return n.label;
  std::string out = "(" + n.label;
  for (const auto& c : n.children) out += " " + sexp(c);
  return out + ")";
}

void collect_subtrees(const Node& n, std::map<std::string, std::size_t>& out) {
  if (n.children.empty()) return;
  ++out[sexp(n)];
  for (const auto& c : n.children) collect_subtrees(c, out);
}

std::optional<toy::Program> try_parse(const TokenList& tokens) {
  try {
    return toy::parse_tokens(tokens, Lang::py);
  } catch (const toy::ParseError&) {
    return std::nullopt;
  }
}

toy::Program parse_reference(const TokenList& reference) {
  try {
    return toy::parse_tokens(reference, Lang::py);
  } catch (const toy::ParseError& e) {
    throw DataError(std::string("reference does not parse: ") + e.what());
  }
}

double clipped_share(const std::map<std::string, std::size_t>& cand, const std::map<std::string, std::size_t>& ref) {
  std::size_t total = 0, matched = 0;
  for (const auto& [key, count] : ref) {
    total += count;
    auto it = cand.find(key);
    if (it != cand.end()) matched += std::min(count, it->second);
  }
  return total == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(total);
}

double syntax_score(const toy::Program& cand, const toy::Program& ref) {
  std::map<std::string, std::size_t> c, r;
  collect_subtrees(block_tree("module", cand.body), c);
  collect_subtrees(block_tree("module", ref.body), r);
  return clipped_share(c, r);
}

// ---- data flow

struct FlowEntry {
  std::string shape;
  std::vector<std::string> defs;
  std::vector<std::string> uses;  // variable occurrences in order
};

void expr_uses(const toy::Expr& e, std::vector<std::string>& out) {
  if (e.kind == toy::Expr::Kind::variable) out.push_back(e.name);
  for (const auto& o : e.operands) expr_uses(o, out);
}

void flatten(const std::vector<toy::Stmt>& body, std::vector<FlowEntry>& out, std::vector<const toy::Stmt*>& functions) {
  for (const auto& s : body) {
    FlowEntry e;
    switch (s.kind) {
      case toy::Stmt::Kind::def:
        functions.push_back(&s);
        continue;
      case toy::Stmt::Kind::assign:
        e.shape = "assign " + sexp(expr_tree(s.expr));
        e.defs.push_back(s.name);
        break;
      case toy::Stmt::Kind::print: e.shape = "print " + sexp(expr_tree(s.expr)); break;
      case toy::Stmt::Kind::return_: e.shape = "return " + sexp(expr_tree(s.expr)); break;
      case toy::Stmt::Kind::if_: e.shape = "if " + sexp(expr_tree(s.expr)); break;
      case toy::Stmt::Kind::while_: e.shape = "while " + sexp(expr_tree(s.expr)); break;
    }
    expr_uses(s.expr, e.uses);
    out.push_back(std::move(e));
    flatten(s.body, out, functions);
    flatten(s.orelse, out, functions);
  }
}

void scope_edges(const std::vector<FlowEntry>& entries, std::map<std::string, std::size_t>& edges) {
  for (std::size_t j = 0; j < entries.size(); ++j) {
    for (std::size_t slot = 0; slot < entries[j].uses.size(); ++slot) {
      const std::string& v = entries[j].uses[slot];
      for (std::size_t i = j; i-- > 0;) {
        if (std::find(entries[i].defs.begin(), entries[i].defs.end(), v) != entries[i].defs.end()) {
          ++edges[entries[i].shape + " -> " + entries[j].shape + " #" + std::to_string(slot)];
          break;
        }
      }
    }
  }
}

std::map<std::string, std::size_t> dataflow_edges(const toy::Program& program) {
  std::map<std::string, std::size_t> edges;
  std::vector<const toy::Stmt*> functions;
  std::vector<FlowEntry> top;
  flatten(program.body, top, functions);
  scope_edges(top, edges);
  for (std::size_t f = 0; f < functions.size(); ++f) {
    const toy::Stmt& fn = *functions[f];
    std::vector<FlowEntry> entries{{"def " + std::to_string(fn.params.size()), fn.params, {}}};
    flatten(fn.body, entries, functions);
    scope_edges(entries, edges);
  }
  return edges;
}

double dataflow_score(const toy::Program& cand, const toy::Program& ref) {
  return clipped_share(dataflow_edges(cand), dataflow_edges(ref));
}

}  // namespace

double ngram_precision(const TokenList& candidate, const TokenList& reference, int n) {
  if (n < 1) throw DomainError("ngram_precision: n must be >= 1");
  const auto cand = ngram_counts(candidate, static_cast<std::size_t>(n));
  const auto ref = ngram_counts(reference, static_cast<std::size_t>(n));
  std::size_t matched = 0, total = 0;
  for (const auto& [gram, count] : cand) {
    total += count;
    auto it = ref.find(gram);
    if (it != ref.end()) matched += std::min(count, it->second);
  }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

double bleu(const TokenList& candidate, const TokenList& reference, int max_n) {
  return ngram_score(candidate, reference, max_n, [](const Gram&) { return 1.0; });
}

double weighted_ngram(const TokenList& candidate, const TokenList& reference, const std::set<std::string>& keywords,
                      double keyword_weight, int max_n) {
  return ngram_score(candidate, reference, max_n, [&](const Gram& g) {
    for (const auto& t : g) {
      if (keywords.count(t)) return keyword_weight;
    }
    return 1.0;
  });
}

double syntax_match(const TokenList& candidate, const TokenList& reference) {
  const toy::Program ref = parse_reference(reference);
  const auto cand = try_parse(candidate);
  return cand ? syntax_score(*cand, ref) : 0.0;
}

double dataflow_match(const TokenList& candidate, const TokenList& reference) {
  const toy::Program ref = parse_reference(reference);
  const auto cand = try_parse(candidate);
  return cand ? dataflow_score(*cand, ref) : 0.0;
}

std::set<std::string> python_keyword_set() {
  const auto& kw = toy::python_keywords();
  return {kw.begin(), kw.end()};
}

CodeBleuReport codebleu(const TokenList& candidate, const TokenList& reference, const CodeBleuWeights& weights) {
  const toy::Program ref = parse_reference(reference);
  CodeBleuReport r;
  r.bleu = bleu(candidate, reference);
  r.weighted_bleu = weighted_ngram(candidate, reference, python_keyword_set());
  if (const auto cand = try_parse(candidate)) {
    r.candidate_parses = true;
    r.syntax_match = syntax_score(*cand, ref);
    r.dataflow_match = dataflow_score(*cand, ref);
  }
  r.composite = weights.bleu * r.bleu + weights.weighted * r.weighted_bleu + weights.syntax * r.syntax_match +
                weights.dataflow * r.dataflow_match;
  return r;
}

CodeBleuReport codebleu(const std::string& candidate, const std::string& reference, const CodeBleuWeights& weights) {
  return codebleu(toy::split_tokens(candidate), toy::split_tokens(reference), weights);
}

CodeBleuReport mean_report(const std::vector<CodeBleuReport>& reports) {
  CodeBleuReport m;
  m.count = reports.size();
  if (reports.empty()) return m;
  std::size_t parses = 0;
  for (const auto& r : reports) {
    m.bleu += r.bleu;
    m.weighted_bleu += r.weighted_bleu;
    m.syntax_match += r.syntax_match;
    m.dataflow_match += r.dataflow_match;
    m.composite += r.composite;
    parses += r.candidate_parses;
  }
  const double n = static_cast<double>(reports.size());
  m.bleu /= n;
  m.weighted_bleu /= n;
  m.syntax_match /= n;
  m.dataflow_match /= n;
  m.composite /= n;
  m.candidate_parses = parses == reports.size();
  return m;
}

nlohmann::json to_json(const CodeBleuReport& r) {
  return {{"bleu", r.bleu},
          {"weighted_bleu", r.weighted_bleu},
          {"syntax_match", r.syntax_match},
          {"dataflow_match", r.dataflow_match},
          {"composite", r.composite},
          {"codebleu_x100", r.composite * 100.0},
          {"count", r.count}};
}

std::string codebleu_table(const std::vector<ScoreRow>& rows) {
  std::ostringstream out;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-16s %8s %8s %8s %8s %9s\n", "", "BLEU", "wBLEU", "syntax", "dataflow", "CodeBLEU");
  out << buf;
  for (const auto& row : rows) {
    const auto& r = row.report;
    std::snprintf(buf, sizeof buf, "%-16s %8.2f %8.2f %8.2f %8.2f %9.2f\n", row.label.c_str(), 100 * r.bleu, 100 * r.weighted_bleu,
                  100 * r.syntax_match, 100 * r.dataflow_match, 100 * r.composite);
    out << buf;
  }
  return out.str();
}

void ConfusionMatrix::add(int predicted, int truth) {
  if (predicted < 0 || predicted >= kNumSourceLangs || truth < 0 || truth >= kNumSourceLangs) {
    throw DomainError("confusion matrix index out of range");
  }
  ++counts[static_cast<std::size_t>(predicted)][static_cast<std::size_t>(truth)];
}

std::size_t ConfusionMatrix::column_total(int truth) const {
  std::size_t total = 0;
  for (const auto& row : counts) total += row[static_cast<std::size_t>(truth)];
  return total;
}

double ConfusionMatrix::accuracy(int truth) const {
  const std::size_t total = column_total(truth);
  const auto t = static_cast<std::size_t>(truth);
  return total == 0 ? 0.0 : static_cast<double>(counts[t][t]) / static_cast<double>(total);
}

double ConfusionMatrix::overall_accuracy() const {
  std::size_t total = 0, right = 0;
  for (std::size_t p = 0; p < counts.size(); ++p) {
    for (std::size_t t = 0; t < counts.size(); ++t) {
      total += counts[p][t];
      if (p == t) right += counts[p][t];
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(right) / static_cast<double>(total);
}

double ConfusionMatrix::block_share(const std::vector<int>& languages) const {
  std::size_t total = 0, inside = 0;
  for (int t : languages) {
    total += column_total(t);
    for (int p : languages) inside += counts[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)];
  }
  return total == 0 ? 0.0 : static_cast<double>(inside) / static_cast<double>(total);
}

std::string ConfusionMatrix::table() const {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s", "pred\\true");
  out << buf;
  for (Lang l : kSourceLangs) {
    std::snprintf(buf, sizeof buf, " %10s", std::string(lang_display(l)).c_str());
    out << buf;
  }
  out << "\n";
  for (Lang p : kSourceLangs) {
    std::snprintf(buf, sizeof buf, "%-12s", std::string(lang_display(p)).c_str());
    out << buf;
    for (Lang t : kSourceLangs) {
      std::snprintf(buf, sizeof buf, " %10zu", counts[static_cast<std::size_t>(expert_slot(p))][static_cast<std::size_t>(expert_slot(t))]);
      out << buf;
    }
    out << "\n";
  }
  std::snprintf(buf, sizeof buf, "%-12s", "accuracy");
  out << buf;
  for (Lang t : kSourceLangs) {
    std::snprintf(buf, sizeof buf, " %9.1f%%", 100.0 * accuracy(expert_slot(t)));
    out << buf;
  }
  out << "\n";
  return out.str();
}

nlohmann::json ConfusionMatrix::to_json() const {
  nlohmann::json j;
  j["labels"] = nlohmann::json::array();
  for (Lang l : kSourceLangs) j["labels"].push_back(std::string(lang_name(l)));
  j["rows_predicted_columns_true"] = counts;
  nlohmann::json acc = nlohmann::json::object();
  for (Lang l : kSourceLangs) acc[std::string(lang_name(l))] = accuracy(expert_slot(l));
  j["accuracy"] = acc;
  j["overall_accuracy"] = overall_accuracy();
  return j;
}

}  // namespace xlate
