#include "xlate/tokenizer.hpp"

#include <fstream>
#include <limits>
#include <unordered_map>

#include "xlate/errors.hpp"
#include "xlate/io.hpp"

namespace xlate {

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i;
    if (text[j] == ' ') ++j;
    while (j < text.size() && text[j] != ' ') ++j;
    out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Tokenizer::Tokenizer() { rebuild(); }

void Tokenizer::rebuild() {
  text_.assign(2, "");
  for (auto name : kSpecialTokens) text_.emplace_back(name);
  for (auto name : kSpecialTokens) text_.push_back(" " + std::string(name));
  for (int b = 0; b < 256; ++b) text_.emplace_back(1, static_cast<char>(b));
  rank_.clear();
  for (std::size_t m = 0; m < merges_.size(); ++m) {
    const auto [a, b] = merges_[m];
    if (a < first_byte_id() || b < first_byte_id() || a >= static_cast<int>(text_.size()) || b >= static_cast<int>(text_.size())) {
      throw DataError("tokenizer: merge " + std::to_string(m) + " refers to an unknown token");
    }
    rank_[merges_[m]] = static_cast<int>(m);
    text_.push_back(text_[static_cast<std::size_t>(a)] + text_[static_cast<std::size_t>(b)]);
  }
}

namespace {

std::vector<int> byte_symbols(std::string_view chunk, int first_byte) {
  std::vector<int> s;
  s.reserve(chunk.size());
  for (unsigned char c : chunk) s.push_back(first_byte + c);
  return s;
}

int special_index(std::string_view body) {
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
    if (kSpecialTokens[i] == body) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

Tokenizer Tokenizer::train(std::span<const std::string> texts, int merges) {
  if (merges < 0) throw ConfigError("tokenizer: merge count must be >= 0");
  Tokenizer tok;
  std::map<std::string, std::int64_t> freq;
  for (const auto& t : texts) {
    for (auto chunk : pretokenize(t)) {
      const std::string_view body = chunk.front() == ' ' ? chunk.substr(1) : chunk;
      if (special_index(body) < 0) ++freq[std::string(chunk)];
    }
  }
  std::vector<std::pair<std::vector<int>, std::int64_t>> words;
  for (const auto& [w, n] : freq) words.emplace_back(byte_symbols(w, first_byte_id()), n);

  for (int m = 0; m < merges; ++m) {
    std::map<std::pair<int, int>, std::int64_t> counts;
    for (const auto& [syms, n] : words) {
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) counts[{syms[i], syms[i + 1]}] += n;
    }
    std::pair<int, int> best{-1, -1};
    std::int64_t best_count = 1;
    for (const auto& [pair, n] : counts) {
      if (n > best_count) {
        best = pair;
        best_count = n;
      }
    }
    if (best.first < 0) break;
    const int id = static_cast<int>(tok.first_merge_id() + tok.merges_.size());
    tok.merges_.push_back(best);
    for (auto& [syms, n] : words) {
      std::vector<int> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
          next.push_back(id);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
  }
  tok.rebuild();
  return tok;
}

std::vector<int> Tokenizer::encode_chunk(std::string_view chunk) const {
  std::vector<int> syms = byte_symbols(chunk, first_byte_id());
  while (syms.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t at = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = rank_.find({syms[i], syms[i + 1]});
      if (it != rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        at = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    syms[at] = static_cast<int>(first_merge_id()) + best_rank;
    syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(at) + 1);
  }
  return syms;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  for (auto chunk : pretokenize(text)) {
    const bool spaced = chunk.front() == ' ';
    const int special = special_index(spaced ? chunk.substr(1) : chunk);
    if (special >= 0) {
      out.push_back(2 + special + (spaced ? static_cast<int>(kSpecialTokens.size()) : 0));
      continue;
    }
    const auto ids = encode_chunk(chunk);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += token_text(id);
  return out;
}

std::string Tokenizer::token_text(int id) const {
  if (id < 0 || id >= vocab_size()) throw DomainError("tokenizer: id " + std::to_string(id) + " outside vocabulary");
  return text_[static_cast<std::size_t>(id)];
}

int Tokenizer::special_id(std::string_view name, bool spaced) const {
  const int i = special_index(name);
  if (i < 0) throw DomainError("tokenizer: unknown special token '" + std::string(name) + "'");
  return 2 + i + (spaced ? static_cast<int>(kSpecialTokens.size()) : 0);
}

bool Tokenizer::is_special(int id, std::string_view name) const {
  return id == special_id(name, false) || id == special_id(name, true);
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [a, b] : merges_) merges.push_back({a, b});
  return {{"format", "xlate-bpe"},
          {"version", kVersion},
          {"specials", std::vector<std::string>(kSpecialTokens.begin(), kSpecialTokens.end())},
          {"vocab_size", vocab_size()},
          {"merges", merges}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "xlate-bpe" || j.at("version") != kVersion) throw DataError("tokenizer: unsupported vocabulary format");
    if (j.at("specials") != std::vector<std::string>(kSpecialTokens.begin(), kSpecialTokens.end())) {
      throw DataError("tokenizer: special token list differs from this build");
    }
    Tokenizer tok;
    for (const auto& m : j.at("merges")) tok.merges_.emplace_back(m.at(0).get<int>(), m.at(1).get<int>());
    tok.rebuild();
    if (j.at("vocab_size") != tok.vocab_size()) throw DataError("tokenizer: vocab_size does not match merge list");
    return tok;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("tokenizer: malformed vocabulary: ") + e.what());
  }
}

void Tokenizer::save(const std::filesystem::path& path) const { write_text_atomic(path, to_json().dump(1) + "\n"); }

Tokenizer Tokenizer::load(const std::filesystem::path& path) { return from_json(read_json(path)); }

}  // namespace xlate
