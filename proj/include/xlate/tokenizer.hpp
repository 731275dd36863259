#pragma once

// Byte-level BPE with atomic special tokens.
//
// Text is split into chunks of one optional leading space plus a run of
// non-space bytes. A chunk whose body is a special token's name maps to that
// special (there are bare and space-prefixed ids for each); every other chunk
// is encoded by the learned merges over its bytes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace xlate {

inline constexpr std::array<std::string_view, 10> kSpecialTokens{
    "<py>", "<cpp>", "<csharp>", "<js>", "<java>", "<php>", "<code>", "NEWLINE", "INDENT", "DEDENT"};

class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEndOfText = 1;
  static constexpr int kVersion = 1;

  /// Byte-level tokenizer without merges.
  Tokenizer();

  /// Learns up to `merges` merges from chunk frequencies in `texts`; stops
  /// early once no pair occurs twice. Ties break on the smaller pair of ids.
  static Tokenizer train(std::span<const std::string> texts, int merges = 512);

  std::vector<int> encode(std::string_view text) const;
  /// Concatenated token text; <pad> and <end-of-text> decode to nothing.
  std::string decode(std::span<const int> ids) const;

  int vocab_size() const { return static_cast<int>(first_merge_id() + merges_.size()); }
  int merge_count() const { return static_cast<int>(merges_.size()); }
  int pad_id() const { return kPad; }
  int eot_id() const { return kEndOfText; }

  /// Id of special `name` (e.g. "<py>"), bare or with a leading space.
  int special_id(std::string_view name, bool spaced) const;
  /// True for either variant of special `name`.
  bool is_special(int id, std::string_view name) const;
  bool is_any_special(int id) const { return id >= 0 && id < first_byte_id(); }
  std::string token_text(int id) const;

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  bool operator==(const Tokenizer& o) const { return merges_ == o.merges_; }

 private:
  static int first_byte_id() { return 2 + 2 * static_cast<int>(kSpecialTokens.size()); }
  std::size_t first_merge_id() const { return static_cast<std::size_t>(first_byte_id()) + 256; }
  void rebuild();
  std::vector<int> encode_chunk(std::string_view chunk) const;

  std::vector<std::pair<int, int>> merges_;
  std::map<std::pair<int, int>, int> rank_;  // pair -> merge index
  std::vector<std::string> text_;           // id -> bytes
};

/// Splits text into BPE chunks (leading space attached to the following run).
std::vector<std::string_view> pretokenize(std::string_view text);

}  // namespace xlate
