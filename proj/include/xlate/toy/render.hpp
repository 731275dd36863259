#pragma once

// Surface renderers. Every language renders to a flat list of
// whitespace-free tokens; the textual form joins them with single spaces.

#include <string>
#include <vector>

#include "xlate/lang.hpp"
#include "xlate/toy/ast.hpp"

namespace xlate::toy {

inline constexpr const char* kNewline = "NEWLINE";
inline constexpr const char* kIndent = "INDENT";
inline constexpr const char* kDedent = "DEDENT";

/// Whole program. Python uses the marker form with trailing DEDENTs removed.
std::vector<std::string> render_tokens(const Program& program, Lang lang);

/// One top-level statement in the context of `program` (so declarations and
/// wrappers match the full rendering of that statement).
std::vector<std::string> render_statement_tokens(const Program& program, std::size_t index, Lang lang);

std::string render(const Program& program, Lang lang);
std::string render_statement(const Program& program, std::size_t index, Lang lang);

std::string join_tokens(const std::vector<std::string>& tokens);
std::vector<std::string> split_tokens(const std::string& text);

}  // namespace xlate::toy
