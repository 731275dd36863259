#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "xlate/lang.hpp"
#include "xlate/toy/ast.hpp"

namespace xlate::toy {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at token " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Parses the token form produced by render_tokens for `lang`. Python input is
/// the marker form; blocks still open at the end of input are closed.
Program parse_tokens(const std::vector<std::string>& tokens, Lang lang);
Program parse(const std::string& text, Lang lang);

/// Python reserved words of the toy grammar.
const std::vector<std::string>& python_keywords();

}  // namespace xlate::toy
