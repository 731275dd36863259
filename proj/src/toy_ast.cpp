#include "xlate/toy/ast.hpp"

namespace xlate::toy {

bool is_comparison(const std::string& op) {
  return op == "<" || op == ">" || op == "==" || op == "<=" || op == ">=" || op == "!=";
}

int precedence(const Expr& e) {
  if (e.kind != Expr::Kind::binary) return 4;
  if (is_comparison(e.name)) return 1;
  if (e.name == "+" || e.name == "-") return 2;
  return 3;
}

}  // namespace xlate::toy
