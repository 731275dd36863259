#pragma once

// Abstract syntax shared by the six toy surface languages.

#include <cstdint>
#include <string>
#include <vector>

namespace xlate::toy {

struct Expr {
  enum class Kind { integer, variable, binary, call };
  Kind kind = Kind::integer;
  std::int64_t value = 0;
  std::string name;  // variable, function, or operator symbol
  std::vector<Expr> operands;

  static Expr integer(std::int64_t v) { return {Kind::integer, v, {}, {}}; }
  static Expr variable(std::string n) { return {Kind::variable, 0, std::move(n), {}}; }
  static Expr binary(std::string op, Expr lhs, Expr rhs) {
    return {Kind::binary, 0, std::move(op), {std::move(lhs), std::move(rhs)}};
  }
  static Expr call(std::string fn, std::vector<Expr> args) { return {Kind::call, 0, std::move(fn), std::move(args)}; }

  bool operator==(const Expr&) const = default;
};

struct Stmt {
  enum class Kind { assign, print, if_, while_, return_, def };
  Kind kind = Kind::assign;
  std::string name;                 // assign target / function name
  std::vector<std::string> params;  // def
  Expr expr;                        // value / condition
  std::vector<Stmt> body;
  std::vector<Stmt> orelse;
  bool has_else = false;

  bool operator==(const Stmt&) const = default;
};

struct Program {
  std::vector<Stmt> body;
  bool operator==(const Program&) const = default;
};

/// Binding strength: comparisons < additive < multiplicative < atoms.
int precedence(const Expr& e);
bool is_comparison(const std::string& op);

}  // namespace xlate::toy
