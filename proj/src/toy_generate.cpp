#include "xlate/toy/generate.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace xlate::toy {
namespace {

const std::vector<std::string> kVariables{"a", "b", "c", "d", "i", "j", "k", "m", "n", "p", "q", "s",
                                          "t", "x", "y", "z", "num", "val", "res", "total", "count", "temp", "acc", "cur"};
const std::vector<std::string> kFunctions{"add", "mul", "calc", "compute", "helper", "square",
                                          "twice", "get", "solve", "step", "inc", "scale"};
const std::vector<std::string> kArith{"+", "-", "*"};
const std::vector<std::string> kCompare{"<", ">", "==", "<=", ">=", "!="};

class Gen {
 public:
  Gen(std::mt19937_64& rng, const GeneratorOptions& o) : rng_(rng), o_(o) {}

  Program program() {
    Program p;
    std::vector<std::string> taken;
    if (chance(o_.function_probability)) {
      p.body.push_back(function(taken));
      fn_name_ = p.body.back().name;
      fn_arity_ = p.body.back().params.size();
    }
    const bool prints = chance(o_.print_probability);
    std::vector<std::string> vars;
    const int n = uniform(o_.min_statements, o_.max_statements);
    p.body.push_back(assign(fresh(vars, taken), Expr::integer(literal())));
    for (int i = 1; i < n; ++i) {
      switch (uniform(0, prints ? 5 : 4)) {
        case 0:
        case 1: p.body.push_back(new_variable(vars, taken)); break;
        case 2: p.body.push_back(update(vars)); break;
        case 3: p.body.push_back(conditional(vars, prints)); break;
        case 4: loop(p, vars, taken, prints); break;
        default: p.body.push_back(print(vars)); break;
      }
    }
    if (prints && !contains_print(p)) p.body.push_back(print(vars));
    return p;
  }

 private:
  bool chance(double prob) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < prob; }
  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  std::int64_t literal() { return uniform(0, o_.max_literal); }
  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<std::size_t>(uniform(0, static_cast<int>(v.size()) - 1))];
  }

  std::string fresh(std::vector<std::string>& vars, std::vector<std::string>& taken) {
    std::string name;
    do {
      name = pick(kVariables);
    } while (std::find(taken.begin(), taken.end(), name) != taken.end());
    taken.push_back(name);
    vars.push_back(name);
    return name;
  }

  static Stmt assign(std::string name, Expr e) {
    Stmt s;
    s.kind = Stmt::Kind::assign;
    s.name = std::move(name);
    s.expr = std::move(e);
    return s;
  }

  Expr atom(const std::vector<std::string>& vars) {
    if (!vars.empty() && chance(0.6)) return Expr::variable(pick(vars));
    return Expr::integer(literal());
  }

  Expr arith(const std::vector<std::string>& vars, int depth) {
    if (depth == 0 || chance(0.3)) return atom(vars);
    Expr lhs = arith(vars, depth - 1);
    return Expr::binary(pick(kArith), std::move(lhs), atom(vars));
  }

  Expr condition(const std::vector<std::string>& vars) {
    return Expr::binary(pick(kCompare), Expr::variable(pick(vars)), Expr::integer(literal()));
  }

  Stmt function(std::vector<std::string>& taken) {
    Stmt f;
    f.kind = Stmt::Kind::def;
    f.name = pick(kFunctions);
    std::vector<std::string> locals;
    const int arity = uniform(1, 2);
    for (int i = 0; i < arity; ++i) fresh(locals, taken);
    f.params = locals;
    if (chance(0.4)) {
      Expr e = Expr::binary(pick(kArith), Expr::variable(pick(locals)), atom(locals));
      f.body.push_back(assign(fresh(locals, taken), std::move(e)));
    }
    if (chance(0.3)) {
      Stmt guard;
      guard.kind = Stmt::Kind::if_;
      guard.expr = condition(locals);
      Stmt ret;
      ret.kind = Stmt::Kind::return_;
      ret.expr = atom(locals);
      guard.body.push_back(std::move(ret));
      f.body.push_back(std::move(guard));
    }
    Stmt ret;
    ret.kind = Stmt::Kind::return_;
    ret.expr = arith(locals, 2);
    f.body.push_back(std::move(ret));
    // Locals are scoped to the function, so main may reuse their names.
    taken.clear();
    return f;
  }

  Stmt new_variable(std::vector<std::string>& vars, std::vector<std::string>& taken) {
    Expr value;
    if (!fn_name_.empty() && chance(0.5)) {
      std::vector<Expr> args;
      for (std::size_t i = 0; i < fn_arity_; ++i) args.push_back(atom(vars));
      value = Expr::call(fn_name_, std::move(args));
    } else {
      value = arith(vars, 2);
    }
    return assign(fresh(vars, taken), std::move(value));
  }

  Stmt update(const std::vector<std::string>& vars) {
    const std::string& target = pick(vars);
    return assign(target, Expr::binary(pick(kArith), Expr::variable(target), atom(vars)));
  }

  Stmt print(const std::vector<std::string>& vars) {
    Stmt s;
    s.kind = Stmt::Kind::print;
    s.expr = chance(0.7) ? Expr::variable(pick(vars)) : arith(vars, 1);
    return s;
  }

  Stmt body_statement(const std::vector<std::string>& vars, bool prints) {
    return prints && chance(0.5) ? print(vars) : update(vars);
  }

  Stmt conditional(const std::vector<std::string>& vars, bool prints) {
    Stmt s;
    s.kind = Stmt::Kind::if_;
    s.expr = condition(vars);
    s.body.push_back(body_statement(vars, prints));
    if (chance(0.5)) {
      s.has_else = true;
      s.orelse.push_back(body_statement(vars, prints));
    }
    return s;
  }

  void loop(Program& p, std::vector<std::string>& vars, std::vector<std::string>& taken, bool prints) {
    const std::vector<std::string> before = vars;
    const std::string counter = fresh(vars, taken);
    p.body.push_back(assign(counter, Expr::integer(0)));
    Stmt w;
    w.kind = Stmt::Kind::while_;
    w.expr = Expr::binary("<", Expr::variable(counter), Expr::integer(uniform(2, 5)));
    w.body.push_back(body_statement(before, prints));
    w.body.push_back(assign(counter, Expr::binary("+", Expr::variable(counter), Expr::integer(1))));
    p.body.push_back(std::move(w));
  }

  std::mt19937_64& rng_;
  const GeneratorOptions& o_;
  std::string fn_name_;
  std::size_t fn_arity_ = 0;
};

bool stmt_prints(const Stmt& s) {
  if (s.kind == Stmt::Kind::print) return true;
  for (const auto& b : s.body) {
    if (stmt_prints(b)) return true;
  }
  for (const auto& b : s.orelse) {
    if (stmt_prints(b)) return true;
  }
  return false;
}

}  // namespace

Program generate_program(std::mt19937_64& rng, const GeneratorOptions& options) { return Gen(rng, options).program(); }

bool contains_print(const Program& program) {
  return std::any_of(program.body.begin(), program.body.end(), stmt_prints);
}

}  // namespace xlate::toy
