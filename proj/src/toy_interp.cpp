#include "xlate/toy/interp.hpp"

#include <map>
#include <stdexcept>

namespace xlate::toy {
namespace {

struct Abort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Return {
  std::int64_t value;
};

using Scope = std::map<std::string, std::int64_t>;

std::int64_t wrap(unsigned long long v) { return static_cast<std::int64_t>(v); }

class Machine {
 public:
  Machine(const Program& p, const ExecLimits& limits, ExecResult& out) : limits_(limits), out_(out) {
    for (const auto& s : p.body) {
      if (s.kind == Stmt::Kind::def) functions_[s.name] = &s;
    }
  }

  void run_body(const std::vector<Stmt>& body, Scope& scope, int depth) {
    for (const auto& s : body) exec(s, scope, depth);
  }

 private:
  void tick() {
    if (++steps_ > limits_.max_steps) throw Abort("step limit exceeded");
  }

  void exec(const Stmt& s, Scope& scope, int depth) {
    tick();
    switch (s.kind) {
      case Stmt::Kind::assign: scope[s.name] = eval(s.expr, scope, depth); break;
      case Stmt::Kind::print: out_.output.push_back(eval(s.expr, scope, depth)); break;
      case Stmt::Kind::return_:
        if (depth == 0) throw Abort("return outside function");
        throw Return{eval(s.expr, scope, depth)};
      case Stmt::Kind::if_:
        if (eval(s.expr, scope, depth) != 0) {
          run_body(s.body, scope, depth);
        } else if (s.has_else) {
          run_body(s.orelse, scope, depth);
        }
        break;
      case Stmt::Kind::while_:
        while (eval(s.expr, scope, depth) != 0) {
          tick();
          run_body(s.body, scope, depth);
        }
        break;
      case Stmt::Kind::def: break;
    }
  }

  std::int64_t eval(const Expr& e, Scope& scope, int depth) {
    switch (e.kind) {
      case Expr::Kind::integer: return e.value;
      case Expr::Kind::variable: {
        auto it = scope.find(e.name);
        if (it == scope.end()) throw Abort("undefined variable '" + e.name + "'");
        return it->second;
      }
      case Expr::Kind::binary: {
        const auto a = static_cast<unsigned long long>(eval(e.operands[0], scope, depth));
        const auto b = static_cast<unsigned long long>(eval(e.operands[1], scope, depth));
        const auto sa = static_cast<std::int64_t>(a), sb = static_cast<std::int64_t>(b);
        if (e.name == "+") return wrap(a + b);
        if (e.name == "-") return wrap(a - b);
        if (e.name == "*") return wrap(a * b);
        if (e.name == "<") return sa < sb;
        if (e.name == ">") return sa > sb;
        if (e.name == "<=") return sa <= sb;
        if (e.name == ">=") return sa >= sb;
        if (e.name == "==") return sa == sb;
        if (e.name == "!=") return sa != sb;
        throw Abort("unknown operator '" + e.name + "'");
      }
      case Expr::Kind::call: {
        auto it = functions_.find(e.name);
        if (it == functions_.end()) throw Abort("undefined function '" + e.name + "'");
        const Stmt& fn = *it->second;
        if (fn.params.size() != e.operands.size()) throw Abort("arity mismatch calling '" + e.name + "'");
        if (depth + 1 > limits_.max_depth) throw Abort("recursion limit exceeded");
        Scope local;
        for (std::size_t i = 0; i < fn.params.size(); ++i) local[fn.params[i]] = eval(e.operands[i], scope, depth);
        try {
          run_body(fn.body, local, depth + 1);
        } catch (const Return& r) {
          return r.value;
        }
        throw Abort("function '" + e.name + "' ended without return");
      }
    }
    return 0;
  }

  const ExecLimits& limits_;
  ExecResult& out_;
  std::map<std::string, const Stmt*> functions_;
  std::int64_t steps_ = 0;
};

}  // namespace

ExecResult run(const Program& program, const ExecLimits& limits) {
  ExecResult result;
  Machine m(program, limits, result);
  Scope globals;
  try {
    m.run_body(program.body, globals, 0);
  } catch (const Abort& a) {
    result.error = a.what();
  }
  return result;
}

}  // namespace xlate::toy
