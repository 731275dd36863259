#include "xlate/toy/render.hpp"

#include <set>
#include <sstream>
#include <stdexcept>

namespace xlate::toy {
namespace {

using Tokens = std::vector<std::string>;

class Renderer {
 public:
  explicit Renderer(Lang lang) : lang_(lang) {}

  void expr(const Expr& e, Tokens& out) const {
    switch (e.kind) {
      case Expr::Kind::integer: out.push_back(std::to_string(e.value)); break;
      case Expr::Kind::variable: var(e.name, out); break;
      case Expr::Kind::call:
        out.push_back(e.name);
        out.push_back("(");
        for (std::size_t i = 0; i < e.operands.size(); ++i) {
          if (i) out.push_back(",");
          expr(e.operands[i], out);
        }
        out.push_back(")");
        break;
      case Expr::Kind::binary: {
        const int p = precedence(e);
        operand(e.operands[0], precedence(e.operands[0]) < p, out);
        out.push_back(e.name);
        operand(e.operands[1], precedence(e.operands[1]) <= p, out);
        break;
      }
    }
  }

  // Statements of one function or main body. `declared` tracks names that
  // already have a declaration in the current scope.
  void stmt(const Stmt& s, std::set<std::string>& declared, Tokens& out) const {
    if (lang_ == Lang::py) {
      py_stmt(s, out);
    } else {
      c_stmt(s, declared, out);
    }
  }

  void function(const Stmt& s, Tokens& out) const {
    std::set<std::string> declared(s.params.begin(), s.params.end());
    if (lang_ == Lang::py) {
      out.insert(out.end(), {"def", s.name, "("});
      params(s.params, out);
      out.insert(out.end(), {")", ":", kNewline, kIndent});
      for (const auto& b : s.body) py_stmt(b, out);
      out.push_back(kDedent);
      return;
    }
    switch (lang_) {
      case Lang::cpp: out.insert(out.end(), {"int", s.name, "("}); break;
      case Lang::csharp:
      case Lang::java: out.insert(out.end(), {"static", "int", s.name, "("}); break;
      default: out.insert(out.end(), {"function", s.name, "("}); break;
    }
    params(s.params, out);
    out.insert(out.end(), {")", "{"});
    for (const auto& b : s.body) c_stmt(b, declared, out);
    out.push_back("}");
  }

 private:
  bool typed() const { return lang_ == Lang::cpp || lang_ == Lang::csharp || lang_ == Lang::java; }

  void var(const std::string& name, Tokens& out) const {
    if (lang_ == Lang::php) out.push_back("$");
    out.push_back(name);
  }

  void operand(const Expr& e, bool paren, Tokens& out) const {
    if (paren) out.push_back("(");
    expr(e, out);
    if (paren) out.push_back(")");
  }

  void params(const std::vector<std::string>& names, Tokens& out) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (i) out.push_back(",");
      if (typed()) out.push_back("int");
      var(names[i], out);
    }
  }

  void py_block(const std::vector<Stmt>& body, Tokens& out) const {
    out.insert(out.end(), {":", kNewline, kIndent});
    for (const auto& b : body) py_stmt(b, out);
    out.push_back(kDedent);
  }

  void py_stmt(const Stmt& s, Tokens& out) const {
    switch (s.kind) {
      case Stmt::Kind::assign:
        out.insert(out.end(), {s.name, "="});
        expr(s.expr, out);
        out.push_back(kNewline);
        break;
      case Stmt::Kind::print:
        out.insert(out.end(), {"print", "("});
        expr(s.expr, out);
        out.insert(out.end(), {")", kNewline});
        break;
      case Stmt::Kind::return_:
        out.push_back("return");
        expr(s.expr, out);
        out.push_back(kNewline);
        break;
      case Stmt::Kind::if_:
        out.push_back("if");
        expr(s.expr, out);
        py_block(s.body, out);
        if (s.has_else) {
          out.push_back("else");
          py_block(s.orelse, out);
        }
        break;
      case Stmt::Kind::while_:
        out.push_back("while");
        expr(s.expr, out);
        py_block(s.body, out);
        break;
      case Stmt::Kind::def: function(s, out); break;
    }
  }

  void c_block(const std::vector<Stmt>& body, std::set<std::string>& declared, Tokens& out) const {
    out.push_back("{");
    for (const auto& b : body) c_stmt(b, declared, out);
    out.push_back("}");
  }

  void c_stmt(const Stmt& s, std::set<std::string>& declared, Tokens& out) const {
    switch (s.kind) {
      case Stmt::Kind::assign:
        if (declared.insert(s.name).second) {
          if (typed()) out.push_back("int");
          if (lang_ == Lang::js) out.push_back("let");
        }
        var(s.name, out);
        out.push_back("=");
        expr(s.expr, out);
        out.push_back(";");
        break;
      case Stmt::Kind::print:
        switch (lang_) {
          case Lang::cpp:
            out.insert(out.end(), {"cout", "<<"});
            expr(s.expr, out);
            out.insert(out.end(), {"<<", "endl", ";"});
            return;
          case Lang::php:
            out.push_back("echo");
            expr(s.expr, out);
            out.push_back(";");
            return;
          case Lang::csharp: out.insert(out.end(), {"Console", ".", "WriteLine", "("}); break;
          case Lang::java: out.insert(out.end(), {"System", ".", "out", ".", "println", "("}); break;
          default: out.insert(out.end(), {"console", ".", "log", "("}); break;
        }
        expr(s.expr, out);
        out.insert(out.end(), {")", ";"});
        break;
      case Stmt::Kind::return_:
        out.push_back("return");
        expr(s.expr, out);
        out.push_back(";");
        break;
      case Stmt::Kind::if_:
        out.insert(out.end(), {"if", "("});
        expr(s.expr, out);
        out.push_back(")");
        c_block(s.body, declared, out);
        if (s.has_else) {
          out.push_back("else");
          c_block(s.orelse, declared, out);
        }
        break;
      case Stmt::Kind::while_:
        out.insert(out.end(), {"while", "("});
        expr(s.expr, out);
        out.push_back(")");
        c_block(s.body, declared, out);
        break;
      case Stmt::Kind::def: function(s, out); break;
    }
  }

  Lang lang_;
};

bool wrapped_main(Lang lang) { return lang == Lang::cpp || lang == Lang::csharp || lang == Lang::java; }

void strip_trailing_dedents(Tokens& out) {
  while (!out.empty() && out.back() == kDedent) out.pop_back();
}

}  // namespace

std::vector<std::string> render_tokens(const Program& program, Lang lang) {
  Renderer r(lang);
  Tokens out;
  std::set<std::string> declared;
  if (lang == Lang::py) {
    for (const auto& s : program.body) r.stmt(s, declared, out);
    strip_trailing_dedents(out);
    return out;
  }
  if (lang == Lang::csharp || lang == Lang::java) out.insert(out.end(), {"class", "GFG", "{"});
  if (lang == Lang::php) out.push_back("<?php");
  if (!wrapped_main(lang)) {
    for (const auto& s : program.body) {
      if (s.kind == Stmt::Kind::def) {
        r.function(s, out);
      } else {
        r.stmt(s, declared, out);
      }
    }
    if (lang == Lang::php) out.push_back("?>");
    return out;
  }
  for (const auto& s : program.body) {
    if (s.kind == Stmt::Kind::def) r.function(s, out);
  }
  if (lang == Lang::cpp) {
    out.insert(out.end(), {"int", "main", "(", ")", "{"});
  } else if (lang == Lang::csharp) {
    out.insert(out.end(), {"static", "void", "Main", "(", ")", "{"});
  } else {
    out.insert(out.end(), {"public", "static", "void", "main", "(", "String", "[", "]", "args", ")", "{"});
  }
  for (const auto& s : program.body) {
    if (s.kind != Stmt::Kind::def) r.stmt(s, declared, out);
  }
  if (lang == Lang::cpp) out.insert(out.end(), {"return", "0", ";"});
  out.push_back("}");
  if (lang != Lang::cpp) out.push_back("}");
  return out;
}

std::vector<std::string> render_statement_tokens(const Program& program, std::size_t index, Lang lang) {
  if (index >= program.body.size()) throw std::out_of_range("render_statement: index past end of program");
  Renderer r(lang);
  std::set<std::string> declared;
  for (std::size_t i = 0; i < index; ++i) {
    const Stmt& s = program.body[i];
    if (s.kind == Stmt::Kind::assign) declared.insert(s.name);
  }
  Tokens out;
  r.stmt(program.body[index], declared, out);
  if (lang == Lang::py) strip_trailing_dedents(out);
  return out;
}

std::string render(const Program& program, Lang lang) { return join_tokens(render_tokens(program, lang)); }

std::string render_statement(const Program& program, std::size_t index, Lang lang) {
  return join_tokens(render_statement_tokens(program, index, lang));
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string t; in >> t;) out.push_back(std::move(t));
  return out;
}

}  // namespace xlate::toy
