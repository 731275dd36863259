#include "xlate/toy/parse.hpp"

#include <algorithm>
#include <cctype>

#include "xlate/toy/render.hpp"

namespace xlate::toy {
namespace {

const std::vector<std::string> kCKeywords{"int",    "let",     "function", "return", "if",   "else",    "while",
                                          "static", "void",    "class",    "main",   "cout", "endl",    "echo",
                                          "Console", "System", "console", "Main", "public", "String", "args"};

bool is_identifier(const std::string& t) {
  if (t.empty() || !(std::isalpha(static_cast<unsigned char>(t[0])) || t[0] == '_')) return false;
  return std::all_of(t.begin(), t.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

bool is_integer(const std::string& t) {
  return !t.empty() && t.size() <= 18 && std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

class Parser {
 public:
  Parser(const std::vector<std::string>& tokens, Lang lang) : t_(tokens), lang_(lang) {}

  Program program() {
    Program p;
    if (lang_ == Lang::py) {
      while (!at_end()) p.body.push_back(py_stmt());
      return p;
    }
    switch (lang_) {
      case Lang::cpp: wrapped(p, false); break;
      case Lang::csharp:
      case Lang::java:
        expect("class");
        expect("GFG");
        expect("{");
        wrapped(p, true);
        expect("}");
        break;
      case Lang::php:
        expect("<?php");
        while (!at_end() && peek() != "?>") p.body.push_back(top_level());
        expect("?>");
        break;
      default:
        while (!at_end()) p.body.push_back(top_level());
        break;
    }
    if (!at_end()) fail("trailing tokens after program");
    return p;
  }

 private:
  // ---- token helpers
  bool at_end() const { return pos_ >= t_.size(); }
  const std::string& peek(std::size_t ahead = 0) const {
    static const std::string eof;
    return pos_ + ahead < t_.size() ? t_[pos_ + ahead] : eof;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(what + (at_end() ? " (end of input)" : " near '" + peek() + "'"), pos_);
  }
  bool accept(const std::string& tok) {
    if (peek() != tok || at_end()) return false;
    ++pos_;
    return true;
  }
  void expect(const std::string& tok) {
    if (!accept(tok)) fail("expected '" + tok + "'");
  }
  bool reserved(const std::string& t) const {
    const auto& kw = lang_ == Lang::py ? python_keywords() : kCKeywords;
    return std::find(kw.begin(), kw.end(), t) != kw.end();
  }
  std::string name() {
    const std::string& t = peek();
    if (at_end() || !is_identifier(t) || reserved(t)) fail("expected identifier");
    ++pos_;
    return t;
  }
  std::string variable() {
    if (lang_ == Lang::php) expect("$");
    return name();
  }

  // ---- expressions
  Expr expr() {
    Expr lhs = arith();
    static const std::vector<std::string> cmp{"<", ">", "==", "<=", ">=", "!="};
    if (std::find(cmp.begin(), cmp.end(), peek()) != cmp.end() && !at_end()) {
      std::string op = t_[pos_++];
      return Expr::binary(std::move(op), std::move(lhs), arith());
    }
    return lhs;
  }
  Expr arith() {
    Expr lhs = term();
    while (!at_end() && (peek() == "+" || peek() == "-")) {
      std::string op = t_[pos_++];
      lhs = Expr::binary(std::move(op), std::move(lhs), term());
    }
    return lhs;
  }
  Expr term() {
    Expr lhs = atom();
    while (accept("*")) lhs = Expr::binary("*", std::move(lhs), atom());
    return lhs;
  }
  Expr atom() {
    if (accept("(")) {
      Expr e = expr();
      expect(")");
      return e;
    }
    if (is_integer(peek())) return Expr::integer(std::stoll(t_[pos_++]));
    if (lang_ == Lang::php && peek() == "$") return Expr::variable(variable());
    const std::string n = name();
    if (peek() == "(") {
      ++pos_;
      std::vector<Expr> args;
      if (!accept(")")) {
        do {
          args.push_back(expr());
        } while (accept(","));
        expect(")");
      }
      return Expr::call(n, std::move(args));
    }
    if (lang_ == Lang::php) fail("variable without '$'");
    return Expr::variable(n);
  }

  std::vector<std::string> params() {
    std::vector<std::string> out;
    expect("(");
    if (accept(")")) return out;
    do {
      if (lang_ == Lang::cpp || lang_ == Lang::csharp || lang_ == Lang::java) expect("int");
      out.push_back(variable());
    } while (accept(","));
    expect(")");
    return out;
  }

  // ---- python statements
  std::vector<Stmt> py_block() {
    expect(":");
    expect(kNewline);
    expect(kIndent);
    std::vector<Stmt> body;
    while (!at_end() && peek() != kDedent) body.push_back(py_stmt());
    if (body.empty()) fail("empty block");
    accept(kDedent);
    return body;
  }

  Stmt py_stmt() {
    Stmt s;
    if (accept("def")) {
      s.kind = Stmt::Kind::def;
      s.name = name();
      s.params = params();
      s.body = py_block();
    } else if (accept("if")) {
      s.kind = Stmt::Kind::if_;
      s.expr = expr();
      s.body = py_block();
      if (accept("else")) {
        s.has_else = true;
        s.orelse = py_block();
      }
    } else if (accept("while")) {
      s.kind = Stmt::Kind::while_;
      s.expr = expr();
      s.body = py_block();
    } else {
      if (accept("print")) {
        s.kind = Stmt::Kind::print;
        expect("(");
        s.expr = expr();
        expect(")");
      } else if (accept("return")) {
        s.kind = Stmt::Kind::return_;
        s.expr = expr();
      } else {
        s.kind = Stmt::Kind::assign;
        s.name = name();
        expect("=");
        s.expr = expr();
      }
      expect(kNewline);
    }
    return s;
  }

  // ---- C-family statements
  void wrapped(Program& p, bool class_style) {
    while (true) {
      if (class_style) {
        if (lang_ == Lang::java && accept("public")) {
          expect("static");
          expect("void");
          break;
        }
        expect("static");
        if (lang_ == Lang::csharp && accept("void")) break;
        expect("int");
      } else {
        expect("int");
        if (accept("main")) break;
      }
      p.body.push_back(c_function());
    }
    if (lang_ == Lang::csharp) expect("Main");
    if (lang_ == Lang::java) expect("main");
    expect("(");
    if (lang_ == Lang::java) {
      for (const char* t : {"String", "[", "]", "args"}) expect(t);
    }
    expect(")");
    std::vector<Stmt> body = c_block();
    if (lang_ == Lang::cpp) {
      if (body.empty() || body.back().kind != Stmt::Kind::return_ || body.back().expr != Expr::integer(0)) {
        fail("main must end with 'return 0 ;'");
      }
      body.pop_back();
    }
    p.body.insert(p.body.end(), body.begin(), body.end());
  }

  Stmt c_function() {
    Stmt s;
    s.kind = Stmt::Kind::def;
    s.name = name();
    s.params = params();
    s.body = c_block();
    return s;
  }

  Stmt top_level() {
    if (accept("function")) return c_function();
    return c_stmt();
  }

  std::vector<Stmt> c_block() {
    expect("{");
    std::vector<Stmt> body;
    while (!accept("}")) {
      if (at_end()) fail("unterminated block");
      body.push_back(c_stmt());
    }
    return body;
  }

  Stmt c_stmt() {
    Stmt s;
    if (accept("if")) {
      s.kind = Stmt::Kind::if_;
      expect("(");
      s.expr = expr();
      expect(")");
      s.body = c_block();
      if (accept("else")) {
        s.has_else = true;
        s.orelse = c_block();
      }
      return s;
    }
    if (accept("while")) {
      s.kind = Stmt::Kind::while_;
      expect("(");
      s.expr = expr();
      expect(")");
      s.body = c_block();
      return s;
    }
    if (accept("return")) {
      s.kind = Stmt::Kind::return_;
      s.expr = expr();
      expect(";");
      return s;
    }
    if (print_prefix()) {
      s.kind = Stmt::Kind::print;
      s.expr = expr();
      print_suffix();
      return s;
    }
    const bool typed = lang_ == Lang::cpp || lang_ == Lang::csharp || lang_ == Lang::java;
    if (typed) accept("int");
    if (lang_ == Lang::js) accept("let");
    s.kind = Stmt::Kind::assign;
    s.name = variable();
    expect("=");
    s.expr = expr();
    expect(";");
    return s;
  }

  bool print_prefix() {
    auto seq = [&](std::initializer_list<const char*> words) {
      std::size_t i = 0;
      for (const char* w : words) {
        if (peek(i++) != w) return false;
      }
      pos_ += words.size();
      return true;
    };
    switch (lang_) {
      case Lang::cpp: return seq({"cout", "<<"});
      case Lang::php: return seq({"echo"});
      case Lang::csharp: return seq({"Console", ".", "WriteLine", "("});
      case Lang::java: return seq({"System", ".", "out", ".", "println", "("});
      default: return seq({"console", ".", "log", "("});
    }
  }

  void print_suffix() {
    if (lang_ == Lang::cpp) {
      expect("<<");
      expect("endl");
    } else if (lang_ != Lang::php) {
      expect(")");
    }
    expect(";");
  }

  const std::vector<std::string>& t_;
  Lang lang_;
  std::size_t pos_ = 0;
};

}  // namespace

const std::vector<std::string>& python_keywords() {
  static const std::vector<std::string> kw{"def", "if", "else", "while", "return", "print"};
  return kw;
}

Program parse_tokens(const std::vector<std::string>& tokens, Lang lang) { return Parser(tokens, lang).program(); }

Program parse(const std::string& text, Lang lang) { return parse_tokens(split_tokens(text), lang); }

}  // namespace xlate::toy
