#include "thickflow/expr.hpp"

#include <cctype>
#include <cmath>
#include <functional>
#include <vector>

namespace thick {

struct Expr::Node {
  enum Kind { Const, VarX, VarY, VarT, Add, Sub, Mul, Div, Neg, Sin, Cos, Exp, Min, Max } kind;
  double value = 0.0;
  std::shared_ptr<const Node> a, b;

  double eval(double x, double y, double t) const {
    switch (kind) {
      case Const: return value;
      case VarX: return x;
      case VarY: return y;
      case VarT: return t;
      case Add: return a->eval(x, y, t) + b->eval(x, y, t);
      case Sub: return a->eval(x, y, t) - b->eval(x, y, t);
      case Mul: return a->eval(x, y, t) * b->eval(x, y, t);
      case Div: return a->eval(x, y, t) / b->eval(x, y, t);
      case Neg: return -a->eval(x, y, t);
      case Sin: return std::sin(a->eval(x, y, t));
      case Cos: return std::cos(a->eval(x, y, t));
      case Exp: return std::exp(a->eval(x, y, t));
      case Min: return std::min(a->eval(x, y, t), b->eval(x, y, t));
      case Max: return std::max(a->eval(x, y, t), b->eval(x, y, t));
    }
    return 0.0;
  }
};

namespace {

using NodePtr = std::shared_ptr<const Expr::Node>;

class Parser {
 public:
  explicit Parser(const std::string& s) : s_(s) {}

  NodePtr parse() {
    NodePtr e = expr();
    skip_ws();
    if (pos_ != s_.size()) fail("trailing input");
    return e;
  }

 private:
  const std::string& s_;
  size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& what) {
    throw ExprError("expression parse error at offset " + std::to_string(pos_) + ": " + what +
                    " in \"" + s_ + "\"");
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  static NodePtr make(Expr::Node::Kind k, NodePtr a = nullptr, NodePtr b = nullptr,
                      double v = 0.0) {
    auto n = std::make_shared<Expr::Node>();
    n->kind = k;
    n->value = v;
    n->a = std::move(a);
    n->b = std::move(b);
    return n;
  }

  NodePtr expr() {
    NodePtr lhs = term();
    for (;;) {
      if (eat('+'))
        lhs = make(Expr::Node::Add, lhs, term());
      else if (eat('-'))
        lhs = make(Expr::Node::Sub, lhs, term());
      else
        return lhs;
    }
  }

  NodePtr term() {
    NodePtr lhs = factor();
    for (;;) {
      if (eat('*'))
        lhs = make(Expr::Node::Mul, lhs, factor());
      else if (eat('/'))
        lhs = make(Expr::Node::Div, lhs, factor());
      else
        return lhs;
    }
  }

  NodePtr factor() {
    skip_ws();
    if (eat('-')) return make(Expr::Node::Neg, factor());
    if (eat('(')) {
      NodePtr e = expr();
      if (!eat(')')) fail("expected ')'");
      return e;
    }
    if (pos_ >= s_.size()) fail("unexpected end of input");
    const char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      size_t used = 0;
      double v = std::stod(s_.substr(pos_), &used);
      pos_ += used;
      return make(Expr::Node::Const, nullptr, nullptr, v);
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      size_t start = pos_;
      while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      const std::string name = s_.substr(start, pos_ - start);
      if (name == "x") return make(Expr::Node::VarX);
      if (name == "y") return make(Expr::Node::VarY);
      if (name == "t") return make(Expr::Node::VarT);
      if (name == "pi") return make(Expr::Node::Const, nullptr, nullptr, std::acos(-1.0));
      auto unary = [&](Expr::Node::Kind k) {
        if (!eat('(')) fail("expected '(' after " + name);
        NodePtr a = expr();
        if (!eat(')')) fail("expected ')'");
        return make(k, a);
      };
      auto binary = [&](Expr::Node::Kind k) {
        if (!eat('(')) fail("expected '(' after " + name);
        NodePtr a = expr();
        if (!eat(',')) fail("expected ','");
        NodePtr b = expr();
        if (!eat(')')) fail("expected ')'");
        return make(k, a, b);
      };
      if (name == "sin") return unary(Expr::Node::Sin);
      if (name == "cos") return unary(Expr::Node::Cos);
      if (name == "exp") return unary(Expr::Node::Exp);
      if (name == "min") return binary(Expr::Node::Min);
      if (name == "max") return binary(Expr::Node::Max);
      fail("unknown identifier '" + name + "'");
    }
    fail(std::string("unexpected character '") + c + "'");
  }
};

}  // namespace

Expr Expr::parse(const std::string& text) {
  Expr e;
  e.root_ = Parser(text).parse();
  e.text_ = text;
  return e;
}

double Expr::operator()(double x, double y, double t) const { return root_->eval(x, y, t); }

}  // namespace thick
