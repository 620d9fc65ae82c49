#pragma once

#include <memory>
#include <stdexcept>
#include <string>

namespace thick {

struct ExprError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tiny expression grammar over (x, y, t): constants, + - * /, parentheses,
/// unary minus, and sin, cos, exp, min, max.
class Expr {
 public:
  static Expr parse(const std::string& text);
  double operator()(double x, double y, double t) const;
  const std::string& text() const { return text_; }

  struct Node;

 private:
  std::shared_ptr<const Node> root_;
  std::string text_;
};

}  // namespace thick
