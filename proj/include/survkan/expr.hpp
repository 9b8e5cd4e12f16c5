#pragma once

// Tiny arithmetic expression parser for custom log-partial-hazard formulas,
// e.g. "tanh(5*x1) + sin(2*pi*x2) + x3^2". Variables are x1..xn (1-based).

#include <memory>
#include <span>
#include <stdexcept>
#include <string>

namespace survkan {

struct ExprError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

class CompiledExpr {
  public:
    explicit CompiledExpr(const std::string& text);  // throws ExprError
    CompiledExpr(CompiledExpr&&) noexcept;
    CompiledExpr& operator=(CompiledExpr&&) noexcept;
    ~CompiledExpr();

    // row holds x1..xn at indices 0..n-1
    double eval(std::span<const double> row) const;
    int max_var() const;  // highest variable index referenced (1-based)
    const std::string& text() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace survkan
