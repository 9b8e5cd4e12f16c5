#pragma once

// Symbolic extraction: operator library, affine fitting, conversion of a
// trained network into a readable hazard formula, and term importance.

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace survkan {

struct Network;
struct ForwardCache;
struct Dataset;

enum class SymbolicKind { linear, op, discrete_map };

struct SymbolicEdge {
    SymbolicKind kind = SymbolicKind::linear;
    std::string op_name;     // for kind == op
    double a = 1.0, b = 0.0; // inner affine: f(a*x + b)
    double c = 1.0, d = 0.0; // outer affine: c*f(.) + d  (linear uses a,b only)
    std::vector<double> table;  // for discrete_map: value per category code
    double r2 = 0.0;
    bool low_fidelity = false;  // best fit had R^2 < 0.9

    double eval(double x) const;
    double deriv(double x) const;  // d/dx (0 for discrete maps)
};

struct Operator {
    std::string name;
    std::function<double(double)> f;
    std::function<double(double)> df;
    // Natural-domain predicate on the inner argument a*x+b.
    std::function<bool(double)> domain;
    bool linear_special = false;  // fitted via fit_linear's 2-parameter path
};

// The registered operator set (22 entries, linear included).
const std::vector<Operator>& operator_library();
const Operator& find_operator(const std::string& name);

struct LinearFit {
    double a = 0.0, b = 0.0, r2 = 0.0;
};
LinearFit fit_linear(std::span<const double> x, std::span<const double> y);

struct AffineFit {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0, r2 = 0.0;
};
// Iterative grid search for (a,b), closed-form least squares for (c,d).
// Throws UnfittableOperator if every grid cell violates the op's domain.
AffineFit fit_affine(const std::string& op_name, std::span<const double> x,
                     std::span<const double> y);

struct UnfittableOperator : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fits a SymbolicEdge to every active edge: linear first (accept R^2 > 0.99),
// otherwise the best library operator; categorical layer-0 edges become
// discrete maps of per-code mean post-activation.
void auto_symbolic(Network& net, const ForwardCache& cache);

// Adam on the affine parameters / map values against the fast Cox loss;
// operator identities stay fixed. Restores the input parameters on divergence.
struct FinetuneResult {
    bool diverged = false;
    double loss_before = 0.0;
    double loss_after = 0.0;
};
FinetuneResult finetune_affine(Network& net, const Dataset& data, int steps = 50,
                               double lr = 0.01);

// Forward pass through the symbolic edges only (every active edge must have
// a SymbolicEdge).
std::vector<double> symbolic_forward(const Network& net,
                                     std::span<const double> X, int n_rows);

// --- Formula -----------------------------------------------------------

struct ExprNode {
    enum class Kind { constant, var, sum, scaled_op, discrete };
    Kind kind = Kind::constant;
    double value = 0.0;              // constant
    int var_index = -1;              // var / discrete input column
    std::string op_name;             // scaled_op
    double a = 1, b = 0, c = 1, d = 0;  // scaled_op: c*f(a*child+b)+d
    std::vector<double> table;       // discrete
    std::vector<std::unique_ptr<ExprNode>> children;

    double eval(std::span<const double> row) const;
    std::unique_ptr<ExprNode> clone() const;
};

struct FormulaTerm {
    std::unique_ptr<ExprNode> expr;
    double importance = -1.0;  // sigma, filled by term_importance
};

struct Formula {
    std::vector<FormulaTerm> terms;  // top-level additive terms
    std::vector<std::string> feature_names;

    double eval(std::span<const double> row) const;
};

// Renders the symbolic network as a formula; linear non-input-layer edges are
// distributed so single-covariate paths become isolation terms.
Formula render_formula(const Network& net,
                       const std::vector<std::string>& feature_names);
std::string formula_text(const Formula& f, int precision = 3);
std::string formula_json(const Formula& f);

// Outlier-robust standard deviation of each top-level term over X
// (values outside [Q1 - 3 IQR, Q3 + 3 IQR] are dropped). Sorts terms by
// descending sigma and fills FormulaTerm::importance.
void term_importance(Formula& f, std::span<const double> X, int n_rows);

// One CSV per active edge (columns x,y) named layer{l}_in{i}_out{j}.csv.
void export_edge_samples(const Network& net, const ForwardCache& cache,
                         const std::string& dir);

}  // namespace survkan
