#pragma once

// Survival math: exact and fast Cox partial-likelihood losses with
// gradients, a Newton-Raphson CoxPH baseline, the Breslow baseline hazard,
// the concordance index, and bootstrap confidence intervals.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace survkan {

struct SurvivalOutcome {
    std::vector<double> durations;  // > 0
    std::vector<std::uint8_t> events;  // 1 = event, 0 = censored

    std::size_t size() const { return durations.size(); }
    std::size_t n_events() const;
    void validate() const;  // throws on length mismatch / nonpositive times
};

struct UndefinedMetric : std::runtime_error {
    using std::runtime_error::runtime_error;
};

double cox_loss_exact(std::span<const double> theta, const SurvivalOutcome& y);

// Sorts by duration descending (censored before events inside a tie group)
// and uses a running log-sum-exp over the prefix as the risk-set
// denominator. Equals the exact loss whenever durations are distinct.
double cox_loss_fast(std::span<const double> theta, const SurvivalOutcome& y);

std::vector<double> cox_loss_grad(std::span<const double> theta,
                                  const SurvivalOutcome& y, bool fast);

struct CoxPHModel {
    std::vector<double> beta;
    std::vector<std::string> feature_names;
    int iterations = 0;
    double final_grad_norm = 0.0;
    bool converged = false;
};

// Newton-Raphson with step-halving on the ridge-stabilized negative log
// partial likelihood. Non-finite steps return the best iterate with
// converged = false.
CoxPHModel coxph_fit(std::span<const double> X, int n_rows, int n_cols,
                     const SurvivalOutcome& y, double ridge = 1e-6);

// One-covariate convenience wrapper (interaction verification on subsets).
CoxPHModel coxph_subgroup(std::span<const double> x_col, const SurvivalOutcome& y);

std::vector<double> coxph_predict(const CoxPHModel& m, std::span<const double> X,
                                  int n_rows);

// Cumulative baseline hazard H0 as a right-continuous step function.
struct BaselineHazard {
    std::vector<double> times;   // distinct event times, ascending
    std::vector<double> cumhaz;  // H0 at each time
    double at(double t) const;
    double survival(double t, double theta) const;  // exp(-H0(t) e^theta)
};

BaselineHazard breslow_baseline(std::span<const double> theta,
                                const SurvivalOutcome& y);

// Pair (i,j) is comparable iff t_i < t_j and delta_i = 1; concordant when
// theta_i > theta_j; theta ties count one half. Throws UndefinedMetric when
// no pair is comparable.
double concordance_index(std::span<const double> theta, const SurvivalOutcome& y);

struct EvalReport {
    double c_index = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int n_bootstrap = 0;
    std::uint64_t seed = 0;
    int redraws = 0;  // resamples redrawn for having no comparable pair
};

EvalReport bootstrap_ci(std::span<const double> theta, const SurvivalOutcome& y,
                        int n_bootstrap, std::uint64_t seed);

}  // namespace survkan
