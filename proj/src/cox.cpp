#include "survkan/cox.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace survkan {

std::size_t SurvivalOutcome::n_events() const {
    std::size_t n = 0;
    for (auto e : events) n += e;
    return n;
}

void SurvivalOutcome::validate() const {
    if (durations.size() != events.size())
        throw std::invalid_argument("outcome: durations/events length mismatch");
    for (double t : durations)
        if (!(t > 0)) throw std::invalid_argument("outcome: durations must be > 0");
    for (auto e : events)
        if (e > 1) throw std::invalid_argument("outcome: events must be 0/1");
}

namespace {

void require_events(std::span<const double> theta, const SurvivalOutcome& y) {
    if (theta.size() != y.size())
        throw std::invalid_argument("theta/outcome length mismatch");
    if (y.n_events() == 0)
        throw std::invalid_argument("cox loss needs at least one event");
}

// Running stable log-sum-exp accumulator.
struct Lse {
    double max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    void add(double v) {
        if (v <= max) {
            sum += std::exp(v - max);
        } else {
            sum = sum * std::exp(max - v) + 1.0;
            max = v;
        }
    }
    double value() const { return max + std::log(sum); }
};

std::vector<std::size_t> order_ascending(const SurvivalOutcome& y) {
    std::vector<std::size_t> idx(y.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (y.durations[a] != y.durations[b]) return y.durations[a] < y.durations[b];
        return a < b;
    });
    return idx;
}

// Fast-loss ordering: duration descending; inside a tie group censored rows
// first, then events, then by original index.
std::vector<std::size_t> order_fast(const SurvivalOutcome& y) {
    std::vector<std::size_t> idx(y.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (y.durations[a] != y.durations[b]) return y.durations[a] > y.durations[b];
        if (y.events[a] != y.events[b]) return y.events[a] < y.events[b];
        return a < b;
    });
    return idx;
}

}  // namespace

double cox_loss_exact(std::span<const double> theta, const SurvivalOutcome& y) {
    require_events(theta, y);
    const auto idx = order_ascending(y);
    const std::size_t n = idx.size();
    // sweep descending; add a whole tie group to the LSE before its events
    Lse lse;
    double loss = 0.0;
    std::size_t g_end = n;  // exclusive end of the current tie group
    while (g_end > 0) {
        std::size_t g_begin = g_end;
        const double t = y.durations[idx[g_end - 1]];
        while (g_begin > 0 && y.durations[idx[g_begin - 1]] == t) --g_begin;
        for (std::size_t p = g_begin; p < g_end; ++p) lse.add(theta[idx[p]]);
        for (std::size_t p = g_begin; p < g_end; ++p) {
            const std::size_t i = idx[p];
            if (y.events[i]) loss -= theta[i] - lse.value();
        }
        g_end = g_begin;
    }
    return loss;
}

double cox_loss_fast(std::span<const double> theta, const SurvivalOutcome& y) {
    require_events(theta, y);
    const auto idx = order_fast(y);
    Lse lse;
    double loss = 0.0;
    for (std::size_t i : idx) {
        lse.add(theta[i]);
        if (y.events[i]) loss -= theta[i] - lse.value();
    }
    return loss;
}

std::vector<double> cox_loss_grad(std::span<const double> theta,
                                  const SurvivalOutcome& y, bool fast) {
    require_events(theta, y);
    const std::size_t n = y.size();
    std::vector<double> grad(n, 0.0);
    // log-denominator per position in processing order, then each row j gets
    // exp(theta_j) * sum over later-or-equal events of 1/D.
    if (fast) {
        const auto idx = order_fast(y);
        std::vector<double> logD(n);
        Lse lse;
        for (std::size_t p = 0; p < n; ++p) {
            lse.add(theta[idx[p]]);
            logD[p] = lse.value();
        }
        double inv_suffix = 0.0;
        for (std::size_t p = n; p-- > 0;) {
            const std::size_t i = idx[p];
            if (y.events[i]) inv_suffix += std::exp(-logD[p]);
            grad[i] = -static_cast<double>(y.events[i]) +
                      std::exp(theta[i]) * inv_suffix;
        }
    } else {
        const auto idx = order_ascending(y);
        // suffix LSE including whole tie groups
        std::vector<double> logD(n);  // per event position
        Lse lse;
        std::size_t g_end = n;
        while (g_end > 0) {
            std::size_t g_begin = g_end;
            const double t = y.durations[idx[g_end - 1]];
            while (g_begin > 0 && y.durations[idx[g_begin - 1]] == t) --g_begin;
            for (std::size_t p = g_begin; p < g_end; ++p) lse.add(theta[idx[p]]);
            for (std::size_t p = g_begin; p < g_end; ++p) logD[p] = lse.value();
            g_end = g_begin;
        }
        // prefix (ascending) sum of 1/D over events; row j is in R(t_i) for
        // events with t_i <= t_j
        double inv_prefix = 0.0;
        std::size_t g_begin = 0;
        while (g_begin < n) {
            std::size_t ge = g_begin;
            const double t = y.durations[idx[g_begin]];
            while (ge < n && y.durations[idx[ge]] == t) ++ge;
            for (std::size_t p = g_begin; p < ge; ++p)
                if (y.events[idx[p]]) inv_prefix += std::exp(-logD[p]);
            for (std::size_t p = g_begin; p < ge; ++p) {
                const std::size_t j = idx[p];
                grad[j] = -static_cast<double>(y.events[j]) +
                          std::exp(theta[j]) * inv_prefix;
            }
            g_begin = ge;
        }
    }
    return grad;
}

// --- CoxPH --------------------------------------------------------------

namespace {

struct PartialLik {
    double loss;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;  // of the negative log likelihood
};

PartialLik coxph_objective(const Eigen::MatrixXd& X, const SurvivalOutcome& y,
                           const Eigen::VectorXd& beta, double ridge) {
    const int n = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return y.durations[a] < y.durations[b];
    });

    Eigen::VectorXd eta = X * beta;
    const double eta_max = eta.maxCoeff();

    // suffix sums over risk sets, computed descending with tie groups
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(d, d);
    double loss = 0.0;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(d, d);

    std::size_t g_end = n;
    while (g_end > 0) {
        std::size_t g_begin = g_end;
        const double t = y.durations[idx[g_end - 1]];
        while (g_begin > 0 && y.durations[idx[g_begin - 1]] == t) --g_begin;
        for (std::size_t p = g_begin; p < g_end; ++p) {
            const std::size_t i = idx[p];
            const double w = std::exp(eta(i) - eta_max);
            s0 += w;
            s1 += w * X.row(i).transpose();
            s2 += w * X.row(i).transpose() * X.row(i);
        }
        for (std::size_t p = g_begin; p < g_end; ++p) {
            const std::size_t i = idx[p];
            if (!y.events[i]) continue;
            loss -= eta(i) - (std::log(s0) + eta_max);
            const Eigen::VectorXd mu = s1 / s0;
            grad += mu - X.row(i).transpose();
            hess += s2 / s0 - mu * mu.transpose();
        }
        g_end = g_begin;
    }
    loss += 0.5 * ridge * beta.squaredNorm();
    grad += ridge * beta;
    hess.diagonal().array() += ridge;
    return {loss, grad, hess};
}

}  // namespace

CoxPHModel coxph_fit(std::span<const double> X, int n_rows, int n_cols,
                     const SurvivalOutcome& y, double ridge) {
    if (static_cast<std::size_t>(n_rows) * n_cols != X.size())
        throw std::invalid_argument("coxph_fit: X size mismatch");
    if (y.n_events() == 0)
        throw std::invalid_argument("coxph_fit: no events");
    Eigen::MatrixXd Xm(n_rows, n_cols);
    for (int r = 0; r < n_rows; ++r)
        for (int c = 0; c < n_cols; ++c) Xm(r, c) = X[static_cast<std::size_t>(r) * n_cols + c];

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(n_cols);
    CoxPHModel model;
    model.beta.assign(n_cols, 0.0);

    PartialLik cur = coxph_objective(Xm, y, beta, ridge);
    for (int it = 0; it < 100; ++it) {
        model.iterations = it + 1;
        model.final_grad_norm = cur.grad.norm();
        if (model.final_grad_norm < 1e-8) {
            model.converged = true;
            break;
        }
        Eigen::VectorXd step = cur.hess.ldlt().solve(cur.grad);
        if (!step.allFinite()) break;
        double scale = 1.0;
        bool accepted = false;
        for (int h = 0; h < 30; ++h) {
            Eigen::VectorXd cand = beta - scale * step;
            PartialLik next = coxph_objective(Xm, y, cand, ridge);
            if (std::isfinite(next.loss) && next.loss <= cur.loss + 1e-12) {
                beta = cand;
                cur = std::move(next);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) break;
    }
    model.final_grad_norm = cur.grad.norm();
    if (model.final_grad_norm < 1e-6) model.converged = true;
    for (int c = 0; c < n_cols; ++c) model.beta[c] = beta(c);
    return model;
}

CoxPHModel coxph_subgroup(std::span<const double> x_col, const SurvivalOutcome& y) {
    return coxph_fit(x_col, static_cast<int>(x_col.size()), 1, y);
}

std::vector<double> coxph_predict(const CoxPHModel& m, std::span<const double> X,
                                  int n_rows) {
    const int d = static_cast<int>(m.beta.size());
    std::vector<double> theta(n_rows, 0.0);
    for (int r = 0; r < n_rows; ++r)
        for (int c = 0; c < d; ++c)
            theta[r] += m.beta[c] * X[static_cast<std::size_t>(r) * d + c];
    return theta;
}

// --- Breslow ------------------------------------------------------------

double BaselineHazard::at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0.0;
    return cumhaz[static_cast<std::size_t>(it - times.begin()) - 1];
}

double BaselineHazard::survival(double t, double theta) const {
    return std::exp(-at(t) * std::exp(theta));
}

BaselineHazard breslow_baseline(std::span<const double> theta,
                                const SurvivalOutcome& y) {
    const std::size_t n = y.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return y.durations[a] < y.durations[b];
    });
    // suffix sum of exp(theta)
    std::vector<double> suffix(n + 1, 0.0);
    for (std::size_t p = n; p-- > 0;)
        suffix[p] = suffix[p + 1] + std::exp(theta[idx[p]]);

    BaselineHazard h;
    double cum = 0.0;
    std::size_t p = 0;
    while (p < n) {
        const double t = y.durations[idx[p]];
        std::size_t ge = p;
        int deaths = 0;
        while (ge < n && y.durations[idx[ge]] == t) {
            deaths += y.events[idx[ge]];
            ++ge;
        }
        if (deaths > 0) {
            cum += deaths / suffix[p];
            h.times.push_back(t);
            h.cumhaz.push_back(cum);
        }
        p = ge;
    }
    return h;
}

// --- Concordance --------------------------------------------------------

double concordance_index(std::span<const double> theta, const SurvivalOutcome& y) {
    const std::size_t n = y.size();
    if (theta.size() != n)
        throw std::invalid_argument("concordance_index: length mismatch");
    // sort by duration ascending so comparable pairs are (earlier event, later)
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return y.durations[a] < y.durations[b];
    });
    double comparable = 0.0, score = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const std::size_t i = idx[p];
        if (!y.events[i]) continue;
        for (std::size_t q = p + 1; q < n; ++q) {
            const std::size_t j = idx[q];
            if (y.durations[j] <= y.durations[i]) continue;  // tie: not comparable
            comparable += 1.0;
            if (theta[i] > theta[j])
                score += 1.0;
            else if (theta[i] == theta[j])
                score += 0.5;
        }
    }
    if (comparable == 0.0)
        throw UndefinedMetric("concordance: no comparable pairs");
    return score / comparable;
}

EvalReport bootstrap_ci(std::span<const double> theta, const SurvivalOutcome& y,
                        int n_bootstrap, std::uint64_t seed) {
    if (n_bootstrap < 1)
        throw std::invalid_argument("bootstrap_ci: n_bootstrap must be >= 1");
    EvalReport rep;
    rep.c_index = concordance_index(theta, y);
    rep.n_bootstrap = n_bootstrap;
    rep.seed = seed;

    const std::size_t n = y.size();
    std::vector<double> cs;
    cs.reserve(n_bootstrap);
    int attempts = 0;
    const int cap = 10 * n_bootstrap;
    std::uint64_t stream = 0;
    std::vector<double> th(n);
    SurvivalOutcome by;
    by.durations.resize(n);
    by.events.resize(n);
    while (static_cast<int>(cs.size()) < n_bootstrap) {
        if (attempts >= cap)
            throw UndefinedMetric("bootstrap_ci: redraw cap exceeded");
        ++attempts;
        // per-resample stream derived from (seed, resample index)
        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + stream);
        ++stream;
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t r = pick(rng);
            th[s] = theta[r];
            by.durations[s] = y.durations[r];
            by.events[s] = y.events[r];
        }
        try {
            cs.push_back(concordance_index(th, by));
        } catch (const UndefinedMetric&) {
            ++rep.redraws;
        }
    }
    std::sort(cs.begin(), cs.end());
    const auto pct = [&](double q) {
        const double pos = q * (cs.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, cs.size() - 1);
        const double fr = pos - lo;
        return cs[lo] * (1 - fr) + cs[hi] * fr;
    };
    rep.ci_low = pct(0.025);
    rep.ci_high = pct(0.975);
    return rep;
}

}  // namespace survkan
