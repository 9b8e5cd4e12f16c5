#include "survkan/symbolic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "survkan/cox.hpp"
#include "survkan/data.hpp"
#include "survkan/kernels.hpp"
#include "survkan/network.hpp"
#include "survkan/train.hpp"

namespace survkan {

using nlohmann::json;

// --- operator library ---------------------------------------------------

namespace {

double sq(double x) { return x * x; }
constexpr double kEps = 1e-9;

std::vector<Operator> build_library() {
    const auto always = [](double) { return true; };
    std::vector<Operator> lib;
    lib.push_back({"linear", [](double x) { return x; }, [](double) { return 1.0; },
                   always, true});
    lib.push_back({"sin", [](double x) { return std::sin(x); },
                   [](double x) { return std::cos(x); }, always, false});
    lib.push_back({"tan", [](double x) { return std::tan(x); },
                   [](double x) { return 1.0 / sq(std::cos(x)); },
                   [](double x) { return std::fabs(std::cos(x)) > 1e-6; }, false});
    lib.push_back({"arctan", [](double x) { return std::atan(x); },
                   [](double x) { return 1.0 / (1.0 + x * x); }, always, false});
    lib.push_back({"cosh", [](double x) { return std::cosh(x); },
                   [](double x) { return std::sinh(x); },
                   [](double x) { return std::fabs(x) < 700.0; }, false});
    lib.push_back({"exp", [](double x) { return std::exp(x); },
                   [](double x) { return std::exp(x); },
                   [](double x) { return x < 700.0; }, false});
    lib.push_back({"gauss", [](double x) { return std::exp(-x * x); },
                   [](double x) { return -2.0 * x * std::exp(-x * x); }, always,
                   false});
    lib.push_back({"log", [](double x) { return std::log(x); },
                   [](double x) { return 1.0 / x; },
                   [](double x) { return x > kEps; }, false});
    lib.push_back({"tanh", [](double x) { return std::tanh(x); },
                   [](double x) { return 1.0 - sq(std::tanh(x)); }, always, false});
    lib.push_back({"arctanh", [](double x) { return std::atanh(x); },
                   [](double x) { return 1.0 / (1.0 - x * x); },
                   [](double x) { return std::fabs(x) < 1.0 - kEps; }, false});
    lib.push_back({"sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                   [](double x) {
                       const double s = 1.0 / (1.0 + std::exp(-x));
                       return s * (1.0 - s);
                   },
                   always, false});
    lib.push_back({"sgn",
                   [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); },
                   [](double) { return 0.0; }, always, false});
    lib.push_back({"abs", [](double x) { return std::fabs(x); },
                   [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); },
                   always, false});
    lib.push_back({"sqrt", [](double x) { return std::sqrt(x); },
                   [](double x) { return 0.5 / std::sqrt(x); },
                   [](double x) { return x >= 0.0; }, false});
    lib.push_back({"invsqrt", [](double x) { return 1.0 / std::sqrt(x); },
                   [](double x) { return -0.5 / (x * std::sqrt(x)); },
                   [](double x) { return x > kEps; }, false});
    lib.push_back({"x", [](double x) { return x; }, [](double) { return 1.0; },
                   always, false});
    lib.push_back({"x^2", sq, [](double x) { return 2.0 * x; }, always, false});
    lib.push_back({"x^3", [](double x) { return x * x * x; },
                   [](double x) { return 3.0 * x * x; }, always, false});
    lib.push_back({"x^4", [](double x) { return sq(sq(x)); },
                   [](double x) { return 4.0 * x * x * x; }, always, false});
    lib.push_back({"1/x", [](double x) { return 1.0 / x; },
                   [](double x) { return -1.0 / sq(x); },
                   [](double x) { return std::fabs(x) > kEps; }, false});
    lib.push_back({"1/x^2", [](double x) { return 1.0 / sq(x); },
                   [](double x) { return -2.0 / (x * sq(x)); },
                   [](double x) { return std::fabs(x) > kEps; }, false});
    lib.push_back({"1/x^4", [](double x) { return 1.0 / sq(sq(x)); },
                   [](double x) { return -4.0 / (sq(sq(x)) * x); },
                   [](double x) { return std::fabs(x) > kEps; }, false});
    return lib;
}

}  // namespace

const std::vector<Operator>& operator_library() {
    static const std::vector<Operator> lib = build_library();
    return lib;
}

const Operator& find_operator(const std::string& name) {
    for (const auto& op : operator_library())
        if (op.name == name) return op;
    throw std::invalid_argument("unknown operator: " + name);
}

// --- SymbolicEdge -------------------------------------------------------

double SymbolicEdge::eval(double x) const {
    switch (kind) {
        case SymbolicKind::linear:
            return a * x + b;
        case SymbolicKind::op:
            return c * find_operator(op_name).f(a * x + b) + d;
        case SymbolicKind::discrete_map: {
            const int code = static_cast<int>(std::lround(x));
            if (code < 0 || code >= static_cast<int>(table.size())) return 0.0;
            return table[code];
        }
    }
    return 0.0;
}

double SymbolicEdge::deriv(double x) const {
    switch (kind) {
        case SymbolicKind::linear:
            return a;
        case SymbolicKind::op:
            return c * a * find_operator(op_name).df(a * x + b);
        case SymbolicKind::discrete_map:
            return 0.0;
    }
    return 0.0;
}

// --- fitting ------------------------------------------------------------

LinearFit fit_linear(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("fit_linear: need >= 2 samples");
    const std::size_t n = x.size();
    bool distinct = false;
    for (std::size_t i = 1; i < n; ++i)
        if (x[i] != x[0]) distinct = true;
    if (!distinct) throw std::invalid_argument("fit_linear: need >= 2 distinct x");

    double sx = 0, sxx = 0, sxy = 0;
    kernels::ls_moments(x.data(), y.data(), n, &sx, &sxx, &sxy);
    double sy = 0;
    for (double v : y) sy += v;
    double syy = 0;
    for (double v : y) syy += v * v;

    const double nn = static_cast<double>(n);
    const double sstot = syy - sy * sy / nn;
    LinearFit fit;
    if (sstot <= 1e-12 * std::max(1.0, syy)) {  // constant y
        fit.a = 0.0;
        fit.b = sy / nn;
        fit.r2 = 1.0;
        return fit;
    }
    const double var = nn * sxx - sx * sx;
    fit.a = (nn * sxy - sx * sy) / var;
    fit.b = (sy - fit.a * sx) / nn;
    double ssres = 0.0;
    for (std::size_t i = 0; i < n; ++i) ssres += sq(y[i] - fit.a * x[i] - fit.b);
    fit.r2 = 1.0 - ssres / sstot;
    return fit;
}

namespace {

// Grid-search cost is dominated by operator evaluations, so (a,b) cells are
// scored on a deterministic subsample.
constexpr std::size_t kFitSubsample = 512;

struct FitSamples {
    std::vector<double> x, y;
};

FitSamples subsample(std::span<const double> x, std::span<const double> y,
                     std::size_t cap) {
    FitSamples s;
    const std::size_t n = x.size();
    if (n <= cap) {
        s.x.assign(x.begin(), x.end());
        s.y.assign(y.begin(), y.end());
        return s;
    }
    for (std::size_t i = 0; i < cap; ++i) {
        const std::size_t p = i * (n - 1) / (cap - 1);
        s.x.push_back(x[p]);
        s.y.push_back(y[p]);
    }
    return s;
}

}  // namespace

AffineFit fit_affine(const std::string& op_name, std::span<const double> x,
                     std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 4)
        throw std::invalid_argument("fit_affine: need >= 4 samples");
    const Operator& op = find_operator(op_name);
    const FitSamples s = subsample(x, y, kFitSubsample);
    const std::size_t n = s.x.size();
    const double nn = static_cast<double>(n);

    double sy = 0, syy = 0;
    for (double v : s.y) {
        sy += v;
        syy += v * v;
    }
    const double sstot = syy - sy * sy / nn;

    constexpr int kGrid = 101;
    double ca = 0.0, cb = 0.0, half = 10.0;
    AffineFit best;
    best.r2 = -std::numeric_limits<double>::infinity();
    std::vector<double> f(n);

    for (int round = 0; round < 3; ++round) {
        bool any_valid = false;
        for (int ia = 0; ia < kGrid; ++ia) {
            const double a = ca - half + 2.0 * half * ia / (kGrid - 1);
            for (int ib = 0; ib < kGrid; ++ib) {
                const double b = cb - half + 2.0 * half * ib / (kGrid - 1);
                bool ok = true;
                for (std::size_t i = 0; i < n; ++i) {
                    const double u = a * s.x[i] + b;
                    if (!op.domain(u)) {
                        ok = false;
                        break;
                    }
                    f[i] = op.f(u);
                    if (!std::isfinite(f[i]) || std::fabs(f[i]) > 1e12) {
                        ok = false;
                        break;
                    }
                }
                if (!ok) continue;
                any_valid = true;
                double sf = 0, sff = 0, sfy = 0;
                kernels::ls_moments(f.data(), s.y.data(), n, &sf, &sff, &sfy);
                const double var = nn * sff - sf * sf;
                double c, d;
                if (var <= 1e-12 * nn * std::max(1.0, sff)) {
                    c = 0.0;
                    d = sy / nn;
                } else {
                    c = (nn * sfy - sf * sy) / var;
                    d = (sy - c * sf) / nn;
                }
                // residuals accumulated directly: the moment identity
                // cancels catastrophically near-perfect fits
                double ssres = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double r = s.y[i] - c * f[i] - d;
                    ssres += r * r;
                }
                const double r2 = sstot <= 0.0 ? 1.0 : 1.0 - ssres / sstot;
                if (r2 > best.r2) best = {a, b, c, d, r2};
            }
        }
        if (!any_valid && round == 0)
            throw UnfittableOperator(op_name + ": no admissible (a,b) grid cell");
        if (!any_valid) break;
        ca = best.a;
        cb = best.b;
        half /= 5.0;
    }
    best.r2 = std::min(best.r2, 1.0);
    return best;
}

// --- auto_symbolic ------------------------------------------------------

void auto_symbolic(Network& net, const ForwardCache& cache) {
    for (int l = 0; l < net.n_layers(); ++l) {
        const int n_in = net.shape[l];
        for (int j = 0; j < net.shape[l + 1]; ++j) {
            for (int i = 0; i < n_in; ++i) {
                Activation& act = net.edge(l, j, i);
                if (!act.active) continue;
                const auto x = cache.node_column(l, i);
                const auto& y = cache.edge_post[l][j * n_in + i];

                SymbolicEdge edge;
                if (l == 0 && net.input_meta[i].categorical) {
                    const int ncat = std::max(net.input_meta[i].n_categories, 1);
                    std::vector<double> sum(ncat, 0.0);
                    std::vector<int> count(ncat, 0);
                    for (std::size_t sidx = 0; sidx < y.size(); ++sidx) {
                        const int code = static_cast<int>(std::lround(x[sidx]));
                        if (code >= 0 && code < ncat) {
                            sum[code] += y[sidx];
                            ++count[code];
                        }
                    }
                    edge.kind = SymbolicKind::discrete_map;
                    edge.table.resize(ncat);
                    for (int cc = 0; cc < ncat; ++cc)
                        edge.table[cc] = count[cc] ? sum[cc] / count[cc] : 0.0;
                    // exact on every seen code, so R^2 against per-code means
                    double sy = 0, syy = 0, ssres = 0;
                    for (std::size_t sidx = 0; sidx < y.size(); ++sidx) {
                        sy += y[sidx];
                        syy += y[sidx] * y[sidx];
                        ssres += sq(y[sidx] - edge.eval(x[sidx]));
                    }
                    const double sstot = syy - sy * sy / y.size();
                    edge.r2 = sstot <= 0 ? 1.0 : 1.0 - ssres / sstot;
                } else {
                    const LinearFit lin = fit_linear(x, y);
                    if (lin.r2 > 0.99) {
                        edge.kind = SymbolicKind::linear;
                        edge.a = lin.a;
                        edge.b = lin.b;
                        edge.r2 = lin.r2;
                    } else {
                        // complexity-ranked candidates; the winner is the
                        // simplest op whose residual is within 20% of the
                        // best residual (cosh/sigmoid/sin with extreme inner
                        // affines mimic x^2/tanh/parabolas almost exactly)
                        static const char* order[] = {
                            "x",    "x^2",     "x^3", "x^4",  "abs",  "sqrt",
                            "invsqrt", "1/x", "1/x^2", "1/x^4", "exp", "log",
                            "gauss", "sin",   "tan", "arctan", "tanh",
                            "arctanh", "sigmoid", "cosh", "sgn"};
                        std::vector<std::pair<const char*, AffineFit>> fits;
                        double best_r2 = -std::numeric_limits<double>::infinity();
                        for (const char* name : order) {
                            try {
                                const AffineFit fit = fit_affine(name, x, y);
                                fits.emplace_back(name, fit);
                                best_r2 = std::max(best_r2, fit.r2);
                            } catch (const UnfittableOperator&) {
                            }
                        }
                        if (fits.empty()) {  // everything unfittable
                            edge.kind = SymbolicKind::linear;
                            edge.a = lin.a;
                            edge.b = lin.b;
                            edge.r2 = lin.r2;
                        } else {
                            const double allowed =
                                1.5 * std::max(1.0 - best_r2, 1e-12);
                            for (const auto& [name, fit] : fits) {
                                if (1.0 - fit.r2 <= allowed) {
                                    edge.kind = SymbolicKind::op;
                                    edge.op_name = name;
                                    edge.a = fit.a;
                                    edge.b = fit.b;
                                    edge.c = fit.c;
                                    edge.d = fit.d;
                                    edge.r2 = fit.r2;
                                    break;
                                }
                            }
                        }
                    }
                }
                edge.low_fidelity = edge.r2 < 0.9;
                act.symbolic = std::make_unique<SymbolicEdge>(std::move(edge));
            }
        }
    }
}

// --- symbolic forward / finetune ----------------------------------------

namespace {

struct SymCache {
    int n_rows = 0;
    std::vector<std::vector<double>> nodes;  // column-major per layer
};

SymCache sym_forward_cache(const Network& net, std::span<const double> X,
                           int n_rows) {
    SymCache cache;
    cache.n_rows = n_rows;
    cache.nodes.resize(net.shape.size());
    const int n0 = net.shape[0];
    cache.nodes[0].resize(static_cast<std::size_t>(n_rows) * n0);
    for (int s = 0; s < n_rows; ++s)
        for (int i = 0; i < n0; ++i)
            cache.nodes[0][static_cast<std::size_t>(i) * n_rows + s] =
                X[static_cast<std::size_t>(s) * n0 + i];
    for (int l = 0; l < net.n_layers(); ++l) {
        const int n_in = net.shape[l], n_out = net.shape[l + 1];
        cache.nodes[l + 1].assign(static_cast<std::size_t>(n_rows) * n_out, 0.0);
        for (int j = 0; j < n_out; ++j) {
            double* out = cache.nodes[l + 1].data() + static_cast<std::size_t>(j) * n_rows;
            for (int i = 0; i < n_in; ++i) {
                const Activation& a = net.edge(l, j, i);
                if (!a.active) continue;
                if (!a.symbolic)
                    throw std::logic_error("symbolic_forward: non-symbolic edge");
                const double* in = cache.nodes[l].data() + static_cast<std::size_t>(i) * n_rows;
                for (int s = 0; s < n_rows; ++s) out[s] += a.symbolic->eval(in[s]);
            }
        }
    }
    return cache;
}

std::vector<double> flatten_sym_params(const Network& net) {
    std::vector<double> flat;
    for (const auto& layer : net.layers)
        for (const auto& a : layer) {
            if (!a.active || !a.symbolic) continue;
            const auto& s = *a.symbolic;
            switch (s.kind) {
                case SymbolicKind::linear:
                    flat.push_back(s.a);
                    flat.push_back(s.b);
                    break;
                case SymbolicKind::op:
                    flat.push_back(s.a);
                    flat.push_back(s.b);
                    flat.push_back(s.c);
                    flat.push_back(s.d);
                    break;
                case SymbolicKind::discrete_map:
                    flat.insert(flat.end(), s.table.begin(), s.table.end());
                    break;
            }
        }
    return flat;
}

void unflatten_sym_params(Network& net, std::span<const double> flat) {
    std::size_t p = 0;
    for (auto& layer : net.layers)
        for (auto& a : layer) {
            if (!a.active || !a.symbolic) continue;
            auto& s = *a.symbolic;
            switch (s.kind) {
                case SymbolicKind::linear:
                    s.a = flat[p++];
                    s.b = flat[p++];
                    break;
                case SymbolicKind::op:
                    s.a = flat[p++];
                    s.b = flat[p++];
                    s.c = flat[p++];
                    s.d = flat[p++];
                    break;
                case SymbolicKind::discrete_map:
                    for (auto& v : s.table) v = flat[p++];
                    break;
            }
        }
}

// Gradient of the loss w.r.t. the symbolic parameters via reverse pass.
std::vector<double> sym_param_grads(const Network& net, const SymCache& cache,
                                    std::span<const double> dtheta) {
    const int n_rows = cache.n_rows;
    std::vector<std::vector<double>> dnode(net.shape.size());
    dnode.back().assign(dtheta.begin(), dtheta.end());
    // gradient slots mirror flatten_sym_params order
    std::vector<double> grads(flatten_sym_params(net).size(), 0.0);

    // precompute flat offsets per edge
    std::vector<std::vector<std::size_t>> offsets(net.layers.size());
    {
        std::size_t p = 0;
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            offsets[l].assign(net.layers[l].size(), 0);
            for (std::size_t e = 0; e < net.layers[l].size(); ++e) {
                const auto& a = net.layers[l][e];
                if (!a.active || !a.symbolic) continue;
                offsets[l][e] = p;
                switch (a.symbolic->kind) {
                    case SymbolicKind::linear: p += 2; break;
                    case SymbolicKind::op: p += 4; break;
                    case SymbolicKind::discrete_map: p += a.symbolic->table.size(); break;
                }
            }
        }
    }

    for (int l = net.n_layers() - 1; l >= 0; --l) {
        const int n_in = net.shape[l], n_out = net.shape[l + 1];
        dnode[l].assign(static_cast<std::size_t>(n_rows) * n_in, 0.0);
        for (int j = 0; j < n_out; ++j) {
            const double* dn = dnode[l + 1].data() + static_cast<std::size_t>(j) * n_rows;
            for (int i = 0; i < n_in; ++i) {
                const Activation& a = net.edge(l, j, i);
                if (!a.active || !a.symbolic) continue;
                const auto& sEdge = *a.symbolic;
                const double* in = cache.nodes[l].data() + static_cast<std::size_t>(i) * n_rows;
                double* din = dnode[l].data() + static_cast<std::size_t>(i) * n_rows;
                const std::size_t off = offsets[l][j * n_in + i];
                for (int s = 0; s < n_rows; ++s) {
                    const double g = dn[s];
                    if (g == 0.0) continue;
                    const double xv = in[s];
                    switch (sEdge.kind) {
                        case SymbolicKind::linear:
                            grads[off] += g * xv;      // d/da
                            grads[off + 1] += g;       // d/db
                            din[s] += g * sEdge.a;
                            break;
                        case SymbolicKind::op: {
                            const Operator& op = find_operator(sEdge.op_name);
                            const double u = sEdge.a * xv + sEdge.b;
                            const double fu = op.f(u);
                            const double dfu = op.df(u);
                            grads[off] += g * sEdge.c * dfu * xv;  // a
                            grads[off + 1] += g * sEdge.c * dfu;   // b
                            grads[off + 2] += g * fu;              // c
                            grads[off + 3] += g;                   // d
                            din[s] += g * sEdge.c * sEdge.a * dfu;
                            break;
                        }
                        case SymbolicKind::discrete_map: {
                            const int code = static_cast<int>(std::lround(xv));
                            if (code >= 0 &&
                                code < static_cast<int>(sEdge.table.size()))
                                grads[off + code] += g;
                            break;
                        }
                    }
                }
            }
        }
    }
    return grads;
}

}  // namespace

std::vector<double> symbolic_forward(const Network& net, std::span<const double> X,
                                     int n_rows) {
    SymCache cache = sym_forward_cache(net, X, n_rows);
    const auto& out = cache.nodes.back();
    return {out.begin(), out.end()};
}

FinetuneResult finetune_affine(Network& net, const Dataset& data, int steps,
                               double lr) {
    FinetuneResult res;
    std::vector<double> params = flatten_sym_params(net);
    const std::vector<double> saved = params;
    AdamState adam(params.size());

    {
        const auto theta = symbolic_forward(net, data.X, data.n_rows);
        res.loss_before = cox_loss_fast(theta, data.outcome);
        res.loss_after = res.loss_before;
    }
    for (int step = 0; step < steps; ++step) {
        SymCache cache = sym_forward_cache(net, data.X, data.n_rows);
        const auto& theta = cache.nodes.back();
        const double loss = cox_loss_fast(theta, data.outcome);
        if (!std::isfinite(loss)) {
            unflatten_sym_params(net, saved);
            res.diverged = true;
            res.loss_after = res.loss_before;
            return res;
        }
        const auto dtheta = cox_loss_grad(theta, data.outcome, true);
        const auto grads = sym_param_grads(net, cache, dtheta);
        adam_step(params, grads, adam, lr);
        unflatten_sym_params(net, params);
    }
    {
        const auto theta = symbolic_forward(net, data.X, data.n_rows);
        res.loss_after = cox_loss_fast(theta, data.outcome);
        if (!std::isfinite(res.loss_after) || res.loss_after > res.loss_before) {
            unflatten_sym_params(net, saved);
            res.diverged = !std::isfinite(res.loss_after);
            res.loss_after = res.loss_before;
        }
    }
    return res;
}

// --- formula ------------------------------------------------------------

double ExprNode::eval(std::span<const double> row) const {
    switch (kind) {
        case Kind::constant: return value;
        case Kind::var: return row[var_index];
        case Kind::sum: {
            double s = 0.0;
            for (const auto& ch : children) s += ch->eval(row);
            return s;
        }
        case Kind::scaled_op: {
            const double u = a * children[0]->eval(row) + b;
            if (op_name == "x" || op_name == "linear") return c * u + d;
            return c * find_operator(op_name).f(u) + d;
        }
        case Kind::discrete: {
            const int code = static_cast<int>(std::lround(row[var_index]));
            if (code < 0 || code >= static_cast<int>(table.size())) return 0.0;
            return table[code];
        }
    }
    return 0.0;
}

std::unique_ptr<ExprNode> ExprNode::clone() const {
    auto n = std::make_unique<ExprNode>();
    n->kind = kind;
    n->value = value;
    n->var_index = var_index;
    n->op_name = op_name;
    n->a = a;
    n->b = b;
    n->c = c;
    n->d = d;
    n->table = table;
    for (const auto& ch : children) n->children.push_back(ch->clone());
    return n;
}

double Formula::eval(std::span<const double> row) const {
    double s = 0.0;
    for (const auto& t : terms) s += t.expr->eval(row);
    return s;
}

namespace {

std::unique_ptr<ExprNode> make_const(double v) {
    auto n = std::make_unique<ExprNode>();
    n->kind = ExprNode::Kind::constant;
    n->value = v;
    return n;
}

std::unique_ptr<ExprNode> make_var(int idx) {
    auto n = std::make_unique<ExprNode>();
    n->kind = ExprNode::Kind::var;
    n->var_index = idx;
    return n;
}

std::unique_ptr<ExprNode> edge_expr(const SymbolicEdge& s,
                                    std::unique_ptr<ExprNode> child) {
    if (s.kind == SymbolicKind::discrete_map) {
        if (child->kind != ExprNode::Kind::var)
            throw std::logic_error("discrete map on a non-input edge");
        auto n = std::make_unique<ExprNode>();
        n->kind = ExprNode::Kind::discrete;
        n->var_index = child->var_index;
        n->table = s.table;
        return n;
    }
    auto n = std::make_unique<ExprNode>();
    n->kind = ExprNode::Kind::scaled_op;
    n->op_name = s.kind == SymbolicKind::linear ? "x" : s.op_name;
    n->a = s.a;
    n->b = s.b;
    n->c = s.kind == SymbolicKind::linear ? 1.0 : s.c;
    n->d = s.kind == SymbolicKind::linear ? 0.0 : s.d;
    n->children.push_back(std::move(child));
    return n;
}

// Node expression as a sum of the incoming active edges.
std::unique_ptr<ExprNode> node_expr(const Network& net, int layer, int node) {
    if (layer == 0) return make_var(node);
    auto sum = std::make_unique<ExprNode>();
    sum->kind = ExprNode::Kind::sum;
    const int l = layer - 1;
    for (int i = 0; i < net.shape[l]; ++i) {
        const Activation& a = net.edge(l, node, i);
        if (!a.active) continue;
        if (!a.symbolic) throw std::logic_error("render_formula: non-symbolic edge");
        sum->children.push_back(edge_expr(*a.symbolic, node_expr(net, l, i)));
    }
    return sum;
}

void scale_node(ExprNode& n, double s) {
    switch (n.kind) {
        case ExprNode::Kind::constant: n.value *= s; break;
        case ExprNode::Kind::scaled_op:
            n.c *= s;
            n.d *= s;
            break;
        case ExprNode::Kind::discrete:
            for (auto& v : n.table) v *= s;
            break;
        case ExprNode::Kind::sum:
            for (auto& ch : n.children) scale_node(*ch, s);
            break;
        case ExprNode::Kind::var: break;  // handled by caller
    }
}

std::unique_ptr<ExprNode> scaled(std::unique_ptr<ExprNode> n, double s) {
    if (n->kind == ExprNode::Kind::var) {
        auto w = std::make_unique<ExprNode>();
        w->kind = ExprNode::Kind::scaled_op;
        w->op_name = "x";
        w->a = s;
        w->children.push_back(std::move(n));
        return w;
    }
    scale_node(*n, s);
    return n;
}

}  // namespace

Formula render_formula(const Network& net,
                       const std::vector<std::string>& feature_names) {
    Formula f;
    f.feature_names = feature_names;
    const int L = net.n_layers();
    double const_acc = 0.0;
    for (int i = 0; i < net.shape[L - 1]; ++i) {
        const Activation& a = net.edge(L - 1, 0, i);
        if (!a.active) continue;
        if (!a.symbolic) throw std::logic_error("render_formula: non-symbolic edge");
        const SymbolicEdge& s = *a.symbolic;
        auto child = node_expr(net, L - 1, i);
        if (s.kind == SymbolicKind::linear && child->kind == ExprNode::Kind::sum) {
            // distribute a*(sum) + b into isolation terms
            for (auto& ch : child->children)
                f.terms.push_back({scaled(std::move(ch), s.a), -1.0});
            const_acc += s.b;
        } else {
            f.terms.push_back({edge_expr(s, std::move(child)), -1.0});
        }
    }
    if (const_acc != 0.0) f.terms.push_back({make_const(const_acc), -1.0});
    if (f.terms.empty()) f.terms.push_back({make_const(0.0), -1.0});
    return f;
}

namespace {

std::string num(double v, int prec) {
    std::ostringstream ss;
    ss.precision(prec);
    ss << v;
    return ss.str();
}

std::string render_node(const ExprNode& n, const std::vector<std::string>& names,
                        int prec);

std::string op_pattern(const std::string& op, const std::string& arg) {
    if (op == "gauss") return "exp(-(" + arg + ")^2)";
    if (op == "x^2") return "(" + arg + ")^2";
    if (op == "x^3") return "(" + arg + ")^3";
    if (op == "x^4") return "(" + arg + ")^4";
    if (op == "1/x") return "1/(" + arg + ")";
    if (op == "1/x^2") return "1/(" + arg + ")^2";
    if (op == "1/x^4") return "1/(" + arg + ")^4";
    if (op == "invsqrt") return "1/sqrt(" + arg + ")";
    if (op == "abs") return "abs(" + arg + ")";
    return op + "(" + arg + ")";
}

std::string render_node(const ExprNode& n, const std::vector<std::string>& names,
                        int prec) {
    switch (n.kind) {
        case ExprNode::Kind::constant:
            return num(n.value, prec);
        case ExprNode::Kind::var:
            return names[n.var_index];
        case ExprNode::Kind::sum: {
            std::string out;
            for (const auto& ch : n.children) {
                const std::string s = render_node(*ch, names, prec);
                if (out.empty())
                    out = s;
                else if (!s.empty() && s[0] == '-')
                    out += " - " + s.substr(1);
                else
                    out += " + " + s;
            }
            return out.empty() ? "0" : out;
        }
        case ExprNode::Kind::discrete: {
            std::string out = "map(" + names[n.var_index] + ";";
            for (std::size_t i = 0; i < n.table.size(); ++i) {
                if (i) out += ',';
                out += " " + std::to_string(i) + ": " + num(n.table[i], prec);
            }
            return out + ")";
        }
        case ExprNode::Kind::scaled_op: {
            const std::string child = render_node(*n.children[0], names, prec);
            if (n.op_name == "x" || n.op_name == "linear") {
                // c*(a u + b) + d collapses to slope*u + intercept
                const double slope = n.c * n.a;
                const double icept = n.c * n.b + n.d;
                const bool wrap = n.children[0]->kind == ExprNode::Kind::sum;
                const std::string u = wrap ? "(" + child + ")" : child;
                std::string out;
                if (slope == 1.0)
                    out = u;
                else if (slope == -1.0)
                    out = "-" + u;
                else
                    out = num(slope, prec) + "*" + u;
                if (icept != 0.0) {
                    if (icept > 0)
                        out += " + " + num(icept, prec);
                    else
                        out += " - " + num(-icept, prec);
                }
                return out;
            }
            std::string arg;
            const bool trivial_inner = (n.a == 1.0 && n.b == 0.0);
            if (trivial_inner) {
                arg = child;
            } else {
                if (n.a == 1.0)
                    arg = child;
                else if (n.a == -1.0)
                    arg = "-" + child;
                else
                    arg = num(n.a, prec) + "*" + child;
                if (n.children[0]->kind == ExprNode::Kind::sum && n.a != 1.0)
                    arg = num(n.a, prec) + "*(" + child + ")";
                if (n.b > 0)
                    arg += " + " + num(n.b, prec);
                else if (n.b < 0)
                    arg += " - " + num(-n.b, prec);
            }
            std::string out = op_pattern(n.op_name, arg);
            if (n.c != 1.0) out = num(n.c, prec) + "*" + out;
            if (n.d > 0)
                out += " + " + num(n.d, prec);
            else if (n.d < 0)
                out += " - " + num(-n.d, prec);
            return out;
        }
    }
    return "";
}

json node_json(const ExprNode& n) {
    json j;
    switch (n.kind) {
        case ExprNode::Kind::constant:
            j["kind"] = "constant";
            j["value"] = n.value;
            break;
        case ExprNode::Kind::var:
            j["kind"] = "var";
            j["index"] = n.var_index;
            break;
        case ExprNode::Kind::sum: {
            j["kind"] = "sum";
            json ch = json::array();
            for (const auto& c : n.children) ch.push_back(node_json(*c));
            j["children"] = std::move(ch);
            break;
        }
        case ExprNode::Kind::discrete:
            j["kind"] = "discrete";
            j["index"] = n.var_index;
            j["table"] = n.table;
            break;
        case ExprNode::Kind::scaled_op:
            j["kind"] = "op";
            j["op"] = n.op_name;
            j["a"] = n.a;
            j["b"] = n.b;
            j["c"] = n.c;
            j["d"] = n.d;
            j["child"] = node_json(*n.children[0]);
            break;
    }
    return j;
}

}  // namespace

std::string formula_text(const Formula& f, int precision) {
    std::string out;
    for (const auto& t : f.terms) {
        std::string s = render_node(*t.expr, f.feature_names, precision);
        if (t.importance >= 0.0) s += "   (sigma=" + num(t.importance, 2) + ")";
        if (out.empty())
            out = s;
        else if (!s.empty() && s[0] == '-')
            out += " - " + s.substr(1);
        else
            out += " + " + s;
    }
    return out;
}

std::string formula_json(const Formula& f) {
    json j;
    j["features"] = f.feature_names;
    json terms = json::array();
    for (const auto& t : f.terms) {
        json jt;
        jt["expr"] = node_json(*t.expr);
        if (t.importance >= 0.0) jt["sigma"] = t.importance;
        terms.push_back(std::move(jt));
    }
    j["terms"] = std::move(terms);
    return j.dump(2);
}

void term_importance(Formula& f, std::span<const double> X, int n_rows) {
    if (f.terms.empty() || n_rows < 1)
        throw std::invalid_argument("term_importance: empty formula or data");
    const int d = static_cast<int>(X.size()) / n_rows;
    for (auto& term : f.terms) {
        std::vector<double> vals(n_rows);
        for (int r = 0; r < n_rows; ++r)
            vals[r] = term.expr->eval(
                {X.data() + static_cast<std::size_t>(r) * d, static_cast<std::size_t>(d)});
        std::vector<double> sorted = vals;
        std::sort(sorted.begin(), sorted.end());
        const auto q = [&](double p) {
            const double pos = p * (sorted.size() - 1);
            const std::size_t lo = static_cast<std::size_t>(pos);
            const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
            return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
        };
        const double q1 = q(0.25), q3 = q(0.75);
        const double iqr = q3 - q1;
        const double lo = q1 - 3.0 * iqr, hi = q3 + 3.0 * iqr;
        double sum = 0.0;
        int n = 0;
        for (double v : vals)
            if (v >= lo && v <= hi) {
                sum += v;
                ++n;
            }
        if (n < 1) {
            term.importance = 0.0;
            continue;
        }
        const double mean = sum / n;
        double var = 0.0;
        for (double v : vals)
            if (v >= lo && v <= hi) var += sq(v - mean);
        term.importance = std::sqrt(var / n);
    }
    std::stable_sort(f.terms.begin(), f.terms.end(),
                     [](const FormulaTerm& a, const FormulaTerm& b) {
                         return a.importance > b.importance;
                     });
}

void export_edge_samples(const Network& net, const ForwardCache& cache,
                         const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (int l = 0; l < net.n_layers(); ++l) {
        const int n_in = net.shape[l];
        for (int j = 0; j < net.shape[l + 1]; ++j)
            for (int i = 0; i < n_in; ++i) {
                const Activation& a = net.edge(l, j, i);
                if (!a.active) continue;
                const auto x = cache.node_column(l, i);
                const auto& y = cache.edge_post[l][j * n_in + i];
                std::ostringstream name;
                name << dir << "/layer" << l << "_in" << i << "_out" << j << ".csv";
                std::ofstream f(name.str());
                if (!f) throw std::runtime_error("cannot write " + name.str());
                f.precision(17);
                f << "x,y\n";
                for (std::size_t s = 0; s < y.size(); ++s)
                    f << x[s] << ',' << y[s] << '\n';
            }
    }
}

}  // namespace survkan
