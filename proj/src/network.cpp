#include "survkan/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "survkan/kernels.hpp"
#include "survkan/symbolic.hpp"

namespace survkan {

namespace {
constexpr int kMaxDegree = 7;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers)
        for (const auto& a : layer) n += 2 + a.coeffs.size();
    return n;
}

Network init_network(const std::vector<int>& shape, BasisKind base_kind, int grid,
                     int degree, double xi_b, double xi_s, std::uint64_t seed) {
    if (shape.size() < 2 || shape.back() != 1)
        throw std::invalid_argument("init_network: shape must end in 1");
    for (int w : shape)
        if (w < 1) throw std::invalid_argument("init_network: zero-width layer");

    Network net;
    net.shape = shape;
    net.input_meta.assign(shape[0], ColumnKind{});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ub(-xi_b, xi_b);
    std::normal_distribution<double> nc(0.0, xi_s / grid);
    const KnotVector kv = make_knots(-1.0, 1.0, grid, degree);

    net.layers.resize(shape.size() - 1);
    for (std::size_t l = 0; l + 1 < shape.size(); ++l) {
        const int n_in = shape[l], n_out = shape[l + 1];
        net.layers[l].resize(static_cast<std::size_t>(n_in) * n_out);
        for (auto& a : net.layers[l]) {
            a.knots = kv;
            a.basis_kind = base_kind;
            a.w_s = 1.0;
            a.w_b = 1.0 / n_in + (xi_b > 0 ? ub(rng) : 0.0);
            a.coeffs.resize(kv.basis_count());
            for (auto& c : a.coeffs) c = (xi_s > 0 ? nc(rng) : 0.0);
        }
    }
    return net;
}

namespace {

// Evaluates one edge over a node column: fills post[s] and optionally the
// spline/base scratch needed by callers.
void eval_edge_batch(const Activation& a, std::span<const double> x, double* post,
                     std::vector<double>& base_buf, std::vector<double>& spline_buf) {
    const std::size_t n = x.size();
    base_buf.resize(n);
    spline_buf.resize(n);
    const int deg = a.knots.degree;
    double vals[kMaxDegree + 1];
    for (std::size_t s = 0; s < n; ++s) {
        const int first = basis_nonzero(x[s], a.knots, vals);
        double sp = 0.0;
        for (int r = 0; r <= deg; ++r) sp += a.coeffs[first + r] * vals[r];
        spline_buf[s] = sp;
    }
    if (a.basis_kind == BasisKind::identity) {
        std::copy(x.begin(), x.end(), base_buf.begin());
    } else {
        for (std::size_t s = 0; s < n; ++s)
            base_buf[s] = x[s] / (1.0 + std::exp(-x[s]));
    }
    kernels::combine(post, base_buf.data(), spline_buf.data(), a.w_b, a.w_s, n);
}

}  // namespace

ForwardCache forward(const Network& net, std::span<const double> X, int n_rows) {
    const int n0 = net.shape[0];
    if (static_cast<std::size_t>(n_rows) * n0 != X.size())
        throw std::invalid_argument("forward: X size does not match shape[0]");

    ForwardCache cache;
    cache.n_rows = n_rows;
    cache.nodes.resize(net.shape.size());
    cache.edge_post.resize(net.layers.size());

    // transpose input to column-major
    cache.nodes[0].resize(static_cast<std::size_t>(n_rows) * n0);
    for (int s = 0; s < n_rows; ++s)
        for (int i = 0; i < n0; ++i)
            cache.nodes[0][static_cast<std::size_t>(i) * n_rows + s] =
                X[static_cast<std::size_t>(s) * n0 + i];

    std::vector<double> base_buf, spline_buf;
    for (int l = 0; l < net.n_layers(); ++l) {
        const int n_in = net.shape[l], n_out = net.shape[l + 1];
        cache.nodes[l + 1].assign(static_cast<std::size_t>(n_rows) * n_out, 0.0);
        cache.edge_post[l].resize(net.layers[l].size());
        for (int j = 0; j < n_out; ++j) {
            double* out_col = cache.nodes[l + 1].data() +
                              static_cast<std::size_t>(j) * n_rows;
            for (int i = 0; i < n_in; ++i) {
                const Activation& a = net.edge(l, j, i);
                auto& post = cache.edge_post[l][j * n_in + i];
                if (!a.active) {
                    post.clear();
                    continue;
                }
                post.resize(n_rows);
                eval_edge_batch(a, cache.node_column(l, i), post.data(), base_buf,
                                spline_buf);
                kernels::scale_add(out_col, post.data(), 1.0, n_rows);
            }
        }
    }
    return cache;
}

NetGrads zero_grads(const Network& net) {
    NetGrads g(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        g[l].resize(net.layers[l].size());
        for (std::size_t e = 0; e < net.layers[l].size(); ++e)
            g[l][e].coeffs.assign(net.layers[l][e].coeffs.size(), 0.0);
    }
    return g;
}

void add_scaled(NetGrads& acc, const NetGrads& g, double scale) {
    for (std::size_t l = 0; l < acc.size(); ++l)
        for (std::size_t e = 0; e < acc[l].size(); ++e) {
            acc[l][e].w_b += scale * g[l][e].w_b;
            acc[l][e].w_s += scale * g[l][e].w_s;
            kernels::scale_add(acc[l][e].coeffs.data(), g[l][e].coeffs.data(), scale,
                               acc[l][e].coeffs.size());
        }
}

namespace {

// Per-edge injection weight w: adds w * sign(post[s]) to the edge-output
// gradient (used for the L1/entropy penalty terms).
using EdgeInject = std::vector<std::vector<double>>;

NetGrads reverse_pass(const Network& net, const ForwardCache& cache,
                      std::span<const double> dL_dtheta, const EdgeInject* inject) {
    if (!dL_dtheta.empty() &&
        static_cast<int>(dL_dtheta.size()) != cache.n_rows)
        throw std::logic_error("backward: upstream gradient batch mismatch");
    for (std::size_t l = 0; l < net.layers.size(); ++l)
        if (cache.edge_post[l].size() != net.layers[l].size())
            throw std::logic_error("backward: stale cache (structure mismatch)");

    const int n_rows = cache.n_rows;
    NetGrads grads = zero_grads(net);

    // dnode[l]: column-major gradient of the objective w.r.t. node values.
    std::vector<std::vector<double>> dnode(net.shape.size());
    dnode.back().assign(n_rows, 0.0);
    if (!dL_dtheta.empty())
        std::copy(dL_dtheta.begin(), dL_dtheta.end(), dnode.back().begin());

    double vals[kMaxDegree + 1], dvals[kMaxDegree + 1];
    for (int l = net.n_layers() - 1; l >= 0; --l) {
        const int n_in = net.shape[l], n_out = net.shape[l + 1];
        dnode[l].assign(static_cast<std::size_t>(n_rows) * n_in, 0.0);
        for (int j = 0; j < n_out; ++j) {
            const double* dn_out =
                dnode[l + 1].data() + static_cast<std::size_t>(j) * n_rows;
            for (int i = 0; i < n_in; ++i) {
                const Activation& a = net.edge(l, j, i);
                if (!a.active) continue;
                const auto& post = cache.edge_post[l][j * n_in + i];
                const auto x = cache.node_column(l, i);
                EdgeGrads& eg = grads[l][j * n_in + i];
                double* dn_in = dnode[l].data() + static_cast<std::size_t>(i) * n_rows;
                const double inj =
                    inject ? (*inject)[l][j * n_in + i] : 0.0;
                const int deg = a.knots.degree;
                for (int s = 0; s < n_rows; ++s) {
                    double dn = dn_out[s];
                    if (inj != 0.0 && post[s] != 0.0)
                        dn += inj * (post[s] > 0 ? 1.0 : -1.0);
                    if (dn == 0.0) continue;
                    const int first =
                        basis_nonzero_with_deriv(x[s], a.knots, vals, dvals);
                    double sp = 0.0, dsp = 0.0;
                    for (int r = 0; r <= deg; ++r) {
                        sp += a.coeffs[first + r] * vals[r];
                        dsp += a.coeffs[first + r] * dvals[r];
                        eg.coeffs[first + r] += dn * a.w_s * vals[r];
                    }
                    eg.w_s += dn * sp;
                    eg.w_b += dn * basis_fn(a.basis_kind, x[s]);
                    dn_in[s] +=
                        dn * (a.w_b * basis_fn_deriv(a.basis_kind, x[s]) + a.w_s * dsp);
                }
            }
        }
    }
    return grads;
}

}  // namespace

NetGrads backward(const Network& net, const ForwardCache& cache,
                  std::span<const double> dL_dtheta) {
    return reverse_pass(net, cache, dL_dtheta, nullptr);
}

RegPenalty penalty(const Network& net, const ForwardCache& cache,
                   double lambda_ent, double lambda_coef) {
    RegPenalty p;
    p.edge_l1.resize(net.layers.size());
    p.layer_l1.assign(net.layers.size(), 0.0);
    p.layer_entropy.assign(net.layers.size(), 0.0);
    p.coeff_l1.assign(net.layers.size(), 0.0);
    for (int l = 0; l < net.n_layers(); ++l) {
        p.edge_l1[l].assign(net.layers[l].size(), 0.0);
        for (std::size_t e = 0; e < net.layers[l].size(); ++e) {
            const Activation& a = net.layers[l][e];
            if (!a.active) continue;
            const auto& post = cache.edge_post[l][e];
            p.edge_l1[l][e] = kernels::abs_mean(post.data(), post.size());
            p.layer_l1[l] += p.edge_l1[l][e];
            double cl1 = 0.0;
            for (double c : a.coeffs) cl1 += std::fabs(c);
            p.coeff_l1[l] += cl1 / a.coeffs.size();
        }
        if (p.layer_l1[l] > 0.0) {
            double S = 0.0;
            for (std::size_t e = 0; e < net.layers[l].size(); ++e) {
                const double q = p.edge_l1[l][e] / p.layer_l1[l];
                if (q > 0.0) S -= q * std::log(q);
            }
            p.layer_entropy[l] = S;
        }
        p.total += p.layer_l1[l] + lambda_ent * p.layer_entropy[l] +
                   lambda_coef * p.coeff_l1[l];
    }
    return p;
}

namespace {

// dTotal/d edge_l1 for every edge: 1 + lambda_ent * dS/da with
// dS/da_e = -(log p_e + S) / layer_l1.
EdgeInject penalty_inject(const Network& net, const RegPenalty& p,
                          double lambda_ent, int n_rows, double scale) {
    EdgeInject inj(net.layers.size());
    for (int l = 0; l < net.n_layers(); ++l) {
        inj[l].assign(net.layers[l].size(), 0.0);
        const double A = p.layer_l1[l];
        for (std::size_t e = 0; e < net.layers[l].size(); ++e) {
            if (!net.layers[l][e].active) continue;
            const double a = p.edge_l1[l][e];
            double w = 1.0;
            if (lambda_ent != 0.0 && A > 0.0 && a > 0.0)
                w += lambda_ent * (-(std::log(a / A) + p.layer_entropy[l]) / A);
            // d edge_l1 / d post_s carries the 1/N batch average.
            inj[l][e] = scale * w / n_rows;
        }
    }
    return inj;
}

void add_coeff_l1_grads(const Network& net, NetGrads& g, double scale) {
    if (scale == 0.0) return;
    for (std::size_t l = 0; l < net.layers.size(); ++l)
        for (std::size_t e = 0; e < net.layers[l].size(); ++e) {
            const Activation& a = net.layers[l][e];
            if (!a.active) continue;
            const double f = scale / a.coeffs.size();
            for (std::size_t i = 0; i < a.coeffs.size(); ++i) {
                const double c = a.coeffs[i];
                if (c != 0.0) g[l][e].coeffs[i] += f * (c > 0 ? 1.0 : -1.0);
            }
        }
}

}  // namespace

NetGrads penalty_grads(const Network& net, const ForwardCache& cache,
                       double lambda_ent, double lambda_coef) {
    const RegPenalty p = penalty(net, cache, lambda_ent, lambda_coef);
    const EdgeInject inj = penalty_inject(net, p, lambda_ent, cache.n_rows, 1.0);
    NetGrads g = reverse_pass(net, cache, {}, &inj);
    add_coeff_l1_grads(net, g, lambda_coef);
    return g;
}

NetGrads combined_grads(const Network& net, const ForwardCache& cache,
                        std::span<const double> dL_dtheta, double lambda,
                        double lambda_ent, double lambda_coef) {
    if (lambda == 0.0) return reverse_pass(net, cache, dL_dtheta, nullptr);
    const RegPenalty p = penalty(net, cache, lambda_ent, lambda_coef);
    const EdgeInject inj = penalty_inject(net, p, lambda_ent, cache.n_rows, lambda);
    NetGrads g = reverse_pass(net, cache, dL_dtheta, &inj);
    add_coeff_l1_grads(net, g, lambda * lambda_coef);
    return g;
}

void center_hidden_edges(Network& net, std::span<const double> X, int n_rows) {
    for (int l = 0; l + 1 < net.n_layers(); ++l) {
        const ForwardCache cache = forward(net, X, n_rows);
        const int n_in = net.shape[l], n_out = net.shape[l + 1];
        for (int j = 0; j < n_out; ++j) {
            double shift = 0.0;
            for (int i = 0; i < n_in; ++i) {
                Activation& a = net.layers[l][static_cast<std::size_t>(j) * n_in + i];
                const auto& post = cache.edge_post[l][static_cast<std::size_t>(j) * n_in + i];
                if (!a.active || post.empty() || std::fabs(a.w_s) < 1e-12) continue;
                double mu = 0.0;
                for (double v : post) mu += v;
                mu /= static_cast<double>(post.size());
                // B-spline bases sum to 1, so a uniform coefficient shift
                // moves phi by an exact constant.
                for (double& c : a.coeffs) c -= mu / a.w_s;
                shift += mu;
            }
            if (shift == 0.0) continue;
            // Downstream edges now see this node reduced by `shift`.
            // Translate their grids and refit coefficients so each keeps
            // computing its old values on the observed samples.
            const auto u_old = cache.node_column(l + 1, j);
            const int next_in = net.shape[l + 1];
            const int next_out = net.shape[l + 2];
            for (int k = 0; k < next_out; ++k) {
                Activation& b =
                    net.layers[l + 1][static_cast<std::size_t>(k) * next_in + j];
                if (!b.active) continue;
                const auto& old_post =
                    cache.edge_post[l + 1][static_cast<std::size_t>(k) * next_in + j];
                b.knots.lo -= shift;
                b.knots.hi -= shift;
                for (double& t : b.knots.knots) t -= shift;
                if (std::fabs(b.w_s) < 1e-12 || old_post.empty()) continue;
                const int m = b.knots.basis_count();
                Eigen::MatrixXd B(n_rows, m);
                Eigen::VectorXd y(n_rows);
                for (int s = 0; s < n_rows; ++s) {
                    const double u = u_old[s] - shift;
                    const std::vector<double> bv = basis_values(u, b.knots);
                    for (int c = 0; c < m; ++c) B(s, c) = bv[c];
                    y(s) = (old_post[s] - b.w_b * basis_fn(b.basis_kind, u)) / b.w_s;
                }
                const Eigen::VectorXd c = B.colPivHouseholderQr().solve(y);
                if (!c.allFinite()) continue;
                for (int i2 = 0; i2 < m; ++i2) b.coeffs[i2] = c(i2);
            }
        }
    }
}

namespace {

// Marks node-cascade deactivation and checks output connectivity.
// Returns false if no input can reach the output through active edges.
bool cascade_and_check(Network& net) {
    bool changed = true;
    while (changed) {
        changed = false;
        // hidden nodes live in node layers 1 .. L-1
        for (int m = 1; m < net.n_layers(); ++m) {
            for (int j = 0; j < net.shape[m]; ++j) {
                bool has_in = false;
                for (int i = 0; i < net.shape[m - 1]; ++i)
                    if (net.edge(m - 1, j, i).active) has_in = true;
                bool has_out = false;
                for (int jj = 0; jj < net.shape[m + 1]; ++jj)
                    if (net.edge(m, jj, j).active) has_out = true;
                if (has_in && has_out) continue;
                if (!has_in && !has_out) continue;  // already detached
                for (int i = 0; i < net.shape[m - 1]; ++i) {
                    Activation& a = net.edge(m - 1, j, i);
                    if (a.active) { a.active = false; changed = true; }
                }
                for (int jj = 0; jj < net.shape[m + 1]; ++jj) {
                    Activation& a = net.edge(m, jj, j);
                    if (a.active) { a.active = false; changed = true; }
                }
            }
        }
    }
    // connectivity: nodes reachable from the inputs along active edges
    std::vector<std::vector<char>> reach(net.shape.size());
    reach[0].assign(net.shape[0], 1);
    for (int l = 0; l < net.n_layers(); ++l) {
        reach[l + 1].assign(net.shape[l + 1], 0);
        for (int j = 0; j < net.shape[l + 1]; ++j)
            for (int i = 0; i < net.shape[l]; ++i)
                if (net.edge(l, j, i).active && reach[l][i]) reach[l + 1][j] = 1;
    }
    return reach.back()[0] != 0;
}

Network prune_once(const Network& net, double threshold, const RegPenalty& p,
                   bool* connected) {
    Network out = net;
    for (std::size_t l = 0; l < out.layers.size(); ++l)
        for (std::size_t e = 0; e < out.layers[l].size(); ++e)
            if (out.layers[l][e].active && p.edge_l1[l][e] < threshold)
                out.layers[l][e].active = false;
    *connected = cascade_and_check(out);
    return out;
}

}  // namespace

PruneResult prune(const Network& net, double threshold, const ForwardCache& cache) {
    const RegPenalty p = penalty(net, cache, 0.0, 0.0);
    bool connected = false;
    Network out = prune_once(net, threshold, p, &connected);
    if (!connected) {
        // find the largest threshold that keeps the output connected
        std::vector<double> l1s;
        for (const auto& layer : p.edge_l1)
            for (double v : layer) l1s.push_back(v);
        std::sort(l1s.begin(), l1s.end());
        double feasible = 0.0;
        for (double t : l1s) {
            bool ok = false;
            prune_once(net, t, p, &ok);
            if (ok)
                feasible = t;
            else
                break;
        }
        throw PruneTooAggressive(feasible);
    }
    PruneResult res;
    res.net = std::move(out);
    for (int i = 0; i < res.net.shape[0]; ++i) {
        bool any = false;
        for (int j = 0; j < res.net.shape[1]; ++j)
            if (res.net.edge(0, j, i).active) any = true;
        if (!any) res.dropped_inputs.push_back(i);
    }
    return res;
}

std::vector<double> flatten_params(const Network& net) {
    std::vector<double> flat;
    flat.reserve(net.parameter_count());
    for (const auto& layer : net.layers)
        for (const auto& a : layer) {
            flat.push_back(a.w_b);
            flat.push_back(a.w_s);
            flat.insert(flat.end(), a.coeffs.begin(), a.coeffs.end());
        }
    return flat;
}

void unflatten_params(Network& net, std::span<const double> flat) {
    std::size_t idx = 0;
    for (auto& layer : net.layers)
        for (auto& a : layer) {
            a.w_b = flat[idx++];
            a.w_s = flat[idx++];
            for (auto& c : a.coeffs) c = flat[idx++];
        }
    if (idx != flat.size())
        throw std::logic_error("unflatten_params: size mismatch");
}

std::vector<double> flatten_grads(const Network& net, const NetGrads& g) {
    std::vector<double> flat;
    flat.reserve(net.parameter_count());
    for (std::size_t l = 0; l < g.size(); ++l)
        for (std::size_t e = 0; e < g[l].size(); ++e) {
            flat.push_back(g[l][e].w_b);
            flat.push_back(g[l][e].w_s);
            flat.insert(flat.end(), g[l][e].coeffs.begin(), g[l][e].coeffs.end());
        }
    return flat;
}

// --- serialization ------------------------------------------------------

namespace {

using nlohmann::json;

json knots_to_json(const KnotVector& kv) {
    return json{{"lo", kv.lo}, {"hi", kv.hi}, {"grid", kv.grid}, {"degree", kv.degree}};
}

KnotVector knots_from_json(const json& j) {
    return make_knots(j.at("lo"), j.at("hi"), j.at("grid"), j.at("degree"));
}

json symbolic_to_json(const SymbolicEdge& s) {
    json j;
    switch (s.kind) {
        case SymbolicKind::linear: j["kind"] = "linear"; break;
        case SymbolicKind::op: j["kind"] = "op"; break;
        case SymbolicKind::discrete_map: j["kind"] = "discrete_map"; break;
    }
    j["op"] = s.op_name;
    j["a"] = s.a;
    j["b"] = s.b;
    j["c"] = s.c;
    j["d"] = s.d;
    j["table"] = s.table;
    j["r2"] = s.r2;
    j["low_fidelity"] = s.low_fidelity;
    return j;
}

SymbolicEdge symbolic_from_json(const json& j) {
    SymbolicEdge s;
    const std::string k = j.at("kind");
    s.kind = k == "linear"   ? SymbolicKind::linear
             : k == "op"     ? SymbolicKind::op
                             : SymbolicKind::discrete_map;
    s.op_name = j.at("op");
    s.a = j.at("a");
    s.b = j.at("b");
    s.c = j.at("c");
    s.d = j.at("d");
    s.table = j.at("table").get<std::vector<double>>();
    s.r2 = j.at("r2");
    s.low_fidelity = j.at("low_fidelity");
    return s;
}

}  // namespace

std::string network_to_json(const Network& net) {
    json j;
    j["version"] = "survkan-model/1";
    j["shape"] = net.shape;
    json meta = json::array();
    for (const auto& m : net.input_meta)
        meta.push_back({{"categorical", m.categorical}, {"n_categories", m.n_categories}});
    j["input_meta"] = meta;
    json layers = json::array();
    for (const auto& layer : net.layers) {
        json edges = json::array();
        for (const auto& a : layer) {
            json e;
            e["knots"] = knots_to_json(a.knots);
            e["coeffs"] = a.coeffs;
            e["w_b"] = a.w_b;
            e["w_s"] = a.w_s;
            e["basis"] = a.basis_kind == BasisKind::identity ? "identity" : "silu";
            e["active"] = a.active;
            if (a.symbolic) e["symbolic"] = symbolic_to_json(*a.symbolic);
            edges.push_back(std::move(e));
        }
        layers.push_back(std::move(edges));
    }
    j["layers"] = std::move(layers);
    return j.dump(2);
}

Network network_from_json(const std::string& text) {
    const json j = json::parse(text);
    if (j.at("version") != "survkan-model/1")
        throw std::invalid_argument("unsupported model version");
    Network net;
    net.shape = j.at("shape").get<std::vector<int>>();
    for (const auto& m : j.at("input_meta"))
        net.input_meta.push_back({m.at("categorical"), m.at("n_categories")});
    for (const auto& layer : j.at("layers")) {
        std::vector<Activation> edges;
        for (const auto& e : layer) {
            Activation a;
            a.knots = knots_from_json(e.at("knots"));
            a.coeffs = e.at("coeffs").get<std::vector<double>>();
            a.w_b = e.at("w_b");
            a.w_s = e.at("w_s");
            a.basis_kind =
                e.at("basis") == "identity" ? BasisKind::identity : BasisKind::silu;
            a.active = e.at("active");
            if (e.contains("symbolic"))
                a.symbolic = std::make_unique<SymbolicEdge>(symbolic_from_json(e.at("symbolic")));
            edges.push_back(std::move(a));
        }
        net.layers.push_back(std::move(edges));
    }
    return net;
}

void save_network(const Network& net, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << network_to_json(net) << '\n';
}

Network load_network(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return network_from_json(ss.str());
}

}  // namespace survkan
