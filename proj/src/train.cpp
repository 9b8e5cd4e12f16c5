#include "survkan/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace survkan {

using nlohmann::json;

std::vector<int> TrainConfig::full_shape(int n_features) const {
    std::vector<int> shape{n_features};
    shape.insert(shape.end(), hidden.begin(), hidden.end());
    shape.push_back(1);
    return shape;
}

std::string TrainConfig::to_json() const {
    json j;
    j["learning_rate"] = learning_rate;
    j["steps"] = steps;
    j["lambda"] = lambda;
    j["lambda_ent"] = lambda_ent;
    j["lambda_coef"] = lambda_coef;
    j["early_stopping"] = early_stopping;
    j["patience"] = patience;
    if (prune_threshold)
        j["prune_threshold"] = *prune_threshold;
    else
        j["prune_threshold"] = "auto";
    j["grid"] = grid;
    j["base_kind"] = base_kind == BasisKind::identity ? "identity" : "silu";
    j["xi_b"] = xi_b;
    j["xi_s"] = xi_s;
    j["seed"] = seed;
    j["grid_refresh_every"] = grid_refresh_every;
    j["hidden"] = hidden;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.steps = j.value("steps", c.steps);
    c.lambda = j.value("lambda", c.lambda);
    c.lambda_ent = j.value("lambda_ent", c.lambda_ent);
    c.lambda_coef = j.value("lambda_coef", c.lambda_coef);
    c.early_stopping = j.value("early_stopping", c.early_stopping);
    c.patience = j.value("patience", c.patience);
    if (j.contains("prune_threshold") && j["prune_threshold"].is_number())
        c.prune_threshold = j["prune_threshold"].get<double>();
    c.grid = j.value("grid", c.grid);
    if (j.value("base_kind", "silu") == std::string("identity"))
        c.base_kind = BasisKind::identity;
    else
        c.base_kind = BasisKind::silu;
    c.xi_b = j.value("xi_b", c.xi_b);
    c.xi_s = j.value("xi_s", c.xi_s);
    c.seed = j.value("seed", c.seed);
    c.grid_refresh_every = j.value("grid_refresh_every", c.grid_refresh_every);
    c.hidden = j.value("hidden", c.hidden);
    if (!(c.learning_rate > 0) || c.steps < 1 || c.lambda < 0 ||
        c.lambda_ent < 0 || c.lambda_coef < 0)
        throw std::invalid_argument("invalid training config");
    return c;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               AdamState& state, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: size mismatch");
    ++state.t;
    const double c1 = 1.0 - std::pow(b1, state.t);
    const double c2 = 1.0 - std::pow(b2, state.t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = b1 * state.m[i] + (1 - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (1 - b2) * grads[i] * grads[i];
        params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
    }
}

namespace {

// Fits layer-0 knot ranges to the covariate columns (1% margin).
void fit_input_knots(Network& net, const Dataset& data) {
    for (int i = 0; i < net.shape[0]; ++i) {
        double lo = data.at(0, i), hi = lo;
        for (int r = 1; r < data.n_rows; ++r) {
            lo = std::min(lo, data.at(r, i));
            hi = std::max(hi, data.at(r, i));
        }
        if (!(lo < hi)) {
            lo -= 1.0;
            hi += 1.0;
        } else {
            const double m = 0.01 * (hi - lo);
            lo -= m;
            hi += m;
        }
        for (int j = 0; j < net.shape[1]; ++j) {
            Activation& a = net.edge(0, j, i);
            a.knots = make_knots(lo, hi, a.knots.grid, a.knots.degree);
        }
    }
}

void refresh_hidden_knots(Network& net, const ForwardCache& cache) {
    for (int l = 1; l < net.n_layers(); ++l) {
        for (int i = 0; i < net.shape[l]; ++i) {
            const auto samples = cache.node_column(l, i);
            for (int j = 0; j < net.shape[l + 1]; ++j) {
                Activation& a = net.edge(l, j, i);
                if (!a.active) continue;
                a = refresh_knots(a, samples).activation;
            }
        }
    }
}

struct ValSplit {
    Dataset train;
    Dataset val;
};

ValSplit make_val_split(const Dataset& data, std::uint64_t seed) {
    auto split = stratified_split(data, 0.2, 10, seed);
    return {std::move(split.train), std::move(split.test)};
}

}  // namespace

TrainResult train(const Network& start, const Dataset& data, const TrainConfig& cfg) {
    if (data.outcome.n_events() == 0)
        throw std::invalid_argument("train: data has no events");
    if (start.shape[0] != data.n_cols)
        throw std::invalid_argument("train: network width != covariate count");

    Network net = start;

    const Dataset* fit_data = &data;
    std::optional<ValSplit> split;
    if (cfg.early_stopping) {
        split = make_val_split(data, cfg.seed);
        fit_data = &split->train;
    }
    fit_input_knots(net, *fit_data);

    AdamState adam(net.parameter_count());
    TrainHistory hist;
    double best_c = -1.0;
    std::vector<double> best_params;
    int bad_steps = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        if (cfg.grid_refresh_every > 0 && step > 0 && step < cfg.steps / 2 &&
            step % cfg.grid_refresh_every == 0) {
            ForwardCache cache = forward(net, fit_data->X, fit_data->n_rows);
            refresh_hidden_knots(net, cache);
        }
        ForwardCache cache = forward(net, fit_data->X, fit_data->n_rows);
        const double cox = cox_loss_fast(cache.theta(), fit_data->outcome);
        const RegPenalty pen = penalty(net, cache, cfg.lambda_ent, cfg.lambda_coef);
        const double loss = cox + cfg.lambda * pen.total;
        if (!std::isfinite(loss)) throw DivergedError(step);
        hist.train_loss.push_back(loss);
        hist.penalty_total.push_back(pen.total);

        const auto dtheta =
            cox_loss_grad(cache.theta(), fit_data->outcome, /*fast=*/true);
        const NetGrads grads = combined_grads(net, cache, dtheta, cfg.lambda,
                                              cfg.lambda_ent, cfg.lambda_coef);
        std::vector<double> params = flatten_params(net);
        adam_step(params, flatten_grads(net, grads), adam, cfg.learning_rate);
        unflatten_params(net, params);

        if (cfg.early_stopping) {
            ForwardCache vc = forward(net, split->val.X, split->val.n_rows);
            double c = 0.5;
            try {
                c = concordance_index(vc.theta(), split->val.outcome);
            } catch (const UndefinedMetric&) {
            }
            hist.val_c_index.push_back(c);
            if (c > best_c) {
                best_c = c;
                best_params = flatten_params(net);
                hist.best_step = step;
                bad_steps = 0;
            } else if (++bad_steps >= cfg.patience) {
                break;
            }
        }
    }
    if (cfg.early_stopping && !best_params.empty())
        unflatten_params(net, best_params);
    // Move constant offsets off hidden-feeding edges so the pruning score
    // reflects information carried, not operating-point placement.
    if (net.n_layers() > 1)
        center_hidden_edges(net, fit_data->X, fit_data->n_rows);
    return {std::move(net), std::move(hist)};
}

AutoPruneResult auto_prune(const Network& net, const Dataset& data,
                           const TrainConfig& cfg) {
    ForwardCache cache = forward(net, data.X, data.n_rows);
    AutoPruneResult res;

    if (cfg.prune_threshold) {
        try {
            PruneResult p = prune(net, *cfg.prune_threshold, cache);
            res.net = std::move(p.net);
            res.dropped_inputs = std::move(p.dropped_inputs);
            res.threshold = *cfg.prune_threshold;
        } catch (const PruneTooAggressive& e) {
            PruneResult p = prune(net, e.largest_feasible, cache);
            res.net = std::move(p.net);
            res.dropped_inputs = std::move(p.dropped_inputs);
            res.threshold = e.largest_feasible;
        }
        return res;
    }

    // threshold sweep scored on a held-out validation split
    const auto split = make_val_split(data, cfg.seed);
    const RegPenalty pen = penalty(net, cache, 0.0, 0.0);
    std::vector<double> cands{0.0};
    for (const auto& layer : pen.edge_l1)
        for (double v : layer)
            if (v > 0.0) cands.push_back(v);
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    if (cands.size() > 64) {  // cap sweep cost on big networks
        std::vector<double> thin;
        for (std::size_t i = 0; i < 64; ++i)
            thin.push_back(cands[i * (cands.size() - 1) / 63]);
        thin.erase(std::unique(thin.begin(), thin.end()), thin.end());
        cands = std::move(thin);
    }

    // Score every feasible threshold, then keep the sparsest one whose
    // validation C stays within a small tolerance of the best. Without the
    // tolerance, near-dead edges survive whenever their noise happens to
    // flip a couple of validation pairs the right way.
    constexpr double kPruneTol = 0.002;
    std::vector<std::pair<double, double>> scored;  // (threshold, val C)
    for (double t : cands) {
        try {
            PruneResult p = prune(net, t, cache);
            ForwardCache vc = forward(p.net, split.val.X, split.val.n_rows);
            scored.emplace_back(t, concordance_index(vc.theta(), split.val.outcome));
        } catch (const PruneTooAggressive&) {
            break;  // larger thresholds only disconnect more
        } catch (const UndefinedMetric&) {
        }
    }
    double best_c = -1.0;
    for (const auto& [t, c] : scored) best_c = std::max(best_c, c);
    double chosen = 0.0;
    for (const auto& [t, c] : scored)
        if (c >= best_c - kPruneTol) chosen = std::max(chosen, t);
    PruneResult p = prune(net, chosen, cache);
    res.net = std::move(p.net);
    res.dropped_inputs = std::move(p.dropped_inputs);
    res.threshold = chosen;
    return res;
}

double cross_validate(const Dataset& data, const TrainConfig& cfg, int folds) {
    const auto fold_rows = stratified_folds(data, folds, cfg.seed);
    double sum_c = 0.0;
    for (int f = 0; f < folds; ++f) {
        std::vector<int> train_rows;
        for (int g = 0; g < folds; ++g)
            if (g != f)
                train_rows.insert(train_rows.end(), fold_rows[g].begin(),
                                  fold_rows[g].end());
        std::sort(train_rows.begin(), train_rows.end());
        const Dataset dtrain = take_rows(data, train_rows);
        const Dataset dval = take_rows(data, fold_rows[f]);

        Network net = init_network(cfg.full_shape(data.n_cols), cfg.base_kind,
                                   cfg.grid, 3, cfg.xi_b, cfg.xi_s, cfg.seed);
        TrainResult tr = train(net, dtrain, cfg);
        AutoPruneResult pr = auto_prune(tr.net, dtrain, cfg);
        ForwardCache vc = forward(pr.net, dval.X, dval.n_rows);
        sum_c += concordance_index(vc.theta(), dval.outcome);
    }
    return sum_c / folds;
}

namespace {

TrainConfig sample_config(const SearchSpace& sp, std::mt19937_64& rng,
                          std::uint64_t trial_seed) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const auto log_uniform = [&](double lo, double hi) {
        return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * u01(rng));
    };
    TrainConfig c;
    c.learning_rate = log_uniform(sp.lr_min, sp.lr_max);
    c.grid = sp.grid_choices[static_cast<std::size_t>(u01(rng) * sp.grid_choices.size()) %
                             sp.grid_choices.size()];
    c.lambda = log_uniform(sp.lambda_min, sp.lambda_max);
    c.lambda_ent = sp.lambda_ent_max * u01(rng);
    c.lambda_coef = sp.lambda_coef_max * u01(rng);
    c.xi_b = sp.xi_min + (sp.xi_max - sp.xi_min) * u01(rng);
    c.xi_s = sp.xi_min + (sp.xi_max - sp.xi_min) * u01(rng);
    const int layer_span = sp.max_hidden_layers - sp.min_hidden_layers + 1;
    const int n_hidden = sp.min_hidden_layers +
                         static_cast<int>(u01(rng) * layer_span) % layer_span;
    c.hidden.clear();
    for (int h = 0; h < n_hidden; ++h)
        c.hidden.push_back(1 + static_cast<int>(u01(rng) * sp.max_hidden_width) %
                                   sp.max_hidden_width);
    c.base_kind = sp.base_choices[static_cast<std::size_t>(
                                      u01(rng) * sp.base_choices.size()) %
                                  sp.base_choices.size()];
    c.early_stopping = u01(rng) < 0.5;
    if (c.early_stopping)
        c.steps = sp.steps_max;
    else
        c.steps = sp.steps_min +
                  static_cast<int>(u01(rng) * (sp.steps_max - sp.steps_min + 1)) %
                      (sp.steps_max - sp.steps_min + 1);
    c.seed = trial_seed;
    return c;
}

}  // namespace

SearchResult random_search(const Dataset& data, const SearchSpace& space,
                           int trials, std::uint64_t seed, int folds, int jobs) {
    if (trials < 1) throw std::invalid_argument("random_search: trials >= 1");
    // sample every config up front from one stream, then score
    std::mt19937_64 rng(seed);
    std::vector<SearchTrial> board(trials);
    for (int t = 0; t < trials; ++t)
        board[t].cfg = sample_config(space, rng, seed * 1000003ULL + t);

    const auto score = [&](int t) {
        try {
            board[t].mean_c = cross_validate(data, board[t].cfg, folds);
        } catch (const std::exception&) {
            board[t].mean_c = 0.0;  // infeasible configs lose, not crash
        }
    };
    if (jobs <= 1) {
        for (int t = 0; t < trials; ++t) score(t);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < jobs; ++w)
            pool.emplace_back([&] {
                for (int t = next.fetch_add(1); t < trials; t = next.fetch_add(1))
                    score(t);
            });
        for (auto& th : pool) th.join();
    }

    SearchResult res;
    res.leaderboard = std::move(board);
    int best = 0;
    for (int t = 1; t < trials; ++t)
        if (res.leaderboard[t].mean_c > res.leaderboard[best].mean_c) best = t;
    res.best = res.leaderboard[best].cfg;
    return res;
}

void write_leaderboard_csv(const SearchResult& res, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "trial,learning_rate,steps,lambda,lambda_ent,lambda_coef,early_stopping,"
         "grid,base_kind,xi_b,xi_s,hidden,mean_c\n";
    f.precision(10);
    for (std::size_t t = 0; t < res.leaderboard.size(); ++t) {
        const auto& tr = res.leaderboard[t];
        f << t << ',' << tr.cfg.learning_rate << ',' << tr.cfg.steps << ','
          << tr.cfg.lambda << ',' << tr.cfg.lambda_ent << ',' << tr.cfg.lambda_coef
          << ',' << (tr.cfg.early_stopping ? 1 : 0) << ',' << tr.cfg.grid << ','
          << (tr.cfg.base_kind == BasisKind::identity ? "identity" : "silu") << ','
          << tr.cfg.xi_b << ',' << tr.cfg.xi_s << ',';
        for (std::size_t h = 0; h < tr.cfg.hidden.size(); ++h) {
            if (h) f << ' ';
            f << tr.cfg.hidden[h];
        }
        f << ',' << tr.mean_c << '\n';
    }
}

std::string SearchSpace::to_json() const {
    json j;
    j["lr_min"] = lr_min;
    j["lr_max"] = lr_max;
    j["grid_choices"] = grid_choices;
    j["lambda_min"] = lambda_min;
    j["lambda_max"] = lambda_max;
    j["lambda_ent_max"] = lambda_ent_max;
    j["lambda_coef_max"] = lambda_coef_max;
    j["xi_min"] = xi_min;
    j["xi_max"] = xi_max;
    j["min_hidden_layers"] = min_hidden_layers;
    j["max_hidden_layers"] = max_hidden_layers;
    j["max_hidden_width"] = max_hidden_width;
    j["steps_min"] = steps_min;
    j["steps_max"] = steps_max;
    std::vector<std::string> bases;
    for (BasisKind b : base_choices)
        bases.push_back(b == BasisKind::identity ? "identity" : "silu");
    j["base_choices"] = bases;
    return j.dump(2);
}

SearchSpace SearchSpace::from_json(const std::string& text) {
    const json j = json::parse(text);
    SearchSpace s;
    s.lr_min = j.value("lr_min", s.lr_min);
    s.lr_max = j.value("lr_max", s.lr_max);
    s.grid_choices = j.value("grid_choices", s.grid_choices);
    s.lambda_min = j.value("lambda_min", s.lambda_min);
    s.lambda_max = j.value("lambda_max", s.lambda_max);
    s.lambda_ent_max = j.value("lambda_ent_max", s.lambda_ent_max);
    s.lambda_coef_max = j.value("lambda_coef_max", s.lambda_coef_max);
    s.xi_min = j.value("xi_min", s.xi_min);
    s.xi_max = j.value("xi_max", s.xi_max);
    s.min_hidden_layers = j.value("min_hidden_layers", s.min_hidden_layers);
    s.max_hidden_layers = j.value("max_hidden_layers", s.max_hidden_layers);
    s.max_hidden_width = j.value("max_hidden_width", s.max_hidden_width);
    s.steps_min = j.value("steps_min", s.steps_min);
    s.steps_max = j.value("steps_max", s.steps_max);
    if (j.contains("base_choices")) {
        s.base_choices.clear();
        for (const auto& b : j["base_choices"])
            s.base_choices.push_back(b.get<std::string>() == "identity"
                                         ? BasisKind::identity
                                         : BasisKind::silu);
    }
    return s;
}

}  // namespace survkan
