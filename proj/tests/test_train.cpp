#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "survkan/cox.hpp"
#include "survkan/data.hpp"
#include "survkan/network.hpp"
#include "survkan/train.hpp"

using namespace survkan;

namespace {

Dataset small_linear(int n, std::uint64_t seed, int d = 2) {
    GeneratorSpec spec;
    spec.formula = "linear";
    spec.linear_beta = std::vector<double>(d, 1.0);
    if (d > 1) spec.linear_beta[1] = -0.8;
    spec.n_train = n;
    spec.n_test = 10;
    spec.noise_features = 0;
    spec.seed = seed;
    return generate(spec).train;
}

}  // namespace

TEST_CASE("adam_step matches an independent scalar trace") {
    // hand-rolled Adam with the same constants
    std::vector<double> p = {1.0, -2.0};
    std::vector<double> m = {0, 0}, v = {0, 0};
    std::vector<double> lib_p = p;
    AdamState st(2);
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 1; t <= 25; ++t) {
        const std::vector<double> g = {u(rng), u(rng)};
        for (int i = 0; i < 2; ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(b1, t));
            const double vh = v[i] / (1 - std::pow(b2, t));
            p[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
        adam_step(lib_p, g, st, lr);
        for (int i = 0; i < 2; ++i) CHECK(std::fabs(lib_p[i] - p[i]) < 1e-12);
    }
}

TEST_CASE("lr = 0 leaves parameters untouched") {
    std::vector<double> p = {0.5, 1.5, -3.0};
    const auto orig = p;
    AdamState st(3);
    adam_step(p, {1.0, -2.0, 0.3}, st, 0.0);
    CHECK(p == orig);
}

TEST_CASE("training is deterministic and decreases the objective") {
    const Dataset data = small_linear(400, 5);
    TrainConfig cfg;
    cfg.steps = 40;
    cfg.learning_rate = 0.02;
    cfg.lambda = 0.001;
    cfg.early_stopping = false;
    cfg.seed = 3;
    cfg.hidden = {};
    const Network net = init_network(cfg.full_shape(data.n_cols), cfg.base_kind,
                                     cfg.grid, 3, cfg.xi_b, cfg.xi_s, cfg.seed);

    const TrainResult a = train(net, data, cfg);
    const TrainResult b = train(net, data, cfg);
    CHECK(network_to_json(a.net) == network_to_json(b.net));
    CHECK(a.history.train_loss == b.history.train_loss);

    REQUIRE(a.history.train_loss.size() == 40);
    CHECK(a.history.train_loss.back() < a.history.train_loss.front());
    CHECK(a.history.val_c_index.empty());  // no early stopping, no val track
}

TEST_CASE("early stopping restores the best validation snapshot") {
    const Dataset data = small_linear(500, 8);
    TrainConfig cfg;
    cfg.steps = 80;
    cfg.learning_rate = 0.05;
    cfg.early_stopping = true;
    cfg.patience = 15;
    cfg.seed = 2;
    const Network net = init_network(cfg.full_shape(data.n_cols), cfg.base_kind,
                                     cfg.grid, 3, cfg.xi_b, cfg.xi_s, cfg.seed);
    const TrainResult r = train(net, data, cfg);
    REQUIRE(!r.history.val_c_index.empty());
    REQUIRE(r.history.best_step >= 0);
    const double best = r.history.val_c_index[r.history.best_step];
    for (double c : r.history.val_c_index) CHECK(best >= c - 1e-12);
}

TEST_CASE("heavier regularization shrinks edge activity") {
    const Dataset data = small_linear(400, 12, 3);
    const auto mean_l1 = [&](double lambda) {
        TrainConfig cfg;
        cfg.steps = 60;
        cfg.learning_rate = 0.03;
        cfg.lambda = lambda;
        cfg.lambda_ent = 2.0;
        cfg.lambda_coef = 1.0;
        cfg.early_stopping = false;
        cfg.seed = 4;
        const Network net = init_network(cfg.full_shape(data.n_cols),
                                         cfg.base_kind, cfg.grid, 3, cfg.xi_b,
                                         cfg.xi_s, cfg.seed);
        const TrainResult r = train(net, data, cfg);
        const ForwardCache c = forward(r.net, data.X, data.n_rows);
        const RegPenalty p = penalty(r.net, c, 0.0, 0.0);
        double s = 0;
        for (double v : p.layer_l1) s += v;
        return s;
    };
    CHECK(mean_l1(0.5) < mean_l1(0.0));
}

TEST_CASE("linear-data parity with CoxPH within 0.02") {
    GeneratorSpec spec;
    spec.formula = "linear";
    spec.linear_beta = {1.0, -0.8, 0.5};
    spec.n_train = 1500;
    spec.n_test = 600;
    spec.noise_features = 0;
    spec.seed = 19;
    const GeneratedData gd = generate(spec);

    const CoxPHModel m = coxph_fit(gd.train.X, gd.train.n_rows, gd.train.n_cols,
                                   gd.train.outcome);
    const auto ph_theta = coxph_predict(m, gd.test.X, gd.test.n_rows);
    const double c_ph = concordance_index(ph_theta, gd.test.outcome);

    TrainConfig cfg;
    cfg.steps = 150;
    cfg.learning_rate = 0.02;
    cfg.lambda = 0.001;
    cfg.early_stopping = true;
    cfg.seed = 6;
    cfg.base_kind = BasisKind::identity;
    const Network net = init_network(cfg.full_shape(3), cfg.base_kind, cfg.grid,
                                     3, cfg.xi_b, cfg.xi_s, cfg.seed);
    const TrainResult r = train(net, gd.train, cfg);
    const ForwardCache c = forward(r.net, gd.test.X, gd.test.n_rows);
    const double c_kan = concordance_index(c.theta(), gd.test.outcome);

    CHECK(std::fabs(c_kan - c_ph) < 0.02);
}

TEST_CASE("auto_prune sweeps thresholds deterministically") {
    const Dataset data = small_linear(400, 23, 4);
    TrainConfig cfg;
    cfg.steps = 50;
    cfg.learning_rate = 0.03;
    cfg.lambda = 0.01;
    cfg.early_stopping = false;
    cfg.seed = 1;
    const Network net = init_network(cfg.full_shape(4), cfg.base_kind, cfg.grid,
                                     3, cfg.xi_b, cfg.xi_s, cfg.seed);
    const TrainResult r = train(net, data, cfg);

    const AutoPruneResult a = auto_prune(r.net, data, cfg);
    const AutoPruneResult b = auto_prune(r.net, data, cfg);
    CHECK(a.threshold == b.threshold);
    CHECK(network_to_json(a.net) == network_to_json(b.net));

    // fixed threshold path
    TrainConfig fixed = cfg;
    fixed.prune_threshold = 0.0;
    const AutoPruneResult c = auto_prune(r.net, data, fixed);
    CHECK(c.threshold == 0.0);
    for (const auto& layer : c.net.layers)
        for (std::size_t e = 0; e < layer.size(); ++e)
            CHECK(layer[e].active == r.net.layers[&layer - &c.net.layers[0]][e].active);
}

TEST_CASE("cross_validate is deterministic and in range") {
    const Dataset data = small_linear(300, 31);
    TrainConfig cfg;
    cfg.steps = 25;
    cfg.learning_rate = 0.03;
    cfg.early_stopping = false;
    cfg.seed = 9;
    const double a = cross_validate(data, cfg, 4);
    const double b = cross_validate(data, cfg, 4);
    CHECK(a == b);
    CHECK(a > 0.0);
    CHECK(a < 1.0);
}

TEST_CASE("random_search returns the leaderboard argmax, deterministic") {
    const Dataset data = small_linear(240, 40);
    SearchSpace space;
    const SearchResult a = random_search(data, space, 6, 11, 3, 1);
    REQUIRE(a.leaderboard.size() == 6);
    double best = -1;
    for (const auto& t : a.leaderboard) best = std::max(best, t.mean_c);
    const double best_score = cross_validate(data, a.best, 3);
    CHECK(best_score == doctest::Approx(best));

    const SearchResult b = random_search(data, space, 6, 11, 3, 1);
    CHECK(a.best.to_json() == b.best.to_json());
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(a.leaderboard[i].mean_c == b.leaderboard[i].mean_c);

    // sampled configs stay inside the space
    for (const auto& t : a.leaderboard) {
        CHECK(t.cfg.learning_rate >= space.lr_min);
        CHECK(t.cfg.learning_rate <= space.lr_max);
        CHECK(t.cfg.lambda >= space.lambda_min);
        CHECK(t.cfg.lambda <= space.lambda_max);
        CHECK(t.cfg.lambda_ent >= 0.0);
        CHECK(t.cfg.lambda_ent <= space.lambda_ent_max);
        CHECK(t.cfg.hidden.size() <= 2);
        bool grid_ok = false;
        for (int g : space.grid_choices) grid_ok = grid_ok || t.cfg.grid == g;
        CHECK(grid_ok);
    }
}

TEST_CASE("parallel search equals sequential search") {
    const Dataset data = small_linear(200, 50);
    SearchSpace space;
    const SearchResult seq = random_search(data, space, 4, 21, 2, 1);
    const SearchResult par = random_search(data, space, 4, 21, 2, 2);
    REQUIRE(seq.leaderboard.size() == par.leaderboard.size());
    for (std::size_t i = 0; i < seq.leaderboard.size(); ++i) {
        CHECK(seq.leaderboard[i].mean_c == par.leaderboard[i].mean_c);
        CHECK(seq.leaderboard[i].cfg.to_json() == par.leaderboard[i].cfg.to_json());
    }
}

TEST_CASE("TrainConfig and SearchSpace JSON round trips") {
    TrainConfig cfg;
    cfg.learning_rate = 0.035;
    cfg.hidden = {2, 3};
    cfg.prune_threshold = 0.04;
    cfg.base_kind = BasisKind::identity;
    cfg.seed = 99;
    const TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.hidden == cfg.hidden);
    CHECK(back.prune_threshold == cfg.prune_threshold);
    CHECK(back.base_kind == BasisKind::identity);

    SearchSpace sp;
    sp.lr_max = 0.5;
    sp.grid_choices = {4};
    const SearchSpace sp2 = SearchSpace::from_json(sp.to_json());
    CHECK(sp2.to_json() == sp.to_json());
}
