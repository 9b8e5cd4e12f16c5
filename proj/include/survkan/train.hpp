#pragma once

// Full-batch Adam training on the Cox loss plus regularization, early
// stopping, auto-pruning, k-fold cross-validation, and random search.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "survkan/data.hpp"
#include "survkan/network.hpp"

namespace survkan {

struct DivergedError : std::runtime_error {
    int step;
    explicit DivergedError(int s)
        : std::runtime_error("training diverged at step " + std::to_string(s)),
          step(s) {}
};

struct TrainConfig {
    double learning_rate = 0.01;
    int steps = 300;
    double lambda = 0.0;
    double lambda_ent = 2.0;
    double lambda_coef = 1.0;
    bool early_stopping = true;
    int patience = 30;
    std::optional<double> prune_threshold;  // nullopt = auto (validation sweep)
    int grid = 5;
    BasisKind base_kind = BasisKind::silu;
    double xi_b = 0.1;
    double xi_s = 0.1;
    std::uint64_t seed = 0;
    int grid_refresh_every = 10;
    std::vector<int> hidden;  // hidden layer widths

    std::vector<int> full_shape(int n_features) const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> penalty_total;
    std::vector<double> val_c_index;  // empty unless early stopping
    int best_step = -1;
};

struct TrainResult {
    Network net;
    TrainHistory history;
};

TrainResult train(const Network& net, const Dataset& data, const TrainConfig& cfg);

// Elementwise bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8).
struct AdamState {
    std::vector<double> m, v;
    int t = 0;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};
void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               AdamState& state, double lr);

struct AutoPruneResult {
    Network net;
    double threshold = 0.0;
    std::vector<int> dropped_inputs;
};

// Sweeps candidate thresholds (the sorted edge-L1 values) and keeps the one
// maximizing validation C-index; ties pick the larger (sparser) threshold.
// With a fixed cfg.prune_threshold the sweep is skipped.
AutoPruneResult auto_prune(const Network& net, const Dataset& data,
                           const TrainConfig& cfg);

double cross_validate(const Dataset& data, const TrainConfig& cfg, int folds);

struct SearchSpace {
    double lr_min = 1e-3, lr_max = 1e-1;           // log-uniform
    std::vector<int> grid_choices = {3, 4, 5};
    double lambda_min = 1e-4, lambda_max = 2e-2;   // log-uniform
    double lambda_ent_max = 14.0;
    double lambda_coef_max = 5.0;
    double xi_min = 0.001, xi_max = 0.2;
    int min_hidden_layers = 0;
    int max_hidden_layers = 2;
    int max_hidden_width = 20;
    int steps_min = 50, steps_max = 300;
    std::vector<BasisKind> base_choices = {BasisKind::identity, BasisKind::silu};

    std::string to_json() const;
    static SearchSpace from_json(const std::string& text);
};

struct SearchTrial {
    TrainConfig cfg;
    double mean_c = 0.0;
};

struct SearchResult {
    TrainConfig best;
    std::vector<SearchTrial> leaderboard;  // in trial order
};

SearchResult random_search(const Dataset& data, const SearchSpace& space,
                           int trials, std::uint64_t seed, int folds = 4,
                           int jobs = 1);

void write_leaderboard_csv(const SearchResult& res, const std::string& path);

}  // namespace survkan
