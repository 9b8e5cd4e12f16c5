#pragma once

// Layered KAN: per-edge spline activations summed at nodes, reverse-mode
// gradients, L1/entropy regularization statistics, and edge pruning.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "survkan/splines.hpp"

namespace survkan {

struct ColumnKind {
    bool categorical = false;
    int n_categories = 0;
};

struct Network {
    std::vector<int> shape;  // [n_0 .. n_L], n_L == 1
    // layers[l] holds n_{l+1} * n_l activations, edge (j out, i in) at
    // index j * n_l + i.
    std::vector<std::vector<Activation>> layers;
    std::vector<ColumnKind> input_meta;

    int n_layers() const { return static_cast<int>(layers.size()); }
    Activation& edge(int l, int j, int i) { return layers[l][j * shape[l] + i]; }
    const Activation& edge(int l, int j, int i) const {
        return layers[l][j * shape[l] + i];
    }
    std::size_t parameter_count() const;
};

Network init_network(const std::vector<int>& shape, BasisKind base_kind, int grid,
                     int degree, double xi_b, double xi_s, std::uint64_t seed);

struct ForwardCache {
    int n_rows = 0;
    // nodes[l]: column-major node values, column i of layer l at
    // [i * n_rows .. (i+1) * n_rows).
    std::vector<std::vector<double>> nodes;
    // edge_post[l][edge]: per-sample post-activations (empty for inactive).
    std::vector<std::vector<std::vector<double>>> edge_post;

    std::span<const double> node_column(int layer, int i) const {
        return {nodes[layer].data() + static_cast<std::size_t>(i) * n_rows,
                static_cast<std::size_t>(n_rows)};
    }
    std::span<const double> theta() const { return node_column(static_cast<int>(nodes.size()) - 1, 0); }
};

// X is row-major, n_rows x n_0.
ForwardCache forward(const Network& net, std::span<const double> X, int n_rows);

struct EdgeGrads {
    double w_b = 0.0;
    double w_s = 0.0;
    std::vector<double> coeffs;
};
using NetGrads = std::vector<std::vector<EdgeGrads>>;

NetGrads zero_grads(const Network& net);
void add_scaled(NetGrads& acc, const NetGrads& g, double scale);

// Reverse pass from dL/dtheta. The cache must come from forward() on the
// same parameters.
NetGrads backward(const Network& net, const ForwardCache& cache,
                  std::span<const double> dL_dtheta);

struct RegPenalty {
    std::vector<std::vector<double>> edge_l1;  // [layer][edge]
    std::vector<double> layer_l1;
    std::vector<double> layer_entropy;
    std::vector<double> coeff_l1;  // per layer
    double total = 0.0;
};

RegPenalty penalty(const Network& net, const ForwardCache& cache,
                   double lambda_ent, double lambda_coef);

NetGrads penalty_grads(const Network& net, const ForwardCache& cache,
                       double lambda_ent, double lambda_coef);

// Single reverse pass for the training objective: gradients of
// sum-free loss upstream dL_dtheta plus lambda * penalty total.
NetGrads combined_grads(const Network& net, const ForwardCache& cache,
                        std::span<const double> dL_dtheta, double lambda,
                        double lambda_ent, double lambda_coef);

// Risk scores are shift invariant, but hidden-node inputs are not: an edge
// can carry a constant offset that only positions the downstream spline's
// operating point. Such offsets inflate the edge's |phi| score without
// carrying information, hiding dead edges from pruning. This rewrites the
// network into an equivalent one whose hidden-feeding edges average zero
// over X: the offset moves downstream by translating the receiving edges'
// knot grids and refitting their coefficients on the observed samples.
void center_hidden_edges(Network& net, std::span<const double> X, int n_rows);

struct PruneTooAggressive : std::runtime_error {
    double largest_feasible;
    explicit PruneTooAggressive(double t)
        : std::runtime_error("pruning disconnected the output node"),
          largest_feasible(t) {}
};

struct PruneResult {
    Network net;
    std::vector<int> dropped_inputs;  // input columns with no active edge left
};

// Deactivates edges with training-set L1 below `threshold`, then cascades:
// a hidden node with no active incoming or no active outgoing edges loses
// all its edges. Throws PruneTooAggressive if the output disconnects.
PruneResult prune(const Network& net, double threshold, const ForwardCache& cache);

// Flat parameter tree in a fixed order (all edges, active or not):
// per edge w_b, w_s, coeffs...
std::vector<double> flatten_params(const Network& net);
void unflatten_params(Network& net, std::span<const double> flat);
std::vector<double> flatten_grads(const Network& net, const NetGrads& g);

// JSON document, version "survkan-model/1".
std::string network_to_json(const Network& net);
Network network_from_json(const std::string& json_text);
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

}  // namespace survkan
