#pragma once

// Deterministic SVG rendering of per-edge activations: training scatter,
// the learned spline curve, and the symbolic overlay when present.

#include <string>

namespace survkan {

struct Network;
struct ForwardCache;

// One 640x480 SVG per active edge, named layer{l}_in{i}_out{j}.svg.
void plot_edges(const Network& net, const ForwardCache& cache,
                const std::string& dir);

}  // namespace survkan
