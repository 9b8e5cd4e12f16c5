#include "survkan/plot.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "survkan/network.hpp"
#include "survkan/symbolic.hpp"

namespace survkan {

namespace {

constexpr double kW = 640, kH = 480;
constexpr double kL = 60, kR = 20, kT = 20, kB = 40;  // margins

// Largest "nice" step (1/2/5 x 10^k) giving at most `max_ticks` intervals.
double nice_step(double range, int max_ticks) {
    const double raw = range / max_ticks;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * mag >= raw) return m * mag;
    return 10.0 * mag;
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(6);
    ss << v;
    return ss.str();
}

struct Axis {
    double lo, hi;
    double to_px(double v, double p0, double p1) const {
        if (hi == lo) return 0.5 * (p0 + p1);
        return p0 + (v - lo) / (hi - lo) * (p1 - p0);
    }
};

void write_svg(const std::string& path, const std::vector<double>& xs,
               const std::vector<double>& ys, const Activation& act) {
    Axis ax{*std::min_element(xs.begin(), xs.end()),
            *std::max_element(xs.begin(), xs.end())};
    Axis ay{*std::min_element(ys.begin(), ys.end()),
            *std::max_element(ys.begin(), ys.end())};
    if (ax.hi == ax.lo) {
        ax.lo -= 1;
        ax.hi += 1;
    }
    if (ay.hi == ay.lo) {
        ay.lo -= 1;
        ay.hi += 1;
    }
    const double pad = 0.05 * (ay.hi - ay.lo);
    ay.lo -= pad;
    ay.hi += pad;

    const auto px = [&](double v) { return ax.to_px(v, kL, kW - kR); };
    const auto py = [&](double v) { return ay.to_px(v, kH - kB, kT); };

    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
         "viewBox=\"0 0 640 480\">\n"
      << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";

    // axes and ticks
    f << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR
      << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\""
      << kH - kB << "\" stroke=\"black\"/>\n";
    const double sx = nice_step(ax.hi - ax.lo, 8);
    for (double t = std::ceil(ax.lo / sx) * sx; t <= ax.hi + 1e-12 * sx; t += sx) {
        const double X = px(t);
        f << "<line x1=\"" << X << "\" y1=\"" << kH - kB << "\" x2=\"" << X
          << "\" y2=\"" << kH - kB + 5 << "\" stroke=\"black\"/>\n"
          << "<text x=\"" << X << "\" y=\"" << kH - kB + 18
          << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt(t) << "</text>\n";
    }
    const double sy = nice_step(ay.hi - ay.lo, 8);
    for (double t = std::ceil(ay.lo / sy) * sy; t <= ay.hi + 1e-12 * sy; t += sy) {
        const double Y = py(t);
        f << "<line x1=\"" << kL - 5 << "\" y1=\"" << Y << "\" x2=\"" << kL
          << "\" y2=\"" << Y << "\" stroke=\"black\"/>\n"
          << "<text x=\"" << kL - 8 << "\" y=\"" << Y + 4
          << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(t) << "</text>\n";
    }

    // training scatter
    for (std::size_t i = 0; i < xs.size(); ++i)
        f << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(ys[i])
          << "\" r=\"1.5\" fill=\"steelblue\" fill-opacity=\"0.35\"/>\n";

    // learned activation curve over the observed x range
    constexpr int kCurve = 200;
    const auto polyline = [&](auto eval, const char* color) {
        std::ostringstream pts;
        for (int i = 0; i <= kCurve; ++i) {
            const double x = ax.lo + (ax.hi - ax.lo) * i / kCurve;
            const double y = eval(x);
            if (!std::isfinite(y)) continue;
            pts << px(x) << ',' << py(std::clamp(y, ay.lo, ay.hi)) << ' ';
        }
        f << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\""
          << color << "\" stroke-width=\"1.5\"/>\n";
    };
    polyline([&](double x) { return activation_value(act, x); }, "black");
    if (act.symbolic)
        polyline([&](double x) { return act.symbolic->eval(x); }, "crimson");

    f << "</svg>\n";
}

}  // namespace

void plot_edges(const Network& net, const ForwardCache& cache,
                const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (int l = 0; l < net.n_layers(); ++l) {
        const int n_in = net.shape[l];
        for (int j = 0; j < net.shape[l + 1]; ++j)
            for (int i = 0; i < n_in; ++i) {
                const Activation& a = net.edge(l, j, i);
                if (!a.active) continue;
                const auto xcol = cache.node_column(l, i);
                const auto& y = cache.edge_post[l][j * n_in + i];
                std::vector<double> xs(xcol.begin(), xcol.end());
                std::ostringstream name;
                name << dir << "/layer" << l << "_in" << i << "_out" << j << ".svg";
                write_svg(name.str(), xs, y, a);
            }
    }
}

}  // namespace survkan
