#pragma once

// Peak-position fingerprint metrics over layer curves, per-model profile
// aggregation, and LOWESS depth trajectories.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "probe.hpp"
#include "repr_store.hpp"
#include "rng.hpp"
#include "special.hpp"

namespace fp {

/// Normalized depth of the best layer; ties go to the earliest layer.
inline double peak_position(std::span<const double> scores) {
    if (scores.size() < 2) throw ShapeError("curve needs at least 2 layers");
    const auto it = std::max_element(scores.begin(), scores.end()); // first maximum
    return normalized_depth(static_cast<std::size_t>(it - scores.begin()), scores.size() - 1);
}

inline double peak_strength(std::span<const double> scores) {
    if (scores.empty()) throw ShapeError("empty curve");
    return *std::max_element(scores.begin(), scores.end());
}

/// Fraction of layers scoring at least 70% of the peak. Negative scores are
/// clamped to zero; a non-positive peak gives 1.
inline double peak_width(std::span<const double> scores) {
    const double peak = peak_strength(scores);
    if (peak <= 0.0) return 1.0;
    const double cut = 0.7 * peak;
    const auto n = std::count_if(scores.begin(), scores.end(), [&](double s) { return std::max(s, 0.0) >= cut; });
    return static_cast<double>(n) / static_cast<double>(scores.size());
}

/// Shannon entropy (nats) of the clamped, normalized score distribution.
inline double layer_entropy(std::span<const double> scores) {
    double total = 0.0;
    for (double s : scores) total += std::max(s, 0.0);
    if (!(total > 0.0)) throw UndefinedEntropyError("entropy undefined: no positive score");
    double h = 0.0;
    for (double s : scores) {
        const double q = std::max(s, 0.0) / total;
        if (q > 0.0) h -= q * std::log(q);
    }
    return std::max(h, 0.0);
}

/// Delta from feature 1 to feature 2: positive when feature 2 peaks later.
inline double positional_delta(double from, double to) { return to - from; }

struct DeltaRecord {
    std::string from;
    std::string to;
    double delta = 0.0;
};

inline DeltaRecord make_delta(std::string from, double from_pos, std::string to, double to_pos) {
    return {std::move(from), std::move(to), positional_delta(from_pos, to_pos)};
}

struct FingerprintMetrics {
    double peak_position = 0.0;
    double peak_strength = 0.0;
    double peak_width = 0.0;
    std::optional<double> entropy; // absent when every score is <= 0
};

inline FingerprintMetrics compute_metrics(const LayerCurve& curve) {
    FingerprintMetrics m;
    m.peak_position = peak_position(curve.scores);
    m.peak_strength = peak_strength(curve.scores);
    m.peak_width = peak_width(curve.scores);
    try {
        m.entropy = layer_entropy(curve.scores);
    } catch (const UndefinedEntropyError&) {
    }
    return m;
}

// ---------------------------------------------------------------------------
// Profiles

struct FingerprintProfile {
    std::string model_id;
    Architecture architecture = Architecture::Transformer;
    std::uint64_t param_count = 0;
    std::array<std::optional<double>, kNumGroups> position{};
    std::array<std::optional<double>, kNumGroups> strength{};

    bool complete() const {
        return std::all_of(position.begin(), position.end(), [](const auto& p) { return p.has_value(); });
    }

    std::optional<double> at(TargetGroup g) const { return position[group_index(g)]; }
};

namespace detail {

// Order-independent mean: sorting first makes the floating-point sum exact
// under any permutation of the inputs.
inline double stable_mean(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

} // namespace detail

/// Collapse one model's curves into its group profile: mean over datasets per
/// target, then mean over the targets of each group. Curves for unknown
/// targets are ignored; groups with no curve stay absent.
inline FingerprintProfile aggregate_profile(std::span<const LayerCurve> curves, const std::string& model_id,
                                            Architecture architecture, std::uint64_t param_count) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_target;
    for (const auto& c : curves) {
        if (!model_id.empty() && c.model_id != model_id) continue;
        if (!find_target(c.target)) continue;
        auto& slot = per_target[c.target];
        slot.first.push_back(peak_position(c.scores));
        slot.second.push_back(peak_strength(c.scores));
    }
    std::array<std::vector<double>, kNumGroups> pos, str;
    for (const auto& [name, values] : per_target) {
        const auto g = group_index(find_target(name)->group);
        pos[g].push_back(detail::stable_mean(values.first));
        str[g].push_back(detail::stable_mean(values.second));
    }
    FingerprintProfile p;
    p.model_id = model_id;
    p.architecture = architecture;
    p.param_count = param_count;
    for (std::size_t g = 0; g < kNumGroups; ++g) {
        if (pos[g].empty()) continue;
        p.position[g] = detail::stable_mean(pos[g]);
        p.strength[g] = detail::stable_mean(str[g]);
    }
    return p;
}

// ---------------------------------------------------------------------------
// LOWESS trajectories

struct TrajectoryPoint {
    double depth = 0.0;
    double score = 0.0;
};

struct LowessOptions {
    double bandwidth = 0.3;
    std::size_t boot_n = 1000;
    std::uint64_t seed = 0;
    double level = 0.95;
    std::size_t grid_size = 101;
    bool normalize = true; // min-max scale scores before smoothing
};

struct Trajectory {
    std::vector<double> depth;
    std::vector<double> fit;
    std::vector<double> ci_low;
    std::vector<double> ci_high;
};

namespace detail {

inline double tricube(double u) {
    if (u >= 1.0) return 0.0;
    const double t = 1.0 - u * u * u;
    return t * t * t;
}

} // namespace detail

/// Kernel weights of the local fit at x0. The radius is the distance to the
/// ceil(bandwidth * n)-th nearest point (at least 2), extended to reach a
/// second distinct depth, then widened by 1% so the boundary point keeps a
/// positive weight.
inline std::vector<double> lowess_weights(std::span<const double> xs, double x0, double bandwidth) {
    const std::size_t n = xs.size();
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) dist[i] = std::fabs(xs[i] - x0);
    std::vector<double> sorted = dist;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(bandwidth * static_cast<double>(n))), 2, n);
    double h = sorted[k - 1];

    // Nearest depth, then the nearest point at any other depth.
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (dist[i] < dist[nearest]) nearest = i;
    double second = -1.0;
    for (std::size_t i = 0; i < n; ++i)
        if (xs[i] != xs[nearest] && (second < 0.0 || dist[i] < second)) second = dist[i];
    if (second > h) h = second;
    if (h <= 0.0) h = 1.0;
    h *= 1.01;

    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = detail::tricube(dist[i] / h);
    return w;
}

/// Local-linear weighted least-squares value at x0.
inline double lowess_fit_at(std::span<const double> xs, std::span<const double> ys, double x0, double bandwidth) {
    const auto w = lowess_weights(xs, x0, bandwidth);
    // Sums are taken about the first point so constant inputs come back exact.
    const double x_ref = xs[0], y_ref = ys[0];
    double sw = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sw += w[i];
        sx += w[i] * (xs[i] - x_ref);
        sy += w[i] * (ys[i] - y_ref);
    }
    const double mx = x_ref + sx / sw, my = y_ref + sy / sw;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += w[i] * (xs[i] - mx) * (xs[i] - mx);
        sxy += w[i] * (xs[i] - mx) * (ys[i] - my);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    return my + slope * (x0 - mx);
}

/// Smoothed trajectory on an evenly spaced depth grid over [0, 1] with a
/// percentile-bootstrap band (points resampled with replacement).
inline Trajectory lowess_trajectory(std::span<const TrajectoryPoint> points, const LowessOptions& opt = {}) {
    if (points.size() < 5) throw DegenerateFitError("LOWESS needs at least 5 points");
    if (!(opt.bandwidth > 0.0 && opt.bandwidth <= 1.0)) throw DegenerateFitError("bandwidth must lie in (0, 1]");
    if (opt.grid_size < 2) throw DegenerateFitError("grid needs at least 2 points");

    const std::size_t n = points.size();
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = points[i].depth;
        ys[i] = points[i].score;
    }
    if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs[0]; }))
        throw DegenerateFitError("all points share one depth");
    if (opt.normalize) {
        const auto [lo, hi] = std::minmax_element(ys.begin(), ys.end());
        const double min = *lo, range = *hi - *lo;
        if (range > 0.0)
            for (double& y : ys) y = (y - min) / range;
    }

    Trajectory t;
    t.depth.resize(opt.grid_size);
    for (std::size_t g = 0; g < opt.grid_size; ++g)
        t.depth[g] = static_cast<double>(g) / static_cast<double>(opt.grid_size - 1);
    t.fit.resize(opt.grid_size);
    for (std::size_t g = 0; g < opt.grid_size; ++g) t.fit[g] = lowess_fit_at(xs, ys, t.depth[g], opt.bandwidth);

    std::vector<std::vector<double>> boot(opt.grid_size);
    const CounterRng base(opt.seed);
    std::vector<double> bx(n), by(n);
    for (std::size_t b = 0; b < opt.boot_n; ++b) {
        CounterRng rng = base.split(b);
        for (std::size_t i = 0; i < n; ++i) {
            const auto j = static_cast<std::size_t>(rng.below(n));
            bx[i] = xs[j];
            by[i] = ys[j];
        }
        if (std::all_of(bx.begin(), bx.end(), [&](double x) { return x == bx[0]; })) continue;
        for (std::size_t g = 0; g < opt.grid_size; ++g) boot[g].push_back(lowess_fit_at(bx, by, t.depth[g], opt.bandwidth));
    }
    const double alpha = 1.0 - opt.level;
    t.ci_low.resize(opt.grid_size);
    t.ci_high.resize(opt.grid_size);
    for (std::size_t g = 0; g < opt.grid_size; ++g) {
        auto& v = boot[g];
        if (v.empty()) {
            t.ci_low[g] = t.ci_high[g] = t.fit[g];
            continue;
        }
        std::sort(v.begin(), v.end());
        t.ci_low[g] = special::quantile_sorted(v, alpha / 2.0);
        t.ci_high[g] = special::quantile_sorted(v, 1.0 - alpha / 2.0);
    }
    return t;
}

} // namespace fp
