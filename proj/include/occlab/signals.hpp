#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "occlab/errors.hpp"

namespace occlab {

/// Box bounds [lower, upper] shared by both control channels.
struct ControlBounds {
    double lower = 0.0;
    double upper = 0.0;

    void validate() const {
        if (!(0.0 < lower) || !(lower < upper))
            throw ValidationError("bounds", "control bounds require 0 < lower < upper");
    }
};

/// Per-channel mean constraints; must be interior to the box.
struct MeanTargets {
    double mean0 = 0.0;
    double mean1 = 0.0;

    void validate(const ControlBounds& bounds) const {
        bounds.validate();
        if (!(bounds.lower < mean0 && mean0 < bounds.upper))
            throw ValidationError("means", "channel-0 mean must lie strictly inside the bounds");
        if (!(bounds.lower < mean1 && mean1 < bounds.upper))
            throw ValidationError("means", "channel-1 mean must lie strictly inside the bounds");
    }
};

/// Scalar T-periodic piecewise-constant signal. Breakpoints are absolute
/// times 0 = t_0 < t_1 < ... < t_n = T; values[i] holds on [t_i, t_{i+1}).
struct PiecewiseSignal {
    double period = 0.0;
    std::vector<double> breakpoints;
    std::vector<double> values;

    std::size_t piece_count() const { return values.size(); }
    double piece_length(std::size_t i) const { return breakpoints[i + 1] - breakpoints[i]; }

    double mean() const {
        double acc = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) acc += values[i] * piece_length(i);
        return acc / period;
    }

    /// Sample at time t, interpreted T-periodically.
    double at(double t) const {
        double s = std::fmod(t, period);
        if (s < 0.0) s += period;
        // upper_bound on breakpoints: values[k] holds on [t_k, t_{k+1})
        auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), s);
        std::size_t idx = static_cast<std::size_t>(it - breakpoints.begin());
        if (idx == 0) return values.front();
        if (idx > values.size()) return values.back();
        return values[idx - 1];
    }

    void validate() const {
        if (!(period > 0.0)) throw ValidationError("breakpoints", "period must be positive");
        if (breakpoints.size() < 2 || breakpoints.size() != values.size() + 1)
            throw ValidationError("breakpoints",
                                  "need n+1 breakpoints for n pieces, at least one piece");
        if (breakpoints.front() != 0.0 || breakpoints.back() != period)
            throw ValidationError("breakpoints", "breakpoints must start at 0 and end at T");
        for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i)
            if (!(breakpoints[i] < breakpoints[i + 1]))
                throw ValidationError("breakpoints", "breakpoints must be strictly increasing");
    }
};

/// T-periodic piecewise-constant two-channel control with box bounds.
/// Both channels share one breakpoint grid. Immutable by convention:
/// operations return new values rather than mutating in place.
struct PeriodicControl {
    double period = 0.0;
    std::vector<double> breakpoints;
    std::vector<double> values0;
    std::vector<double> values1;
    ControlBounds bounds;

    std::size_t piece_count() const { return values0.size(); }
    double piece_length(std::size_t i) const { return breakpoints[i + 1] - breakpoints[i]; }

    PiecewiseSignal channel(int which) const {
        return PiecewiseSignal{period, breakpoints, which == 0 ? values0 : values1};
    }

    double value0_at(double t) const { return channel(0).at(t); }
    double value1_at(double t) const { return channel(1).at(t); }

    void validate() const {
        bounds.validate();
        PiecewiseSignal{period, breakpoints, values0}.validate();
        if (values1.size() != values0.size())
            throw ValidationError("breakpoints", "channels must have one value per piece each");
        for (double v : values0)
            if (!(bounds.lower <= v && v <= bounds.upper))
                throw ValidationError("bounds", "channel-0 value outside [lower, upper]");
        for (double v : values1)
            if (!(bounds.lower <= v && v <= bounds.upper))
                throw ValidationError("bounds", "channel-1 value outside [lower, upper]");
    }
};

/// Exact length-weighted mean of one channel. No quadrature: the signal
/// is piecewise constant.
inline double channel_mean(const PeriodicControl& ctrl, int which) {
    return ctrl.channel(which).mean();
}

/// Euclidean projection (length-weighted) of `values` onto
///   { v : lower <= v_i <= upper,  sum(v_i l_i) / sum(l_i) = target_mean }.
///
/// The KKT system reduces to a single scalar shift applied to every
/// coordinate before clipping (continuous-knapsack structure); the shift
/// is located by bisection and then solved exactly on the identified
/// active set. Idempotent: feasible inputs are returned unchanged.
inline std::vector<double> project_to_feasible(std::vector<double> values,
                                               const std::vector<double>& piece_lengths,
                                               const ControlBounds& bounds, double target_mean) {
    bounds.validate();
    if (!(bounds.lower < target_mean && target_mean < bounds.upper))
        throw ValidationError("means", "projection target must lie strictly inside the bounds");
    if (values.size() != piece_lengths.size() || values.empty())
        throw ValidationError("breakpoints", "projection needs one positive length per value");
    double total = 0.0;
    for (double l : piece_lengths) {
        if (!(l > 0.0)) throw ValidationError("breakpoints", "piece lengths must be positive");
        total += l;
    }

    const auto weighted_mean = [&](double shift) {
        double acc = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i)
            acc += std::clamp(values[i] + shift, bounds.lower, bounds.upper) * piece_lengths[i];
        return acc / total;
    };

    constexpr double kDualTol = 1e-14;
    if (std::abs(weighted_mean(0.0) - target_mean) <= kDualTol) {
        bool inside = true;
        for (double v : values)
            if (v < bounds.lower || v > bounds.upper) inside = false;
        if (inside) return values;
    }

    double lo = bounds.lower - *std::max_element(values.begin(), values.end());
    double hi = bounds.upper - *std::min_element(values.begin(), values.end());
    for (int iter = 0; iter < 200 && hi - lo > kDualTol; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (weighted_mean(mid) < target_mean)
            lo = mid;
        else
            hi = mid;
    }
    const double shift = 0.5 * (lo + hi);

    // Exact solve on the active set the bisection identified: clipped
    // pieces stay clipped, free pieces absorb the residual uniformly.
    double clipped_sum = 0.0, free_sum = 0.0, free_len = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double shifted = values[i] + shift;
        if (shifted <= bounds.lower)
            clipped_sum += bounds.lower * piece_lengths[i];
        else if (shifted >= bounds.upper)
            clipped_sum += bounds.upper * piece_lengths[i];
        else {
            free_sum += values[i] * piece_lengths[i];
            free_len += piece_lengths[i];
        }
    }
    double exact_shift = shift;
    if (free_len > 0.0) exact_shift = (target_mean * total - clipped_sum - free_sum) / free_len;
    for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = std::clamp(values[i] + exact_shift, bounds.lower, bounds.upper);
    return values;
}

/// Single-piece control pinned at the mean targets.
inline PeriodicControl make_constant(double period, const ControlBounds& bounds,
                                     const MeanTargets& means) {
    means.validate(bounds);
    if (!(period > 0.0)) throw ValidationError("breakpoints", "period must be positive");
    return PeriodicControl{period, {0.0, period}, {means.mean0}, {means.mean1}, bounds};
}

/// Rescale channel 0 into channel 1 by the ratio of the mean targets:
/// u1(t) = (mean1/mean0) * u0(t). Yields channel-1 mean == mean1 exactly.
/// Throws if any produced value leaves the box.
inline PeriodicControl proportional_companion(const PeriodicControl& ctrl,
                                              const MeanTargets& means) {
    ctrl.validate();
    means.validate(ctrl.bounds);
    const double ratio = means.mean1 / means.mean0;
    PeriodicControl out = ctrl;
    out.values1.resize(out.values0.size());
    for (std::size_t i = 0; i < out.values0.size(); ++i) {
        const double v = ratio * out.values0[i];
        if (!(ctrl.bounds.lower <= v && v <= ctrl.bounds.upper))
            throw ValidationError("bounds",
                                  "proportional companion leaves the box on piece " +
                                      std::to_string(i));
        out.values1[i] = v;
    }
    return out;
}

/// Uniform-grid control with the given per-piece values.
inline PeriodicControl make_uniform(double period, const ControlBounds& bounds,
                                    std::vector<double> values0, std::vector<double> values1) {
    const std::size_t n = values0.size();
    std::vector<double> bps(n + 1);
    for (std::size_t i = 0; i <= n; ++i)
        bps[i] = period * static_cast<double>(i) / static_cast<double>(n);
    bps.back() = period;
    return PeriodicControl{period, std::move(bps), std::move(values0), std::move(values1), bounds};
}

inline void to_json(nlohmann::json& j, const PeriodicControl& ctrl) {
    j = nlohmann::json{{"period", ctrl.period},     {"breakpoints", ctrl.breakpoints},
                       {"values0", ctrl.values0},   {"values1", ctrl.values1},
                       {"lower", ctrl.bounds.lower}, {"upper", ctrl.bounds.upper}};
}

inline void from_json(const nlohmann::json& j, PeriodicControl& ctrl) {
    try {
        j.at("period").get_to(ctrl.period);
        j.at("breakpoints").get_to(ctrl.breakpoints);
        j.at("values0").get_to(ctrl.values0);
        j.at("values1").get_to(ctrl.values1);
        j.at("lower").get_to(ctrl.bounds.lower);
        j.at("upper").get_to(ctrl.bounds.upper);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("parse", std::string("control document: ") + e.what());
    }
    ctrl.validate();
}

}  // namespace occlab
