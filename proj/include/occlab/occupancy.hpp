#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <ostream>
#include <utility>
#include <vector>

#include "occlab/signals.hpp"

namespace occlab {

/// Exact flow of  x' = u0 (1 - x) - u1 x  over a window of length dt
/// with constant rates: the solution relaxes toward the piece
/// equilibrium u0/(u0+u1) with rate u0+u1.
inline double propagate_piece(double x0, double u0, double u1, double dt) {
    if (dt == 0.0) return x0;
    const double rate = u0 + u1;
    const double xeq = u0 / rate;
    return xeq + (x0 - xeq) * std::exp(-rate * dt);
}

/// Exact integral of u1 * x(t) over one constant-rate piece started at x0.
inline double throughput_piece_integral(double x0, double u0, double u1, double dt) {
    const double rate = u0 + u1;
    const double xeq = u0 / rate;
    return u1 * (xeq * dt + (x0 - xeq) * (1.0 - std::exp(-rate * dt)) / rate);
}

/// The period map of the scalar occupancy ODE is affine: x(T) = alpha x(0) + beta.
struct PoincareCoefficients {
    double alpha = 1.0;
    double beta = 0.0;
};

/// Compose the per-piece affine maps for arbitrary positive per-piece
/// inflow/outflow rates. alpha ends up in (0,1) whenever total time > 0.
inline PoincareCoefficients compose_affine_map(const std::vector<double>& inflow,
                                               const std::vector<double>& outflow,
                                               const std::vector<double>& lengths) {
    PoincareCoefficients m;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        const double rate = inflow[i] + outflow[i];
        const double a = std::exp(-rate * lengths[i]);
        const double b = (inflow[i] / rate) * (1.0 - a);
        m.alpha *= a;
        m.beta = a * m.beta + b;
    }
    return m;
}

inline PoincareCoefficients poincare_map_coefficients(const PeriodicControl& ctrl) {
    ctrl.validate();
    std::vector<double> lengths(ctrl.piece_count());
    for (std::size_t i = 0; i < lengths.size(); ++i) lengths[i] = ctrl.piece_length(i);
    return compose_affine_map(ctrl.values0, ctrl.values1, lengths);
}

/// Periodic steady state under a two-channel control, with its breakpoint
/// samples and the exact average throughput.
struct OccupancyOrbit {
    double initial = 0.0;
    PeriodicControl control;
    std::vector<std::pair<double, double>> samples;  // (time, x1), breakpoints incl. T
    double throughput_raw = 0.0;
    double throughput_normalized = 0.0;
};

struct Throughput {
    double raw = 0.0;
    double normalized = 0.0;
};

/// Exact per-piece integration of u1 * x1 along the orbit; the normalized
/// value divides by the channel-1 mean. Both are reported: the raw value
/// is the plain time average of the outflow, the normalized value is the
/// scale-free figure the optimizer and certificates use.
inline Throughput average_throughput(const OccupancyOrbit& orbit) {
    const PeriodicControl& ctrl = orbit.control;
    double x = orbit.initial;
    double acc = 0.0;
    for (std::size_t i = 0; i < ctrl.piece_count(); ++i) {
        const double dt = ctrl.piece_length(i);
        acc += throughput_piece_integral(x, ctrl.values0[i], ctrl.values1[i], dt);
        x = propagate_piece(x, ctrl.values0[i], ctrl.values1[i], dt);
    }
    Throughput t;
    t.raw = acc / ctrl.period;
    t.normalized = t.raw / channel_mean(ctrl, 1);
    return t;
}

/// Unique periodic orbit: the affine period map is a contraction
/// (alpha < 1), so x(0) = beta / (1 - alpha) and nothing else is needed.
inline OccupancyOrbit periodic_orbit(const PeriodicControl& ctrl) {
    const PoincareCoefficients m = poincare_map_coefficients(ctrl);
    OccupancyOrbit orbit;
    orbit.initial = m.beta / (1.0 - m.alpha);
    orbit.control = ctrl;
    orbit.samples.reserve(ctrl.piece_count() + 1);
    double x = orbit.initial;
    orbit.samples.emplace_back(0.0, x);
    for (std::size_t i = 0; i < ctrl.piece_count(); ++i) {
        x = propagate_piece(x, ctrl.values0[i], ctrl.values1[i], ctrl.piece_length(i));
        orbit.samples.emplace_back(ctrl.breakpoints[i + 1], x);
    }
    const Throughput t = average_throughput(orbit);
    orbit.throughput_raw = t.raw;
    orbit.throughput_normalized = t.normalized;
    return orbit;
}

/// x1 at time t in [0, T] for an orbit, via closed-form propagation from
/// the last breakpoint at or before t.
inline double orbit_sample(const OccupancyOrbit& orbit, double t) {
    const PeriodicControl& ctrl = orbit.control;
    double s = std::fmod(t, ctrl.period);
    if (s < 0.0) s += ctrl.period;
    std::size_t i = 0;
    while (i + 1 < ctrl.piece_count() && ctrl.breakpoints[i + 1] <= s) ++i;
    const double x_at_piece = orbit.samples[i].second;
    return propagate_piece(x_at_piece, ctrl.values0[i], ctrl.values1[i],
                           s - ctrl.breakpoints[i]);
}

/// Entrainment check: two initial conditions contract toward each other
/// by exactly alpha per period. Verifies |xa(kT) - xb(kT)| = alpha^k |xa - xb|.
struct ContractionReport {
    double alpha = 0.0;
    std::vector<double> differences;      // |xa(kT) - xb(kT)| for k = 1..n
    std::vector<double> identity_residual;  // |difference_k - alpha^k * |xa-xb||
    double max_residual = 0.0;
};

inline ContractionReport contraction_check(const PeriodicControl& ctrl, double xa, double xb,
                                           int n_periods) {
    ctrl.validate();
    ContractionReport report;
    report.alpha = poincare_map_coefficients(ctrl).alpha;
    double a = xa, b = xb;
    double factor = 1.0;
    for (int k = 1; k <= n_periods; ++k) {
        for (std::size_t i = 0; i < ctrl.piece_count(); ++i) {
            const double dt = ctrl.piece_length(i);
            a = propagate_piece(a, ctrl.values0[i], ctrl.values1[i], dt);
            b = propagate_piece(b, ctrl.values0[i], ctrl.values1[i], dt);
        }
        factor *= report.alpha;
        const double diff = std::abs(a - b);
        const double residual = std::abs(diff - factor * std::abs(xa - xb));
        report.differences.push_back(diff);
        report.identity_residual.push_back(residual);
        report.max_residual = std::max(report.max_residual, residual);
    }
    return report;
}

/// CSV export of the steady-state trajectory: t, x1, u0, u1.
inline void write_trajectory_csv(std::ostream& os, const OccupancyOrbit& orbit,
                                 int points_per_period = 1000) {
    os << "t,x1,u0,u1\n";
    char line[160];
    for (int k = 0; k <= points_per_period; ++k) {
        const double t = orbit.control.period * static_cast<double>(k) /
                         static_cast<double>(points_per_period);
        const double sample_t = (k == points_per_period) ? orbit.control.period : t;
        const double x = (k == points_per_period) ? orbit.samples.back().second
                                                  : orbit_sample(orbit, t);
        std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g\n", sample_t, x,
                      orbit.control.value0_at(std::min(t, orbit.control.period * (1.0 - 1e-15))),
                      orbit.control.value1_at(std::min(t, orbit.control.period * (1.0 - 1e-15))));
        os << line;
    }
}

}  // namespace occlab
