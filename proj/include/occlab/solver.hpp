#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include <json.hpp>

#include "occlab/occupancy.hpp"
#include "occlab/parallel.hpp"
#include "occlab/signals.hpp"

namespace occlab {

struct SolverConfig {
    int n_pieces = 16;
    int max_iters = 200;
    double step_size = 0.1;
    double fd_epsilon = 1e-6;
    double tolerance = 1e-9;
    std::uint64_t seed = 1;
    int restarts = 20;

    void validate() const {
        if (n_pieces < 1) throw ValidationError("solver", "n_pieces must be >= 1");
        if (!(step_size > 0.0) || !(fd_epsilon > 0.0) || !(tolerance > 0.0))
            throw ValidationError("solver", "step_size, fd_epsilon, tolerance must be positive");
        if (max_iters < 0 || restarts < 0)
            throw ValidationError("solver", "max_iters and restarts must be nonnegative");
    }
};

struct TraceRow {
    int iteration = 0;
    double objective = 0.0;
    double step_norm = 0.0;
};

struct OptimizationReport {
    PeriodicControl best_control;
    double best_raw = 0.0;
    double best_normalized = 0.0;
    double analytic_optimum = 0.0;
    double gain_of_entrainment = 0.0;
    int restarts = 0;
    int best_restart = 0;  // 0 = the constant control, 1..restarts = random starts
    bool converged = true;
    std::vector<TraceRow> trace;  // winning run
};

namespace detail {

/// Normalized throughput without the validation pass. Finite-difference
/// probes nudge values past the box by epsilon; the closed forms are
/// still exact there, so the hot paths use this entry point.
inline double objective_unchecked(const PeriodicControl& ctrl) {
    const std::size_t n = ctrl.piece_count();
    double alpha = 1.0, beta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double rate = ctrl.values0[i] + ctrl.values1[i];
        const double a = std::exp(-rate * ctrl.piece_length(i));
        beta = a * beta + (ctrl.values0[i] / rate) * (1.0 - a);
        alpha *= a;
    }
    double x = beta / (1.0 - alpha);
    double integral = 0.0, outflow = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = ctrl.piece_length(i);
        integral += throughput_piece_integral(x, ctrl.values0[i], ctrl.values1[i], dt);
        outflow += ctrl.values1[i] * dt;
        x = propagate_piece(x, ctrl.values0[i], ctrl.values1[i], dt);
    }
    return integral / outflow;  // (integral/T) / (outflow/T)
}

}  // namespace detail

/// Normalized steady-state average throughput; the quantity the search
/// maximizes. Bounded by mean0/(mean0+mean1) for feasible controls, with
/// equality on the proportional family.
inline double objective(const PeriodicControl& ctrl) {
    ctrl.validate();
    return detail::objective_unchecked(ctrl);
}

/// Uniform-grid control with per-piece values drawn uniformly from the
/// box, then projected onto the mean constraints. Deterministic in seed.
inline PeriodicControl random_feasible(std::uint64_t seed, const ControlBounds& bounds,
                                       const MeanTargets& means, double period, int n_pieces) {
    means.validate(bounds);
    std::mt19937_64 rng(seed);
    std::vector<double> v0(n_pieces), v1(n_pieces);
    for (double& v : v0) v = bounds.lower + uniform01(rng) * (bounds.upper - bounds.lower);
    for (double& v : v1) v = bounds.lower + uniform01(rng) * (bounds.upper - bounds.lower);
    const std::vector<double> lengths(n_pieces, period / n_pieces);
    v0 = project_to_feasible(std::move(v0), lengths, bounds, means.mean0);
    v1 = project_to_feasible(std::move(v1), lengths, bounds, means.mean1);
    return make_uniform(period, bounds, std::move(v0), std::move(v1));
}

namespace detail {

/// Central finite differences of f over all piece values, both channels
/// stacked (channel 0 first). Probes are raw (not re-projected).
template <class Objective>
std::vector<double> fd_gradient(Objective&& f, const PeriodicControl& ctrl, double epsilon) {
    const std::size_t n = ctrl.piece_count();
    std::vector<double> g(2 * n);
    PeriodicControl probe = ctrl;
    for (std::size_t i = 0; i < 2 * n; ++i) {
        std::vector<double>& chan = i < n ? probe.values0 : probe.values1;
        const std::size_t k = i < n ? i : i - n;
        const double keep = chan[k];
        chan[k] = keep + epsilon;
        const double hi = f(probe);
        chan[k] = keep - epsilon;
        const double lo = f(probe);
        chan[k] = keep;
        g[i] = (hi - lo) / (2.0 * epsilon);
    }
    return g;
}

/// Norm of the gradient projected onto the mean-preserving tangent space
/// (per channel, remove the length-weighted average component).
inline double tangent_norm(const std::vector<double>& g, const std::vector<double>& lengths) {
    const std::size_t n = lengths.size();
    double total = 0.0;
    for (double l : lengths) total += l;
    double acc = 0.0;
    for (int ch = 0; ch < 2; ++ch) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += g[ch * n + i] * lengths[i];
        mean /= total;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = g[ch * n + i] - mean;
            acc += t * t;
        }
    }
    return std::sqrt(acc);
}

struct AscentOutcome {
    PeriodicControl control;
    double objective = 0.0;
    bool converged = false;
    std::vector<TraceRow> trace;
};

/// Projected gradient ascent with backtracking. Accepted steps never
/// decrease the objective; every iterate is re-projected onto the box
/// and mean constraints.
template <class Objective>
AscentOutcome ascend(Objective&& f, PeriodicControl ctrl, const MeanTargets& means,
                     const SolverConfig& cfg) {
    const std::size_t n = ctrl.piece_count();
    std::vector<double> lengths(n);
    for (std::size_t i = 0; i < n; ++i) lengths[i] = ctrl.piece_length(i);

    AscentOutcome out;
    double value = f(ctrl);
    out.trace.push_back({0, value, 0.0});
    double step = cfg.step_size;
    for (int it = 1; it <= cfg.max_iters; ++it) {
        const std::vector<double> g = fd_gradient(f, ctrl, cfg.fd_epsilon);
        const double gnorm = tangent_norm(g, lengths);
        if (gnorm <= cfg.tolerance) {
            out.converged = true;
            break;
        }
        bool accepted = false;
        while (step * gnorm > 1e-15) {
            PeriodicControl cand = ctrl;
            for (std::size_t i = 0; i < n; ++i) {
                cand.values0[i] += step * g[i];
                cand.values1[i] += step * g[n + i];
            }
            cand.values0 = project_to_feasible(std::move(cand.values0), lengths, ctrl.bounds,
                                               means.mean0);
            cand.values1 = project_to_feasible(std::move(cand.values1), lengths, ctrl.bounds,
                                               means.mean1);
            const double cand_value = f(cand);
            if (cand_value >= value) {
                ctrl = std::move(cand);
                value = cand_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            out.converged = true;  // no feasible ascent direction at this scale
            break;
        }
        out.trace.push_back({it, value, step * gnorm});
        step = std::min(step * 2.0, 1e4 * cfg.step_size);
    }
    out.control = std::move(ctrl);
    out.objective = value;
    return out;
}

}  // namespace detail

/// Multi-restart projected gradient ascent. The constant control is
/// always evaluated (restart index 0); random restarts follow. Ties
/// break toward the lowest restart index, so reports are deterministic
/// regardless of thread count.
inline OptimizationReport projected_ascent(const SolverConfig& cfg, const ControlBounds& bounds,
                                           const MeanTargets& means, double period) {
    cfg.validate();
    means.validate(bounds);
    const double analytic = means.mean0 / (means.mean0 + means.mean1);

    struct Entry {
        double objective = -1.0;
        detail::AscentOutcome outcome;
    };
    std::vector<Entry> entries(cfg.restarts + 1);

    {
        const PeriodicControl constant = make_constant(period, bounds, means);
        entries[0].outcome.control = constant;
        entries[0].outcome.objective = detail::objective_unchecked(constant);
        entries[0].outcome.converged = true;
        entries[0].outcome.trace.push_back({0, entries[0].outcome.objective, 0.0});
        entries[0].objective = entries[0].outcome.objective;
    }
    parallel_for(cfg.restarts, [&](std::size_t r) {
        PeriodicControl start = random_feasible(mix_seed(cfg.seed, r + 1), bounds, means, period,
                                                cfg.n_pieces);
        detail::AscentOutcome oc = detail::ascend(
            [](const PeriodicControl& c) { return detail::objective_unchecked(c); },
            std::move(start), means, cfg);
        entries[r + 1].objective = oc.objective;
        entries[r + 1].outcome = std::move(oc);
    });

    std::size_t best = 0;
    for (std::size_t i = 1; i < entries.size(); ++i)
        if (entries[i].objective > entries[best].objective) best = i;

    OptimizationReport report;
    report.best_control = entries[best].outcome.control;
    report.best_normalized = entries[best].objective;
    report.best_raw = periodic_orbit(report.best_control).throughput_raw;
    report.analytic_optimum = analytic;
    report.gain_of_entrainment = report.best_normalized - analytic;
    report.restarts = cfg.restarts;
    report.best_restart = static_cast<int>(best);
    report.converged = entries[best].outcome.converged;
    report.trace = std::move(entries[best].outcome.trace);
    return report;
}

struct MonteCarloReport {
    double max_normalized = -1.0;
    std::size_t argmax_index = 0;
    std::size_t n_samples = 0;
};

/// Feasibility-preserving random sweep; the key falsification tool for
/// the no-gain property. Deterministic in (seed, n_samples, n_pieces).
inline MonteCarloReport monte_carlo_max(std::uint64_t seed, const ControlBounds& bounds,
                                        const MeanTargets& means, double period, int n_pieces,
                                        std::size_t n_samples) {
    std::vector<double> values(n_samples);
    parallel_for(n_samples, [&](std::size_t i) {
        values[i] = detail::objective_unchecked(
            random_feasible(mix_seed(seed, i), bounds, means, period, n_pieces));
    });
    MonteCarloReport report;
    report.n_samples = n_samples;
    for (std::size_t i = 0; i < n_samples; ++i) {
        if (values[i] > report.max_normalized) {
            report.max_normalized = values[i];
            report.argmax_index = i;
        }
    }
    return report;
}

/// Exhaustive grid over two-switch bang-bang controls: each channel takes
/// values {lower, upper} with the duty cycle fixed by its mean target and
/// a gridded phase offset. Returns the maximum normalized throughput
/// over the phase_grid x phase_grid candidates.
inline double bangbang_oracle(const ControlBounds& bounds, const MeanTargets& means, double period,
                              int phase_grid) {
    means.validate(bounds);
    if (phase_grid < 1) throw ValidationError("solver", "phase_grid must be >= 1");
    const double span = bounds.upper - bounds.lower;
    const double duty0 = (means.mean0 - bounds.lower) / span;
    const double duty1 = (means.mean1 - bounds.lower) / span;
    if (!(duty0 > 0.0 && duty0 < 1.0 && duty1 > 0.0 && duty1 < 1.0))
        throw ValidationError("means", "duty cycles must be interior to (0,1)");

    const auto high = [&](double t, double phase, double duty) {
        double s = t - phase;
        s -= period * std::floor(s / period);
        return s < duty * period;
    };

    std::vector<double> best(phase_grid, -1.0);
    parallel_for(phase_grid, [&](std::size_t gi) {
        const double phase0 = period * static_cast<double>(gi) / phase_grid;
        double local = -1.0;
        for (int gj = 0; gj < phase_grid; ++gj) {
            const double phase1 = period * static_cast<double>(gj) / phase_grid;
            // switch times of both channels, wrapped into [0, T)
            std::vector<double> bps{0.0, period};
            for (double e : {phase0, phase0 + duty0 * period, phase1, phase1 + duty1 * period}) {
                double w = e - period * std::floor(e / period);
                if (w > 0.0 && w < period) bps.push_back(w);
            }
            std::sort(bps.begin(), bps.end());
            bps.erase(std::unique(bps.begin(), bps.end()), bps.end());
            const std::size_t n = bps.size() - 1;
            std::vector<double> v0(n), v1(n);
            for (std::size_t k = 0; k < n; ++k) {
                const double mid = 0.5 * (bps[k] + bps[k + 1]);
                v0[k] = high(mid, phase0, duty0) ? bounds.upper : bounds.lower;
                v1[k] = high(mid, phase1, duty1) ? bounds.upper : bounds.lower;
            }
            const PeriodicControl ctrl{period, bps, std::move(v0), std::move(v1), bounds};
            local = std::max(local, detail::objective_unchecked(ctrl));
        }
        best[gi] = local;
    });
    return *std::max_element(best.begin(), best.end());
}

inline void to_json(nlohmann::json& j, const OptimizationReport& r) {
    j = nlohmann::json{{"best_normalized", r.best_normalized},
                       {"analytic_optimum", r.analytic_optimum},
                       {"gain_of_entrainment", r.gain_of_entrainment},
                       {"restarts", r.restarts},
                       {"best_raw", r.best_raw},
                       {"best_restart", r.best_restart},
                       {"converged", r.converged},
                       {"best_control", r.best_control}};
}

}  // namespace occlab
