#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "occlab/linalg.hpp"
#include "occlab/occupancy.hpp"
#include "occlab/parallel.hpp"
#include "occlab/signals.hpp"
#include "occlab/solver.hpp"

namespace occlab {

/// Single-input single-output state-space block z' = A z + b w, y = c^T z.
/// The cascade theory assumes A Metzler and Hurwitz with nonnegative b, c
/// so interstage signals stay nonnegative.
struct LinearBlock {
    Matrix A;
    Vector b;
    Vector c;

    std::size_t dimension() const { return A.rows(); }

    void validate() const {
        if (A.rows() == 0 || A.rows() != A.cols() || b.size() != A.rows() ||
            c.size() != A.rows())
            throw ValidationError("topology", "linear block needs square A and matching b, c");
    }
};

struct MetzlerHurwitzVerdict {
    bool metzler = false;
    bool hurwitz = false;
    std::vector<double> minors;  // leading principal minors of -A
};

/// Metzler by sign scan; Hurwitz via the M-matrix criterion: all leading
/// principal minors of -A strictly positive. The minor test is exactly
/// the stability characterization for the Metzler class, no eigensolver
/// involved.
inline MetzlerHurwitzVerdict check_metzler_hurwitz(const LinearBlock& blk) {
    blk.validate();
    MetzlerHurwitzVerdict v;
    const std::size_t n = blk.dimension();
    v.metzler = true;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j && blk.A(i, j) < 0.0) v.metzler = false;
    Matrix neg = blk.A * -1.0;
    v.hurwitz = true;
    for (std::size_t k = 1; k <= n; ++k) {
        const double minor = leading_principal_minor(neg, k);
        v.minors.push_back(minor);
        if (!(minor > 0.0)) v.hurwitz = false;
    }
    return v;
}

/// DC gain H(0) = -c^T A^{-1} b.
inline double dc_gain(const LinearBlock& blk) {
    blk.validate();
    return -dot(blk.c, LuFactorization(blk.A).solve(blk.b));
}

/// Steady-state T-periodic response to a piecewise-constant input, with
/// exact per-piece propagation and exact per-piece output means.
struct LinearPeriodicResponse {
    std::vector<double> breakpoints;
    std::vector<Vector> states;              // z at breakpoints (n+1 entries)
    std::vector<double> output_samples;      // y = c^T z at breakpoints
    std::vector<double> piece_output_means;  // exact mean of y on each piece
    double output_mean = 0.0;
};

namespace detail {

/// Per-piece propagation operators for one step length:
///   z_next = E z + Jb * w,  integral of z over the piece = J z + Kb * w,
/// with E = exp(A dt), J = A^{-1}(E - I), Kb = A^{-1}(J - dt I) b.
struct LinearPieceOp {
    Matrix E;
    Vector Jb;
    Vector JTc;  // J^T c, so c^T J z = dot(JTc, z)
    double q2 = 0.0;  // c^T Kb
};

inline LinearPieceOp make_piece_op(const LuFactorization& lu_a, const Matrix& a, double dt,
                                   const Vector& b, const Vector& c) {
    const std::size_t n = a.rows();
    LinearPieceOp op;
    op.E = expm(a * dt);
    Matrix em_i = op.E - Matrix::identity(n);
    Matrix j = lu_a.solve(em_i);
    op.Jb = j * b;
    op.JTc.assign(n, 0.0);
    for (std::size_t col = 0; col < n; ++col)
        for (std::size_t row = 0; row < n; ++row) op.JTc[col] += c[row] * j(row, col);
    Vector jb_minus = op.Jb;
    for (std::size_t i = 0; i < n; ++i) jb_minus[i] -= dt * b[i];
    op.q2 = dot(c, lu_a.solve(jb_minus));
    return op;
}

}  // namespace detail

inline LinearPeriodicResponse linear_steady_periodic(const LinearBlock& blk,
                                                     const PiecewiseSignal& w) {
    blk.validate();
    w.validate();
    const std::size_t n = blk.dimension();
    const std::size_t pieces = w.piece_count();
    const LuFactorization lu_a(blk.A);

    std::map<double, detail::LinearPieceOp> ops;
    const auto op_for = [&](double dt) -> const detail::LinearPieceOp& {
        auto it = ops.find(dt);
        if (it == ops.end())
            it = ops.emplace(dt, detail::make_piece_op(lu_a, blk.A, dt, blk.b, blk.c)).first;
        return it->second;
    };

    // period transition and accumulated forcing: z(T) = Phi z(0) + r
    Matrix phi = Matrix::identity(n);
    Vector r(n, 0.0);
    for (std::size_t i = 0; i < pieces; ++i) {
        const detail::LinearPieceOp& op = op_for(w.piece_length(i));
        phi = op.E * phi;
        r = op.E * r;
        for (std::size_t k = 0; k < n; ++k) r[k] += op.Jb[k] * w.values[i];
    }
    const Vector z0 = LuFactorization(Matrix::identity(n) - phi).solve(r);

    LinearPeriodicResponse resp;
    resp.breakpoints = w.breakpoints;
    resp.states.reserve(pieces + 1);
    resp.states.push_back(z0);
    resp.output_samples.push_back(dot(blk.c, z0));
    double acc = 0.0;
    Vector z = z0;
    for (std::size_t i = 0; i < pieces; ++i) {
        const double dt = w.piece_length(i);
        const detail::LinearPieceOp& op = op_for(dt);
        const double piece_integral = dot(op.JTc, z) + op.q2 * w.values[i];
        resp.piece_output_means.push_back(piece_integral / dt);
        acc += piece_integral;
        Vector znext = op.E * z;
        for (std::size_t k = 0; k < n; ++k) znext[k] += op.Jb[k] * w.values[i];
        z = std::move(znext);
        resp.states.push_back(z);
        resp.output_samples.push_back(dot(blk.c, z));
    }
    resp.output_mean = acc / w.period;
    return resp;
}

/// DC-gain averaging residual |mean(y_w) - H(0) mean(w)|, relative to the
/// right-hand side.
inline double verify_prop9(const LinearBlock& blk, const PiecewiseSignal& w) {
    const LinearPeriodicResponse resp = linear_steady_periodic(blk, w);
    const double rhs = dc_gain(blk) * w.mean();
    const double scale = std::max(std::abs(rhs), 1e-300);
    return std::abs(resp.output_mean - rhs) / scale;
}

/// Random strictly diagonally dominant Metzler block (hence Hurwitz) with
/// strictly positive b and c. Deterministic in seed.
inline LinearBlock random_metzler_hurwitz(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 rng(seed);
    LinearBlock blk;
    blk.A = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) blk.A(i, j) = uniform01(rng);
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) row += blk.A(i, j);
        blk.A(i, i) = -row - (0.2 + 1.8 * uniform01(rng));
    }
    blk.b.resize(n);
    blk.c.resize(n);
    for (double& v : blk.b) v = 0.1 + uniform01(rng);
    for (double& v : blk.c) v = 0.1 + uniform01(rng);
    return blk;
}

// ---------------------------------------------------------------------------
// Cascade topologies

struct CascadeStage {
    enum class Kind { Occupancy, Linear };
    Kind kind = Kind::Occupancy;
    LinearBlock block;  // meaningful for Linear stages only
};

/// Ordered stage list. The running signal starts as the external u0;
/// occupancy stages consume it as inflow and use the external u1 as
/// outflow (emitting u1 * x), linear stages filter it. "fig1a" is
/// occupancy -> linear -> occupancy, "fig1b" is occupancy -> linear;
/// "explicit" places no constraint on the stage pattern.
struct CascadeTopology {
    std::vector<CascadeStage> stages;
    std::string wiring = "explicit";

    void validate() const {
        if (stages.empty()) throw ValidationError("topology", "topology needs at least one stage");
        for (const CascadeStage& s : stages)
            if (s.kind == CascadeStage::Kind::Linear) s.block.validate();
        const auto kind_at = [&](std::size_t i) { return stages[i].kind; };
        using K = CascadeStage::Kind;
        if (wiring == "fig1a") {
            if (stages.size() != 3 || kind_at(0) != K::Occupancy || kind_at(1) != K::Linear ||
                kind_at(2) != K::Occupancy)
                throw ValidationError("topology", "fig1a needs occupancy, linear, occupancy");
        } else if (wiring == "fig1b") {
            if (stages.size() != 2 || kind_at(0) != K::Occupancy || kind_at(1) != K::Linear)
                throw ValidationError("topology", "fig1b needs occupancy, linear");
        } else if (wiring != "explicit") {
            throw ValidationError("topology", "wiring must be fig1a, fig1b or explicit");
        }
    }

    std::vector<std::string> signal_names() const {
        if (wiring == "fig1a") return {"y", "w1", "w2"};
        if (wiring == "fig1b") return {"y", "w2"};
        std::vector<std::string> names;
        for (std::size_t i = 0; i < stages.size(); ++i)
            names.push_back("s" + std::to_string(i + 1));
        return names;
    }
};

inline CascadeTopology fig1a_topology(LinearBlock blk) {
    CascadeTopology topo;
    topo.wiring = "fig1a";
    topo.stages.resize(3);
    topo.stages[1].kind = CascadeStage::Kind::Linear;
    topo.stages[1].block = std::move(blk);
    return topo;
}

inline CascadeTopology fig1b_topology(LinearBlock blk) {
    CascadeTopology topo;
    topo.wiring = "fig1b";
    topo.stages.resize(2);
    topo.stages[1].kind = CascadeStage::Kind::Linear;
    topo.stages[1].block = std::move(blk);
    return topo;
}

struct CascadeOptions {
    int initial_resolution = 1024;   // uniform pieces per period, lower bound
    double mean_tol = 1e-9;          // stop doubling when |d mean(w2)| falls below
    int max_resolution = 1 << 17;
};

/// Stage-by-stage steady-periodic signals on the final refinement grid.
struct CascadeResult {
    std::vector<double> grid;                         // breakpoints
    std::vector<std::vector<double>> stage_signals;   // per-piece means after each stage
    std::vector<double> stage_means;
    double final_mean = 0.0;
    int resolution = 0;
    bool converged = false;
};

namespace detail {

/// One cascade pass at a fixed grid. Interstage signals are represented
/// by their exact per-piece means, which preserves every signal's total
/// mean through the chain.
inline CascadeResult cascade_pass(const CascadeTopology& topo, const PeriodicControl& ctrl,
                                  int resolution) {
    const double period = ctrl.period;
    std::vector<double> grid;
    grid.reserve(resolution + ctrl.breakpoints.size());
    for (int k = 0; k <= resolution; ++k)
        grid.push_back(period * static_cast<double>(k) / static_cast<double>(resolution));
    grid.back() = period;
    grid.insert(grid.end(), ctrl.breakpoints.begin(), ctrl.breakpoints.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    const std::size_t pieces = grid.size() - 1;
    std::vector<double> lengths(pieces), u0g(pieces), u1g(pieces);
    {
        std::size_t cp = 0;
        for (std::size_t i = 0; i < pieces; ++i) {
            lengths[i] = grid[i + 1] - grid[i];
            const double mid = 0.5 * (grid[i] + grid[i + 1]);
            while (cp + 1 < ctrl.piece_count() && ctrl.breakpoints[cp + 1] <= mid) ++cp;
            u0g[i] = ctrl.values0[cp];
            u1g[i] = ctrl.values1[cp];
        }
    }

    CascadeResult result;
    result.grid = grid;
    result.resolution = resolution;
    std::vector<double> current = u0g;
    for (const CascadeStage& stage : topo.stages) {
        if (stage.kind == CascadeStage::Kind::Occupancy) {
            for (std::size_t i = 0; i < pieces; ++i) {
                if (!(current[i] > 0.0))
                    throw ValidationError("topology", "occupancy stage inflow must be positive");
                if (!(u1g[i] > 0.0))
                    throw ValidationError("topology", "occupancy stage outflow must be positive");
            }
            // affine period map with one exp per piece, reused for the walk
            std::vector<double> decay(pieces), xeq(pieces);
            double alpha = 1.0, beta = 0.0;
            for (std::size_t i = 0; i < pieces; ++i) {
                const double rate = current[i] + u1g[i];
                decay[i] = std::exp(-rate * lengths[i]);
                xeq[i] = current[i] / rate;
                alpha *= decay[i];
                beta = decay[i] * beta + xeq[i] * (1.0 - decay[i]);
            }
            double x = beta / (1.0 - alpha);
            std::vector<double> out(pieces);
            double acc = 0.0;
            for (std::size_t i = 0; i < pieces; ++i) {
                const double rate = current[i] + u1g[i];
                const double integral =
                    u1g[i] * (xeq[i] * lengths[i] + (x - xeq[i]) * (1.0 - decay[i]) / rate);
                out[i] = integral / lengths[i];
                acc += integral;
                x = xeq[i] + (x - xeq[i]) * decay[i];
            }
            current = std::move(out);
            result.stage_means.push_back(acc / period);
        } else {
            const LinearPeriodicResponse resp =
                linear_steady_periodic(stage.block, PiecewiseSignal{period, grid, current});
            current = resp.piece_output_means;
            result.stage_means.push_back(resp.output_mean);
        }
        result.stage_signals.push_back(current);
    }
    result.final_mean = result.stage_means.back();
    return result;
}

}  // namespace detail

/// Steady-periodic cascade response with grid-doubling refinement: the
/// resolution doubles until the final mean moves less than mean_tol (or
/// the cap is reached, reported via `converged`).
inline CascadeResult cascade_simulate(const CascadeTopology& topo, const PeriodicControl& ctrl,
                                      const CascadeOptions& options = {}) {
    topo.validate();
    ctrl.validate();
    int resolution = options.initial_resolution;
    CascadeResult result = detail::cascade_pass(topo, ctrl, resolution);
    while (resolution < options.max_resolution) {
        resolution *= 2;
        CascadeResult finer = detail::cascade_pass(topo, ctrl, resolution);
        const bool settled = std::abs(finer.final_mean - result.final_mean) < options.mean_tol;
        result = std::move(finer);
        if (settled) {
            result.converged = true;
            break;
        }
    }
    return result;
}

struct NoGainCascadeReport {
    double constant_mean = 0.0;
    double mc_max = -1.0;
    std::size_t mc_argmax = 0;
    double ascent_max = -1.0;
    double overall_max = 0.0;
    double gap = 0.0;  // overall_max - constant_mean, expected <= 0 up to tolerance
    std::size_t n_samples = 0;
    int ascent_restarts = 0;
};

struct NoGainOptions {
    int n_pieces = 16;
    int ascent_restarts = 2;
    int ascent_max_iters = 25;
    int ascent_resolution = 4096;  // fixed-grid evaluations during the search
    CascadeOptions cascade;
};

/// Monte-Carlo plus projected-ascent search for a periodic input that
/// beats the constant one through the cascade. Ascent iterations run on
/// a fixed grid for speed; every reported value is re-evaluated with full
/// refinement.
inline NoGainCascadeReport verify_no_gain_cascade(const CascadeTopology& topo,
                                                  const ControlBounds& bounds,
                                                  const MeanTargets& means, double period,
                                                  std::size_t n_samples, std::uint64_t seed,
                                                  const NoGainOptions& options = {}) {
    topo.validate();
    means.validate(bounds);
    NoGainCascadeReport report;
    report.n_samples = n_samples;
    report.ascent_restarts = options.ascent_restarts;

    const PeriodicControl constant = make_constant(period, bounds, means);
    report.constant_mean = cascade_simulate(topo, constant, options.cascade).final_mean;

    std::vector<double> values(n_samples);
    parallel_for(n_samples, [&](std::size_t i) {
        const PeriodicControl ctrl =
            random_feasible(mix_seed(seed, i), bounds, means, period, options.n_pieces);
        values[i] = cascade_simulate(topo, ctrl, options.cascade).final_mean;
    });
    for (std::size_t i = 0; i < n_samples; ++i) {
        if (values[i] > report.mc_max) {
            report.mc_max = values[i];
            report.mc_argmax = i;
        }
    }

    SolverConfig ascent_cfg;
    ascent_cfg.n_pieces = options.n_pieces;
    ascent_cfg.max_iters = options.ascent_max_iters;
    std::vector<double> ascent_values(options.ascent_restarts, -1.0);
    parallel_for(options.ascent_restarts, [&](std::size_t r) {
        const auto fixed_grid_mean = [&](const PeriodicControl& c) {
            return detail::cascade_pass(topo, c, options.ascent_resolution).final_mean;
        };
        PeriodicControl start = random_feasible(mix_seed(seed ^ 0x5ca5cadeULL, r), bounds, means,
                                                period, options.n_pieces);
        const auto outcome = detail::ascend(fixed_grid_mean, std::move(start), means, ascent_cfg);
        ascent_values[r] = cascade_simulate(topo, outcome.control, options.cascade).final_mean;
    });
    for (double v : ascent_values) report.ascent_max = std::max(report.ascent_max, v);

    report.overall_max = std::max(report.mc_max, std::max(report.ascent_max, -1.0));
    if (n_samples == 0 && options.ascent_restarts == 0) report.overall_max = report.constant_mean;
    report.gap = report.overall_max - report.constant_mean;
    return report;
}

/// CSV export of interstage signals sampled as per-piece means on the
/// refinement grid. Columns follow the wiring's naming.
inline void write_cascade_csv(std::ostream& os, const CascadeTopology& topo,
                              const CascadeResult& result) {
    std::vector<std::string> names = topo.signal_names();
    std::vector<std::size_t> order(names.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (topo.wiring == "fig1a") order = {1, 0, 2};  // t, w1, y, w2
    os << "t";
    for (std::size_t i : order) os << "," << names[i];
    os << "\n";
    char cell[64];
    for (std::size_t p = 0; p < result.grid.size() - 1; ++p) {
        std::snprintf(cell, sizeof cell, "%.17g", result.grid[p]);
        os << cell;
        for (std::size_t i : order) {
            std::snprintf(cell, sizeof cell, ",%.17g", result.stage_signals[i][p]);
            os << cell;
        }
        os << "\n";
    }
}

inline void to_json(nlohmann::json& j, const LinearBlock& blk) {
    std::vector<std::vector<double>> a(blk.A.rows(), std::vector<double>(blk.A.cols()));
    for (std::size_t i = 0; i < blk.A.rows(); ++i)
        for (std::size_t k = 0; k < blk.A.cols(); ++k) a[i][k] = blk.A(i, k);
    j = nlohmann::json{{"A", a}, {"b", blk.b}, {"c", blk.c}};
}

inline void from_json(const nlohmann::json& j, LinearBlock& blk) {
    try {
        const auto a = j.at("A").get<std::vector<std::vector<double>>>();
        if (a.empty()) throw ValidationError("topology", "empty A matrix");
        blk.A = Matrix(a.size(), a.front().size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].size() != a.front().size())
                throw ValidationError("topology", "ragged A matrix");
            for (std::size_t k = 0; k < a[i].size(); ++k) blk.A(i, k) = a[i][k];
        }
        j.at("b").get_to(blk.b);
        j.at("c").get_to(blk.c);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("parse", std::string("linear block: ") + e.what());
    }
    blk.validate();
}

inline void to_json(nlohmann::json& j, const CascadeTopology& topo) {
    nlohmann::json stages = nlohmann::json::array();
    for (const CascadeStage& s : topo.stages) {
        if (s.kind == CascadeStage::Kind::Occupancy)
            stages.push_back({{"type", "occupancy"}});
        else {
            nlohmann::json jstage = s.block;
            jstage["type"] = "linear";
            stages.push_back(jstage);
        }
    }
    j = nlohmann::json{{"stages", stages}, {"wiring", topo.wiring}};
}

inline void from_json(const nlohmann::json& j, CascadeTopology& topo) {
    try {
        topo.wiring = j.value("wiring", "explicit");
        topo.stages.clear();
        for (const auto& jstage : j.at("stages")) {
            CascadeStage stage;
            const std::string type = jstage.at("type").get<std::string>();
            if (type == "occupancy") {
                stage.kind = CascadeStage::Kind::Occupancy;
            } else if (type == "linear") {
                stage.kind = CascadeStage::Kind::Linear;
                stage.block = jstage.get<LinearBlock>();
            } else {
                throw ValidationError("topology", "stage type must be occupancy or linear");
            }
            topo.stages.push_back(std::move(stage));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("parse", std::string("topology document: ") + e.what());
    }
    topo.validate();
}

inline void to_json(nlohmann::json& j, const NoGainCascadeReport& r) {
    j = nlohmann::json{{"constant_mean", r.constant_mean},
                       {"mc_max", r.mc_max},
                       {"mc_argmax", r.mc_argmax},
                       {"ascent_max", r.ascent_max},
                       {"overall_max", r.overall_max},
                       {"gap", r.gap},
                       {"n_samples", r.n_samples},
                       {"ascent_restarts", r.ascent_restarts}};
}

}  // namespace occlab
