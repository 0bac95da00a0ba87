// Command-line front end: reproducible experiments over the occupancy
// model, the periodic-control optimizer, PMP certificates and cascades.
// Exit codes: 0 success, 2 validation failure (machine-readable JSON on
// stderr), 3 no-gain-violation alarm.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "occlab/cascade.hpp"
#include "occlab/occupancy.hpp"
#include "occlab/pmp.hpp"
#include "occlab/signals.hpp"
#include "occlab/solver.hpp"
#include "occlab/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ExperimentConfig {
    occlab::ControlBounds bounds{0.1, 0.9};
    occlab::MeanTargets means{0.3, 0.6};
    double period = 10.0;
    std::uint64_t seed = 1;
    double tolerance = 1e-9;
    int trajectory_points = 1000;
    occlab::SolverConfig solver;
    std::string topology_path;
    std::size_t cascade_samples = 1000;
    occlab::NoGainOptions cascade_options;
    int prop9_blocks = 100;
    int prop9_max_dim = 4;
    double prop9_tolerance = 1e-8;

    json effective;  // the fully-resolved document, hashed into outputs
};

ExperimentConfig load_config(const std::string& path, const CLI::Option* seed_flag,
                             std::uint64_t seed_value, const CLI::Option* tol_flag,
                             double tol_value) {
    ExperimentConfig cfg;
    json doc = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw occlab::ValidationError("parse", "cannot open config file " + path);
        try {
            in >> doc;
        } catch (const json::exception& e) {
            throw occlab::ValidationError("parse", std::string("config: ") + e.what());
        }
    }
    try {
        if (doc.contains("bounds")) {
            cfg.bounds.lower = doc["bounds"].value("lower", cfg.bounds.lower);
            cfg.bounds.upper = doc["bounds"].value("upper", cfg.bounds.upper);
        }
        if (doc.contains("means")) {
            cfg.means.mean0 = doc["means"].value("mean0", cfg.means.mean0);
            cfg.means.mean1 = doc["means"].value("mean1", cfg.means.mean1);
        }
        cfg.period = doc.value("period", cfg.period);
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.tolerance = doc.value("tolerance", cfg.tolerance);
        cfg.trajectory_points = doc.value("trajectory_points", cfg.trajectory_points);
        cfg.topology_path = doc.value("topology", cfg.topology_path);
        if (doc.contains("solver")) {
            const json& s = doc["solver"];
            cfg.solver.n_pieces = s.value("n_pieces", cfg.solver.n_pieces);
            cfg.solver.max_iters = s.value("max_iters", cfg.solver.max_iters);
            cfg.solver.step_size = s.value("step_size", cfg.solver.step_size);
            cfg.solver.fd_epsilon = s.value("fd_epsilon", cfg.solver.fd_epsilon);
            cfg.solver.tolerance = s.value("tolerance", cfg.solver.tolerance);
            cfg.solver.restarts = s.value("restarts", cfg.solver.restarts);
        }
        if (doc.contains("cascade")) {
            const json& c = doc["cascade"];
            cfg.cascade_samples = c.value("n_samples", cfg.cascade_samples);
            cfg.cascade_options.n_pieces = c.value("n_pieces", cfg.cascade_options.n_pieces);
            cfg.cascade_options.ascent_restarts =
                c.value("ascent_restarts", cfg.cascade_options.ascent_restarts);
            cfg.cascade_options.cascade.initial_resolution =
                c.value("initial_resolution", cfg.cascade_options.cascade.initial_resolution);
            cfg.cascade_options.cascade.mean_tol =
                c.value("mean_tol", cfg.cascade_options.cascade.mean_tol);
            cfg.cascade_options.cascade.max_resolution =
                c.value("max_resolution", cfg.cascade_options.cascade.max_resolution);
        }
        if (doc.contains("prop9")) {
            const json& p = doc["prop9"];
            cfg.prop9_blocks = p.value("blocks", cfg.prop9_blocks);
            cfg.prop9_max_dim = p.value("max_dim", cfg.prop9_max_dim);
            cfg.prop9_tolerance = p.value("tolerance", cfg.prop9_tolerance);
        }
    } catch (const json::exception& e) {
        throw occlab::ValidationError("parse", std::string("config: ") + e.what());
    }
    if (seed_flag->count() > 0) cfg.seed = seed_value;
    if (tol_flag->count() > 0) cfg.tolerance = tol_value;

    cfg.means.validate(cfg.bounds);
    if (!(cfg.period > 0.0)) throw occlab::ValidationError("breakpoints", "period must be positive");
    cfg.solver.seed = cfg.seed;
    cfg.solver.validate();

    cfg.effective = json{{"bounds", {{"lower", cfg.bounds.lower}, {"upper", cfg.bounds.upper}}},
                         {"means", {{"mean0", cfg.means.mean0}, {"mean1", cfg.means.mean1}}},
                         {"period", cfg.period},
                         {"seed", cfg.seed},
                         {"tolerance", cfg.tolerance},
                         {"trajectory_points", cfg.trajectory_points},
                         {"topology", cfg.topology_path},
                         {"solver",
                          {{"n_pieces", cfg.solver.n_pieces},
                           {"max_iters", cfg.solver.max_iters},
                           {"step_size", cfg.solver.step_size},
                           {"fd_epsilon", cfg.solver.fd_epsilon},
                           {"tolerance", cfg.solver.tolerance},
                           {"restarts", cfg.solver.restarts}}},
                         {"cascade",
                          {{"n_samples", cfg.cascade_samples},
                           {"n_pieces", cfg.cascade_options.n_pieces},
                           {"ascent_restarts", cfg.cascade_options.ascent_restarts},
                           {"initial_resolution", cfg.cascade_options.cascade.initial_resolution},
                           {"mean_tol", cfg.cascade_options.cascade.mean_tol},
                           {"max_resolution", cfg.cascade_options.cascade.max_resolution}}},
                         {"prop9",
                          {{"blocks", cfg.prop9_blocks},
                           {"max_dim", cfg.prop9_max_dim},
                           {"tolerance", cfg.prop9_tolerance}}}};
    return cfg;
}

std::string config_hash(const ExperimentConfig& cfg) {
    return occlab::fnv1a_hex(cfg.effective.dump());
}

/// write-temp-then-rename so partial files never appear under the
/// final name.
void write_file_atomic(const fs::path& path, const std::string& contents) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw occlab::ValidationError("io", "cannot write " + tmp.string());
        out << contents;
    }
    fs::rename(tmp, path);
}

void write_json_report(const fs::path& path, json j, const ExperimentConfig& cfg) {
    j["version"] = occlab::kVersion;
    j["config_hash"] = config_hash(cfg);
    write_file_atomic(path, j.dump(2) + "\n");
}

std::string csv_banner(const ExperimentConfig& cfg) {
    return std::string("# version=") + occlab::kVersion + " config_hash=" + config_hash(cfg) +
           "\n";
}

occlab::PeriodicControl load_control(const std::string& path, const ExperimentConfig& cfg) {
    if (path.empty()) return occlab::make_constant(cfg.period, cfg.bounds, cfg.means);
    std::ifstream in(path);
    if (!in) throw occlab::ValidationError("parse", "cannot open control file " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw occlab::ValidationError("parse", std::string("control file: ") + e.what());
    }
    return doc.get<occlab::PeriodicControl>();
}

occlab::CascadeTopology load_topology(const ExperimentConfig& cfg) {
    if (cfg.topology_path.empty()) {
        occlab::LinearBlock blk;
        blk.A = occlab::Matrix(1, 1);
        blk.A(0, 0) = -1.0;
        blk.b = {1.0};
        blk.c = {1.0};
        return occlab::fig1a_topology(std::move(blk));
    }
    std::ifstream in(cfg.topology_path);
    if (!in)
        throw occlab::ValidationError("parse", "cannot open topology file " + cfg.topology_path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw occlab::ValidationError("parse", std::string("topology file: ") + e.what());
    }
    return doc.get<occlab::CascadeTopology>();
}

int cmd_simulate(const ExperimentConfig& cfg, const std::string& control_path,
                 const fs::path& out_dir) {
    const occlab::PeriodicControl ctrl = load_control(control_path, cfg);
    const occlab::OccupancyOrbit orbit = occlab::periodic_orbit(ctrl);

    std::ostringstream csv;
    csv << csv_banner(cfg);
    occlab::write_trajectory_csv(csv, orbit, cfg.trajectory_points);
    write_file_atomic(out_dir / "trajectory.csv", csv.str());

    const double residual = std::abs(orbit.samples.back().second - orbit.initial);
    write_json_report(out_dir / "orbit.json",
                      json{{"initial", orbit.initial},
                           {"throughput_raw", orbit.throughput_raw},
                           {"throughput_normalized", orbit.throughput_normalized},
                           {"periodicity_residual", residual},
                           {"period", ctrl.period},
                           {"poincare_alpha", occlab::poincare_map_coefficients(ctrl).alpha},
                           {"control", ctrl}},
                      cfg);
    return 0;
}

int cmd_optimize(const ExperimentConfig& cfg, const fs::path& out_dir) {
    const occlab::OptimizationReport report =
        occlab::projected_ascent(cfg.solver, cfg.bounds, cfg.means, cfg.period);

    std::ostringstream trace;
    trace << csv_banner(cfg) << "iteration,objective,step_norm\n";
    char line[120];
    for (const occlab::TraceRow& row : report.trace) {
        std::snprintf(line, sizeof line, "%d,%.17g,%.17g\n", row.iteration, row.objective,
                      row.step_norm);
        trace << line;
    }
    write_file_atomic(out_dir / "optimize_trace.csv", trace.str());

    json j = report;
    j["trace_file"] = "optimize_trace.csv";  // relative to the output directory
    write_json_report(out_dir / "optimize_report.json", std::move(j), cfg);

    return report.gain_of_entrainment > cfg.tolerance ? 3 : 0;
}

int cmd_pmp_check(const ExperimentConfig& cfg, const std::string& control_path,
                  const fs::path& out_dir) {
    const occlab::PeriodicControl ctrl = load_control(control_path, cfg);
    const double mean0 = occlab::channel_mean(ctrl, 0);
    const double mean1 = occlab::channel_mean(ctrl, 1);
    if (std::abs(mean0 - cfg.means.mean0) > 1e-9 || std::abs(mean1 - cfg.means.mean1) > 1e-9)
        throw occlab::ValidationError("means", "control means disagree with the configuration");

    const occlab::CertificateReport report = occlab::verify_extremal(ctrl, cfg.tolerance);
    std::ostringstream csv;
    csv << csv_banner(cfg);
    occlab::write_certificate_csv(csv, ctrl, report);
    write_file_atomic(out_dir / "certificate.csv", csv.str());
    write_json_report(out_dir / "certificate.json", json(report), cfg);
    return 0;
}

int cmd_cascade(const ExperimentConfig& cfg, const fs::path& out_dir) {
    const occlab::CascadeTopology topo = load_topology(cfg);
    const occlab::PeriodicControl constant =
        occlab::make_constant(cfg.period, cfg.bounds, cfg.means);
    const occlab::CascadeResult constant_run =
        occlab::cascade_simulate(topo, constant, cfg.cascade_options.cascade);

    std::ostringstream csv;
    csv << csv_banner(cfg);
    occlab::write_cascade_csv(csv, topo, constant_run);
    write_file_atomic(out_dir / "cascade_signals.csv", csv.str());

    const occlab::NoGainCascadeReport sweep = occlab::verify_no_gain_cascade(
        topo, cfg.bounds, cfg.means, cfg.period, cfg.cascade_samples, cfg.seed,
        cfg.cascade_options);

    json j = sweep;
    j["topology"] = topo;
    j["constant_stage_means"] = constant_run.stage_means;
    j["resolution"] = constant_run.resolution;
    write_json_report(out_dir / "cascade_report.json", std::move(j), cfg);
    return sweep.gap > cfg.tolerance ? 3 : 0;
}

int cmd_prop9(const ExperimentConfig& cfg, const fs::path& out_dir) {
    double worst = 0.0;
    int worst_block = -1;
    for (int k = 0; k < cfg.prop9_blocks; ++k) {
        std::mt19937_64 rng(occlab::mix_seed(cfg.seed, 7000 + k));
        const std::size_t dim =
            1 + static_cast<std::size_t>(occlab::uniform01(rng) * cfg.prop9_max_dim);
        const occlab::LinearBlock blk =
            occlab::random_metzler_hurwitz(rng(), std::min<std::size_t>(dim, cfg.prop9_max_dim));
        const double half = cfg.period / 2.0;
        const occlab::PiecewiseSignal w{cfg.period,
                                        {0.0, half, cfg.period},
                                        {0.1 + occlab::uniform01(rng),
                                         0.1 + occlab::uniform01(rng)}};
        const double residual = occlab::verify_prop9(blk, w);
        if (residual > worst) {
            worst = residual;
            worst_block = k;
        }
    }
    write_json_report(out_dir / "prop9_report.json",
                      json{{"blocks", cfg.prop9_blocks},
                           {"max_relative_residual", worst},
                           {"worst_block", worst_block},
                           {"tolerance", cfg.prop9_tolerance}},
                      cfg);
    return worst > cfg.prop9_tolerance ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"occlab: periodic-control laboratory for the two-rate occupancy model"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand name

    std::string config_path, out_dir = ".", control_path;
    std::uint64_t seed_value = 1;
    double tol_value = 1e-9;
    app.add_option("--config", config_path, "experiment configuration JSON");
    app.add_option("--out", out_dir, "output directory");
    const CLI::Option* seed_flag = app.add_option("--seed", seed_value, "override config seed");
    const CLI::Option* tol_flag =
        app.add_option("--tolerance", tol_value, "override config tolerance");

    CLI::App* simulate = app.add_subcommand("simulate", "steady-state trajectory and orbit summary");
    simulate->add_option("--control", control_path, "control JSON (default: constant control)");
    CLI::App* optimize = app.add_subcommand("optimize", "projected-ascent search for entrainment gain");
    CLI::App* pmp_check = app.add_subcommand("pmp-check", "extremality certificate for a control");
    pmp_check->add_option("--control", control_path, "control JSON (default: constant control)");
    CLI::App* cascade = app.add_subcommand("cascade", "cascade simulation and no-gain sweep");
    CLI::App* prop9 = app.add_subcommand("prop9", "DC-gain averaging residual sweep");

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg =
            load_config(config_path, seed_flag, seed_value, tol_flag, tol_value);
        const fs::path out(out_dir);
        if (simulate->parsed()) return cmd_simulate(cfg, control_path, out);
        if (optimize->parsed()) return cmd_optimize(cfg, out);
        if (pmp_check->parsed()) return cmd_pmp_check(cfg, control_path, out);
        if (cascade->parsed()) return cmd_cascade(cfg, out);
        if (prop9->parsed()) return cmd_prop9(cfg, out);
    } catch (const occlab::ValidationError& e) {
        std::cerr << nlohmann::json{{"error", e.code()}, {"detail", e.what()}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", "internal"}, {"detail", e.what()}}.dump() << "\n";
        return 2;
    }
    return 0;
}
