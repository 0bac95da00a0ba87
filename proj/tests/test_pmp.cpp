#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "occlab/pmp.hpp"
#include "occlab/solver.hpp"
#include "oracles.hpp"

using namespace occlab;

namespace {

const ControlBounds kBox{0.1, 0.9};
const MeanTargets kMeans{0.3, 0.6};

/// Two-switch bang-bang control hitting the mean targets exactly, both
/// channels switching high -> low in phase at their duty cycles.
PeriodicControl two_phase_bangbang(double period = 10.0) {
    const double duty0 = (kMeans.mean0 - kBox.lower) / (kBox.upper - kBox.lower);  // 0.25
    const double duty1 = (kMeans.mean1 - kBox.lower) / (kBox.upper - kBox.lower);  // 0.625
    const double t0 = duty0 * period, t1 = duty1 * period;
    const PeriodicControl ctrl{period,
                               {0.0, t0, t1, period},
                               {kBox.upper, kBox.lower, kBox.lower},
                               {kBox.upper, kBox.upper, kBox.lower},
                               kBox};
    ctrl.validate();
    return ctrl;
}

/// Independent switching-function reference: read the u-coefficients off
/// the full Hamiltonian by linearity.
std::pair<double, double> phi_from_hamiltonian(double x1, double p1, double p2, double p3) {
    const auto full = [&](double u0, double u1) {
        return p1 * (u0 * (1.0 - x1) - u1 * x1) + p2 * u0 + p3 * u1 + u1 * x1;
    };
    return {full(1.0, 0.0) - full(0.0, 0.0), full(0.0, 1.0) - full(0.0, 0.0)};
}

}  // namespace

TEST_CASE("costate propagation fixed points") {
    CHECK(costate_propagate_piece(2.0 / 3.0, 0.3, 0.6, 4.2) == Catch::Approx(2.0 / 3.0).margin(1e-13));
    CHECK(costate_propagate_piece(0.5, 0.5, 0.5, 1.0) == Catch::Approx(0.5).margin(1e-15));
    CHECK(costate_propagate_piece(0.77, 0.3, 0.6, 0.0) == 0.77);
}

TEST_CASE("costate propagation matches RK4") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ud(0.1, 0.9);
    std::uniform_real_distribution<double> td(0.01, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const double u0 = ud(rng), u1 = ud(rng), p0 = ud(rng), dt = td(rng);
        CHECK_THAT(costate_propagate_piece(p0, u0, u1, dt),
                   Catch::Matchers::WithinAbs(oracles::rk4_costate(p0, u0, u1, dt), 1e-9));
    }
}

TEST_CASE("periodic costate of constant controls") {
    const std::vector<double> path = costate_periodic(make_constant(10.0, kBox, kMeans));
    for (double p : path) CHECK_THAT(p, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-13));

    const std::vector<double> sym = costate_periodic(make_constant(10.0, kBox, {0.5, 0.5}));
    for (double p : sym) CHECK_THAT(p, Catch::Matchers::WithinAbs(0.5, 1e-13));
}

TEST_CASE("periodic costate matches the bisection oracle and closes") {
    const PeriodicControl wave{10.0, {0.0, 5.0, 10.0}, {0.1, 0.5}, {0.6, 0.6}, kBox};
    wave.validate();
    const std::vector<double> path = costate_periodic(wave);
    CHECK_THAT(path.front(), Catch::Matchers::WithinAbs(oracles::costate_by_bisection(wave), 1e-10));
    CHECK(std::abs(path.front() - path.back()) <= 1e-12);

    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const PeriodicControl ctrl = random_feasible(rng(), kBox, kMeans, 10.0, 10);
        const std::vector<double> p = costate_periodic(ctrl);
        CHECK(std::abs(p.front() - p.back()) <= 1e-12);
        CHECK_THAT(p.front(), Catch::Matchers::WithinAbs(oracles::costate_by_bisection(ctrl), 1e-10));
    }
}

TEST_CASE("abnormal multiplier: the homogeneous costate map has no periodic solution") {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        const PeriodicControl ctrl = random_feasible(rng(), kBox, kMeans, 10.0, 8);
        // with the cost multiplier removed, p1(T) = (1/alpha) p1(0) and 1/alpha > 1
        const double expansion = 1.0 / poincare_map_coefficients(ctrl).alpha;
        CHECK(expansion > 1.0);
        // the only fixed point of p -> expansion * p is p = 0, which is
        // ruled out as a certificate (the co-state must be nonzero)
        for (double p : {0.25, 0.5, 0.9})
            CHECK(std::abs(expansion * p - p) > 1e-6);
    }
}

TEST_CASE("singular costate closed forms") {
    const Costate a = singular_costate(1.0 / 3.0);
    CHECK_THAT(a.p2, Catch::Matchers::WithinAbs(-4.0 / 9.0, 1e-15));
    CHECK_THAT(a.p3, Catch::Matchers::WithinAbs(-1.0 / 9.0, 1e-15));
    CHECK_THAT(a.p1_initial, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));

    const Costate b = singular_costate(0.5);
    CHECK_THAT(b.p2, Catch::Matchers::WithinAbs(-0.25, 1e-15));
    CHECK_THAT(b.p3, Catch::Matchers::WithinAbs(-0.25, 1e-15));
    CHECK_THAT(b.p1_initial, Catch::Matchers::WithinAbs(0.5, 1e-15));

    CHECK_THROWS_AS(singular_costate(0.0), ValidationError);
    CHECK_THROWS_AS(singular_costate(1.2), ValidationError);

    // both switching functions vanish identically along x1 = c
    for (double c : {0.2, 1.0 / 3.0, 0.5, 0.8}) {
        const Costate cs = singular_costate(c);
        const auto [f0, f1] = switching_functions(c, cs.p1_initial, cs.p2, cs.p3);
        CHECK_THAT(f0, Catch::Matchers::WithinAbs(0.0, 1e-15));
        CHECK_THAT(f1, Catch::Matchers::WithinAbs(0.0, 1e-15));
    }
}

TEST_CASE("switching functions match the Hamiltonian coefficients") {
    SECTION("simple algebra") {
        const auto [f0, f1] = switching_functions(0.3, 1.0, 0.0, 0.0);
        CHECK_THAT(f0, Catch::Matchers::WithinAbs(0.7, 1e-15));
        CHECK(f0 > 0.0);
        (void)f1;
    }
    SECTION("random tuples") {
        std::mt19937_64 rng(41);
        std::uniform_real_distribution<double> d(-1.0, 1.0);
        for (int trial = 0; trial < 100; ++trial) {
            const double x = 0.5 * (d(rng) + 1.0), p1 = d(rng), p2 = d(rng), p3 = d(rng);
            const auto [f0, f1] = switching_functions(x, p1, p2, p3);
            const auto [g0, g1] = phi_from_hamiltonian(x, p1, p2, p3);
            CHECK_THAT(f0, Catch::Matchers::WithinAbs(g0, 1e-14));
            CHECK_THAT(f1, Catch::Matchers::WithinAbs(g1, 1e-14));
        }
    }
}

TEST_CASE("hamiltonian maximization picks the bang corners") {
    const auto argmax_corner = [](const Costate& cs, double x1) {
        double best = -1e300;
        std::pair<double, double> arg{0.0, 0.0};
        for (double u0 : {kBox.lower, kBox.upper})
            for (double u1 : {kBox.lower, kBox.upper}) {
                const double h = hamiltonian(u0, u1, x1, cs);
                if (h > best) {
                    best = h;
                    arg = {u0, u1};
                }
            }
        return arg;
    };
    SECTION("phi positive in both channels") {
        const Costate cs{0.9, 0.5, 0.5, 0.0};  // phi0, phi1 > 0 at x = 0.5
        CHECK(argmax_corner(cs, 0.5) == std::pair{kBox.upper, kBox.upper});
    }
    SECTION("mixed signs select opposite corners") {
        const Costate cs{0.9, -1.0, 0.5, 0.0};  // phi0 < 0, phi1 > 0 at x = 0.5
        CHECK(argmax_corner(cs, 0.5) == std::pair{kBox.lower, kBox.upper});
    }
    SECTION("vanishing phis make the Hamiltonian control-independent") {
        const Costate cs = singular_costate(0.5);
        const double href = hamiltonian(kBox.lower, kBox.lower, 0.5, cs);
        for (double u0 : {0.2, 0.5, 0.9})
            for (double u1 : {0.2, 0.5, 0.9})
                CHECK_THAT(hamiltonian(u0, u1, 0.5, cs), Catch::Matchers::WithinAbs(href, 1e-15));
    }
}

TEST_CASE("arc classification") {
    SECTION("constant optimal control is one singular arc") {
        const PeriodicControl ctrl = make_constant(10.0, kBox, kMeans);
        const OccupancyOrbit orbit = periodic_orbit(ctrl);
        const SwitchingRecord rec =
            classify_arcs(ctrl, orbit, singular_costate(orbit.initial), 1e-9);
        REQUIRE(rec.arcs.size() == 1);
        CHECK(rec.arcs[0].type == ArcType::SingularBoth);
        CHECK(rec.arcs[0].t_begin == 0.0);
        CHECK(rec.arcs[0].t_end == 10.0);
    }
    SECTION("bang control with positive phis is one regular arc") {
        const PeriodicControl ctrl{10.0, {0.0, 10.0}, {0.9}, {0.9}, kBox};
        const OccupancyOrbit orbit = periodic_orbit(ctrl);  // x = 1/2, p1 = 1/2
        const Costate cs{0.5, 0.0, 0.0, 0.0};               // phi0 = phi1 = 0.25
        const SwitchingRecord rec = classify_arcs(ctrl, orbit, cs, 1e-9);
        REQUIRE(rec.arcs.size() == 1);
        CHECK(rec.arcs[0].type == ArcType::RegularPP);
    }
    SECTION("mixed-sign offsets are labeled as such") {
        const PeriodicControl ctrl{10.0, {0.0, 10.0}, {0.9}, {0.9}, kBox};
        const OccupancyOrbit orbit = periodic_orbit(ctrl);
        const Costate cs{0.5, -0.5, 0.0, 0.0};  // phi0 = -0.25, phi1 = +0.25
        const SwitchingRecord rec = classify_arcs(ctrl, orbit, cs, 1e-9);
        REQUIRE(rec.arcs.size() == 1);
        CHECK(rec.arcs[0].type == ArcType::RegularMP);
    }
}

TEST_CASE("verify_extremal certifies the constant control") {
    const PeriodicControl ctrl = make_constant(10.0, kBox, kMeans);
    const CertificateReport report = verify_extremal(ctrl);
    CHECK(report.pass);
    CHECK(report.violations.empty());
    REQUIRE(report.switching.arcs.size() == 1);
    CHECK(report.switching.arcs[0].type == ArcType::SingularBoth);
    CHECK(report.max_abs_phi0 <= 1e-12);
    CHECK(report.max_abs_phi1 <= 1e-12);
    CHECK(report.transversality_residual <= 1e-12);
    CHECK_THAT(report.p0, Catch::Matchers::WithinRel(10.0 / 0.6, 1e-13));
    CHECK_THAT(report.p2, Catch::Matchers::WithinAbs(-4.0 / 9.0, 1e-10));
    CHECK_THAT(report.p3, Catch::Matchers::WithinAbs(-1.0 / 9.0, 1e-10));
}

TEST_CASE("verify_extremal certifies proportional companions") {
    const PeriodicControl base{10.0, {0.0, 4.0, 10.0}, {0.2, 0.3666666666666667},
                               {0.5, 0.5}, kBox};
    PeriodicControl ctrl = base;
    ctrl.values1 = {0.4, 0.7333333333333334};  // 2 * u0, same trajectory
    ctrl.validate();
    const CertificateReport report = verify_extremal(ctrl);
    CHECK(report.pass);
    REQUIRE_FALSE(report.switching.arcs.empty());
    for (const Arc& arc : report.switching.arcs) CHECK(arc.type == ArcType::SingularBoth);
}

TEST_CASE("verify_extremal rejects a feasible bang-bang control") {
    const PeriodicControl ctrl = two_phase_bangbang();
    CHECK_THAT(channel_mean(ctrl, 0), Catch::Matchers::WithinAbs(0.3, 1e-12));
    CHECK_THAT(channel_mean(ctrl, 1), Catch::Matchers::WithinAbs(0.6, 1e-12));
    const CertificateReport report = verify_extremal(ctrl);
    CHECK_FALSE(report.pass);
    CHECK_FALSE(report.violations.empty());
}

TEST_CASE("switching functions are Lipschitz at the sampled rate") {
    std::mt19937_64 rng(53);
    for (int trial = 0; trial < 10; ++trial) {
        const PeriodicControl ctrl = random_feasible(rng(), kBox, kMeans, 10.0, 8);
        const OccupancyOrbit orbit = periodic_orbit(ctrl);
        const Costate cs{costate_periodic(ctrl).front(), -0.5, -0.5, 0.0};
        const SwitchingRecord rec = classify_arcs(ctrl, orbit, cs, 1e-9, 1000);
        double max_p1 = 0.0;
        for (std::size_t i = 0; i < rec.times.size(); ++i) {
            const double p1 = (rec.phi0[i] - cs.p2) / (1.0 - orbit_sample(orbit, rec.times[i]));
            max_p1 = std::max(max_p1, std::abs(p1));
        }
        const double bound = kBox.upper * (max_p1 + 1.0) + 1e-6;
        for (std::size_t i = 1; i < rec.times.size(); ++i) {
            const double dt = rec.times[i] - rec.times[i - 1];
            if (dt <= 0.0) continue;
            CHECK(std::abs(rec.phi0[i] - rec.phi0[i - 1]) / dt <= bound);
            CHECK(std::abs(rec.phi1[i] - rec.phi1[i - 1]) / dt <= bound);
        }
    }
}

TEST_CASE("derivative sign opposition along random trajectories") {
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 20; ++trial) {
        const PeriodicControl ctrl = random_feasible(rng(), kBox, kMeans, 10.0, 6);
        const OccupancyOrbit orbit = periodic_orbit(ctrl);
        const std::vector<double> path = costate_periodic(ctrl);
        for (std::size_t i = 0; i < ctrl.piece_count(); ++i) {
            const double mid = 0.5 * ctrl.piece_length(i);
            const double x = propagate_piece(orbit.samples[i].second, ctrl.values0[i],
                                             ctrl.values1[i], mid);
            const double p1 = costate_propagate_piece(path[i], ctrl.values0[i],
                                                      ctrl.values1[i], mid);
            const double dphi0 = ctrl.values1[i] * (p1 - (1.0 - x));
            const double dphi1 = ctrl.values0[i] * ((1.0 - x) - p1);
            CHECK(dphi0 * dphi1 <= 0.0);
        }
    }
}

TEST_CASE("orbit and costate of feasible controls respect the extremal bounds") {
    std::mt19937_64 rng(61);
    const double lo = kBox.lower / (kBox.lower + kBox.upper);
    const double hi = kBox.upper / (kBox.lower + kBox.upper);
    for (int trial = 0; trial < 50; ++trial) {
        const PeriodicControl ctrl = random_feasible(rng(), kBox, kMeans, 10.0, 12);
        const OccupancyOrbit orbit = periodic_orbit(ctrl);
        for (const auto& [t, x] : orbit.samples) {
            CHECK(x > lo);
            CHECK(x < hi);
        }
        for (double p : costate_periodic(ctrl)) {
            CHECK(p > lo);
            CHECK(p < hi);
        }
    }
}

TEST_CASE("certificate serialization carries the required fields") {
    const PeriodicControl ctrl = make_constant(10.0, kBox, kMeans);
    const CertificateReport report = verify_extremal(ctrl);
    const nlohmann::json j = report;
    for (const char* key : {"pass", "violations", "arcs", "p1_initial", "p2", "p3", "p0"})
        CHECK(j.contains(key));
    CHECK(j["pass"].get<bool>());
    CHECK(j["arcs"].is_array());

    std::ostringstream os;
    write_certificate_csv(os, ctrl, report);
    std::istringstream in(os.str());
    std::string header;
    std::getline(in, header);
    CHECK(header == "t,x1,p1,phi0,phi1");
}
