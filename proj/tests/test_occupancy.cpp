#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "occlab/occupancy.hpp"
#include "occlab/solver.hpp"
#include "oracles.hpp"

using namespace occlab;

namespace {
const ControlBounds kBox{0.1, 0.9};
const MeanTargets kMeans{0.3, 0.6};
}  // namespace

TEST_CASE("propagate_piece fixed points and closed form") {
    // symmetric equilibrium at 1/2
    CHECK(propagate_piece(0.5, 0.9, 0.9, 3.7) == 0.5);
    // constant-extremal level u0/(u0+u1)
    const double third = 0.3 / 0.9;
    CHECK_THAT(propagate_piece(third, 0.3, 0.6, 11.0), Catch::Matchers::WithinAbs(third, 1e-15));
    // relaxation toward 0.1 from 0.9 over one unit: 0.1 + 0.8 e^{-1}
    const double x = propagate_piece(0.9, 0.1, 0.9, 1.0);
    CHECK_THAT(x, Catch::Matchers::WithinAbs(0.3943035529371539, 1e-12));
    CHECK_THAT(x, Catch::Matchers::WithinAbs(oracles::rk4_occupancy(0.9, 0.1, 0.9, 1.0), 1e-9));
    // zero window is the identity
    CHECK(propagate_piece(0.42, 0.3, 0.6, 0.0) == 0.42);
}

TEST_CASE("propagation matches RK4 on random pieces") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ud(0.1, 0.9);
    std::uniform_real_distribution<double> xd(0.05, 0.95);
    std::uniform_real_distribution<double> td(0.01, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const double u0 = ud(rng), u1 = ud(rng), x0 = xd(rng), dt = td(rng);
        CHECK_THAT(propagate_piece(x0, u0, u1, dt),
                   Catch::Matchers::WithinAbs(oracles::rk4_occupancy(x0, u0, u1, dt), 1e-9));
    }
}

TEST_CASE("propagation semigroup property") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> ud(0.1, 0.9);
    std::uniform_real_distribution<double> td(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        const double u0 = ud(rng), u1 = ud(rng), x0 = ud(rng);
        const double dt1 = td(rng), dt2 = td(rng);
        const double two_steps = propagate_piece(propagate_piece(x0, u0, u1, dt1), u0, u1, dt2);
        const double one_step = propagate_piece(x0, u0, u1, dt1 + dt2);
        CHECK_THAT(two_steps, Catch::Matchers::WithinAbs(one_step, 1e-14));
    }
}

TEST_CASE("poincare coefficients for the constant control") {
    const PeriodicControl ctrl = make_constant(10.0, kBox, kMeans);
    const auto m = poincare_map_coefficients(ctrl);
    CHECK_THAT(m.alpha, Catch::Matchers::WithinRel(std::exp(-9.0), 1e-14));
    CHECK_THAT(m.beta, Catch::Matchers::WithinRel((1.0 - std::exp(-9.0)) / 3.0, 1e-13));
}

TEST_CASE("poincare map degenerates to the identity as T -> 0") {
    const PeriodicControl ctrl = make_constant(1e-12, kBox, kMeans);
    const auto m = poincare_map_coefficients(ctrl);
    CHECK_THAT(m.alpha, Catch::Matchers::WithinAbs(1.0, 1e-11));
    CHECK_THAT(m.beta, Catch::Matchers::WithinAbs(0.0, 1e-11));
}

TEST_CASE("poincare alpha is a strict contraction and the map is affine") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const PeriodicControl ctrl =
            random_feasible(rng(), kBox, kMeans, 10.0, 1 + int(rng() % 12));
        const auto m = poincare_map_coefficients(ctrl);
        CHECK(m.alpha < 1.0);
        CHECK(m.alpha <= std::exp(-2.0 * kBox.lower * ctrl.period) * (1.0 + 1e-12));
        CHECK(m.alpha > 0.0);
        CHECK(m.beta > 0.0);
        CHECK(m.beta < 1.0);

        // three-point collinearity of the period map
        const auto advance = [&](double x) {
            for (std::size_t i = 0; i < ctrl.piece_count(); ++i)
                x = propagate_piece(x, ctrl.values0[i], ctrl.values1[i], ctrl.piece_length(i));
            return x;
        };
        const double fa = advance(0.2), fb = advance(0.8), fm = advance(0.5);
        CHECK_THAT(fm, Catch::Matchers::WithinAbs(0.5 * (fa + fb), 1e-12));
        CHECK_THAT(fa, Catch::Matchers::WithinAbs(m.alpha * 0.2 + m.beta, 1e-12));
    }
}

TEST_CASE("periodic orbit of constant controls sits at u0/(u0+u1)") {
    const OccupancyOrbit orbit = periodic_orbit(make_constant(10.0, kBox, kMeans));
    CHECK_THAT(orbit.initial, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-14));
    const OccupancyOrbit sym = periodic_orbit(make_constant(10.0, kBox, {0.5, 0.5}));
    CHECK_THAT(sym.initial, Catch::Matchers::WithinAbs(0.5, 1e-14));
}

TEST_CASE("periodic orbit matches the long-run iteration oracle") {
    // square wave u0 in {0.1, 0.5} (mean 0.3), u1 constant 0.6
    const PeriodicControl ctrl{10.0, {0.0, 5.0, 10.0}, {0.1, 0.5}, {0.6, 0.6}, kBox};
    ctrl.validate();
    const OccupancyOrbit orbit = periodic_orbit(ctrl);
    const double iterated = oracles::orbit_by_iteration(ctrl, 0.5, 200);
    CHECK_THAT(orbit.initial, Catch::Matchers::WithinAbs(iterated, 1e-10));
}

TEST_CASE("orbit samples stay strictly inside (0,1) and close periodically") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const PeriodicControl ctrl =
            random_feasible(rng(), kBox, kMeans, 10.0, 1 + int(rng() % 16));
        const OccupancyOrbit orbit = periodic_orbit(ctrl);
        for (const auto& [t, x] : orbit.samples) {
            CHECK(x > 0.0);
            CHECK(x < 1.0);
        }
        CHECK(std::abs(orbit.samples.back().second - orbit.initial) <= 1e-12);
    }
}

TEST_CASE("average throughput of constant controls") {
    const OccupancyOrbit orbit = periodic_orbit(make_constant(10.0, kBox, kMeans));
    CHECK_THAT(orbit.throughput_raw, Catch::Matchers::WithinAbs(0.2, 1e-14));
    CHECK_THAT(orbit.throughput_normalized, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-14));

    const OccupancyOrbit sym = periodic_orbit(make_constant(10.0, kBox, {0.5, 0.5}));
    CHECK_THAT(sym.throughput_raw, Catch::Matchers::WithinAbs(0.25, 1e-14));
    CHECK_THAT(sym.throughput_normalized, Catch::Matchers::WithinAbs(0.5, 1e-14));
}

TEST_CASE("raw throughput lies in (0, upper)") {
    std::mt19937_64 rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        const PeriodicControl ctrl = random_feasible(rng(), kBox, kMeans, 8.0, 6);
        const OccupancyOrbit orbit = periodic_orbit(ctrl);
        CHECK(orbit.throughput_raw > 0.0);
        CHECK(orbit.throughput_raw < kBox.upper);
    }
}

TEST_CASE("throughput integral agrees with a quadrature oracle") {
    std::mt19937_64 rng(321);
    std::uniform_real_distribution<double> ud(0.1, 0.9);
    for (int trial = 0; trial < 20; ++trial) {
        const double u0 = ud(rng), u1 = ud(rng), x0 = ud(rng), dt = 0.8;
        // Simpson quadrature of u1 * x(t) as an independent reference
        const int steps = 2000;
        double acc = 0.0;
        for (int k = 0; k <= steps; ++k) {
            const double t = dt * k / steps;
            const double w = (k == 0 || k == steps) ? 1.0 : (k % 2 ? 4.0 : 2.0);
            acc += w * u1 * propagate_piece(x0, u0, u1, t);
        }
        acc *= dt / steps / 3.0;
        CHECK_THAT(throughput_piece_integral(x0, u0, u1, dt),
                   Catch::Matchers::WithinAbs(acc, 1e-10));
    }
}

TEST_CASE("proportional controls reproduce the constant trajectory and cost") {
    std::mt19937_64 rng(555);
    for (int trial = 0; trial < 25; ++trial) {
        // u0 feasible in [0.1, 0.45] so that 2 u0 stays inside [0.1, 0.9]
        PeriodicControl narrow = random_feasible(rng(), {0.1, 0.45}, {0.3, 0.35}, 10.0, 8);
        PeriodicControl ctrl{narrow.period, narrow.breakpoints, narrow.values0, {}, kBox};
        ctrl.values1.resize(ctrl.values0.size());
        for (std::size_t i = 0; i < ctrl.values0.size(); ++i)
            ctrl.values1[i] = 2.0 * ctrl.values0[i];
        ctrl.validate();

        const OccupancyOrbit orbit = periodic_orbit(ctrl);
        CHECK_THAT(orbit.initial, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-10));
        for (const auto& [t, x] : orbit.samples)
            CHECK_THAT(x, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-10));
        CHECK_THAT(orbit.throughput_normalized, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-10));
    }
}

TEST_CASE("contraction_check verifies the alpha^k identity") {
    const PeriodicControl ctrl = make_constant(10.0, kBox, kMeans);
    SECTION("identical starts stay identical") {
        const ContractionReport r = contraction_check(ctrl, 0.4, 0.4, 4);
        for (double d : r.differences) CHECK(d == 0.0);
    }
    SECTION("default configuration contracts by e^-9 per period") {
        const ContractionReport r = contraction_check(ctrl, 0.1, 0.9, 1);
        CHECK_THAT(r.alpha, Catch::Matchers::WithinRel(std::exp(-9.0), 1e-12));
        CHECK_THAT(r.differences[0],
                   Catch::Matchers::WithinRel(0.8 * std::exp(-9.0), 1e-12));
        CHECK(r.max_residual <= 1e-12);
    }
    SECTION("differences decrease strictly") {
        // short period keeps the contraction factor moderate, so the
        // differences stay far above rounding for every tested k
        const PeriodicControl wave{1.0, {0.0, 0.5, 1.0}, {0.1, 0.5}, {0.6, 0.6}, kBox};
        wave.validate();
        const ContractionReport r = contraction_check(wave, 0.15, 0.85, 6);
        for (std::size_t k = 1; k < r.differences.size(); ++k)
            CHECK(r.differences[k] < r.differences[k - 1]);
        CHECK(r.max_residual <= 1e-12);
    }
}

TEST_CASE("trajectory CSV export") {
    const OccupancyOrbit orbit = periodic_orbit(make_constant(10.0, kBox, kMeans));
    std::ostringstream os;
    write_trajectory_csv(os, orbit, 10);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,x1,u0,u1");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 11);
}
