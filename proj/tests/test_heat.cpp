#include <catch2/catch_amalgamated.hpp>

#include "physgen/foam/foamgen.hpp"
#include "physgen/solvers/heat.hpp"
#include "support/oracles.hpp"

using namespace physgen;
using namespace physgen::heat;

TEST_CASE("uniform conductivity: linear temperature and exact k_eff") {
    ThermalProblem prob;
    Array2 k(64, 64, 7.0);
    HeatSolver s(k, prob);
    CHECK(s.residual_norm() <= 1e-10);
    CHECK(oracles::rel_err(s.effective_k(k), 7.0) <= 1e-8);
    for (int r = 0; r <= 64; ++r)
        for (int c = 0; c <= 64; ++c) {
            double y = 1.0 - r / 64.0;
            REQUIRE(s.temperature().nodal(r, c) ==
                    Catch::Approx(300.0 + 200.0 * y).margin(1e-9));
        }
}

TEST_CASE("series layers: interface temperature and harmonic-mean k_eff") {
    ThermalProblem prob;
    Array2 k(64, 64);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) k(r, c) = r < 32 ? 100.0 : 1.0; // top half solid
    HeatSolver s(k, prob);
    double expect_keff = 2.0 / (1.0 / 100.0 + 1.0 / 1.0);
    CHECK(oracles::rel_err(s.effective_k(k), expect_keff) < 0.02);
    // 1D series-resistance interface value at y = 0.5 (image row 32)
    double t_interface = 300.0 + 200.0 * (0.5 / 1.0) / (0.5 / 1.0 + 0.5 / 100.0);
    CHECK(t_interface == Catch::Approx(498.0198).margin(1e-3));
    for (int c = 0; c <= 64; ++c)
        REQUIRE(s.temperature().nodal(32, c) == Catch::Approx(t_interface).margin(1e-6));
}

TEST_CASE("parallel layers: arithmetic-mean k_eff") {
    ThermalProblem prob;
    Array2 k(64, 64);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) k(r, c) = c < 32 ? 100.0 : 1.0;
    HeatSolver s(k, prob);
    CHECK(oracles::rel_err(s.effective_k(k), 50.5) < 0.02);
}

TEST_CASE("mirror symmetry of the temperature field") {
    ThermalProblem prob;
    auto img = foam::generate([] {
        foam::FoamSpec sp;
        sp.height_px = sp.width_px = 32;
        sp.cell_diameter_px = 8.0;
        sp.target_volume_fraction = 0.5;
        sp.rng_seed = 3;
        return sp;
    }());
    // symmetrize left-right
    Array2 k(32, 32);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 16; ++c) {
            double v = img.pixels(r, c) * 99.0 + 1.0;
            k(r, c) = v;
            k(r, 31 - c) = v;
        }
    HeatSolver s(k, prob);
    for (int r = 0; r <= 32; ++r)
        for (int c = 0; c <= 32; ++c)
            REQUIRE(s.temperature().nodal(r, c) ==
                    Catch::Approx(s.temperature().nodal(r, 32 - c)).margin(1e-9));
}

TEST_CASE("discrete maximum principle and flux balance on random media") {
    ThermalProblem prob;
    RngStream rng(21, 0);
    for (int trial = 0; trial < 5; ++trial) {
        Array2 k(24, 24);
        for (auto& v : k.raw()) v = rng.uniform() < 0.5 ? 1.0 : 100.0;
        HeatSolver s(k, prob);
        CHECK(s.temperature().nodal.min() >= 300.0 - 1e-9);
        CHECK(s.temperature().nodal.max() <= 500.0 + 1e-9);
        auto [top, bottom] = s.boundary_reactions(k);
        REQUIRE(oracles::rel_err(std::abs(top), std::abs(bottom)) < 1e-6);
    }
}

TEST_CASE("Wiener bounds on random binary structures") {
    ThermalProblem prob;
    RngStream rng(22, 0);
    for (int trial = 0; trial < 20; ++trial) {
        foam::FoamSpec sp;
        sp.height_px = sp.width_px = 32;
        sp.cell_diameter_px = rng.uniform(5.0, 12.0);
        sp.target_volume_fraction = rng.uniform(0.3, 0.8);
        sp.rng_seed = 1000 + trial;
        auto img = foam::generate(sp);
        Array2 k = conductivity_from_image(img.pixels, prob);
        double keff = effective_conductivity(k, prob);
        double phi = img.volume_fraction;
        double harmonic = 1.0 / (phi / prob.k_solid + (1.0 - phi) / prob.k_gas);
        double arithmetic = phi * prob.k_solid + (1.0 - phi) * prob.k_gas;
        REQUIRE(keff >= harmonic * 0.99);
        REQUIRE(keff <= arithmetic * 1.01);
    }
}

TEST_CASE("adjoint gradient vs finite differences (8x8 exhaustive)") {
    ThermalProblem prob;
    RngStream rng(23, 0);
    Array2 k(8, 8);
    for (auto& v : k.raw()) v = std::exp(rng.uniform(0.0, std::log(100.0)));
    auto res = effective_conductivity_with_gradient(k, prob);
    double max_rel = 0.0;
    for (size_t i = 0; i < k.size(); ++i) {
        double h = 1e-6 * k[i];
        double fd = oracles::central_fd(
            [&](double v) {
                Array2 kk = k;
                kk[i] = v;
                return effective_conductivity(kk, prob);
            },
            k[i], h);
        max_rel = std::max(max_rel, oracles::rel_err(res.grad[i], fd, 1e-10));
    }
    INFO("max relative error " << max_rel);
    CHECK(max_rel <= 1e-5);
}

TEST_CASE("adjoint gradient vs finite differences (32x32 sampled)") {
    ThermalProblem prob;
    RngStream rng(24, 0);
    Array2 k(32, 32);
    for (auto& v : k.raw()) v = rng.uniform() < 0.5 ? 1.0 : 100.0;
    auto res = effective_conductivity_with_gradient(k, prob);
    double max_rel = 0.0;
    for (int trial = 0; trial < 8; ++trial) {
        size_t i = rng.next_u64() % k.size();
        double h = 1e-4 * k[i]; // small enough for truncation, large enough for roundoff
        double fd = oracles::central_fd(
            [&](double v) {
                Array2 kk = k;
                kk[i] = v;
                return effective_conductivity(kk, prob);
            },
            k[i], h);
        max_rel = std::max(max_rel, oracles::rel_err(res.grad[i], fd, 1e-10));
    }
    INFO("max relative error " << max_rel);
    CHECK(max_rel <= 1e-4);
}

TEST_CASE("gradient concentrates on flux bottlenecks") {
    ThermalProblem prob;
    // a solid column rises from the bottom wall and stops one element short of
    // the top wall: the gas gap above it throttles the column's entire flux
    Array2 k(8, 8, prob.k_gas);
    for (int r = 1; r < 8; ++r) k(r, 3) = prob.k_solid;
    auto res = effective_conductivity_with_gradient(k, prob);
    double bottleneck = std::abs(res.grad(0, 3)); // the gap element
    double far_void = std::abs(res.grad(6, 6));   // background gas
    INFO("bottleneck " << bottleneck << " far void " << far_void);
    CHECK(bottleneck > 5.0 * far_void);
}

TEST_CASE("conductivity scaling leaves T unchanged and scales k_eff") {
    ThermalProblem prob;
    RngStream rng(25, 0);
    Array2 k(16, 16);
    for (auto& v : k.raw()) v = std::exp(rng.uniform(0.0, 3.0));
    HeatSolver a(k, prob);
    Array2 k2 = k;
    k2 *= 5.0;
    HeatSolver b(k2, prob);
    for (int r = 0; r <= 16; ++r)
        for (int c = 0; c <= 16; ++c)
            REQUIRE(a.temperature().nodal(r, c) ==
                    Catch::Approx(b.temperature().nodal(r, c)).margin(1e-8));
    CHECK(oracles::rel_err(b.effective_k(k2), 5.0 * a.effective_k(k)) < 1e-12);
}

TEST_CASE("invalid conductivity fields are rejected") {
    ThermalProblem prob;
    Array2 k(8, 8, 1.0);
    k(3, 3) = 0.0;
    CHECK_THROWS(HeatSolver(k, prob));
    Array2 rect(4, 8, 1.0);
    CHECK_THROWS(HeatSolver(rect, prob));
}
