#include <catch2/catch_amalgamated.hpp>
#include <Eigen/SparseCholesky>

#include "physgen/core/rng.hpp"
#include "physgen/foam/foamgen.hpp"
#include "physgen/solvers/fracture_adjoint.hpp"
#include "support/oracles.hpp"

using namespace physgen;
using namespace physgen::fracture;

namespace {

FractureProblem micro_problem(int n = 8) {
    FractureProblem prob;
    prob.mesh_n = n;
    prob.length_scale = n <= 8 ? 0.1 : 0.07;
    prob.load_steps = 5;
    prob.total_displacement = 0.001;
    return prob;
}

// Independent plane-strain linear-elastic reference: assembles the classic
// isotropic stiffness (no split, no degradation) on the same mesh and BCs and
// returns the top-edge reaction at the final displacement.
double elastic_reference_load(const Array2& modulus, const FractureProblem& prob) {
    int n = prob.mesh_n;
    double h = prob.domain / n;
    int nn = n + 1;
    int n_nodes = nn * nn;
    auto node = [&](int r, int c) { return r * nn + c; };
    std::vector<int> free_map(2 * n_nodes, -1);
    int n_free = 0;
    for (int nd = 0; nd < n_nodes; ++nd) {
        bool constrained = nd < nn || nd >= n * nn;
        if (!constrained) {
            free_map[2 * nd] = n_free++;
            free_map[2 * nd + 1] = n_free++;
        }
    }
    Eigen::VectorXd u = Eigen::VectorXd::Zero(2 * n_nodes);
    for (int c = 0; c < nn; ++c) u[2 * node(n, c) + 1] = -prob.total_displacement;
    const double g = 1.0 / std::sqrt(3.0);
    const double pts[4][2] = {{-g, -g}, {g, -g}, {g, g}, {-g, g}};
    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_free);
    auto assemble = [&](auto&& emit) {
        for (int er = 0; er < n; ++er)
            for (int ec = 0; ec < n; ++ec) {
                double E = modulus(n - 1 - er, ec);
                double lam = E * prob.poisson / ((1 + prob.poisson) * (1 - 2 * prob.poisson));
                double mu = E / (2 * (1 + prob.poisson));
                double D[3][3] = {{lam + 2 * mu, lam, 0}, {lam, lam + 2 * mu, 0}, {0, 0, mu}};
                std::array<int, 4> en = {node(er, ec), node(er, ec + 1), node(er + 1, ec + 1),
                                         node(er + 1, ec)};
                for (auto& pt : pts) {
                    double xi = pt[0], eta = pt[1];
                    double dxi[4] = {-(1 - eta) / 4, (1 - eta) / 4, (1 + eta) / 4, -(1 + eta) / 4};
                    double deta[4] = {-(1 - xi) / 4, -(1 + xi) / 4, (1 + xi) / 4, (1 - xi) / 4};
                    double w = h * h / 4;
                    double dndx[4], dndy[4];
                    for (int a = 0; a < 4; ++a) {
                        dndx[a] = dxi[a] * 2 / h;
                        dndy[a] = deta[a] * 2 / h;
                    }
                    for (int a = 0; a < 4; ++a)
                        for (int b = 0; b < 4; ++b) {
                            double Ba[3][2] = {{dndx[a], 0}, {0, dndy[a]}, {dndy[a], dndx[a]}};
                            double Bb[3][2] = {{dndx[b], 0}, {0, dndy[b]}, {dndy[b], dndx[b]}};
                            for (int ia = 0; ia < 2; ++ia)
                                for (int ib = 0; ib < 2; ++ib) {
                                    double acc = 0;
                                    for (int i = 0; i < 3; ++i)
                                        for (int j = 0; j < 3; ++j)
                                            acc += Ba[i][ia] * D[i][j] * Bb[j][ib];
                                    emit(2 * en[a] + ia, 2 * en[b] + ib, acc * w);
                                }
                        }
                }
            }
    };
    assemble([&](int ga, int gb, double v) {
        int fa = free_map[ga], fb = free_map[gb];
        if (fa < 0) return;
        if (fb >= 0)
            trips.emplace_back(fa, fb, v);
        else
            rhs[fa] -= v * u[gb];
    });
    Eigen::SparseMatrix<double> K(n_free, n_free);
    K.setFromTriplets(trips.begin(), trips.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(K);
    Eigen::VectorXd uf = ldlt.solve(rhs);
    for (int dof = 0; dof < 2 * n_nodes; ++dof)
        if (free_map[dof] >= 0) u[dof] = uf[free_map[dof]];
    // reaction: full stiffness action at top-node y dofs
    double load = 0.0;
    assemble([&](int ga, int gb, double v) {
        int nd = ga / 2;
        if (nd >= n * nn && ga % 2 == 1) load -= v * u[gb];
    });
    return load;
}

} // namespace

TEST_CASE("spectral split: hydrostatic states and recomposition") {
    double lambda = 2.3, mu = 1.4;
    double e = 0.01;
    auto spt = spectral_split(e, e, 0.0, lambda, mu); // hydrostatic tension
    CHECK(spt.psi_neg == 0.0);
    CHECK(spt.psi_pos == Catch::Approx(2 * lambda * e * e + 2 * mu * e * e).epsilon(1e-12));
    auto spc = spectral_split(-e, -e, 0.0, lambda, mu); // hydrostatic compression
    CHECK(spc.psi_pos == 0.0);
    CHECK(spc.psi_neg == Catch::Approx(2 * lambda * e * e + 2 * mu * e * e).epsilon(1e-12));

    RngStream rng(1, 0);
    for (int trial = 0; trial < 100; ++trial) {
        double exx = rng.uniform(-1, 1), eyy = rng.uniform(-1, 1), exy = rng.uniform(-1, 1);
        auto sp = spectral_split(exx, eyy, exy, lambda, mu);
        double tr = exx + eyy;
        double full[3] = {lambda * tr + 2 * mu * exx, lambda * tr + 2 * mu * eyy, 2 * mu * exy};
        for (int k = 0; k < 3; ++k)
            REQUIRE(std::abs(sp.spos[k] + sp.sneg[k] - full[k]) <= 1e-10);
        REQUIRE(sp.psi_pos >= 0.0);
        REQUIRE(sp.psi_neg >= 0.0);
    }
}

TEST_CASE("split tangent matches finite differences") {
    RngStream rng(2, 0);
    double lambda = 1.7, mu = 0.9;
    double max_rel = 0;
    for (int trial = 0; trial < 30; ++trial) {
        double exx = rng.uniform(-1, 1), eyy = rng.uniform(-1, 1), exy = rng.uniform(-1, 1);
        auto tg = spectral_split_tangent(exx, eyy, exy, lambda, mu);
        double hh = 1e-7;
        for (int j = 0; j < 3; ++j) {
            double dxx = j == 0 ? hh : 0, dyy = j == 1 ? hh : 0, dxy = j == 2 ? hh / 2 : 0;
            auto p = spectral_split(exx + dxx, eyy + dyy, exy + dxy, lambda, mu);
            auto m = spectral_split(exx - dxx, eyy - dyy, exy - dxy, lambda, mu);
            for (int i = 0; i < 3; ++i) {
                double fdp = (p.spos[i] - m.spos[i]) / (2 * hh);
                double fdn = (p.sneg[i] - m.sneg[i]) / (2 * hh);
                max_rel = std::max(max_rel, std::abs(fdp - tg.dpos[i][j]) /
                                                std::max(std::abs(fdp), 1.0));
                max_rel = std::max(max_rel, std::abs(fdn - tg.dneg[i][j]) /
                                                std::max(std::abs(fdn), 1.0));
            }
        }
    }
    CHECK(max_rel <= 1e-6);
}

TEST_CASE("uniform bar in tension matches the 0D closed form") {
    FractureProblem prob = micro_problem();
    prob.poisson = 0.0;            // keeps the strain state exactly uniform
    prob.total_displacement = -0.002; // tension
    prob.load_steps = 3;
    Array2 mod(8, 8, prob.e_solid);
    FractureSolver s(mod, prob);
    auto fr = s.solve();
    double H = fr.states.back().history[0];
    REQUIRE(H > 0.0);
    double z0d = 2 * H / (prob.g_c / prob.length_scale + 2 * H);
    for (int i = 0; i < fr.states.back().zeta.size(); ++i)
        REQUIRE(std::abs(fr.states.back().zeta[i] - z0d) <= 1e-6);
}

TEST_CASE("large g_c recovers the linear-elastic response within 1%") {
    FractureProblem prob = micro_problem(8);
    prob.g_c = 1e6; // degradation never activates
    prob.load_steps = 4;
    RngStream rng(5, 0);
    Array2 mod(8, 8);
    for (auto& v : mod.raw())
        v = prob.e_void + (prob.e_solid - prob.e_void) * rng.uniform(0.0, 1.0);
    FractureSolver s(mod, prob);
    auto fr = s.solve();
    double elastic = elastic_reference_load(mod, prob);
    INFO("fracture load " << fr.states.back().load << " elastic " << elastic);
    CHECK(oracles::rel_err(fr.states.back().load, elastic) < 0.01);
    for (const auto& st : fr.states) REQUIRE(st.zeta.maxCoeff() < 1e-3);
    // absorbed energy of the (linear) run is the triangle area
    double k = fr.states.back().load / fr.states.back().displacement;
    double triangle = 0.5 * k * fr.states.back().displacement * fr.states.back().displacement;
    CHECK(oracles::rel_err(fr.absorbed_energy, triangle) < 1e-3);
}

TEST_CASE("bounds, history monotonicity, and irreversibility on unload") {
    FractureProblem prob = micro_problem(8);
    prob.displacement_schedule = {0.002, 0.004, 0.006, 0.004, 0.002}; // load then unload
    foam::FoamSpec spec;
    spec.height_px = spec.width_px = 8;
    spec.cell_diameter_px = 3;
    spec.target_volume_fraction = 0.6;
    spec.rng_seed = 7;
    auto img = foam::generate(spec);
    Array2 mod = modulus_from_image(img.pixels, prob);
    FractureSolver s(mod, prob);
    auto fr = s.solve();
    REQUIRE(fr.states.size() == 5);
    for (const auto& st : fr.states) {
        REQUIRE(st.zeta.minCoeff() >= -1e-8);
        REQUIRE(st.zeta.maxCoeff() <= 1.0 + 1e-8);
    }
    for (size_t n = 1; n < fr.states.size(); ++n)
        for (size_t q = 0; q < fr.states[n].history.size(); ++q)
            REQUIRE(fr.states[n].history[q] >= fr.states[n - 1].history[q]);
    // unloading freezes H, so the phase field stays put
    const auto& peak = fr.states[2];
    const auto& end = fr.states[4];
    for (int i = 0; i < peak.zeta.size(); ++i)
        REQUIRE(end.zeta[i] == Catch::Approx(peak.zeta[i]).margin(1e-9));
}

TEST_CASE("absorbed energy equals the external work sum") {
    FractureProblem prob = micro_problem(8);
    prob.total_displacement = 0.004;
    prob.load_steps = 6;
    Array2 mod(8, 8, prob.e_solid / 3);
    FractureSolver s(mod, prob);
    auto fr = s.solve();
    double work = 0.0, prev_load = 0.0, prev_d = 0.0;
    for (const auto& st : fr.states) {
        work += 0.5 * (st.load + prev_load) * (st.displacement - prev_d);
        prev_load = st.load;
        prev_d = st.displacement;
    }
    CHECK(fr.absorbed_energy == Catch::Approx(work).epsilon(1e-12));
    CHECK(fr.absorbed_energy >= 0.0);
}

TEST_CASE("adjoint matches finite differences before cracking") {
    FractureProblem prob = micro_problem(8);
    prob.stagger_tol = 1e-10;
    RngStream rng(3, 0);
    Array2 mod(8, 8);
    for (auto& v : mod.raw())
        v = prob.e_void + (prob.e_solid - prob.e_void) * rng.uniform(0.2, 1.0);
    auto res = absorbed_energy_with_gradient(mod, prob);
    double max_rel = 0;
    for (int trial = 0; trial < 6; ++trial) {
        int idx = static_cast<int>(rng.next_u32() % 64);
        double h = 1e-4 * mod[idx];
        Array2 mp = mod, mm = mod;
        mp[idx] += h;
        mm[idx] -= h;
        FractureSolver sp(mp, prob), sm(mm, prob);
        double fd = (sp.solve().absorbed_energy - sm.solve().absorbed_energy) / (2 * h);
        double rel = std::abs(fd - res.grad_modulus[idx]) /
                     std::max({std::abs(fd), std::abs(res.grad_modulus[idx]), 1e-30});
        max_rel = std::max(max_rel, rel);
    }
    INFO("max relative error " << max_rel);
    CHECK(max_rel <= 1e-4);
}

TEST_CASE("adjoint matches finite differences with cracks, away from the path") {
    FractureProblem prob;
    prob.mesh_n = 16;
    prob.length_scale = 0.07;
    prob.load_steps = 10;
    prob.total_displacement = 0.01;
    prob.stagger_tol = 1e-8;
    foam::FoamSpec spec;
    spec.height_px = spec.width_px = 16;
    spec.cell_diameter_px = 5;
    spec.target_volume_fraction = 0.55;
    spec.rng_seed = 4;
    auto img = foam::generate(spec);
    Array2 mod = modulus_from_image(img.pixels, prob);
    auto res = absorbed_energy_with_gradient(mod, prob);
    // element-mean phase field for the crack-path exclusion
    FractureSolver probe(mod, prob);
    const auto& last = res.forward.states.back();
    Array2 elem_z(16, 16, 0.0);
    for (int er = 0; er < 16; ++er)
        for (int ec = 0; ec < 16; ++ec) {
            auto en = probe.mesh().enodes(er, ec);
            double z = 0;
            for (int a = 0; a < 4; ++a) z += last.zeta[en[a]] / 4;
            elem_z(16 - 1 - er, ec) = z;
        }
    std::vector<std::pair<int, int>> eligible;
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            bool near_crack = false;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < 16 && cc >= 0 && cc < 16 && elem_z(rr, cc) > 0.7)
                        near_crack = true;
                }
            if (!near_crack) eligible.emplace_back(r, c);
        }
    REQUIRE(eligible.size() >= 5);
    RngStream rng(9, 0);
    double max_rel = 0;
    for (int trial = 0; trial < 5; ++trial) {
        auto [r, c] = eligible[rng.next_u32() % eligible.size()];
        double h = 1e-4 * mod(r, c);
        Array2 mp = mod, mm = mod;
        mp(r, c) += h;
        mm(r, c) -= h;
        FractureSolver sp(mp, prob), sm(mm, prob);
        double fd = (sp.solve().absorbed_energy - sm.solve().absorbed_energy) / (2 * h);
        double an = res.grad_modulus(r, c);
        double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12});
        max_rel = std::max(max_rel, rel);
    }
    INFO("max relative error " << max_rel);
    CHECK(max_rel <= 1e-2);
}

TEST_CASE("zero objective weights give a zero gradient") {
    FractureProblem prob = micro_problem(8);
    prob.load_steps = 3;
    Array2 mod(8, 8, prob.e_solid);
    FractureSolver s(mod, prob);
    auto fr = s.solve();
    FractureAdjoint adj(s);
    std::vector<double> zero_bar(fr.states.size(), 0.0);
    Array2 grad = adj.backward(fr, zero_bar);
    for (size_t i = 0; i < grad.size(); ++i) REQUIRE(grad[i] == 0.0);
}

TEST_CASE("configuration validation and failure reporting") {
    FractureProblem bad;
    bad.mesh_n = 8; // l = 0.05 under-resolved at h = 0.125
    CHECK_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("length scale"));
    FractureProblem prob = micro_problem(8);
    prob.max_newton = 1;
    prob.total_displacement = 0.01;
    Array2 mod(8, 8, prob.e_solid);
    FractureSolver s(mod, prob);
    CHECK_THROWS_WITH(s.solve(), Catch::Matchers::ContainsSubstring("Newton"));
}
