#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "physgen/core/array2.hpp"

// Explicit MLS-MPM with quadratic B-spline transfers, APIC velocity
// reconstruction, a finite-strain viscoelastic material (Neo-Hookean
// equilibrium plus Prony-series overstress with Jaumann rotation), and
// damage-field-gradient (DFG) two-field partitioning for frictional
// self-contact. Plate and ground act as no-slip grid bands.

namespace physgen::mpm {

struct PronyBranch {
    double modulus_ratio; // branch modulus as a fraction of the equilibrium shear modulus
    double tau;           // relaxation time, s
};

struct MpmConfig {
    int n_grid = 104;  // cells per side
    int padding = 20;  // empty cells on each side; foam occupies n_grid - 2*padding
    int n_ppc = 2;     // particles per cell per dimension
    double dt = 3e-4;  // s
    double density = 1150.0;  // kg/m^3
    double youngs = 1.8e6;    // Pa
    double poisson = 0.4;
    std::vector<PronyBranch> shear_prony = {{0.25, 0.5}};
    std::vector<PronyBranch> bulk_prony = {}; // paper value [0, 0]: disabled
    double gravity = 0.0;
    double compression_velocity = 0.005; // m/s
    double foam_size = 0.03;             // m, edge length of the foam block
    int pad_rows = 2;                    // solid resin rows above and below the foam
    double friction = 0.3;               // Coulomb coefficient for separable contact
    double dbar_min = 0.25;              // separability threshold on field-average damage
    double out_of_plane_depth = 0.03;    // m, converts plane-strain load to N
    double max_displacement = 0.015;     // m
    int curve_points = 100;
    bool no_slip = true; // plate and ground grip the material (experimental setup)

    int foam_cells() const { return n_grid - 2 * padding; }
    double dx() const { return foam_size / foam_cells(); }
    double shear_modulus() const { return youngs / (2.0 * (1.0 + poisson)); }
    double bulk_modulus() const { return youngs / (3.0 * (1.0 - 2.0 * poisson)); }
    double sound_speed() const { return std::sqrt(youngs / density); }
    // CFL-style stability bound with a 10x safety margin
    double dt_bound() const { return dx() / (10.0 * sound_speed()); }
    bool cfl_satisfied() const { return dt <= dt_bound(); }

    void validate() const {
        if (n_grid < 8 || padding < 2 || foam_cells() < 2)
            throw std::invalid_argument("MpmConfig: grid does not leave room for the foam");
        if (n_ppc < 1 || dt <= 0 || density <= 0 || youngs <= 0)
            throw std::invalid_argument("MpmConfig: non-positive physical parameter");
        if (!(poisson > -1.0 && poisson < 0.5))
            throw std::invalid_argument("MpmConfig: Poisson ratio out of range");
        for (const auto& b : shear_prony)
            if (b.modulus_ratio < 0 || (b.modulus_ratio > 0 && b.tau <= 0))
                throw std::invalid_argument("MpmConfig: invalid Prony branch");
    }
};

// 2x2 matrices stored row-major as (xx, xy, yx, yy).
using Mat2 = std::array<double, 4>;

inline double det2(const Mat2& m) { return m[0] * m[3] - m[1] * m[2]; }

struct ParticleState {
    int count = 0;
    int n_shear = 1;
    std::vector<double> px, py, vx, vy;
    std::vector<double> F;   // 4 per particle
    std::vector<double> C;   // 4 per particle (APIC affine matrix)
    std::vector<double> qa;  // deviatoric overstress: q = [[a, b], [b, -a]], per branch
    std::vector<double> qb;
    std::vector<double> qvol;   // volumetric overstress per bulk branch
    std::vector<double> damage; // static surface marker
    std::vector<double> gamma;  // stiffness scale (differentiable handle)
    double particle_mass = 0.0;
    double area0 = 0.0;

    void resize(int n, int n_shear_branches, int n_bulk_branches) {
        count = n;
        n_shear = n_shear_branches;
        px.assign(n, 0.0);
        py.assign(n, 0.0);
        vx.assign(n, 0.0);
        vy.assign(n, 0.0);
        F.assign(static_cast<size_t>(n) * 4, 0.0);
        C.assign(static_cast<size_t>(n) * 4, 0.0);
        qa.assign(static_cast<size_t>(n) * n_shear_branches, 0.0);
        qb.assign(static_cast<size_t>(n) * n_shear_branches, 0.0);
        qvol.assign(static_cast<size_t>(n) * std::max(1, n_bulk_branches), 0.0);
        damage.assign(n, 0.0);
        gamma.assign(n, 1.0);
        for (int p = 0; p < n; ++p) {
            F[4 * p + 0] = 1.0;
            F[4 * p + 3] = 1.0;
        }
    }
};

// --------------------------------------------------------------------------
// Quadratic B-spline stencil
// --------------------------------------------------------------------------

struct Stencil {
    int bx, by;            // base node
    double w[3][2];        // weights per axis: w[k][0] = x-axis, w[k][1] = y-axis
    double dw[3][2];       // d/dfx of the 1D weights (divide by dx for physical)
    double ddw[3][2];      // second derivatives
};

inline Stencil make_stencil(double px, double py, double inv_dx) {
    Stencil s;
    double gx = px * inv_dx, gy = py * inv_dx;
    s.bx = static_cast<int>(std::floor(gx - 0.5));
    s.by = static_cast<int>(std::floor(gy - 0.5));
    double fx = gx - s.bx, fy = gy - s.by; // in [0.5, 1.5)
    const double f[2] = {fx, fy};
    for (int axis = 0; axis < 2; ++axis) {
        double x = f[axis];
        s.w[0][axis] = 0.5 * (1.5 - x) * (1.5 - x);
        s.w[1][axis] = 0.75 - (x - 1.0) * (x - 1.0);
        s.w[2][axis] = 0.5 * (x - 0.5) * (x - 0.5);
        s.dw[0][axis] = x - 1.5;
        s.dw[1][axis] = -2.0 * (x - 1.0);
        s.dw[2][axis] = x - 0.5;
        s.ddw[0][axis] = 1.0;
        s.ddw[1][axis] = -2.0;
        s.ddw[2][axis] = 1.0;
    }
    return s;
}

// --------------------------------------------------------------------------
// Constitutive model
// --------------------------------------------------------------------------

// Kirchhoff stress tau = P F^T = gamma [G (F F^T - I) + K ln(J) I] + J sum(q).
// The overstress parametrization (a, b) keeps the deviatoric branches
// symmetric and traceless by construction.
inline Mat2 kirchhoff_stress(const ParticleState& ps, int p, const MpmConfig& cfg,
                             int* bad_particle = nullptr) {
    const double* Fp = &ps.F[4 * p];
    double J = det2({Fp[0], Fp[1], Fp[2], Fp[3]});
    if (!(J > 0.0)) {
        if (bad_particle) {
            *bad_particle = p;
            return {0, 0, 0, 0};
        }
        throw std::runtime_error("element inversion at particle " + std::to_string(p));
    }
    double G = cfg.shear_modulus() * ps.gamma[p];
    double K = cfg.bulk_modulus() * ps.gamma[p];
    double lnJ = std::log(J);
    // F F^T
    double bxx = Fp[0] * Fp[0] + Fp[1] * Fp[1];
    double bxy = Fp[0] * Fp[2] + Fp[1] * Fp[3];
    double byy = Fp[2] * Fp[2] + Fp[3] * Fp[3];
    Mat2 tau{G * (bxx - 1.0) + K * lnJ, G * bxy, G * bxy, G * (byy - 1.0) + K * lnJ};
    for (int br = 0; br < ps.n_shear; ++br) {
        double a = ps.qa[ps.n_shear * p + br], b = ps.qb[ps.n_shear * p + br];
        tau[0] += J * a;
        tau[1] += J * b;
        tau[2] += J * b;
        tau[3] -= J * a;
    }
    if (!ps.qvol.empty() && !cfg.bulk_prony.empty()) {
        for (size_t br = 0; br < cfg.bulk_prony.size(); ++br) {
            double qv = ps.qvol[cfg.bulk_prony.size() * p + br];
            tau[0] += J * qv;
            tau[3] += J * qv;
        }
    }
    return tau;
}

// Advances the per-particle internal variables with the velocity gradient L
// (the APIC matrix): Jaumann rotation increment, then the exact exponential
// update of qdot + q / tau = 2 G_i D_dev.
inline void advance_overstress(ParticleState& ps, int p, const Mat2& L, double dt,
                               const MpmConfig& cfg) {
    double dxx = L[0], dyy = L[3];
    double dsym = 0.5 * (L[1] + L[2]);
    double wspin = 0.5 * (L[1] - L[2]); // W = [[0, w], [-w, 0]]
    double a_dev = 0.5 * (dxx - dyy);   // 2D deviator of D
    double b_dev = dsym;
    double g_inf = cfg.shear_modulus() * ps.gamma[p];
    for (int br = 0; br < ps.n_shear; ++br) {
        const auto& pb = cfg.shear_prony[br];
        double gi = pb.modulus_ratio * g_inf;
        double decay = pb.tau > 0 ? std::exp(-dt / pb.tau) : 0.0;
        double steady = pb.tau > 0 ? 2.0 * gi * pb.tau : 0.0;
        double a = ps.qa[ps.n_shear * p + br], b = ps.qb[ps.n_shear * p + br];
        // rotation increment: q <- q + dt (W q - q W)
        double ar = a + dt * 2.0 * wspin * b;
        double br_ = b - dt * 2.0 * wspin * a;
        ps.qa[ps.n_shear * p + br] = decay * ar + (1.0 - decay) * steady * a_dev;
        ps.qb[ps.n_shear * p + br] = decay * br_ + (1.0 - decay) * steady * b_dev;
    }
    if (!cfg.bulk_prony.empty()) {
        double trD = dxx + dyy;
        double k_inf = cfg.bulk_modulus() * ps.gamma[p];
        for (size_t br = 0; br < cfg.bulk_prony.size(); ++br) {
            const auto& pb = cfg.bulk_prony[br];
            double ki = pb.modulus_ratio * k_inf;
            double decay = pb.tau > 0 ? std::exp(-dt / pb.tau) : 0.0;
            double steady = pb.tau > 0 ? ki * pb.tau : 0.0;
            double& qv = ps.qvol[cfg.bulk_prony.size() * p + br];
            qv = decay * qv + (1.0 - decay) * steady * trD;
        }
    }
}

// Combined per-particle stress evaluation + internal-variable update, the
// contract used by the constitutive tests.
struct StressUpdateResult {
    Mat2 tau;        // Kirchhoff stress used for grid forces
    Mat2 q_full;     // first deviatoric branch as a full tensor (after update)
};

inline StressUpdateResult stress_update(ParticleState& ps, int p, const Mat2& L, double dt,
                                        const MpmConfig& cfg) {
    StressUpdateResult out;
    out.tau = kirchhoff_stress(ps, p, cfg);
    advance_overstress(ps, p, L, dt, cfg);
    double a = ps.qa[ps.n_shear * p], b = ps.qb[ps.n_shear * p];
    out.q_full = {a, b, b, -a};
    return out;
}

// --------------------------------------------------------------------------
// Grid and DFG machinery
// --------------------------------------------------------------------------

struct ContactRecord {
    uint8_t active = 0;   // contact impulses applied
    uint8_t stick = 0;    // tangential stick branch (fields share v_cm)
    double nx = 0, ny = 0; // normal of field 0 (field 1 uses the negation)
    double tx0 = 0, ty0 = 0; // slip tangent of field 0
    double tx1 = 0, ty1 = 0;
};

struct Grid {
    int nn = 0; // nodes per side
    // per field
    std::vector<double> mass[2], momx[2], momy[2], fx[2], fy[2];
    std::vector<double> gmx[2], gmy[2]; // mass gradient per field (contact normals)
    std::vector<double> dmax[2], dsum[2], dwsum[2];
    // DFG node fields
    std::vector<double> ksum, knum, kgx, kgy, dgx_num, dgy_num;
    std::vector<double> dval, dgx, dgy;   // normalized damage and gradient
    std::vector<double> ndgx, ndgy;       // nonlocal gradient
    std::vector<uint8_t> separable;
    std::vector<uint8_t> merged;
    std::vector<ContactRecord> contact;
    // velocities
    std::vector<double> vx_star[2], vy_star[2]; // after force update, before contact/BC
    std::vector<double> vx[2], vy[2];           // final

    void resize(int nodes) {
        nn = nodes;
        size_t n = static_cast<size_t>(nodes) * nodes;
        for (int f = 0; f < 2; ++f) {
            mass[f].assign(n, 0.0);
            momx[f].assign(n, 0.0);
            momy[f].assign(n, 0.0);
            fx[f].assign(n, 0.0);
            fy[f].assign(n, 0.0);
            gmx[f].assign(n, 0.0);
            gmy[f].assign(n, 0.0);
            dmax[f].assign(n, 0.0);
            dsum[f].assign(n, 0.0);
            dwsum[f].assign(n, 0.0);
            vx_star[f].assign(n, 0.0);
            vy_star[f].assign(n, 0.0);
            vx[f].assign(n, 0.0);
            vy[f].assign(n, 0.0);
        }
        ksum.assign(n, 0.0);
        knum.assign(n, 0.0);
        kgx.assign(n, 0.0);
        kgy.assign(n, 0.0);
        dgx_num.assign(n, 0.0);
        dgy_num.assign(n, 0.0);
        dval.assign(n, 0.0);
        dgx.assign(n, 0.0);
        dgy.assign(n, 0.0);
        ndgx.assign(n, 0.0);
        ndgy.assign(n, 0.0);
        separable.assign(n, 0);
        merged.assign(n, 0);
        contact.assign(n, ContactRecord{});
    }

    int idx(int ix, int iy) const { return iy * nn + ix; }
};

// Cubic DFG kernel on r in [0, 1].
inline double dfg_kernel(double r) {
    if (r >= 1.0) return 0.0;
    return 1.0 - 3.0 * r * r + 2.0 * r * r * r;
}
inline double dfg_kernel_deriv(double r) {
    if (r >= 1.0) return 0.0;
    return -6.0 * r + 6.0 * r * r;
}

struct StepOptions {
    bool single_field = false;       // bypass DFG, classic single-field MLS-MPM
    bool enable_contact = true;      // apply impulses at separable nodes
};

class Simulator {
public:
    Simulator(const MpmConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        grid_.resize(cfg.n_grid + 1);
        inv_dx_ = 1.0 / cfg.dx();
        ground_row_ = cfg.padding - cfg.pad_rows;
        plate_y0_ = (cfg.padding + cfg.foam_cells() + cfg.pad_rows) * cfg.dx();
        if (ground_row_ < 1)
            throw std::invalid_argument("MpmConfig: pad rows do not fit inside the padding");
    }

    const MpmConfig& config() const { return cfg_; }
    ParticleState& particles() { return particles_; }
    const ParticleState& particles() const { return particles_; }
    Grid& grid() { return grid_; }
    double plate_y0() const { return plate_y0_; }
    double ground_y() const { return ground_row_ * cfg_.dx(); }

    // Seeds particles from a binary (or near-binary) cell occupancy image plus
    // the resin pad rows. Surface cells (adjacent to an empty cell) carry
    // damage 1. When `stiffness` is provided, each particle's modulus scale is
    //  the image value of its cell (the differentiable handle).
    void seed_from_image(const Array2& image, const Array2* stiffness = nullptr) {
        const int W = cfg_.foam_cells();
        if (image.rows() != W || image.cols() != W)
            throw std::invalid_argument("seed_from_image: image must be " + std::to_string(W) +
                                        "x" + std::to_string(W));
        // occupancy over the full grid: foam block plus pads
        const int n = cfg_.n_grid;
        std::vector<uint8_t> occupied(static_cast<size_t>(n) * n, 0);
        auto occ = [&](int cx, int cy) -> uint8_t& {
            return occupied[static_cast<size_t>(cy) * n + cx];
        };
        for (int r = 0; r < W; ++r)
            for (int c = 0; c < W; ++c)
                if (image(r, c) >= 0.5) occ(cfg_.padding + c, cfg_.padding + W - 1 - r) = 1;
        for (int pr = 0; pr < cfg_.pad_rows; ++pr)
            for (int c = 0; c < W; ++c) {
                occ(cfg_.padding + c, cfg_.padding - 1 - pr) = 1;       // bottom pad
                occ(cfg_.padding + c, cfg_.padding + W + pr) = 1;       // top pad
            }
        int solid_cells = 0;
        for (auto v : occupied) solid_cells += v;
        if (solid_cells == 0) throw std::invalid_argument("seed_from_image: empty solid phase");

        int ppc = cfg_.n_ppc * cfg_.n_ppc;
        particles_.resize(solid_cells * ppc, static_cast<int>(cfg_.shear_prony.size()),
                          static_cast<int>(cfg_.bulk_prony.size()));
        double dx = cfg_.dx();
        particles_.area0 = (dx / cfg_.n_ppc) * (dx / cfg_.n_ppc);
        particles_.particle_mass = cfg_.density * particles_.area0;
        int p = 0;
        for (int cy = 0; cy < n; ++cy)
            for (int cx = 0; cx < n; ++cx) {
                if (!occ(cx, cy)) continue;
                bool surface = (cx == 0 || !occ(cx - 1, cy)) || (cx == n - 1 || !occ(cx + 1, cy)) ||
                               (cy == 0 || !occ(cx, cy - 1)) || (cy == n - 1 || !occ(cx, cy + 1));
                double gamma = 1.0;
                if (stiffness) {
                    int c = cx - cfg_.padding;
                    int r = W - 1 - (cy - cfg_.padding);
                    if (c >= 0 && c < W && r >= 0 && r < W)
                        gamma = std::clamp((*stiffness)(r, c), 1e-3, 1.0);
                }
                for (int iy = 0; iy < cfg_.n_ppc; ++iy)
                    for (int ix = 0; ix < cfg_.n_ppc; ++ix) {
                        particles_.px[p] = (cx + (ix + 0.5) / cfg_.n_ppc) * dx;
                        particles_.py[p] = (cy + (iy + 0.5) / cfg_.n_ppc) * dx;
                        particles_.damage[p] = surface ? 1.0 : 0.0;
                        particles_.gamma[p] = gamma;
                        ++p;
                    }
            }
    }

    struct StepResult {
        double load = 0.0;       // plate reaction in N (internal-force definition)
        double plate_work = 0.0; // exact constraint work done by the plate this step, J
    };

    // One explicit step at simulation time t = step_index * dt.
    double step(int step_index, const StepOptions& opt = {}) {
        return step_full(step_index, opt).load;
    }

    StepResult step_full(int step_index, const StepOptions& opt = {}) {
        const double dt = cfg_.dt;
        const double dx = cfg_.dx();
        const int nn = grid_.nn;
        const size_t nnodes = static_cast<size_t>(nn) * nn;
        auto& g = grid_;
        for (int f = 0; f < 2; ++f) {
            std::fill(g.mass[f].begin(), g.mass[f].end(), 0.0);
            std::fill(g.momx[f].begin(), g.momx[f].end(), 0.0);
            std::fill(g.momy[f].begin(), g.momy[f].end(), 0.0);
            std::fill(g.fx[f].begin(), g.fx[f].end(), 0.0);
            std::fill(g.fy[f].begin(), g.fy[f].end(), 0.0);
            std::fill(g.gmx[f].begin(), g.gmx[f].end(), 0.0);
            std::fill(g.gmy[f].begin(), g.gmy[f].end(), 0.0);
            std::fill(g.dmax[f].begin(), g.dmax[f].end(), 0.0);
            std::fill(g.dsum[f].begin(), g.dsum[f].end(), 0.0);
            std::fill(g.dwsum[f].begin(), g.dwsum[f].end(), 0.0);
        }
        std::fill(g.separable.begin(), g.separable.end(), 0);
        std::fill(g.merged.begin(), g.merged.end(), 0);
        std::fill(g.contact.begin(), g.contact.end(), ContactRecord{});

        const bool use_dfg = !opt.single_field;
        if (use_dfg) build_dfg_fields();

        // ---- P2G ----
        const double mp = particles_.particle_mass;
        int bad = -1;
        for (int p = 0; p < particles_.count; ++p) {
            check_inside(p, step_index);
            Stencil st = make_stencil(particles_.px[p], particles_.py[p], inv_dx_);
            Mat2 tau = kirchhoff_stress(particles_, p, cfg_, &bad);
            if (bad >= 0)
                throw std::runtime_error("element inversion at particle " + std::to_string(bad) +
                                         " (step " + std::to_string(step_index) + ")");
            const double A = particles_.area0;
            uint32_t bits = use_dfg ? particle_field_bits_[p] : 0u;
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    int node = g.idx(st.bx + i, st.by + j);
                    int f = (bits >> (j * 3 + i)) & 1u;
                    double w = st.w[i][0] * st.w[j][1];
                    double gwx = st.dw[i][0] * st.w[j][1] * inv_dx_;
                    double gwy = st.w[i][0] * st.dw[j][1] * inv_dx_;
                    double rx = (st.bx + i) * dx - particles_.px[p];
                    double ry = (st.by + j) * dx - particles_.py[p];
                    double wm = w * mp;
                    g.mass[f][node] += wm;
                    g.momx[f][node] +=
                        wm * (particles_.vx[p] + particles_.C[4 * p + 0] * rx +
                              particles_.C[4 * p + 1] * ry);
                    g.momy[f][node] +=
                        wm * (particles_.vy[p] + particles_.C[4 * p + 2] * rx +
                              particles_.C[4 * p + 3] * ry);
                    g.fx[f][node] -= A * (tau[0] * gwx + tau[1] * gwy);
                    g.fy[f][node] -= A * (tau[2] * gwx + tau[3] * gwy);
                    g.fy[f][node] += wm * cfg_.gravity;
                    g.gmx[f][node] += mp * gwx;
                    g.gmy[f][node] += mp * gwy;
                    double D = particles_.damage[p];
                    g.dmax[f][node] = std::max(g.dmax[f][node], D);
                    g.dsum[f][node] += wm * D;
                    g.dwsum[f][node] += wm;
                }
        }

        // ---- plate reaction from internal forces, before the grid update ----
        double plate_y = plate_y0_ - cfg_.compression_velocity * step_index * dt;
        int plate_row = static_cast<int>(std::ceil(plate_y * inv_dx_ - 1e-9));
        double load = 0.0;
        for (int iy = plate_row; iy < nn; ++iy)
            for (int ix = 0; ix < nn; ++ix) {
                int node = g.idx(ix, iy);
                load += g.fy[0][node] + g.fy[1][node];
            }
        // material below pushes the plate up: +load is the compressive reaction

        // ---- grid update ----
        for (size_t node = 0; node < nnodes; ++node) {
            double m0 = g.mass[0][node], m1 = g.mass[1][node];
            bool two_field = use_dfg && m0 > 0.0 && m1 > 0.0;
            if (two_field) {
                bool cond1 = std::max(g.dmax[0][node], g.dmax[1][node]) >= 1.0 - 1e-12;
                double avg0 = g.dsum[0][node] / g.dwsum[0][node];
                double avg1 = g.dsum[1][node] / g.dwsum[1][node];
                bool cond2 = std::min(avg0, avg1) > cfg_.dbar_min;
                g.separable[node] = (cond1 && cond2) ? 1 : 0;
                g.merged[node] = g.separable[node] ? 0 : 1;
            }
            if (g.merged[node]) {
                double vxc = (g.momx[0][node] + g.momx[1][node] +
                              dt * (g.fx[0][node] + g.fx[1][node])) /
                             (m0 + m1);
                double vyc = (g.momy[0][node] + g.momy[1][node] +
                              dt * (g.fy[0][node] + g.fy[1][node])) /
                             (m0 + m1);
                for (int f = 0; f < 2; ++f) {
                    g.vx_star[f][node] = vxc;
                    g.vy_star[f][node] = vyc;
                }
            } else {
                for (int f = 0; f < 2; ++f) {
                    double m = g.mass[f][node];
                    if (m > 0.0) {
                        g.vx_star[f][node] = (g.momx[f][node] + dt * g.fx[f][node]) / m;
                        g.vy_star[f][node] = (g.momy[f][node] + dt * g.fy[f][node]) / m;
                    } else {
                        g.vx_star[f][node] = 0.0;
                        g.vy_star[f][node] = 0.0;
                    }
                }
            }
            g.vx[0][node] = g.vx_star[0][node];
            g.vy[0][node] = g.vy_star[0][node];
            g.vx[1][node] = g.vx_star[1][node];
            g.vy[1][node] = g.vy_star[1][node];

            // frictional contact between separable fields
            if (g.separable[node] && opt.enable_contact) {
                double gx0 = g.gmx[0][node], gy0 = g.gmy[0][node];
                double gx1 = g.gmx[1][node], gy1 = g.gmy[1][node];
                double nx = gx1 - gx0, ny = gy1 - gy0; // toward field 1
                double nl = std::sqrt(nx * nx + ny * ny);
                if (nl > 1e-300) {
                    nx /= nl;
                    ny /= nl;
                    double vcx = (m0 * g.vx_star[0][node] + m1 * g.vx_star[1][node]) / (m0 + m1);
                    double vcy = (m0 * g.vy_star[0][node] + m1 * g.vy_star[1][node]) / (m0 + m1);
                    // field 0 approaches field 1 along +n
                    double dvx0 = g.vx_star[0][node] - vcx, dvy0 = g.vy_star[0][node] - vcy;
                    double vn0 = dvx0 * nx + dvy0 * ny;
                    if (vn0 > 0.0) {
                        ContactRecord rec;
                        rec.active = 1;
                        rec.nx = nx;
                        rec.ny = ny;
                        double vtx0 = dvx0 - vn0 * nx, vty0 = dvy0 - vn0 * ny;
                        double vt0 = std::sqrt(vtx0 * vtx0 + vty0 * vty0);
                        double fric = cfg_.friction * vn0;
                        if (vt0 <= fric || vt0 < 1e-300) {
                            rec.stick = 1; // both fields collapse to the common velocity
                            g.vx[0][node] = vcx;
                            g.vy[0][node] = vcy;
                            g.vx[1][node] = vcx;
                            g.vy[1][node] = vcy;
                        } else {
                            rec.tx0 = vtx0 / vt0;
                            rec.ty0 = vty0 / vt0;
                            g.vx[0][node] = g.vx_star[0][node] - vn0 * nx - fric * rec.tx0;
                            g.vy[0][node] = g.vy_star[0][node] - vn0 * ny - fric * rec.ty0;
                            // mirror for field 1 (momentum balance)
                            double dvx1 = g.vx_star[1][node] - vcx,
                                   dvy1 = g.vy_star[1][node] - vcy;
                            double vn1 = -(dvx1 * nx + dvy1 * ny); // along -n
                            double vtx1 = dvx1 + vn1 * nx, vty1 = dvy1 + vn1 * ny;
                            double vt1 = std::sqrt(vtx1 * vtx1 + vty1 * vty1);
                            rec.tx1 = vt1 > 0 ? vtx1 / vt1 : 0.0;
                            rec.ty1 = vt1 > 0 ? vty1 / vt1 : 0.0;
                            double fric1 = cfg_.friction * vn1;
                            g.vx[1][node] = g.vx_star[1][node] + vn1 * nx - fric1 * rec.tx1;
                            g.vy[1][node] = g.vy_star[1][node] + vn1 * ny - fric1 * rec.ty1;
                        }
                        g.contact[node] = rec;
                    }
                }
            }
        }

        // ---- boundary bands (after contact; Dirichlet wins) ----
        for (int iy = 0; iy <= ground_row_; ++iy)
            for (int ix = 0; ix < nn; ++ix) {
                int node = g.idx(ix, iy);
                for (int f = 0; f < 2; ++f) {
                    if (cfg_.no_slip) g.vx[f][node] = 0.0;
                    g.vy[f][node] = 0.0;
                }
            }
        // exact discrete accounting: the constraint impulse on each plate node
        // is m (v_bc - v*) and the plate moves at (0, -v_comp)
        double plate_work = 0.0;
        for (int iy = plate_row; iy < nn; ++iy)
            for (int ix = 0; ix < nn; ++ix) {
                int node = g.idx(ix, iy);
                for (int f = 0; f < 2; ++f) {
                    double m = g.mass[f][node];
                    if (m > 0.0) {
                        double impulse_y = m * (-cfg_.compression_velocity - g.vy[f][node]);
                        plate_work += impulse_y * (-cfg_.compression_velocity);
                    }
                    if (cfg_.no_slip) g.vx[f][node] = 0.0;
                    g.vy[f][node] = -cfg_.compression_velocity;
                }
            }

        // ---- G2P ----
        const double kappa = 4.0 * inv_dx_ * inv_dx_;
        for (int p = 0; p < particles_.count; ++p) {
            Stencil st = make_stencil(particles_.px[p], particles_.py[p], inv_dx_);
            uint32_t bits = use_dfg ? particle_field_bits_[p] : 0u;
            double vx = 0, vy = 0;
            Mat2 Cn{0, 0, 0, 0};
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    int node = g.idx(st.bx + i, st.by + j);
                    int f = (bits >> (j * 3 + i)) & 1u;
                    double w = st.w[i][0] * st.w[j][1];
                    double rx = (st.bx + i) * dx - particles_.px[p];
                    double ry = (st.by + j) * dx - particles_.py[p];
                    double gvx = g.vx[f][node], gvy = g.vy[f][node];
                    vx += w * gvx;
                    vy += w * gvy;
                    Cn[0] += kappa * w * gvx * rx;
                    Cn[1] += kappa * w * gvx * ry;
                    Cn[2] += kappa * w * gvy * rx;
                    Cn[3] += kappa * w * gvy * ry;
                }
            particles_.vx[p] = vx;
            particles_.vy[p] = vy;
            particles_.px[p] += dt * vx;
            particles_.py[p] += dt * vy;
            // F <- (I + dt C) F
            double* Fp = &particles_.F[4 * p];
            double f0 = Fp[0], f1 = Fp[1], f2 = Fp[2], f3 = Fp[3];
            Fp[0] = (1.0 + dt * Cn[0]) * f0 + dt * Cn[1] * f2;
            Fp[1] = (1.0 + dt * Cn[0]) * f1 + dt * Cn[1] * f3;
            Fp[2] = dt * Cn[2] * f0 + (1.0 + dt * Cn[3]) * f2;
            Fp[3] = dt * Cn[2] * f1 + (1.0 + dt * Cn[3]) * f3;
            advance_overstress(particles_, p, Cn, dt, cfg_);
            particles_.C[4 * p + 0] = Cn[0];
            particles_.C[4 * p + 1] = Cn[1];
            particles_.C[4 * p + 2] = Cn[2];
            particles_.C[4 * p + 3] = Cn[3];
        }
        StepResult res;
        res.load = load * cfg_.out_of_plane_depth;
        res.plate_work = plate_work;
        return res;
    }

    // Diagnostics used by the conservation suites.
    double total_grid_mass() const {
        double s = 0.0;
        for (int f = 0; f < 2; ++f)
            for (double m : grid_.mass[f]) s += m;
        return s;
    }
    std::pair<double, double> total_grid_momentum_after_p2g() const {
        double sx = 0.0, sy = 0.0;
        for (int f = 0; f < 2; ++f)
            for (size_t i = 0; i < grid_.momx[f].size(); ++i) {
                sx += grid_.momx[f][i];
                sy += grid_.momy[f][i];
            }
        return {sx, sy};
    }
    std::pair<double, double> total_particle_momentum() const {
        double sx = 0.0, sy = 0.0;
        for (int p = 0; p < particles_.count; ++p) {
            sx += particles_.particle_mass * particles_.vx[p];
            sy += particles_.particle_mass * particles_.vy[p];
        }
        return {sx, sy};
    }
    double elastic_energy() const {
        double e = 0.0;
        for (int p = 0; p < particles_.count; ++p) {
            const double* Fp = &particles_.F[4 * p];
            double J = det2({Fp[0], Fp[1], Fp[2], Fp[3]});
            double trC = Fp[0] * Fp[0] + Fp[1] * Fp[1] + Fp[2] * Fp[2] + Fp[3] * Fp[3];
            double G = cfg_.shear_modulus() * particles_.gamma[p];
            double K = cfg_.bulk_modulus() * particles_.gamma[p];
            double lnJ = std::log(J);
            e += particles_.area0 *
                 (0.5 * G * (trC - 2.0 - 2.0 * lnJ) + 0.5 * K * lnJ * lnJ);
        }
        return e;
    }
    double kinetic_energy() const {
        double e = 0.0;
        for (int p = 0; p < particles_.count; ++p)
            e += 0.5 * particles_.particle_mass *
                 (particles_.vx[p] * particles_.vx[p] + particles_.vy[p] * particles_.vy[p]);
        return e;
    }

    const std::vector<uint32_t>& field_bits() const { return particle_field_bits_; }

private:
    void check_inside(int p, int step_index) const {
        double lo = 1.5 * cfg_.dx();
        double hi = (cfg_.n_grid - 1.5) * cfg_.dx();
        if (particles_.px[p] < lo || particles_.px[p] > hi || particles_.py[p] < lo ||
            particles_.py[p] > hi)
            throw std::runtime_error("particle " + std::to_string(p) +
                                     " left the domain at step " + std::to_string(step_index));
    }

    // Builds the normalized damage field, node gradients, nonlocal gradients,
    // particle-side gradients and the per-(particle, node) field assignment.
    void build_dfg_fields() {
        auto& g = grid_;
        const int nn = g.nn;
        const double dx = cfg_.dx();
        const double rp = 2.0 * dx; // kernel support
        std::fill(g.ksum.begin(), g.ksum.end(), 0.0);
        std::fill(g.knum.begin(), g.knum.end(), 0.0);
        std::fill(g.kgx.begin(), g.kgx.end(), 0.0);
        std::fill(g.kgy.begin(), g.kgy.end(), 0.0);
        std::fill(g.dgx_num.begin(), g.dgx_num.end(), 0.0);
        std::fill(g.dgy_num.begin(), g.dgy_num.end(), 0.0);
        // scatter kernel sums to nodes within the support radius (5x5 stencil)
        for (int p = 0; p < particles_.count; ++p) {
            int cx = static_cast<int>(std::floor(particles_.px[p] * inv_dx_));
            int cy = static_cast<int>(std::floor(particles_.py[p] * inv_dx_));
            double D = particles_.damage[p];
            for (int j = -2; j <= 2; ++j)
                for (int i = -2; i <= 2; ++i) {
                    int ix = cx + i, iy = cy + j;
                    if (ix < 0 || ix >= nn || iy < 0 || iy >= nn) continue;
                    double ddx = ix * dx - particles_.px[p];
                    double ddy = iy * dx - particles_.py[p];
                    double dist = std::sqrt(ddx * ddx + ddy * ddy);
                    double r = dist / rp;
                    double w = dfg_kernel(r);
                    if (w <= 0.0) continue;
                    int node = g.idx(ix, iy);
                    g.ksum[node] += w;
                    g.knum[node] += D * w;
                    if (dist > 1e-300) {
                        double dwdr = dfg_kernel_deriv(r) / (rp * dist);
                        g.kgx[node] += dwdr * ddx;       // d/dx_i of omega
                        g.kgy[node] += dwdr * ddy;
                        g.dgx_num[node] += D * dwdr * ddx;
                        g.dgy_num[node] += D * dwdr * ddy;
                    }
                }
        }
        for (size_t node = 0; node < g.ksum.size(); ++node) {
            double s = g.ksum[node];
            if (s > 1e-12) {
                double d = g.knum[node] / s;
                g.dval[node] = d;
                g.dgx[node] = (g.dgx_num[node] - d * g.kgx[node]) / s;
                g.dgy[node] = (g.dgy_num[node] - d * g.kgy[node]) / s;
            } else {
                g.dval[node] = 0.0;
                g.dgx[node] = 0.0;
                g.dgy[node] = 0.0;
            }
        }
        // nonlocal gradient: 3x3 node neighbourhood argmax of |grad|
        for (int iy = 0; iy < nn; ++iy)
            for (int ix = 0; ix < nn; ++ix) {
                int node = g.idx(ix, iy);
                double best = -1.0;
                double bx = 0.0, by = 0.0;
                for (int j = -1; j <= 1; ++j)
                    for (int i = -1; i <= 1; ++i) {
                        int qx = ix + i, qy = iy + j;
                        if (qx < 0 || qx >= nn || qy < 0 || qy >= nn) continue;
                        int q = g.idx(qx, qy);
                        double mag =
                            g.dgx[q] * g.dgx[q] + g.dgy[q] * g.dgy[q];
                        if (mag > best) {
                            best = mag;
                            bx = g.dgx[q];
                            by = g.dgy[q];
                        }
                    }
                g.ndgx[node] = bx;
                g.ndgy[node] = by;
            }
        // particle damage gradients via B-spline interpolation of node values,
        // then per-(particle, node) field assignment bits
        particle_field_bits_.assign(particles_.count, 0u);
        for (int p = 0; p < particles_.count; ++p) {
            Stencil st = make_stencil(particles_.px[p], particles_.py[p], inv_dx_);
            double pgx = 0.0, pgy = 0.0;
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    int node = g.idx(st.bx + i, st.by + j);
                    double w = st.w[i][0] * st.w[j][1];
                    pgx += w * g.dgx[node];
                    pgy += w * g.dgy[node];
                }
            uint32_t bits = 0;
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    int node = g.idx(st.bx + i, st.by + j);
                    double dot = pgx * g.ndgx[node] + pgy * g.ndgy[node];
                    if (dot < 0.0) bits |= 1u << (j * 3 + i);
                }
            particle_field_bits_[p] = bits;
        }
    }

    MpmConfig cfg_;
    ParticleState particles_;
    Grid grid_;
    double inv_dx_ = 0.0;
    int ground_row_ = 0;
    double plate_y0_ = 0.0;
    std::vector<uint32_t> particle_field_bits_;
};

// --------------------------------------------------------------------------
// Compression run + load-displacement curve
// --------------------------------------------------------------------------

struct LoadDisplacementCurve {
    std::vector<double> displacement_mm;
    std::vector<double> load_n;
};

struct CompressionResult {
    LoadDisplacementCurve curve;
    std::vector<double> load_per_step; // N, every step
    int steps = 0;
};

inline CompressionResult simulate_compression(const Array2& image, const MpmConfig& cfg,
                                              const Array2* stiffness = nullptr,
                                              const StepOptions& opt = {}) {
    Simulator sim(cfg);
    sim.seed_from_image(image, stiffness);
    int steps =
        static_cast<int>(std::ceil(cfg.max_displacement / (cfg.compression_velocity * cfg.dt)));
    CompressionResult out;
    out.steps = steps;
    out.load_per_step.reserve(steps);
    for (int n = 0; n < steps; ++n) out.load_per_step.push_back(sim.step(n, opt));
    // sample at curve_points stations, nearest step, displacement from 0
    const int npts = cfg.curve_points;
    for (int j = 0; j < npts; ++j) {
        double u = cfg.max_displacement * j / (npts - 1);
        int stepi = std::min(steps - 1,
                             static_cast<int>(std::lround(u / (cfg.compression_velocity * cfg.dt))));
        out.curve.displacement_mm.push_back(u * 1000.0);
        out.curve.load_n.push_back(out.load_per_step[stepi]);
    }
    return out;
}

} // namespace physgen::mpm
