#pragma once

#include "physgen/solvers/mpm.hpp"

// Reverse-mode differentiation of the compression run with respect to the
// per-particle stiffness scale. The time loop is checkpointed: segment starts
// hold full particle states, and the backward pass replays one segment at a
// time, recording per-step contexts (grid arrays, field assignments, contact
// records) before walking its steps in reverse.
//
// Discrete choices are frozen at their forward values: B-spline stencil cells,
// DFG field assignments, separability flags, contact branches and contact
// normals/tangents. Everything else (weights, transfers, stress, overstress
// integration, merge updates) is differentiated exactly.

namespace physgen::mpm {

struct GridSnap {
    std::vector<double> mass[2], momx[2], momy[2], fx[2], fy[2];
    std::vector<double> vxs[2], vys[2]; // v_star (pre contact/BC)
    std::vector<double> vx[2], vy[2];   // final
    std::vector<uint8_t> merged, separable;
    std::vector<ContactRecord> contact;

    void capture(const Grid& g) {
        for (int f = 0; f < 2; ++f) {
            mass[f] = g.mass[f];
            momx[f] = g.momx[f];
            momy[f] = g.momy[f];
            fx[f] = g.fx[f];
            fy[f] = g.fy[f];
            vxs[f] = g.vx_star[f];
            vys[f] = g.vy_star[f];
            vx[f] = g.vx[f];
            vy[f] = g.vy[f];
        }
        merged = g.merged;
        separable = g.separable;
        contact = g.contact;
    }
};

struct StepContext {
    ParticleState pre;                  // particle state before the step
    std::vector<uint32_t> field_bits;
    GridSnap grid;
    int plate_row = 0;
};

// Cotangent buffers matching ParticleState.
struct ParticleAdjoint {
    std::vector<double> px, py, vx, vy, F, C, qa, qb, gamma;

    void resize(const ParticleState& ps) {
        int n = ps.count;
        px.assign(n, 0.0);
        py.assign(n, 0.0);
        vx.assign(n, 0.0);
        vy.assign(n, 0.0);
        F.assign(static_cast<size_t>(n) * 4, 0.0);
        C.assign(static_cast<size_t>(n) * 4, 0.0);
        qa.assign(static_cast<size_t>(n) * ps.n_shear, 0.0);
        qb.assign(static_cast<size_t>(n) * ps.n_shear, 0.0);
        gamma.assign(n, 0.0);
    }
};

class CompressionAdjoint {
public:
    CompressionAdjoint(const MpmConfig& cfg, const Array2& image, const Array2* stiffness,
                       int checkpoint_every = 50, const StepOptions& opt = {})
        : cfg_(cfg), opt_(opt), ck_every_(checkpoint_every), sim_(cfg) {
        sim_.seed_from_image(image, stiffness);
        steps_ = static_cast<int>(
            std::ceil(cfg.max_displacement / (cfg.compression_velocity * cfg.dt)));
    }

    // Forward pass: stores segment checkpoints and the load history.
    const std::vector<double>& run_forward() {
        loads_.clear();
        checkpoints_.clear();
        loads_.reserve(steps_);
        for (int n = 0; n < steps_; ++n) {
            if (n % ck_every_ == 0) checkpoints_.push_back(sim_.particles());
            loads_.push_back(sim_.step(n, opt_));
        }
        return loads_;
    }

    int steps() const { return steps_; }
    const Simulator& sim() const { return sim_; }
    Simulator& sim() { return sim_; }

    // Backward pass: load_bar[n] = dLoss / dLoad_n. Returns dLoss / dgamma_p.
    std::vector<double> run_backward(const std::vector<double>& load_bar) {
        if (loads_.empty()) throw std::logic_error("CompressionAdjoint: forward pass missing");
        ParticleAdjoint adj;
        adj.resize(sim_.particles());
        int n_seg = static_cast<int>(checkpoints_.size());
        for (int seg = n_seg - 1; seg >= 0; --seg) {
            int first = seg * ck_every_;
            int last = std::min(first + ck_every_, steps_); // exclusive
            // replay the segment, recording contexts
            Simulator replay(cfg_);
            replay.particles() = checkpoints_[seg];
            std::vector<StepContext> ctx(last - first);
            for (int n = first; n < last; ++n) {
                auto& c = ctx[n - first];
                c.pre = replay.particles();
                replay.step(n, opt_);
                c.field_bits = replay.field_bits();
                c.grid.capture(replay.grid());
                c.plate_row = plate_row_at(n);
            }
            for (int n = last - 1; n >= first; --n)
                backward_step(ctx[n - first], load_bar[n], adj);
        }
        return adj.gamma;
    }

private:
    int plate_row_at(int step_index) const {
        double plate_y = sim_.plate_y0() - cfg_.compression_velocity * step_index * cfg_.dt;
        return static_cast<int>(std::ceil(plate_y / cfg_.dx() - 1e-9));
    }

    // Reverse of one explicit step. `adj` enters with the cotangents of the
    // post-step state and leaves with the cotangents of the pre-step state.
    void backward_step(const StepContext& c, double load_bar, ParticleAdjoint& adj) {
        const double dt = cfg_.dt;
        const double dx = cfg_.dx();
        const double inv_dx = 1.0 / dx;
        const double kappa = 4.0 * inv_dx * inv_dx;
        const ParticleState& ps = c.pre;
        const int nn = cfg_.n_grid + 1;
        const size_t nnodes = static_cast<size_t>(nn) * nn;
        const double mp = ps.particle_mass;
        const double A = ps.area0;
        const double G = cfg_.shear_modulus();
        const double K = cfg_.bulk_modulus();
        const bool use_dfg = !opt_.single_field;

        // grid cotangents
        std::vector<double> gvx_bar[2], gvy_bar[2];
        for (int f = 0; f < 2; ++f) {
            gvx_bar[f].assign(nnodes, 0.0);
            gvy_bar[f].assign(nnodes, 0.0);
        }

        ParticleAdjoint pre;
        pre.resize(ps);
        pre.gamma = adj.gamma; // parameter cotangent accumulates across steps

        // ---- backward through the particle update (G2P and integrators) ----
        for (int p = 0; p < ps.count; ++p) {
            Stencil st = make_stencil(ps.px[p], ps.py[p], inv_dx);
            uint32_t bits = use_dfg ? c.field_bits[p] : 0u;

            // recompute C' = post-step APIC matrix (needed by the integrator VJPs)
            Mat2 Cn{0, 0, 0, 0};
            double vpx = 0, vpy = 0;
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    int node = (st.by + j) * nn + (st.bx + i);
                    int f = (bits >> (j * 3 + i)) & 1u;
                    double w = st.w[i][0] * st.w[j][1];
                    double rx = (st.bx + i) * dx - ps.px[p];
                    double ry = (st.by + j) * dx - ps.py[p];
                    double gx = c.grid.vx[f][node], gy = c.grid.vy[f][node];
                    vpx += w * gx;
                    vpy += w * gy;
                    Cn[0] += kappa * w * gx * rx;
                    Cn[1] += kappa * w * gx * ry;
                    Cn[2] += kappa * w * gy * rx;
                    Cn[3] += kappa * w * gy * ry;
                }

            // position passthrough: x' = x + dt v'
            double xbar = adj.px[p], ybar = adj.py[p];
            pre.px[p] += xbar;
            pre.py[p] += ybar;
            double vpx_bar = adj.vx[p] + dt * xbar;
            double vpy_bar = adj.vy[p] + dt * ybar;

            // overstress integration backward (uses C' and q_pre)
            Mat2 Cbar{adj.C[4 * p + 0], adj.C[4 * p + 1], adj.C[4 * p + 2], adj.C[4 * p + 3]};
            double dxx = Cn[0], dyy = Cn[3];
            double wspin = 0.5 * (Cn[1] - Cn[2]);
            double a_dev = 0.5 * (dxx - dyy);
            double b_dev = 0.5 * (Cn[1] + Cn[2]);
            double g_inf_p = G * ps.gamma[p];
            for (int br = 0; br < ps.n_shear; ++br) {
                const auto& pb = cfg_.shear_prony[br];
                double gi_ratio = pb.modulus_ratio;
                double decay = pb.tau > 0 ? std::exp(-dt / pb.tau) : 0.0;
                double steady_coef = pb.tau > 0 ? 2.0 * gi_ratio * pb.tau : 0.0; // times G gamma
                size_t qi = static_cast<size_t>(ps.n_shear) * p + br;
                double qa_bar_next = adj.qa[qi], qb_bar_next = adj.qb[qi];
                double a = ps.qa[qi], b = ps.qb[qi];
                // forward: qa' = decay (a + 2 w b dt) + (1-decay) steady G gamma a_dev
                pre.qa[qi] += decay * qa_bar_next - decay * 2.0 * wspin * dt * qb_bar_next;
                pre.qb[qi] += decay * qb_bar_next + decay * 2.0 * wspin * dt * qa_bar_next;
                double wbar = decay * 2.0 * dt * (b * qa_bar_next - a * qb_bar_next);
                double adev_bar = (1.0 - decay) * steady_coef * g_inf_p * qa_bar_next;
                double bdev_bar = (1.0 - decay) * steady_coef * g_inf_p * qb_bar_next;
                pre.gamma[p] += (1.0 - decay) * steady_coef * G *
                                (a_dev * qa_bar_next + b_dev * qb_bar_next);
                // map (a_dev, b_dev, w) cotangents onto C'
                Cbar[0] += 0.5 * adev_bar;
                Cbar[3] -= 0.5 * adev_bar;
                Cbar[1] += 0.5 * bdev_bar + 0.5 * wbar;
                Cbar[2] += 0.5 * bdev_bar - 0.5 * wbar;
            }

            // F' = (I + dt C') F backward
            const double* Fp = &ps.F[4 * p];
            const double* Fbar_next = &adj.F[4 * p];
            // F_bar_pre = (I + dt C')^T F_bar_next
            double a00 = 1.0 + dt * Cn[0], a01 = dt * Cn[1];
            double a10 = dt * Cn[2], a11 = 1.0 + dt * Cn[3];
            pre.F[4 * p + 0] += a00 * Fbar_next[0] + a10 * Fbar_next[2];
            pre.F[4 * p + 1] += a00 * Fbar_next[1] + a10 * Fbar_next[3];
            pre.F[4 * p + 2] += a01 * Fbar_next[0] + a11 * Fbar_next[2];
            pre.F[4 * p + 3] += a01 * Fbar_next[1] + a11 * Fbar_next[3];
            // C'_bar += dt * F_bar_next * F_pre^T
            Cbar[0] += dt * (Fbar_next[0] * Fp[0] + Fbar_next[1] * Fp[1]);
            Cbar[1] += dt * (Fbar_next[0] * Fp[2] + Fbar_next[1] * Fp[3]);
            Cbar[2] += dt * (Fbar_next[2] * Fp[0] + Fbar_next[3] * Fp[1]);
            Cbar[3] += dt * (Fbar_next[2] * Fp[2] + Fbar_next[3] * Fp[3]);

            // G2P transfers backward
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    int node = (st.by + j) * nn + (st.bx + i);
                    int f = (bits >> (j * 3 + i)) & 1u;
                    double w = st.w[i][0] * st.w[j][1];
                    double gwx = st.dw[i][0] * st.w[j][1] * inv_dx;
                    double gwy = st.w[i][0] * st.dw[j][1] * inv_dx;
                    double rx = (st.bx + i) * dx - ps.px[p];
                    double ry = (st.by + j) * dx - ps.py[p];
                    double gx = c.grid.vx[f][node], gy = c.grid.vy[f][node];
                    // v' and C' read the grid velocity
                    gvx_bar[f][node] += w * vpx_bar + kappa * w * (Cbar[0] * rx + Cbar[1] * ry);
                    gvy_bar[f][node] += w * vpy_bar + kappa * w * (Cbar[2] * rx + Cbar[3] * ry);
                    // w(x_p) dependence
                    double s_v = vpx_bar * gx + vpy_bar * gy;
                    double s_c = kappa * (gx * (Cbar[0] * rx + Cbar[1] * ry) +
                                          gy * (Cbar[2] * rx + Cbar[3] * ry));
                    pre.px[p] += gwx * (s_v + s_c);
                    pre.py[p] += gwy * (s_v + s_c);
                    // r = x_i - x_p dependence in C'
                    pre.px[p] -= kappa * w * (Cbar[0] * gx + Cbar[2] * gy);
                    pre.py[p] -= kappa * w * (Cbar[1] * gx + Cbar[3] * gy);
                }
        }

        // ---- backward through BC, contact, merge, and the grid division ----
        std::vector<double> momx_bar[2], momy_bar[2], fx_bar[2], fy_bar[2], m_bar[2];
        for (int f = 0; f < 2; ++f) {
            momx_bar[f].assign(nnodes, 0.0);
            momy_bar[f].assign(nnodes, 0.0);
            fx_bar[f].assign(nnodes, 0.0);
            fy_bar[f].assign(nnodes, 0.0);
            m_bar[f].assign(nnodes, 0.0);
        }
        const int ground_row = cfg_.padding - cfg_.pad_rows;
        for (size_t node = 0; node < nnodes; ++node) {
            int iy = static_cast<int>(node) / nn;
            bool bc = (iy <= ground_row) || (iy >= c.plate_row);
            bool bc_x = bc && cfg_.no_slip; // slip plates leave vx free
            double vbar0x = bc_x ? 0.0 : gvx_bar[0][node];
            double vbar0y = bc ? 0.0 : gvy_bar[0][node];
            double vbar1x = bc_x ? 0.0 : gvx_bar[1][node];
            double vbar1y = bc ? 0.0 : gvy_bar[1][node];
            if (vbar0x == 0 && vbar0y == 0 && vbar1x == 0 && vbar1y == 0 && load_bar == 0.0)
                continue;
            double m0 = c.grid.mass[0][node], m1 = c.grid.mass[1][node];

            // contact backward: map final-velocity cotangents to v_star cotangents
            const auto& rec = c.grid.contact[node];
            double vsbar0x = vbar0x, vsbar0y = vbar0y, vsbar1x = vbar1x, vsbar1y = vbar1y;
            if (rec.active) {
                double M = m0 + m1;
                double al0 = m0 / M, al1 = m1 / M;
                if (rec.stick) {
                    // both fields land on v_cm
                    double sx = vbar0x + vbar1x, sy = vbar0y + vbar1y;
                    vsbar0x = al0 * sx;
                    vsbar0y = al0 * sy;
                    vsbar1x = al1 * sx;
                    vsbar1y = al1 * sy;
                } else {
                    // field 0: v0' = v0* - [(v0*-vcm).n](n + mu t0)
                    double u0x = rec.nx + cfg_.friction * rec.tx0;
                    double u0y = rec.ny + cfg_.friction * rec.ty0;
                    double d0 = vbar0x * u0x + vbar0y * u0y;
                    vsbar0x = vbar0x - d0 * (1.0 - al0) * rec.nx;
                    vsbar0y = vbar0y - d0 * (1.0 - al0) * rec.ny;
                    vsbar1x = d0 * al1 * rec.nx;
                    vsbar1y = d0 * al1 * rec.ny;
                    // field 1: n1 = -n
                    double u1x = -rec.nx + cfg_.friction * rec.tx1;
                    double u1y = -rec.ny + cfg_.friction * rec.ty1;
                    double d1 = vbar1x * u1x + vbar1y * u1y;
                    vsbar1x += vbar1x - d1 * (1.0 - al1) * (-rec.nx);
                    vsbar1y += vbar1y - d1 * (1.0 - al1) * (-rec.ny);
                    vsbar0x += d1 * al0 * (-rec.nx);
                    vsbar0y += d1 * al0 * (-rec.ny);
                }
            }

            if (c.grid.merged[node]) {
                double M = m0 + m1;
                double vcx = c.grid.vxs[0][node], vcy = c.grid.vys[0][node];
                double sx = vsbar0x + vsbar1x, sy = vsbar0y + vsbar1y;
                for (int f = 0; f < 2; ++f) {
                    momx_bar[f][node] += sx / M;
                    momy_bar[f][node] += sy / M;
                    fx_bar[f][node] += dt * sx / M;
                    fy_bar[f][node] += dt * sy / M;
                    m_bar[f][node] -= (sx * vcx + sy * vcy) / M;
                }
            } else {
                const double vsb[2][2] = {{vsbar0x, vsbar0y}, {vsbar1x, vsbar1y}};
                for (int f = 0; f < 2; ++f) {
                    double m = c.grid.mass[f][node];
                    if (m <= 0.0) continue;
                    double vx_star = c.grid.vxs[f][node], vy_star = c.grid.vys[f][node];
                    momx_bar[f][node] += vsb[f][0] / m;
                    momy_bar[f][node] += vsb[f][1] / m;
                    fx_bar[f][node] += dt * vsb[f][0] / m;
                    fy_bar[f][node] += dt * vsb[f][1] / m;
                    m_bar[f][node] -= (vsb[f][0] * vx_star + vsb[f][1] * vy_star) / m;
                }
            }
        }
        // load tap: load = depth * sum of fy over the plate band (both fields)
        if (load_bar != 0.0) {
            double lb = load_bar * cfg_.out_of_plane_depth;
            for (int iy = c.plate_row; iy < nn; ++iy)
                for (int ix = 0; ix < nn; ++ix) {
                    fy_bar[0][iy * nn + ix] += lb;
                    fy_bar[1][iy * nn + ix] += lb;
                }
        }

        // ---- backward through P2G ----
        for (int p = 0; p < ps.count; ++p) {
            Stencil st = make_stencil(ps.px[p], ps.py[p], inv_dx);
            uint32_t bits = use_dfg ? c.field_bits[p] : 0u;
            Mat2 tau = kirchhoff_stress(ps, p, cfg_);
            Mat2 tau_bar{0, 0, 0, 0};
            const double* Cp = &ps.C[4 * p];
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    int node = (st.by + j) * nn + (st.bx + i);
                    int f = (bits >> (j * 3 + i)) & 1u;
                    double w = st.w[i][0] * st.w[j][1];
                    double gwx = st.dw[i][0] * st.w[j][1] * inv_dx;
                    double gwy = st.w[i][0] * st.dw[j][1] * inv_dx;
                    double hxx = st.ddw[i][0] * st.w[j][1] * inv_dx * inv_dx;
                    double hxy = st.dw[i][0] * st.dw[j][1] * inv_dx * inv_dx;
                    double hyy = st.w[i][0] * st.ddw[j][1] * inv_dx * inv_dx;
                    double rx = (st.bx + i) * dx - ps.px[p];
                    double ry = (st.by + j) * dx - ps.py[p];
                    double mbx = momx_bar[f][node], mby = momy_bar[f][node];
                    double fbx = fx_bar[f][node], fby = fy_bar[f][node];
                    double mb = m_bar[f][node];
                    // mass
                    pre.px[p] += mb * mp * gwx;
                    pre.py[p] += mb * mp * gwy;
                    // momentum: mom = w m (v + C r)
                    pre.vx[p] += w * mp * mbx;
                    pre.vy[p] += w * mp * mby;
                    pre.C[4 * p + 0] += w * mp * mbx * rx;
                    pre.C[4 * p + 1] += w * mp * mbx * ry;
                    pre.C[4 * p + 2] += w * mp * mby * rx;
                    pre.C[4 * p + 3] += w * mp * mby * ry;
                    double momx_val = ps.vx[p] + Cp[0] * rx + Cp[1] * ry;
                    double momy_val = ps.vy[p] + Cp[2] * rx + Cp[3] * ry;
                    pre.px[p] += gwx * mp * (momx_val * mbx + momy_val * mby);
                    pre.py[p] += gwy * mp * (momx_val * mbx + momy_val * mby);
                    pre.px[p] -= w * mp * (Cp[0] * mbx + Cp[2] * mby);
                    pre.py[p] -= w * mp * (Cp[1] * mbx + Cp[3] * mby);
                    // gravity: fy += w m g
                    pre.px[p] += gwx * mp * cfg_.gravity * fby;
                    pre.py[p] += gwy * mp * cfg_.gravity * fby;
                    // force: f = -A tau gw
                    tau_bar[0] -= A * fbx * gwx;
                    tau_bar[1] -= A * fbx * gwy;
                    tau_bar[2] -= A * fby * gwx;
                    tau_bar[3] -= A * fby * gwy;
                    // gw(x_p) dependence: d f_a / d x_c = -A sum_b tau_ab H_bc
                    double tx = fbx * tau[0] + fby * tau[2]; // sum_a fbar_a tau_a x
                    double ty = fbx * tau[1] + fby * tau[3];
                    pre.px[p] -= A * (tx * hxx + ty * hxy);
                    pre.py[p] -= A * (tx * hxy + ty * hyy);
                }
            // stress backward: tau = gamma [G (F F^T - I) + K lnJ I] + J q_full
            const double* Fp = &ps.F[4 * p];
            double J = Fp[0] * Fp[3] - Fp[1] * Fp[2];
            double lnJ = std::log(J);
            double gamma = ps.gamma[p];
            // gamma cotangent: elastic part contracted with tau_bar
            double bxx = Fp[0] * Fp[0] + Fp[1] * Fp[1];
            double bxy = Fp[0] * Fp[2] + Fp[1] * Fp[3];
            double byy = Fp[2] * Fp[2] + Fp[3] * Fp[3];
            pre.gamma[p] += (G * (bxx - 1.0) + K * lnJ) * tau_bar[0] +
                            G * bxy * (tau_bar[1] + tau_bar[2]) +
                            (G * (byy - 1.0) + K * lnJ) * tau_bar[3];
            // F cotangent: gamma G (Tb + Tb^T) F + [gamma K tr(Tb) + J (q:Tb)] F^{-T}
            double q_colon_tb = 0.0;
            for (int br = 0; br < ps.n_shear; ++br) {
                size_t qi = static_cast<size_t>(ps.n_shear) * p + br;
                double a = ps.qa[qi], b = ps.qb[qi];
                q_colon_tb += a * (tau_bar[0] - tau_bar[3]) + b * (tau_bar[1] + tau_bar[2]);
                pre.qa[qi] += J * (tau_bar[0] - tau_bar[3]);
                pre.qb[qi] += J * (tau_bar[1] + tau_bar[2]);
            }
            double coef = gamma * K * (tau_bar[0] + tau_bar[3]) + J * q_colon_tb;
            // F^{-T} = (1/J) [[F11, -F10], [-F01, F00]]
            double finv_t00 = Fp[3] / J, finv_t01 = -Fp[2] / J;
            double finv_t10 = -Fp[1] / J, finv_t11 = Fp[0] / J;
            double sym00 = 2.0 * tau_bar[0], sym11 = 2.0 * tau_bar[3];
            double sym01 = tau_bar[1] + tau_bar[2];
            pre.F[4 * p + 0] += gamma * G * (sym00 * Fp[0] + sym01 * Fp[2]) + coef * finv_t00;
            pre.F[4 * p + 1] += gamma * G * (sym00 * Fp[1] + sym01 * Fp[3]) + coef * finv_t01;
            pre.F[4 * p + 2] += gamma * G * (sym01 * Fp[0] + sym11 * Fp[2]) + coef * finv_t10;
            pre.F[4 * p + 3] += gamma * G * (sym01 * Fp[1] + sym11 * Fp[3]) + coef * finv_t11;
        }

        adj = std::move(pre);
    }

    MpmConfig cfg_;
    StepOptions opt_;
    int ck_every_;
    Simulator sim_;
    int steps_ = 0;
    std::vector<double> loads_;
    std::vector<ParticleState> checkpoints_;
};

// --------------------------------------------------------------------------
// Curve-matching objective machinery
// --------------------------------------------------------------------------

struct CurveTarget {
    std::vector<double> load_n; // target loads at the uniform displacement stations
};

// MSE between the simulated and target curves plus its gradient with respect
// to the per-particle stiffness scale.
struct CurveLossResult {
    double mse = 0.0;
    std::vector<double> grad_gamma;
    LoadDisplacementCurve curve;
};

inline CurveLossResult curve_mse_with_gradient(const MpmConfig& cfg, const Array2& image,
                                               const Array2* stiffness, const CurveTarget& target,
                                               int checkpoint_every = 50) {
    CompressionAdjoint adjoint(cfg, image, stiffness, checkpoint_every);
    const auto& loads = adjoint.run_forward();
    const int npts = cfg.curve_points;
    if (static_cast<int>(target.load_n.size()) != npts)
        throw std::invalid_argument("curve target must have " + std::to_string(npts) + " points");
    std::vector<double> load_bar(loads.size(), 0.0);
    CurveLossResult out;
    for (int j = 0; j < npts; ++j) {
        double u = cfg.max_displacement * j / (npts - 1);
        int stepi = std::min<int>(static_cast<int>(loads.size()) - 1,
                                  static_cast<int>(std::lround(
                                      u / (cfg.compression_velocity * cfg.dt))));
        double diff = loads[stepi] - target.load_n[j];
        out.mse += diff * diff / npts;
        load_bar[stepi] += 2.0 * diff / npts;
        out.curve.displacement_mm.push_back(u * 1000.0);
        out.curve.load_n.push_back(loads[stepi]);
    }
    out.grad_gamma = adjoint.run_backward(load_bar);
    return out;
}

} // namespace physgen::mpm
