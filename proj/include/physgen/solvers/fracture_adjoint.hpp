#pragma once

#include "physgen/solvers/fracture.hpp"

// Monolithic adjoint of the staggered phase-field solve. Each load step's
// converged state is treated as the equilibrium of the coupled residual
// [R_u; R_zeta]; the transposed coupled Jacobian is solved once per step in
// reverse order, and the history field's inter-step coupling is carried by a
// per-quadrature-point accumulator that follows the max's active branch.

namespace physgen::fracture {

class FractureAdjoint {
public:
    FractureAdjoint(FractureSolver& solver) : s_(solver) {}

    // load_bar[n] = dLoss / dLoad at load step n (0-based over states).
    // Returns dLoss / dE_e as an image-convention field.
    Array2 backward(const ForwardResult& fr, const std::vector<double>& load_bar) {
        const auto& mesh = s_.mesh_;
        const int nn = mesh.nn();
        const int n_nodes = s_.n_nodes_;
        const int nfu = s_.n_free_u_;
        const int N = static_cast<int>(fr.states.size());
        if (static_cast<int>(load_bar.size()) != N)
            throw std::invalid_argument("FractureAdjoint: one load cotangent per step required");
        const auto& qps = detail::quad_points(mesh.h);

        Array2 grad(mesh.n, mesh.n, 0.0);
        std::vector<double> cbar(static_cast<size_t>(mesh.n) * mesh.n * 4, 0.0);

        // e_load over all u dofs: load = -sum_top r_y
        std::vector<double> e_load(2 * n_nodes, 0.0);
        for (int cI = 0; cI < nn; ++cI) e_load[2 * mesh.node(mesh.n, cI) + 1] = -1.0;

        for (int n = N - 1; n >= 0; --n) {
            const auto& st = fr.states[n];
            double wn = load_bar[n];

            // ---- per-qp data and assembly at the converged state ----
            std::vector<Eigen::Triplet<double>> jt; // transposed coupled Jacobian
            jt.reserve(static_cast<size_t>(mesh.n) * mesh.n * 150);
            Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nfu + n_nodes);
            // per-qp caches for the gradient pass
            std::vector<double> psi_pos_qp(cbar.size()), zeta_qp_all(cbar.size());
            std::vector<std::array<double, 3>> spos_qp(cbar.size());

            size_t idx = 0;
            for (int er = 0; er < mesh.n; ++er)
                for (int ec = 0; ec < mesh.n; ++ec) {
                    auto en = mesh.enodes(er, ec);
                    double lambda, mu;
                    s_.lame(er, ec, lambda, mu);
                    for (int q = 0; q < 4; ++q, ++idx) {
                        const auto& qp = qps[q];
                        double exx = 0, eyy = 0, exy = 0, zq = 0;
                        for (int a = 0; a < 4; ++a) {
                            double ux = st.u[2 * en[a]], uy = st.u[2 * en[a] + 1];
                            exx += qp.dNdx[a] * ux;
                            eyy += qp.dNdy[a] * uy;
                            exy += 0.5 * (qp.dNdy[a] * ux + qp.dNdx[a] * uy);
                            zq += qp.N[a] * st.zeta[en[a]];
                        }
                        auto sp = spectral_split(exx, eyy, exy, lambda, mu);
                        auto tg = spectral_split_tangent(exx, eyy, exy, lambda, mu);
                        psi_pos_qp[idx] = sp.psi_pos;
                        zeta_qp_all[idx] = zq;
                        spos_qp[idx] = {sp.spos[0], sp.spos[1], sp.spos[2]};
                        double g = (1.0 - zq) * (1.0 - zq);
                        double H = st.history[idx];
                        bool active = st.history_grew[idx];

                        // K_uu block (free rows/cols), transposed into jt
                        double D[3][3];
                        for (int i = 0; i < 3; ++i)
                            for (int j = 0; j < 3; ++j)
                                D[i][j] = g * tg.dpos[i][j] + tg.dneg[i][j];
                        for (int a = 0; a < 4; ++a) {
                            double Ba[3][2] = {{qp.dNdx[a], 0}, {0, qp.dNdy[a]},
                                               {qp.dNdy[a], qp.dNdx[a]}};
                            for (int ia = 0; ia < 2; ++ia) {
                                int ga = 2 * en[a] + ia;
                                int fa = s_.free_u_[ga];
                                double eload_a = e_load[ga];
                                for (int b = 0; b < 4; ++b) {
                                    double Bb[3][2] = {{qp.dNdx[b], 0}, {0, qp.dNdy[b]},
                                                       {qp.dNdy[b], qp.dNdx[b]}};
                                    for (int ib = 0; ib < 2; ++ib) {
                                        int gb = 2 * en[b] + ib;
                                        int fb = s_.free_u_[gb];
                                        double kab = 0;
                                        for (int i = 0; i < 3; ++i)
                                            for (int j = 0; j < 3; ++j)
                                                kab += Ba[i][ia] * D[i][j] * Bb[j][ib];
                                        kab *= qp.weight;
                                        if (fa >= 0 && fb >= 0)
                                            jt.emplace_back(fb, fa, kab); // transpose
                                        // dF/du contribution: rows of K at top
                                        // nodes against free columns
                                        if (eload_a != 0.0 && fb >= 0)
                                            rhs[fb] += wn * eload_a * kab;
                                    }
                                }
                                // K_uzeta: dR_u[ga]/dzeta[en_b] = B^T sigma+ g'(z) N_b
                                double bsp = 0;
                                for (int i = 0; i < 3; ++i) bsp += Ba[i][ia] * sp.spos[i];
                                double gp = -2.0 * (1.0 - zq);
                                for (int b = 0; b < 4; ++b) {
                                    double kz = bsp * gp * qp.N[b] * qp.weight;
                                    if (fa >= 0)
                                        jt.emplace_back(nfu + en[b], fa, kz); // transpose
                                    if (eload_a != 0.0)
                                        rhs[nfu + en[b]] += wn * eload_a * kz;
                                }
                            }
                        }
                        // A_zetazeta block and K_zeta_u (active H coupling)
                        double gcl = s_.prob_.g_c / s_.prob_.length_scale;
                        double gl = s_.prob_.g_c * s_.prob_.length_scale;
                        for (int a = 0; a < 4; ++a) {
                            for (int b = 0; b < 4; ++b) {
                                double v = (gcl + 2.0 * H) * qp.N[a] * qp.N[b] +
                                           gl * (qp.dNdx[a] * qp.dNdx[b] +
                                                 qp.dNdy[a] * qp.dNdy[b]);
                                jt.emplace_back(nfu + en[b], nfu + en[a], v * qp.weight);
                            }
                            if (active) {
                                // dR_zeta[a]/du[gb] = 2 (zq - 1) N_a w * sigma+ : B_b
                                double coef = 2.0 * (zq - 1.0) * qp.N[a] * qp.weight;
                                for (int b = 0; b < 4; ++b) {
                                    double dx = qp.dNdx[b], dy = qp.dNdy[b];
                                    double gx = coef * (sp.spos[0] * dx + sp.spos[2] * dy);
                                    double gy = coef * (sp.spos[1] * dy + sp.spos[2] * dx);
                                    int fbx = s_.free_u_[2 * en[b]];
                                    int fby = s_.free_u_[2 * en[b] + 1];
                                    if (fbx >= 0) jt.emplace_back(fbx, nfu + en[a], gx);
                                    if (fby >= 0) jt.emplace_back(fby, nfu + en[a], gy);
                                }
                            }
                        }
                        // rhs contribution from the carried history cotangent:
                        // H_n = psi+(u_n) on the active branch
                        if (active && cbar[idx] != 0.0) {
                            for (int b = 0; b < 4; ++b) {
                                double dx = qp.dNdx[b], dy = qp.dNdy[b];
                                double gx = cbar[idx] * (sp.spos[0] * dx + sp.spos[2] * dy);
                                double gy = cbar[idx] * (sp.spos[1] * dy + sp.spos[2] * dx);
                                int fbx = s_.free_u_[2 * en[b]];
                                int fby = s_.free_u_[2 * en[b] + 1];
                                if (fbx >= 0) rhs[fbx] += gx;
                                if (fby >= 0) rhs[fby] += gy;
                            }
                        }
                    }
                }

            Eigen::SparseMatrix<double> Jt(nfu + n_nodes, nfu + n_nodes);
            Jt.setFromTriplets(jt.begin(), jt.end());
            Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(Jt);
            if (lu.info() != Eigen::Success)
                throw std::runtime_error("fracture adjoint: Jacobian factorization failed");
            Eigen::VectorXd mu = lu.solve(-rhs);
            if (lu.info() != Eigen::Success)
                throw std::runtime_error("fracture adjoint: transposed solve failed");

            // ---- accumulate gradients and propagate the history cotangent ----
            idx = 0;
            for (int er = 0; er < mesh.n; ++er)
                for (int ec = 0; ec < mesh.n; ++ec) {
                    auto en = mesh.enodes(er, ec);
                    double E = s_.element_modulus(er, ec);
                    double lambda, mu_l;
                    s_.lame(er, ec, lambda, mu_l);
                    double acc = 0.0;
                    for (int q = 0; q < 4; ++q, ++idx) {
                        const auto& qp = qps[q];
                        double zq = zeta_qp_all[idx];
                        double g = (1.0 - zq) * (1.0 - zq);
                        const auto& sp = spos_qp[idx];
                        // residual of this element (degraded stress), for the
                        // direct E-sensitivity of R_u and of the load output
                        double exx = 0, eyy = 0, exy = 0;
                        for (int a = 0; a < 4; ++a) {
                            double ux = st.u[2 * en[a]], uy = st.u[2 * en[a] + 1];
                            exx += qp.dNdx[a] * ux;
                            eyy += qp.dNdy[a] * uy;
                            exy += 0.5 * (qp.dNdy[a] * ux + qp.dNdx[a] * uy);
                        }
                        auto full = spectral_split(exx, eyy, exy, lambda, mu_l);
                        double sxx = g * full.spos[0] + full.sneg[0];
                        double syy = g * full.spos[1] + full.sneg[1];
                        double sxy = g * full.spos[2] + full.sneg[2];
                        for (int a = 0; a < 4; ++a) {
                            double rx = (qp.dNdx[a] * sxx + qp.dNdy[a] * sxy) * qp.weight;
                            double ry = (qp.dNdy[a] * syy + qp.dNdx[a] * sxy) * qp.weight;
                            int fax = s_.free_u_[2 * en[a]];
                            int fay = s_.free_u_[2 * en[a] + 1];
                            // mu^T dR_u/dE (residual is linear in E)
                            if (fax >= 0) acc += mu[fax] * rx / E;
                            if (fay >= 0) acc += mu[fay] * ry / E;
                            // direct load sensitivity through the constrained rows
                            acc += wn * e_load[2 * en[a]] * rx / E;
                            acc += wn * e_load[2 * en[a] + 1] * ry / E;
                        }
                        // history cotangent: this step's residual use + carry
                        double muz_qp = 0.0;
                        for (int a = 0; a < 4; ++a) muz_qp += qp.N[a] * mu[nfu + en[a]];
                        double hbar = cbar[idx];
                        // dR_zeta/dH contracted with mu_zeta: 2 (z - 1) N w
                        hbar += 2.0 * (zq - 1.0) * muz_qp * qp.weight;
                        if (st.history_grew[idx]) {
                            acc += hbar * psi_pos_qp[idx] / E; // psi+ scales with E
                            cbar[idx] = 0.0;                   // chain broken by the max
                        } else {
                            cbar[idx] = hbar; // carried to the previous step
                        }
                        (void)sp;
                    }
                    grad(mesh.n - 1 - er, ec) += acc;
                }
        }
        return grad;
    }

private:
    FractureSolver& s_;
};

// --------------------------------------------------------------------------
// Absorbed-energy objective
// --------------------------------------------------------------------------

struct EnergyGradientResult {
    double energy = 0.0;
    Array2 grad_modulus; // d energy / d E_e, image convention
    ForwardResult forward;
};

inline EnergyGradientResult absorbed_energy_with_gradient(const Array2& modulus,
                                                          const FractureProblem& prob) {
    FractureSolver solver(modulus, prob);
    EnergyGradientResult out;
    out.forward = solver.solve();
    out.energy = out.forward.absorbed_energy;
    const int N = static_cast<int>(out.forward.states.size());
    std::vector<double> load_bar(N, 0.0);
    // trapezoid weights: d energy / d F_n
    for (int n = 0; n < N; ++n) {
        double d_prev = n == 0 ? 0.0 : out.forward.states[n - 1].displacement;
        double d_next =
            n + 1 < N ? out.forward.states[n + 1].displacement : out.forward.states[n].displacement;
        load_bar[n] = 0.5 * (out.forward.states[n].displacement - d_prev) +
                      (n + 1 < N ? 0.5 * (d_next - out.forward.states[n].displacement) : 0.0);
    }
    FractureAdjoint adj(solver);
    out.grad_modulus = adj.backward(out.forward, load_bar);
    return out;
}

} // namespace physgen::fracture
