#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "physgen/core/array2.hpp"

// Phase-field brittle fracture on a pixel-aligned quadrilateral mesh under
// prescribed compression of the top edge. Forward problem: staggered
// alternation between the momentum residual (nonlinear through the Miehe
// spectral split) and the linear phase-field equation with an irreversible
// history field. Backward problem: the staggered solution is treated as the
// equilibrium of the monolithic residual and differentiated by walking the
// load steps in reverse with one transposed sparse solve each.

namespace physgen::fracture {

struct FractureProblem {
    double e_solid = 2.1e5;   // kN / mm^2
    double e_void = 2.1e3;    // soft phase, e_solid / 100
    double poisson = 0.3;
    double g_c = 2.4e-3;      // kN / mm
    double length_scale = 0.05; // mm
    double total_displacement = 0.01; // mm, downward on the top edge
    int load_steps = 100;
    int mesh_n = 64;   // elements per side
    double domain = 1.0; // mm
    double stagger_tol = 1e-5;
    int max_stagger = 200;
    double newton_tol = 1e-10;
    int max_newton = 40;
    // optional non-monotone loading (overrides the uniform ramp when set);
    // entries are top-edge displacements per step, downward positive
    std::vector<double> displacement_schedule;

    void validate() const {
        if (mesh_n < 2) throw std::invalid_argument("FractureProblem: mesh too small");
        if (!(e_solid > e_void && e_void > 0))
            throw std::invalid_argument("FractureProblem: require E_solid > E_void > 0");
        if (!(length_scale > 0.5 * domain / mesh_n))
            throw std::invalid_argument(
                "FractureProblem: length scale under-resolved (l <= h/2)");
        if (load_steps < 1 || !(g_c > 0))
            throw std::invalid_argument("FractureProblem: invalid loading parameters");
    }
};

// --------------------------------------------------------------------------
// Spectral split of the strain tensor (Miehe): Macaulay-split principal
// strains and trace. Voigt convention: (exx, eyy, gxy), sigma = (sxx, syy, sxy).
// --------------------------------------------------------------------------

struct SplitResult {
    double psi_pos = 0, psi_neg = 0;
    double spos[3] = {0, 0, 0}; // sigma+ in Voigt (per unit lambda, mu premultiplied)
    double sneg[3] = {0, 0, 0};
};

inline double macaulay_pos(double x) { return x > 0 ? x : 0.0; }
inline double macaulay_neg(double x) { return x < 0 ? x : 0.0; }

inline SplitResult spectral_split(double exx, double eyy, double exy, double lambda, double mu) {
    SplitResult out;
    double tr = exx + eyy;
    double m = 0.5 * (exx + eyy);
    double d = 0.5 * (exx - eyy);
    double r = std::sqrt(d * d + exy * exy);
    double l1 = m + r, l2 = m - r;
    // principal direction of l1: angle t with cos/sin from (d, exy)
    double c = 1.0, s = 0.0;
    if (r > 1e-300) {
        double ang = 0.5 * std::atan2(2.0 * exy, exx - eyy);
        c = std::cos(ang);
        s = std::sin(ang);
    }
    double p1[3] = {c * c, s * s, c * s};        // n1 n1^T in (xx, yy, xy)
    double p2[3] = {s * s, c * c, -c * s};
    double l1p = macaulay_pos(l1), l2p = macaulay_pos(l2);
    double l1n = macaulay_neg(l1), l2n = macaulay_neg(l2);
    double trp = macaulay_pos(tr), trn = macaulay_neg(tr);
    out.psi_pos = 0.5 * lambda * trp * trp + mu * (l1p * l1p + l2p * l2p);
    out.psi_neg = 0.5 * lambda * trn * trn + mu * (l1n * l1n + l2n * l2n);
    for (int k = 0; k < 3; ++k) {
        double id = k < 2 ? 1.0 : 0.0;
        out.spos[k] = lambda * trp * id + 2.0 * mu * (l1p * p1[k] + l2p * p2[k]);
        out.sneg[k] = lambda * trn * id + 2.0 * mu * (l1n * p1[k] + l2n * p2[k]);
    }
    return out;
}

// Consistent tangent of sigma+/sigma- in Voigt form (engineering shear).
// Returns 3x3 matrices D such that d sigma = D d(eps_voigt), eps_voigt =
// (exx, eyy, gxy).
struct SplitTangents {
    double dpos[3][3] = {};
    double dneg[3][3] = {};
};

inline SplitTangents spectral_split_tangent(double exx, double eyy, double exy, double lambda,
                                            double mu) {
    SplitTangents out;
    double tr = exx + eyy;
    double m = 0.5 * (exx + eyy);
    double d = 0.5 * (exx - eyy);
    double r = std::sqrt(d * d + exy * exy);
    double l1 = m + r, l2 = m - r;
    double c = 1.0, s = 0.0;
    if (r > 1e-300) {
        double ang = 0.5 * std::atan2(2.0 * exy, exx - eyy);
        c = std::cos(ang);
        s = std::sin(ang);
    }
    double p1[3] = {c * c, s * s, c * s};
    double p2[3] = {s * s, c * c, -c * s};
    double h1p = l1 > 0 ? 1.0 : 0.0, h2p = l2 > 0 ? 1.0 : 0.0;
    double htrp = tr > 0 ? 1.0 : 0.0;
    // mixed-mode coefficient ( <l1>+ - <l2>+ ) / (l1 - l2), with the equal-eigenvalue limit
    double thp;
    if (l1 - l2 > 1e-12 * (std::abs(l1) + std::abs(l2) + 1e-12))
        thp = (macaulay_pos(l1) - macaulay_pos(l2)) / (l1 - l2);
    else
        thp = h1p; // l1 == l2: both on the same side of zero
    // d(eps+)/d(eps) in tensor components; Voigt index map with eps12 handled
    // via the engineering shear column (factor 1/2 folded in below).
    auto add = [&](double out_m[3][3], double coef, const double* A, const double* B) {
        // coef * (A tensor B) with A, B symmetric tensors in (xx, yy, xy)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double bj = B[j];
                out_m[i][j] += coef * A[i] * (j == 2 ? bj : bj); // gxy column fixed below
            }
    };
    // structural terms for the mixed projector: G = sym(P1 x P2): in 2D
    // d(eps+)/deps = h1p P1xP1 + h2p P2xP2 + thp * (M x M) with
    // M = sym mixed dyad n1 n2: M_voigt components:
    double mvo[3] = {c * (-s), s * c, 0.5 * (c * c - s * s)};
    // Build eps+ tangent
    double t_pos[3][3] = {};
    add(t_pos, h1p, p1, p1);
    add(t_pos, h2p, p2, p2);
    add(t_pos, 2.0 * thp, mvo, mvo);
    // eps- tangent: complementary (identity minus eps+ pieces)
    double h1n = 1.0 - h1p, h2n = 1.0 - h2p;
    double thn;
    if (l1 - l2 > 1e-12 * (std::abs(l1) + std::abs(l2) + 1e-12))
        thn = (macaulay_neg(l1) - macaulay_neg(l2)) / (l1 - l2);
    else
        thn = h1n;
    double t_neg[3][3] = {};
    add(t_neg, h1n, p1, p1);
    add(t_neg, h2n, p2, p2);
    add(t_neg, 2.0 * thn, mvo, mvo);

    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double id_i = i < 2 ? 1.0 : 0.0;
            double id_j = j < 2 ? 1.0 : 0.0;
            // sigma+- = lambda <tr>+- I + 2 mu eps+-. The gxy column needs no
            // extra factor: summing both off-diagonal tensor slots already
            // converts d eps_12 into the engineering shear increment.
            out.dpos[i][j] = lambda * htrp * id_i * id_j + 2.0 * mu * t_pos[i][j];
            out.dneg[i][j] = lambda * (1.0 - htrp) * id_i * id_j + 2.0 * mu * t_neg[i][j];
        }
    return out;
}

// --------------------------------------------------------------------------
// Mesh bookkeeping
// --------------------------------------------------------------------------

namespace detail {

struct Mesh {
    int n;
    double h;
    int nn() const { return n + 1; }
    int node(int r, int c) const { return r * nn() + c; } // r from bottom
    std::array<int, 4> enodes(int er, int ec) const {
        return {node(er, ec), node(er, ec + 1), node(er + 1, ec + 1), node(er + 1, ec)};
    }
    bool bottom(int node_id) const { return node_id < nn(); }
    bool top(int node_id) const { return node_id >= n * nn(); }
};

struct QuadPoint {
    double N[4];
    double dNdx[4], dNdy[4];
    double weight; // includes detJ
};

inline const std::array<QuadPoint, 4>& quad_points(double h) {
    static thread_local double cached_h = -1.0;
    static thread_local std::array<QuadPoint, 4> qps;
    if (cached_h != h) {
        const double g = 1.0 / std::sqrt(3.0);
        const double pts[4][2] = {{-g, -g}, {g, -g}, {g, g}, {-g, g}};
        for (int q = 0; q < 4; ++q) {
            double xi = pts[q][0], eta = pts[q][1];
            double Nq[4] = {0.25 * (1 - xi) * (1 - eta), 0.25 * (1 + xi) * (1 - eta),
                            0.25 * (1 + xi) * (1 + eta), 0.25 * (1 - xi) * (1 + eta)};
            double dxi[4] = {-0.25 * (1 - eta), 0.25 * (1 - eta), 0.25 * (1 + eta),
                             -0.25 * (1 + eta)};
            double deta[4] = {-0.25 * (1 - xi), -0.25 * (1 + xi), 0.25 * (1 + xi),
                              0.25 * (1 - xi)};
            for (int a = 0; a < 4; ++a) {
                qps[q].N[a] = Nq[a];
                qps[q].dNdx[a] = dxi[a] * 2.0 / h;
                qps[q].dNdy[a] = deta[a] * 2.0 / h;
            }
            qps[q].weight = h * h / 4.0;
        }
        cached_h = h;
    }
    return qps;
}

} // namespace detail

// Per-element Young's modulus from a [0,1] image (row 0 = top).
inline Array2 modulus_from_image(const Array2& image, const FractureProblem& prob) {
    Array2 e(image.rows(), image.cols());
    for (size_t i = 0; i < image.size(); ++i)
        e[i] = prob.e_void + (prob.e_solid - prob.e_void) * image[i];
    return e;
}

struct CoupledState {
    Eigen::VectorXd u;     // 2 per node, full
    Eigen::VectorXd zeta;  // 1 per node
    std::vector<double> history;       // per element x 4 qp
    std::vector<uint8_t> history_grew; // active branch of the max this step
    double load = 0.0;     // compressive reaction on the top edge, kN
    double displacement = 0.0;
};

struct ForwardResult {
    std::vector<CoupledState> states; // one per load step
    double absorbed_energy = 0.0;     // kN mm (= J at 1 mm depth)
};

class FractureSolver {
public:
    FractureSolver(const Array2& modulus, const FractureProblem& prob)
        : prob_(prob), modulus_(modulus) {
        prob.validate();
        if (modulus.rows() != prob.mesh_n || modulus.cols() != prob.mesh_n)
            throw std::invalid_argument("fracture: modulus field must match the mesh");
        mesh_.n = prob.mesh_n;
        mesh_.h = prob.domain / prob.mesh_n;
        const int nn = mesh_.nn();
        n_nodes_ = nn * nn;
        // displacement Dirichlet: bottom fixed, top (ux = 0, uy = -delta)
        free_u_.assign(2 * n_nodes_, -1);
        n_free_u_ = 0;
        for (int node = 0; node < n_nodes_; ++node) {
            bool constrained = mesh_.bottom(node) || mesh_.top(node);
            if (!constrained) {
                free_u_[2 * node] = n_free_u_++;
                free_u_[2 * node + 1] = n_free_u_++;
            }
        }
    }

    double element_modulus(int er, int ec) const {
        return modulus_(mesh_.n - 1 - er, ec); // image rows start at the top
    }

    ForwardResult solve() {
        const int nn = mesh_.nn();
        ForwardResult out;
        Eigen::VectorXd u = Eigen::VectorXd::Zero(2 * n_nodes_);
        Eigen::VectorXd zeta = Eigen::VectorXd::Zero(n_nodes_);
        std::vector<double> history(static_cast<size_t>(mesh_.n) * mesh_.n * 4, 0.0);
        const int n_steps = prob_.displacement_schedule.empty()
                                ? prob_.load_steps
                                : static_cast<int>(prob_.displacement_schedule.size());
        for (int step = 1; step <= n_steps; ++step) {
            double delta = prob_.displacement_schedule.empty()
                               ? prob_.total_displacement * step / prob_.load_steps
                               : prob_.displacement_schedule[step - 1];
            for (int cI = 0; cI < nn; ++cI) {
                u[2 * mesh_.node(mesh_.n, cI) + 1] = -delta; // top edge moves down
                u[2 * mesh_.node(mesh_.n, cI)] = 0.0;
            }
            std::vector<double> hist_step = history;
            std::vector<uint8_t> grew;
            std::vector<double> residual_history;
            bool converged = false;
            for (int it = 0; it < prob_.max_stagger; ++it) {
                Eigen::VectorXd u_prev = u, z_prev = zeta;
                solve_momentum(u, zeta);
                update_history(u, history, hist_step, grew);
                solve_phasefield(zeta, hist_step);
                double du = (u - u_prev).norm() / std::max(u.norm(), 1e-30);
                double dz = (zeta - z_prev).norm() / std::max(zeta.norm(), 1e-30);
                residual_history.push_back(std::max(du, dz));
                if (du < prob_.stagger_tol && (dz < prob_.stagger_tol || zeta.norm() < 1e-14)) {
                    converged = true;
                    break;
                }
            }
            if (!converged) {
                std::string hist;
                for (double rr : residual_history) hist += " " + std::to_string(rr);
                throw std::runtime_error("fracture: staggered solve did not converge at step " +
                                         std::to_string(step) + "; residuals:" + hist);
            }
            history = hist_step;
            CoupledState st;
            st.u = u;
            st.zeta = zeta;
            st.history = history;
            st.history_grew = grew;
            st.displacement = delta;
            st.load = top_reaction(u, zeta);
            out.states.push_back(std::move(st));
        }
        // trapezoidal absorbed energy from (0, 0) through the load steps
        double prev_load = 0.0, prev_d = 0.0;
        for (const auto& st : out.states) {
            out.absorbed_energy += 0.5 * (st.load + prev_load) * (st.displacement - prev_d);
            prev_load = st.load;
            prev_d = st.displacement;
        }
        return out;
    }

    // Compressive reaction on the top edge from the unconstrained residual.
    double top_reaction(const Eigen::VectorXd& u, const Eigen::VectorXd& zeta) const {
        Eigen::VectorXd r = internal_force(u, zeta);
        double f = 0.0;
        const int nn = mesh_.nn();
        for (int cI = 0; cI < nn; ++cI) f += r[2 * mesh_.node(mesh_.n, cI) + 1];
        return -f; // downward reaction reported positive in compression
    }

    const detail::Mesh& mesh() const { return mesh_; }
    const FractureProblem& problem() const { return prob_; }
    int n_free_u() const { return n_free_u_; }
    const std::vector<int>& free_u_map() const { return free_u_; }

    // ---- assembly pieces shared with the adjoint ----

    void lame(int er, int ec, double& lambda, double& mu) const {
        double E = element_modulus(er, ec);
        lambda = E * prob_.poisson / ((1.0 + prob_.poisson) * (1.0 - 2.0 * prob_.poisson));
        mu = E / (2.0 * (1.0 + prob_.poisson));
    }

    // Unconstrained internal force vector for the degraded stress.
    Eigen::VectorXd internal_force(const Eigen::VectorXd& u, const Eigen::VectorXd& zeta) const {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(2 * n_nodes_);
        const auto& qps = detail::quad_points(mesh_.h);
        for (int er = 0; er < mesh_.n; ++er)
            for (int ec = 0; ec < mesh_.n; ++ec) {
                auto en = mesh_.enodes(er, ec);
                double lambda, mu;
                lame(er, ec, lambda, mu);
                for (const auto& qp : qps) {
                    double exx, eyy, exy, zq;
                    strain_at(u, en, qp, exx, eyy, exy);
                    zq = interp(zeta, en, qp);
                    auto sp = spectral_split(exx, eyy, exy, lambda, mu);
                    double g = (1.0 - zq) * (1.0 - zq);
                    double sxx = g * sp.spos[0] + sp.sneg[0];
                    double syy = g * sp.spos[1] + sp.sneg[1];
                    double sxy = g * sp.spos[2] + sp.sneg[2];
                    for (int a = 0; a < 4; ++a) {
                        r[2 * en[a]] += (qp.dNdx[a] * sxx + qp.dNdy[a] * sxy) * qp.weight;
                        r[2 * en[a] + 1] += (qp.dNdy[a] * syy + qp.dNdx[a] * sxy) * qp.weight;
                    }
                }
            }
        return r;
    }

private:
    static double interp(const Eigen::VectorXd& zeta, const std::array<int, 4>& en,
                         const detail::QuadPoint& qp) {
        double z = 0;
        for (int a = 0; a < 4; ++a) z += qp.N[a] * zeta[en[a]];
        return z;
    }

    void strain_at(const Eigen::VectorXd& u, const std::array<int, 4>& en,
                   const detail::QuadPoint& qp, double& exx, double& eyy, double& exy) const {
        exx = eyy = exy = 0.0;
        for (int a = 0; a < 4; ++a) {
            double ux = u[2 * en[a]], uy = u[2 * en[a] + 1];
            exx += qp.dNdx[a] * ux;
            eyy += qp.dNdy[a] * uy;
            exy += 0.5 * (qp.dNdy[a] * ux + qp.dNdx[a] * uy);
        }
    }

    // Newton solve of the momentum residual with frozen zeta.
    void solve_momentum(Eigen::VectorXd& u, const Eigen::VectorXd& zeta) {
        const auto& qps = detail::quad_points(mesh_.h);
        for (int it = 0; it < prob_.max_newton; ++it) {
            Eigen::VectorXd r = internal_force(u, zeta);
            double rn = 0.0;
            for (int dof = 0; dof < 2 * n_nodes_; ++dof)
                if (free_u_[dof] >= 0) rn += r[dof] * r[dof];
            rn = std::sqrt(rn);
            double scale = std::max(1.0, u.norm() * prob_.e_solid * mesh_.h);
            if (rn < prob_.newton_tol * scale) return;
            // assemble tangent on free dofs
            std::vector<Eigen::Triplet<double>> trips;
            trips.reserve(static_cast<size_t>(mesh_.n) * mesh_.n * 64);
            for (int er = 0; er < mesh_.n; ++er)
                for (int ec = 0; ec < mesh_.n; ++ec) {
                    auto en = mesh_.enodes(er, ec);
                    double lambda, mu;
                    lame(er, ec, lambda, mu);
                    double ke[8][8] = {};
                    for (const auto& qp : qps) {
                        double exx, eyy, exy;
                        strain_at(u, en, qp, exx, eyy, exy);
                        double zq = interp(zeta, en, qp);
                        auto tg = spectral_split_tangent(exx, eyy, exy, lambda, mu);
                        double g = (1.0 - zq) * (1.0 - zq);
                        double D[3][3];
                        for (int i = 0; i < 3; ++i)
                            for (int j = 0; j < 3; ++j)
                                D[i][j] = g * tg.dpos[i][j] + tg.dneg[i][j];
                        // B matrix rows per node: (dNdx, 0; 0, dNdy; dNdy, dNdx)
                        for (int a = 0; a < 4; ++a)
                            for (int b = 0; b < 4; ++b) {
                                double Ba[3][2] = {{qp.dNdx[a], 0}, {0, qp.dNdy[a]},
                                                   {qp.dNdy[a], qp.dNdx[a]}};
                                double Bb[3][2] = {{qp.dNdx[b], 0}, {0, qp.dNdy[b]},
                                                   {qp.dNdy[b], qp.dNdx[b]}};
                                for (int ia = 0; ia < 2; ++ia)
                                    for (int ib = 0; ib < 2; ++ib) {
                                        double acc = 0;
                                        for (int i = 0; i < 3; ++i)
                                            for (int j = 0; j < 3; ++j)
                                                acc += Ba[i][ia] * D[i][j] * Bb[j][ib];
                                        ke[2 * a + ia][2 * b + ib] += acc * qp.weight;
                                    }
                            }
                    }
                    for (int a = 0; a < 8; ++a) {
                        int ga = 2 * en[a / 2] + (a % 2);
                        int fa = free_u_[ga];
                        if (fa < 0) continue;
                        for (int b = 0; b < 8; ++b) {
                            int gb = 2 * en[b / 2] + (b % 2);
                            int fb = free_u_[gb];
                            if (fb >= 0) trips.emplace_back(fa, fb, ke[a][b]);
                        }
                    }
                }
            Eigen::SparseMatrix<double> Kff(n_free_u_, n_free_u_);
            Kff.setFromTriplets(trips.begin(), trips.end());
            Eigen::VectorXd rhs(n_free_u_);
            for (int dof = 0; dof < 2 * n_nodes_; ++dof)
                if (free_u_[dof] >= 0) rhs[free_u_[dof]] = -r[dof];
            Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(Kff);
            if (ldlt.info() != Eigen::Success)
                throw std::runtime_error("fracture: momentum tangent factorization failed");
            Eigen::VectorXd du = ldlt.solve(rhs);
            for (int dof = 0; dof < 2 * n_nodes_; ++dof)
                if (free_u_[dof] >= 0) u[dof] += du[free_u_[dof]];
        }
        throw std::runtime_error("fracture: Newton did not converge in the momentum solve");
    }

    void update_history(const Eigen::VectorXd& u, const std::vector<double>& hist_prev,
                        std::vector<double>& hist_out, std::vector<uint8_t>& grew) const {
        const auto& qps = detail::quad_points(mesh_.h);
        hist_out.resize(hist_prev.size());
        grew.assign(hist_prev.size(), 0);
        size_t idx = 0;
        for (int er = 0; er < mesh_.n; ++er)
            for (int ec = 0; ec < mesh_.n; ++ec) {
                auto en = mesh_.enodes(er, ec);
                double lambda, mu;
                lame(er, ec, lambda, mu);
                for (const auto& qp : qps) {
                    double exx, eyy, exy;
                    strain_at(u, en, qp, exx, eyy, exy);
                    auto sp = spectral_split(exx, eyy, exy, lambda, mu);
                    if (sp.psi_pos > hist_prev[idx]) {
                        hist_out[idx] = sp.psi_pos;
                        grew[idx] = 1;
                    } else {
                        hist_out[idx] = hist_prev[idx];
                    }
                    ++idx;
                }
            }
    }

    // Linear SPD phase-field solve: [(gc/l + 2H) N N^T + gc l grad grad] z = 2 H N.
    void solve_phasefield(Eigen::VectorXd& zeta, const std::vector<double>& hist) {
        const auto& qps = detail::quad_points(mesh_.h);
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(static_cast<size_t>(mesh_.n) * mesh_.n * 16);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_nodes_);
        double gcl = prob_.g_c / prob_.length_scale;
        double gl = prob_.g_c * prob_.length_scale;
        size_t idx = 0;
        for (int er = 0; er < mesh_.n; ++er)
            for (int ec = 0; ec < mesh_.n; ++ec) {
                auto en = mesh_.enodes(er, ec);
                for (const auto& qp : qps) {
                    double H = hist[idx++];
                    for (int a = 0; a < 4; ++a) {
                        rhs[en[a]] += 2.0 * H * qp.N[a] * qp.weight;
                        for (int b = 0; b < 4; ++b) {
                            double v = (gcl + 2.0 * H) * qp.N[a] * qp.N[b] +
                                       gl * (qp.dNdx[a] * qp.dNdx[b] + qp.dNdy[a] * qp.dNdy[b]);
                            trips.emplace_back(en[a], en[b], v * qp.weight);
                        }
                    }
                }
            }
        Eigen::SparseMatrix<double> A(n_nodes_, n_nodes_);
        A.setFromTriplets(trips.begin(), trips.end());
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
        if (ldlt.info() != Eigen::Success)
            throw std::runtime_error("fracture: phase-field factorization failed");
        zeta = ldlt.solve(rhs);
        for (int i = 0; i < n_nodes_; ++i) zeta[i] = std::clamp(zeta[i], 0.0, 1.0);
    }

    FractureProblem prob_;
    Array2 modulus_;
    detail::Mesh mesh_{0, 0.0};
    int n_nodes_ = 0;
    std::vector<int> free_u_;
    int n_free_u_ = 0;

    friend class FractureAdjoint;
};

inline double absorbed_energy(const ForwardResult& fr) { return fr.absorbed_energy; }

} // namespace physgen::fracture
