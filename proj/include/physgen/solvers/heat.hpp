#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <stdexcept>

#include "physgen/core/array2.hpp"

// Steady-state heat conduction on a pixel-aligned bilinear quadrilateral mesh:
// hot top wall, cold bottom wall, adiabatic sides. Effective conductivity is
// the flux integral over the top element row, and its gradient with respect to
// the per-element conductivity field comes from one adjoint solve with the
// same factorization.

namespace physgen::heat {

struct ThermalProblem {
    double domain_size = 1.0; // m, square
    double t_top = 500.0;     // K
    double t_bottom = 300.0;  // K
    double k_solid = 100.0;   // W / (m K)
    double k_gas = 1.0;

    void validate() const {
        if (t_top == t_bottom) throw std::invalid_argument("ThermalProblem: T_top == T_bottom");
        if (!(k_solid > 0.0) || !(k_gas > 0.0))
            throw std::invalid_argument("ThermalProblem: conductivities must be positive");
    }
};

// Nodal temperatures on the (n+1) x (n+1) grid; row 0 is the top wall
// (image convention).
struct TemperatureField {
    Array2 nodal; // (n+1) x (n+1), Kelvin
};

namespace detail {

// Element stiffness of a square bilinear quad with unit conductivity
// (size-independent in 2D). Node order: (0,0),(1,0),(1,1),(0,1) in local
// (x,y), i.e. counter-clockwise from bottom-left.
inline const Eigen::Matrix4d& unit_stiffness() {
    static const Eigen::Matrix4d ke = [] {
        Eigen::Matrix4d m;
        m.setZero();
        const double gp[2] = {-1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
        for (double xi : gp)
            for (double eta : gp) {
                // dN/dxi, dN/deta on the parent square [-1,1]^2
                double dxi[4] = {-(1 - eta) / 4, (1 - eta) / 4, (1 + eta) / 4, -(1 + eta) / 4};
                double deta[4] = {-(1 - xi) / 4, -(1 + xi) / 4, (1 + xi) / 4, (1 - xi) / 4};
                // Jacobian for a square of side h: dxi/dx = 2/h; det J = h^2/4.
                // k * (2/h)^2 * h^2/4 = k, so h cancels entirely.
                for (int a = 0; a < 4; ++a)
                    for (int b = 0; b < 4; ++b)
                        m(a, b) += dxi[a] * dxi[b] + deta[a] * deta[b];
            }
        return m;
    }();
    return ke;
}

// d(T)/dy integrated over the top edge of one element of side h, as a vector
// g with integral = g . T_elem * (1/h) ... assembled so that h cancels:
// integral over edge = sum_gp dT/dy(xi_gp, eta=1) * (h/2), dT/dy = (2/h) dT/deta.
inline const Eigen::Vector4d& top_edge_flux_vector() {
    static const Eigen::Vector4d g = [] {
        Eigen::Vector4d v = Eigen::Vector4d::Zero();
        const double gp[2] = {-1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
        for (double xi : gp) {
            double deta[4] = {-(1 - xi) / 4, -(1 + xi) / 4, (1 + xi) / 4, (1 - xi) / 4};
            for (int a = 0; a < 4; ++a) v(a) += deta[a]; // (2/h)*(h/2) = 1
        }
        return v;
    }();
    return g;
}

struct Mesh {
    int n; // elements per side
    int nn() const { return n + 1; }
    // node id from (row from bottom, col)
    int node(int r, int c) const { return r * nn() + c; }
    bool dirichlet(int r) const { return r == 0 || r == n; }

    // element (er from bottom, ec) -> 4 node ids, ccw from bottom-left
    std::array<int, 4> enodes(int er, int ec) const {
        return {node(er, ec), node(er, ec + 1), node(er + 1, ec + 1), node(er + 1, ec)};
    }
};

} // namespace detail

// Element conductivity from an image-convention field (row 0 = top):
// element row er (from bottom) maps to image row n-1-er.
inline double kfield_at(const Array2& kfield, int er, int ec) {
    return kfield(kfield.rows() - 1 - er, ec);
}

class HeatSolver {
public:
    HeatSolver(const Array2& kfield, const ThermalProblem& prob) : prob_(prob) {
        prob.validate();
        if (kfield.rows() != kfield.cols())
            throw std::invalid_argument("heat: conductivity field must be square");
        for (size_t i = 0; i < kfield.size(); ++i)
            if (!(kfield[i] > 0.0))
                throw std::invalid_argument("heat: conductivities must be positive elementwise");
        mesh_.n = kfield.rows();
        solve(kfield);
    }

    const TemperatureField& temperature() const { return temp_; }
    double residual_norm() const { return residual_norm_; }

    // Flux integral over the top element row divided by the temperature drop.
    double effective_k(const Array2& kfield) const {
        const auto& g = detail::top_edge_flux_vector();
        const int n = mesh_.n;
        double total = 0.0;
        for (int ec = 0; ec < n; ++ec) {
            auto en = detail::Mesh{n}.enodes(n - 1, ec);
            double fl = 0.0;
            for (int a = 0; a < 4; ++a) fl += g(a) * t_full_[en[a]];
            total += kfield_at(kfield, n - 1, ec) * fl; // h factors cancel in g
        }
        return total / std::abs(prob_.t_top - prob_.t_bottom);
    }

    // Adjoint gradient of effective_k with respect to each element conductivity
    // (image convention). One extra back-substitution with the factored system.
    Array2 effective_k_gradient(const Array2& kfield) const {
        const int n = mesh_.n;
        const auto& ke = detail::unit_stiffness();
        const auto& g = detail::top_edge_flux_vector();
        const double dT = std::abs(prob_.t_top - prob_.t_bottom);
        // df/dT restricted to free nodes
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_free_);
        for (int ec = 0; ec < n; ++ec) {
            auto en = detail::Mesh{n}.enodes(n - 1, ec);
            double kk = kfield_at(kfield, n - 1, ec) / dT;
            for (int a = 0; a < 4; ++a) {
                int f = free_index_[en[a]];
                if (f >= 0) rhs(f) += kk * g(a);
            }
        }
        Eigen::VectorXd lambda = solver_.solve(-rhs);
        Array2 grad(n, n);
        for (int er = 0; er < n; ++er)
            for (int ec = 0; ec < n; ++ec) {
                auto en = detail::Mesh{n}.enodes(er, ec);
                double acc = 0.0;
                // direct term: only top-row elements carry k_e in the flux integral
                if (er == n - 1) {
                    double fl = 0.0;
                    for (int a = 0; a < 4; ++a) fl += g(a) * t_full_[en[a]];
                    acc += fl / dT;
                }
                // adjoint term: lambda^T d(K T)/dk_e on free rows
                for (int a = 0; a < 4; ++a) {
                    int f = free_index_[en[a]];
                    if (f < 0) continue;
                    double kt = 0.0;
                    for (int b = 0; b < 4; ++b) kt += ke(a, b) * t_full_[en[b]];
                    acc += lambda(f) * kt;
                }
                grad(n - 1 - er, ec) = acc;
            }
        return grad;
    }

    // Reaction-based boundary fluxes (exact discrete balance): returns
    // (top flux, bottom flux) with outward sign convention.
    std::pair<double, double> boundary_reactions(const Array2& kfield) const {
        const int n = mesh_.n;
        const auto& ke = detail::unit_stiffness();
        std::vector<double> r(static_cast<size_t>(mesh_.nn()) * mesh_.nn(), 0.0);
        for (int er = 0; er < n; ++er)
            for (int ec = 0; ec < n; ++ec) {
                auto en = detail::Mesh{n}.enodes(er, ec);
                double kk = kfield_at(kfield, er, ec);
                for (int a = 0; a < 4; ++a) {
                    double acc = 0.0;
                    for (int b = 0; b < 4; ++b) acc += ke(a, b) * t_full_[en[b]];
                    r[en[a]] += kk * acc;
                }
            }
        double top = 0.0, bottom = 0.0;
        for (int c = 0; c <= n; ++c) {
            top += r[detail::Mesh{n}.node(n, c)];
            bottom += r[detail::Mesh{n}.node(0, c)];
        }
        return {top, bottom};
    }

private:
    void solve(const Array2& kfield) {
        const int n = mesh_.n;
        const int nn = mesh_.nn();
        const auto& ke = detail::unit_stiffness();
        free_index_.assign(static_cast<size_t>(nn) * nn, -1);
        n_free_ = 0;
        for (int r = 0; r < nn; ++r)
            for (int c = 0; c < nn; ++c)
                if (!mesh_.dirichlet(r)) free_index_[mesh_.node(r, c)] = n_free_++;

        t_full_.assign(static_cast<size_t>(nn) * nn, 0.0);
        for (int c = 0; c <= n; ++c) {
            t_full_[mesh_.node(0, c)] = prob_.t_bottom;
            t_full_[mesh_.node(n, c)] = prob_.t_top;
        }

        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(static_cast<size_t>(n) * n * 16);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n_free_);
        for (int er = 0; er < n; ++er)
            for (int ec = 0; ec < n; ++ec) {
                auto en = detail::Mesh{n}.enodes(er, ec);
                double kk = kfield_at(kfield, er, ec);
                for (int a = 0; a < 4; ++a) {
                    int fa = free_index_[en[a]];
                    if (fa < 0) continue;
                    for (int bl = 0; bl < 4; ++bl) {
                        int fb = free_index_[en[bl]];
                        double v = kk * ke(a, bl);
                        if (fb >= 0)
                            trips.emplace_back(fa, fb, v);
                        else
                            b(fa) -= v * t_full_[en[bl]];
                    }
                }
            }
        Eigen::SparseMatrix<double> A(n_free_, n_free_);
        A.setFromTriplets(trips.begin(), trips.end());
        solver_.compute(A);
        if (solver_.info() != Eigen::Success)
            throw std::runtime_error("heat: factorization failed (singular or ill-conditioned)");
        Eigen::VectorXd t = solver_.solve(b);
        if (solver_.info() != Eigen::Success)
            throw std::runtime_error("heat: linear solve failed");
        residual_norm_ = (A * t - b).norm() / std::max(b.norm(), 1e-30);
        for (size_t i = 0; i < free_index_.size(); ++i)
            if (free_index_[i] >= 0) t_full_[i] = t(free_index_[i]);

        temp_.nodal = Array2(nn, nn);
        for (int r = 0; r < nn; ++r)
            for (int c = 0; c < nn; ++c)
                temp_.nodal(nn - 1 - r, c) = t_full_[mesh_.node(r, c)]; // row 0 = top
    }

    ThermalProblem prob_;
    detail::Mesh mesh_{0};
    std::vector<int> free_index_;
    int n_free_ = 0;
    std::vector<double> t_full_; // node-indexed, row 0 = bottom
    TemperatureField temp_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
    double residual_norm_ = 0.0;
};

// Per-element conductivity from a [0,1] image via linear interpolation.
inline Array2 conductivity_from_image(const Array2& image, const ThermalProblem& prob) {
    Array2 k(image.rows(), image.cols());
    for (size_t i = 0; i < image.size(); ++i)
        k[i] = prob.k_gas + (prob.k_solid - prob.k_gas) * image[i];
    return k;
}

struct KeffResult {
    double k_eff;
    Array2 grad; // d k_eff / d k_e, image convention
};

inline KeffResult effective_conductivity_with_gradient(const Array2& kfield,
                                                       const ThermalProblem& prob) {
    HeatSolver solver(kfield, prob);
    KeffResult out{solver.effective_k(kfield), solver.effective_k_gradient(kfield)};
    return out;
}

inline double effective_conductivity(const Array2& kfield, const ThermalProblem& prob) {
    HeatSolver solver(kfield, prob);
    return solver.effective_k(kfield);
}

} // namespace physgen::heat
