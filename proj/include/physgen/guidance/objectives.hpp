#pragma once

#include "physgen/guidance/guidance.hpp"
#include "physgen/nn/unet.hpp"
#include "physgen/solvers/fracture_adjoint.hpp"
#include "physgen/solvers/heat.hpp"
#include "physgen/solvers/mpm_adjoint.hpp"

// Objectives that bind the differentiable solvers to the guided sampler, and
// the adapter exposing a trained noise-prediction net as a NoiseModel.

namespace physgen::guidance {

template <class T>
class NetNoiseModel : public NoiseModel {
public:
    explicit NetNoiseModel(nn::UNetT<T>& net) : net_(net) {}
    Array2 eps(const Array2& x, double t) override { return net_.predict_noise(x, t); }
    Array2 eps_vjp(const Array2& x, double t, const Array2& cot) override {
        net_.params().zero_grad();
        return net_.predict_noise_vjp(x, t, cot);
    }

private:
    nn::UNetT<T>& net_;
};

// loss = (k_eff* - k_eff(p))^2 with the adjoint gradient chained through the
// conductivity interpolation.
class KeffObjective : public PhysicsObjective {
public:
    KeffObjective(double target, heat::ThermalProblem prob = {})
        : target_(target), prob_(prob) {
        if (!(target > 0.0)) throw std::invalid_argument("KeffObjective: target must be positive");
    }

    std::string name() const override { return "keff"; }

    ObjectiveEval evaluate(const Array2& projected) override {
        Array2 kfield = heat::conductivity_from_image(projected, prob_);
        auto res = heat::effective_conductivity_with_gradient(kfield, prob_);
        ObjectiveEval eval;
        eval.objective_value = res.k_eff;
        double diff = res.k_eff - target_;
        eval.loss = diff * diff;
        GuidanceTerm term;
        term.grad = res.grad;
        double chain = 2.0 * diff * (prob_.k_solid - prob_.k_gas);
        term.grad *= chain;
        eval.terms.push_back(std::move(term));
        return eval;
    }

    double target() const { return target_; }

private:
    double target_;
    heat::ThermalProblem prob_;
};

namespace detail {

// Pools the projected image down to the solver resolution when they differ by
// a factor of two; identity otherwise.
inline Array2 pool_to(const Array2& p, int cells) {
    if (p.rows() == cells) return p;
    if (p.rows() == 2 * cells) return avg_pool2(p);
    throw std::invalid_argument("objective: image resolution must be 1x or 2x the solver mesh");
}

inline Array2 unpool_from(const Array2& g, int image_px) {
    if (g.rows() == image_px) return g;
    return avg_pool2_vjp(g, image_px, image_px);
}

} // namespace detail

// Mean-squared error between the simulated and target load-displacement
// curves, differentiated by reverse-mode through the MPM time loop. Particles
// are seeded where the (pooled) pixel exceeds 1/2 and carry its value as a
// stiffness scale, which is where the gradient enters.
class CurveObjective : public PhysicsObjective {
public:
    CurveObjective(mpm::CurveTarget target, mpm::MpmConfig cfg, int checkpoint_every = 50)
        : target_(std::move(target)), cfg_(cfg), ck_every_(checkpoint_every) {
        cfg_.validate();
        if (static_cast<int>(target_.load_n.size()) != cfg_.curve_points)
            throw std::invalid_argument("CurveObjective: target has the wrong station count");
    }

    std::string name() const override { return "curve"; }

    ObjectiveEval evaluate(const Array2& projected) override {
        const int cells = cfg_.foam_cells();
        Array2 pooled = detail::pool_to(projected, cells);
        auto res = mpm::curve_mse_with_gradient(cfg_, pooled, &pooled, target_, ck_every_);
        // per-particle stiffness cotangents accumulate onto their cells
        mpm::Simulator probe(cfg_);
        probe.seed_from_image(pooled, &pooled);
        Array2 grad_cells(cells, cells, 0.0);
        for (int p = 0; p < probe.particles().count; ++p) {
            int cx = static_cast<int>(std::floor(probe.particles().px[p] / cfg_.dx()));
            int cy = static_cast<int>(std::floor(probe.particles().py[p] / cfg_.dx()));
            int col = cx - cfg_.padding;
            int row = cells - 1 - (cy - cfg_.padding);
            if (col >= 0 && col < cells && row >= 0 && row < cells)
                grad_cells(row, col) += res.grad_gamma[p];
        }
        ObjectiveEval eval;
        eval.loss = res.mse;
        eval.objective_value = res.mse;
        GuidanceTerm term;
        term.grad = detail::unpool_from(grad_cells, projected.rows());
        eval.terms.push_back(std::move(term));
        last_curve_ = res.curve;
        return eval;
    }

    const mpm::LoadDisplacementCurve& last_curve() const { return last_curve_; }

private:
    mpm::CurveTarget target_;
    mpm::MpmConfig cfg_;
    int ck_every_;
    mpm::LoadDisplacementCurve last_curve_;
};

// Maximizes absorbed fracture energy under a volume-fraction constraint:
// an energy-ascent term plus a squared-error volume penalty. With per-term
// normalization the volume weight defaults to 2 ("slightly stronger"); the
// literal scaling factor m applies when normalization is disabled.
class EnergyVolumeObjective : public PhysicsObjective {
public:
    EnergyVolumeObjective(double phi_target, fracture::FractureProblem prob,
                          double m = 5e-5, double volume_weight = 2.0)
        : phi_target_(phi_target), prob_(prob), m_(m), volume_weight_(volume_weight) {
        if (!(phi_target > 0.0 && phi_target < 1.0))
            throw std::invalid_argument("EnergyVolumeObjective: phi target must lie in (0,1)");
        prob.validate();
    }

    std::string name() const override { return "energy"; }

    ObjectiveEval evaluate(const Array2& projected) override {
        Array2 pooled = detail::pool_to(projected, prob_.mesh_n);
        Array2 modulus = fracture::modulus_from_image(pooled, prob_);
        auto res = fracture::absorbed_energy_with_gradient(modulus, prob_);
        auto [phi, phi_grad] = volume_fraction(projected);
        ObjectiveEval eval;
        eval.objective_value = res.energy;
        double diff = phi - phi_target_;
        eval.loss = diff * diff;
        // volume penalty: descent on (phi* - phi)^2
        GuidanceTerm vol;
        vol.grad = phi_grad;
        vol.grad *= 2.0 * diff;
        vol.weight = volume_weight_;
        eval.terms.push_back(std::move(vol));
        // energy ascent: descend on -E
        Array2 ge = res.grad_modulus;
        ge *= -(prob_.e_solid - prob_.e_void);
        GuidanceTerm energy;
        energy.grad = detail::unpool_from(ge, projected.rows());
        energy.weight = 1.0;
        eval.terms.push_back(std::move(energy));
        return eval;
    }

    double scaling_factor() const { return m_; }

private:
    double phi_target_;
    fracture::FractureProblem prob_;
    double m_;
    double volume_weight_;
};

} // namespace physgen::guidance
