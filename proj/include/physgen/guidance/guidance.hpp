#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "physgen/core/array2.hpp"
#include "physgen/sde/sde.hpp"

// Physics-guided sampling: Tweedie estimate of the clean image, min-max
// rescale, smooth projection toward a binary structure, solver evaluation,
// and composition of the (normalized, scheduled) loss gradients into the
// reverse-SDE drift.

namespace physgen::guidance {

// eta(t) = 5 * 2^(1-t) sharpens the projection toward t = 0;
// s(t) = 50 (1 - t) ramps the guidance intensity up from zero.
struct GuidanceSchedule {
    double eta_base = 5.0;
    double scale_max = 50.0;

    double eta(double t) const { return eta_base * std::pow(2.0, 1.0 - t); }
    double scale(double t) const { return scale_max * (1.0 - t); }
};

// --------------------------------------------------------------------------
// Elementwise maps and their VJPs
// --------------------------------------------------------------------------

// Affine min-max rescale to [0,1]; constant fields map to all-1/2.
inline Array2 rescale01(const Array2& x) {
    if (!x.all_finite()) throw std::invalid_argument("rescale01: non-finite input");
    double lo = x.min(), hi = x.max();
    Array2 y(x.rows(), x.cols());
    if (hi - lo <= 0.0) {
        for (size_t i = 0; i < y.size(); ++i) y[i] = 0.5;
        return y;
    }
    double inv = 1.0 / (hi - lo);
    for (size_t i = 0; i < y.size(); ++i) y[i] = (x[i] - lo) * inv;
    return y;
}

// VJP of rescale01, including the dependence of min/max on their (first, in
// row-major order) attaining pixels; a constant input has zero derivative.
inline Array2 rescale01_vjp(const Array2& x, const Array2& gy) {
    double lo = x.min(), hi = x.max();
    Array2 gx(x.rows(), x.cols(), 0.0);
    if (hi - lo <= 0.0) return gx;
    size_t ia = 0, ib = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i] < x[ia]) ia = i;
        if (x[i] > x[ib]) ib = i;
    }
    double inv = 1.0 / (hi - lo);
    double sum_g = 0.0, sum_gy_y = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double y = (x[i] - lo) * inv;
        sum_g += gy[i];
        sum_gy_y += gy[i] * y;
        gx[i] = gy[i] * inv;
    }
    gx[ia] += (sum_gy_y - sum_g) * inv;
    gx[ib] += -sum_gy_y * inv;
    return gx;
}

// Smooth projection P(x) = [tanh(eta/2) + tanh(eta (x - 1/2))] / (2 tanh(eta/2)).
inline double project_value(double x, double eta) {
    double th = std::tanh(0.5 * eta);
    return (th + std::tanh(eta * (x - 0.5))) / (2.0 * th);
}

inline double project_derivative(double x, double eta) {
    double th = std::tanh(0.5 * eta);
    double c = std::cosh(eta * (x - 0.5));
    return eta / (2.0 * th * c * c);
}

inline Array2 project(const Array2& x, double eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("project: eta must be positive");
    Array2 y(x.rows(), x.cols());
    for (size_t i = 0; i < y.size(); ++i) y[i] = project_value(x[i], eta);
    return y;
}

inline Array2 project_vjp(const Array2& x, double eta, const Array2& gy) {
    Array2 gx(x.rows(), x.cols());
    for (size_t i = 0; i < gx.size(); ++i) gx[i] = gy[i] * project_derivative(x[i], eta);
    return gx;
}

// Linear two-phase property interpolation xi0 + (xi1 - xi0) p.
struct MaterialInterp {
    double xi0 = 0.0, xi1 = 1.0;
};

inline Array2 interpolate_property(const Array2& p, const MaterialInterp& mi) {
    Array2 xi(p.rows(), p.cols());
    for (size_t i = 0; i < xi.size(); ++i) xi[i] = mi.xi0 + (mi.xi1 - mi.xi0) * p[i];
    return xi;
}

enum class NormMode { rms, l2, none };

// Unit-RMS normalization with an epsilon floor; zero stays zero.
inline Array2 normalize_guidance(const Array2& g, NormMode mode = NormMode::rms) {
    double denom;
    switch (mode) {
        case NormMode::rms: denom = g.rms(); break;
        case NormMode::l2: denom = std::sqrt(dot(g, g)); break;
        default: return g;
    }
    denom = std::max(denom, 1e-12);
    Array2 out = g;
    out *= 1.0 / denom;
    return out;
}

// Solid fraction of a projected image and its (constant) gradient.
inline std::pair<double, Array2> volume_fraction(const Array2& p) {
    Array2 grad(p.rows(), p.cols(), 1.0 / static_cast<double>(p.size()));
    return {p.mean(), std::move(grad)};
}

// --------------------------------------------------------------------------
// Objective contract
// --------------------------------------------------------------------------

// One guidance term: a descent direction on the projected image (the sampler
// steps against it) and a relative weight applied after normalization.
struct GuidanceTerm {
    Array2 grad;
    double weight = 1.0;
};

struct ObjectiveEval {
    double loss = 0.0;            // squared-error style loss, for traces
    double objective_value = 0.0; // the physical quantity itself (k_eff, MSE, E, ...)
    std::vector<GuidanceTerm> terms;
};

class PhysicsObjective {
public:
    virtual ~PhysicsObjective() = default;
    virtual std::string name() const = 0;
    virtual ObjectiveEval evaluate(const Array2& projected) = 0;
};

// Noise model abstraction: the trained net, or analytic stand-ins in tests.
class NoiseModel {
public:
    virtual ~NoiseModel() = default;
    virtual Array2 eps(const Array2& x, double t) = 0;
    // VJP of eps with respect to x (needed by the chained mode only).
    virtual Array2 eps_vjp(const Array2& x, double t, const Array2& cot) {
        (void)x;
        (void)t;
        (void)cot;
        throw std::runtime_error("NoiseModel: eps_vjp not implemented");
    }
};

enum class GradientMode { detached, chained };

struct GuidedConfig {
    sde::SamplerConfig sampler;
    GuidanceSchedule schedule;
    GradientMode mode = GradientMode::detached;
    NormMode norm = NormMode::rms;
    int eval_stride = 1;      // evaluate the solver every k-th step
    double final_eta = 100.0; // hard projection applied to the returned image
    sde::NoiseSchedule noise_schedule;
};

struct StepTrace {
    int step;
    double t;
    bool guided = false;
    bool solver_failed = false;
    double loss = 0.0;
    double objective_value = 0.0;
    double phi = 0.0;
};

struct GuidanceDirection {
    Array2 term; // scaled descent direction in x_t space (zero when unguided)
    StepTrace trace;
};

// Builds the guidance term for one step: Tweedie -> rescale -> project ->
// objective -> chain back through projection and rescale -> map to x_t space
// (constant 1/sqrt(alpha_bar) when detached, full network VJP when chained)
// -> normalize per term -> weight -> scale by s(t).
inline GuidanceDirection guidance_direction(NoiseModel& model, PhysicsObjective& objective,
                                            const Array2& x_t, const Array2& eps_pred, double t,
                                            const GuidedConfig& cfg) {
    GuidanceDirection out{Array2(x_t.rows(), x_t.cols(), 0.0), {}};
    out.trace.t = t;
    const auto& ns = cfg.noise_schedule;
    Array2 xhat0 = sde::predict_x0(x_t, eps_pred, t, ns);
    Array2 rescaled = rescale01(xhat0);
    double eta = cfg.schedule.eta(t);
    Array2 projected = project(rescaled, eta);
    out.trace.phi = projected.mean();
    ObjectiveEval eval;
    try {
        eval = objective.evaluate(projected);
    } catch (const std::exception&) {
        out.trace.solver_failed = true; // fall back to the unguided update
        return out;
    }
    out.trace.loss = eval.loss;
    out.trace.objective_value = eval.objective_value;
    double s = cfg.schedule.scale(t);
    double sqrt_ab = std::sqrt(ns.alpha_bar(t));
    double sigma = std::max(ns.sigma(t), sde::NoiseSchedule::kSigmaFloor);
    for (const auto& term : eval.terms) {
        Array2 g = project_vjp(rescaled, eta, term.grad);
        g = rescale01_vjp(xhat0, g);
        if (cfg.mode == GradientMode::detached) {
            g *= 1.0 / sqrt_ab;
        } else {
            Array2 net_part = model.eps_vjp(x_t, t, g);
            for (size_t i = 0; i < g.size(); ++i) g[i] = (g[i] - sigma * net_part[i]) / sqrt_ab;
        }
        g = normalize_guidance(g, cfg.norm);
        double w = s * term.weight;
        for (size_t i = 0; i < g.size(); ++i) out.term[i] += w * g[i];
    }
    out.trace.guided = true;
    return out;
}

struct GuidedResult {
    Array2 image;    // final sample in [0,1] after the hard projection
    Array2 raw;      // final sample mapped to [0,1] without projection
    std::vector<StepTrace> trace;
};

// Physics-guided reverse-SDE sampling of one image. RNG consumption matches
// the unconditional sampler exactly, so a zero guidance scale reproduces it
// bit for bit.
inline GuidedResult guided_sample(NoiseModel& model, PhysicsObjective& objective, int image_px,
                                  const GuidedConfig& cfg, int sample_index = 0) {
    cfg.sampler.validate();
    if (cfg.eval_stride < 1) throw std::invalid_argument("guided_sample: stride must be >= 1");
    RngStream rng(mix_seed(cfg.sampler.rng_seed, 0x73616d70),
                  static_cast<uint64_t>(sample_index));
    Array2 x(image_px, image_px);
    for (size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    GuidedResult result;
    double dt = (cfg.sampler.t_start - cfg.sampler.t_end) / cfg.sampler.steps;
    for (int k = 0; k < cfg.sampler.steps; ++k) {
        double t = cfg.sampler.t_start - k * dt;
        Array2 eps = model.eps(x, t);
        GuidanceDirection dir{Array2(image_px, image_px, 0.0), {}};
        if (k % cfg.eval_stride == 0) {
            dir = guidance_direction(model, objective, x, eps, t, cfg);
        }
        dir.trace.step = k;
        dir.trace.t = t;
        result.trace.push_back(dir.trace);
        bool last = (k == cfg.sampler.steps - 1);
        Array2 noise(image_px, image_px);
        if (!last)
            for (size_t i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
        x = sde::reverse_step(x, t, dt, eps, last ? nullptr : &noise,
                              dir.trace.guided ? &dir.term : nullptr, cfg.noise_schedule);
    }
    result.raw = Array2(image_px, image_px);
    for (size_t i = 0; i < x.size(); ++i)
        result.raw[i] = std::clamp(0.5 * (x[i] + 1.0), 0.0, 1.0);
    result.image = project(rescale01(x), cfg.final_eta);
    return result;
}

} // namespace physgen::guidance
