#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "physgen/core/array2.hpp"
#include "physgen/core/rng.hpp"

// Variance-preserving SDE with beta(t) = 20 t: alpha_bar and the integral of
// beta are closed-form, which the schedule identities below rely on.

namespace physgen::sde {

struct NoiseSchedule {
    // beta(t) = beta_slope * t; alpha_bar(t) = exp(-beta_slope * t^2 / 2).
    double beta_slope = 20.0;

    double beta(double t) const { return beta_slope * t; }
    double int_beta(double t) const { return 0.5 * beta_slope * t * t; } // closed form, no quadrature
    double alpha_bar(double t) const { return std::exp(-int_beta(t)); }
    double sigma(double t) const { return std::sqrt(1.0 - alpha_bar(t)); }

    static constexpr double kSigmaFloor = 1e-5; // guards divisions as t -> 0
};

struct SamplerConfig {
    int steps = 50;
    double t_start = 1.0;
    double t_end = 0.0;
    uint64_t rng_seed = 0;

    void validate() const {
        if (steps < 1) throw std::invalid_argument("SamplerConfig: steps must be >= 1");
        if (!(0.0 <= t_end && t_end < t_start && t_start <= 1.0))
            throw std::invalid_argument("SamplerConfig: require 0 <= t_end < t_start <= 1");
    }
};

// x_t = sqrt(alpha_bar) x0 + sigma * eps
inline Array2 perturb(const Array2& x0, double t, const Array2& eps,
                      const NoiseSchedule& ns = {}) {
    if (!x0.same_shape(eps)) throw std::invalid_argument("perturb: shape mismatch");
    double a = std::sqrt(ns.alpha_bar(t));
    double s = ns.sigma(t);
    Array2 out(x0.rows(), x0.cols());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
    return out;
}

// score = -eps_pred / sigma(t)
inline Array2 score_from_noise(const Array2& eps_pred, double t, const NoiseSchedule& ns = {}) {
    if (t <= 0.0) throw std::invalid_argument("score undefined at t=0");
    double s = ns.sigma(t);
    Array2 out(eps_pred.rows(), eps_pred.cols());
    for (size_t i = 0; i < out.size(); ++i) out[i] = -eps_pred[i] / s;
    return out;
}

// Posterior-mean reconstruction of the clean field.
inline Array2 predict_x0(const Array2& x_t, const Array2& eps_pred, double t,
                         const NoiseSchedule& ns = {}) {
    if (!x_t.same_shape(eps_pred)) throw std::invalid_argument("predict_x0: shape mismatch");
    double a = std::sqrt(ns.alpha_bar(t));
    double s = ns.sigma(t);
    Array2 out(x_t.rows(), x_t.cols());
    for (size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - s * eps_pred[i]) / a;
    return out;
}

// One Euler-Maruyama update of the reverse SDE from t to t - dt. The optional
// guidance term is added to eps_pred/sigma inside the drift (already scaled by
// the caller); it is a descent direction on the guidance loss.
inline Array2 reverse_step(const Array2& x_t, double t, double dt, const Array2& eps_pred,
                           const Array2* noise, const Array2* guidance_term,
                           const NoiseSchedule& ns = {}) {
    if (dt <= 0.0) throw std::invalid_argument("reverse_step: dt must be positive");
    if (t - dt < -1e-12) throw std::invalid_argument("reverse_step: step crosses t=0");
    double b = ns.beta(t);
    double s = std::max(ns.sigma(t), NoiseSchedule::kSigmaFloor);
    double diff = std::sqrt(b * dt);
    Array2 out(x_t.rows(), x_t.cols());
    for (size_t i = 0; i < out.size(); ++i) {
        double drift = -0.5 * b * x_t[i] + b * (eps_pred[i] / s);
        if (guidance_term) drift += b * (*guidance_term)[i];
        double v = x_t[i] - dt * drift;
        if (noise) v += diff * (*noise)[i];
        out[i] = v;
    }
    return out;
}

using EpsFn = std::function<Array2(const Array2&, double)>;

struct SampleTracePoint {
    double t;
    double volume_fraction;
};

// Integrates the reverse SDE from t_start to t_end on a uniform grid with
// left-endpoint drift evaluation; the diffusion noise is omitted on the final
// step so the returned sample is the drift endpoint. Model space is [-1, 1];
// outputs are mapped back to [0, 1].
inline std::vector<Array2> sample_unconditional(const EpsFn& eps_fn, int image_px,
                                                const SamplerConfig& cfg, int count,
                                                const NoiseSchedule& ns = {}) {
    cfg.validate();
    std::vector<Array2> out;
    if (count <= 0) return out;
    out.reserve(count);
    double dt = (cfg.t_start - cfg.t_end) / cfg.steps;
    for (int s = 0; s < count; ++s) {
        RngStream rng(mix_seed(cfg.rng_seed, 0x73616d70), static_cast<uint64_t>(s));
        Array2 x(image_px, image_px);
        for (size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
        for (int k = 0; k < cfg.steps; ++k) {
            double t = cfg.t_start - k * dt;
            Array2 eps = eps_fn(x, t);
            bool last = (k == cfg.steps - 1);
            Array2 noise(image_px, image_px);
            if (!last)
                for (size_t i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
            x = reverse_step(x, t, dt, eps, last ? nullptr : &noise, nullptr, ns);
        }
        Array2 img(image_px, image_px);
        for (size_t i = 0; i < img.size(); ++i)
            img[i] = std::clamp(0.5 * (x[i] + 1.0), 0.0, 1.0);
        out.push_back(std::move(img));
    }
    return out;
}

} // namespace physgen::sde
