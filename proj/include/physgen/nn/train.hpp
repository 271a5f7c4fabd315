#pragma once

#include <functional>
#include <numeric>

#include "physgen/core/alloc.hpp"
#include "physgen/core/io.hpp"
#include "physgen/foam/foamgen.hpp"
#include "physgen/nn/unet.hpp"
#include "physgen/sde/sde.hpp"

namespace physgen::nn {

// --------------------------------------------------------------------------
// Adam with bias correction, plus an exponential moving average of the
// weights used at sampling time.
// --------------------------------------------------------------------------

template <class T>
struct AdamT {
    double lr = 2e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t step_count = 0;
    std::vector<T> m, v;

    void reset(size_t n) {
        m.assign(n, T(0));
        v.assign(n, T(0));
        step_count = 0;
    }

    void step(std::vector<T>& params, const std::vector<T>& grads) {
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        for (size_t i = 0; i < params.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * grads[i];
            v[i] = b2 * v[i] + (T(1) - b2) * grads[i] * grads[i];
            double mhat = m[i] / bc1, vhat = v[i] / bc2;
            params[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
};

template <class T>
struct EmaT {
    double decay = 0.999;
    std::vector<T> shadow;

    void reset(const std::vector<T>& params) { shadow = params; }
    void update(const std::vector<T>& params) {
        T d = static_cast<T>(decay);
        for (size_t i = 0; i < params.size(); ++i)
            shadow[i] = d * shadow[i] + (T(1) - d) * params[i];
    }
};

// --------------------------------------------------------------------------
// Checkpoint: magic, version, config, named parameter table (64-bit reals,
// little endian), optional EMA table, optional optimizer state for resume.
// --------------------------------------------------------------------------

struct Checkpoint {
    ScoreNetConfig config;
    std::vector<double> parameters;
    int epoch = 0;
    std::optional<std::vector<double>> ema_parameters;
    std::optional<std::vector<double>> adam_m, adam_v;
    int64_t adam_steps = 0;
    double adam_lr = 2e-4;
    uint64_t train_seed = 0;

    static constexpr const char* kMagic = "PGCKPT1\n";

    // The named layout is reconstructed from the config (any instantiation
    // shares it), so save() does not need a live network.
    void save(const std::string& path) const {
        ParamStoreT<float> layout;
        {
            UNetT<float> tmp(config);
            layout = tmp.params(); // copies the name table
        }
        if (parameters.size() != layout.total())
            throw std::runtime_error("checkpoint: parameter vector does not match config");
        io::atomic_write(path, [&](std::ostream& os) {
            os.write(kMagic, 8);
            io::put<uint32_t>(os, 1);
            io::put<int32_t>(os, config.image_size);
            io::put<int32_t>(os, config.in_channels);
            io::put<uint32_t>(os, static_cast<uint32_t>(config.base_widths.size()));
            for (int w : config.base_widths) io::put<int32_t>(os, w);
            io::put<int32_t>(os, config.resblocks_per_level);
            io::put<uint32_t>(os, static_cast<uint32_t>(config.attention_levels.size()));
            for (int lv : config.attention_levels) io::put<int32_t>(os, lv);
            io::put<int32_t>(os, config.attention_heads);
            io::put<int32_t>(os, config.groupnorm_groups);
            io::put<int32_t>(os, config.time_embed_dim);
            io::put<int32_t>(os, epoch);
            io::put<uint64_t>(os, train_seed);
            io::put<uint32_t>(os, static_cast<uint32_t>(layout.infos().size()));
            for (const auto& info : layout.infos()) {
                io::put_string(os, info.name);
                io::put<uint32_t>(os, static_cast<uint32_t>(info.shape.size()));
                for (int d : info.shape) io::put<uint64_t>(os, static_cast<uint64_t>(d));
                os.write(reinterpret_cast<const char*>(parameters.data() + info.offset),
                         static_cast<std::streamsize>(info.count * sizeof(double)));
            }
            auto put_opt_table = [&](const std::optional<std::vector<double>>& t) {
                io::put<uint8_t>(os, t ? 1 : 0);
                if (t)
                    os.write(reinterpret_cast<const char*>(t->data()),
                             static_cast<std::streamsize>(t->size() * sizeof(double)));
            };
            put_opt_table(ema_parameters);
            io::put<uint8_t>(os, adam_m ? 1 : 0);
            if (adam_m) {
                io::put<int64_t>(os, adam_steps);
                io::put<double>(os, adam_lr);
                os.write(reinterpret_cast<const char*>(adam_m->data()),
                         static_cast<std::streamsize>(adam_m->size() * sizeof(double)));
                os.write(reinterpret_cast<const char*>(adam_v->data()),
                         static_cast<std::streamsize>(adam_v->size() * sizeof(double)));
            }
        });
    }

    static Checkpoint load(const std::string& path) {
        auto bytes = io::read_all(path);
        std::string text(bytes.begin(), bytes.end());
        std::istringstream is(text);
        io::expect_magic(is, kMagic, "checkpoint " + path);
        uint32_t version = io::get<uint32_t>(is);
        if (version != 1) throw std::runtime_error("checkpoint " + path + ": unsupported version");
        Checkpoint ck;
        ck.config.image_size = io::get<int32_t>(is);
        ck.config.in_channels = io::get<int32_t>(is);
        uint32_t nw = io::get<uint32_t>(is);
        ck.config.base_widths.resize(nw);
        for (auto& w : ck.config.base_widths) w = io::get<int32_t>(is);
        ck.config.resblocks_per_level = io::get<int32_t>(is);
        uint32_t na = io::get<uint32_t>(is);
        ck.config.attention_levels.clear();
        for (uint32_t i = 0; i < na; ++i) ck.config.attention_levels.insert(io::get<int32_t>(is));
        ck.config.attention_heads = io::get<int32_t>(is);
        ck.config.groupnorm_groups = io::get<int32_t>(is);
        ck.config.time_embed_dim = io::get<int32_t>(is);
        ck.epoch = io::get<int32_t>(is);
        ck.train_seed = io::get<uint64_t>(is);
        uint32_t ntab = io::get<uint32_t>(is);
        size_t expected = UNetT<float>::parameter_count_formula(ck.config);
        ck.parameters.resize(expected);
        size_t pos = 0;
        for (uint32_t i = 0; i < ntab; ++i) {
            (void)io::get_string(is);
            uint32_t ndim = io::get<uint32_t>(is);
            size_t count = 1;
            for (uint32_t d = 0; d < ndim; ++d) count *= io::get<uint64_t>(is);
            if (pos + count > expected)
                throw std::runtime_error("checkpoint " + path + ": parameter count exceeds config");
            is.read(reinterpret_cast<char*>(ck.parameters.data() + pos),
                    static_cast<std::streamsize>(count * sizeof(double)));
            if (!is) throw std::runtime_error("checkpoint " + path + ": truncated parameters");
            pos += count;
        }
        if (pos != expected)
            throw std::runtime_error("checkpoint " + path + ": parameter count mismatch vs config");
        if (io::get<uint8_t>(is)) {
            ck.ema_parameters.emplace(expected);
            is.read(reinterpret_cast<char*>(ck.ema_parameters->data()),
                    static_cast<std::streamsize>(expected * sizeof(double)));
            if (!is) throw std::runtime_error("checkpoint " + path + ": truncated EMA table");
        }
        if (io::get<uint8_t>(is)) {
            ck.adam_steps = io::get<int64_t>(is);
            ck.adam_lr = io::get<double>(is);
            ck.adam_m.emplace(expected);
            ck.adam_v.emplace(expected);
            is.read(reinterpret_cast<char*>(ck.adam_m->data()),
                    static_cast<std::streamsize>(expected * sizeof(double)));
            is.read(reinterpret_cast<char*>(ck.adam_v->data()),
                    static_cast<std::streamsize>(expected * sizeof(double)));
            if (!is) throw std::runtime_error("checkpoint " + path + ": truncated optimizer state");
        }
        return ck;
    }

    // Builds a network with these weights (EMA weights when present and requested).
    template <class T = float>
    std::unique_ptr<UNetT<T>> instantiate(bool use_ema = true) const {
        auto net = std::make_unique<UNetT<T>>(config);
        const auto& src = (use_ema && ema_parameters) ? *ema_parameters : parameters;
        if (src.size() != net->params().total())
            throw std::runtime_error("checkpoint: parameter count mismatch vs config");
        for (size_t i = 0; i < src.size(); ++i)
            net->params().flat()[i] = static_cast<T>(src[i]);
        return net;
    }
};

// --------------------------------------------------------------------------
// Denoising score matching loss
// --------------------------------------------------------------------------

struct DsmSample {
    Array2 x0; // model space [-1, 1]
    double t;
    Array2 eps;
};

// Deterministic core: loss and parameter gradients for explicit (x0, t, eps)
// triples. Samples are processed one at a time (identical math to a batched
// pass since normalization is per-sample); the mean runs over every predicted
// element, so a zero predictor sits at the second moment of the standard
// normal (= 1 per element).
template <class T>
double dsm_loss_batch(UNetT<T>& net, const std::vector<DsmSample>& batch,
                      bool accumulate_grads = true) {
    if (batch.empty()) throw std::invalid_argument("dsm_loss_batch: empty batch");
    const int px = net.config().image_size;
    const size_t d = static_cast<size_t>(px) * px;
    const double inv = 1.0 / (static_cast<double>(batch.size()) * d);
    sde::NoiseSchedule ns;
    double loss = 0.0;
    for (const auto& s : batch) {
        if (s.x0.rows() != px || s.x0.cols() != px)
            throw std::invalid_argument("dsm_loss_batch: image size does not match config");
        double a = std::sqrt(ns.alpha_bar(s.t));
        double sg = ns.sigma(s.t);
        TensorT<T> xt(1, 1, px, px);
        for (size_t p = 0; p < d; ++p)
            xt.v[p] = static_cast<T>(a * s.x0[p] + sg * s.eps[p]);
        TensorT<T> pred = net.forward(std::move(xt), {s.t});
        TensorT<T> gy(1, 1, px, px);
        for (size_t p = 0; p < d; ++p) {
            double diff = static_cast<double>(pred.v[p]) - s.eps[p];
            loss += diff * diff;
            gy.v[p] = static_cast<T>(2.0 * diff * inv);
        }
        if (accumulate_grads) net.backward(gy);
    }
    return loss * inv;
}

// Draws (t, eps) for a batch of clean images; t ~ U(0,1], eps ~ N(0,1).
inline std::vector<DsmSample> draw_dsm_batch(const std::vector<const Array2*>& images,
                                             uint64_t key, uint64_t counter_base) {
    std::vector<DsmSample> out;
    out.reserve(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        RngStream rng(key, counter_base + i);
        DsmSample s;
        s.x0 = *images[i];
        for (auto& v : s.x0.raw()) v = 2.0 * v - 1.0; // [0,1] -> [-1,1]
        s.t = 1.0 - rng.uniform(); // (0, 1]
        s.eps = Array2(s.x0.rows(), s.x0.cols());
        for (auto& v : s.eps.raw()) v = rng.normal();
        out.push_back(std::move(s));
    }
    return out;
}

// --------------------------------------------------------------------------
// Training loop
// --------------------------------------------------------------------------

struct TrainConfig {
    int batch_size = 16;
    double learning_rate = 2e-4;
    int epochs = 1000;
    uint64_t rng_seed = 0;
    int checkpoint_every = 50; // epochs
    bool use_ema = true;
    double ema_decay = 0.999;

    void validate() const {
        if (batch_size <= 0 || epochs <= 0 || !(learning_rate > 0.0))
            throw std::invalid_argument("TrainConfig: all fields must be positive");
    }
};

struct EpochStats {
    int epoch;
    double mean_loss;
};

// Trains (or resumes) the noise predictor. All randomness is keyed by
// (seed, epoch, step), so resuming from a checkpoint continues bit-identically.
inline Checkpoint train(const foam::Dataset& data, const TrainConfig& tc,
                        const ScoreNetConfig& nc, const std::string& out_path = "",
                        const Checkpoint* resume = nullptr,
                        const std::function<void(const EpochStats&)>& on_epoch = nullptr) {
    tune_allocator();
    tc.validate();
    nc.validate();
    if (data.images.empty()) throw std::invalid_argument("train: dataset is empty");
    for (const auto& img : data.images)
        if (img.rows() != nc.image_size || img.cols() != nc.image_size)
            throw std::invalid_argument("train: dataset image size does not match network config");
    if (nc.in_channels != 1)
        throw std::invalid_argument("train: foam datasets are single-channel");

    UNet net(nc, tc.rng_seed);
    AdamT<float> adam;
    adam.lr = tc.learning_rate;
    adam.reset(net.params().total());
    EmaT<float> ema;
    ema.decay = tc.ema_decay;
    ema.reset(net.params().flat());
    int start_epoch = 0;
    if (resume) {
        if (resume->parameters.size() != net.params().total())
            throw std::invalid_argument("train: resume checkpoint does not match config");
        for (size_t i = 0; i < resume->parameters.size(); ++i)
            net.params().flat()[i] = static_cast<float>(resume->parameters[i]);
        if (resume->adam_m) {
            adam.step_count = resume->adam_steps;
            adam.lr = resume->adam_lr;
            for (size_t i = 0; i < adam.m.size(); ++i) {
                adam.m[i] = static_cast<float>((*resume->adam_m)[i]);
                adam.v[i] = static_cast<float>((*resume->adam_v)[i]);
            }
        }
        if (resume->ema_parameters)
            for (size_t i = 0; i < ema.shadow.size(); ++i)
                ema.shadow[i] = static_cast<float>((*resume->ema_parameters)[i]);
        start_epoch = resume->epoch;
    }

    const int n_img = static_cast<int>(data.images.size());
    const int steps_per_epoch = (n_img + tc.batch_size - 1) / tc.batch_size;

    auto make_checkpoint = [&](int epoch) {
        Checkpoint ck;
        ck.config = nc;
        ck.parameters.assign(net.params().flat().begin(), net.params().flat().end());
        ck.epoch = epoch;
        if (tc.use_ema)
            ck.ema_parameters.emplace(ema.shadow.begin(), ema.shadow.end());
        ck.adam_m.emplace(adam.m.begin(), adam.m.end());
        ck.adam_v.emplace(adam.v.begin(), adam.v.end());
        ck.adam_steps = adam.step_count;
        ck.adam_lr = adam.lr;
        ck.train_seed = tc.rng_seed;
        return ck;
    };

    for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
        std::vector<int> perm(n_img);
        std::iota(perm.begin(), perm.end(), 0);
        RngStream shuffle_rng(mix_seed(tc.rng_seed, 0x70657275), static_cast<uint64_t>(epoch));
        for (int i = n_img - 1; i > 0; --i) {
            int j = static_cast<int>(shuffle_rng.next_u32() % static_cast<uint32_t>(i + 1));
            std::swap(perm[i], perm[j]);
        }
        double epoch_loss = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            int lo = step * tc.batch_size;
            int hi = std::min(lo + tc.batch_size, n_img);
            std::vector<const Array2*> imgs;
            imgs.reserve(hi - lo);
            for (int i = lo; i < hi; ++i) imgs.push_back(&data.images[perm[i]]);
            uint64_t key = mix_seed(tc.rng_seed, 0x64736d00u + static_cast<uint64_t>(epoch));
            auto batch = draw_dsm_batch(imgs, key, static_cast<uint64_t>(step) << 20);
            net.params().zero_grad();
            double loss = dsm_loss_batch(net, batch);
            adam.step(net.params().flat(), net.params().flat_grad());
            ema.update(net.params().flat());
            epoch_loss += loss;
        }
        epoch_loss /= steps_per_epoch;
        if (on_epoch) on_epoch({epoch, epoch_loss});
        bool last = (epoch + 1 == tc.epochs);
        if (!out_path.empty() && (last || (epoch + 1) % tc.checkpoint_every == 0))
            make_checkpoint(epoch + 1).save(out_path);
    }
    return make_checkpoint(tc.epochs);
}

} // namespace physgen::nn
