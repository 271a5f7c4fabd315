#pragma once

#include <memory>
#include <set>
#include <string>

#include "physgen/core/array2.hpp"
#include "physgen/core/rng.hpp"
#include "physgen/nn/layers.hpp"

// Time-conditioned noise-prediction U-Net: symmetric encoder/decoder with
// residual blocks, additive time conditioning in every block, and self
// attention at the configured levels.

namespace physgen::nn {

struct ScoreNetConfig {
    int image_size = 64;
    int in_channels = 1;
    std::vector<int> base_widths = {64, 128, 256, 512};
    int resblocks_per_level = 2;
    std::set<int> attention_levels = {3, 4}; // 1-based level indices
    int attention_heads = 4;
    int groupnorm_groups = 32;
    int time_embed_dim = 256;

    void validate() const {
        if (image_size <= 0) throw std::invalid_argument("ScoreNetConfig: image_size > 0");
        if (in_channels <= 0) throw std::invalid_argument("ScoreNetConfig: in_channels > 0");
        if (resblocks_per_level <= 0)
            throw std::invalid_argument("ScoreNetConfig: resblocks_per_level > 0");
        if (base_widths.empty()) throw std::invalid_argument("ScoreNetConfig: widths empty");
        for (size_t i = 1; i < base_widths.size(); ++i)
            if (base_widths[i] <= base_widths[i - 1])
                throw std::invalid_argument("ScoreNetConfig: widths must be strictly increasing");
        int down = 1 << (base_widths.size() - 1);
        if (image_size % down != 0)
            throw std::invalid_argument(
                "ScoreNetConfig: image_size must be divisible by 2^(levels-1)");
        if (time_embed_dim <= 0 || time_embed_dim % 2 != 0)
            throw std::invalid_argument("ScoreNetConfig: time_embed_dim must be positive even");
        if (attention_heads <= 0) throw std::invalid_argument("ScoreNetConfig: heads > 0");
        for (int lv : attention_levels)
            if (lv < 1 || lv > static_cast<int>(base_widths.size()))
                throw std::invalid_argument("ScoreNetConfig: attention level out of range");
        for (size_t i = 0; i < base_widths.size(); ++i)
            if (attention_levels.count(static_cast<int>(i) + 1) &&
                base_widths[i] % attention_heads != 0)
                throw std::invalid_argument("ScoreNetConfig: width not divisible by heads");
        if (base_widths.back() % attention_heads != 0)
            throw std::invalid_argument("ScoreNetConfig: bottleneck width not divisible by heads");
    }
};

// Sinusoidal features with geometrically spaced frequencies in [1, 1000];
// even dimension required (half sines, half cosines).
inline std::vector<double> sinusoidal_embedding(double t, int dim) {
    if (dim <= 0 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_embedding: dim must be positive even");
    int half = dim / 2;
    std::vector<double> out(dim);
    for (int i = 0; i < half; ++i) {
        double freq =
            half > 1 ? std::exp(std::log(1000.0) * static_cast<double>(i) / (half - 1)) : 1.0;
        out[i] = std::sin(t * freq);
        out[half + i] = std::cos(t * freq);
    }
    return out;
}

template <class T>
struct ResBlockT {
    using Mat = MatT<T>;
    int cin = 0, cout = 0;
    GroupNormT<T> gn_in, gn_out;
    SiLUT<T> act_in, act_out;
    Conv2dT<T> conv_in, conv_out;
    DenseT<T> temb;
    std::optional<Conv2dT<T>> skip;
    const Mat* st = nullptr; // shared silu(time embedding), set by the net each pass

    void init(ParamStoreT<T>& ps, const std::string& name, int cin_, int cout_, int ted,
              int groups) {
        cin = cin_;
        cout = cout_;
        gn_in.init(ps, name + ".gn_in", cin_, groups);
        conv_in.init(ps, name + ".conv_in", cin_, cout_, 3);
        temb.init(ps, name + ".temb", ted, cout_);
        gn_out.init(ps, name + ".gn_out", cout_, groups);
        conv_out.init(ps, name + ".conv_out", cout_, cout_, 3);
        if (cin_ != cout_) {
            skip.emplace();
            skip->init(ps, name + ".skip", cin_, cout_, 1);
        }
    }

    TensorT<T> forward(TensorT<T> x) {
        TensorT<T> h = gn_in.forward(x);
        h = act_in.forward(h);
        h = conv_in.forward(std::move(h));
        Mat tp = temb.forward(*st); // (N, cout)
        for (int ni = 0; ni < h.n; ++ni)
            for (int ci = 0; ci < h.c; ++ci) {
                T* p = h.plane(ni, ci);
                T add = tp(ni, ci);
                for (int q = 0; q < h.spatial(); ++q) p[q] += add;
            }
        h = gn_out.forward(h);
        h = act_out.forward(h);
        h = conv_out.forward(std::move(h));
        TensorT<T> res = skip ? skip->forward(std::move(x)) : std::move(x);
        for (size_t i = 0; i < h.size(); ++i) h.v[i] += res.v[i];
        return h;
    }

    // gst accumulates the gradient of the shared silu(temb) matrix.
    TensorT<T> backward(const TensorT<T>& gy, Mat& gst) {
        TensorT<T> gh = conv_out.backward(gy);
        gh = act_out.backward(gh);
        gh = gn_out.backward(gh);
        Mat gtp(gy.n, cout);
        for (int ni = 0; ni < gh.n; ++ni)
            for (int ci = 0; ci < gh.c; ++ci) {
                const T* p = gh.plane(ni, ci);
                T s = 0;
                for (int q = 0; q < gh.spatial(); ++q) s += p[q];
                gtp(ni, ci) = s;
            }
        gst += temb.backward(gtp);
        gh = conv_in.backward(gh);
        gh = act_in.backward(gh);
        TensorT<T> gx = gn_in.backward(gh);
        if (skip) {
            TensorT<T> gres = skip->backward(gy);
            for (size_t i = 0; i < gx.size(); ++i) gx.v[i] += gres.v[i];
        } else {
            for (size_t i = 0; i < gx.size(); ++i) gx.v[i] += gy.v[i];
        }
        return gx;
    }
};

namespace detail {

template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    TensorT<T> out(a.n, a.c + b.c, a.h, a.w);
    for (int ni = 0; ni < a.n; ++ni) {
        std::memcpy(out.plane(ni, 0), a.sample(ni),
                    sizeof(T) * static_cast<size_t>(a.c) * a.spatial());
        std::memcpy(out.plane(ni, a.c), b.sample(ni),
                    sizeof(T) * static_cast<size_t>(b.c) * b.spatial());
    }
    return out;
}

template <class T>
void split_channels(const TensorT<T>& g, int ca, TensorT<T>& ga, TensorT<T>& gb) {
    ga = TensorT<T>(g.n, ca, g.h, g.w);
    gb = TensorT<T>(g.n, g.c - ca, g.h, g.w);
    for (int ni = 0; ni < g.n; ++ni) {
        std::memcpy(ga.sample(ni), g.plane(ni, 0),
                    sizeof(T) * static_cast<size_t>(ca) * g.spatial());
        std::memcpy(gb.sample(ni), g.plane(ni, ca),
                    sizeof(T) * static_cast<size_t>(g.c - ca) * g.spatial());
    }
}

} // namespace detail

template <class T>
class UNetT {
public:
    using Mat = MatT<T>;
    using Tensor = TensorT<T>;

    explicit UNetT(const ScoreNetConfig& cfg, uint64_t init_seed = 0) : cfg_(cfg) {
        cfg.validate();
        build();
        init_params(init_seed);
    }

    const ScoreNetConfig& config() const { return cfg_; }
    ParamStoreT<T>& params() { return ps_; }
    const ParamStoreT<T>& params() const { return ps_; }

    // x: (N, C, H, W) in model space; t: one time per sample.
    Tensor forward(Tensor x, const std::vector<double>& t) {
        if (x.c != cfg_.in_channels || x.h != cfg_.image_size || x.w != cfg_.image_size)
            throw std::invalid_argument("UNet: input shape does not match config");
        if (static_cast<int>(t.size()) != x.n)
            throw std::invalid_argument("UNet: need one time value per sample");
        const int ted = cfg_.time_embed_dim;
        Mat emb(x.n, ted);
        for (int ni = 0; ni < x.n; ++ni) {
            auto e = sinusoidal_embedding(t[ni], ted);
            for (int j = 0; j < ted; ++j) emb(ni, j) = static_cast<T>(e[j]);
        }
        Mat h1 = temb_fc1_.forward(emb);
        temb_h1_cache_ = h1;
        Mat h2 = temb_fc2_.forward(silu_mat(h1));
        temb_h2_cache_ = h2;
        st_ = silu_mat(h2);
        for (auto* rb : all_resblocks_) rb->st = &st_;

        skips_.clear();
        Tensor h = stem_.forward(std::move(x));
        skips_.push_back(h);
        const int L = levels();
        for (int lv = 0; lv < L; ++lv) {
            for (int b = 0; b < cfg_.resblocks_per_level; ++b) {
                h = enc_res_[lv][b].forward(std::move(h));
                if (enc_attn_[lv][b]) h = enc_attn_[lv][b]->forward(h);
                skips_.push_back(h);
            }
            if (lv < L - 1) {
                h = down_[lv].forward(std::move(h));
                skips_.push_back(h);
            }
        }
        h = mid_res1_.forward(std::move(h));
        h = mid_attn_.forward(h);
        h = mid_res2_.forward(std::move(h));
        for (int lv = L - 1; lv >= 0; --lv) {
            for (int b = 0; b <= cfg_.resblocks_per_level; ++b) {
                Tensor sk = std::move(skips_.back());
                skips_.pop_back();
                h = detail::concat_channels(h, sk);
                int di = dec_index(lv, b);
                h = dec_res_[di].forward(std::move(h));
                if (dec_attn_[di]) h = dec_attn_[di]->forward(h);
            }
            if (lv > 0) {
                h = up_[lv - 1].forward(h);
                h = up_conv_[lv - 1].forward(std::move(h));
            }
        }
        h = head_gn_.forward(h);
        h = head_act_.forward(h);
        return head_conv_.forward(std::move(h));
    }

    // Backward through the whole network; parameter gradients accumulate into
    // the store. Returns the input gradient (used by the chained guidance mode).
    Tensor backward(const Tensor& gy) {
        Tensor g = head_conv_.backward(gy);
        g = head_act_.backward(g);
        g = head_gn_.backward(g);
        Mat gst = Mat::Zero(gy.n, cfg_.time_embed_dim);
        const int L = levels();

        // Decoder blocks ran forward at levels L-1..0; backward revisits them
        // at levels 0..L-1. Backward block #i yields the cotangent of skip
        // stack entry #i (forward popped the stack LIFO).
        std::vector<Tensor> skip_grads(total_skips());
        int skip_fill = 0;
        for (int lv = 0; lv < L; ++lv) {
            if (lv > 0) {
                g = up_conv_[lv - 1].backward(g);
                g = up_[lv - 1].backward(g);
            }
            for (int b = cfg_.resblocks_per_level; b >= 0; --b) {
                int di = dec_index(lv, b);
                if (dec_attn_[di]) g = dec_attn_[di]->backward(g);
                g = dec_res_[di].backward(g, gst);
                Tensor gh, gsk;
                int sk_c = dec_skip_channels_[di];
                detail::split_channels(g, g.c - sk_c, gh, gsk);
                skip_grads[skip_fill++] = std::move(gsk);
                g = std::move(gh);
            }
        }
        g = mid_res2_.backward(g, gst);
        g = mid_attn_.backward(g);
        g = mid_res1_.backward(g, gst);

        // Encoder backward, consuming skip grads in reverse push order.
        int idx = total_skips();
        for (int lv = L - 1; lv >= 0; --lv) {
            if (lv < L - 1) {
                Tensor gd = std::move(skip_grads[--idx]);
                for (size_t i = 0; i < g.size(); ++i) gd.v[i] += g.v[i];
                g = down_[lv].backward(gd);
            }
            for (int b = cfg_.resblocks_per_level - 1; b >= 0; --b) {
                Tensor gs = std::move(skip_grads[--idx]);
                for (size_t i = 0; i < g.size(); ++i) gs.v[i] += g.v[i];
                if (enc_attn_[lv][b]) gs = enc_attn_[lv][b]->backward(gs);
                g = enc_res_[lv][b].backward(gs, gst);
            }
        }
        Tensor gstem = std::move(skip_grads[--idx]);
        for (size_t i = 0; i < g.size(); ++i) gstem.v[i] += g.v[i];
        g = stem_.backward(gstem);

        // time-embedding MLP backward
        Mat gh2 = silu_mat_backward(temb_h2_cache_, gst);
        Mat gh1s = temb_fc2_.backward(gh2);
        Mat gh1 = silu_mat_backward(temb_h1_cache_, gh1s);
        temb_fc1_.backward(gh1);
        return g;
    }

    // Single-image evaluation used by the samplers.
    Array2 predict_noise(const Array2& x, double t) {
        Tensor xt(1, 1, x.rows(), x.cols());
        for (size_t i = 0; i < x.size(); ++i) xt.v[i] = static_cast<T>(x[i]);
        Tensor y = forward(std::move(xt), {t});
        Array2 out(x.rows(), x.cols());
        for (size_t i = 0; i < out.size(); ++i) out[i] = y.v[i];
        return out;
    }

    // VJP of predict_noise with respect to the input image.
    Array2 predict_noise_vjp(const Array2& x, double t, const Array2& cot) {
        Tensor xt(1, 1, x.rows(), x.cols());
        for (size_t i = 0; i < x.size(); ++i) xt.v[i] = static_cast<T>(x[i]);
        (void)forward(std::move(xt), {t});
        Tensor gy(1, 1, x.rows(), x.cols());
        for (size_t i = 0; i < x.size(); ++i) gy.v[i] = static_cast<T>(cot[i]);
        Tensor gx = backward(gy);
        Array2 out(x.rows(), x.cols());
        for (size_t i = 0; i < out.size(); ++i) out[i] = gx.v[i];
        return out;
    }

    int levels() const { return static_cast<int>(cfg_.base_widths.size()); }

    // Closed-form parameter count derived from the config alone; checked
    // against the allocated store to catch wiring mistakes.
    static size_t parameter_count_formula(const ScoreNetConfig& cfg) {
        auto conv = [](int k, int ci, int co) {
            return static_cast<size_t>(co) * ci * k * k + co;
        };
        auto dense = [](int i, int o) { return static_cast<size_t>(o) * i + o; };
        auto gnorm = [](int c) { return static_cast<size_t>(2) * c; };
        auto res = [&](int ci, int co) {
            size_t s = gnorm(ci) + conv(3, ci, co) + dense(cfg.time_embed_dim, co) + gnorm(co) +
                       conv(3, co, co);
            if (ci != co) s += conv(1, ci, co);
            return s;
        };
        auto attn = [&](int c) { return gnorm(c) + dense(c, 3 * c) + dense(c, c); };
        const int L = static_cast<int>(cfg.base_widths.size());
        size_t total = dense(cfg.time_embed_dim, cfg.time_embed_dim) * 2;
        total += conv(3, cfg.in_channels, cfg.base_widths[0]);
        std::vector<int> skip_ch{cfg.base_widths[0]};
        int ch = cfg.base_widths[0];
        for (int lv = 0; lv < L; ++lv) {
            for (int b = 0; b < cfg.resblocks_per_level; ++b) {
                total += res(ch, cfg.base_widths[lv]);
                ch = cfg.base_widths[lv];
                if (cfg.attention_levels.count(lv + 1)) total += attn(ch);
                skip_ch.push_back(ch);
            }
            if (lv < L - 1) {
                total += conv(3, ch, ch);
                skip_ch.push_back(ch);
            }
        }
        total += res(ch, ch) + attn(ch) + res(ch, ch);
        for (int lv = L - 1; lv >= 0; --lv) {
            for (int b = 0; b <= cfg.resblocks_per_level; ++b) {
                int sc = skip_ch.back();
                skip_ch.pop_back();
                total += res(ch + sc, cfg.base_widths[lv]);
                ch = cfg.base_widths[lv];
                if (cfg.attention_levels.count(lv + 1)) total += attn(ch);
            }
            if (lv > 0) total += conv(3, ch, ch);
        }
        total += gnorm(ch) + conv(3, ch, cfg.in_channels);
        return total;
    }

private:
    void build() {
        const int L = levels();
        const int ted = cfg_.time_embed_dim;
        temb_fc1_.init(ps_, "temb.fc1", ted, ted);
        temb_fc2_.init(ps_, "temb.fc2", ted, ted);
        stem_.init(ps_, "stem", cfg_.in_channels, cfg_.base_widths[0], 3);
        int ch = cfg_.base_widths[0];
        std::vector<int> skip_ch{ch};
        enc_res_.resize(L);
        enc_attn_.resize(L);
        for (int lv = 0; lv < L; ++lv) {
            enc_res_[lv].resize(cfg_.resblocks_per_level);
            enc_attn_[lv].resize(cfg_.resblocks_per_level);
            for (int b = 0; b < cfg_.resblocks_per_level; ++b) {
                std::string name = "enc." + std::to_string(lv) + "." + std::to_string(b);
                enc_res_[lv][b].init(ps_, name, ch, cfg_.base_widths[lv], ted,
                                     cfg_.groupnorm_groups);
                ch = cfg_.base_widths[lv];
                if (cfg_.attention_levels.count(lv + 1)) {
                    enc_attn_[lv][b].emplace();
                    enc_attn_[lv][b]->init(ps_, name + ".attn", ch, cfg_.attention_heads,
                                           cfg_.groupnorm_groups);
                }
                skip_ch.push_back(ch);
            }
            if (lv < L - 1) {
                down_.emplace_back();
                down_.back().init(ps_, "down." + std::to_string(lv), ch, ch, 3, 2);
                skip_ch.push_back(ch);
            }
        }
        mid_res1_.init(ps_, "mid.res1", ch, ch, ted, cfg_.groupnorm_groups);
        mid_attn_.init(ps_, "mid.attn", ch, cfg_.attention_heads, cfg_.groupnorm_groups);
        mid_res2_.init(ps_, "mid.res2", ch, ch, ted, cfg_.groupnorm_groups);
        dec_res_.resize(static_cast<size_t>(L) * (cfg_.resblocks_per_level + 1));
        dec_attn_.resize(dec_res_.size());
        dec_skip_channels_.resize(dec_res_.size());
        up_.resize(L - 1);
        up_conv_.resize(L - 1); // up_conv_[lv-1] runs after decoder level lv
        for (int lv = L - 1; lv >= 0; --lv) {
            for (int b = 0; b <= cfg_.resblocks_per_level; ++b) {
                int sc = skip_ch.back();
                skip_ch.pop_back();
                std::string name = "dec." + std::to_string(lv) + "." + std::to_string(b);
                int di = dec_index(lv, b);
                dec_skip_channels_[di] = sc;
                dec_res_[di].init(ps_, name, ch + sc, cfg_.base_widths[lv], ted,
                                  cfg_.groupnorm_groups);
                ch = cfg_.base_widths[lv];
                if (cfg_.attention_levels.count(lv + 1)) {
                    dec_attn_[di].emplace();
                    dec_attn_[di]->init(ps_, name + ".attn", ch, cfg_.attention_heads,
                                        cfg_.groupnorm_groups);
                }
            }
            if (lv > 0) up_conv_[lv - 1].init(ps_, "up." + std::to_string(lv), ch, ch, 3);
        }
        head_gn_.init(ps_, "head.gn", ch, cfg_.groupnorm_groups);
        head_conv_.init(ps_, "head.conv", ch, cfg_.in_channels, 3);
        ps_.allocate();

        all_resblocks_.clear();
        for (auto& lvl : enc_res_)
            for (auto& rb : lvl) all_resblocks_.push_back(&rb);
        all_resblocks_.push_back(&mid_res1_);
        all_resblocks_.push_back(&mid_res2_);
        for (auto& rb : dec_res_) all_resblocks_.push_back(&rb);
    }

    void init_params(uint64_t seed) {
        RngStream rng(mix_seed(seed, 0x696e6974), 0);
        for (const auto& info : ps_.infos()) {
            T* p = ps_.flat().data() + info.offset;
            bool is_weight = info.name.ends_with(".w");
            bool is_gamma = info.name.ends_with(".g");
            if (is_gamma) {
                std::fill(p, p + info.count, T(1));
                continue;
            }
            if (!is_weight) continue; // biases and groupnorm offsets stay zero
            // zero-init the last conv of each residual block, the attention
            // projection and the head, so the net starts as (near) identity
            bool zero_init = info.name.find(".conv_out.") != std::string::npos ||
                             info.name.find(".proj.") != std::string::npos ||
                             info.name.find("head.conv.") != std::string::npos;
            if (zero_init) continue;
            size_t fan_in = 1;
            for (size_t d = 1; d < info.shape.size(); ++d) fan_in *= info.shape[d];
            double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (size_t i = 0; i < info.count; ++i) p[i] = static_cast<T>(scale * rng.normal());
        }
    }

    int dec_index(int lv, int b) const {
        // storage order follows forward execution: lv = L-1 first
        int L = levels();
        return (L - 1 - lv) * (cfg_.resblocks_per_level + 1) + b;
    }
    int total_skips() const { return 1 + levels() * cfg_.resblocks_per_level + (levels() - 1); }

    ScoreNetConfig cfg_;
    ParamStoreT<T> ps_;
    DenseT<T> temb_fc1_, temb_fc2_;
    Conv2dT<T> stem_;
    std::vector<std::vector<ResBlockT<T>>> enc_res_;
    std::vector<std::vector<std::optional<AttentionT<T>>>> enc_attn_;
    std::vector<Conv2dT<T>> down_;
    ResBlockT<T> mid_res1_, mid_res2_;
    AttentionT<T> mid_attn_;
    std::vector<ResBlockT<T>> dec_res_;
    std::vector<std::optional<AttentionT<T>>> dec_attn_;
    std::vector<Upsample2xT<T>> up_;
    std::vector<Conv2dT<T>> up_conv_;
    GroupNormT<T> head_gn_;
    SiLUT<T> head_act_;
    Conv2dT<T> head_conv_;

    Mat st_, temb_h1_cache_, temb_h2_cache_;
    std::vector<Tensor> skips_;
    std::vector<int> dec_skip_channels_;
    std::vector<ResBlockT<T>*> all_resblocks_;
};

using UNet = UNetT<float>; // training/sampling precision

} // namespace physgen::nn
