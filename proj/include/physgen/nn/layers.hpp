#pragma once

#include <cmath>
#include <optional>

#include "physgen/nn/tensor.hpp"

// Layer zoo for the noise-prediction U-Net. Forward passes take their input by
// value and move it into the cache, so chained calls do not copy activations.
// All backward passes are hand-written and validated against finite
// differences in the test suite.

namespace physgen::nn {

template <class T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// --------------------------------------------------------------------------
// Conv2d: im2col + per-sample GEMM (patch matrices stay cache resident)
// --------------------------------------------------------------------------

// Grow-only scratch arena shared by the conv layers. Single-threaded
// evaluation by contract (see the concurrency notes); avoids large
// per-call allocations, which dominate the cost of small GEMMs.
template <class T>
inline std::vector<T>& conv_arena(int which) {
    static std::vector<T> bufs[3];
    return bufs[which];
}

template <class T>
inline Eigen::Map<MatT<T>> arena_mat(int which, Eigen::Index rows, Eigen::Index cols) {
    auto& buf = conv_arena<T>(which);
    size_t need = static_cast<size_t>(rows) * cols;
    if (buf.size() < need) buf.resize(need);
    return Eigen::Map<MatT<T>>(buf.data(), rows, cols);
}

template <class T>
struct Conv2dT {
    using Mat = MatT<T>;
    int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
    size_t w_idx = 0, b_idx = 0;
    ParamStoreT<T>* ps = nullptr;
    TensorT<T> x_cache;

    void init(ParamStoreT<T>& store, const std::string& name, int cin_, int cout_, int k_,
              int stride_ = 1) {
        ps = &store;
        cin = cin_;
        cout = cout_;
        k = k_;
        stride = stride_;
        pad = (k_ - 1) / 2;
        w_idx = store.add(name + ".w", {cout_, cin_, k_, k_});
        b_idx = store.add(name + ".b", {cout_});
    }

    int hout(int hin) const { return (hin + 2 * pad - k) / stride + 1; }

    TensorT<T> forward(TensorT<T> x) {
        int ho = hout(x.h), wo = hout(x.w);
        TensorT<T> y(x.n, cout, ho, wo);
        Eigen::Map<const RowMatT<T>> W(ps->data(w_idx), cout,
                                       static_cast<Eigen::Index>(cin) * k * k);
        const T* b = ps->data(b_idx);
        const Eigen::Index hw = static_cast<Eigen::Index>(ho) * wo;
        auto ym = arena_mat<T>(0, hw, cout);
        auto col = arena_mat<T>(1, hw, static_cast<Eigen::Index>(cin) * k * k);
        for (int ni = 0; ni < x.n; ++ni) {
            if (k == 1 && stride == 1) {
                Eigen::Map<const Mat> xm(x.sample(ni), hw, cin);
                ym.noalias() = xm * W.transpose();
            } else {
                im2col(x.sample(ni), x.h, x.w, ho, wo, col);
                ym.noalias() = col * W.transpose();
            }
            for (int co = 0; co < cout; ++co) {
                T* dst = y.plane(ni, co);
                const T* src = ym.col(co).data();
                T bias = b[co];
                for (Eigen::Index p = 0; p < hw; ++p) dst[p] = src[p] + bias;
            }
        }
        x_cache = std::move(x);
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        const TensorT<T>& x = x_cache;
        int ho = gy.h, wo = gy.w;
        TensorT<T> gx(x.n, cin, x.h, x.w);
        Eigen::Map<RowMatT<T>> gW(ps->grad(w_idx), cout, static_cast<Eigen::Index>(cin) * k * k);
        T* gb = ps->grad(b_idx);
        Eigen::Map<const RowMatT<T>> W(ps->data(w_idx), cout,
                                       static_cast<Eigen::Index>(cin) * k * k);
        const Eigen::Index hw = static_cast<Eigen::Index>(ho) * wo;
        auto gym = arena_mat<T>(0, hw, cout);
        auto col = arena_mat<T>(1, hw, static_cast<Eigen::Index>(cin) * k * k);
        auto gcol = arena_mat<T>(2, hw, static_cast<Eigen::Index>(cin) * k * k);
        for (int ni = 0; ni < gy.n; ++ni) {
            for (int co = 0; co < cout; ++co) {
                const T* src = gy.plane(ni, co);
                T* dst = gym.col(co).data();
                T s = 0;
                for (Eigen::Index p = 0; p < hw; ++p) {
                    dst[p] = src[p];
                    s += src[p];
                }
                gb[co] += s;
            }
            if (k == 1 && stride == 1) {
                Eigen::Map<const Mat> xm(x.sample(ni), hw, cin);
                gW.noalias() += gym.transpose() * xm;
                Eigen::Map<Mat> gxm(gx.sample(ni), hw, cin);
                gxm.noalias() = gym * W;
            } else {
                im2col(x.sample(ni), x.h, x.w, ho, wo, col);
                gW.noalias() += gym.transpose() * col;
                gcol.noalias() = gym * W;
                col2im_add(gcol, x.h, x.w, ho, wo, gx.sample(ni));
            }
        }
        x_cache.release();
        return gx;
    }

private:
    template <class M>
    void im2col(const T* xs, int hin, int win, int ho, int wo, M& col) const {
        for (int ci = 0; ci < cin; ++ci) {
            const T* xc = xs + static_cast<size_t>(ci) * hin * win;
            for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw) {
                    Eigen::Index colidx = (static_cast<Eigen::Index>(ci) * k + kh) * k + kw;
                    T* dst = col.col(colidx).data();
                    if (stride == 1) {
                        // unit stride: each output row is the input row shifted
                        // by (kw - pad); bulk-copy the overlap, zero the edges
                        int shift = kw - pad;
                        int n_copy = win - std::abs(shift);
                        int d0 = std::max(0, -shift), s0 = std::max(0, shift);
                        for (int oh = 0; oh < ho; ++oh) {
                            int ih = oh + kh - pad;
                            T* drow = dst + static_cast<size_t>(oh) * wo;
                            if (ih < 0 || ih >= hin) {
                                std::fill(drow, drow + wo, T(0));
                                continue;
                            }
                            const T* row = xc + static_cast<size_t>(ih) * win;
                            if (shift < 0)
                                std::fill(drow, drow + d0, T(0));
                            else if (shift > 0)
                                std::fill(drow + wo - shift, drow + wo, T(0));
                            std::memcpy(drow + d0, row + s0, sizeof(T) * n_copy);
                        }
                    } else {
                        for (int oh = 0; oh < ho; ++oh) {
                            int ih = oh * stride + kh - pad;
                            if (ih < 0 || ih >= hin) {
                                std::fill(dst + static_cast<size_t>(oh) * wo,
                                          dst + static_cast<size_t>(oh + 1) * wo, T(0));
                                continue;
                            }
                            const T* row = xc + static_cast<size_t>(ih) * win;
                            for (int ow = 0; ow < wo; ++ow) {
                                int iw = ow * stride + kw - pad;
                                dst[static_cast<size_t>(oh) * wo + ow] =
                                    (iw >= 0 && iw < win) ? row[iw] : T(0);
                            }
                        }
                    }
                }
        }
    }

    template <class M>
    void col2im_add(const M& col, int hin, int win, int ho, int wo, T* gxs) const {
        for (int ci = 0; ci < cin; ++ci) {
            T* gc = gxs + static_cast<size_t>(ci) * hin * win;
            for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw) {
                    Eigen::Index colidx = (static_cast<Eigen::Index>(ci) * k + kh) * k + kw;
                    const T* src = col.col(colidx).data();
                    if (stride == 1) {
                        int shift = kw - pad;
                        int n_add = win - std::abs(shift);
                        int d0 = std::max(0, shift), s0 = std::max(0, -shift);
                        for (int oh = 0; oh < ho; ++oh) {
                            int ih = oh + kh - pad;
                            if (ih < 0 || ih >= hin) continue;
                            T* row = gc + static_cast<size_t>(ih) * win + d0;
                            const T* srow = src + static_cast<size_t>(oh) * wo + s0;
                            for (int i = 0; i < n_add; ++i) row[i] += srow[i];
                        }
                    } else {
                        for (int oh = 0; oh < ho; ++oh) {
                            int ih = oh * stride + kh - pad;
                            if (ih < 0 || ih >= hin) continue;
                            T* row = gc + static_cast<size_t>(ih) * win;
                            for (int ow = 0; ow < wo; ++ow) {
                                int iw = ow * stride + kw - pad;
                                if (iw >= 0 && iw < win)
                                    row[iw] += src[static_cast<size_t>(oh) * wo + ow];
                            }
                        }
                    }
                }
        }
    }
};

// --------------------------------------------------------------------------
// Dense (applied to (rows x in) matrices)
// --------------------------------------------------------------------------

template <class T>
struct DenseT {
    using Mat = MatT<T>;
    int in = 0, out = 0;
    size_t w_idx = 0, b_idx = 0;
    ParamStoreT<T>* ps = nullptr;
    Mat x_cache;

    void init(ParamStoreT<T>& store, const std::string& name, int in_, int out_) {
        ps = &store;
        in = in_;
        out = out_;
        w_idx = store.add(name + ".w", {out_, in_});
        b_idx = store.add(name + ".b", {out_});
    }

    Mat forward(const Mat& x) {
        x_cache = x;
        Eigen::Map<const RowMatT<T>> W(ps->data(w_idx), out, in);
        Mat y = x * W.transpose();
        Eigen::Map<const Mat> b(ps->data(b_idx), 1, out);
        y.rowwise() += b.row(0);
        return y;
    }

    Mat backward(const Mat& gy) {
        Eigen::Map<const RowMatT<T>> W(ps->data(w_idx), out, in);
        Eigen::Map<RowMatT<T>> gW(ps->grad(w_idx), out, in);
        Eigen::Map<Mat> gb(ps->grad(b_idx), 1, out);
        gW.noalias() += gy.transpose() * x_cache;
        gb.row(0) += gy.colwise().sum();
        Mat gx = gy * W;
        x_cache.resize(0, 0);
        return gx;
    }
};

// --------------------------------------------------------------------------
// GroupNorm
// --------------------------------------------------------------------------

template <class T>
struct GroupNormT {
    int channels = 0, groups = 1;
    static constexpr double kEps = 1e-5;
    size_t g_idx = 0, b_idx = 0;
    ParamStoreT<T>* ps = nullptr;

    TensorT<T> xhat_cache;
    std::vector<T> invstd_cache; // per (n, group)

    void init(ParamStoreT<T>& store, const std::string& name, int channels_, int groups_) {
        ps = &store;
        channels = channels_;
        groups = std::min(groups_, channels_);
        while (channels_ % groups != 0) --groups; // largest divisor not exceeding the request
        g_idx = store.add(name + ".g", {channels_});
        b_idx = store.add(name + ".b", {channels_});
    }

    TensorT<T> forward(const TensorT<T>& x) {
        int cpg = channels / groups;
        size_t m = static_cast<size_t>(cpg) * x.spatial();
        TensorT<T> y(x.n, x.c, x.h, x.w);
        xhat_cache = TensorT<T>(x.n, x.c, x.h, x.w);
        invstd_cache.assign(static_cast<size_t>(x.n) * groups, T(0));
        const T* gamma = ps->data(g_idx);
        const T* beta = ps->data(b_idx);
        for (int ni = 0; ni < x.n; ++ni)
            for (int g = 0; g < groups; ++g) {
                const T* xs = x.plane(ni, g * cpg);
                double mean = 0.0;
                for (size_t i = 0; i < m; ++i) mean += xs[i];
                mean /= static_cast<double>(m);
                double var = 0.0;
                for (size_t i = 0; i < m; ++i) {
                    double d = xs[i] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(m);
                T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
                T mu = static_cast<T>(mean);
                invstd_cache[static_cast<size_t>(ni) * groups + g] = inv;
                T* xh = xhat_cache.plane(ni, g * cpg);
                T* ys = y.plane(ni, g * cpg);
                for (int cc = 0; cc < cpg; ++cc) {
                    T ga = gamma[g * cpg + cc], be = beta[g * cpg + cc];
                    for (int p = 0; p < x.spatial(); ++p) {
                        size_t idx = static_cast<size_t>(cc) * x.spatial() + p;
                        T v = (xs[idx] - mu) * inv;
                        xh[idx] = v;
                        ys[idx] = ga * v + be;
                    }
                }
            }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        int cpg = channels / groups;
        size_t m = static_cast<size_t>(cpg) * gy.spatial();
        TensorT<T> gx(gy.n, gy.c, gy.h, gy.w);
        const T* gamma = ps->data(g_idx);
        T* ggamma = ps->grad(g_idx);
        T* gbeta = ps->grad(b_idx);
        for (int ni = 0; ni < gy.n; ++ni)
            for (int g = 0; g < groups; ++g) {
                const T* gys = gy.plane(ni, g * cpg);
                const T* xh = xhat_cache.plane(ni, g * cpg);
                T inv = invstd_cache[static_cast<size_t>(ni) * groups + g];
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    T ga = gamma[g * cpg + cc];
                    double sg = 0.0, sb = 0.0;
                    for (int p = 0; p < gy.spatial(); ++p) {
                        size_t idx = static_cast<size_t>(cc) * gy.spatial() + p;
                        sg += static_cast<double>(gys[idx]) * xh[idx];
                        sb += gys[idx];
                        double dxh = static_cast<double>(gys[idx]) * ga;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[idx];
                    }
                    ggamma[g * cpg + cc] += static_cast<T>(sg);
                    gbeta[g * cpg + cc] += static_cast<T>(sb);
                }
                T* gxs = gx.plane(ni, g * cpg);
                double inv_m = 1.0 / static_cast<double>(m);
                T a1 = static_cast<T>(sum_dxh * inv_m);
                T a2 = static_cast<T>(sum_dxh_xh * inv_m);
                for (int cc = 0; cc < cpg; ++cc) {
                    T ga = gamma[g * cpg + cc];
                    for (int p = 0; p < gy.spatial(); ++p) {
                        size_t idx = static_cast<size_t>(cc) * gy.spatial() + p;
                        T dxh = gys[idx] * ga;
                        gxs[idx] = inv * (dxh - a1 - xh[idx] * a2);
                    }
                }
            }
        xhat_cache.release();
        return gx;
    }
};

// --------------------------------------------------------------------------
// SiLU
// --------------------------------------------------------------------------

template <class T>
struct SiLUT {
    TensorT<T> s_cache, y_cache;

    TensorT<T> forward(const TensorT<T>& x) {
        s_cache = TensorT<T>(x.n, x.c, x.h, x.w);
        TensorT<T> y(x.n, x.c, x.h, x.w);
        for (size_t i = 0; i < x.size(); ++i) {
            T s = sigmoid(x.v[i]);
            s_cache.v[i] = s;
            y.v[i] = x.v[i] * s;
        }
        y_cache = y;
        return y;
    }
    // d(x s(x))/dx = s + x s (1-s) = s + y (1-s)
    TensorT<T> backward(const TensorT<T>& gy) {
        TensorT<T> gx(gy.n, gy.c, gy.h, gy.w);
        for (size_t i = 0; i < gy.size(); ++i) {
            T s = s_cache.v[i];
            gx.v[i] = gy.v[i] * (s + y_cache.v[i] * (T(1) - s));
        }
        s_cache.release();
        y_cache.release();
        return gx;
    }
};

template <class T>
inline MatT<T> silu_mat(const MatT<T>& x) {
    MatT<T> y = x;
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] *= sigmoid(x.data()[i]);
    return y;
}

template <class T>
inline MatT<T> silu_mat_backward(const MatT<T>& x, const MatT<T>& gy) {
    MatT<T> gx = gy;
    for (Eigen::Index i = 0; i < gx.size(); ++i) {
        T s = sigmoid(x.data()[i]);
        gx.data()[i] *= s * (T(1) + x.data()[i] * (T(1) - s));
    }
    return gx;
}

// --------------------------------------------------------------------------
// Nearest-neighbour 2x upsample
// --------------------------------------------------------------------------

template <class T>
struct Upsample2xT {
    TensorT<T> forward(const TensorT<T>& x) {
        TensorT<T> y(x.n, x.c, x.h * 2, x.w * 2);
        for (int ni = 0; ni < x.n; ++ni)
            for (int ci = 0; ci < x.c; ++ci) {
                const T* src = x.plane(ni, ci);
                T* dst = y.plane(ni, ci);
                for (int r = 0; r < x.h; ++r)
                    for (int cc = 0; cc < x.w; ++cc) {
                        T v = src[static_cast<size_t>(r) * x.w + cc];
                        size_t o = static_cast<size_t>(2 * r) * y.w + 2 * cc;
                        dst[o] = v;
                        dst[o + 1] = v;
                        dst[o + y.w] = v;
                        dst[o + y.w + 1] = v;
                    }
            }
        return y;
    }
    TensorT<T> backward(const TensorT<T>& gy) {
        TensorT<T> gx(gy.n, gy.c, gy.h / 2, gy.w / 2);
        for (int ni = 0; ni < gy.n; ++ni)
            for (int ci = 0; ci < gy.c; ++ci) {
                const T* src = gy.plane(ni, ci);
                T* dst = gx.plane(ni, ci);
                for (int r = 0; r < gx.h; ++r)
                    for (int cc = 0; cc < gx.w; ++cc) {
                        size_t o = static_cast<size_t>(2 * r) * gy.w + 2 * cc;
                        dst[static_cast<size_t>(r) * gx.w + cc] =
                            src[o] + src[o + 1] + src[o + gy.w] + src[o + gy.w + 1];
                    }
            }
        return gx;
    }
};

// --------------------------------------------------------------------------
// Multi-head self-attention over spatial positions
// --------------------------------------------------------------------------

template <class T>
struct AttentionT {
    using Mat = MatT<T>;
    int channels = 0, heads = 1;
    GroupNormT<T> gn;
    DenseT<T> qkv, proj; // used for parameter registration; math is inline

    std::vector<Mat> xmat_cache, qkv_cache;
    std::vector<std::vector<Mat>> attn_cache; // per sample, per head: A(key, query)

    void init(ParamStoreT<T>& store, const std::string& name, int channels_, int heads_,
              int groups) {
        channels = channels_;
        heads = heads_;
        gn.init(store, name + ".norm", channels_, groups);
        qkv.init(store, name + ".qkv", channels_, 3 * channels_);
        proj.init(store, name + ".proj", channels_, channels_);
    }

    TensorT<T> forward(const TensorT<T>& x) {
        TensorT<T> xn = gn.forward(x);
        int Tn = x.spatial();
        int dh = channels / heads;
        T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        TensorT<T> y = x; // residual
        xmat_cache.assign(x.n, Mat());
        qkv_cache.assign(x.n, Mat());
        attn_cache.assign(x.n, {});
        Eigen::Map<const RowMatT<T>> Wqkv(qkv.ps->data(qkv.w_idx), qkv.out, qkv.in);
        Eigen::Map<const Mat> bqkv(qkv.ps->data(qkv.b_idx), 1, qkv.out);
        Eigen::Map<const RowMatT<T>> Wproj(proj.ps->data(proj.w_idx), proj.out, proj.in);
        Eigen::Map<const Mat> bproj(proj.ps->data(proj.b_idx), 1, proj.out);
        for (int ni = 0; ni < x.n; ++ni) {
            Mat xm(Tn, channels);
            for (int ci = 0; ci < channels; ++ci)
                xm.col(ci) = Eigen::Map<const Mat>(xn.plane(ni, ci), Tn, 1);
            Mat qkvm = xm * Wqkv.transpose();
            qkvm.rowwise() += bqkv.row(0);
            xmat_cache[ni] = std::move(xm);
            Mat out(Tn, channels);
            attn_cache[ni].resize(heads);
            for (int hh = 0; hh < heads; ++hh) {
                auto Q = qkvm.middleCols(hh * dh, dh);
                auto K = qkvm.middleCols(channels + hh * dh, dh);
                auto V = qkvm.middleCols(2 * channels + hh * dh, dh);
                // A(k, q): queries are columns, softmax runs down contiguous memory
                Mat S = (K * Q.transpose()) * scale;
                for (int q = 0; q < Tn; ++q) {
                    T* col = S.col(q).data();
                    T mx = col[0];
                    for (int r = 1; r < Tn; ++r) mx = std::max(mx, col[r]);
                    T sum = 0;
                    for (int r = 0; r < Tn; ++r) {
                        col[r] = std::exp(col[r] - mx);
                        sum += col[r];
                    }
                    T inv = T(1) / sum;
                    for (int r = 0; r < Tn; ++r) col[r] *= inv;
                }
                attn_cache[ni][hh] = S;
                out.middleCols(hh * dh, dh).noalias() = S.transpose() * V;
            }
            qkv_cache[ni] = std::move(qkvm);
            Mat o = out * Wproj.transpose();
            o.rowwise() += bproj.row(0);
            for (int ci = 0; ci < channels; ++ci) {
                T* dst = y.plane(ni, ci);
                const T* src = o.col(ci).data();
                for (int p = 0; p < Tn; ++p) dst[p] += src[p];
            }
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        int Tn = gy.spatial();
        int dh = channels / heads;
        T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        TensorT<T> gxn(gy.n, gy.c, gy.h, gy.w);
        Eigen::Map<const RowMatT<T>> Wproj(proj.ps->data(proj.w_idx), proj.out, proj.in);
        Eigen::Map<RowMatT<T>> gWproj(proj.ps->grad(proj.w_idx), proj.out, proj.in);
        Eigen::Map<Mat> gbproj(proj.ps->grad(proj.b_idx), 1, proj.out);
        Eigen::Map<const RowMatT<T>> Wqkv(qkv.ps->data(qkv.w_idx), qkv.out, qkv.in);
        Eigen::Map<RowMatT<T>> gWqkv(qkv.ps->grad(qkv.w_idx), qkv.out, qkv.in);
        Eigen::Map<Mat> gbqkv(qkv.ps->grad(qkv.b_idx), 1, qkv.out);
        for (int ni = 0; ni < gy.n; ++ni) {
            Mat go(Tn, channels);
            for (int ci = 0; ci < channels; ++ci)
                go.col(ci) = Eigen::Map<const Mat>(gy.plane(ni, ci), Tn, 1);
            const Mat& qkvm = qkv_cache[ni];
            // recompute pre-projection activations for the proj weight grad
            Mat out(Tn, channels);
            for (int hh = 0; hh < heads; ++hh)
                out.middleCols(hh * dh, dh).noalias() =
                    attn_cache[ni][hh].transpose() *
                    qkvm.middleCols(2 * channels + hh * dh, dh);
            gWproj.noalias() += go.transpose() * out;
            gbproj.row(0) += go.colwise().sum();
            Mat gout = go * Wproj;
            Mat gqkv = Mat::Zero(Tn, 3 * channels);
            for (int hh = 0; hh < heads; ++hh) {
                const Mat& A = attn_cache[ni][hh]; // A(k, q)
                auto Q = qkvm.middleCols(hh * dh, dh);
                auto K = qkvm.middleCols(channels + hh * dh, dh);
                auto V = qkvm.middleCols(2 * channels + hh * dh, dh);
                auto gO = gout.middleCols(hh * dh, dh);
                Mat gA = V * gO.transpose(); // gA(k, q)
                gqkv.middleCols(2 * channels + hh * dh, dh).noalias() = A * gO;
                // softmax per column: dS = A .* (dA - <dA, A>)
                for (int q = 0; q < Tn; ++q) {
                    const T* a = A.col(q).data();
                    T* g = gA.col(q).data();
                    T dotv = 0;
                    for (int r = 0; r < Tn; ++r) dotv += a[r] * g[r];
                    for (int r = 0; r < Tn; ++r) g[r] = a[r] * (g[r] - dotv);
                }
                gqkv.middleCols(hh * dh, dh).noalias() = (gA.transpose() * K) * scale;
                gqkv.middleCols(channels + hh * dh, dh).noalias() = (gA * Q) * scale;
            }
            gWqkv.noalias() += gqkv.transpose() * xmat_cache[ni];
            gbqkv.row(0) += gqkv.colwise().sum();
            Mat gxm = gqkv * Wqkv;
            for (int ci = 0; ci < channels; ++ci) {
                T* dst = gxn.plane(ni, ci);
                const T* src = gxm.col(ci).data();
                for (int p = 0; p < Tn; ++p) dst[p] = src[p];
            }
        }
        TensorT<T> gx = gn.backward(gxn);
        for (size_t i = 0; i < gx.size(); ++i) gx.v[i] += gy.v[i]; // residual path
        xmat_cache.clear();
        qkv_cache.clear();
        attn_cache.clear();
        return gx;
    }
};

} // namespace physgen::nn
