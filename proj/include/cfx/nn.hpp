// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode layer library: linear, 3x3 conv (im2col + GEMM),
// group norm, SiLU, softmax, single-head cross-attention, and the two
// optimizers used by the training loops. Every *_bwd accumulates into the
// parameter-gradient buffers and writes (not accumulates) input gradients
// unless stated otherwise.

#include <Eigen/Core>

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "cfx/tensor.hpp"

namespace cfx::nn {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// ---------------------------------------------------------------------------
// Parameter packs

template <typename T>
struct ParamPack {
    std::vector<std::string> names;
    std::vector<Tensor<T>> tensors;

    Tensor<T>& add(const std::string& name, std::vector<int> shape) {
        names.push_back(name);
        tensors.emplace_back(std::move(shape));
        return tensors.back();
    }
    int index(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return static_cast<int>(i);
        throw std::out_of_range("no such parameter: " + name);
    }
    Tensor<T>& at(const std::string& name) { return tensors[static_cast<size_t>(index(name))]; }
    const Tensor<T>& at(const std::string& name) const {
        return tensors[static_cast<size_t>(index(name))];
    }

    ParamPack<T> zeros_like() const {
        ParamPack<T> g;
        g.names = names;
        for (const auto& t : tensors) g.tensors.emplace_back(t.shape);
        return g;
    }
    void zero() {
        for (auto& t : tensors) t.fill(T(0));
    }
    void axpy(T a, const ParamPack<T>& o) {
        for (size_t i = 0; i < tensors.size(); ++i)
            for (int64_t j = 0; j < tensors[i].numel(); ++j) tensors[i][j] += a * o.tensors[i][j];
    }
    int64_t numel() const {
        int64_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }
    template <typename U>
    ParamPack<U> cast() const {
        ParamPack<U> out;
        out.names = names;
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
        return out;
    }
};

// Kaiming-style fan-in init for conv/linear weights.
template <typename T>
void init_weights(ParamPack<T>& p, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (size_t i = 0; i < p.tensors.size(); ++i) {
        Tensor<T>& t = p.tensors[i];
        const std::string& name = p.names[i];
        if (name.ends_with(".b") || name.ends_with(".beta")) {
            t.fill(T(0));
        } else if (name.ends_with(".gamma")) {
            t.fill(T(1));
        } else {
            int64_t fan_in = t.numel() / t.shape[0];
            double s = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (auto& v : t.data) v = static_cast<T>(nd(rng) * s);
        }
    }
}

// ---------------------------------------------------------------------------
// GEMM helpers (row-major)

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    CMatMap<T> A(a, m, k), B(b, k, n);
    MatMap<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    CMatMap<T> A(a, k, m), B(b, k, n);
    MatMap<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    CMatMap<T> A(a, m, k), B(b, n, k);
    MatMap<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

// ---------------------------------------------------------------------------
// Linear: x [n, din], w [dout, din], b [dout] -> y [n, dout]

template <typename T>
void linear_fwd(const T* x, int n, int din, const T* w, const T* b, int dout, T* y) {
    gemm_nt(x, w, y, n, din, dout, false);
    if (b)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dout; ++j) y[i * dout + j] += b[j];
}

// dx written; dw/db accumulated (either may be null)
template <typename T>
void linear_bwd(const T* x, const T* w, const T* dy, int n, int din, int dout, T* dx, T* dw,
                T* db) {
    if (dx) gemm(dy, w, dx, n, dout, din, false);
    if (dw) gemm_tn(dy, x, dw, dout, n, din, true);
    if (db)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dout; ++j) db[j] += dy[i * dout + j];
}

// ---------------------------------------------------------------------------
// 3x3 conv, padding 1, stride 1 or 2. Weights [co, ci*9], bias [co].

inline int conv_out(int n, int stride) { return (n + stride - 1) / stride; }

// col layout: [ci*9, ho*wo]
template <typename T>
void im2col3x3(const T* x, int ci, int h, int w, int stride, T* col) {
    const int ho = conv_out(h, stride), wo = conv_out(w, stride);
    for (int c = 0; c < ci; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = col + static_cast<int64_t>((c * 9 + ky * 3 + kx)) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - 1;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - 1;
                        dst[oy * wo + ox] =
                            (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                ? x[(static_cast<int64_t>(c) * h + iy) * w + ix]
                                : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im3x3(const T* col, int ci, int h, int w, int stride, T* x) {
    const int ho = conv_out(h, stride), wo = conv_out(w, stride);
    std::fill(x, x + static_cast<int64_t>(ci) * h * w, T(0));
    for (int c = 0; c < ci; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = col + static_cast<int64_t>((c * 9 + ky * 3 + kx)) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - 1;
                        if (ix < 0 || ix >= w) continue;
                        x[(static_cast<int64_t>(c) * h + iy) * w + ix] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

// y [co, ho, wo]; col scratch is returned via *col for reuse in backward.
template <typename T>
void conv3x3_fwd(const T* x, int ci, int h, int w, const T* wgt, const T* b, int co, int stride,
                 T* y, Tensor<T>* col) {
    const int ho = conv_out(h, stride), wo = conv_out(w, stride);
    col->shape = {ci * 9, ho * wo};
    col->data.resize(static_cast<size_t>(ci) * 9 * ho * wo);
    im2col3x3(x, ci, h, w, stride, col->ptr());
    gemm(wgt, col->ptr(), y, co, ci * 9, ho * wo, false);
    if (b)
        for (int c = 0; c < co; ++c)
            for (int i = 0; i < ho * wo; ++i) y[static_cast<int64_t>(c) * ho * wo + i] += b[c];
}

// dx written unless null; dw/db accumulated unless null.
template <typename T>
void conv3x3_bwd(const Tensor<T>& col, const T* wgt, const T* dy, int ci, int h, int w, int co,
                 int stride, T* dx, T* dw, T* db) {
    const int ho = conv_out(h, stride), wo = conv_out(w, stride);
    if (dw) gemm_nt(dy, col.ptr(), dw, co, ho * wo, ci * 9, true);
    if (db)
        for (int c = 0; c < co; ++c)
            for (int i = 0; i < ho * wo; ++i) db[c] += dy[static_cast<int64_t>(c) * ho * wo + i];
    if (dx) {
        Tensor<T> dcol({ci * 9, ho * wo});
        gemm_tn(wgt, dy, dcol.ptr(), ci * 9, co, ho * wo, false);
        col2im3x3(dcol.ptr(), ci, h, w, stride, dx);
    }
}

// ---------------------------------------------------------------------------
// SiLU

template <typename T>
void silu_fwd(const T* x, int64_t n, T* y) {
    for (int64_t i = 0; i < n; ++i) {
        T s = T(1) / (T(1) + std::exp(-x[i]));
        y[i] = x[i] * s;
    }
}

template <typename T>
void silu_bwd(const T* x, const T* dy, int64_t n, T* dx) {
    for (int64_t i = 0; i < n; ++i) {
        T s = T(1) / (T(1) + std::exp(-x[i]));
        dx[i] = dy[i] * (s + x[i] * s * (T(1) - s));
    }
}

// ---------------------------------------------------------------------------
// GroupNorm over (C,H,W), groups dividing C; affine per channel.

template <typename T>
struct GroupNormCache {
    Tensor<T> xhat;             // normalized input
    std::vector<T> inv_std;     // per group
};

template <typename T>
void groupnorm_fwd(const T* x, int c, int h, int w, int groups, const T* gamma, const T* beta,
                   T* y, GroupNormCache<T>* cache) {
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int cpg = c / groups;
    const T eps = T(1e-5);
    cache->xhat = Tensor<T>({c, h, w});
    cache->inv_std.assign(static_cast<size_t>(groups), T(0));
    for (int g = 0; g < groups; ++g) {
        const int64_t n = cpg * hw;
        const T* xg = x + static_cast<int64_t>(g) * cpg * hw;
        T mean = 0;
        for (int64_t i = 0; i < n; ++i) mean += xg[i];
        mean /= static_cast<T>(n);
        T var = 0;
        for (int64_t i = 0; i < n; ++i) {
            T d = xg[i] - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        T istd = T(1) / std::sqrt(var + eps);
        cache->inv_std[static_cast<size_t>(g)] = istd;
        T* xh = cache->xhat.ptr() + static_cast<int64_t>(g) * cpg * hw;
        for (int64_t i = 0; i < n; ++i) xh[i] = (xg[i] - mean) * istd;
        for (int j = 0; j < cpg; ++j) {
            int ch = g * cpg + j;
            T* yo = y + static_cast<int64_t>(ch) * hw;
            const T* xhc = xh + static_cast<int64_t>(j) * hw;
            for (int64_t i = 0; i < hw; ++i) yo[i] = gamma[ch] * xhc[i] + beta[ch];
        }
    }
}

template <typename T>
void groupnorm_bwd(const GroupNormCache<T>& cache, const T* dy, int c, int h, int w, int groups,
                   const T* gamma, T* dx, T* dgamma, T* dbeta) {
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int cpg = c / groups;
    for (int g = 0; g < groups; ++g) {
        const int64_t n = cpg * hw;
        const T* xh = cache.xhat.ptr() + static_cast<int64_t>(g) * cpg * hw;
        T istd = cache.inv_std[static_cast<size_t>(g)];
        // dxhat = dy * gamma (per channel); reduce the two group means
        T sum_dxh = 0, sum_dxh_xh = 0;
        for (int j = 0; j < cpg; ++j) {
            int ch = g * cpg + j;
            const T* dyc = dy + static_cast<int64_t>(ch) * hw;
            const T* xhc = xh + static_cast<int64_t>(j) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                T dxh = dyc[i] * gamma[ch];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xhc[i];
                if (dgamma) dgamma[ch] += dyc[i] * xhc[i];
                if (dbeta) dbeta[ch] += dyc[i];
            }
        }
        T m1 = sum_dxh / static_cast<T>(n);
        T m2 = sum_dxh_xh / static_cast<T>(n);
        if (dx) {
            for (int j = 0; j < cpg; ++j) {
                int ch = g * cpg + j;
                const T* dyc = dy + static_cast<int64_t>(ch) * hw;
                const T* xhc = xh + static_cast<int64_t>(j) * hw;
                T* dxc = dx + static_cast<int64_t>(ch) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    T dxh = dyc[i] * gamma[ch];
                    dxc[i] = istd * (dxh - m1 - xhc[i] * m2);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Row-wise softmax

template <typename T>
void softmax_rows(const T* x, int n, int d, T* y) {
    for (int i = 0; i < n; ++i) {
        const T* xi = x + static_cast<int64_t>(i) * d;
        T* yi = y + static_cast<int64_t>(i) * d;
        T m = xi[0];
        for (int j = 1; j < d; ++j) m = std::max(m, xi[j]);
        T z = 0;
        for (int j = 0; j < d; ++j) {
            yi[j] = std::exp(xi[j] - m);
            z += yi[j];
        }
        for (int j = 0; j < d; ++j) yi[j] /= z;
    }
}

// dx written; y is the softmax output
template <typename T>
void softmax_rows_bwd(const T* y, const T* dy, int n, int d, T* dx) {
    for (int i = 0; i < n; ++i) {
        const T* yi = y + static_cast<int64_t>(i) * d;
        const T* dyi = dy + static_cast<int64_t>(i) * d;
        T* dxi = dx + static_cast<int64_t>(i) * d;
        T dot = 0;
        for (int j = 0; j < d; ++j) dot += yi[j] * dyi[j];
        for (int j = 0; j < d; ++j) dxi[j] = yi[j] * (dyi[j] - dot);
    }
}

// ---------------------------------------------------------------------------
// Single-head cross-attention. Queries from n image tokens [n, dm], keys and
// values from an l-token conditioning sequence [l, dc].
//   q = X Wq^T   [n, da]      k = E Wk^T  [l, da]     v = E Wv^T  [l, dm]
//   a = softmax(q k^T / sqrt(da))          o = (a v) Wo^T          out = o
// Parameter shapes: Wq [da, dm], Wk [da, dc], Wv [dm, dc], Wo [dm, dm].

template <typename T>
struct AttnCache {
    Tensor<T> q, k, v, attn, av;
    int n = 0, l = 0, dm = 0, dc = 0, da = 0;
};

template <typename T>
void attention_fwd(const T* x, int n, int dm, const T* e, int l, int dc, const T* wq, const T* wk,
                   const T* wv, const T* wo, int da, T* out, AttnCache<T>* c) {
    c->n = n; c->l = l; c->dm = dm; c->dc = dc; c->da = da;
    c->q = Tensor<T>({n, da});
    c->k = Tensor<T>({l, da});
    c->v = Tensor<T>({l, dm});
    c->attn = Tensor<T>({n, l});
    c->av = Tensor<T>({n, dm});
    linear_fwd(x, n, dm, wq, static_cast<const T*>(nullptr), da, c->q.ptr());
    linear_fwd(e, l, dc, wk, static_cast<const T*>(nullptr), da, c->k.ptr());
    linear_fwd(e, l, dc, wv, static_cast<const T*>(nullptr), dm, c->v.ptr());
    Tensor<T> scores({n, l});
    gemm_nt(c->q.ptr(), c->k.ptr(), scores.ptr(), n, da, l, false);
    const T scale = T(1) / std::sqrt(static_cast<T>(da));
    for (auto& s : scores.data) s *= scale;
    softmax_rows(scores.ptr(), n, l, c->attn.ptr());
    gemm(c->attn.ptr(), c->v.ptr(), c->av.ptr(), n, l, dm, false);
    linear_fwd(c->av.ptr(), n, dm, wo, static_cast<const T*>(nullptr), dm, out);
}

// dx and de are accumulated (attention sits on a residual branch); parameter
// grads accumulated; any output pointer may be null.
template <typename T>
void attention_bwd(const AttnCache<T>& c, const T* x, const T* e, const T* wq, const T* wk,
                   const T* wv, const T* wo, const T* dout, T* dx, T* de, T* dwq, T* dwk, T* dwv,
                   T* dwo) {
    const int n = c.n, l = c.l, dm = c.dm, dc = c.dc, da = c.da;
    Tensor<T> dav({n, dm});
    linear_bwd(c.av.ptr(), wo, dout, n, dm, dm, dav.ptr(), dwo, static_cast<T*>(nullptr));
    Tensor<T> dattn({n, l}), dv({l, dm});
    gemm_nt(dav.ptr(), c.v.ptr(), dattn.ptr(), n, dm, l, false);
    gemm_tn(c.attn.ptr(), dav.ptr(), dv.ptr(), l, n, dm, false);
    Tensor<T> dscores({n, l});
    softmax_rows_bwd(c.attn.ptr(), dattn.ptr(), n, l, dscores.ptr());
    const T scale = T(1) / std::sqrt(static_cast<T>(da));
    for (auto& s : dscores.data) s *= scale;
    Tensor<T> dq({n, da}), dk({l, da});
    gemm(dscores.ptr(), c.k.ptr(), dq.ptr(), n, l, da, false);
    gemm_tn(dscores.ptr(), c.q.ptr(), dk.ptr(), l, n, da, false);
    // project back through q/k/v linears
    if (dx) {
        Tensor<T> tmp({n, dm});
        linear_bwd(x, wq, dq.ptr(), n, dm, da, tmp.ptr(), dwq, static_cast<T*>(nullptr));
        for (int64_t i = 0; i < tmp.numel(); ++i) dx[i] += tmp[i];
    } else if (dwq) {
        linear_bwd(x, wq, dq.ptr(), n, dm, da, static_cast<T*>(nullptr), dwq,
                   static_cast<T*>(nullptr));
    }
    Tensor<T> det({l, dc});
    linear_bwd(e, wk, dk.ptr(), l, dc, da, det.ptr(), dwk, static_cast<T*>(nullptr));
    if (de)
        for (int64_t i = 0; i < det.numel(); ++i) de[i] += det[i];
    linear_bwd(e, wv, dv.ptr(), l, dc, dm, det.ptr(), dwv, static_cast<T*>(nullptr));
    if (de)
        for (int64_t i = 0; i < det.numel(); ++i) de[i] += det[i];
}

// ---------------------------------------------------------------------------
// Nearest-neighbour 2x upsample

template <typename T>
void upsample2_fwd(const T* x, int c, int h, int w, T* y) {
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                T v = x[(static_cast<int64_t>(ch) * h + i) * w + j];
                int64_t base = (static_cast<int64_t>(ch) * 2 * h + 2 * i) * 2 * w + 2 * j;
                y[base] = v;
                y[base + 1] = v;
                y[base + 2 * w] = v;
                y[base + 2 * w + 1] = v;
            }
}

template <typename T>
void upsample2_bwd(const T* dy, int c, int h, int w, T* dx) {
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                int64_t base = (static_cast<int64_t>(ch) * 2 * h + 2 * i) * 2 * w + 2 * j;
                dx[(static_cast<int64_t>(ch) * h + i) * w + j] =
                    dy[base] + dy[base + 1] + dy[base + 2 * w] + dy[base + 2 * w + 1];
            }
}

// ---------------------------------------------------------------------------
// Sinusoidal timestep embedding (no gradient path through t).

template <typename T>
Tensor<T> time_embedding(int t, int dim) {
    Tensor<T> e({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        e[i] = static_cast<T>(std::sin(t * freq));
        e[half + i] = static_cast<T>(std::cos(t * freq));
    }
    return e;
}

// ---------------------------------------------------------------------------
// Optimizers

template <typename T>
struct Adam {
    T lr = T(1e-3), beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8), weight_decay = T(0);
    ParamPack<T> m, v;
    int64_t step_count = 0;

    void init(const ParamPack<T>& params) {
        m = params.zeros_like();
        v = params.zeros_like();
        step_count = 0;
    }
    void step(ParamPack<T>& params, const ParamPack<T>& grads) {
        ++step_count;
        T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_count));
        T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_count));
        for (size_t i = 0; i < params.tensors.size(); ++i) {
            auto& p = params.tensors[i];
            const auto& g = grads.tensors[i];
            auto& mi = m.tensors[i];
            auto& vi = v.tensors[i];
            for (int64_t j = 0; j < p.numel(); ++j) {
                T gj = g[j] + weight_decay * p[j];
                mi[j] = beta1 * mi[j] + (T(1) - beta1) * gj;
                vi[j] = beta2 * vi[j] + (T(1) - beta2) * gj * gj;
                p[j] -= lr * (mi[j] / bc1) / (std::sqrt(vi[j] / bc2) + eps);
            }
        }
    }
};

// Plain SGD with decoupled weight decay, used for token-embedding training.
template <typename T>
struct Sgd {
    T lr = T(0.01), weight_decay = T(0);
    void step(T* p, const T* g, int64_t n) const {
        for (int64_t j = 0; j < n; ++j) p[j] -= lr * (g[j] + weight_decay * p[j]);
    }
};

} // namespace cfx::nn
