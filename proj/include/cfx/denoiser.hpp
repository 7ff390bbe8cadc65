// SPDX-License-Identifier: Apache-2.0
#pragma once

// Conditional noise-prediction network: a small encoder/decoder with two
// downsampling stages, sinusoidal time embedding injected at the bottleneck,
// and single-head cross-attention over the conditioning sequence. Forward
// and reverse passes are hand-written; the reverse pass can produce
// gradients for the parameters, the conditioning rows, or both.

#include <functional>
#include <optional>

#include "cfx/embedding.hpp"
#include "cfx/nn.hpp"
#include "cfx/schedule.hpp"

namespace cfx {

struct DenoiserConfig {
    int channels = 1;
    int height = 32;
    int width = 32;
    int base = 8;        // channel widths are base, 2*base, 4*base
    int cond_dim = 16;
    int attn_dim = 16;
    int time_dim = 32;
    int max_cond_len = 16;

    int f0() const { return base; }
    int f1() const { return 2 * base; }
    int f2() const { return 4 * base; }
    int groups(int ch) const { return std::min(4, ch); }
};

template <typename T>
struct DenoiserCache {
    // conv inputs are the activations listed here; cols are im2col scratch
    Tensor<T> x, h0, h1, h2, h3, h4, h5, h6, up6, h7, h8, up8, h9, h10;
    Tensor<T> g0, g1, g2, g3b, g4, g5, g6, g7, g8, g9;  // pre-silu
    Tensor<T> col0, col1, col2, col3, col4, col5, col6, col7, col8, col9, col10;
    nn::GroupNormCache<T> gn0, gn1, gn2, gn3, gn4, gn5, gn6, gn7, gn8, gn9;
    nn::AttnCache<T> attn;
    Tensor<T> tokens;       // h4 as [n, f2]
    Tensor<T> te, u1, s1;   // time mlp intermediates
    Tensor<T> cond;         // conditioning rows used
    int t = 0;
};

template <typename T>
class Denoiser {
public:
    DenoiserConfig cfg;
    nn::ParamPack<T> params;

    Denoiser() = default;
    explicit Denoiser(const DenoiserConfig& c, uint64_t seed = 0) : cfg(c) {
        auto& p = params;
        const int C = c.channels, F0 = c.f0(), F1 = c.f1(), F2 = c.f2();
        p.add("enc0.w", {F0, C * 9});
        p.add("enc0.b", {F0});
        add_gn(p, "gn0", F0);
        p.add("down1.w", {F1, F0 * 9});
        p.add("down1.b", {F1});
        add_gn(p, "gn1", F1);
        p.add("enc1.w", {F1, F1 * 9});
        p.add("enc1.b", {F1});
        add_gn(p, "gn2", F1);
        p.add("down2.w", {F2, F1 * 9});
        p.add("down2.b", {F2});
        add_gn(p, "gn3", F2);
        p.add("t1.w", {F2, c.time_dim});
        p.add("t1.b", {F2});
        p.add("t2.w", {F2, F2});
        p.add("t2.b", {F2});
        p.add("mid1.w", {F2, F2 * 9});
        p.add("mid1.b", {F2});
        add_gn(p, "gn4", F2);
        p.add("attn.wq", {c.attn_dim, F2});
        p.add("attn.wk", {c.attn_dim, c.cond_dim});
        p.add("attn.wv", {F2, c.cond_dim});
        p.add("attn.wo", {F2, F2});
        p.add("mid2.w", {F2, F2 * 9});
        p.add("mid2.b", {F2});
        add_gn(p, "gn5", F2);
        p.add("up1.w", {F1, F2 * 9});
        p.add("up1.b", {F1});
        add_gn(p, "gn6", F1);
        p.add("up2.w", {F1, F1 * 9});
        p.add("up2.b", {F1});
        add_gn(p, "gn7", F1);
        p.add("up3.w", {F0, F1 * 9});
        p.add("up3.b", {F0});
        add_gn(p, "gn8", F0);
        p.add("up4.w", {F0, F0 * 9});
        p.add("up4.b", {F0});
        add_gn(p, "gn9", F0);
        p.add("out.w", {C, F0 * 9});
        p.add("out.b", {C});
        Rng rng(seed);
        nn::init_weights(params, rng);
        // keep the residual attention branch near-silent at init
        params.at("attn.wo").fill(T(0));
    }

    int64_t num_params() const { return params.numel(); }

    /// Analytic multiply-accumulate count of one forward evaluation.
    double flops_per_call() const {
        const DenoiserConfig& c = cfg;
        const double hw = static_cast<double>(c.height) * c.width;
        const double hw2 = hw / 4, hw4 = hw / 16;
        double macs = 0;
        macs += hw * 9 * c.channels * c.f0();          // enc0
        macs += hw2 * 9 * c.f0() * c.f1();             // down1
        macs += hw2 * 9 * c.f1() * c.f1();             // enc1
        macs += hw4 * 9 * c.f1() * c.f2();             // down2
        macs += 2 * hw4 * 9 * c.f2() * c.f2();         // mid1, mid2
        macs += hw4 * c.f2() * c.attn_dim * 2;         // q, scores
        macs += hw4 * c.f2() * c.f2() * 2;             // av, wo
        macs += hw2 * 9 * c.f2() * c.f1();             // up1
        macs += hw2 * 9 * c.f1() * c.f1();             // up2
        macs += hw * 9 * c.f1() * c.f0();              // up3
        macs += hw * 9 * c.f0() * c.f0();              // up4
        macs += hw * 9 * c.f0() * c.channels;          // out
        return 2.0 * macs;
    }

    Tensor<T> forward(const Tensor<T>& x, int t, const CondSeq<T>& cond,
                      DenoiserCache<T>* cache) const {
        const DenoiserConfig& c = cfg;
        if (x.shape != std::vector<int>{c.channels, c.height, c.width})
            throw std::invalid_argument("denoiser input shape mismatch");
        if (cond.length() < 1 || cond.length() > c.max_cond_len)
            throw std::invalid_argument("conditioning length out of range");
        if (cond.cond_dim() != c.cond_dim)
            throw std::invalid_argument("conditioning dim mismatch");
        DenoiserCache<T> local;
        DenoiserCache<T>& cc = cache ? *cache : local;
        cc.t = t;
        cc.x = x;
        cc.cond = cond.rows;
        const int H = c.height, W = c.width, H2 = H / 2, W2 = W / 2, H4 = H / 4, W4 = W / 4;
        const int F0 = c.f0(), F1 = c.f1(), F2 = c.f2();
        const auto& p = params;

        auto conv = [&](const Tensor<T>& in, const char* name, int co, int stride, Tensor<T>& col) {
            Tensor<T> out({co, nn::conv_out(in.shape[1], stride), nn::conv_out(in.shape[2], stride)});
            nn::conv3x3_fwd(in.ptr(), in.shape[0], in.shape[1], in.shape[2],
                            p.at(std::string(name) + ".w").ptr(),
                            p.at(std::string(name) + ".b").ptr(), co, stride, out.ptr(), &col);
            return out;
        };
        auto gn = [&](const Tensor<T>& in, const char* name, nn::GroupNormCache<T>& gc) {
            Tensor<T> out(in.shape);
            nn::groupnorm_fwd(in.ptr(), in.shape[0], in.shape[1], in.shape[2],
                              c.groups(in.shape[0]), p.at(std::string(name) + ".gamma").ptr(),
                              p.at(std::string(name) + ".beta").ptr(), out.ptr(), &gc);
            return out;
        };
        auto silu = [&](const Tensor<T>& in) {
            Tensor<T> out(in.shape);
            nn::silu_fwd(in.ptr(), in.numel(), out.ptr());
            return out;
        };

        Tensor<T> a = conv(x, "enc0", F0, 1, cc.col0);
        cc.g0 = gn(a, "gn0", cc.gn0);
        cc.h0 = silu(cc.g0);
        a = conv(cc.h0, "down1", F1, 2, cc.col1);
        cc.g1 = gn(a, "gn1", cc.gn1);
        cc.h1 = silu(cc.g1);
        a = conv(cc.h1, "enc1", F1, 1, cc.col2);
        cc.g2 = gn(a, "gn2", cc.gn2);
        cc.h2 = silu(cc.g2);
        a = conv(cc.h2, "down2", F2, 2, cc.col3);
        Tensor<T> g3 = gn(a, "gn3", cc.gn3);

        // time conditioning added as a per-channel bias at the bottleneck
        cc.te = nn::time_embedding<T>(t, c.time_dim);
        cc.u1 = Tensor<T>({F2});
        nn::linear_fwd(cc.te.ptr(), 1, c.time_dim, p.at("t1.w").ptr(), p.at("t1.b").ptr(), F2,
                       cc.u1.ptr());
        cc.s1 = silu(cc.u1);
        Tensor<T> u2({F2});
        nn::linear_fwd(cc.s1.ptr(), 1, F2, p.at("t2.w").ptr(), p.at("t2.b").ptr(), F2, u2.ptr());
        cc.g3b = g3;
        for (int ch = 0; ch < F2; ++ch)
            for (int i = 0; i < H4 * W4; ++i) cc.g3b[static_cast<int64_t>(ch) * H4 * W4 + i] += u2[ch];
        cc.h3 = silu(cc.g3b);

        a = conv(cc.h3, "mid1", F2, 1, cc.col4);
        cc.g4 = gn(a, "gn4", cc.gn4);
        cc.h4 = silu(cc.g4);

        // cross-attention over the conditioning sequence, residual add
        const int n = H4 * W4;
        cc.tokens = Tensor<T>({n, F2});
        for (int ch = 0; ch < F2; ++ch)
            for (int i = 0; i < n; ++i) cc.tokens.at2(i, ch) = cc.h4[static_cast<int64_t>(ch) * n + i];
        Tensor<T> attn_out({n, F2});
        nn::attention_fwd(cc.tokens.ptr(), n, F2, cond.rows.ptr(), cond.length(), c.cond_dim,
                          p.at("attn.wq").ptr(), p.at("attn.wk").ptr(), p.at("attn.wv").ptr(),
                          p.at("attn.wo").ptr(), c.attn_dim, attn_out.ptr(), &cc.attn);
        cc.h5 = cc.h4;
        for (int ch = 0; ch < F2; ++ch)
            for (int i = 0; i < n; ++i) cc.h5[static_cast<int64_t>(ch) * n + i] += attn_out.at2(i, ch);

        a = conv(cc.h5, "mid2", F2, 1, cc.col5);
        cc.g5 = gn(a, "gn5", cc.gn5);
        cc.h6 = silu(cc.g5);

        cc.up6 = Tensor<T>({F2, H2, W2});
        nn::upsample2_fwd(cc.h6.ptr(), F2, H4, W4, cc.up6.ptr());
        a = conv(cc.up6, "up1", F1, 1, cc.col6);
        cc.g6 = gn(a, "gn6", cc.gn6);
        cc.h7 = silu(cc.g6);
        cc.h7 += cc.h2;  // skip
        a = conv(cc.h7, "up2", F1, 1, cc.col7);
        cc.g7 = gn(a, "gn7", cc.gn7);
        cc.h8 = silu(cc.g7);

        cc.up8 = Tensor<T>({F1, H, W});
        nn::upsample2_fwd(cc.h8.ptr(), F1, H2, W2, cc.up8.ptr());
        a = conv(cc.up8, "up3", F0, 1, cc.col8);
        cc.g8 = gn(a, "gn8", cc.gn8);
        cc.h9 = silu(cc.g8);
        cc.h9 += cc.h0;  // skip
        a = conv(cc.h9, "up4", F0, 1, cc.col9);
        cc.g9 = gn(a, "gn9", cc.gn9);
        cc.h10 = silu(cc.g9);

        Tensor<T> eps = conv(cc.h10, "out", c.channels, 1, cc.col10);
        return eps;
    }

    /// Backprop from d(eps). Accumulates into pgrad (if non-null) and dcond
    /// (if non-null, shape [len, cond_dim]).
    void backward(const DenoiserCache<T>& cc, const Tensor<T>& deps, nn::ParamPack<T>* pgrad,
                  Tensor<T>* dcond) const {
        const DenoiserConfig& c = cfg;
        const int H = c.height, W = c.width, H2 = H / 2, W2 = W / 2, H4 = H / 4, W4 = W / 4;
        const int F0 = c.f0(), F1 = c.f1(), F2 = c.f2();
        const auto& p = params;
        auto gp = [&](const std::string& name) -> T* {
            return pgrad ? pgrad->at(name).ptr() : nullptr;
        };
        auto conv_bwd = [&](const Tensor<T>& col, const char* name, const Tensor<T>& dy,
                            const Tensor<T>& in, Tensor<T>* dx) {
            std::string nm(name);
            nn::conv3x3_bwd(col, p.at(nm + ".w").ptr(), dy.ptr(), in.shape[0], in.shape[1],
                            in.shape[2], dy.shape[0], in.shape[1] / dy.shape[1],
                            dx ? dx->ptr() : nullptr, gp(nm + ".w"), gp(nm + ".b"));
        };
        auto gn_bwd = [&](const nn::GroupNormCache<T>& gc, const char* name, const Tensor<T>& dy,
                          Tensor<T>& dx) {
            std::string nm(name);
            nn::groupnorm_bwd(gc, dy.ptr(), dy.shape[0], dy.shape[1], dy.shape[2],
                              c.groups(dy.shape[0]), p.at(nm + ".gamma").ptr(), dx.ptr(),
                              gp(nm + ".gamma"), gp(nm + ".beta"));
        };
        auto silu_bwd = [&](const Tensor<T>& pre, const Tensor<T>& dy, Tensor<T>& dx) {
            nn::silu_bwd(pre.ptr(), dy.ptr(), pre.numel(), dx.ptr());
        };

        Tensor<T> dh10(cc.h10.shape);
        conv_bwd(cc.col10, "out", deps, cc.h10, &dh10);
        Tensor<T> dg9(dh10.shape);
        silu_bwd(cc.g9, dh10, dg9);
        Tensor<T> da9(dg9.shape);
        gn_bwd(cc.gn9, "gn9", dg9, da9);
        Tensor<T> dh9(cc.h9.shape);
        conv_bwd(cc.col9, "up4", da9, cc.h9, &dh9);
        Tensor<T> dh0 = dh9;  // skip into h0 path

        Tensor<T> dg8(dh9.shape);
        silu_bwd(cc.g8, dh9, dg8);
        Tensor<T> da8(dg8.shape);
        gn_bwd(cc.gn8, "gn8", dg8, da8);
        Tensor<T> dup8(cc.up8.shape);
        conv_bwd(cc.col8, "up3", da8, cc.up8, &dup8);
        Tensor<T> dh8({F1, H2, W2});
        nn::upsample2_bwd(dup8.ptr(), F1, H2, W2, dh8.ptr());

        Tensor<T> dg7(dh8.shape);
        silu_bwd(cc.g7, dh8, dg7);
        Tensor<T> da7(dg7.shape);
        gn_bwd(cc.gn7, "gn7", dg7, da7);
        Tensor<T> dh7(cc.h7.shape);
        conv_bwd(cc.col7, "up2", da7, cc.h7, &dh7);
        Tensor<T> dh2 = dh7;  // skip into h2 path

        Tensor<T> dg6(dh7.shape);
        silu_bwd(cc.g6, dh7, dg6);
        Tensor<T> da6(dg6.shape);
        gn_bwd(cc.gn6, "gn6", dg6, da6);
        Tensor<T> dup6(cc.up6.shape);
        conv_bwd(cc.col6, "up1", da6, cc.up6, &dup6);
        Tensor<T> dh6({F2, H4, W4});
        nn::upsample2_bwd(dup6.ptr(), F2, H4, W4, dh6.ptr());

        Tensor<T> dg5(dh6.shape);
        silu_bwd(cc.g5, dh6, dg5);
        Tensor<T> da5(dg5.shape);
        gn_bwd(cc.gn5, "gn5", dg5, da5);
        Tensor<T> dh5(cc.h5.shape);
        conv_bwd(cc.col5, "mid2", da5, cc.h5, &dh5);

        // attention residual: dh5 flows straight through and via the branch
        const int n = H4 * W4;
        Tensor<T> dout_tokens({n, F2});
        for (int ch = 0; ch < F2; ++ch)
            for (int i = 0; i < n; ++i)
                dout_tokens.at2(i, ch) = dh5[static_cast<int64_t>(ch) * n + i];
        Tensor<T> dtokens({n, F2});
        nn::attention_bwd(cc.attn, cc.tokens.ptr(), cc.cond.ptr(), p.at("attn.wq").ptr(),
                          p.at("attn.wk").ptr(), p.at("attn.wv").ptr(), p.at("attn.wo").ptr(),
                          dout_tokens.ptr(), dtokens.ptr(), dcond ? dcond->ptr() : nullptr,
                          gp("attn.wq"), gp("attn.wk"), gp("attn.wv"), gp("attn.wo"));
        Tensor<T> dh4 = dh5;
        for (int ch = 0; ch < F2; ++ch)
            for (int i = 0; i < n; ++i) dh4[static_cast<int64_t>(ch) * n + i] += dtokens.at2(i, ch);

        Tensor<T> dg4(dh4.shape);
        silu_bwd(cc.g4, dh4, dg4);
        Tensor<T> da4(dg4.shape);
        gn_bwd(cc.gn4, "gn4", dg4, da4);
        Tensor<T> dh3(cc.h3.shape);
        conv_bwd(cc.col4, "mid1", da4, cc.h3, &dh3);

        Tensor<T> dg3b(dh3.shape);
        silu_bwd(cc.g3b, dh3, dg3b);
        // time-bias gradient: per-channel sum
        Tensor<T> du2({F2});
        for (int ch = 0; ch < F2; ++ch) {
            T s = 0;
            for (int i = 0; i < H4 * W4; ++i) s += dg3b[static_cast<int64_t>(ch) * H4 * W4 + i];
            du2[ch] = s;
        }
        if (pgrad) {
            Tensor<T> ds1({F2}), du1({F2});
            nn::linear_bwd(cc.s1.ptr(), p.at("t2.w").ptr(), du2.ptr(), 1, F2, F2, ds1.ptr(),
                           gp("t2.w"), gp("t2.b"));
            silu_bwd(cc.u1, ds1, du1);
            nn::linear_bwd(cc.te.ptr(), p.at("t1.w").ptr(), du1.ptr(), 1, c.time_dim, F2,
                           static_cast<T*>(nullptr), gp("t1.w"), gp("t1.b"));
        }
        Tensor<T> da3(dg3b.shape);
        gn_bwd(cc.gn3, "gn3", dg3b, da3);
        {
            Tensor<T> tmp(cc.h2.shape);
            conv_bwd(cc.col3, "down2", da3, cc.h2, &tmp);
            dh2 += tmp;
        }

        Tensor<T> dg2(dh2.shape);
        silu_bwd(cc.g2, dh2, dg2);
        Tensor<T> da2(dg2.shape);
        gn_bwd(cc.gn2, "gn2", dg2, da2);
        Tensor<T> dh1(cc.h1.shape);
        conv_bwd(cc.col2, "enc1", da2, cc.h1, &dh1);

        Tensor<T> dg1(dh1.shape);
        silu_bwd(cc.g1, dh1, dg1);
        Tensor<T> da1(dg1.shape);
        gn_bwd(cc.gn1, "gn1", dg1, da1);
        {
            Tensor<T> tmp(cc.h0.shape);
            conv_bwd(cc.col1, "down1", da1, cc.h0, &tmp);
            dh0 += tmp;
        }

        Tensor<T> dg0(dh0.shape);
        silu_bwd(cc.g0, dh0, dg0);
        Tensor<T> da0(dg0.shape);
        gn_bwd(cc.gn0, "gn0", dg0, da0);
        conv_bwd(cc.col0, "enc0", da0, cc.x, nullptr);
    }

    template <typename U>
    Denoiser<U> cast() const {
        Denoiser<U> d;
        d.cfg = cfg;
        d.params = params.template cast<U>();
        return d;
    }

private:
    static void add_gn(nn::ParamPack<T>& p, const std::string& name, int ch) {
        p.add(name + ".gamma", {ch});
        p.add(name + ".beta", {ch});
    }
};

/// eps_theta(x_t, t, cond); pure given frozen parameters.
template <typename T>
Tensor<T> predict_noise(const Denoiser<T>& denoiser, const Tensor<T>& x_t, int t,
                        const CondSeq<T>& cond) {
    return denoiser.forward(x_t, t, cond, nullptr);
}

/// || eps - eps_theta(forward_noise(x0, t, eps), t, cond) ||^2, summed.
template <typename T>
double training_loss(const Tensor<T>& x0, const Tensor<T>& eps, int t, const CondSeq<T>& cond,
                     const Denoiser<T>& denoiser, const NoiseSchedule& schedule) {
    Tensor<T> x_t = forward_noise(x0, t, eps, schedule);
    Tensor<T> pred = predict_noise(denoiser, x_t, t, cond);
    double loss = 0;
    for (int64_t i = 0; i < eps.numel(); ++i) {
        double d = static_cast<double>(eps[i]) - static_cast<double>(pred[i]);
        loss += d * d;
    }
    return loss;
}

} // namespace cfx
