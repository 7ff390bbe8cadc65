// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small convolutional networks used around the pipeline: the target
// classifier, the attribute oracle (whose penultimate features also serve as
// the FID encoder), the identity embedder, and a reconstruction autoencoder
// used as the self-supervised feature extractor.

#include "cfx/nn.hpp"

namespace cfx {

struct ConvNetConfig {
    int in_ch = 1;
    int size = 32;   // square input, divisible by 8
    int w1 = 8, w2 = 16, w3 = 32;
    int fc_dim = 32;
    int out_dim = 2;
};

template <typename T>
struct ConvNetCache {
    Tensor<T> x, h1, h2, h3, flat, feat_pre, feat;
    Tensor<T> g1, g2, g3;
    Tensor<T> col1, col2, col3;
    nn::GroupNormCache<T> gn1, gn2, gn3;
};

template <typename T>
class ConvNet {
public:
    ConvNetConfig cfg;
    nn::ParamPack<T> params;

    ConvNet() = default;
    explicit ConvNet(const ConvNetConfig& c, uint64_t seed = 0) : cfg(c) {
        auto& p = params;
        p.add("c1.w", {c.w1, c.in_ch * 9});
        p.add("c1.b", {c.w1});
        p.add("gn1.gamma", {c.w1});
        p.add("gn1.beta", {c.w1});
        p.add("c2.w", {c.w2, c.w1 * 9});
        p.add("c2.b", {c.w2});
        p.add("gn2.gamma", {c.w2});
        p.add("gn2.beta", {c.w2});
        p.add("c3.w", {c.w3, c.w2 * 9});
        p.add("c3.b", {c.w3});
        p.add("gn3.gamma", {c.w3});
        p.add("gn3.beta", {c.w3});
        p.add("fc.w", {c.fc_dim, c.w3 * (c.size / 8) * (c.size / 8)});
        p.add("fc.b", {c.fc_dim});
        p.add("head.w", {c.out_dim, c.fc_dim});
        p.add("head.b", {c.out_dim});
        Rng rng(seed);
        nn::init_weights(params, rng);
    }

    /// Logits; `feat_out`, when given, receives the penultimate activation.
    Tensor<T> forward(const Tensor<T>& x, ConvNetCache<T>* cache = nullptr,
                      Tensor<T>* feat_out = nullptr) const {
        const auto& c = cfg;
        if (x.shape != std::vector<int>{c.in_ch, c.size, c.size})
            throw std::invalid_argument("convnet input shape mismatch");
        ConvNetCache<T> local;
        ConvNetCache<T>& cc = cache ? *cache : local;
        cc.x = x;
        const auto& p = params;
        auto block = [&](const Tensor<T>& in, const char* conv, const char* gnn, int co,
                         Tensor<T>& col, nn::GroupNormCache<T>& gc, Tensor<T>& pre) {
            Tensor<T> a({co, in.shape[1] / 2, in.shape[2] / 2});
            nn::conv3x3_fwd(in.ptr(), in.shape[0], in.shape[1], in.shape[2],
                            p.at(std::string(conv) + ".w").ptr(),
                            p.at(std::string(conv) + ".b").ptr(), co, 2, a.ptr(), &col);
            pre = Tensor<T>(a.shape);
            nn::groupnorm_fwd(a.ptr(), co, a.shape[1], a.shape[2], std::min(4, co),
                              p.at(std::string(gnn) + ".gamma").ptr(),
                              p.at(std::string(gnn) + ".beta").ptr(), pre.ptr(), &gc);
            Tensor<T> out(a.shape);
            nn::silu_fwd(pre.ptr(), pre.numel(), out.ptr());
            return out;
        };
        cc.h1 = block(x, "c1", "gn1", c.w1, cc.col1, cc.gn1, cc.g1);
        cc.h2 = block(cc.h1, "c2", "gn2", c.w2, cc.col2, cc.gn2, cc.g2);
        cc.h3 = block(cc.h2, "c3", "gn3", c.w3, cc.col3, cc.gn3, cc.g3);
        cc.flat = cc.h3;
        cc.flat.shape = {1, static_cast<int>(cc.h3.numel())};
        cc.feat_pre = Tensor<T>({1, c.fc_dim});
        nn::linear_fwd(cc.flat.ptr(), 1, static_cast<int>(cc.flat.numel()), p.at("fc.w").ptr(),
                       p.at("fc.b").ptr(), c.fc_dim, cc.feat_pre.ptr());
        cc.feat = Tensor<T>(cc.feat_pre.shape);
        nn::silu_fwd(cc.feat_pre.ptr(), cc.feat_pre.numel(), cc.feat.ptr());
        if (feat_out) *feat_out = cc.feat;
        Tensor<T> logits({c.out_dim});
        nn::linear_fwd(cc.feat.ptr(), 1, c.fc_dim, p.at("head.w").ptr(), p.at("head.b").ptr(),
                       c.out_dim, logits.ptr());
        return logits;
    }

    void backward(const ConvNetCache<T>& cc, const Tensor<T>& dlogits,
                  nn::ParamPack<T>* pgrad) const {
        const auto& c = cfg;
        const auto& p = params;
        auto gp = [&](const std::string& n) { return pgrad->at(n).ptr(); };
        Tensor<T> dfeat({1, c.fc_dim});
        nn::linear_bwd(cc.feat.ptr(), p.at("head.w").ptr(), dlogits.ptr(), 1, c.fc_dim, c.out_dim,
                       dfeat.ptr(), gp("head.w"), gp("head.b"));
        Tensor<T> dfeat_pre(dfeat.shape);
        nn::silu_bwd(cc.feat_pre.ptr(), dfeat.ptr(), dfeat.numel(), dfeat_pre.ptr());
        Tensor<T> dflat(cc.flat.shape);
        nn::linear_bwd(cc.flat.ptr(), p.at("fc.w").ptr(), dfeat_pre.ptr(), 1,
                       static_cast<int>(cc.flat.numel()), c.fc_dim, dflat.ptr(), gp("fc.w"),
                       gp("fc.b"));
        Tensor<T> dh3 = dflat;
        dh3.shape = cc.h3.shape;
        auto block_bwd = [&](const Tensor<T>& dh, const Tensor<T>& pre,
                             const nn::GroupNormCache<T>& gc, const Tensor<T>& col,
                             const Tensor<T>& in, const char* conv, const char* gnn,
                             bool need_dx) -> Tensor<T> {
            Tensor<T> dpre(dh.shape);
            nn::silu_bwd(pre.ptr(), dh.ptr(), pre.numel(), dpre.ptr());
            Tensor<T> da(dh.shape);
            nn::groupnorm_bwd(gc, dpre.ptr(), dh.shape[0], dh.shape[1], dh.shape[2],
                              std::min(4, dh.shape[0]), p.at(std::string(gnn) + ".gamma").ptr(),
                              da.ptr(), gp(std::string(gnn) + ".gamma"),
                              gp(std::string(gnn) + ".beta"));
            Tensor<T> dx;
            if (need_dx) dx = Tensor<T>(in.shape);
            nn::conv3x3_bwd(col, p.at(std::string(conv) + ".w").ptr(), da.ptr(), in.shape[0],
                            in.shape[1], in.shape[2], dh.shape[0], 2,
                            need_dx ? dx.ptr() : nullptr, gp(std::string(conv) + ".w"),
                            gp(std::string(conv) + ".b"));
            return dx;
        };
        Tensor<T> dh2 = block_bwd(dh3, cc.g3, cc.gn3, cc.col3, cc.h2, "c3", "gn3", true);
        Tensor<T> dh1 = block_bwd(dh2, cc.g2, cc.gn2, cc.col2, cc.h1, "c2", "gn2", true);
        block_bwd(dh1, cc.g1, cc.gn1, cc.col1, cc.x, "c1", "gn1", false);
    }
};

template <typename T>
std::vector<T> softmax_vec(const Tensor<T>& logits) {
    std::vector<T> p(static_cast<size_t>(logits.numel()));
    T m = logits[0];
    for (int64_t i = 1; i < logits.numel(); ++i) m = std::max(m, logits[i]);
    T z = 0;
    for (int64_t i = 0; i < logits.numel(); ++i) {
        p[static_cast<size_t>(i)] = std::exp(logits[i] - m);
        z += p[static_cast<size_t>(i)];
    }
    for (auto& v : p) v /= z;
    return p;
}

// ---------------------------------------------------------------------------
// Reconstruction autoencoder; the bottleneck is the self-supervised embedding.

template <typename T>
struct AutoEncCache {
    ConvNetCache<T> enc;
    Tensor<T> z, dec_pre, dec_flat, d1, d2, d3, u1, u2, u3;
    Tensor<T> dg1, dg2;  // pre-silu of decoder convs
    Tensor<T> dcol1, dcol2, dcol3;
};

template <typename T>
class AutoEncoder {
public:
    ConvNetConfig enc_cfg;  // out_dim is the bottleneck width
    nn::ParamPack<T> dec_params;
    ConvNet<T> encoder;

    AutoEncoder() = default;
    AutoEncoder(const ConvNetConfig& c, uint64_t seed) : enc_cfg(c), encoder(c, seed) {
        const int s8 = c.size / 8;
        dec_params.add("d0.w", {c.w3 * s8 * s8, c.out_dim});
        dec_params.add("d0.b", {c.w3 * s8 * s8});
        dec_params.add("d1.w", {c.w2, c.w3 * 9});
        dec_params.add("d1.b", {c.w2});
        dec_params.add("d2.w", {c.w1, c.w2 * 9});
        dec_params.add("d2.b", {c.w1});
        dec_params.add("d3.w", {c.in_ch, c.w1 * 9});
        dec_params.add("d3.b", {c.in_ch});
        Rng rng(seed + 17);
        nn::init_weights(dec_params, rng);
    }

    Tensor<T> embed(const Tensor<T>& x) const {
        return encoder.forward(x, nullptr, nullptr);  // bottleneck = head output
    }

    Tensor<T> reconstruct(const Tensor<T>& x, AutoEncCache<T>* cache) const {
        const auto& c = enc_cfg;
        const int s8 = c.size / 8, s4 = c.size / 4, s2 = c.size / 2;
        AutoEncCache<T> local;
        AutoEncCache<T>& cc = cache ? *cache : local;
        cc.z = encoder.forward(x, &cc.enc, nullptr);
        cc.dec_flat = Tensor<T>({1, c.w3 * s8 * s8});
        nn::linear_fwd(cc.z.ptr(), 1, c.out_dim, dec_params.at("d0.w").ptr(),
                       dec_params.at("d0.b").ptr(), c.w3 * s8 * s8, cc.dec_flat.ptr());
        Tensor<T> h = cc.dec_flat;
        h.shape = {c.w3, s8, s8};
        cc.u1 = Tensor<T>({c.w3, s4, s4});
        nn::upsample2_fwd(h.ptr(), c.w3, s8, s8, cc.u1.ptr());
        cc.dg1 = Tensor<T>({c.w2, s4, s4});
        nn::conv3x3_fwd(cc.u1.ptr(), c.w3, s4, s4, dec_params.at("d1.w").ptr(),
                        dec_params.at("d1.b").ptr(), c.w2, 1, cc.dg1.ptr(), &cc.dcol1);
        cc.d1 = Tensor<T>(cc.dg1.shape);
        nn::silu_fwd(cc.dg1.ptr(), cc.dg1.numel(), cc.d1.ptr());
        cc.u2 = Tensor<T>({c.w2, s2, s2});
        nn::upsample2_fwd(cc.d1.ptr(), c.w2, s4, s4, cc.u2.ptr());
        cc.dg2 = Tensor<T>({c.w1, s2, s2});
        nn::conv3x3_fwd(cc.u2.ptr(), c.w2, s2, s2, dec_params.at("d2.w").ptr(),
                        dec_params.at("d2.b").ptr(), c.w1, 1, cc.dg2.ptr(), &cc.dcol2);
        cc.d2 = Tensor<T>(cc.dg2.shape);
        nn::silu_fwd(cc.dg2.ptr(), cc.dg2.numel(), cc.d2.ptr());
        cc.u3 = Tensor<T>({c.w1, c.size, c.size});
        nn::upsample2_fwd(cc.d2.ptr(), c.w1, s2, s2, cc.u3.ptr());
        Tensor<T> out({c.in_ch, c.size, c.size});
        nn::conv3x3_fwd(cc.u3.ptr(), c.w1, c.size, c.size, dec_params.at("d3.w").ptr(),
                        dec_params.at("d3.b").ptr(), c.in_ch, 1, out.ptr(), &cc.dcol3);
        return out;
    }

    void backward(const AutoEncCache<T>& cc, const Tensor<T>& dout, nn::ParamPack<T>* enc_grad,
                  nn::ParamPack<T>* dec_grad) const {
        const auto& c = enc_cfg;
        const int s8 = c.size / 8, s4 = c.size / 4, s2 = c.size / 2;
        auto gd = [&](const std::string& n) { return dec_grad->at(n).ptr(); };
        Tensor<T> du3(cc.u3.shape);
        nn::conv3x3_bwd(cc.dcol3, dec_params.at("d3.w").ptr(), dout.ptr(), c.w1, c.size, c.size,
                        c.in_ch, 1, du3.ptr(), gd("d3.w"), gd("d3.b"));
        Tensor<T> dd2(cc.d2.shape);
        nn::upsample2_bwd(du3.ptr(), c.w1, s2, s2, dd2.ptr());
        Tensor<T> ddg2(dd2.shape);
        nn::silu_bwd(cc.dg2.ptr(), dd2.ptr(), dd2.numel(), ddg2.ptr());
        Tensor<T> du2(cc.u2.shape);
        nn::conv3x3_bwd(cc.dcol2, dec_params.at("d2.w").ptr(), ddg2.ptr(), c.w2, s2, s2, c.w1, 1,
                        du2.ptr(), gd("d2.w"), gd("d2.b"));
        Tensor<T> dd1(cc.d1.shape);
        nn::upsample2_bwd(du2.ptr(), c.w2, s4, s4, dd1.ptr());
        Tensor<T> ddg1(dd1.shape);
        nn::silu_bwd(cc.dg1.ptr(), dd1.ptr(), dd1.numel(), ddg1.ptr());
        Tensor<T> du1(cc.u1.shape);
        nn::conv3x3_bwd(cc.dcol1, dec_params.at("d1.w").ptr(), ddg1.ptr(), c.w3, s4, s4, c.w2, 1,
                        du1.ptr(), gd("d1.w"), gd("d1.b"));
        Tensor<T> dh({c.w3, s8, s8});
        nn::upsample2_bwd(du1.ptr(), c.w3, s8, s8, dh.ptr());
        dh.shape = {1, c.w3 * s8 * s8};
        Tensor<T> dz({1, c.out_dim});
        nn::linear_bwd(cc.z.ptr(), dec_params.at("d0.w").ptr(), dh.ptr(), 1, c.out_dim,
                       c.w3 * s8 * s8, dz.ptr(), gd("d0.w"), gd("d0.b"));
        dz.shape = {c.out_dim};
        encoder.backward(cc.enc, dz, enc_grad);
    }
};

} // namespace cfx
