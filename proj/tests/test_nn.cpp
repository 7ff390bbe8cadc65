// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference oracles for every layer's backward pass, run at double
// precision where central differences are trustworthy to ~1e-8.

#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "cfx/nn.hpp"

using namespace cfx;

namespace {

// central finite-difference gradient of a scalar function of one tensor entry
double fd_grad(const std::function<double()>& f, double* slot, double h = 1e-6) {
    const double saved = *slot;
    *slot = saved + h;
    const double up = f();
    *slot = saved - h;
    const double down = f();
    *slot = saved;
    return (up - down) / (2.0 * h);
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// scalar loss: weighted sum so gradients are generic
double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
    double s = 0;
    for (int64_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
    return s;
}

} // namespace

TEST_CASE("linear forward/backward vs finite differences") {
    Rng rng(11);
    const int n = 3, din = 5, dout = 4;
    auto x = randn<double>({n, din}, rng);
    auto w = randn<double>({dout, din}, rng);
    auto b = randn<double>({dout}, rng);
    auto lw = randn<double>({n, dout}, rng);  // loss weights

    auto loss = [&] {
        Tensor<double> y({n, dout});
        nn::linear_fwd(x.ptr(), n, din, w.ptr(), b.ptr(), dout, y.ptr());
        return weighted_sum(y, lw);
    };

    Tensor<double> y({n, dout});
    nn::linear_fwd(x.ptr(), n, din, w.ptr(), b.ptr(), dout, y.ptr());
    Tensor<double> dx({n, din}), dw({dout, din}), db({dout});
    nn::linear_bwd(x.ptr(), w.ptr(), lw.ptr(), n, din, dout, dx.ptr(), dw.ptr(), db.ptr());

    for (int64_t i = 0; i < x.numel(); i += 3)
        REQUIRE(rel_err(dx[i], fd_grad(loss, &x[i])) < 1e-6);
    for (int64_t i = 0; i < w.numel(); i += 3)
        REQUIRE(rel_err(dw[i], fd_grad(loss, &w[i])) < 1e-6);
    for (int64_t i = 0; i < b.numel(); ++i)
        REQUIRE(rel_err(db[i], fd_grad(loss, &b[i])) < 1e-6);
}

TEST_CASE("conv3x3 backward vs finite differences") {
    Rng rng(12);
    const int ci = 2, co = 3, h = 6, w = 6;
    const int stride = GENERATE(1, 2);
    const int ho = nn::conv_out(h, stride), wo = nn::conv_out(w, stride);
    auto x = randn<double>({ci, h, w}, rng);
    auto wt = randn<double>({co, ci * 9}, rng);
    auto b = randn<double>({co}, rng);
    auto lw = randn<double>({co, ho, wo}, rng);

    auto loss = [&] {
        Tensor<double> y({co, ho, wo}), col;
        nn::conv3x3_fwd(x.ptr(), ci, h, w, wt.ptr(), b.ptr(), co, stride, y.ptr(), &col);
        return weighted_sum(y, lw);
    };

    Tensor<double> y({co, ho, wo}), col;
    nn::conv3x3_fwd(x.ptr(), ci, h, w, wt.ptr(), b.ptr(), co, stride, y.ptr(), &col);
    Tensor<double> dx({ci, h, w}), dw({co, ci * 9}), db({co});
    nn::conv3x3_bwd(col, wt.ptr(), lw.ptr(), ci, h, w, co, stride, dx.ptr(), dw.ptr(), db.ptr());

    for (int64_t i = 0; i < x.numel(); i += 7)
        REQUIRE(rel_err(dx[i], fd_grad(loss, &x[i])) < 1e-5);
    for (int64_t i = 0; i < wt.numel(); i += 5)
        REQUIRE(rel_err(dw[i], fd_grad(loss, &wt[i])) < 1e-5);
    for (int64_t i = 0; i < b.numel(); ++i)
        REQUIRE(rel_err(db[i], fd_grad(loss, &b[i])) < 1e-5);
}

TEST_CASE("silu backward vs finite differences") {
    Rng rng(13);
    auto x = randn<double>({17}, rng);
    auto lw = randn<double>({17}, rng);
    auto loss = [&] {
        Tensor<double> y({17});
        nn::silu_fwd(x.ptr(), 17, y.ptr());
        return weighted_sum(y, lw);
    };
    Tensor<double> dx({17});
    nn::silu_bwd(x.ptr(), lw.ptr(), 17, dx.ptr());
    for (int64_t i = 0; i < 17; ++i) REQUIRE(rel_err(dx[i], fd_grad(loss, &x[i])) < 1e-6);
}

TEST_CASE("groupnorm backward vs finite differences") {
    Rng rng(14);
    const int c = 4, h = 3, w = 3, groups = 2;
    auto x = randn<double>({c, h, w}, rng);
    auto gamma = randn<double>({c}, rng);
    auto beta = randn<double>({c}, rng);
    auto lw = randn<double>({c, h, w}, rng);

    auto loss = [&] {
        Tensor<double> y({c, h, w});
        nn::GroupNormCache<double> cache;
        nn::groupnorm_fwd(x.ptr(), c, h, w, groups, gamma.ptr(), beta.ptr(), y.ptr(), &cache);
        return weighted_sum(y, lw);
    };

    Tensor<double> y({c, h, w});
    nn::GroupNormCache<double> cache;
    nn::groupnorm_fwd(x.ptr(), c, h, w, groups, gamma.ptr(), beta.ptr(), y.ptr(), &cache);
    Tensor<double> dx({c, h, w}), dgamma({c}), dbeta({c});
    nn::groupnorm_bwd(cache, lw.ptr(), c, h, w, groups, gamma.ptr(), dx.ptr(), dgamma.ptr(),
                      dbeta.ptr());

    for (int64_t i = 0; i < x.numel(); i += 2)
        REQUIRE(rel_err(dx[i], fd_grad(loss, &x[i])) < 1e-5);
    for (int64_t i = 0; i < c; ++i) {
        REQUIRE(rel_err(dgamma[i], fd_grad(loss, &gamma[i])) < 1e-6);
        REQUIRE(rel_err(dbeta[i], fd_grad(loss, &beta[i])) < 1e-6);
    }
}

TEST_CASE("softmax rows sum to one and backward matches finite differences") {
    Rng rng(15);
    const int n = 2, d = 5;
    auto x = randn<double>({n, d}, rng);
    auto lw = randn<double>({n, d}, rng);
    Tensor<double> y({n, d});
    nn::softmax_rows(x.ptr(), n, d, y.ptr());
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int j = 0; j < d; ++j) s += y.at2(i, j);
        REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));
    }
    auto loss = [&] {
        Tensor<double> yy({n, d});
        nn::softmax_rows(x.ptr(), n, d, yy.ptr());
        return weighted_sum(yy, lw);
    };
    Tensor<double> dx({n, d});
    nn::softmax_rows_bwd(y.ptr(), lw.ptr(), n, d, dx.ptr());
    for (int64_t i = 0; i < x.numel(); ++i)
        REQUIRE(rel_err(dx[i], fd_grad(loss, &x[i])) < 1e-5);
}

TEST_CASE("cross-attention backward vs finite differences") {
    Rng rng(16);
    const int n = 4, dm = 3, l = 2, dc = 3, da = 3;
    auto x = randn<double>({n, dm}, rng);
    auto e = randn<double>({l, dc}, rng);
    auto wq = randn<double>({da, dm}, rng);
    auto wk = randn<double>({da, dc}, rng);
    auto wv = randn<double>({dm, dc}, rng);
    auto wo = randn<double>({dm, dm}, rng);
    auto lw = randn<double>({n, dm}, rng);

    auto loss = [&] {
        Tensor<double> out({n, dm});
        nn::AttnCache<double> c;
        nn::attention_fwd(x.ptr(), n, dm, e.ptr(), l, dc, wq.ptr(), wk.ptr(), wv.ptr(), wo.ptr(),
                          da, out.ptr(), &c);
        return weighted_sum(out, lw);
    };

    Tensor<double> out({n, dm});
    nn::AttnCache<double> c;
    nn::attention_fwd(x.ptr(), n, dm, e.ptr(), l, dc, wq.ptr(), wk.ptr(), wv.ptr(), wo.ptr(), da,
                      out.ptr(), &c);
    Tensor<double> dx({n, dm}), de({l, dc});
    Tensor<double> dwq({da, dm}), dwk({da, dc}), dwv({dm, dc}), dwo({dm, dm});
    nn::attention_bwd(c, x.ptr(), e.ptr(), wq.ptr(), wk.ptr(), wv.ptr(), wo.ptr(), lw.ptr(),
                      dx.ptr(), de.ptr(), dwq.ptr(), dwk.ptr(), dwv.ptr(), dwo.ptr());

    for (int64_t i = 0; i < x.numel(); ++i)
        REQUIRE(rel_err(dx[i], fd_grad(loss, &x[i])) < 1e-5);
    for (int64_t i = 0; i < e.numel(); ++i)
        REQUIRE(rel_err(de[i], fd_grad(loss, &e[i])) < 1e-5);
    for (int64_t i = 0; i < wq.numel(); ++i)
        REQUIRE(rel_err(dwq[i], fd_grad(loss, &wq[i])) < 1e-5);
    for (int64_t i = 0; i < wk.numel(); ++i)
        REQUIRE(rel_err(dwk[i], fd_grad(loss, &wk[i])) < 1e-5);
    for (int64_t i = 0; i < wv.numel(); ++i)
        REQUIRE(rel_err(dwv[i], fd_grad(loss, &wv[i])) < 1e-5);
    for (int64_t i = 0; i < wo.numel(); ++i)
        REQUIRE(rel_err(dwo[i], fd_grad(loss, &wo[i])) < 1e-5);
}

TEST_CASE("upsample backward is the exact adjoint") {
    Rng rng(17);
    const int c = 2, h = 3, w = 3;
    auto x = randn<double>({c, h, w}, rng);
    auto dy = randn<double>({c, 2 * h, 2 * w}, rng);
    Tensor<double> y({c, 2 * h, 2 * w}), dx({c, h, w});
    nn::upsample2_fwd(x.ptr(), c, h, w, y.ptr());
    nn::upsample2_bwd(dy.ptr(), c, h, w, dx.ptr());
    // <Ax, dy> == <x, A^T dy>
    double lhs = 0, rhs = 0;
    for (int64_t i = 0; i < y.numel(); ++i) lhs += y[i] * dy[i];
    for (int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * dx[i];
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("time embedding shape and range") {
    auto e = nn::time_embedding<double>(37, 32);
    REQUIRE(e.numel() == 32);
    for (int64_t i = 0; i < e.numel(); ++i) {
        REQUIRE(e[i] <= 1.0);
        REQUIRE(e[i] >= -1.0);
    }
    auto e2 = nn::time_embedding<double>(38, 32);
    REQUIRE(max_abs_diff(e, e2) > 0.0);
}

TEST_CASE("optimizers minimize a quadratic") {
    // f(p) = 0.5 * sum (p - 3)^2
    nn::ParamPack<double> p;
    p.add("p", {4});
    for (auto& v : p.at("p").data) v = 10.0;
    auto g = p.zeros_like();

    SECTION("adam") {
        nn::Adam<double> opt;
        opt.lr = 0.3;
        opt.init(p);
        for (int it = 0; it < 400; ++it) {
            for (int64_t j = 0; j < 4; ++j) g.at("p")[j] = p.at("p")[j] - 3.0;
            opt.step(p, g);
        }
        for (int64_t j = 0; j < 4; ++j) REQUIRE(p.at("p")[j] == Catch::Approx(3.0).margin(1e-3));
    }
    SECTION("sgd with decoupled weight decay shrinks toward zero") {
        nn::Sgd<double> opt;
        opt.lr = 0.1;
        opt.weight_decay = 1.0;  // pure decay, zero gradient
        Tensor<double> z({4}, 0.0);
        for (int it = 0; it < 100; ++it) opt.step(p.at("p").ptr(), z.ptr(), 4);
        for (int64_t j = 0; j < 4; ++j) REQUIRE(std::abs(p.at("p")[j]) < 1e-3);
    }
}

TEST_CASE("init_weights conventions") {
    nn::ParamPack<float> p;
    p.add("layer.w", {8, 16});
    p.add("layer.b", {8});
    p.add("norm.gamma", {8});
    p.add("norm.beta", {8});
    Rng rng(3);
    nn::init_weights(p, rng);
    for (auto v : p.at("layer.b").data) REQUIRE(v == 0.0f);
    for (auto v : p.at("norm.beta").data) REQUIRE(v == 0.0f);
    for (auto v : p.at("norm.gamma").data) REQUIRE(v == 1.0f);
    double ss = 0;
    for (auto v : p.at("layer.w").data) ss += static_cast<double>(v) * v;
    REQUIRE(ss > 0.0);
}
