// SPDX-License-Identifier: Apache-2.0
#pragma once

// Evaluation suite: SR, FID/sFID over a frozen feature encoder, FVA/FS over
// an identity embedder, the self-supervised similarity variant, MNAC,
// correlation difference, COUT, and efficiency accounting.

#include <Eigen/Dense>

#include <functional>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cfx/pipeline.hpp"

namespace cfx {

using FeatureFn = std::function<std::vector<double>(const Tensor<float>&)>;
using OracleFn = std::function<AttributeVector(const Tensor<float>&)>;

// ---------------------------------------------------------------------------

inline double success_rate(const std::vector<CounterfactualResult>& results) {
    if (results.empty()) throw std::invalid_argument("success_rate: empty result list");
    int64_t flips = 0;
    for (const auto& r : results) flips += r.flipped ? 1 : 0;
    return static_cast<double>(flips) / static_cast<double>(results.size());
}

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian fits of feature sets.

inline Eigen::MatrixXd feature_matrix(const std::vector<std::vector<double>>& feats) {
    const int n = static_cast<int>(feats.size());
    const int d = static_cast<int>(feats.front().size());
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = feats[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return m;
}

/// Symmetric PSD square root with eigenvalue clamping at zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
    Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline double fid_from_features(const Eigen::MatrixXd& fa, const Eigen::MatrixXd& fb) {
    if (fa.rows() < 2 || fb.rows() < 2)
        throw std::invalid_argument("fid: need at least 2 samples per set");
    const Eigen::VectorXd mu_a = fa.colwise().mean();
    const Eigen::VectorXd mu_b = fb.colwise().mean();
    auto cov = [](const Eigen::MatrixXd& f, const Eigen::VectorXd& mu) {
        Eigen::MatrixXd c = f.rowwise() - mu.transpose();
        return Eigen::MatrixXd((c.transpose() * c) / static_cast<double>(f.rows() - 1));
    };
    const Eigen::MatrixXd sa = cov(fa, mu_a);
    const Eigen::MatrixXd sb = cov(fb, mu_b);
    // tr((Sa Sb)^{1/2}) via sqrt(Sa) Sb sqrt(Sa), symmetrized and clamped
    const Eigen::MatrixXd ra = psd_sqrt(sa);
    Eigen::MatrixXd inner = ra * sb * ra;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
}

inline double fid(const std::vector<Tensor<float>>& set_a, const std::vector<Tensor<float>>& set_b,
                  const FeatureFn& encoder) {
    std::vector<std::vector<double>> fa, fb;
    fa.reserve(set_a.size());
    fb.reserve(set_b.size());
    for (const auto& img : set_a) fa.push_back(encoder(img));
    for (const auto& img : set_b) fb.push_back(encoder(img));
    return fid_from_features(feature_matrix(fa), feature_matrix(fb));
}

/// Split FID: a seeded 50/50 split of the originals; mean of the two
/// crosswise FIDs (half A originals vs counterfactuals of half B and vice
/// versa). Only counterfactuals whose index is flagged valid participate.
inline double sfid(const std::vector<Tensor<float>>& originals,
                   const std::vector<Tensor<float>>& counterfactuals,
                   const std::vector<bool>& valid, const FeatureFn& encoder, uint64_t seed) {
    const size_t n = originals.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Tensor<float>> orig_a, orig_b, cf_a, cf_b;
    for (size_t k = 0; k < n; ++k) {
        size_t i = order[k];
        const bool in_a = k < n / 2;
        (in_a ? orig_a : orig_b).push_back(originals[i]);
        if (valid[i]) (in_a ? cf_a : cf_b).push_back(counterfactuals[i]);
    }
    return 0.5 * (fid(orig_a, cf_b, encoder) + fid(orig_b, cf_a, encoder));
}

// ---------------------------------------------------------------------------
// Identity similarity

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) throw std::runtime_error("cosine_similarity: zero-norm embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double fs(const Tensor<float>& x, const Tensor<float>& cf, const FeatureFn& embedder) {
    return cosine_similarity(embedder(x), embedder(cf));
}

inline int fva(const Tensor<float>& x, const Tensor<float>& cf, const FeatureFn& embedder) {
    return fs(x, cf, embedder) > 0.5 ? 1 : 0;
}

// ---------------------------------------------------------------------------

inline double mnac(const std::vector<std::pair<const Tensor<float>*, const Tensor<float>*>>& pairs,
                   const OracleFn& oracle) {
    if (pairs.empty()) return 0.0;
    int64_t changed = 0;
    for (const auto& [x, cf] : pairs) {
        AttributeVector ax = oracle(*x), acf = oracle(*cf);
        for (size_t k = 0; k < ax.size(); ++k) changed += ax[k] != acf[k] ? 1 : 0;
    }
    return static_cast<double>(changed) / static_cast<double>(pairs.size());
}

/// Mean absolute pairwise-correlation difference between the attribute
/// matrices of originals and counterfactuals, over off-diagonal pairs.
/// Pairs touching a constant column contribute zero (with a warning).
inline double cd(const std::vector<AttributeVector>& orig_attrs,
                 const std::vector<AttributeVector>& cf_attrs, bool warn = true) {
    const size_t n = orig_attrs.size();
    if (n < 30) throw std::invalid_argument("cd: need at least 30 pairs");
    const size_t K = orig_attrs.front().size();
    auto corr_matrix = [&](const std::vector<AttributeVector>& attrs, bool* had_constant) {
        std::vector<double> mean(K, 0), var(K, 0);
        for (const auto& a : attrs)
            for (size_t k = 0; k < K; ++k) mean[k] += a[k];
        for (auto& m : mean) m /= static_cast<double>(n);
        for (const auto& a : attrs)
            for (size_t k = 0; k < K; ++k) var[k] += (a[k] - mean[k]) * (a[k] - mean[k]);
        std::vector<std::vector<double>> rho(K, std::vector<double>(K, 0.0));
        for (size_t i = 0; i < K; ++i)
            for (size_t j = i + 1; j < K; ++j) {
                if (var[i] == 0 || var[j] == 0) {
                    *had_constant = true;
                    continue;  // contributes zero
                }
                double cov = 0;
                for (const auto& a : attrs) cov += (a[i] - mean[i]) * (a[j] - mean[j]);
                rho[i][j] = rho[j][i] = cov / std::sqrt(var[i] * var[j]);
            }
        return rho;
    };
    bool had_constant = false;
    auto ra = corr_matrix(orig_attrs, &had_constant);
    auto rb = corr_matrix(cf_attrs, &had_constant);
    if (had_constant && warn)
        std::cerr << "warning: constant attribute column in CD computation; "
                     "affected pairs contribute 0\n";
    double sum = 0;
    for (size_t i = 0; i < K; ++i)
        for (size_t j = 0; j < K; ++j)
            if (i != j) sum += std::abs(ra[i][j] - rb[i][j]);
    return sum / static_cast<double>(K * (K - 1));
}

/// AUC difference of the target and source class probabilities along the
/// linear interpolation path from x to cf; trapezoidal mean, range [-1, 1].
inline double cout_metric(const Tensor<float>& x, const Tensor<float>& cf, int source, int target,
                          const BlackBoxClassifier& classifier, int n_steps = 11) {
    if (n_steps < 2) throw std::invalid_argument("cout: n_steps >= 2");
    double auc_t = 0, auc_s = 0;
    double prev_t = 0, prev_s = 0;
    for (int i = 0; i < n_steps; ++i) {
        const float lam = static_cast<float>(i) / static_cast<float>(n_steps - 1);
        Tensor<float> xi(x.shape);
        for (int64_t j = 0; j < x.numel(); ++j) xi[j] = (1.0f - lam) * x[j] + lam * cf[j];
        auto pr = classifier.predict(xi);
        const double pt = pr.probabilities[static_cast<size_t>(target)];
        const double ps = pr.probabilities[static_cast<size_t>(source)];
        if (i > 0) {
            auc_t += 0.5 * (pt + prev_t);
            auc_s += 0.5 * (ps + prev_s);
        }
        prev_t = pt;
        prev_s = ps;
    }
    auc_t /= (n_steps - 1);
    auc_s /= (n_steps - 1);
    return auc_t - auc_s;
}

// ---------------------------------------------------------------------------

struct MetricReport {
    double sr = 0, fid = 0, sfid = 0, fva = 0, fs = 0, s3 = 0, mnac = 0, cd = 0, cout = 0;
    double mean_denoiser_calls = 0;
    double mean_wall_seconds = 0;   // reported in the timing sidecar, not hashed
    double flops_per_counterfactual = 0;
    int n_images = 0;
    int n_valid = 0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"sr", sr},
                              {"fid", fid},
                              {"sfid", sfid},
                              {"fva", fva},
                              {"fs", fs},
                              {"s3", s3},
                              {"mnac", mnac},
                              {"cd", cd},
                              {"cout", cout},
                              {"mean_denoiser_calls", mean_denoiser_calls},
                              {"flops_per_counterfactual", flops_per_counterfactual},
                              {"n_images", n_images},
                              {"n_valid", n_valid}};
    }
};

struct Efficiency {
    double mean_calls = 0;
    double mean_seconds = 0;
    double flops_estimate = 0;
};

inline Efficiency efficiency(const std::vector<CounterfactualResult>& results,
                             const std::vector<double>& wall_seconds, double flops_per_call) {
    if (results.empty()) throw std::invalid_argument("efficiency: empty result list");
    Efficiency e;
    for (const auto& r : results) e.mean_calls += static_cast<double>(r.denoiser_calls);
    e.mean_calls /= static_cast<double>(results.size());
    if (!wall_seconds.empty())
        e.mean_seconds = std::accumulate(wall_seconds.begin(), wall_seconds.end(), 0.0) /
                         static_cast<double>(wall_seconds.size());
    e.flops_estimate = e.mean_calls * flops_per_call;
    return e;
}

} // namespace cfx
