// SPDX-License-Identifier: Apache-2.0
#pragma once

// Black-box classifier contract: predict is the only surface the
// counterfactual pipeline may touch.

#include <memory>

#include "cfx/guidance.hpp"
#include "cfx/nets.hpp"
#include "cfx/train.hpp"

namespace cfx {

struct Prediction {
    int label = 0;
    std::vector<double> probabilities;
};

class BlackBoxClassifier {
public:
    virtual ~BlackBoxClassifier() = default;
    virtual Prediction predict(const Tensor<float>& image) const = 0;
};

inline int argmax_lowest_tie(const std::vector<double>& p) {
    int best = 0;
    for (size_t i = 1; i < p.size(); ++i)
        if (p[i] > p[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

class InProcessClassifier final : public BlackBoxClassifier {
public:
    explicit InProcessClassifier(ConvNet<float> net) : net_(std::move(net)) {}

    Prediction predict(const Tensor<float>& image) const override {
        Tensor<float> logits = net_.forward(image);
        auto pf = softmax_vec(logits);
        Prediction pr;
        pr.probabilities.assign(pf.begin(), pf.end());
        pr.label = argmax_lowest_tie(pr.probabilities);
        return pr;
    }

    const ConvNet<float>& net() const { return net_; }

private:
    ConvNet<float> net_;
};

/// Counts queries; the pipeline wraps whatever classifier it is given.
class CountingClassifier final : public BlackBoxClassifier {
public:
    CountingClassifier(const BlackBoxClassifier& inner, EvalCounter& counter)
        : inner_(inner), counter_(counter) {}

    Prediction predict(const Tensor<float>& image) const override {
        counter_.classifier_queries += 1;
        return inner_.predict(image);
    }

private:
    const BlackBoxClassifier& inner_;
    EvalCounter& counter_;
};

/// Trains the toy target classifier and wraps it behind the predict surface.
inline std::unique_ptr<InProcessClassifier> train_classifier(const LabeledDataset& dataset,
                                                             const TrainConfig& cfg,
                                                             const ConvNetConfig& ncfg,
                                                             bool verbose = false) {
    ConvNet<float> net = train_convnet(
        dataset, ncfg, cfg, HeadLoss::SoftmaxCE,
        [&](size_t i) { return std::vector<float>{static_cast<float>(dataset.labels[i])}; },
        verbose);
    return std::make_unique<InProcessClassifier>(std::move(net));
}

inline double classifier_accuracy(const BlackBoxClassifier& clf, const LabeledDataset& ds) {
    if (ds.size() == 0) return 0.0;
    int correct = 0;
    for (size_t i = 0; i < ds.size(); ++i)
        if (clf.predict(ds.images[i]).label == ds.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

} // namespace cfx
