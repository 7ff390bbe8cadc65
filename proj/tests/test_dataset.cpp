// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "cfx/dataset.hpp"

using namespace cfx;

TEST_CASE("rendering is seed deterministic") {
    SyntheticSpec spec;
    AttributeVector a{1, 0, 1, 0, 1, 0};
    Rng r1(123), r2(123), r3(124);
    auto img1 = render_image(a, 3, spec, r1);
    auto img2 = render_image(a, 3, spec, r2);
    auto img3 = render_image(a, 3, spec, r3);
    REQUIRE(tensor_hash(img1) == tensor_hash(img2));
    REQUIRE(tensor_hash(img1) != tensor_hash(img3));
}

TEST_CASE("oracle decodes every attribute vector exhaustively") {
    SyntheticSpec spec;
    spec.noise_sigma = 0.0;  // clean renders
    for (int identity : {0, 5, 11, 15}) {
        for (int mask = 0; mask < 64; ++mask) {
            AttributeVector a(6);
            for (int k = 0; k < 6; ++k) a[static_cast<size_t>(k)] = (mask >> k) & 1;
            Rng rng(1);
            auto img = render_image(a, identity, spec, rng);
            INFO("mask=" << mask << " identity=" << identity);
            REQUIRE(oracle_attributes(img, spec) == a);
        }
    }
}

TEST_CASE("oracle stays accurate under heavier noise") {
    SyntheticSpec spec;
    spec.noise_sigma = 0.05;
    Rng meta(9);
    int correct = 0;
    const int trials = 400;
    for (int i = 0; i < trials; ++i) {
        AttributeVector a(6);
        for (auto& b : a) b = meta() & 1;
        int identity = static_cast<int>(meta() % 16);
        Rng rng(meta());
        auto img = render_image(a, identity, spec, rng);
        if (oracle_attributes(img, spec) == a) ++correct;
    }
    REQUIRE(static_cast<double>(correct) / trials >= 0.99);
}

TEST_CASE("degenerate input is decoded without crashing") {
    SyntheticSpec spec;
    Tensor<float> zero({1, 32, 32});
    bool low_confidence = false;
    auto a = oracle_attributes(zero, spec, &low_confidence);
    REQUIRE(a.size() == 6);
    REQUIRE(low_confidence);
}

TEST_CASE("attribute marginals track the configuration") {
    SyntheticSpec spec;
    spec.train_count = 10000;
    spec.noise_sigma = 0.0;
    auto ds = generate_split(spec, "train", spec.train_count, 0);
    std::vector<double> freq(6, 0.0);
    for (const auto& a : ds.attributes)
        for (int k = 0; k < 6; ++k) freq[static_cast<size_t>(k)] += a[static_cast<size_t>(k)];
    for (int k = 0; k < 6; ++k) {
        freq[static_cast<size_t>(k)] /= spec.train_count;
        INFO("attribute " << k);
        REQUIRE(std::abs(freq[static_cast<size_t>(k)] - 0.5) <= 0.03);
    }
    // injected correlation between the class attribute and its confounder
    double n11 = 0, n1 = 0, n_1 = 0;
    for (const auto& a : ds.attributes) {
        n1 += a[0];
        n_1 += a[1];
        n11 += a[0] && a[1];
    }
    const double n = spec.train_count;
    double rho = (n11 / n - (n1 / n) * (n_1 / n)) /
                 std::sqrt((n1 / n) * (1 - n1 / n) * (n_1 / n) * (1 - n_1 / n));
    REQUIRE(rho == Catch::Approx(0.6).margin(0.05));
}

TEST_CASE("class attribute flip touches a bounded pixel region") {
    SyntheticSpec spec;
    spec.noise_sigma = 0.0;
    AttributeVector a{0, 1, 0, 1, 0, 1};
    AttributeVector b = a;
    b[0] = 1;
    Rng r1(1), r2(1);
    auto ia = render_image(a, 4, spec, r1);
    auto ib = render_image(b, 4, spec, r2);
    int changed = 0;
    for (int64_t i = 0; i < ia.numel(); ++i)
        if (ia[i] != ib[i]) ++changed;
    REQUIRE(changed > 0);
    REQUIRE(static_cast<double>(changed) / static_cast<double>(ia.numel()) <= 0.30);
}

TEST_CASE("splits are disjoint and deterministic") {
    SyntheticSpec spec;
    spec.train_count = 200;
    spec.val_count = 50;
    spec.test_count = 50;
    auto b1 = generate_dataset(spec);
    auto b2 = generate_dataset(spec);

    auto hashes = [](const LabeledDataset& ds) {
        std::set<uint64_t> h;
        for (const auto& img : ds.images) h.insert(tensor_hash(img));
        return h;
    };
    auto ht = hashes(b1.train), hv = hashes(b1.val), hs = hashes(b1.test);
    for (uint64_t h : hv) REQUIRE(ht.count(h) == 0);
    for (uint64_t h : hs) {
        REQUIRE(ht.count(h) == 0);
        REQUIRE(hv.count(h) == 0);
    }
    REQUIRE(hashes(b2.train) == ht);
    REQUIRE(b1.train.labels == b2.train.labels);

    // labels mirror the class attribute
    for (size_t i = 0; i < b1.train.size(); ++i)
        REQUIRE(b1.train.labels[i] == b1.train.attributes[i][0]);
}

TEST_CASE("spec json round trip") {
    SyntheticSpec spec;
    spec.correlation = 0.42;
    spec.identities = 9;
    spec.seed = 1234;
    auto back = spec_from_json(spec_to_json(spec));
    REQUIRE(back.correlation == spec.correlation);
    REQUIRE(back.identities == spec.identities);
    REQUIRE(back.seed == spec.seed);
    REQUIRE(back.marginals == spec.marginals);
}
