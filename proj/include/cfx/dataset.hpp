// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic attribute-controlled image family. Every image is rendered from
// a binary attribute vector plus a persistent identity texture, so attribute
// and identity ground truth are exact. Attribute 0 (the classification
// target) is a mouth stroke curving up or down; the other attributes are
// background shade, border frame, ornament block, eye style, and a side
// stripe. Attribute 1 is sampled correlated with attribute 0 so correlation
// metrics have signal.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfx/image_io.hpp"
#include "cfx/tensor.hpp"

namespace cfx {

struct SyntheticSpec {
    int channels = 1;
    int image_size = 32;      // square
    int num_attributes = 6;   // fixed renderer layout; kept explicit for metrics
    int class_attribute = 0;
    int correlated_attribute = 1;
    double correlation = 0.6;
    std::vector<double> marginals = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
    int identities = 16;
    double noise_sigma = 0.03;
    int train_count = 2000;
    int val_count = 200;
    int test_count = 200;
    uint64_t seed = 7;
};

using AttributeVector = std::vector<uint8_t>;

struct LabeledDataset {
    std::vector<Tensor<float>> images;
    std::vector<int> labels;
    std::vector<AttributeVector> attributes;
    std::vector<int> identity_ids;
    std::string split;

    size_t size() const { return images.size(); }
};

namespace detail {
inline double id_tex(int id, int y, int x) {
    double fx = 0.35 + 0.13 * (id % 4);
    double fy = 0.21 + 0.17 * ((id / 4) % 4);
    return 0.12 * std::sin(fx * x + fy * y + 0.77 * id);
}
} // namespace detail

/// Deterministic render of one image from its attribute vector and identity.
/// `noise_rng` supplies the additive pixel noise; pass the same seed to get
/// pixel-identical renders.
inline Tensor<float> render_image(const AttributeVector& a, int identity,
                                  const SyntheticSpec& spec, Rng& noise_rng) {
    const int S = spec.image_size;
    const double sc = S / 32.0;
    auto px = [&](double v) { return static_cast<int>(std::lround(v * sc)); };
    Tensor<float> gray({1, S, S});

    const float bg = a[1] ? 0.35f : -0.35f;
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
            gray.at3(0, y, x) = bg + static_cast<float>(detail::id_tex(identity, y, x));

    auto put = [&](int y, int x, float v) {
        if (y >= 0 && y < S && x >= 0 && x < S) gray.at3(0, y, x) = v;
    };

    if (a[2]) {  // border frame
        for (int i = 0; i < S; ++i) {
            put(0, i, -0.9f);
            put(S - 1, i, -0.9f);
            put(i, 0, -0.9f);
            put(i, S - 1, -0.9f);
        }
    }
    if (a[3]) {  // ornament block
        for (int y = px(3); y <= px(5); ++y)
            for (int x = px(3); x <= px(5); ++x) put(y, x, 0.95f);
    }
    if (a[5]) {  // side stripe
        for (int y = px(4); y <= px(27); ++y) {
            put(y, px(27), -0.9f);
            put(y, px(28), -0.9f);
        }
    }
    // eyes: bars (a4=1) or dots (a4=0)
    if (a[4]) {
        for (int y = px(10); y <= px(11); ++y)
            for (int x = px(8); x <= px(12); ++x) put(y, x, -0.9f);
        for (int y = px(10); y <= px(11); ++y)
            for (int x = px(19); x <= px(23); ++x) put(y, x, -0.9f);
    } else {
        for (int y = px(10); y <= px(11); ++y)
            for (int x = px(10); x <= px(11); ++x) put(y, x, -0.9f);
        for (int y = px(10); y <= px(11); ++y)
            for (int x = px(21); x <= px(22); ++x) put(y, x, -0.9f);
    }
    // mouth: up-curved (a0=1, "smile") or down-curved
    {
        const int cx = px(16);
        const int half = px(6);
        for (int dx = -half; dx <= half; ++dx) {
            double rel = half ? static_cast<double>(dx) / half : 0.0;
            int off = static_cast<int>(std::lround(3.0 * sc * rel * rel));
            int y0 = a[0] ? px(24) - off : px(21) + off;
            put(y0, cx + dx, -0.9f);
            put(y0 + 1, cx + dx, -0.9f);
        }
    }

    if (spec.noise_sigma > 0) {
        std::normal_distribution<double> nd(0.0, spec.noise_sigma);
        for (auto& v : gray.data) v += static_cast<float>(nd(noise_rng));
    }
    clamp_inplace(gray, -1.0f, 1.0f);

    if (spec.channels == 1) return gray;
    Tensor<float> img({spec.channels, S, S});
    for (int c = 0; c < spec.channels; ++c)
        for (int64_t i = 0; i < gray.numel(); ++i)
            img[static_cast<int64_t>(c) * gray.numel() + i] = gray[i];
    return img;
}

/// Rule-based exact attribute decoder for renderer-family images.
inline AttributeVector oracle_attributes(const Tensor<float>& img, const SyntheticSpec& spec,
                                         bool* low_confidence = nullptr) {
    const int S = img.shape[1];
    const double sc = S / 32.0;
    auto px = [&](double v) { return static_cast<int>(std::lround(v * sc)); };
    auto at = [&](int y, int x) { return static_cast<double>(img.at3(0, y, x)); };
    auto region_mean = [&](int y0, int y1, int x0, int x1) {
        double s = 0;
        int n = 0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                s += at(y, x);
                ++n;
            }
        return n ? s / n : 0.0;
    };

    AttributeVector a(static_cast<size_t>(spec.num_attributes), 0);
    double min_margin = 1e9;
    auto decide = [&](double stat, double threshold) {
        min_margin = std::min(min_margin, std::abs(stat - threshold));
        return stat > threshold ? uint8_t(1) : uint8_t(0);
    };

    // a1 background shade from a quiet patch
    a[1] = decide(region_mean(px(14), px(18), px(3), px(7)), 0.0);
    // a2 border frame
    {
        double s = 0;
        int n = 0;
        for (int i = 0; i < S; ++i) {
            s += at(0, i) + at(S - 1, i) + at(i, 0) + at(i, S - 1);
            n += 4;
        }
        a[2] = decide(-(s / n), 0.6);
    }
    // a3 ornament
    a[3] = decide(region_mean(px(3), px(5), px(3), px(5)), 0.7);
    // a4 eye style: bars extend to the outer eye columns. The threshold must
    // sit between the stroke level (0.9) and the darkest background plus
    // texture (about 0.47), so 0.65 splits the two cases with margin.
    a[4] = decide(-region_mean(px(10), px(11), px(8), px(9)), 0.65);
    // a5 stripe, same threshold reasoning as the eye bars
    a[5] = decide(-region_mean(px(6), px(25), px(27), px(28)), 0.65);
    // a0 mouth curvature: stroke row at the ends vs the center
    {
        auto band_argmin_row = [&](int x0, int x1) {
            double acc = 0;
            int cnt = 0;
            for (int x = x0; x <= x1; ++x) {
                int best_y = px(19);
                double best_v = 1e9;
                for (int y = px(19); y <= px(27); ++y)
                    if (at(y, x) < best_v) {
                        best_v = at(y, x);
                        best_y = y;
                    }
                acc += best_y;
                ++cnt;
            }
            return acc / cnt;
        };
        double left = band_argmin_row(px(10), px(11));
        double center = band_argmin_row(px(15), px(17));
        a[0] = decide(center - left, 0.0);
    }
    if (low_confidence) *low_confidence = min_margin < 0.1;
    return a;
}

namespace detail {
inline uint64_t mix_seed(uint64_t seed, uint64_t split, uint64_t index) {
    uint64_t h = seed * 0x9E3779B97F4A7C15ull;
    h ^= (split + 1) * 0xC2B2AE3D27D4EB4Full;
    h ^= (index + 1) * 0x165667B19E3779F9ull;
    h ^= h >> 29;
    h *= 0xBF58476D1CE4E5B9ull;
    h ^= h >> 32;
    return h;
}
} // namespace detail

inline LabeledDataset generate_split(const SyntheticSpec& spec, const std::string& split,
                                     int count, int split_index) {
    LabeledDataset ds;
    ds.split = split;
    ds.images.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(detail::mix_seed(spec.seed, static_cast<uint64_t>(split_index),
                                 static_cast<uint64_t>(i)));
        std::uniform_real_distribution<double> ud(0.0, 1.0);
        AttributeVector a(static_cast<size_t>(spec.num_attributes), 0);
        for (int k = 0; k < spec.num_attributes; ++k)
            a[static_cast<size_t>(k)] = ud(rng) < spec.marginals[static_cast<size_t>(k)] ? 1 : 0;
        // correlate one confounder with the class attribute
        double q = (1.0 + spec.correlation) / 2.0;
        a[static_cast<size_t>(spec.correlated_attribute)] =
            ud(rng) < q ? a[static_cast<size_t>(spec.class_attribute)]
                        : uint8_t(1 - a[static_cast<size_t>(spec.class_attribute)]);
        int identity = static_cast<int>(ud(rng) * spec.identities);
        if (identity >= spec.identities) identity = spec.identities - 1;
        ds.images.push_back(render_image(a, identity, spec, rng));
        ds.labels.push_back(a[static_cast<size_t>(spec.class_attribute)]);
        ds.attributes.push_back(a);
        ds.identity_ids.push_back(identity);
    }
    return ds;
}

struct DatasetBundle {
    LabeledDataset train, val, test;
};

inline DatasetBundle generate_dataset(const SyntheticSpec& spec) {
    DatasetBundle b;
    b.train = generate_split(spec, "train", spec.train_count, 0);
    b.val = generate_split(spec, "val", spec.val_count, 1);
    b.test = generate_split(spec, "test", spec.test_count, 2);
    return b;
}

// ---------------------------------------------------------------------------
// Disk layout: <dir>/<split>/img_00000.png plus <dir>/manifest.json

inline nlohmann::json spec_to_json(const SyntheticSpec& s) {
    return nlohmann::json{{"channels", s.channels},
                          {"image_size", s.image_size},
                          {"num_attributes", s.num_attributes},
                          {"class_attribute", s.class_attribute},
                          {"correlated_attribute", s.correlated_attribute},
                          {"correlation", s.correlation},
                          {"marginals", s.marginals},
                          {"identities", s.identities},
                          {"noise_sigma", s.noise_sigma},
                          {"train_count", s.train_count},
                          {"val_count", s.val_count},
                          {"test_count", s.test_count},
                          {"seed", s.seed}};
}

inline SyntheticSpec spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.channels = j.at("channels");
    s.image_size = j.at("image_size");
    s.num_attributes = j.at("num_attributes");
    s.class_attribute = j.at("class_attribute");
    s.correlated_attribute = j.at("correlated_attribute");
    s.correlation = j.at("correlation");
    s.marginals = j.at("marginals").get<std::vector<double>>();
    s.identities = j.at("identities");
    s.noise_sigma = j.at("noise_sigma");
    s.train_count = j.at("train_count");
    s.val_count = j.at("val_count");
    s.test_count = j.at("test_count");
    s.seed = j.at("seed");
    return s;
}

inline void save_dataset(const DatasetBundle& b, const SyntheticSpec& spec,
                         const std::string& dir) {
    namespace fs = std::filesystem;
    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["spec"] = spec_to_json(spec);
    for (const LabeledDataset* ds : {&b.train, &b.val, &b.test}) {
        fs::create_directories(fs::path(dir) / ds->split);
        nlohmann::json records = nlohmann::json::array();
        for (size_t i = 0; i < ds->size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "img_%05zu.png", i);
            std::string rel = ds->split + "/" + name;
            write_png((fs::path(dir) / rel).string(), ds->images[i]);
            records.push_back({{"file", rel},
                               {"label", ds->labels[i]},
                               {"attributes", ds->attributes[i]},
                               {"identity", ds->identity_ids[i]}});
        }
        manifest["splits"][ds->split] = std::move(records);
    }
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
}

inline DatasetBundle load_dataset(const std::string& dir, SyntheticSpec* spec_out = nullptr) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw std::runtime_error("missing dataset manifest in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(in);
    if (spec_out) *spec_out = spec_from_json(manifest.at("spec"));
    DatasetBundle b;
    for (LabeledDataset* ds : {&b.train, &b.val, &b.test}) {
        ds->split = ds == &b.train ? "train" : ds == &b.val ? "val" : "test";
        for (const auto& rec : manifest.at("splits").at(ds->split)) {
            ds->images.push_back(read_png((fs::path(dir) / rec.at("file").get<std::string>()).string()));
            ds->labels.push_back(rec.at("label"));
            ds->attributes.push_back(rec.at("attributes").get<AttributeVector>());
            ds->identity_ids.push_back(rec.at("identity"));
        }
    }
    return b;
}

} // namespace cfx
