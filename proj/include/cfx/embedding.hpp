// SPDX-License-Identifier: Apache-2.0
#pragma once

// Token-embedding table and prompt templates. Prompts render to ordered
// embedding sequences; the fixed template words and the null token are
// frozen, context/class tokens are the learnable rows.

#include <map>
#include <stdexcept>
#include <vector>

#include "cfx/tensor.hpp"

namespace cfx {

namespace tok {
// fixed vocabulary
constexpr int kNull = 0;
constexpr int kA = 1;
constexpr int kPicture = 2;
constexpr int kImage = 3;
constexpr int kWith = 4;
constexpr int kAn = 5;
constexpr int kStop = 6;  // end-of-prompt marker, class template only
// frozen attribute-caption vocabulary used while pretraining the denoiser
inline int attribute(int attr_index, int bit) { return 10 + attr_index * 2 + bit; }
// learnable rows
inline int context(int i) { return 100 + i; }
inline int cls(int class_id, int i) { return 200 + class_id * 16 + i; }
} // namespace tok

/// Ordered embedding vectors handed to the denoiser: rows [len, cond_dim].
template <typename T>
struct CondSeq {
    std::vector<int> token_ids;
    Tensor<T> rows;  // [len, cond_dim]

    int length() const { return rows.shape.empty() ? 0 : rows.shape[0]; }
    int cond_dim() const { return rows.shape.size() < 2 ? 0 : rows.shape[1]; }
};

struct PromptTemplate {
    enum class Kind { Context, Class, Empty };
    Kind kind = Kind::Empty;
    std::vector<int> context_token_ids;
    std::vector<int> class_token_ids;  // empty for Context kind

    static PromptTemplate context_prompt(int n_context) {
        PromptTemplate p;
        p.kind = Kind::Context;
        for (int i = 0; i < n_context; ++i) p.context_token_ids.push_back(tok::context(i));
        return p;
    }
    static PromptTemplate class_prompt(int n_context, int class_id, int n_class) {
        PromptTemplate p;
        p.kind = Kind::Class;
        for (int i = 0; i < n_context; ++i) p.context_token_ids.push_back(tok::context(i));
        for (int i = 0; i < n_class; ++i) p.class_token_ids.push_back(tok::cls(class_id, i));
        return p;
    }
    static PromptTemplate empty_prompt() { return PromptTemplate{}; }

    // rendered token order
    std::vector<int> token_ids() const {
        switch (kind) {
            case Kind::Empty:
                return {tok::kNull};
            case Kind::Context: {
                std::vector<int> ids{tok::kA};
                ids.insert(ids.end(), context_token_ids.begin(), context_token_ids.end());
                ids.push_back(tok::kPicture);
                return ids;
            }
            case Kind::Class: {
                std::vector<int> ids{tok::kA};
                ids.insert(ids.end(), context_token_ids.begin(), context_token_ids.end());
                ids.push_back(tok::kImage);
                ids.push_back(tok::kWith);
                ids.push_back(tok::kAn);
                ids.insert(ids.end(), class_token_ids.begin(), class_token_ids.end());
                ids.push_back(tok::kStop);
                return ids;
            }
        }
        return {tok::kNull};
    }
};

struct EmbeddingTable {
    int cond_dim = 0;
    std::map<int, std::vector<float>> fixed_tokens;
    std::map<int, std::vector<float>> learnable_tokens;

    bool has(int id) const { return fixed_tokens.count(id) || learnable_tokens.count(id); }
    const std::vector<float>& row(int id) const {
        auto it = fixed_tokens.find(id);
        if (it != fixed_tokens.end()) return it->second;
        auto jt = learnable_tokens.find(id);
        if (jt != learnable_tokens.end()) return jt->second;
        throw std::out_of_range("unknown token id " + std::to_string(id));
    }
    std::vector<float>& learnable_row(int id) {
        auto it = learnable_tokens.find(id);
        if (it == learnable_tokens.end())
            throw std::out_of_range("token id " + std::to_string(id) + " is not learnable");
        return it->second;
    }

    /// RMS over all fixed-token entries; the init scale for new learnable rows.
    double fixed_rms() const {
        double ss = 0;
        int64_t n = 0;
        for (const auto& [id, r] : fixed_tokens) {
            for (float v : r) ss += static_cast<double>(v) * v;
            n += static_cast<int64_t>(r.size());
        }
        return n ? std::sqrt(ss / static_cast<double>(n)) : 1.0;
    }

    void add_fixed(int id, std::vector<float> r) {
        if (has(id)) throw std::invalid_argument("duplicate token id");
        fixed_tokens.emplace(id, std::move(r));
    }
    void add_learnable(int id, std::vector<float> r) {
        if (has(id)) throw std::invalid_argument("duplicate token id");
        learnable_tokens.emplace(id, std::move(r));
    }

    uint64_t fixed_hash() const {
        uint64_t h = 1469598103934665603ull;
        for (const auto& [id, r] : fixed_tokens) {
            h = fnv1a(&id, sizeof(id), h);
            h = fnv1a(r.data(), r.size() * sizeof(float), h);
        }
        return h;
    }

    /// Table with the standard fixed vocabulary (template words, null token,
    /// and 2K attribute-caption tokens), seeded random rows.
    static EmbeddingTable make_base(int cond_dim, int num_attributes, uint64_t seed) {
        EmbeddingTable t;
        t.cond_dim = cond_dim;
        Rng rng(seed);
        std::normal_distribution<double> nd(0.0, 1.0);
        auto fresh = [&] {
            std::vector<float> r(static_cast<size_t>(cond_dim));
            for (auto& v : r) v = static_cast<float>(nd(rng) * 0.5);
            return r;
        };
        for (int id :
             {tok::kNull, tok::kA, tok::kPicture, tok::kImage, tok::kWith, tok::kAn, tok::kStop})
            t.add_fixed(id, fresh());
        for (int a = 0; a < num_attributes; ++a)
            for (int b = 0; b < 2; ++b) t.add_fixed(tok::attribute(a, b), fresh());
        return t;
    }
};

template <typename T = float>
CondSeq<T> render_prompt(const PromptTemplate& tmpl, const EmbeddingTable& table) {
    CondSeq<T> seq;
    seq.token_ids = tmpl.token_ids();
    const int len = static_cast<int>(seq.token_ids.size());
    seq.rows = Tensor<T>({len, table.cond_dim});
    for (int i = 0; i < len; ++i) {
        const auto& r = table.row(seq.token_ids[static_cast<size_t>(i)]);
        for (int j = 0; j < table.cond_dim; ++j)
            seq.rows.at2(i, j) = static_cast<T>(r[static_cast<size_t>(j)]);
    }
    return seq;
}

/// Sequence of raw token ids (used for the attribute captions in pretraining).
template <typename T = float>
CondSeq<T> render_tokens(const std::vector<int>& ids, const EmbeddingTable& table) {
    CondSeq<T> seq;
    seq.token_ids = ids;
    const int len = static_cast<int>(ids.size());
    seq.rows = Tensor<T>({len, table.cond_dim});
    for (int i = 0; i < len; ++i) {
        const auto& r = table.row(ids[static_cast<size_t>(i)]);
        for (int j = 0; j < table.cond_dim; ++j)
            seq.rows.at2(i, j) = static_cast<T>(r[static_cast<size_t>(j)]);
    }
    return seq;
}

template <typename T = float>
CondSeq<T> null_cond(const EmbeddingTable& table) {
    return render_prompt<T>(PromptTemplate::empty_prompt(), table);
}

} // namespace cfx
