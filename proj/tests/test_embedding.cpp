// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "cfx/distill.hpp"
#include "cfx/embedding.hpp"

using namespace cfx;

TEST_CASE("prompt template token layout") {
    SECTION("context template with 3 tokens renders length 5") {
        auto ids = PromptTemplate::context_prompt(3).token_ids();
        REQUIRE(ids.size() == 5);
        REQUIRE(ids.front() == tok::kA);
        REQUIRE(ids.back() == tok::kPicture);
        for (int i = 0; i < 3; ++i) REQUIRE(ids[static_cast<size_t>(1 + i)] == tok::context(i));
    }
    SECTION("class template with 1 context and 1 class token renders length 7") {
        auto ids = PromptTemplate::class_prompt(1, 0, 1).token_ids();
        REQUIRE(ids.size() == 7);
    }
    SECTION("class template with 3 + 3 has 5 fixed and 6 learnable positions") {
        auto ids = PromptTemplate::class_prompt(3, 1, 3).token_ids();
        REQUIRE(ids.size() == 11);
        int fixed = 0, learnable = 0;
        for (int id : ids) (id < 100 ? fixed : learnable) += 1;
        REQUIRE(fixed == 5);
        REQUIRE(learnable == 6);
    }
    SECTION("empty template is the single null token") {
        auto ids = PromptTemplate::empty_prompt().token_ids();
        REQUIRE(ids == std::vector<int>{tok::kNull});
    }
}

TEST_CASE("token id spaces are disjoint") {
    std::vector<int> fixed{tok::kNull,  tok::kA,  tok::kPicture, tok::kImage,
                           tok::kWith,  tok::kAn, tok::kStop};
    for (int a = 0; a < 8; ++a)
        for (int b = 0; b < 2; ++b) fixed.push_back(tok::attribute(a, b));
    for (int f : fixed) {
        for (int i = 0; i < 16; ++i) REQUIRE(f != tok::context(i));
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 16; ++i) REQUIRE(f != tok::cls(c, i));
    }
    std::sort(fixed.begin(), fixed.end());
    REQUIRE(std::adjacent_find(fixed.begin(), fixed.end()) == fixed.end());
}

TEST_CASE("embedding table rendering and errors") {
    EmbeddingTable t = EmbeddingTable::make_base(8, 6, 42);
    SECTION("render_prompt produces [len, cond_dim] rows") {
        auto seq = render_prompt<float>(PromptTemplate::context_prompt(0), t);
        REQUIRE(seq.rows.shape == std::vector<int>{2, 8});
        REQUIRE(seq.length() == 2);
        REQUIRE(seq.cond_dim() == 8);
    }
    SECTION("unknown token id is an error") {
        REQUIRE_THROWS_AS(render_prompt<float>(PromptTemplate::context_prompt(1), t),
                          std::out_of_range);
    }
    SECTION("null conditioning is the single null row") {
        auto seq = null_cond<float>(t);
        REQUIRE(seq.token_ids == std::vector<int>{tok::kNull});
        const auto& row = t.row(tok::kNull);
        for (int j = 0; j < 8; ++j) REQUIRE(seq.rows.at2(0, j) == row[static_cast<size_t>(j)]);
    }
    SECTION("duplicate ids rejected") {
        REQUIRE_THROWS_AS(t.add_fixed(tok::kA, std::vector<float>(8)), std::invalid_argument);
        t.add_learnable(tok::context(0), std::vector<float>(8));
        REQUIRE_THROWS_AS(t.add_learnable(tok::context(0), std::vector<float>(8)),
                          std::invalid_argument);
    }
    SECTION("learnable_row refuses fixed ids") {
        REQUIRE_THROWS_AS(t.learnable_row(tok::kA), std::out_of_range);
    }
}

TEST_CASE("make_base is seed deterministic") {
    auto a = EmbeddingTable::make_base(16, 6, 7);
    auto b = EmbeddingTable::make_base(16, 6, 7);
    auto c = EmbeddingTable::make_base(16, 6, 8);
    REQUIRE(a.fixed_hash() == b.fixed_hash());
    REQUIRE(a.fixed_hash() != c.fixed_hash());
}

TEST_CASE("init_learnable_rows scales by the fixed RMS") {
    EmbeddingTable t = EmbeddingTable::make_base(16, 6, 7);
    const uint64_t before = t.fixed_hash();
    init_learnable_rows(t, {tok::context(0), tok::context(1)}, 3);
    REQUIRE(t.fixed_hash() == before);
    REQUIRE(t.learnable_tokens.size() == 2);
    double ss = 0;
    for (const auto& [id, r] : t.learnable_tokens)
        for (float v : r) ss += static_cast<double>(v) * v;
    const double rms = std::sqrt(ss / 32.0);
    // loose: the sampled RMS should be in the right ballpark of the target
    REQUIRE(rms > 0.2 * t.fixed_rms());
    REQUIRE(rms < 3.0 * t.fixed_rms());
    REQUIRE_THROWS_AS(init_learnable_rows(t, {tok::context(0)}, 4), std::invalid_argument);
}
