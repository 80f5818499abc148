#include <cstring>

#include "doctest.h"
#include "kvx2l/compressor.hpp"

using namespace kvx2l;

namespace {

EngineConfig test_config(WeightMode mode, int layers = 2) {
    EngineConfig cfg;
    cfg.layers = layers;
    cfg.heads = 2;
    cfg.head_dim = 4;
    cfg.embed_dim = 8;
    cfg.vocab = 16;
    cfg.seed = 17;
    cfg.mode = mode;
    return cfg;
}

VideoTokens gauss_tokens(int64_t n, int tokens_per_frame, uint64_t seed, int dim = 8) {
    VideoTokens out;
    out.tokens_per_frame = tokens_per_frame;
    SplitMix64 rng(seed);
    for (int64_t i = 0; i < n; ++i) {
        TokenEmbedding t;
        t.position = i;
        t.vec.resize(static_cast<size_t>(dim));
        for (auto& x : t.vec) x = static_cast<float>(rng.next_gauss());
        out.tokens.push_back(std::move(t));
    }
    return out;
}

bool same_bits(const CompressedKV& a, const CompressedKV& b) {
    if (a.kv.size() != b.kv.size()) return false;
    for (size_t i = 0; i < a.kv.size(); ++i) {
        if (a.kv[i].position != b.kv[i].position) return false;
        if (std::memcmp(a.kv[i].key.data(), b.kv[i].key.data(), a.kv[i].key.size() * sizeof(float)) != 0) return false;
        if (std::memcmp(a.kv[i].value.data(), b.kv[i].value.data(), a.kv[i].value.size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("compression config validation") {
    CompressionConfig ok{2, 32, false};
    ok.validate();
    CompressionConfig equal{4, 4, false};
    CHECK_THROWS_AS(equal.validate(), ConfigError);
    equal.allow_equal = true;
    equal.validate();
    CompressionConfig inverted{8, 2, false};
    CHECK_THROWS_AS(inverted.validate(), ConfigError);
}

TEST_CASE("first chunk compresses to the layout-forced entry count") {
    Engine e = Engine::init(test_config(WeightMode::SeededRandom));
    VideoTokens tokens = gauss_tokens(4, 1, 3);
    auto chunks = partition(tokens, 4);
    auto low = compress_level(e, tokens, chunks, 2, Level::Low);
    REQUIRE(low.size() == 1);
    CHECK(low[0].kv.size() == 2);
    CHECK(low[0].source_width == 4);
    CHECK(low[0].ratio == 2);
}

TEST_CASE("averaging mode: every retained summary value is the mean of what it sees") {
    Engine e = Engine::init(test_config(WeightMode::Averaging));
    VideoTokens tokens = gauss_tokens(30, 1, 5);
    auto chunks = partition(tokens, 10);  // 3 chunks of 10
    const int ratio = 3;
    auto out = compress_level(e, tokens, chunks, ratio, Level::Low);
    REQUIRE(out.size() == 3);

    // Reconstruct the interleaved streams and check the layer-2 value of each
    // summary equals the brute-force mean of the layer-1 values visible at
    // its position (prior summaries of the same pass plus the causal prefix).
    const int E = 8;
    std::vector<std::vector<double>> prior_l1_values;  // layer-1 values of retained summaries
    int64_t next_pos = 0;
    for (size_t c = 0; c < 3; ++c) {
        auto layout = layout_summaries(chunks[c], ratio);
        auto block = interleave(std::span<const TokenEmbedding>(tokens.tokens.data() + chunks[c].start,
                                                                static_cast<size_t>(chunks[c].width)),
                                layout, e.summary_token_embedding(), next_pos);
        next_pos += static_cast<int64_t>(block.size());

        // layer-1 values of the block are the input embeddings
        std::vector<std::vector<double>> block_l1(block.size(), std::vector<double>(E));
        for (size_t i = 0; i < block.size(); ++i)
            for (int d = 0; d < E; ++d) block_l1[i][static_cast<size_t>(d)] = block[i].vec[static_cast<size_t>(d)];

        auto slots = summary_slot_indices(layout);
        REQUIRE(out[c].kv.size() == slots.size());
        for (size_t s = 0; s < slots.size(); ++s) {
            std::vector<double> mean(E, 0.0);
            size_t count = prior_l1_values.size() + static_cast<size_t>(slots[s]) + 1;
            for (const auto& v : prior_l1_values)
                for (int d = 0; d < E; ++d) mean[static_cast<size_t>(d)] += v[static_cast<size_t>(d)];
            for (int i = 0; i <= slots[s]; ++i)
                for (int d = 0; d < E; ++d) mean[static_cast<size_t>(d)] += block_l1[static_cast<size_t>(i)][static_cast<size_t>(d)];
            for (int d = 0; d < E; ++d) mean[static_cast<size_t>(d)] /= static_cast<double>(count);
            for (int d = 0; d < E; ++d)
                CHECK(out[c].kv[s].value[static_cast<size_t>(E + d)] ==
                      doctest::Approx(mean[static_cast<size_t>(d)]).epsilon(1e-6).scale(1.0));
        }
        for (int slot : slots) prior_l1_values.push_back(block_l1[static_cast<size_t>(slot)]);
    }
}

TEST_CASE("chunk i sees exactly the prior summary KVs of its own pass") {
    Engine e = Engine::init(test_config(WeightMode::Averaging));
    VideoTokens tokens = gauss_tokens(30, 1, 7);
    auto chunks = partition(tokens, 10);
    auto low = compress_level(e, tokens, chunks, 2, Level::Low);
    // positions inside chunk 3's block start after sum of interleaved widths
    // of chunks 1..2; its first retained summary's visible set size is
    // checked indirectly by position bookkeeping here.
    int64_t expected_start = 0;
    for (int c = 0; c < 2; ++c) expected_start += 10 + 5;
    CHECK(low[2].kv.front().position >= expected_start);
    int64_t prior_entries = 0;
    for (int c = 0; c < 2; ++c) prior_entries += static_cast<int64_t>(low[static_cast<size_t>(c)].kv.size());
    CHECK(prior_entries == 10);
}

TEST_CASE("bilevel entry counts follow the layout arithmetic") {
    Engine e = Engine::init(test_config(WeightMode::SeededRandom));
    VideoTokens tokens = gauss_tokens(13 * 64, 1, 9);
    auto chunks = partition(tokens, 64);
    CompressionConfig cfg{2, 32, false};
    BilevelResult res = compress_bilevel(e, tokens, chunks, cfg);
    REQUIRE(res.low.size() == 13);
    REQUIRE(res.high.size() == 13);
    for (const auto& kv : res.low) CHECK(kv.kv.size() == 32);
    for (const auto& kv : res.high) CHECK(kv.kv.size() == 2);

    int64_t low_total = 0, high_total = 0;
    for (const auto& kv : res.low) low_total += static_cast<int64_t>(kv.kv.size());
    for (const auto& kv : res.high) high_total += static_cast<int64_t>(kv.kv.size());
    CHECK(low_total == 13 * 64 / 2);
    CHECK(high_total == 13 * 64 / 32);
}

TEST_CASE("equal ratios in degenerate mode produce identical passes") {
    Engine e = Engine::init(test_config(WeightMode::SeededRandom));
    VideoTokens tokens = gauss_tokens(48, 1, 11);
    auto chunks = partition(tokens, 16);
    CompressionConfig cfg{4, 4, true};
    BilevelResult res = compress_bilevel(e, tokens, chunks, cfg);
    REQUIRE(res.low.size() == res.high.size());
    for (size_t c = 0; c < res.low.size(); ++c) CHECK(same_bits(res.low[c], res.high[c]));
}

TEST_CASE("pass order does not matter") {
    Engine e = Engine::init(test_config(WeightMode::SeededRandom));
    VideoTokens tokens = gauss_tokens(60, 1, 13);
    auto chunks = partition(tokens, 20);
    auto low_first = compress_level(e, tokens, chunks, 2, Level::Low);
    auto high = compress_level(e, tokens, chunks, 8, Level::High);
    auto low_second = compress_level(e, tokens, chunks, 2, Level::Low);
    REQUIRE(low_first.size() == low_second.size());
    for (size_t c = 0; c < low_first.size(); ++c) CHECK(same_bits(low_first[c], low_second[c]));
    CHECK(high.size() == chunks.size());
}

TEST_CASE("chain causality: editing chunk j only changes chunks >= j") {
    // Three layers, so prior-chunk content reaches the retained KVs: the
    // layer-3 tensors project hiddens that attended over layer-2 values.
    Engine e = Engine::init(test_config(WeightMode::SeededRandom, 3));
    VideoTokens tokens = gauss_tokens(40, 1, 15);
    auto chunks = partition(tokens, 10);
    auto base = compress_level(e, tokens, chunks, 2, Level::Low);

    VideoTokens edited = tokens;
    for (int i = 0; i < 10; ++i) edited.tokens[static_cast<size_t>(20 + i)].vec[0] += 1.0f;  // chunk 2
    auto changed = compress_level(e, edited, chunks, 2, Level::Low);

    CHECK(same_bits(base[0], changed[0]));
    CHECK(same_bits(base[1], changed[1]));
    CHECK_FALSE(same_bits(base[2], changed[2]));
    CHECK_FALSE(same_bits(base[3], changed[3]));
}

TEST_CASE("prefill_chunk validates prior summaries") {
    Engine e = Engine::init(test_config(WeightMode::SeededRandom));
    VideoTokens tokens = gauss_tokens(20, 1, 19);
    auto chunks = partition(tokens, 10);
    auto layout0 = layout_summaries(chunks[0], 2);
    auto layout1 = layout_summaries(chunks[1], 2);
    auto block0 = interleave(std::span<const TokenEmbedding>(tokens.tokens.data(), 10), layout0,
                             e.summary_token_embedding(), 0);
    auto c0 = prefill_chunk(e, block0, layout0, {}, Level::Low);

    auto block1 = interleave(std::span<const TokenEmbedding>(tokens.tokens.data() + 10, 10), layout1,
                             e.summary_token_embedding(), 15);
    CompressedKV wrong_level = c0;
    wrong_level.level = Level::High;
    std::vector<CompressedKV> priors{wrong_level};
    CHECK_THROWS_AS(prefill_chunk(e, block1, layout1, priors, Level::Low), PreconditionError);

    CompressedKV future = c0;
    future.chunk_index = 5;
    priors = {future};
    CHECK_THROWS_AS(prefill_chunk(e, block1, layout1, priors, Level::Low), PreconditionError);
}
