#pragma once

#include <span>
#include <vector>

#include "kvx2l/chunking.hpp"
#include "kvx2l/engine.hpp"

namespace kvx2l {

enum class Level : uint8_t { Low = 0, High = 1 };

inline char level_char(Level l) { return l == Level::Low ? 'L' : 'H'; }

struct CompressionConfig {
    int alpha_low = 2;
    int alpha_high = 32;
    // alpha_low == alpha_high collapses both passes into one level; kept
    // behind a flag so accidental equal ratios still fail loudly.
    bool allow_equal = false;

    void validate() const;
    int ratio(Level level) const { return level == Level::Low ? alpha_low : alpha_high; }
};

// Retained summary KVs for one chunk at one level. kv holds one KVPair per
// summary token (all layers inside), positions as assigned during the
// interleaved prefill of this pass.
struct CompressedKV {
    int chunk_index = 0;
    Level level = Level::Low;
    int source_width = 0;
    int ratio = 1;
    std::vector<KVPair> kv;
};

// Concatenation of the summary KVs of several chunks, in the given order.
std::vector<KVPair> flatten_context(std::span<const CompressedKV> summaries);

// Encodes one interleaved chunk against the summary KVs of all prior chunks
// of the same pass and keeps only the KV entries at summary slots.
CompressedKV prefill_chunk(const Engine& engine, std::span<const TokenEmbedding> interleaved,
                           const SummaryLayout& layout, std::span<const CompressedKV> prior_summaries, Level level);

struct BilevelResult {
    std::vector<CompressedKV> low;   // one per chunk, ratio alpha_low
    std::vector<CompressedKV> high;  // one per chunk, ratio alpha_high
};

// Runs the two independent compression passes over the chunk list. Neither
// pass sees the other's summaries.
BilevelResult compress_bilevel(const Engine& engine, const VideoTokens& tokens, std::span<const ChunkSpec> chunks,
                               const CompressionConfig& config);

// Single-level pass, also the building block of compress_bilevel.
std::vector<CompressedKV> compress_level(const Engine& engine, const VideoTokens& tokens,
                                         std::span<const ChunkSpec> chunks, int ratio, Level level);

}  // namespace kvx2l
