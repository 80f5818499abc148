#pragma once

#include <span>
#include <vector>

#include "kvx2l/engine.hpp"

namespace kvx2l {

// Token sequence with frame grouping: token i belongs to frame i / tokens_per_frame.
struct VideoTokens {
    int tokens_per_frame = 1;
    std::vector<TokenEmbedding> tokens;

    int64_t size() const { return static_cast<int64_t>(tokens.size()); }
    int frame_count() const {
        return static_cast<int>((size() + tokens_per_frame - 1) / tokens_per_frame);
    }
};

struct ChunkSpec {
    int index = 0;
    int64_t start = 0;  // token offset
    int width = 0;      // tokens
    int first_frame = 0;
    int last_frame = 0;
};

// Contiguous, non-overlapping cover of all tokens; every chunk spans
// frames_per_chunk frames except possibly a shorter final one.
std::vector<ChunkSpec> partition(const VideoTokens& tokens, int frames_per_chunk);

// Summary placement for one chunk at compression ratio `ratio`:
// summary_count = max(1, ceil(width / ratio)), offsets uniform with any
// shorter spacing group placed last. insert_offsets[i] is the count of
// regular tokens preceding summary i+1.
struct SummaryLayout {
    ChunkSpec chunk;
    int ratio = 1;
    int summary_count = 0;
    std::vector<int> insert_offsets;
};

SummaryLayout layout_summaries(const ChunkSpec& chunk, int ratio);

// Indices of the summary slots within the interleaved sequence of
// width + summary_count elements.
std::vector<int> summary_slot_indices(const SummaryLayout& layout);

// Builds the interleaved token block: regular tokens in original order with
// summary placeholders at the layout offsets. Positions are assigned
// consecutively from start_position.
std::vector<TokenEmbedding> interleave(std::span<const TokenEmbedding> chunk_tokens, const SummaryLayout& layout,
                                       const std::vector<float>& summary_embedding, int64_t start_position);

}  // namespace kvx2l
