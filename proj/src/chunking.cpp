#include "kvx2l/chunking.hpp"

#include <algorithm>

namespace kvx2l {

std::vector<ChunkSpec> partition(const VideoTokens& tokens, int frames_per_chunk) {
    if (tokens.tokens.empty()) throw PreconditionError("partition: empty token sequence");
    if (frames_per_chunk < 1) throw PreconditionError("partition: frames_per_chunk must be >= 1");
    if (tokens.tokens_per_frame < 1) throw PreconditionError("partition: tokens_per_frame must be >= 1");

    const int64_t n = tokens.size();
    const int64_t chunk_tokens = static_cast<int64_t>(frames_per_chunk) * tokens.tokens_per_frame;
    std::vector<ChunkSpec> chunks;
    int64_t start = 0;
    int index = 0;
    while (start < n) {
        ChunkSpec c;
        c.index = index++;
        c.start = start;
        c.width = static_cast<int>(std::min(chunk_tokens, n - start));
        c.first_frame = static_cast<int>(start / tokens.tokens_per_frame);
        c.last_frame = static_cast<int>((start + c.width - 1) / tokens.tokens_per_frame);
        chunks.push_back(c);
        start += c.width;
    }
    return chunks;
}

SummaryLayout layout_summaries(const ChunkSpec& chunk, int ratio) {
    if (ratio < 1) throw ConfigError("layout_summaries: compression ratio must be >= 1");
    if (chunk.width < 1) throw PreconditionError("layout_summaries: chunk width must be >= 1");

    SummaryLayout out;
    out.chunk = chunk;
    out.ratio = ratio;
    // ceil with a floor of one summary, so no chunk vanishes from the cache
    out.summary_count = std::max(1, (chunk.width + ratio - 1) / ratio);

    // Uniform spacing: `rem` groups of base+1 tokens first, shorter groups last.
    const int base = chunk.width / out.summary_count;
    const int rem = chunk.width % out.summary_count;
    out.insert_offsets.reserve(static_cast<size_t>(out.summary_count));
    int covered = 0;
    for (int i = 0; i < out.summary_count; ++i) {
        covered += base + (i < rem ? 1 : 0);
        out.insert_offsets.push_back(covered);
    }
    return out;
}

std::vector<int> summary_slot_indices(const SummaryLayout& layout) {
    std::vector<int> slots(layout.insert_offsets.size());
    for (size_t i = 0; i < layout.insert_offsets.size(); ++i)
        slots[i] = layout.insert_offsets[i] + static_cast<int>(i);
    return slots;
}

std::vector<TokenEmbedding> interleave(std::span<const TokenEmbedding> chunk_tokens, const SummaryLayout& layout,
                                       const std::vector<float>& summary_embedding, int64_t start_position) {
    if (static_cast<int>(chunk_tokens.size()) != layout.chunk.width)
        throw PreconditionError("interleave: layout does not belong to this chunk");

    std::vector<TokenEmbedding> out;
    out.reserve(chunk_tokens.size() + layout.insert_offsets.size());
    int64_t pos = start_position;
    size_t next_summary = 0;
    for (int t = 0; t <= layout.chunk.width; ++t) {
        while (next_summary < layout.insert_offsets.size() && layout.insert_offsets[next_summary] == t) {
            out.push_back(TokenEmbedding{summary_embedding, pos++});
            ++next_summary;
        }
        if (t < layout.chunk.width) out.push_back(TokenEmbedding{chunk_tokens[static_cast<size_t>(t)].vec, pos++});
    }
    if (next_summary != layout.insert_offsets.size())
        throw PreconditionError("interleave: layout offsets exceed chunk width");
    return out;
}

}  // namespace kvx2l
