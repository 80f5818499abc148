#include "kvx2l/compressor.hpp"

namespace kvx2l {

void CompressionConfig::validate() const {
    if (alpha_low < 1 || alpha_high < 1) throw ConfigError("compression ratios must be >= 1");
    if (alpha_low > alpha_high) throw ConfigError("alpha_low must not exceed alpha_high");
    if (alpha_low == alpha_high && !allow_equal)
        throw ConfigError("alpha_low == alpha_high requires the allow_equal flag");
}

std::vector<KVPair> flatten_context(std::span<const CompressedKV> summaries) {
    std::vector<KVPair> out;
    size_t total = 0;
    for (const auto& s : summaries) total += s.kv.size();
    out.reserve(total);
    for (const auto& s : summaries)
        for (const auto& kv : s.kv) out.push_back(kv);
    return out;
}

CompressedKV prefill_chunk(const Engine& engine, std::span<const TokenEmbedding> interleaved,
                           const SummaryLayout& layout, std::span<const CompressedKV> prior_summaries, Level level) {
    int prev_index = -1;
    for (const auto& p : prior_summaries) {
        if (p.level != level) throw PreconditionError("prefill_chunk: prior summaries of a different level");
        if (p.chunk_index <= prev_index || p.chunk_index >= layout.chunk.index)
            throw PreconditionError("prefill_chunk: prior summaries out of temporal order");
        prev_index = p.chunk_index;
    }
    if (static_cast<int>(interleaved.size()) != layout.chunk.width + layout.summary_count)
        throw PreconditionError("prefill_chunk: interleaved block does not match layout");

    std::vector<KVPair> context = flatten_context(prior_summaries);
    PrefillResult full = engine.forward_prefill(interleaved, context);

    CompressedKV out;
    out.chunk_index = layout.chunk.index;
    out.level = level;
    out.source_width = layout.chunk.width;
    out.ratio = layout.ratio;
    out.kv.reserve(static_cast<size_t>(layout.summary_count));
    // Keep summary-slot KVs, drop regular-token KVs: this bounds peak memory
    // to the compressed cache plus one chunk.
    for (int slot : summary_slot_indices(layout)) out.kv.push_back(std::move(full.kvs[static_cast<size_t>(slot)]));
    return out;
}

std::vector<CompressedKV> compress_level(const Engine& engine, const VideoTokens& tokens,
                                         std::span<const ChunkSpec> chunks, int ratio, Level level) {
    std::vector<CompressedKV> out;
    out.reserve(chunks.size());
    int64_t next_position = 0;
    for (const auto& chunk : chunks) {
        SummaryLayout layout = layout_summaries(chunk, ratio);
        std::span<const TokenEmbedding> chunk_tokens(tokens.tokens.data() + chunk.start,
                                                     static_cast<size_t>(chunk.width));
        std::vector<TokenEmbedding> block =
            interleave(chunk_tokens, layout, engine.summary_token_embedding(), next_position);
        next_position += static_cast<int64_t>(block.size());
        out.push_back(prefill_chunk(engine, block, layout, out, level));
    }
    return out;
}

BilevelResult compress_bilevel(const Engine& engine, const VideoTokens& tokens, std::span<const ChunkSpec> chunks,
                               const CompressionConfig& config) {
    config.validate();
    BilevelResult res;
    res.low = compress_level(engine, tokens, chunks, config.alpha_low, Level::Low);
    res.high = compress_level(engine, tokens, chunks, config.alpha_high, Level::High);
    return res;
}

}  // namespace kvx2l
