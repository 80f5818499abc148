#pragma once

#include <span>
#include <vector>

#include "kvx2l/compressor.hpp"
#include "kvx2l/oracle.hpp"
#include "kvx2l/plan.hpp"

namespace kvx2l {

ReloadPlan build_plan(const RelevanceScores& scores, int k);

struct HybridEntry {
    KVPair kv;
    int chunk_index = 0;
    Level level = Level::Low;
};

// Temporally ordered, contiguously re-positioned KV set used for decoding.
struct HybridContext {
    std::vector<HybridEntry> entries;
    int64_t total_length = 0;
    bool renumbered = true;

    std::vector<KVPair> kv_list() const;
};

struct MergeOptions {
    // Contiguous renumbering from 0 is the default; the alternative keeps the
    // sparse prefill positions for experimentation.
    bool renumber = true;
};

// Merges the selected chunks' low-level KVs with the complement's high-level
// KVs, sorted by chunk index. Exactly one record per chunk is required.
HybridContext merge_hybrid(std::span<const CompressedKV> selected_low, std::span<const CompressedKV> complement_high,
                           const MergeOptions& options = {});

// Prefills the task tokens after the hybrid context, then decodes greedily
// for up to max_new steps, appending each generated KV to the session.
std::vector<int> decode_answer(const Engine& engine, const HybridContext& hybrid,
                               std::span<const std::vector<float>> task_embeddings, int max_new);

}  // namespace kvx2l
