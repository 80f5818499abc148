#pragma once

#include <span>
#include <string>
#include <vector>

#include "kvx2l/compressor.hpp"
#include "kvx2l/engine.hpp"

namespace kvx2l {

struct TaskQuery {
    std::vector<std::vector<float>> text_token_embeddings;  // for the attention oracle
    std::vector<float> query_embedding;                     // for the cosine oracle
    std::string prompt;

    void validate() const {
        if (text_token_embeddings.empty() && query_embedding.empty())
            throw PreconditionError("task query: at least one representation required");
    }
};

struct RelevanceScores {
    std::vector<double> scores;  // one per chunk, temporal order
    std::string oracle_name;
};

// Chunk score = mean over the chunk's frames of cosine(query, frame).
// Zero-norm vectors score 0 by definition.
RelevanceScores score_cosine(std::span<const float> query_embedding,
                             const std::vector<std::vector<std::vector<float>>>& frames_by_chunk);

// Final-layer attention weights of the query tokens over the high-level
// summary KVs, summed per chunk and normalized to 1.
RelevanceScores score_attention(const Engine& engine, const TaskQuery& query, std::span<const CompressedKV> high_kvs);

enum class BaselineKind { Random, LastN, UniformStride };

// Selector used by the CLI and harness drivers.
enum class OracleKind { Cosine, Attention, Random, LastN, Uniform };

OracleKind oracle_kind_from_string(const std::string& name);
std::string oracle_kind_name(OracleKind kind);

// Scores that induce the named selection under select_topk.
RelevanceScores score_baseline(BaselineKind kind, uint64_t seed, int m, int k);

// The k highest-scoring chunks; ties break toward the smaller chunk index.
// Result sorted by chunk index. k > m clamps to m with a stderr warning.
std::vector<int> select_topk(const RelevanceScores& scores, int k);

double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Frame-embedding file: little-endian u32 dimension, u32 frame count, then
// one f32 vector per frame.
void write_frame_embeddings(const std::string& path, const std::vector<std::vector<float>>& frames);
std::vector<std::vector<float>> read_frame_embeddings(const std::string& path);

}  // namespace kvx2l
