#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kvx2l/hybrid.hpp"
#include "kvx2l/kvstore.hpp"
#include "kvx2l/oracle.hpp"

namespace kvx2l {

// End-to-end pipeline settings shared by the evaluators and the CLI.
struct PipelineConfig {
    CompressionConfig compression;
    int k = 1;
    OracleKind oracle = OracleKind::Cosine;
    int chunk_frames = 10;
    int tokens_per_frame = 1;
    MergeOptions merge;
    int max_new = 1;
};

// --- synthetic needle-in-a-haystack instances ---

struct NiahParams {
    int64_t n_tokens = 1024;
    int tokens_per_frame = 1;
    int chunk_frames = 10;
    double depth = 0.5;  // maps to chunk index round(depth * (m - 1))
    int needle_id = -1;  // -1 draws one from the seed
    uint64_t seed = 0;
    double noise_scale = 0.5;
};

struct NiahInstance {
    int n_chunks = 0;
    int needle_chunk_index = 0;
    int needle_id = 0;
    VideoTokens tokens;
    TaskQuery query;
    uint64_t seed = 0;
    double noise_scale = 0.0;
};

// Deterministic per seed. Every frame of the needle chunk carries the
// needle's unit-norm embedding; haystack frames have i.i.d. entries scaled
// by noise_scale; the query embedding equals the needle embedding.
NiahInstance gen_niah(const Engine& engine, const NiahParams& params);

// Per-chunk frame embeddings, as the cosine oracle consumes them.
std::vector<std::vector<std::vector<float>>> frames_by_chunk(const VideoTokens& tokens,
                                                             std::span<const ChunkSpec> chunks);

RelevanceScores run_oracle(const Engine& engine, OracleKind kind, const TaskQuery& query, const VideoTokens& tokens,
                           std::span<const ChunkSpec> chunks, std::span<const CompressedKV> high_kvs, int k,
                           uint64_t seed);

// Full in-memory pipeline for one instance; returns the generated tokens.
std::vector<int> run_niah_trial(const Engine& engine, const NiahInstance& instance, const PipelineConfig& config);

struct NiahGrid {
    std::vector<int64_t> lengths;  // token counts
    std::vector<double> depths;    // 0..1
    int trials = 100;
    double noise_scale = 0.5;
    uint64_t master_seed = 0;
};

struct AccuracyMatrix {
    std::vector<int64_t> lengths;
    std::vector<double> depths;
    std::vector<double> values;  // depths.size() rows x lengths.size() cols

    double at(size_t depth_row, size_t length_col) const { return values[depth_row * lengths.size() + length_col]; }
    double mean() const;
    std::string to_csv() const;
};

// Fraction of trials whose first decoded token equals the needle id, per
// (depth, length) cell. Bit-exact reproducible per master seed.
AccuracyMatrix eval_niah(const Engine& engine, const NiahGrid& grid, const PipelineConfig& config,
                         unsigned threads = 0);

// --- efficiency benchmarks ---

struct BenchRecord {
    int alpha_low = 0;
    int alpha_high = 0;
    int k = 0;
    std::string oracle;
    int64_t n = 0;
    int m = 0;
    double reduction_pct = 0.0;
    double ttft_ms = 0.0;
    double baseline_ttft_ms = 0.0;
    double speedup_vs_baseline = 0.0;
    double decode_tok_per_s = 0.0;
    double niah_accuracy = -1.0;  // < 0 when not requested
};

struct BenchOptions {
    int repetitions = 5;
    int warmups = 2;
    int timed_decode_steps = 16;
    uint64_t seed = 1;
    int64_t memory_budget_bytes = 2LL << 30;
    std::filesystem::path cache_dir;  // empty -> temp directory
};

// Seeded toy token stream for benchmarking.
VideoTokens make_toy_tokens(int64_t n_tokens, int tokens_per_frame, int embed_dim, uint64_t seed);

// Encodes the raw token stream chunk by chunk without compression; the
// "no compression" baseline cache.
std::vector<CompressedKV> encode_uncompressed(const Engine& engine, const VideoTokens& tokens,
                                              std::span<const ChunkSpec> chunks);

// Measures reload + task prefill + first decode step (TTFT) for the given
// config and for the uncompressed baseline in the same run. Medians over
// `repetitions` after `warmups` discarded runs.
BenchRecord bench_config(const Engine& engine, const PipelineConfig& config, int64_t n_tokens,
                         const BenchOptions& options);

enum class SweepDimension { TopK, RatioGrid };

struct SweepOptions {
    SweepDimension dimension = SweepDimension::TopK;
    int topk_from = 1, topk_to = 6;
    std::vector<std::pair<int, int>> ratio_grid = {{2, 8}, {2, 16}, {2, 32}, {2, 72}};
    bool include_niah = false;
    NiahGrid niah_grid;
};

std::vector<BenchRecord> sweep(const Engine& engine, const PipelineConfig& base, int64_t n_tokens,
                               const BenchOptions& bench_options, const SweepOptions& sweep_options);

std::string bench_csv_header();
std::string bench_csv_row(const BenchRecord& record);

}  // namespace kvx2l
