#include "kvx2l/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace kvx2l {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

NiahInstance gen_niah(const Engine& engine, const NiahParams& params) {
    if (params.n_tokens < 1 || params.tokens_per_frame < 1 || params.chunk_frames < 1)
        throw PreconditionError("gen_niah: counts must be >= 1");
    if (params.depth < 0.0 || params.depth > 1.0) throw PreconditionError("gen_niah: depth must be in [0, 1]");
    if (params.noise_scale < 0.0) throw PreconditionError("gen_niah: noise_scale must be >= 0");

    const int E = engine.config().embed_dim;
    const int T = params.tokens_per_frame;
    const int64_t frames = (params.n_tokens + T - 1) / T;
    const int chunk_count = static_cast<int>((frames + params.chunk_frames - 1) / params.chunk_frames);

    SplitMix64 rng(mix_seed(params.seed, 0x6e696168));
    NiahInstance inst;
    inst.seed = params.seed;
    inst.noise_scale = params.noise_scale;
    inst.n_chunks = chunk_count;
    inst.needle_chunk_index = static_cast<int>(std::lround(params.depth * (chunk_count - 1)));
    inst.needle_id = params.needle_id >= 0 ? params.needle_id
                                           : static_cast<int>(rng.next_below(static_cast<uint64_t>(engine.config().vocab)));
    if (inst.needle_id >= engine.config().vocab) throw PreconditionError("gen_niah: needle id out of vocab range");

    const std::vector<float> needle = engine.token_embedding(inst.needle_id);
    const int64_t first_needle_frame = static_cast<int64_t>(inst.needle_chunk_index) * params.chunk_frames;
    const int64_t last_needle_frame =
        std::min(frames - 1, first_needle_frame + static_cast<int64_t>(params.chunk_frames) - 1);

    inst.tokens.tokens_per_frame = T;
    inst.tokens.tokens.reserve(static_cast<size_t>(params.n_tokens));
    std::vector<float> frame_vec(static_cast<size_t>(E));
    for (int64_t f = 0; f < frames; ++f) {
        const bool is_needle = f >= first_needle_frame && f <= last_needle_frame;
        if (is_needle) {
            frame_vec = needle;
        } else {
            for (auto& x : frame_vec) x = static_cast<float>(params.noise_scale * rng.next_gauss());
        }
        for (int t = 0; t < T && inst.tokens.size() < params.n_tokens; ++t)
            inst.tokens.tokens.push_back(TokenEmbedding{frame_vec, inst.tokens.size()});
    }

    inst.query.query_embedding = needle;
    inst.query.text_token_embeddings = {needle};
    inst.query.prompt = "find the planted frame";
    return inst;
}

std::vector<std::vector<std::vector<float>>> frames_by_chunk(const VideoTokens& tokens,
                                                             std::span<const ChunkSpec> chunks) {
    std::vector<std::vector<std::vector<float>>> out;
    out.reserve(chunks.size());
    for (const auto& chunk : chunks) {
        std::vector<std::vector<float>> frames;
        for (int f = chunk.first_frame; f <= chunk.last_frame; ++f) {
            const int64_t tok = static_cast<int64_t>(f) * tokens.tokens_per_frame;
            frames.push_back(tokens.tokens[static_cast<size_t>(tok)].vec);
        }
        out.push_back(std::move(frames));
    }
    return out;
}

RelevanceScores run_oracle(const Engine& engine, OracleKind kind, const TaskQuery& query, const VideoTokens& tokens,
                           std::span<const ChunkSpec> chunks, std::span<const CompressedKV> high_kvs, int k,
                           uint64_t seed) {
    const int m = static_cast<int>(chunks.size());
    switch (kind) {
        case OracleKind::Cosine:
            return score_cosine(query.query_embedding, frames_by_chunk(tokens, chunks));
        case OracleKind::Attention:
            return score_attention(engine, query, high_kvs);
        case OracleKind::Random:
            return score_baseline(BaselineKind::Random, seed, m, k);
        case OracleKind::LastN:
            return score_baseline(BaselineKind::LastN, seed, m, k);
        case OracleKind::Uniform:
            return score_baseline(BaselineKind::UniformStride, seed, m, k);
    }
    throw ConfigError("run_oracle: unknown oracle kind");
}

namespace {

// Splits bilevel output according to a plan without going through the disk
// store; used by the evaluators where only the selection matters.
HybridContext assemble_hybrid(const BilevelResult& passes, const ReloadPlan& plan, const MergeOptions& merge) {
    std::vector<CompressedKV> low, high;
    low.reserve(plan.selected.size());
    high.reserve(plan.complement.size());
    for (int c : plan.selected) low.push_back(passes.low[static_cast<size_t>(c)]);
    for (int c : plan.complement) high.push_back(passes.high[static_cast<size_t>(c)]);
    return merge_hybrid(low, high, merge);
}

}  // namespace

std::vector<int> run_niah_trial(const Engine& engine, const NiahInstance& instance, const PipelineConfig& config) {
    std::vector<ChunkSpec> chunks = partition(instance.tokens, config.chunk_frames);
    BilevelResult passes = compress_bilevel(engine, instance.tokens, chunks, config.compression);
    RelevanceScores scores = run_oracle(engine, config.oracle, instance.query, instance.tokens, chunks, passes.high,
                                        config.k, instance.seed);
    ReloadPlan plan = build_plan(scores, config.k);
    HybridContext hybrid = assemble_hybrid(passes, plan, config.merge);
    std::vector<std::vector<float>> task = {instance.query.query_embedding};
    return decode_answer(engine, hybrid, task, config.max_new);
}

double AccuracyMatrix::mean() const {
    if (values.empty()) return 0.0;
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc / static_cast<double>(values.size());
}

std::string AccuracyMatrix::to_csv() const {
    std::ostringstream os;
    os << "depth";
    for (int64_t len : lengths) os << ",len" << len;
    os << "\n";
    if (values.empty()) return os.str();  // zero trials: header only
    for (size_t d = 0; d < depths.size(); ++d) {
        os << depths[d];
        for (size_t l = 0; l < lengths.size(); ++l) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", at(d, l));
            os << "," << buf;
        }
        os << "\n";
    }
    return os.str();
}

AccuracyMatrix eval_niah(const Engine& engine, const NiahGrid& grid, const PipelineConfig& config, unsigned threads) {
    if (grid.lengths.empty() || grid.depths.empty()) throw PreconditionError("eval_niah: empty grid");
    AccuracyMatrix out;
    out.lengths = grid.lengths;
    out.depths = grid.depths;
    if (grid.trials == 0) return out;  // header-only matrix
    if (grid.trials < 0) throw PreconditionError("eval_niah: negative trial count");

    const size_t cells = grid.lengths.size() * grid.depths.size();
    out.values.assign(cells, 0.0);
    std::vector<std::atomic<int>> hits(cells);
    for (auto& h : hits) h.store(0);

    const size_t jobs = cells * static_cast<size_t>(grid.trials);
    parallel_for(jobs, [&](size_t job) {
        const size_t cell = job / static_cast<size_t>(grid.trials);
        const int trial = static_cast<int>(job % static_cast<size_t>(grid.trials));
        const size_t d = cell / grid.lengths.size();
        const size_t l = cell % grid.lengths.size();

        NiahParams params;
        params.n_tokens = grid.lengths[l];
        params.tokens_per_frame = config.tokens_per_frame;
        params.chunk_frames = config.chunk_frames;
        params.depth = grid.depths[d];
        params.noise_scale = grid.noise_scale;
        params.seed = mix_seed(grid.master_seed, static_cast<uint64_t>(cell) * 1000003ULL +
                                                     static_cast<uint64_t>(trial));
        NiahInstance inst = gen_niah(engine, params);
        std::vector<int> got = run_niah_trial(engine, inst, config);
        if (!got.empty() && got.front() == inst.needle_id) hits[cell].fetch_add(1);
    }, threads);

    for (size_t c = 0; c < cells; ++c)
        out.values[c] = static_cast<double>(hits[c].load()) / static_cast<double>(grid.trials);
    return out;
}

VideoTokens make_toy_tokens(int64_t n_tokens, int tokens_per_frame, int embed_dim, uint64_t seed) {
    if (n_tokens < 1) throw PreconditionError("make_toy_tokens: n_tokens must be >= 1");
    VideoTokens out;
    out.tokens_per_frame = tokens_per_frame;
    out.tokens.reserve(static_cast<size_t>(n_tokens));
    SplitMix64 rng(mix_seed(seed, 0x746f79));
    std::vector<float> frame(static_cast<size_t>(embed_dim));
    for (int64_t i = 0; i < n_tokens; ++i) {
        if (i % tokens_per_frame == 0)
            for (auto& x : frame) x = static_cast<float>(rng.next_gauss() / std::sqrt(static_cast<double>(embed_dim)));
        out.tokens.push_back(TokenEmbedding{frame, i});
    }
    return out;
}

std::vector<CompressedKV> encode_uncompressed(const Engine& engine, const VideoTokens& tokens,
                                              std::span<const ChunkSpec> chunks) {
    std::vector<CompressedKV> out;
    out.reserve(chunks.size());
    std::vector<KVPair> context;
    context.reserve(static_cast<size_t>(tokens.size()));
    for (const auto& chunk : chunks) {
        std::span<const TokenEmbedding> block(tokens.tokens.data() + chunk.start, static_cast<size_t>(chunk.width));
        PrefillResult res = engine.forward_prefill(block, context);
        CompressedKV ckv;
        ckv.chunk_index = chunk.index;
        ckv.level = Level::Low;
        ckv.source_width = chunk.width;
        ckv.ratio = 1;
        ckv.kv = res.kvs;
        for (auto& kv : res.kvs) context.push_back(std::move(kv));
        out.push_back(std::move(ckv));
    }
    return out;
}

namespace {

struct TimedDecode {
    double ttft_ms = 0.0;
    double tok_per_s = 0.0;
    int64_t hot_entries = 0;
};

TimedDecode timed_decode(const Engine& engine, const ReloadPlan& plan, const ColdStore& cold,
                         const std::vector<float>& task_embedding, const MergeOptions& merge, int decode_steps) {
    const auto t0 = Clock::now();
    HotStore hot = reload(plan, cold, engine.config());
    std::vector<CompressedKV> low, high;
    for (auto& ckv : hot.take()) (ckv.level == Level::Low ? low : high).push_back(std::move(ckv));
    HybridContext hybrid = merge_hybrid(low, high, merge);
    std::vector<std::vector<float>> task = {task_embedding};
    std::vector<int> first = decode_answer(engine, hybrid, task, 1);
    TimedDecode out;
    out.ttft_ms = ms_since(t0);
    out.hot_entries = hybrid.total_length;

    if (decode_steps > 0) {
        const auto t1 = Clock::now();
        decode_answer(engine, hybrid, task, decode_steps);
        const double ms = ms_since(t1);
        out.tok_per_s = ms > 0.0 ? 1000.0 * decode_steps / ms : 0.0;
    }
    (void)first;
    return out;
}

}  // namespace

BenchRecord bench_config(const Engine& engine, const PipelineConfig& config, int64_t n_tokens,
                         const BenchOptions& options) {
    if (options.repetitions < 3) throw PreconditionError("bench_config: repetitions must be >= 3");
    const EngineConfig& ecfg = engine.config();
    const int64_t stride_bytes = static_cast<int64_t>(ecfg.layers) * ecfg.embed_dim * 2 * 4;
    const int64_t estimate = n_tokens * stride_bytes * 3;  // raw cache + both passes + slack
    if (estimate > options.memory_budget_bytes)
        throw ResourceError("bench_config: estimated cache of " + std::to_string(estimate) +
                            " bytes exceeds the memory budget of " + std::to_string(options.memory_budget_bytes) +
                            " bytes");

    VideoTokens tokens = make_toy_tokens(n_tokens, config.tokens_per_frame, ecfg.embed_dim, options.seed);
    std::vector<ChunkSpec> chunks = partition(tokens, config.chunk_frames);
    const int m = static_cast<int>(chunks.size());

    std::filesystem::path dir = options.cache_dir;
    if (dir.empty()) dir = std::filesystem::temp_directory_path() / "kvx2l_bench";
    ColdStore cold_cfg(dir / "bilevel");
    ColdStore cold_raw(dir / "raw");

    BilevelResult passes = compress_bilevel(engine, tokens, chunks, config.compression);
    offload(passes.low, cold_cfg, ecfg);
    offload(passes.high, cold_cfg, ecfg);
    std::vector<CompressedKV> raw = encode_uncompressed(engine, tokens, chunks);
    offload(raw, cold_raw, ecfg);

    // plan: widest-k stand-in scores (content-independent timing)
    std::vector<int> widths;
    widths.reserve(chunks.size());
    for (const auto& c : chunks) widths.push_back(c.width);
    RelevanceScores scores = score_baseline(BaselineKind::Random, options.seed, m, config.k);
    ReloadPlan plan = build_plan(scores, config.k);

    ReloadPlan raw_plan;
    raw_plan.k = m;
    raw_plan.oracle_name = "none";
    for (int i = 0; i < m; ++i) raw_plan.selected.push_back(i);

    const std::vector<float> task_embedding = engine.token_embedding(0);

    std::vector<double> cfg_ttft, raw_ttft, cfg_rate;
    int64_t hot_entries = 0;
    for (int rep = 0; rep < options.warmups + options.repetitions; ++rep) {
        TimedDecode cfg_run =
            timed_decode(engine, plan, cold_cfg, task_embedding, config.merge, options.timed_decode_steps);
        TimedDecode raw_run = timed_decode(engine, raw_plan, cold_raw, task_embedding, config.merge, 0);
        if (rep >= options.warmups) {
            cfg_ttft.push_back(cfg_run.ttft_ms);
            raw_ttft.push_back(raw_run.ttft_ms);
            cfg_rate.push_back(cfg_run.tok_per_s);
            hot_entries = cfg_run.hot_entries;
        }
    }

    ReductionReport predicted = predict_reduction(widths, config.compression.alpha_low, config.compression.alpha_high,
                                                  std::min(config.k, m), &plan.selected);
    if (predicted.retained_entries != hot_entries)
        throw IntegrityError("bench_config: measured hot entries disagree with the analytic prediction");

    BenchRecord rec;
    rec.alpha_low = config.compression.alpha_low;
    rec.alpha_high = config.compression.alpha_high;
    rec.k = std::min(config.k, m);
    rec.oracle = oracle_kind_name(config.oracle);
    rec.n = n_tokens;
    rec.m = m;
    rec.reduction_pct = predicted.reduction_pct;
    rec.ttft_ms = median(cfg_ttft);
    rec.baseline_ttft_ms = median(raw_ttft);
    rec.speedup_vs_baseline = rec.ttft_ms > 0.0 ? rec.baseline_ttft_ms / rec.ttft_ms : 0.0;
    rec.decode_tok_per_s = median(cfg_rate);
    return rec;
}

std::vector<BenchRecord> sweep(const Engine& engine, const PipelineConfig& base, int64_t n_tokens,
                               const BenchOptions& bench_options, const SweepOptions& sweep_options) {
    std::vector<BenchRecord> records;
    std::vector<PipelineConfig> points;
    if (sweep_options.dimension == SweepDimension::TopK) {
        for (int k = sweep_options.topk_from; k <= sweep_options.topk_to; ++k) {
            PipelineConfig c = base;
            c.k = k;
            points.push_back(c);
        }
    } else {
        for (auto [lo, hi] : sweep_options.ratio_grid) {
            PipelineConfig c = base;
            c.compression.alpha_low = lo;
            c.compression.alpha_high = hi;
            c.compression.allow_equal = lo == hi;
            points.push_back(c);
        }
    }
    for (const auto& point : points) {
        BenchRecord rec = bench_config(engine, point, n_tokens, bench_options);
        if (sweep_options.include_niah) {
            AccuracyMatrix acc = eval_niah(engine, sweep_options.niah_grid, point);
            rec.niah_accuracy = acc.mean();
        }
        records.push_back(rec);
    }
    return records;
}

std::string bench_csv_header() {
    return "alpha_low,alpha_high,k,oracle,n,m,reduction_pct,ttft_ms,baseline_ttft_ms,speedup_vs_baseline,"
           "decode_tok_per_s,niah_accuracy\n";
}

std::string bench_csv_row(const BenchRecord& r) {
    std::ostringstream os;
    char buf[64];
    os << r.alpha_low << ',' << r.alpha_high << ',' << r.k << ',' << r.oracle << ',' << r.n << ',' << r.m << ',';
    std::snprintf(buf, sizeof(buf), "%.3f", r.reduction_pct);
    os << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.4f", r.ttft_ms);
    os << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.4f", r.baseline_ttft_ms);
    os << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.3f", r.speedup_vs_baseline);
    os << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.2f", r.decode_tok_per_s);
    os << buf << ',';
    if (r.niah_accuracy >= 0.0) {
        std::snprintf(buf, sizeof(buf), "%.4f", r.niah_accuracy);
        os << buf;
    }
    os << '\n';
    return os.str();
}

}  // namespace kvx2l
