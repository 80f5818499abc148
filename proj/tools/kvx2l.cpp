// kvx2l command-line driver: prefill | query | bench | niah | sweep
//
// Every flag can also come from a `key = value` config file (--config) and
// the cache root defaults to $KVX2L_CACHE_DIR.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "kvx2l/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kvx2l;

namespace {

struct CommonOpts {
    int alpha_low = 2;
    int alpha_high = 32;
    int topk = 3;
    std::string oracle = "cosine";
    int chunk_frames = 10;
    int tokens_per_frame = 1;
    uint64_t seed = 1;
    std::string cache_dir;
    std::string out;
    // engine
    int layers = 2;
    int heads = 2;
    int head_dim = 32;
    int vocab = 256;
    std::string mode = "averaging";
    bool keep_positions = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--alpha-low", o.alpha_low, "low compression ratio");
    cmd->add_option("--alpha-high", o.alpha_high, "high compression ratio");
    cmd->add_option("--topk", o.topk, "chunks re-loaded at the low level");
    cmd->add_option("--oracle", o.oracle, "relevance oracle")
        ->check(CLI::IsMember({"cosine", "attention", "random", "lastn", "uniform"}));
    cmd->add_option("--chunk-frames", o.chunk_frames, "frames per chunk");
    cmd->add_option("--tokens-per-frame", o.tokens_per_frame, "tokens per frame");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--cache-dir", o.cache_dir, "cache directory")->envname("KVX2L_CACHE_DIR");
    cmd->add_option("--out", o.out, "output path (CSV or report)");
    cmd->add_option("--layers", o.layers, "engine layers");
    cmd->add_option("--heads", o.heads, "attention heads");
    cmd->add_option("--head-dim", o.head_dim, "per-head dimension");
    cmd->add_option("--vocab", o.vocab, "vocabulary size");
    cmd->add_option("--mode", o.mode, "engine weight mode")->check(CLI::IsMember({"averaging", "random"}));
    cmd->add_flag("--keep-positions", o.keep_positions, "keep prefill positions instead of renumbering");
}

EngineConfig engine_config(const CommonOpts& o) {
    EngineConfig cfg;
    cfg.layers = o.layers;
    cfg.heads = o.heads;
    cfg.head_dim = o.head_dim;
    cfg.embed_dim = o.heads * o.head_dim;
    cfg.vocab = o.vocab;
    cfg.seed = o.seed;
    cfg.mode = o.mode == "averaging" ? WeightMode::Averaging : WeightMode::SeededRandom;
    return cfg;
}

PipelineConfig pipeline_config(const CommonOpts& o) {
    PipelineConfig cfg;
    cfg.compression.alpha_low = o.alpha_low;
    cfg.compression.alpha_high = o.alpha_high;
    cfg.compression.allow_equal = o.alpha_low == o.alpha_high;
    cfg.k = o.topk;
    cfg.oracle = oracle_kind_from_string(o.oracle);
    cfg.chunk_frames = o.chunk_frames;
    cfg.tokens_per_frame = o.tokens_per_frame;
    cfg.merge.renumber = !o.keep_positions;
    return cfg;
}

// prefill writes to --out, query reads from --cache; both fall back to the
// cache root (--cache-dir or $KVX2L_CACHE_DIR).
fs::path resolve_cache_dir(const std::string& primary, const CommonOpts& o) {
    if (!primary.empty()) return fs::path(primary);
    if (!o.cache_dir.empty()) return fs::path(o.cache_dir);
    throw ConfigError("no cache directory: pass --out/--cache or set KVX2L_CACHE_DIR");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << text;
}

void emit_output(const std::string& out, const std::string& text) {
    if (out.empty())
        std::cout << text;
    else
        write_text(out, text);
}

json engine_to_json(const EngineConfig& cfg) {
    return json{{"layers", cfg.layers},       {"heads", cfg.heads}, {"head_dim", cfg.head_dim},
                {"embed_dim", cfg.embed_dim}, {"vocab", cfg.vocab}, {"seed", cfg.seed},
                {"mode", cfg.mode == WeightMode::Averaging ? "averaging" : "random"}};
}

EngineConfig engine_from_json(const json& j) {
    EngineConfig cfg;
    cfg.layers = j.at("layers").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.head_dim = j.at("head_dim").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.vocab = j.at("vocab").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.mode = j.at("mode").get<std::string>() == "averaging" ? WeightMode::Averaging : WeightMode::SeededRandom;
    return cfg;
}

// Deterministic stand-in for a text encoder: folds the prompt into a unit
// vector seeded by its hash.
std::vector<float> prompt_embedding(const std::string& prompt, int embed_dim) {
    SplitMix64 rng(fnv1a64_str(prompt));
    std::vector<float> v(static_cast<size_t>(embed_dim));
    double norm = 0.0;
    for (auto& x : v) {
        x = static_cast<float>(rng.next_gauss());
        norm += static_cast<double>(x) * x;
    }
    norm = std::sqrt(std::max(norm, 1e-30));
    for (auto& x : v) x = static_cast<float>(x / norm);
    return v;
}

int cmd_prefill(const CommonOpts& o, int64_t n_tokens, const std::string& embeddings_path) {
    const fs::path dir = resolve_cache_dir(o.out, o);
    EngineConfig ecfg = engine_config(o);
    Engine engine = Engine::init(ecfg);

    VideoTokens tokens;
    tokens.tokens_per_frame = o.tokens_per_frame;
    if (!embeddings_path.empty()) {
        std::vector<std::vector<float>> frames = read_frame_embeddings(embeddings_path);
        if (static_cast<int>(frames.front().size()) != ecfg.embed_dim)
            throw ConfigError("embedding file dimension does not match the engine embed_dim");
        for (const auto& f : frames)
            for (int t = 0; t < o.tokens_per_frame; ++t)
                tokens.tokens.push_back(TokenEmbedding{f, tokens.size()});
    } else {
        tokens = make_toy_tokens(n_tokens, o.tokens_per_frame, ecfg.embed_dim, o.seed);
    }

    std::vector<ChunkSpec> chunks = partition(tokens, o.chunk_frames);
    CompressionConfig comp{o.alpha_low, o.alpha_high, o.alpha_low == o.alpha_high};
    BilevelResult passes = compress_bilevel(engine, tokens, chunks, comp);

    ColdStore store(dir);
    std::vector<CacheHandle> handles = offload(passes.low, store, ecfg);
    std::vector<CacheHandle> hi = offload(passes.high, store, ecfg);
    handles.insert(handles.end(), hi.begin(), hi.end());

    // frame embeddings for the cosine oracle at query time
    std::vector<std::vector<float>> frames;
    for (int f = 0; f < tokens.frame_count(); ++f)
        frames.push_back(tokens.tokens[static_cast<size_t>(f) * o.tokens_per_frame].vec);
    write_frame_embeddings((dir / "frames.emb").string(), frames);

    json manifest;
    manifest["engine"] = engine_to_json(ecfg);
    manifest["alpha_low"] = o.alpha_low;
    manifest["alpha_high"] = o.alpha_high;
    manifest["chunk_frames"] = o.chunk_frames;
    manifest["tokens_per_frame"] = o.tokens_per_frame;
    manifest["n_tokens"] = tokens.size();
    std::vector<int> widths;
    for (const auto& c : chunks) widths.push_back(c.width);
    manifest["widths"] = widths;
    write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");

    uint64_t total_bytes = 0;
    for (const auto& h : handles) total_bytes += h.file_bytes;
    std::cout << "prefilled " << tokens.size() << " tokens into " << chunks.size() << " chunks; wrote "
              << handles.size() << " cache records (" << total_bytes << " bytes) under " << dir << "\n";
    return 0;
}

int cmd_query(const CommonOpts& o, const std::string& cache_path, const std::string& prompt, int query_token,
              int max_new) {
    const fs::path dir = resolve_cache_dir(cache_path, o);
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IntegrityError("no manifest.json under " + dir.string() + "; run prefill first");
    json manifest = json::parse(mf);
    EngineConfig ecfg = engine_from_json(manifest.at("engine"));
    Engine engine = Engine::init(ecfg);

    const std::vector<int> widths = manifest.at("widths").get<std::vector<int>>();
    const int m = static_cast<int>(widths.size());

    TaskQuery query;
    query.prompt = prompt;
    if (query_token >= 0)
        query.query_embedding = engine.token_embedding(query_token);
    else
        query.query_embedding = prompt_embedding(prompt, ecfg.embed_dim);
    query.text_token_embeddings = {query.query_embedding};

    ColdStore store(dir);
    // oracle inputs
    RelevanceScores scores;
    const OracleKind kind = oracle_kind_from_string(o.oracle);
    if (kind == OracleKind::Cosine) {
        std::vector<std::vector<float>> frames = read_frame_embeddings((dir / "frames.emb").string());
        const int chunk_frames = manifest.at("chunk_frames").get<int>();
        std::vector<std::vector<std::vector<float>>> grouped;
        for (int c = 0; c < m; ++c) {
            std::vector<std::vector<float>> g;
            for (int f = c * chunk_frames; f < std::min<int>((c + 1) * chunk_frames, static_cast<int>(frames.size()));
                 ++f)
                g.push_back(frames[static_cast<size_t>(f)]);
            grouped.push_back(std::move(g));
        }
        scores = score_cosine(query.query_embedding, grouped);
    } else if (kind == OracleKind::Attention) {
        std::vector<CompressedKV> high;
        for (int c = 0; c < m; ++c) high.push_back(store.get(c, Level::High, ecfg));
        scores = score_attention(engine, query, high);
    } else {
        BaselineKind bk = kind == OracleKind::Random    ? BaselineKind::Random
                          : kind == OracleKind::LastN   ? BaselineKind::LastN
                                                        : BaselineKind::UniformStride;
        scores = score_baseline(bk, o.seed, m, o.topk);
    }

    ReloadPlan plan = build_plan(scores, o.topk);
    HotStore hot = reload(plan, store, ecfg);
    std::vector<CompressedKV> low, high;
    for (auto& ckv : hot.take()) (ckv.level == Level::Low ? low : high).push_back(std::move(ckv));
    MergeOptions merge{!o.keep_positions};
    HybridContext hybrid = merge_hybrid(low, high, merge);

    std::vector<std::vector<float>> task = {query.query_embedding};
    std::vector<int> out_tokens = decode_answer(engine, hybrid, task, max_new);

    std::ostringstream report;
    report << "oracle=" << scores.oracle_name << " k=" << plan.k << " selected=[";
    for (size_t i = 0; i < plan.selected.size(); ++i) report << (i ? "," : "") << plan.selected[i];
    report << "] hybrid_entries=" << hybrid.total_length << "\ntokens:";
    for (int t : out_tokens) report << ' ' << t;
    report << "\n";
    emit_output(o.out, report.str());
    return 0;
}

std::vector<int64_t> parse_int_list(const std::string& csv) {
    std::vector<int64_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
    return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

std::string gnuplot_script(const std::string& csv_path) {
    std::ostringstream os;
    os << "set datafile separator ','\n"
       << "set view map\n"
       << "set xlabel 'context length (tokens)'\n"
       << "set ylabel 'needle depth'\n"
       << "set cbrange [0:1]\n"
       << "set title 'needle retrieval accuracy'\n"
       << "splot '" << csv_path << "' matrix rowheaders columnheaders using 1:2:3 with image\n";
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kvx2l: two-level KV-cache compression with task-aware selective reload"};
    app.set_config("--config", "", "config file of key = value lines");
    app.require_subcommand(1);

    CommonOpts o;

    auto* prefill = app.add_subcommand("prefill", "compress a token stream into a cache directory");
    add_common(prefill, o);
    int64_t n_tokens = 1024;
    std::string embeddings_path;
    prefill->add_option("--n-tokens", n_tokens, "synthetic token count");
    prefill->add_option("--embeddings", embeddings_path, "frame embedding file (f32, header: dim,count)");

    auto* query = app.add_subcommand("query", "score, re-load and decode against a cache directory");
    add_common(query, o);
    std::string cache_path;
    std::string prompt = "describe the clip";
    int query_token = -1;
    int max_new = 4;
    query->add_option("--cache", cache_path, "cache directory written by prefill");
    query->add_option("--prompt", prompt, "task prompt (hashed to a query embedding)");
    query->add_option("--query-token", query_token, "use this vocab id's embedding as the query");
    query->add_option("--max-new", max_new, "tokens to generate");

    auto* bench = app.add_subcommand("bench", "TTFT / reduction benchmark against the uncompressed baseline");
    add_common(bench, o);
    int64_t bench_n = 16384;
    int reps = 5;
    bench->add_option("--n", bench_n, "context size in tokens");
    bench->add_option("--reps", reps, "timed repetitions (median)");

    auto* niah = app.add_subcommand("niah", "synthetic needle-in-a-haystack grid evaluation");
    add_common(niah, o);
    std::string lengths = "128,512,2048,8192";
    std::string depths = "0,0.25,0.5,0.75,1.0";
    int trials = 100;
    double noise_scale = 0.5;
    std::string gnuplot_path;
    niah->add_option("--lengths", lengths, "comma-separated token counts");
    niah->add_option("--depths", depths, "comma-separated depths in [0,1]");
    niah->add_option("--trials", trials, "trials per cell");
    niah->add_option("--noise-scale", noise_scale, "haystack noise scale");
    niah->add_option("--emit-gnuplot", gnuplot_path, "also write a gnuplot heatmap script");

    auto* sweep_cmd = app.add_subcommand("sweep", "k or ratio-grid sweep emitting one bench record per point");
    add_common(sweep_cmd, o);
    std::string dimension = "k";
    int64_t sweep_n = 3744;
    int sweep_reps = 5;
    bool sweep_niah = false;
    sweep_cmd->add_option("--dimension", dimension, "sweep axis")->check(CLI::IsMember({"k", "ratio"}));
    sweep_cmd->add_option("--n", sweep_n, "context size in tokens");
    sweep_cmd->add_option("--reps", sweep_reps, "timed repetitions");
    sweep_cmd->add_flag("--with-niah", sweep_niah, "attach a NIAH accuracy column");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage and config-file problems are config errors
    }

    try {
        if (prefill->parsed()) return cmd_prefill(o, n_tokens, embeddings_path);
        if (query->parsed()) return cmd_query(o, cache_path, prompt, query_token, max_new);

        if (bench->parsed()) {
            Engine engine = Engine::init(engine_config(o));
            BenchOptions bo;
            bo.repetitions = reps;
            bo.seed = o.seed;
            if (!o.cache_dir.empty()) bo.cache_dir = o.cache_dir;
            BenchRecord rec = bench_config(engine, pipeline_config(o), bench_n, bo);
            emit_output(o.out, bench_csv_header() + bench_csv_row(rec));
            return 0;
        }
        if (niah->parsed()) {
            Engine engine = Engine::init(engine_config(o));
            NiahGrid grid;
            grid.lengths = parse_int_list(lengths);
            grid.depths = parse_double_list(depths);
            grid.trials = trials;
            grid.noise_scale = noise_scale;
            grid.master_seed = o.seed;
            AccuracyMatrix acc = eval_niah(engine, grid, pipeline_config(o));
            emit_output(o.out, acc.to_csv());
            if (!gnuplot_path.empty()) {
                if (o.out.empty()) throw ConfigError("--emit-gnuplot requires --out for the CSV path");
                write_text(gnuplot_path, gnuplot_script(o.out));
            }
            return 0;
        }
        if (sweep_cmd->parsed()) {
            Engine engine = Engine::init(engine_config(o));
            BenchOptions bo;
            bo.repetitions = sweep_reps;
            bo.seed = o.seed;
            if (!o.cache_dir.empty()) bo.cache_dir = o.cache_dir;
            SweepOptions so;
            so.dimension = dimension == "k" ? SweepDimension::TopK : SweepDimension::RatioGrid;
            so.include_niah = sweep_niah;
            so.niah_grid.lengths = parse_int_list(lengths.empty() ? "512" : "512");
            so.niah_grid.depths = {0.0, 0.5, 1.0};
            so.niah_grid.trials = 20;
            so.niah_grid.master_seed = o.seed;
            std::vector<BenchRecord> records = sweep(engine, pipeline_config(o), sweep_n, bo, so);
            std::string csv = bench_csv_header();
            for (const auto& r : records) csv += bench_csv_row(r);
            emit_output(o.out, csv);
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "kvx2l: config error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "kvx2l: config error: " << e.what() << "\n";
        return 2;
    } catch (const PreconditionError& e) {
        std::cerr << "kvx2l: config error: " << e.what() << "\n";
        return 2;
    } catch (const IntegrityError& e) {
        std::cerr << "kvx2l: integrity error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "kvx2l: i/o error: " << e.what() << "\n";
        return 3;
    } catch (const ResourceError& e) {
        std::cerr << "kvx2l: resource error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
