#include "kvx2l/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace kvx2l {

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw DimensionError("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

RelevanceScores score_cosine(std::span<const float> query_embedding,
                             const std::vector<std::vector<std::vector<float>>>& frames_by_chunk) {
    RelevanceScores out;
    out.oracle_name = "cosine";
    out.scores.reserve(frames_by_chunk.size());
    for (const auto& frames : frames_by_chunk) {
        if (frames.empty()) throw PreconditionError("score_cosine: chunk without frames");
        double acc = 0.0;
        for (const auto& f : frames) acc += cosine_similarity(query_embedding, f);
        out.scores.push_back(acc / static_cast<double>(frames.size()));
    }
    return out;
}

RelevanceScores score_attention(const Engine& engine, const TaskQuery& query, std::span<const CompressedKV> high_kvs) {
    query.validate();
    if (query.text_token_embeddings.empty())
        throw PreconditionError("score_attention: query token embeddings required");
    if (high_kvs.empty()) throw IntegrityError("score_attention: no high-level KVs available");
    for (size_t i = 0; i + 1 < high_kvs.size(); ++i)
        if (high_kvs[i + 1].chunk_index <= high_kvs[i].chunk_index)
            throw IntegrityError("score_attention: high-level KVs out of order or duplicated");

    const size_t E = static_cast<size_t>(engine.config().embed_dim);
    std::vector<KVPair> context = flatten_context(high_kvs);
    if (context.empty()) throw IntegrityError("score_attention: empty high-level context");

    int64_t next_pos = context.back().position + 1;
    std::vector<TokenEmbedding> block;
    block.reserve(query.text_token_embeddings.size());
    for (const auto& v : query.text_token_embeddings) {
        if (v.size() != E) throw DimensionError("score_attention: query embedding width mismatch");
        block.push_back(TokenEmbedding{v, next_pos++});
    }

    std::vector<std::vector<double>> weights = engine.context_attention_weights(block, context);

    RelevanceScores out;
    out.oracle_name = "attention";
    out.scores.assign(high_kvs.size(), 0.0);
    for (const auto& per_token : weights) {
        size_t slot = 0;
        for (size_t c = 0; c < high_kvs.size(); ++c)
            for (size_t e = 0; e < high_kvs[c].kv.size(); ++e) out.scores[c] += per_token[slot++];
    }
    double total = 0.0;
    for (double s : out.scores) total += s;
    if (total > 0.0)
        for (double& s : out.scores) s /= total;
    return out;
}

OracleKind oracle_kind_from_string(const std::string& name) {
    if (name == "cosine") return OracleKind::Cosine;
    if (name == "attention") return OracleKind::Attention;
    if (name == "random") return OracleKind::Random;
    if (name == "lastn") return OracleKind::LastN;
    if (name == "uniform") return OracleKind::Uniform;
    throw ConfigError("unknown oracle: " + name);
}

std::string oracle_kind_name(OracleKind kind) {
    switch (kind) {
        case OracleKind::Cosine: return "cosine";
        case OracleKind::Attention: return "attention";
        case OracleKind::Random: return "random";
        case OracleKind::LastN: return "lastn";
        case OracleKind::Uniform: return "uniform";
    }
    return "unknown";
}

RelevanceScores score_baseline(BaselineKind kind, uint64_t seed, int m, int k) {
    if (m < 1) throw PreconditionError("score_baseline: m must be >= 1");
    RelevanceScores out;
    out.scores.assign(static_cast<size_t>(m), 0.0);
    switch (kind) {
        case BaselineKind::Random: {
            out.oracle_name = "random";
            std::vector<int> perm(static_cast<size_t>(m));
            std::iota(perm.begin(), perm.end(), 0);
            SplitMix64 rng(seed ^ 0xa02b9fe5d3c481ULL);
            for (int i = m - 1; i > 0; --i)
                std::swap(perm[static_cast<size_t>(i)], perm[rng.next_below(static_cast<uint64_t>(i) + 1)]);
            for (int i = 0; i < m; ++i) out.scores[static_cast<size_t>(perm[static_cast<size_t>(i)])] = m - i;
            break;
        }
        case BaselineKind::LastN:
            out.oracle_name = "lastn";
            for (int i = 0; i < m; ++i) out.scores[static_cast<size_t>(i)] = i;
            break;
        case BaselineKind::UniformStride: {
            out.oracle_name = "uniform";
            if (k > 0) {
                const int stride = std::max(1, m / std::min(k, m));
                double rank = m;
                for (int c = 0, picked = 0; c < m && picked < k; c += stride, ++picked)
                    out.scores[static_cast<size_t>(c)] = rank--;
            }
            break;
        }
    }
    return out;
}

void write_frame_embeddings(const std::string& path, const std::vector<std::vector<float>>& frames) {
    if (frames.empty()) throw PreconditionError("write_frame_embeddings: no frames");
    const size_t dim = frames.front().size();
    std::vector<uint8_t> bytes;
    bytes.reserve(8 + frames.size() * dim * 4);
    put_u32(bytes, static_cast<uint32_t>(dim));
    put_u32(bytes, static_cast<uint32_t>(frames.size()));
    for (const auto& f : frames) {
        if (f.size() != dim) throw DimensionError("write_frame_embeddings: inconsistent frame dimension");
        for (float x : f) put_f32(bytes, x);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

std::vector<std::vector<float>> read_frame_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open embedding file " + path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (!in.read(reinterpret_cast<char*>(bytes.data()), size)) throw IoError("read failed for " + path);
    ByteReader r{bytes.data(), bytes.size()};
    const uint32_t dim = r.u32();
    const uint32_t count = r.u32();
    if (dim == 0 || count == 0) throw IntegrityError("embedding file " + path + " has an empty header");
    std::vector<std::vector<float>> frames(count, std::vector<float>(dim));
    for (auto& f : frames)
        for (auto& x : f) x = r.f32();
    if (r.pos != bytes.size()) throw IntegrityError("embedding file " + path + " has trailing bytes");
    return frames;
}

std::vector<int> select_topk(const RelevanceScores& scores, int k) {
    const int m = static_cast<int>(scores.scores.size());
    if (k < 0) throw PreconditionError("select_topk: negative k");
    for (double s : scores.scores)
        if (!std::isfinite(s)) throw PreconditionError("select_topk: non-finite score");
    if (k > m) {
        std::fprintf(stderr, "kvx2l: warning: top-k %d exceeds chunk count %d, clamping\n", k, m);
        k = m;
    }
    std::vector<int> order(static_cast<size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores.scores[static_cast<size_t>(a)] != scores.scores[static_cast<size_t>(b)])
            return scores.scores[static_cast<size_t>(a)] > scores.scores[static_cast<size_t>(b)];
        return a < b;
    });
    std::vector<int> selected(order.begin(), order.begin() + k);
    std::sort(selected.begin(), selected.end());
    return selected;
}

}  // namespace kvx2l
