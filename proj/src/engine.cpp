#include "kvx2l/engine.hpp"

#include <algorithm>
#include <cmath>

namespace kvx2l {

void EngineConfig::validate() const {
    if (layers < 1 || heads < 1 || head_dim < 1 || embed_dim < 1 || vocab < 1)
        throw ConfigError("engine config: all counts must be >= 1");
    if (embed_dim != heads * head_dim)
        throw ConfigError("engine config: embed_dim must equal heads * head_dim");
}

uint64_t EngineConfig::hash() const {
    uint64_t h = 1469598103934665603ULL;
    int fields[5] = {layers, heads, head_dim, embed_dim, vocab};
    h = fnv1a64(fields, sizeof(fields), h);
    h = fnv1a64(&seed, sizeof(seed), h);
    uint8_t m = mode == WeightMode::Averaging ? 1 : 0;
    return fnv1a64(&m, 1, h);
}

namespace {

// Rotates consecutive (even, odd) pairs of each head vector by pos * theta_j.
// Odd head_dim leaves the final component unrotated.
void rotate_heads(float* vec, int heads, int head_dim, int64_t pos, const std::vector<double>& inv_freq) {
    if (pos == 0) return;
    for (int h = 0; h < heads; ++h) {
        float* v = vec + static_cast<size_t>(h) * head_dim;
        for (size_t j = 0; j < inv_freq.size(); ++j) {
            double angle = static_cast<double>(pos) * inv_freq[j];
            double c = std::cos(angle);
            double s = std::sin(angle);
            double a = v[2 * j];
            double b = v[2 * j + 1];
            v[2 * j] = static_cast<float>(a * c - b * s);
            v[2 * j + 1] = static_cast<float>(a * s + b * c);
        }
    }
}

std::vector<double> make_inv_freq(int head_dim, float base) {
    std::vector<double> inv(static_cast<size_t>(head_dim / 2));
    for (size_t j = 0; j < inv.size(); ++j)
        inv[j] = std::pow(static_cast<double>(base), -2.0 * static_cast<double>(j) / head_dim);
    return inv;
}

}  // namespace

std::vector<std::vector<float>> attend(std::span<const std::vector<float>> queries,
                                       std::span<const int64_t> query_positions,
                                       std::span<const std::vector<float>> keys,
                                       std::span<const std::vector<float>> values,
                                       std::span<const int64_t> key_positions, const AttendArgs& args) {
    const int dim = args.heads * args.head_dim;
    if (keys.empty()) throw PreconditionError("attend: empty key/value list");
    if (keys.size() != values.size() || keys.size() != key_positions.size())
        throw DimensionError("attend: key/value/position lists misaligned");
    if (queries.size() != query_positions.size()) throw DimensionError("attend: query/position lists misaligned");
    for (const auto& q : queries)
        if (static_cast<int>(q.size()) != dim) throw DimensionError("attend: query width != heads*head_dim");
    for (size_t j = 0; j < keys.size(); ++j)
        if (static_cast<int>(keys[j].size()) != dim || static_cast<int>(values[j].size()) != dim)
            throw DimensionError("attend: key/value width != heads*head_dim");
    for (size_t j = 0; j + 1 < key_positions.size(); ++j)
        if (key_positions[j + 1] < key_positions[j]) throw PreconditionError("attend: key positions must be nondecreasing");
    if (args.mask == AttentionMask::Causal && keys.size() != static_cast<size_t>(args.context_size) + queries.size())
        throw DimensionError("attend: causal mask requires context_size + one key per query");

    const auto inv_freq = args.rotary ? make_inv_freq(args.head_dim, args.rope_base) : std::vector<double>{};
    const double scale = 1.0 / std::sqrt(static_cast<double>(args.head_dim));

    // rotate keys once
    std::vector<std::vector<float>> rk(keys.size());
    for (size_t j = 0; j < keys.size(); ++j) {
        rk[j] = keys[j];
        if (args.rotary) rotate_heads(rk[j].data(), args.heads, args.head_dim, key_positions[j], inv_freq);
    }

    std::vector<std::vector<float>> out(queries.size());
    parallel_for(queries.size(), [&](size_t i) {
        std::vector<float> rq = queries[i];
        if (args.rotary) rotate_heads(rq.data(), args.heads, args.head_dim, query_positions[i], inv_freq);
        const size_t visible =
            args.mask == AttentionMask::Full ? keys.size() : static_cast<size_t>(args.context_size) + i + 1;
        std::vector<float>& o = out[i];
        o.assign(static_cast<size_t>(dim), 0.0f);
        std::vector<double> weights(visible);
        for (int h = 0; h < args.heads; ++h) {
            const float* qh = rq.data() + static_cast<size_t>(h) * args.head_dim;
            double max_score = -1e300;
            for (size_t j = 0; j < visible; ++j) {
                const float* kh = rk[j].data() + static_cast<size_t>(h) * args.head_dim;
                double dot = 0.0;
                for (int c = 0; c < args.head_dim; ++c) dot += static_cast<double>(qh[c]) * kh[c];
                weights[j] = dot * scale;
                max_score = std::max(max_score, weights[j]);
            }
            double denom = 0.0;
            for (size_t j = 0; j < visible; ++j) {
                weights[j] = std::exp(weights[j] - max_score);
                denom += weights[j];
            }
            float* oh = o.data() + static_cast<size_t>(h) * args.head_dim;
            for (int c = 0; c < args.head_dim; ++c) {
                double acc = 0.0;
                for (size_t j = 0; j < visible; ++j)
                    acc += weights[j] * values[j][static_cast<size_t>(h) * args.head_dim + c];
                oh[c] = static_cast<float>(acc / denom);
            }
        }
    });
    return out;
}

Engine Engine::init(const EngineConfig& config) {
    config.validate();
    Engine e;
    e.cfg_ = config;
    const size_t E = static_cast<size_t>(config.embed_dim);
    const size_t wsize = static_cast<size_t>(config.layers) * E * E;
    e.wq_.assign(wsize, 0.0f);
    e.wk_.assign(wsize, 0.0f);
    e.wv_.assign(wsize, 0.0f);

    SplitMix64 rng(config.seed ^ 0x5cd1e2f6a1b4c3d8ULL);
    const double wscale = std::sqrt(3.0 / static_cast<double>(config.embed_dim));
    if (config.mode == WeightMode::SeededRandom) {
        for (auto* w : {&e.wq_, &e.wk_, &e.wv_})
            for (auto& x : *w) x = static_cast<float>(rng.next_uniform(-wscale, wscale));
    } else {
        // Averaging construction: zero Q/K gives a uniform softmax over the
        // visible set, identity V makes each value the incoming hidden, so
        // every attention output is the plain mean of visible values.
        for (int l = 0; l < config.layers; ++l)
            for (size_t i = 0; i < E; ++i) e.wv_[static_cast<size_t>(l) * E * E + i * E + i] = 1.0f;
    }

    // Placeholder embedding shared by all summary tokens, then the tied
    // readout table. Table rows are unit-normalized and projected orthogonal
    // to the placeholder so resident summary padding is invisible to logits.
    e.summary_embedding_.resize(E);
    double pn = 0.0;
    for (auto& x : e.summary_embedding_) {
        x = static_cast<float>(rng.next_gauss());
        pn += static_cast<double>(x) * x;
    }
    pn = std::sqrt(pn);
    for (auto& x : e.summary_embedding_) x = static_cast<float>(x / pn);

    e.embedding_.resize(static_cast<size_t>(config.vocab) * E);
    for (int t = 0; t < config.vocab; ++t) {
        float* row = e.embedding_.data() + static_cast<size_t>(t) * E;
        while (true) {
            double dot = 0.0;
            for (size_t i = 0; i < E; ++i) {
                row[i] = static_cast<float>(rng.next_gauss());
                dot += static_cast<double>(row[i]) * e.summary_embedding_[i];
            }
            double norm = 0.0;
            for (size_t i = 0; i < E; ++i) {
                row[i] = static_cast<float>(row[i] - dot * e.summary_embedding_[i]);
                norm += static_cast<double>(row[i]) * row[i];
            }
            norm = std::sqrt(norm);
            if (norm > 1e-6) {
                for (size_t i = 0; i < E; ++i) row[i] = static_cast<float>(row[i] / norm);
                break;
            }
        }
    }
    return e;
}

uint64_t Engine::weight_checksum() const {
    uint64_t h = fnv1a64(wq_.data(), wq_.size() * sizeof(float));
    h = fnv1a64(wk_.data(), wk_.size() * sizeof(float), h);
    h = fnv1a64(wv_.data(), wv_.size() * sizeof(float), h);
    h = fnv1a64(embedding_.data(), embedding_.size() * sizeof(float), h);
    return fnv1a64(summary_embedding_.data(), summary_embedding_.size() * sizeof(float), h);
}

std::vector<float> Engine::token_embedding(int token_id) const {
    if (token_id < 0 || token_id >= cfg_.vocab) throw PreconditionError("token id out of vocab range");
    const size_t E = static_cast<size_t>(cfg_.embed_dim);
    const float* row = embedding_.data() + static_cast<size_t>(token_id) * E;
    return std::vector<float>(row, row + E);
}

std::span<const float> Engine::weight(const std::vector<float>& w, int layer) const {
    const size_t E = static_cast<size_t>(cfg_.embed_dim);
    return {w.data() + static_cast<size_t>(layer) * E * E, E * E};
}

void Engine::project(const std::vector<float>& w, int layer, std::span<const float> x, float* out) const {
    const size_t E = static_cast<size_t>(cfg_.embed_dim);
    auto m = weight(w, layer);
    for (size_t i = 0; i < E; ++i) {
        double acc = 0.0;
        const float* row = m.data() + i * E;
        for (size_t j = 0; j < E; ++j) acc += static_cast<double>(row[j]) * x[j];
        out[i] = static_cast<float>(acc);
    }
}

PrefillResult Engine::forward_prefill(std::span<const TokenEmbedding> tokens, std::span<const KVPair> context) const {
    if (tokens.empty()) throw PreconditionError("forward_prefill: empty token block");
    const size_t E = static_cast<size_t>(cfg_.embed_dim);
    const size_t stride = static_cast<size_t>(cfg_.layers) * E;
    const int64_t last_ctx_pos = context.empty() ? -1 : context.back().position;
    for (const auto& ctx : context)
        if (ctx.key.size() != stride || ctx.value.size() != stride)
            throw DimensionError("forward_prefill: context KV shape mismatch");
    int64_t prev = last_ctx_pos;
    for (const auto& t : tokens) {
        if (t.vec.size() != E) throw DimensionError("forward_prefill: token embedding width mismatch");
        if (t.position <= prev)
            throw PreconditionError("forward_prefill: token positions must be strictly increasing past the context");
        prev = t.position;
        for (float x : t.vec)
            if (!std::isfinite(x)) throw PreconditionError("forward_prefill: non-finite token embedding entry");
    }
    return cfg_.mode == WeightMode::Averaging ? prefill_averaging(tokens, context) : prefill_general(tokens, context);
}

PrefillResult Engine::prefill_general(std::span<const TokenEmbedding> tokens, std::span<const KVPair> context) const {
    const size_t E = static_cast<size_t>(cfg_.embed_dim);
    const size_t n = tokens.size();
    const size_t nc = context.size();

    PrefillResult res;
    res.kvs.resize(n);
    for (size_t t = 0; t < n; ++t) {
        res.kvs[t].key.assign(static_cast<size_t>(cfg_.layers) * E, 0.0f);
        res.kvs[t].value.assign(static_cast<size_t>(cfg_.layers) * E, 0.0f);
        res.kvs[t].position = tokens[t].position;
    }

    std::vector<std::vector<float>> hidden(n);
    for (size_t t = 0; t < n; ++t) hidden[t] = tokens[t].vec;

    AttendArgs args;
    args.heads = cfg_.heads;
    args.head_dim = cfg_.head_dim;
    args.mask = AttentionMask::Causal;
    args.context_size = static_cast<int>(nc);

    std::vector<std::vector<float>> keys(nc + n), vals(nc + n), queries(n);
    std::vector<int64_t> kpos(nc + n), qpos(n);
    for (int l = 0; l < cfg_.layers; ++l) {
        const size_t off = static_cast<size_t>(l) * E;
        for (size_t j = 0; j < nc; ++j) {
            keys[j].assign(context[j].key.begin() + off, context[j].key.begin() + off + E);
            vals[j].assign(context[j].value.begin() + off, context[j].value.begin() + off + E);
            kpos[j] = context[j].position;
        }
        for (size_t t = 0; t < n; ++t) {
            auto& kv = res.kvs[t];
            queries[t].assign(E, 0.0f);
            project(wq_, l, hidden[t], queries[t].data());
            project(wk_, l, hidden[t], kv.key.data() + off);
            project(wv_, l, hidden[t], kv.value.data() + off);
            keys[nc + t].assign(kv.key.begin() + off, kv.key.begin() + off + E);
            vals[nc + t].assign(kv.value.begin() + off, kv.value.begin() + off + E);
            kpos[nc + t] = tokens[t].position;
            qpos[t] = tokens[t].position;
        }
        hidden = attend(queries, qpos, keys, vals, kpos, args);
    }
    res.hidden = std::move(hidden);
    return res;
}

// Uniform-softmax fast path: attention over the visible set reduces to a
// running mean, which keeps long prefills linear in sequence length. The
// equivalence with the general path is pinned by the averaging-oracle tests.
PrefillResult Engine::prefill_averaging(std::span<const TokenEmbedding> tokens, std::span<const KVPair> context) const {
    const size_t E = static_cast<size_t>(cfg_.embed_dim);
    const size_t n = tokens.size();
    const size_t nc = context.size();

    PrefillResult res;
    res.kvs.resize(n);
    for (size_t t = 0; t < n; ++t) {
        res.kvs[t].key.assign(static_cast<size_t>(cfg_.layers) * E, 0.0f);
        res.kvs[t].value.assign(static_cast<size_t>(cfg_.layers) * E, 0.0f);
        res.kvs[t].position = tokens[t].position;
    }

    std::vector<std::vector<float>> hidden(n);
    for (size_t t = 0; t < n; ++t) hidden[t] = tokens[t].vec;

    std::vector<double> running(E);
    for (int l = 0; l < cfg_.layers; ++l) {
        const size_t off = static_cast<size_t>(l) * E;
        std::fill(running.begin(), running.end(), 0.0);
        for (size_t j = 0; j < nc; ++j)
            for (size_t i = 0; i < E; ++i) running[i] += static_cast<double>(context[j].value[off + i]);
        for (size_t t = 0; t < n; ++t) {
            float* v = res.kvs[t].value.data() + off;
            for (size_t i = 0; i < E; ++i) v[i] = hidden[t][i];  // identity V, zero K
            for (size_t i = 0; i < E; ++i) running[i] += static_cast<double>(v[i]);
            const double denom = static_cast<double>(nc + t + 1);
            for (size_t i = 0; i < E; ++i) hidden[t][i] = static_cast<float>(running[i] / denom);
        }
    }
    res.hidden = std::move(hidden);
    return res;
}

std::vector<std::vector<double>> Engine::context_attention_weights(std::span<const TokenEmbedding> tokens,
                                                                   std::span<const KVPair> context) const {
    if (tokens.empty()) throw PreconditionError("context_attention_weights: empty token block");
    if (context.empty()) throw PreconditionError("context_attention_weights: empty context");
    const size_t E = static_cast<size_t>(cfg_.embed_dim);
    const size_t n = tokens.size();
    const size_t nc = context.size();
    const int last = cfg_.layers - 1;
    const size_t off = static_cast<size_t>(last) * E;

    std::vector<std::vector<double>> out(n, std::vector<double>(nc, 0.0));
    if (cfg_.mode == WeightMode::Averaging) {
        for (size_t t = 0; t < n; ++t) {
            const double w = 1.0 / static_cast<double>(nc + t + 1);
            for (size_t j = 0; j < nc; ++j) out[t][j] = w * cfg_.heads;
        }
        return out;
    }

    // Hiddens entering the final layer come from a prefill truncated to the
    // earlier layers; with one layer those are the raw embeddings.
    std::vector<std::vector<float>> entering(n);
    if (last == 0) {
        for (size_t t = 0; t < n; ++t) entering[t] = tokens[t].vec;
    } else {
        Engine trunk = *this;
        trunk.cfg_.layers = last;
        const size_t wfloats = static_cast<size_t>(last) * E * E;
        trunk.wq_.assign(wq_.begin(), wq_.begin() + static_cast<std::ptrdiff_t>(wfloats));
        trunk.wk_.assign(wk_.begin(), wk_.begin() + static_cast<std::ptrdiff_t>(wfloats));
        trunk.wv_.assign(wv_.begin(), wv_.begin() + static_cast<std::ptrdiff_t>(wfloats));
        const std::ptrdiff_t kv_floats = static_cast<std::ptrdiff_t>(static_cast<size_t>(last) * E);
        std::vector<KVPair> trunk_ctx(nc);
        for (size_t j = 0; j < nc; ++j) {
            trunk_ctx[j].position = context[j].position;
            trunk_ctx[j].key.assign(context[j].key.begin(), context[j].key.begin() + kv_floats);
            trunk_ctx[j].value.assign(context[j].value.begin(), context[j].value.begin() + kv_floats);
        }
        entering = trunk.forward_prefill(tokens, trunk_ctx).hidden;
    }

    const auto inv_freq = make_inv_freq(cfg_.head_dim, 10000.0f);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim));

    std::vector<std::vector<float>> keys(nc + n);
    std::vector<int64_t> kpos(nc + n);
    for (size_t j = 0; j < nc; ++j) {
        keys[j].assign(context[j].key.begin() + off, context[j].key.begin() + off + E);
        kpos[j] = context[j].position;
        rotate_heads(keys[j].data(), cfg_.heads, cfg_.head_dim, kpos[j], inv_freq);
    }
    for (size_t t = 0; t < n; ++t) {
        keys[nc + t].assign(E, 0.0f);
        project(wk_, last, entering[t], keys[nc + t].data());
        kpos[nc + t] = tokens[t].position;
        rotate_heads(keys[nc + t].data(), cfg_.heads, cfg_.head_dim, kpos[nc + t], inv_freq);
    }

    std::vector<float> q(E);
    std::vector<double> scores;
    for (size_t t = 0; t < n; ++t) {
        project(wq_, last, entering[t], q.data());
        rotate_heads(q.data(), cfg_.heads, cfg_.head_dim, tokens[t].position, inv_freq);
        const size_t visible = nc + t + 1;
        scores.assign(visible, 0.0);
        for (int h = 0; h < cfg_.heads; ++h) {
            const float* qh = q.data() + static_cast<size_t>(h) * cfg_.head_dim;
            double max_score = -1e300;
            for (size_t j = 0; j < visible; ++j) {
                const float* kh = keys[j].data() + static_cast<size_t>(h) * cfg_.head_dim;
                double dot = 0.0;
                for (int c = 0; c < cfg_.head_dim; ++c) dot += static_cast<double>(qh[c]) * kh[c];
                scores[j] = dot * scale;
                max_score = std::max(max_score, scores[j]);
            }
            double denom = 0.0;
            for (size_t j = 0; j < visible; ++j) denom += std::exp(scores[j] - max_score);
            for (size_t j = 0; j < nc; ++j) out[t][j] += std::exp(scores[j] - max_score) / denom;
        }
    }
    return out;
}

DecodeStepResult Engine::forward_decode_step(const TokenEmbedding& last_token, std::span<const KVPair> context) const {
    if (context.empty()) throw PreconditionError("forward_decode_step: empty context");
    PrefillResult pre = forward_prefill(std::span<const TokenEmbedding>(&last_token, 1), context);
    DecodeStepResult out;
    out.kv = std::move(pre.kvs[0]);
    out.logits = logits_from_hidden(pre.hidden[0]);
    return out;
}

std::vector<float> Engine::logits_from_hidden(std::span<const float> hidden) const {
    const size_t E = static_cast<size_t>(cfg_.embed_dim);
    if (hidden.size() != E) throw DimensionError("logits_from_hidden: hidden width mismatch");
    std::vector<float> logits(static_cast<size_t>(cfg_.vocab));
    for (int t = 0; t < cfg_.vocab; ++t) {
        const float* row = embedding_.data() + static_cast<size_t>(t) * E;
        double acc = 0.0;
        for (size_t i = 0; i < E; ++i) acc += static_cast<double>(row[i]) * hidden[i];
        logits[static_cast<size_t>(t)] = static_cast<float>(acc);
    }
    return logits;
}

int Engine::argmax_token(std::span<const float> logits) {
    if (logits.empty()) throw PreconditionError("argmax over empty logits");
    size_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return static_cast<int>(best);
}

}  // namespace kvx2l
