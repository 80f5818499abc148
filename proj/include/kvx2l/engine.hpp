#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kvx2l/common.hpp"

namespace kvx2l {

enum class WeightMode { SeededRandom, Averaging };

// Minimal deterministic decoder-only transformer. Per layer: Q/K/V
// projections and multi-head attention, no residual stream, no MLP. The
// hidden state after layer l is the concatenated attention output, which
// keeps the averaging construction exactly analyzable.
struct EngineConfig {
    int layers = 2;
    int heads = 2;
    int head_dim = 16;
    int embed_dim = 32;  // must equal heads * head_dim
    int vocab = 64;
    uint64_t seed = 0;
    WeightMode mode = WeightMode::SeededRandom;

    void validate() const;
    uint64_t hash() const;  // stamped into cache files
};

struct TokenEmbedding {
    std::vector<float> vec;  // [embed_dim]
    int64_t position = 0;
};

// Per-token key/value tensors for every layer, shape [layers][heads][head_dim]
// flattened as layer-major. Positions live next to the tensors; rotary
// rotation is applied lazily at attention time, so re-positioning a stored
// pair never requires touching the tensor content.
struct KVPair {
    std::vector<float> key;    // [layers * heads * head_dim]
    std::vector<float> value;  // same shape
    int64_t position = 0;
};

enum class AttentionMask { Causal, Full };

struct AttendArgs {
    int heads = 1;
    int head_dim = 1;
    AttentionMask mask = AttentionMask::Causal;
    // keys[0 .. context_size) are visible to every query; the remaining keys
    // are aligned one-to-one with queries and masked by index under Causal.
    int context_size = 0;
    bool rotary = true;
    float rope_base = 10000.0f;
};

// Single-layer multi-head attention: softmax(QK^T / sqrt(head_dim)) V with
// rotary rotation of q/k by their integer positions. queries/keys/values are
// [heads * head_dim] vectors. Throws DimensionError on shape mismatch and
// PreconditionError on empty keys or decreasing key positions.
std::vector<std::vector<float>> attend(std::span<const std::vector<float>> queries,
                                       std::span<const int64_t> query_positions,
                                       std::span<const std::vector<float>> keys,
                                       std::span<const std::vector<float>> values,
                                       std::span<const int64_t> key_positions, const AttendArgs& args);

struct PrefillResult {
    std::vector<KVPair> kvs;                 // one per input token
    std::vector<std::vector<float>> hidden;  // final-layer hidden per token
};

struct DecodeStepResult {
    std::vector<float> logits;  // [vocab]
    KVPair kv;
};

class Engine {
  public:
    static Engine init(const EngineConfig& config);

    const EngineConfig& config() const { return cfg_; }
    uint64_t weight_checksum() const;

    // Embedding table row (unit norm); rows span the subspace orthogonal to
    // the summary placeholder so summary padding cannot bias the readout.
    std::vector<float> token_embedding(int token_id) const;
    const std::vector<float>& summary_token_embedding() const { return summary_embedding_; }

    // Encodes `tokens` with causal masking among themselves and full
    // visibility onto `context`. Token positions must be strictly increasing
    // and start past the last context position.
    PrefillResult forward_prefill(std::span<const TokenEmbedding> tokens, std::span<const KVPair> context) const;

    DecodeStepResult forward_decode_step(const TokenEmbedding& last_token, std::span<const KVPair> context) const;

    // Final-layer attention mass that each token in `tokens` places on the
    // context slots, summed over heads. out[i][j] is token i's weight on
    // context entry j; the block's own keys absorb the remaining mass.
    std::vector<std::vector<double>> context_attention_weights(std::span<const TokenEmbedding> tokens,
                                                               std::span<const KVPair> context) const;

    std::vector<float> logits_from_hidden(std::span<const float> hidden) const;
    static int argmax_token(std::span<const float> logits);

  private:
    Engine() = default;

    std::span<const float> weight(const std::vector<float>& w, int layer) const;
    void project(const std::vector<float>& w, int layer, std::span<const float> x, float* out) const;
    PrefillResult prefill_general(std::span<const TokenEmbedding> tokens, std::span<const KVPair> context) const;
    PrefillResult prefill_averaging(std::span<const TokenEmbedding> tokens, std::span<const KVPair> context) const;

    EngineConfig cfg_;
    std::vector<float> wq_, wk_, wv_;  // [layers][embed_dim][embed_dim]
    std::vector<float> embedding_;     // [vocab][embed_dim]
    std::vector<float> summary_embedding_;
};

}  // namespace kvx2l
