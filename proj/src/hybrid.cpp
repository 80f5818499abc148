#include "kvx2l/hybrid.hpp"

#include <algorithm>

namespace kvx2l {

ReloadPlan build_plan(const RelevanceScores& scores, int k) {
    ReloadPlan plan;
    plan.selected = select_topk(scores, k);
    plan.k = static_cast<int>(plan.selected.size());
    plan.oracle_name = scores.oracle_name;
    std::vector<char> chosen(scores.scores.size(), 0);
    for (int c : plan.selected) chosen[static_cast<size_t>(c)] = 1;
    for (size_t i = 0; i < scores.scores.size(); ++i)
        if (!chosen[i]) plan.complement.push_back(static_cast<int>(i));
    return plan;
}

std::vector<KVPair> HybridContext::kv_list() const {
    std::vector<KVPair> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.kv);
    return out;
}

HybridContext merge_hybrid(std::span<const CompressedKV> selected_low, std::span<const CompressedKV> complement_high,
                           const MergeOptions& options) {
    for (const auto& ckv : selected_low)
        if (ckv.level != Level::Low) throw IntegrityError("merge_hybrid: selected record is not low-level");
    for (const auto& ckv : complement_high)
        if (ckv.level != Level::High) throw IntegrityError("merge_hybrid: complement record is not high-level");

    std::vector<const CompressedKV*> all;
    all.reserve(selected_low.size() + complement_high.size());
    for (const auto& ckv : selected_low) all.push_back(&ckv);
    for (const auto& ckv : complement_high) all.push_back(&ckv);
    std::sort(all.begin(), all.end(),
              [](const CompressedKV* a, const CompressedKV* b) { return a->chunk_index < b->chunk_index; });
    for (size_t i = 0; i + 1 < all.size(); ++i)
        if (all[i]->chunk_index == all[i + 1]->chunk_index)
            throw IntegrityError("merge_hybrid: duplicate record for chunk " + std::to_string(all[i]->chunk_index));

    HybridContext ctx;
    ctx.renumbered = options.renumber;
    int64_t pos = 0;
    for (const CompressedKV* ckv : all) {
        for (const auto& kv : ckv->kv) {
            HybridEntry e;
            e.kv = kv;
            if (options.renumber) e.kv.position = pos;
            e.chunk_index = ckv->chunk_index;
            e.level = ckv->level;
            ctx.entries.push_back(std::move(e));
            ++pos;
        }
    }
    ctx.total_length = static_cast<int64_t>(ctx.entries.size());
    if (!options.renumber)
        for (size_t i = 0; i + 1 < ctx.entries.size(); ++i)
            if (ctx.entries[i + 1].kv.position <= ctx.entries[i].kv.position)
                throw IntegrityError("merge_hybrid: original positions are not strictly increasing across chunks");
    return ctx;
}

std::vector<int> decode_answer(const Engine& engine, const HybridContext& hybrid,
                               std::span<const std::vector<float>> task_embeddings, int max_new) {
    if (hybrid.entries.empty()) throw PreconditionError("decode_answer: empty hybrid context");
    if (task_embeddings.empty()) throw PreconditionError("decode_answer: at least one task token required");
    if (max_new < 1) throw PreconditionError("decode_answer: max_new must be >= 1");

    std::vector<KVPair> session = hybrid.kv_list();
    int64_t next_pos = 0;
    for (const auto& kv : session) next_pos = std::max(next_pos, kv.position + 1);

    std::vector<TokenEmbedding> task;
    task.reserve(task_embeddings.size());
    for (const auto& v : task_embeddings) task.push_back(TokenEmbedding{v, next_pos++});
    PrefillResult pre = engine.forward_prefill(task, session);
    for (auto& kv : pre.kvs) session.push_back(std::move(kv));
    std::vector<float> logits = engine.logits_from_hidden(pre.hidden.back());

    std::vector<int> generated;
    generated.reserve(static_cast<size_t>(max_new));
    for (int step = 0; step < max_new; ++step) {
        const int tok = Engine::argmax_token(logits);
        generated.push_back(tok);
        if (step + 1 == max_new) break;
        TokenEmbedding fed{engine.token_embedding(tok), next_pos++};
        DecodeStepResult r = engine.forward_decode_step(fed, session);
        session.push_back(std::move(r.kv));
        logits = std::move(r.logits);
    }
    return generated;
}

}  // namespace kvx2l
