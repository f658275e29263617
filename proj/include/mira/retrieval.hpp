#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mira/backbone.hpp"
#include "mira/memory.hpp"

namespace mira {

enum class QueryKind { Identity, Linear, MLP3 };

const char* to_string(QueryKind k);
QueryKind query_kind_from_string(const std::string& s);

// Per-layer map from the previous layer's token-0 output to the key space.
// Identity requires d_h == d_k. Parameters train only during Consolidation.
struct QueryModule {
    QueryKind kind = QueryKind::Identity;
    int layer_index = 0;
    int in_dim = 0;   // d_h
    int out_dim = 0;  // d_k
    std::vector<Parameter> params;  // Linear: {W, b}; MLP3: {W1,b1,W2,b2,W3,b3}

    static QueryModule make(QueryKind kind, int layer, int d_h, int d_k, std::uint64_t seed);
    int param_dim() const;  // total flattened parameter count (0 for Identity)
};

template <class Ctx, class QM>
typename Ctx::Val apply_query(Ctx& ctx, QM& qm, const typename Ctx::Val& h_row) {
    check_shape(ctx.value(h_row).rows() == 1 && ctx.value(h_row).cols() == qm.in_dim,
                "query input must be 1 x d_h");
    switch (qm.kind) {
        case QueryKind::Identity:
            return h_row;
        case QueryKind::Linear:
            return ctx.add_row_broadcast(ctx.matmul(h_row, ctx.param(qm.params[0])),
                                         ctx.param(qm.params[1]));
        case QueryKind::MLP3: {
            auto h1 = ctx.tanh(ctx.add_row_broadcast(ctx.matmul(h_row, ctx.param(qm.params[0])),
                                                     ctx.param(qm.params[1])));
            auto h2 = ctx.tanh(ctx.add_row_broadcast(ctx.matmul(h1, ctx.param(qm.params[2])),
                                                     ctx.param(qm.params[3])));
            return ctx.add_row_broadcast(ctx.matmul(h2, ctx.param(qm.params[4])),
                                         ctx.param(qm.params[5]));
        }
    }
    throw contract_error("unreachable query kind");
}

// Optional per-sample record of the modulated pass.
struct TraceLayer {
    Tensor h_prev;   // 1 x d_h token fed to the query module
    Tensor query;    // 1 x d_k
    Tensor weights;  // 1 x N retrieval weights
    Tensor theta;    // 1 x d_v retrieved adapter
    bool degenerate = false;
};

struct SampleTrace {
    std::vector<TraceLayer> layers;
    Tensor logits;  // 1 x C
};

// Algorithm: h_0 from the embedding; per layer compute q from the previous
// output, read the adapter ensemble, load it into the layer's Q/V
// projections, run the block. Gradient reaches keys and query parameters
// (when trainable); stored values and frozen weights enter as constants.
template <class Ctx, class Mems, class Queries>
typename Ctx::Val modulated_sample_forward(Ctx& ctx, const BackboneConfig& cfg,
                                           const FrozenWeights& frozen, Mems& memories,
                                           Queries& queries, const typename Ctx::Val& head_w,
                                           const typename Ctx::Val& head_b,
                                           const typename Ctx::Val& x_row,
                                           SampleTrace* trace = nullptr,
                                           RetrievalDiag* diag = nullptr) {
    check_contract(static_cast<int>(memories.size()) == cfg.num_layers,
                   "one memory unit per layer required");
    check_contract(static_cast<int>(queries.size()) == cfg.num_layers,
                   "one query module per layer required");
    const int r = cfg.lora_rank, d = cfg.model_dim;
    const int seg = r * d;
    auto h = embed_tokens(ctx, cfg, x_row, ctx.constant(frozen.embed_w),
                          ctx.constant(frozen.embed_b), ctx.constant(frozen.pos));
    for (int l = 0; l < cfg.num_layers; ++l) {
        auto h_tok = cfg.seq_len == 1 ? h : ctx.slice_rows(h, 0, 1);
        auto q = apply_query(ctx, queries[l], h_tok);
        auto rr = read_memory(ctx, memories[l], q, diag);
        auto a_q = ctx.reshape(ctx.slice_cols(rr.value, 0, seg), r, d);
        auto b_q = ctx.reshape(ctx.slice_cols(rr.value, seg, 2 * seg), d, r);
        auto a_v = ctx.reshape(ctx.slice_cols(rr.value, 2 * seg, 3 * seg), r, d);
        auto b_v = ctx.reshape(ctx.slice_cols(rr.value, 3 * seg, 4 * seg), d, r);
        auto w_q_eff = effective_weight(ctx, ctx.constant(frozen.layers[l].w_q), a_q, b_q,
                                        cfg.lora_scaling());
        auto w_v_eff = effective_weight(ctx, ctx.constant(frozen.layers[l].w_v), a_v, b_v,
                                        cfg.lora_scaling());
        auto weights = layer_weight_vals(ctx, frozen.layers[l], w_q_eff, w_v_eff);
        if (trace) {
            trace->layers.push_back(TraceLayer{ctx.value(h_tok), ctx.value(q),
                                               ctx.value(rr.weights), ctx.value(rr.value),
                                               rr.degenerate});
        }
        h = block_forward(ctx, cfg, h, weights);
    }
    auto logits = classify_tokens(ctx, cfg, h, ctx.constant(frozen.final_gamma),
                                  ctx.constant(frozen.final_beta), head_w, head_b);
    if (trace) trace->logits = ctx.value(logits);
    return logits;
}

// Gradient-free inference path. Same kernels, same op order, no tape, so the
// logits are bitwise identical to the recorded forward.
Tensor inference_forward(const BackboneConfig& cfg, const FrozenWeights& frozen,
                         const std::vector<MemoryUnit>& memories,
                         const std::vector<QueryModule>& queries, const Tensor& head_w,
                         const Tensor& head_b, const Tensor& x_row, SampleTrace* trace = nullptr,
                         RetrievalDiag* diag = nullptr);

}  // namespace mira
