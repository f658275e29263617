#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mira/rng.hpp"
#include "mira/tape.hpp"
#include "mira/tensor.hpp"

namespace mira {

struct BackboneConfig {
    int num_layers = 2;
    int model_dim = 16;  // d_h
    int num_heads = 2;
    int input_dim = 16;
    int num_classes = 8;
    int lora_rank = 4;  // r
    int seq_len = 1;
    double lora_alpha = -1.0;  // < 0 means alpha = rank, i.e. unit scaling
    double layer_norm_eps = 1e-5;

    int head_dim() const { return model_dim / num_heads; }
    int mlp_hidden() const { return 4 * model_dim; }
    int adapter_dim() const { return 4 * lora_rank * model_dim; }  // d_v
    double lora_scaling() const {
        return (lora_alpha < 0.0 ? static_cast<double>(lora_rank) : lora_alpha) / lora_rank;
    }
    void validate() const;
};

// Immutable substrate weights for one transformer block (right-multiply
// convention: rows times weight matrices).
struct LayerFrozen {
    Tensor w_q, w_k, w_v, w_o;                          // d_h x d_h
    Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;    // 1 x d_h
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;              // d_h x hidden, 1 x hidden, hidden x d_h, 1 x d_h
};

struct FrozenWeights {
    Tensor embed_w, embed_b;          // input_dim x d_h, 1 x d_h
    Tensor pos;                       // seq_len x d_h
    Tensor final_gamma, final_beta;   // 1 x d_h
    std::vector<LayerFrozen> layers;

    std::uint64_t checksum() const;
    std::vector<const Tensor*> tensors() const;
    std::vector<Tensor*> tensors();
};

FrozenWeights init_frozen(const BackboneConfig& cfg, std::uint64_t seed);

// Flattened per-layer LoRA payload: [A_Q | B_Q | A_V | B_V], each segment
// row-major. Length is 4 * r * d_h.
struct AdapterVector {
    int layer_index = 0;
    Tensor flat;  // 1 x d_v
};

struct AdapterSlices {
    Tensor a_q, b_q, a_v, b_v;
};

AdapterVector flatten_adapter(const BackboneConfig& cfg, int layer, const Tensor& a_q,
                              const Tensor& b_q, const Tensor& a_v, const Tensor& b_v);
AdapterSlices deflatten_adapter(const BackboneConfig& cfg, const AdapterVector& adapter);
AdapterVector zero_adapter(const BackboneConfig& cfg, int layer);

// W + scaling * B * A.
Tensor apply_adapter(const Tensor& frozen_w, const Tensor& a, const Tensor& b, double scaling);

// Trainable LoRA parameters for the adaptation stage. A is drawn from a
// small Gaussian, B starts at zero so the adapter begins as an identity
// perturbation.
struct LayerAdapterParams {
    Parameter a_q, b_q, a_v, b_v;
};
LayerAdapterParams init_lora_params(const BackboneConfig& cfg, int layer, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forward pieces shared by the recorded and gradient-free execution paths.
// ---------------------------------------------------------------------------

template <class Ctx>
struct LayerWeightVals {
    typename Ctx::Val w_q_eff, w_k, w_v_eff, w_o;
    typename Ctx::Val ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    typename Ctx::Val mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class Ctx>
typename Ctx::Val effective_weight(Ctx& ctx, const typename Ctx::Val& frozen_w,
                                   const typename Ctx::Val& a, const typename Ctx::Val& b,
                                   double scaling) {
    return ctx.add(frozen_w, ctx.scale(ctx.matmul(b, a), scaling));
}

// Frozen weights as context values, Q/V replaced by effective weights.
template <class Ctx>
LayerWeightVals<Ctx> layer_weight_vals(Ctx& ctx, const LayerFrozen& lf,
                                       const typename Ctx::Val& w_q_eff,
                                       const typename Ctx::Val& w_v_eff) {
    LayerWeightVals<Ctx> w{w_q_eff,
                           ctx.constant(lf.w_k),
                           w_v_eff,
                           ctx.constant(lf.w_o),
                           ctx.constant(lf.ln1_gamma),
                           ctx.constant(lf.ln1_beta),
                           ctx.constant(lf.ln2_gamma),
                           ctx.constant(lf.ln2_beta),
                           ctx.constant(lf.mlp_w1),
                           ctx.constant(lf.mlp_b1),
                           ctx.constant(lf.mlp_w2),
                           ctx.constant(lf.mlp_b2)};
    return w;
}

template <class Ctx>
LayerWeightVals<Ctx> frozen_layer_vals(Ctx& ctx, const LayerFrozen& lf) {
    return layer_weight_vals(ctx, lf, ctx.constant(lf.w_q), ctx.constant(lf.w_v));
}

// x_row (1 x input_dim) -> tokens (seq_len x d_h): linear embedding repeated
// across positions plus the positional table.
template <class Ctx>
typename Ctx::Val embed_tokens(Ctx& ctx, const BackboneConfig& cfg, const typename Ctx::Val& x_row,
                               const typename Ctx::Val& embed_w, const typename Ctx::Val& embed_b,
                               const typename Ctx::Val& pos) {
    auto e = ctx.add_row_broadcast(ctx.matmul(x_row, embed_w), embed_b);
    if (cfg.seq_len == 1) return ctx.add(e, pos);
    std::vector<typename Ctx::Val> reps(static_cast<size_t>(cfg.seq_len), e);
    return ctx.add(ctx.concat_rows(reps), pos);
}

template <class Ctx>
typename Ctx::Val attention(Ctx& ctx, const BackboneConfig& cfg, const typename Ctx::Val& u,
                            const LayerWeightVals<Ctx>& w) {
    auto q = ctx.matmul(u, w.w_q_eff);
    auto k = ctx.matmul(u, w.w_k);
    auto v = ctx.matmul(u, w.w_v_eff);
    const int hd = cfg.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<typename Ctx::Val> heads;
    heads.reserve(static_cast<size_t>(cfg.num_heads));
    for (int h = 0; h < cfg.num_heads; ++h) {
        auto qh = ctx.slice_cols(q, h * hd, (h + 1) * hd);
        auto kh = ctx.slice_cols(k, h * hd, (h + 1) * hd);
        auto vh = ctx.slice_cols(v, h * hd, (h + 1) * hd);
        auto scores = ctx.scale(ctx.matmul_nt(qh, kh), inv_sqrt);
        auto p = ctx.softmax_rows(scores);
        heads.push_back(ctx.matmul(p, vh));
    }
    auto cat = cfg.num_heads == 1 ? heads[0] : ctx.concat_cols(heads);
    return ctx.matmul(cat, w.w_o);
}

// Pre-norm block: h + Attn(LN1(h)), then h + MLP(LN2(h)). MLP uses tanh.
template <class Ctx>
typename Ctx::Val block_forward(Ctx& ctx, const BackboneConfig& cfg, typename Ctx::Val h,
                                const LayerWeightVals<Ctx>& w) {
    auto u = ctx.layer_norm_rows(h, w.ln1_gamma, w.ln1_beta, cfg.layer_norm_eps);
    h = ctx.add(h, attention(ctx, cfg, u, w));
    auto n = ctx.layer_norm_rows(h, w.ln2_gamma, w.ln2_beta, cfg.layer_norm_eps);
    auto m1 = ctx.tanh(ctx.add_row_broadcast(ctx.matmul(n, w.mlp_w1), w.mlp_b1));
    auto m2 = ctx.add_row_broadcast(ctx.matmul(m1, w.mlp_w2), w.mlp_b2);
    return ctx.add(h, m2);
}

// Final norm + classifier on token 0.
template <class Ctx>
typename Ctx::Val classify_tokens(Ctx& ctx, const BackboneConfig& cfg, const typename Ctx::Val& h,
                                  const typename Ctx::Val& final_gamma,
                                  const typename Ctx::Val& final_beta,
                                  const typename Ctx::Val& head_w, const typename Ctx::Val& head_b) {
    auto f = ctx.layer_norm_rows(h, final_gamma, final_beta, cfg.layer_norm_eps);
    auto token = cfg.seq_len == 1 ? f : ctx.slice_rows(f, 0, 1);
    return ctx.add_row_broadcast(ctx.matmul(token, head_w), head_b);
}

// Full forward for a single sample with per-layer effective Q/V weights
// supplied by the caller. Reports each block's output when `layer_outputs`
// is non-null (token matrices, seq_len x d_h).
template <class Ctx>
typename Ctx::Val sample_forward(Ctx& ctx, const BackboneConfig& cfg, const FrozenWeights& frozen,
                                 const typename Ctx::Val& x_row,
                                 const std::vector<LayerWeightVals<Ctx>>& weights,
                                 const typename Ctx::Val& head_w, const typename Ctx::Val& head_b,
                                 std::vector<typename Ctx::Val>* layer_outputs = nullptr) {
    check_contract(static_cast<int>(weights.size()) == cfg.num_layers,
                   "sample_forward requires one weight set per layer");
    auto h = embed_tokens(ctx, cfg, x_row, ctx.constant(frozen.embed_w), ctx.constant(frozen.embed_b),
                          ctx.constant(frozen.pos));
    for (int l = 0; l < cfg.num_layers; ++l) {
        h = block_forward(ctx, cfg, h, weights[l]);
        if (layer_outputs) layer_outputs->push_back(h);
    }
    return classify_tokens(ctx, cfg, h, ctx.constant(frozen.final_gamma),
                           ctx.constant(frozen.final_beta), head_w, head_b);
}

// Batched forward with weights shared across the batch. Only valid for
// seq_len == 1, where attention softmax over a single position reduces to
// weight 1 and the attention output is the V projection.
template <class Ctx>
typename Ctx::Val batched_forward_s1(Ctx& ctx, const BackboneConfig& cfg,
                                     const FrozenWeights& frozen, const typename Ctx::Val& x,
                                     const std::vector<LayerWeightVals<Ctx>>& weights,
                                     const typename Ctx::Val& head_w,
                                     const typename Ctx::Val& head_b,
                                     std::vector<typename Ctx::Val>* layer_outputs = nullptr) {
    check_contract(cfg.seq_len == 1, "batched_forward_s1 requires seq_len == 1");
    check_contract(static_cast<int>(weights.size()) == cfg.num_layers,
                   "batched_forward_s1 requires one weight set per layer");
    auto e = ctx.add_row_broadcast(ctx.matmul(x, ctx.constant(frozen.embed_w)),
                                   ctx.constant(frozen.embed_b));
    auto h = ctx.add_row_broadcast(e, ctx.constant(frozen.pos));
    for (int l = 0; l < cfg.num_layers; ++l) {
        const auto& w = weights[l];
        auto u = ctx.layer_norm_rows(h, w.ln1_gamma, w.ln1_beta, cfg.layer_norm_eps);
        auto attn = ctx.matmul(ctx.matmul(u, w.w_v_eff), w.w_o);
        h = ctx.add(h, attn);
        auto n = ctx.layer_norm_rows(h, w.ln2_gamma, w.ln2_beta, cfg.layer_norm_eps);
        auto m1 = ctx.tanh(ctx.add_row_broadcast(ctx.matmul(n, w.mlp_w1), w.mlp_b1));
        auto m2 = ctx.add_row_broadcast(ctx.matmul(m1, w.mlp_w2), w.mlp_b2);
        h = ctx.add(h, m2);
        if (layer_outputs) layer_outputs->push_back(h);
    }
    auto f = ctx.layer_norm_rows(h, ctx.constant(frozen.final_gamma), ctx.constant(frozen.final_beta),
                                 cfg.layer_norm_eps);
    return ctx.add_row_broadcast(ctx.matmul(f, head_w), head_b);
}

// Spec-level forward: one AdapterVector per layer, gradient-free. Exposes
// per-layer outputs (per sample) when requested.
Tensor forward_with_adapters(const BackboneConfig& cfg, const FrozenWeights& frozen,
                             const std::vector<AdapterVector>& adapters, const Tensor& head_w,
                             const Tensor& head_b, const Tensor& x,
                             std::vector<std::vector<Tensor>>* layer_outputs = nullptr);

}  // namespace mira
