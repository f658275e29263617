#include "mira/backbone.hpp"

namespace mira {

void BackboneConfig::validate() const {
    check_config(num_layers > 0, "num_layers must be positive");
    check_config(model_dim > 0, "model_dim must be positive");
    check_config(num_heads > 0 && model_dim % num_heads == 0,
                 "model_dim must be divisible by num_heads");
    check_config(input_dim > 0, "input_dim must be positive");
    check_config(num_classes > 0, "num_classes must be positive");
    check_config(lora_rank > 0 && lora_rank <= model_dim, "lora_rank must be in [1, model_dim]");
    check_config(seq_len > 0, "seq_len must be positive");
}

std::vector<const Tensor*> FrozenWeights::tensors() const {
    std::vector<const Tensor*> out = {&embed_w, &embed_b, &pos, &final_gamma, &final_beta};
    for (const LayerFrozen& l : layers) {
        out.insert(out.end(), {&l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.ln1_gamma, &l.ln1_beta,
                               &l.ln2_gamma, &l.ln2_beta, &l.mlp_w1, &l.mlp_b1, &l.mlp_w2, &l.mlp_b2});
    }
    return out;
}

std::vector<Tensor*> FrozenWeights::tensors() {
    std::vector<Tensor*> out = {&embed_w, &embed_b, &pos, &final_gamma, &final_beta};
    for (LayerFrozen& l : layers) {
        out.insert(out.end(), {&l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.ln1_gamma, &l.ln1_beta,
                               &l.ln2_gamma, &l.ln2_beta, &l.mlp_w1, &l.mlp_b1, &l.mlp_w2, &l.mlp_b2});
    }
    return out;
}

std::uint64_t FrozenWeights::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const Tensor* t : tensors()) {
        const std::uint64_t c = t->checksum();
        for (int i = 0; i < 8; ++i) {
            h ^= (c >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

namespace {
Tensor xavier(std::mt19937_64& rng, int rows, int cols) {
    const double std_dev = std::sqrt(2.0 / (rows + cols));
    return gaussian_tensor(rng, rows, cols, std_dev);
}
}  // namespace

FrozenWeights init_frozen(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    FrozenWeights fw;
    auto rng = make_rng(seed, "frozen-backbone");
    const int d = cfg.model_dim;
    fw.embed_w = xavier(rng, cfg.input_dim, d);
    fw.embed_b = Tensor(1, d);
    fw.pos = gaussian_tensor(rng, cfg.seq_len, d, 0.02);
    fw.final_gamma = Tensor::full(1, d, 1.0);
    fw.final_beta = Tensor(1, d);
    fw.layers.resize(static_cast<size_t>(cfg.num_layers));
    for (LayerFrozen& l : fw.layers) {
        l.w_q = xavier(rng, d, d);
        l.w_k = xavier(rng, d, d);
        l.w_v = xavier(rng, d, d);
        l.w_o = xavier(rng, d, d);
        l.ln1_gamma = Tensor::full(1, d, 1.0);
        l.ln1_beta = Tensor(1, d);
        l.ln2_gamma = Tensor::full(1, d, 1.0);
        l.ln2_beta = Tensor(1, d);
        l.mlp_w1 = xavier(rng, d, cfg.mlp_hidden());
        l.mlp_b1 = Tensor(1, cfg.mlp_hidden());
        l.mlp_w2 = xavier(rng, cfg.mlp_hidden(), d);
        l.mlp_b2 = Tensor(1, d);
    }
    return fw;
}

AdapterVector flatten_adapter(const BackboneConfig& cfg, int layer, const Tensor& a_q,
                              const Tensor& b_q, const Tensor& a_v, const Tensor& b_v) {
    const int r = cfg.lora_rank, d = cfg.model_dim;
    check_shape(a_q.rows() == r && a_q.cols() == d, "flatten_adapter: A_Q must be r x d_h");
    check_shape(b_q.rows() == d && b_q.cols() == r, "flatten_adapter: B_Q must be d_h x r");
    check_shape(a_v.rows() == r && a_v.cols() == d, "flatten_adapter: A_V must be r x d_h");
    check_shape(b_v.rows() == d && b_v.cols() == r, "flatten_adapter: B_V must be d_h x r");
    AdapterVector out;
    out.layer_index = layer;
    out.flat = Tensor(1, cfg.adapter_dim());
    std::int64_t o = 0;
    for (const Tensor* t : {&a_q, &b_q, &a_v, &b_v}) {
        for (std::int64_t i = 0; i < t->size(); ++i) out.flat[o++] = (*t)[i];
    }
    return out;
}

AdapterSlices deflatten_adapter(const BackboneConfig& cfg, const AdapterVector& adapter) {
    const int r = cfg.lora_rank, d = cfg.model_dim;
    check_shape(adapter.flat.size() == cfg.adapter_dim(),
                "deflatten_adapter: flat length does not match config");
    const std::int64_t seg = static_cast<std::int64_t>(r) * d;
    AdapterSlices s{Tensor(r, d), Tensor(d, r), Tensor(r, d), Tensor(d, r)};
    Tensor* parts[4] = {&s.a_q, &s.b_q, &s.a_v, &s.b_v};
    std::int64_t o = 0;
    for (Tensor* t : parts) {
        for (std::int64_t i = 0; i < seg; ++i) (*t)[i] = adapter.flat[o++];
    }
    return s;
}

AdapterVector zero_adapter(const BackboneConfig& cfg, int layer) {
    AdapterVector out;
    out.layer_index = layer;
    out.flat = Tensor(1, cfg.adapter_dim());
    return out;
}

Tensor apply_adapter(const Tensor& frozen_w, const Tensor& a, const Tensor& b, double scaling) {
    check_shape(b.cols() == a.rows(), "apply_adapter: B columns must match A rows");
    check_shape(frozen_w.rows() == b.rows() && frozen_w.cols() == a.cols(),
                "apply_adapter: B*A must match frozen weight shape");
    return kernels::add(frozen_w, kernels::scale(kernels::matmul(b, a), scaling));
}

LayerAdapterParams init_lora_params(const BackboneConfig& cfg, int layer, std::uint64_t seed) {
    const int r = cfg.lora_rank, d = cfg.model_dim;
    auto rng = make_rng(seed, "lora-init", static_cast<std::uint64_t>(layer));
    LayerAdapterParams p;
    const std::string base = "layer" + std::to_string(layer);
    p.a_q = Parameter(base + ".a_q", gaussian_tensor(rng, r, d, 0.02));
    p.b_q = Parameter(base + ".b_q", Tensor(d, r));
    p.a_v = Parameter(base + ".a_v", gaussian_tensor(rng, r, d, 0.02));
    p.b_v = Parameter(base + ".b_v", Tensor(d, r));
    return p;
}

Tensor forward_with_adapters(const BackboneConfig& cfg, const FrozenWeights& frozen,
                             const std::vector<AdapterVector>& adapters, const Tensor& head_w,
                             const Tensor& head_b, const Tensor& x,
                             std::vector<std::vector<Tensor>>* layer_outputs) {
    check_contract(static_cast<int>(adapters.size()) == cfg.num_layers,
                   "forward requires exactly one adapter per layer");
    EvalCtx ctx;
    std::vector<LayerWeightVals<EvalCtx>> weights;
    weights.reserve(adapters.size());
    for (int l = 0; l < cfg.num_layers; ++l) {
        check_contract(adapters[l].layer_index == l, "adapter layer index mismatch");
        AdapterSlices s = deflatten_adapter(cfg, adapters[l]);
        Tensor w_q_eff = apply_adapter(frozen.layers[l].w_q, s.a_q, s.b_q, cfg.lora_scaling());
        Tensor w_v_eff = apply_adapter(frozen.layers[l].w_v, s.a_v, s.b_v, cfg.lora_scaling());
        weights.push_back(layer_weight_vals(ctx, frozen.layers[l], w_q_eff, w_v_eff));
    }
    check_shape(x.cols() == cfg.input_dim, "input feature dimension mismatch");
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(x.rows()));
    for (int i = 0; i < x.rows(); ++i) {
        std::vector<Tensor> per_layer;
        Tensor logits = sample_forward(ctx, cfg, frozen, kernels::slice_rows(x, i, i + 1), weights,
                                       head_w, head_b, layer_outputs ? &per_layer : nullptr);
        if (layer_outputs) layer_outputs->push_back(std::move(per_layer));
        rows.push_back(std::move(logits));
    }
    return ctx.concat_rows(rows);
}

}  // namespace mira
