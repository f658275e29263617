#include "mira/retrieval.hpp"

namespace mira {

const char* to_string(QueryKind k) {
    switch (k) {
        case QueryKind::Identity: return "identity";
        case QueryKind::Linear: return "linear";
        case QueryKind::MLP3: return "mlp3";
    }
    return "?";
}

QueryKind query_kind_from_string(const std::string& s) {
    if (s == "identity") return QueryKind::Identity;
    if (s == "linear") return QueryKind::Linear;
    if (s == "mlp3") return QueryKind::MLP3;
    throw config_error("unknown query kind: " + s);
}

QueryModule QueryModule::make(QueryKind kind, int layer, int d_h, int d_k, std::uint64_t seed) {
    QueryModule qm;
    qm.kind = kind;
    qm.layer_index = layer;
    qm.in_dim = d_h;
    qm.out_dim = d_k;
    auto rng = make_rng(seed, "query-init", static_cast<std::uint64_t>(layer));
    auto xavier = [&rng](int rows, int cols) {
        return gaussian_tensor(rng, rows, cols, std::sqrt(2.0 / (rows + cols)));
    };
    const std::string base = "query" + std::to_string(layer);
    switch (kind) {
        case QueryKind::Identity:
            check_config(d_h == d_k, "identity query module requires d_k == d_h");
            break;
        case QueryKind::Linear:
            qm.params.emplace_back(base + ".w", xavier(d_h, d_k));
            qm.params.emplace_back(base + ".b", Tensor(1, d_k));
            break;
        case QueryKind::MLP3:
            qm.params.emplace_back(base + ".w1", xavier(d_h, d_h));
            qm.params.emplace_back(base + ".b1", Tensor(1, d_h));
            qm.params.emplace_back(base + ".w2", xavier(d_h, d_h));
            qm.params.emplace_back(base + ".b2", Tensor(1, d_h));
            qm.params.emplace_back(base + ".w3", xavier(d_h, d_k));
            qm.params.emplace_back(base + ".b3", Tensor(1, d_k));
            break;
    }
    return qm;
}

int QueryModule::param_dim() const {
    int n = 0;
    for (const Parameter& p : params) n += static_cast<int>(p.value.size());
    return n;
}

Tensor inference_forward(const BackboneConfig& cfg, const FrozenWeights& frozen,
                         const std::vector<MemoryUnit>& memories,
                         const std::vector<QueryModule>& queries, const Tensor& head_w,
                         const Tensor& head_b, const Tensor& x_row, SampleTrace* trace,
                         RetrievalDiag* diag) {
    EvalCtx ctx;
    return modulated_sample_forward(ctx, cfg, frozen, memories, queries, head_w, head_b, x_row,
                                    trace, diag);
}

}  // namespace mira
