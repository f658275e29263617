#include "mira/memory.hpp"

#include <cmath>

namespace mira {

const char* to_string(SepKind k) {
    switch (k) {
        case SepKind::Affine: return "affine";
        case SepKind::Softmax: return "softmax";
        case SepKind::ReLU: return "relu";
        case SepKind::Tanh: return "tanh";
    }
    return "?";
}

SepKind sep_kind_from_string(const std::string& s) {
    if (s == "affine") return SepKind::Affine;
    if (s == "softmax") return SepKind::Softmax;
    if (s == "relu") return SepKind::ReLU;
    if (s == "tanh") return SepKind::Tanh;
    throw config_error("unknown separation kind: " + s);
}

MemoryUnit::MemoryUnit(int layer, int d_k, int d_v, SeparationSpec s)
    : layer_index(layer), key_dim(d_k), value_dim(d_v), sep(s) {
    keys.name = "memory" + std::to_string(layer) + ".keys";
    keys.trainable = true;
}

void write(MemoryUnit& mem, const Tensor& key, const AdapterVector& theta) {
    check_contract(theta.layer_index == mem.layer_index,
                   "write: adapter layer does not match memory layer");
    check_shape(key.rows() == mem.key_dim && key.cols() == 1, "write: key must be d_k x 1");
    check_shape(theta.flat.size() == mem.value_dim, "write: value length must be d_v");

    const int n = mem.count();
    Tensor new_keys(mem.key_dim, n + 1);
    Tensor new_values(mem.value_dim, n + 1);
    for (int r = 0; r < mem.key_dim; ++r) {
        for (int c = 0; c < n; ++c) new_keys.at(r, c) = mem.keys.value.at(r, c);
        new_keys.at(r, n) = key.at(r, 0);
    }
    for (int r = 0; r < mem.value_dim; ++r) {
        for (int c = 0; c < n; ++c) new_values.at(r, c) = mem.values.at(r, c);
        new_values.at(r, n) = theta.flat[r];
    }
    mem.keys.value = std::move(new_keys);
    mem.keys.resize_like_value();
    mem.values = std::move(new_values);
}

Tensor sample_key(double sigma2, int key_dim, std::uint64_t seed) {
    check_contract(sigma2 >= 0.0, "sample_key: sigma2 must be non-negative");
    auto rng = make_rng(seed, "memory-key");
    return gaussian_tensor(rng, key_dim, 1, std::sqrt(sigma2));
}

namespace {
Tensor transformed_scores(const SeparationSpec& spec, const Tensor& scores) {
    switch (spec.kind) {
        case SepKind::Affine: return scores;
        case SepKind::ReLU: return kernels::relu(scores);
        case SepKind::Tanh: return kernels::tanh(scores);
        case SepKind::Softmax: break;
    }
    return scores;
}
}  // namespace

bool separation_is_degenerate(const SeparationSpec& spec, const Tensor& scores) {
    if (spec.kind == SepKind::Softmax) return false;
    const Tensor t = transformed_scores(spec, scores);
    return std::fabs(kernels::sum_all(t)[0]) <= kSepDenomEpsilon;
}

Tensor separation(const SeparationSpec& spec, const Tensor& scores) {
    check_contract(scores.rows() == 1 && scores.cols() >= 1, "separation expects a 1 x N row");
    if (spec.kind == SepKind::Softmax) {
        return kernels::softmax_rows(kernels::scale(scores, spec.beta));
    }
    if (separation_is_degenerate(spec, scores)) {
        throw degenerate_retrieval_error("separation denominator below " +
                                         std::to_string(kSepDenomEpsilon));
    }
    const Tensor t = transformed_scores(spec, scores);
    return kernels::div_by_scalar(t, kernels::sum_all(t));
}

std::pair<AdapterVector, RetrievalWeights> read(const MemoryUnit& mem, const Tensor& query,
                                                RetrievalDiag* diag) {
    Tensor q = query;
    if (q.cols() == 1 && q.rows() == mem.key_dim) {
        q = kernels::reshape(q, 1, mem.key_dim);
    }
    EvalCtx ctx;
    auto r = read_memory(ctx, mem, q, diag);
    AdapterVector value;
    value.layer_index = mem.layer_index;
    value.flat = r.value;
    RetrievalWeights w;
    w.weights = r.weights;
    w.layer_index = mem.layer_index;
    w.degenerate = r.degenerate;
    return {std::move(value), std::move(w)};
}

}  // namespace mira
