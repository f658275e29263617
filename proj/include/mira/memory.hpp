#pragma once

#include <cstdint>
#include <string>

#include "mira/backbone.hpp"
#include "mira/rng.hpp"
#include "mira/tape.hpp"

namespace mira {

// Threshold below which a sum-normalized separation denominator counts as
// degenerate; the caller substitutes uniform weights and logs the event.
inline constexpr double kSepDenomEpsilon = 1e-8;

enum class SepKind { Affine, Softmax, ReLU, Tanh };
enum class SimKind { Dot };

const char* to_string(SepKind k);
SepKind sep_kind_from_string(const std::string& s);

struct SeparationSpec {
    SepKind kind = SepKind::Affine;
    double beta = 1.0;  // softmax inverse temperature
};

struct RetrievalWeights {
    Tensor weights;  // 1 x N, sums to 1 unless degenerate fallback fired
    int layer_index = -1;
    bool degenerate = false;
};

// Running count of degenerate separations, surfaced in run reports.
struct RetrievalDiag {
    std::uint64_t degenerate_reads = 0;
    std::uint64_t total_reads = 0;
};

// One per-layer associative memory: keys are a trainable parameter, stored
// value columns never change after their write.
struct MemoryUnit {
    int layer_index = 0;
    int key_dim = 0;    // d_k
    int value_dim = 0;  // d_v
    Parameter keys;     // d_k x N
    Tensor values;      // d_v x N
    SeparationSpec sep;
    SimKind sim = SimKind::Dot;

    MemoryUnit() = default;
    MemoryUnit(int layer, int d_k, int d_v, SeparationSpec s);

    int count() const { return keys.value.empty() ? 0 : keys.value.cols(); }
};

// Appends the key/value pair as new columns; existing columns are untouched.
void write(MemoryUnit& mem, const Tensor& key, const AdapterVector& theta);

// i.i.d. N(0, sigma2) key, deterministic in the seed. Returned as d_k x 1.
Tensor sample_key(double sigma2, int key_dim, std::uint64_t seed);

// Raw similarities 1xN -> normalized weights 1xN. Throws
// degenerate_retrieval_error when a sum-normalized kind has |denominator|
// <= kSepDenomEpsilon.
Tensor separation(const SeparationSpec& spec, const Tensor& scores);

// True when the given similarity row would trip the degenerate guard.
bool separation_is_degenerate(const SeparationSpec& spec, const Tensor& scores);

// Eq-style read: value = Theta * sep(sim(K^T, q)). Differentiable in q and
// the keys; never touches Theta. Query is a 1 x d_k row. On a degenerate
// denominator the weights collapse to a constant uniform row (no gradient
// path) and the diagnostic counter is bumped.
template <class Ctx>
struct ReadResult {
    typename Ctx::Val value;    // 1 x d_v
    typename Ctx::Val weights;  // 1 x N
    bool degenerate = false;
};

template <class Ctx, class Mem>
ReadResult<Ctx> read_memory(Ctx& ctx, Mem& mem, const typename Ctx::Val& query_row,
                            RetrievalDiag* diag = nullptr) {
    check_contract(mem.count() >= 1, "read from empty memory");
    check_shape(ctx.value(query_row).rows() == 1 && ctx.value(query_row).cols() == mem.key_dim,
                "query must be 1 x d_k");
    auto keys = ctx.param(mem.keys);
    auto scores = ctx.matmul(query_row, keys);  // 1 x N
    const int n = mem.count();

    ReadResult<Ctx> out;
    if (diag) diag->total_reads += 1;
    if (separation_is_degenerate(mem.sep, ctx.value(scores))) {
        out.degenerate = true;
        if (diag) diag->degenerate_reads += 1;
        out.weights = ctx.constant(Tensor::full(1, n, 1.0 / n));
    } else {
        switch (mem.sep.kind) {
            case SepKind::Affine:
                out.weights = ctx.div_by_scalar(scores, ctx.sum_all(scores));
                break;
            case SepKind::Softmax:
                out.weights = ctx.softmax_rows(ctx.scale(scores, mem.sep.beta));
                break;
            case SepKind::ReLU: {
                auto r = ctx.relu(scores);
                out.weights = ctx.div_by_scalar(r, ctx.sum_all(r));
                break;
            }
            case SepKind::Tanh: {
                auto t = ctx.tanh(scores);
                out.weights = ctx.div_by_scalar(t, ctx.sum_all(t));
                break;
            }
        }
    }
    out.value = ctx.matmul_nt(out.weights, ctx.constant(mem.values));  // 1 x d_v
    return out;
}

// Gradient-free read returning the spec-level pair.
std::pair<AdapterVector, RetrievalWeights> read(const MemoryUnit& mem, const Tensor& query,
                                                RetrievalDiag* diag = nullptr);

}  // namespace mira
