#pragma once

#include <vector>

#include "mira/tensor.hpp"

namespace mira {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter moment buffers plus the shared step counter.
struct OptimizerState {
    Tensor first_moment;
    Tensor second_moment;
    long step_count = 0;
    AdamWConfig cfg;

    OptimizerState() = default;
    OptimizerState(int rows, int cols, AdamWConfig c)
        : first_moment(rows, cols), second_moment(rows, cols), cfg(c) {}
};

// One decoupled-weight-decay Adam update with bias correction. Throws
// numeric_error on non-finite gradients.
void adamw_step(Tensor& param, const Tensor& grad, OptimizerState& state);

// Convenience wrapper driving a group of parameters with one shared config.
class AdamW {
  public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

    void step();
    void zero_grad();
    long step_count() const { return step_count_; }

  private:
    std::vector<Parameter*> params_;
    std::vector<OptimizerState> states_;
    AdamWConfig cfg_;
    long step_count_ = 0;
};

}  // namespace mira
