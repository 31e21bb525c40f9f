#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfvit/tensor.hpp"

namespace mfvit::ad {

enum class OptimizerKind { adamw, sgd_momentum };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only
};

// Per-parameter moment buffers keyed by position in the parameter list the
// optimizer was built with.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::vector<NamedTensor> params);

  // One update with learning rate `lr` using the gradients currently stored
  // on the parameters (missing gradient = zero). Throws NumericError naming
  // the parameter on a NaN/Inf gradient.
  void step(double lr);
  void zero_grad();

  const OptimizerConfig& config() const { return cfg_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  std::int64_t step_count() const { return steps_; }

 private:
  OptimizerConfig cfg_;
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t steps_ = 0;
};

}  // namespace mfvit::ad
