#pragma once

#include <string>
#include <vector>

#include "mfvit/ops.hpp"
#include "mfvit/rng.hpp"

namespace mfvit::ad {

// Parameter initializers; all draws come from the caller's Rng.
Tensor uniform_param(Shape shape, double bound, Rng& rng);
Tensor xavier_uniform_param(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_param(Shape shape, double stddev, Rng& rng);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]

  static Linear xavier(std::size_t in, std::size_t out, Rng& rng);
  // Uniform in +-1/sqrt(in) for weight and bias.
  static Linear fan_in_uniform(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor forward(const Tensor& x) const { return add(matmul(x, weight), bias); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams create(std::size_t dim);
  Tensor forward(const Tensor& x) const { return layernorm(x, gain, bias); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct BatchNorm1d {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;

  static BatchNorm1d create(std::size_t features);
  Tensor forward(const Tensor& x, Mode mode) { return batchnorm(x, gamma, beta, state, mode); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
  // Running statistics as detached tensors (for checkpoints).
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;
  void load_buffers(const std::vector<double>& mean, const std::vector<double>& var);
};

std::size_t count_elements(const std::vector<NamedTensor>& params);

// theta_dst <- m * theta_dst + (1 - m) * theta_src, matched by position.
void ema_update(const std::vector<NamedTensor>& dst, const std::vector<NamedTensor>& src, double m);
// Copies values by position; shapes must agree.
void copy_values(const std::vector<NamedTensor>& dst, const std::vector<NamedTensor>& src);

}  // namespace mfvit::ad
