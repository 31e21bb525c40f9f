#pragma once

#include <span>
#include <vector>

#include "mfvit/tensor.hpp"

// Differentiable operations. Matrix ops take rank-2 tensors; element-wise
// and last-axis ops accept any rank. Shape violations throw DimensionError.
namespace mfvit::ad {

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor transpose(const Tensor& a);

// Same shape, or b broadcast as a row vector ([n] / [1,n]) or a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Element-wise product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor reshape(const Tensor& a, Shape shape);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

// Max-subtracted softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis = -1);

// Normalizes each last-axis row to zero mean / unit variance, then applies
// gain and bias when they are defined.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

enum class Mode { train, eval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t features = 0)
      : running_mean(features, 0.0), running_var(features, 1.0) {}
};

// x: [batch, features]. Train mode normalizes with batch statistics and
// updates the running estimates; requires batch >= 2.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode);

// Mean over the batch of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Cross-entropy against per-row target distributions (rows sum to 1).
// A one-hot target reproduces cross_entropy bit for bit.
Tensor cross_entropy_dist(const Tensor& logits, const Tensor& target_probs);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);
// Row-wise inner products: [b,d] x [b,d] -> [b,1].
Tensor row_dot(const Tensor& a, const Tensor& b);

}  // namespace mfvit::ad
