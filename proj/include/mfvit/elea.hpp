#pragma once

#include <cmath>
#include <vector>

#include "mfvit/image.hpp"

namespace mfvit::imgproc {

// First-difference kernel D(A)(p) = A(p) - A(p + offset), periodic.
struct DifferenceKernel {
  int dx = 0;
  int dy = 0;
};

std::vector<DifferenceKernel> default_difference_kernels();

struct EleaParams {
  double rho = 0.3;
  double beta0 = 1.0;
  double beta_max = 256.0;
  double beta_rate = 2.0 * std::sqrt(2.0);
  std::vector<DifferenceKernel> kernels = default_difference_kernels();
  int max_inner_iters = 20;

  void validate() const;
};

inline double soft_threshold(double x, double t) {
  const double m = std::abs(x) - t;
  return m > 0.0 ? std::copysign(m, x) : 0.0;
}

// One entry per (u, A) alternation.
struct EleaIteration {
  double beta;
  int inner;
  double objective;  // half-quadratic objective at this beta
};

struct EleaTrace {
  std::vector<EleaIteration> iterations;
};

// L1 contextual regularization of a local-phase-energy image, solved by
// half-quadratic splitting with an FFT-domain quadratic step. The grid must
// be a power of two. Output is clipped to [0, 1].
Image2D elea(const Image2D& lpe_img, const EleaParams& params, EleaTrace* trace = nullptr);

// Objective (rho/2)|A - A0|^2 + sum_j |W_j o D_j A|_1 with W_j derived from A0.
double elea_objective(const Image2D& a, const Image2D& a0, const EleaParams& params);

}  // namespace mfvit::imgproc
