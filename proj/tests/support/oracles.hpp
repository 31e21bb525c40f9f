#pragma once

// Independent reference computations shared by the unit and acceptance
// tests. Nothing here calls into the graph code except to read values.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <functional>
#include <vector>

#include "mfvit/ops.hpp"
#include "mfvit/rng.hpp"

namespace mfvit::testing {

using ad::Tensor;

inline Tensor random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = scale * rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Scalar probe of a tensor-valued function: sum(out * w) with fixed random w.
inline Tensor project(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor w = random_tensor(out.shape(), rng, 1.0, false);
  return ad::sum(ad::mul(out, w));
}

struct GradCheck {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs = 0.0;
  std::size_t checked = 0;
};

// Central differences with step h on the elements of every leaf (at most
// max_per_leaf of them, evenly spaced). `f` must rebuild the graph from the
// leaves on each call and return a scalar.
inline GradCheck finite_difference_check(std::vector<Tensor> leaves, const std::function<Tensor()>& f,
                                         double h = 1e-5, std::size_t max_per_leaf = SIZE_MAX) {
  for (auto& t : leaves) t.zero_grad();
  f().backward();
  std::vector<double> analytic, numeric;
  auto picks = [&](std::size_t n) {
    std::vector<std::size_t> idx;
    const std::size_t k = std::min(n, max_per_leaf);
    for (std::size_t j = 0; j < k; ++j) idx.push_back(j * n / k);
    return idx;
  };
  for (auto& t : leaves) {
    const auto g = t.grad();
    for (std::size_t i : picks(t.numel())) analytic.push_back(g.empty() ? 0.0 : g[i]);
  }
  {
    ad::NoGradGuard guard;
    for (auto& t : leaves) {
      auto v = t.mutable_data();
      for (std::size_t i : picks(v.size())) {
        const double x0 = v[i];
        v[i] = x0 + h;
        const double fp = f().item();
        v[i] = x0 - h;
        const double fm = f().item();
        v[i] = x0;
        numeric.push_back((fp - fm) / (2.0 * h));
      }
    }
  }
  GradCheck r;
  r.checked = analytic.size();
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
    r.max_abs = std::max(r.max_abs, std::abs(d));
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
  r.rel_error = std::sqrt(diff) / denom;
  return r;
}

// -log( e^{q.k/t} / (e^{q.k/t} + sum_i e^{q.n_i/t}) ) evaluated directly in
// long double without any max-shift.
inline double info_nce_scalar(const std::vector<double>& q, const std::vector<double>& k,
                              const std::vector<std::vector<double>>& negatives, double tau) {
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
    return s;
  };
  const long double pos = std::exp(dot(q, k) / tau);
  long double den = pos;
  for (const auto& n : negatives) den += std::exp(dot(q, n) / tau);
  return static_cast<double>(-std::log(pos / den));
}

inline std::vector<double> random_unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double n = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

}  // namespace mfvit::testing
