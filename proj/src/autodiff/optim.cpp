#include "mfvit/optim.hpp"

#include <cmath>

#include "mfvit/error.hpp"

namespace mfvit::ad {

Optimizer::Optimizer(OptimizerConfig cfg, std::vector<NamedTensor> params)
    : cfg_(cfg), params_(std::move(params)) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    if (cfg_.kind == OptimizerKind::adamw) v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Optimizer::step(double lr) {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));

  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    auto w = t.mutable_data();
    const bool has = t.has_grad();
    const auto g = t.grad();
    auto& m = m_[i];
    if (cfg_.kind == OptimizerKind::adamw) {
      auto& v = v_[i];
      const double decay = 1.0 - lr * cfg_.weight_decay;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = has ? g[k] : 0.0;
        // Decoupled weight decay acts on the parameter directly.
        w[k] *= decay;
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        w[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    } else {
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = (has ? g[k] : 0.0) + cfg_.weight_decay * w[k];
        m[k] = cfg_.momentum * m[k] + gk;
        w[k] -= lr * m[k];
      }
    }
    round_to_precision(w);
  }
}

}  // namespace mfvit::ad
