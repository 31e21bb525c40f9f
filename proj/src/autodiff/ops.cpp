#include "mfvit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mfvit/error.hpp"

namespace mfvit::ad {

namespace {

using NodePtr = std::shared_ptr<Node>;

Tensor make_result(Shape shape, std::vector<double> value, const char* op, std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  round_to_precision(n->value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

void require_rank2(const Tensor& t, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected rank 2, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// C[m,n] += A[m,k] * B[k,n], row-major, fixed summation order.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n].
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<double> transposed(const double* a, std::size_t m, std::size_t n) {
  std::vector<double> t(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  }
  return t;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), "matmul", {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      const auto bt = transposed(nb.value.data(), k, n);
      gemm_acc(self.grad.data(), bt.data(), na.ensure_grad().data(), m, n, k);
    }
    if (nb.requires_grad) gemm_tn_acc(na.value.data(), self.grad.data(), nb.ensure_grad().data(), m, k, n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += pa[i * k + p] * pb[j * k + p];
      out[i * n + j] = acc;
    }
  }
  return make_result({m, n}, std::move(out), "matmul_nt", {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    // dA = G * B, dB = G^T * A
    if (na.requires_grad) gemm_acc(self.grad.data(), nb.value.data(), na.ensure_grad().data(), m, n, k);
    if (nb.requires_grad) gemm_tn_acc(self.grad.data(), na.value.data(), nb.ensure_grad().data(), m, n, k);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  return make_result({n, m}, transposed(a.data().data(), m, n), "transpose", {a.node()}, [m, n](Node& self) {
    Node& na = *self.inputs[0];
    auto& g = na.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    }
  });
}

namespace {

enum class Broadcast { same, row, scalar };

Broadcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  const bool row_shape = (b.rank() == 1) || (b.rank() == 2 && b.dim(0) == 1);
  if (row_shape && b.numel() == a.cols()) return Broadcast::row;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                       shape_str(a.shape()));
}

Tensor add_impl(const Tensor& a, const Tensor& b, double sign, const char* op) {
  const Broadcast mode = classify_broadcast(a, b, op);
  const std::size_t n = a.numel();
  const std::size_t cols = a.cols();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  switch (mode) {
    case Broadcast::same:
      for (std::size_t i = 0; i < n; ++i) out[i] += sign * bd[i];
      break;
    case Broadcast::row:
      for (std::size_t i = 0; i < n; ++i) out[i] += sign * bd[i % cols];
      break;
    case Broadcast::scalar:
      for (std::size_t i = 0; i < n; ++i) out[i] += sign * bd[0];
      break;
  }
  return make_result(a.shape(), std::move(out), op, {a.node(), b.node()}, [mode, cols, sign](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const std::size_t n = self.grad.size();
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      switch (mode) {
        case Broadcast::same:
          for (std::size_t i = 0; i < n; ++i) g[i] += sign * self.grad[i];
          break;
        case Broadcast::row:
          for (std::size_t i = 0; i < n; ++i) g[i % cols] += sign * self.grad[i];
          break;
        case Broadcast::scalar: {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += self.grad[i];
          g[0] += sign * acc;
          break;
        }
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_impl(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_impl(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const std::size_t n = self.grad.size();
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  return make_result(a.shape(), std::move(out), "scale", {a.node()}, [s](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return make_result(std::move(shape), a.values(), "reshape", {a.node()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t cols = parts[0].dim(1);
  std::size_t rows = 0;
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.dim(1) != cols) throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    rows += p.dim(0);
    inputs.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result({rows, cols}, std::move(out), "concat_rows", std::move(inputs), [](Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t n = in->value.size();
      if (in->requires_grad) {
        auto& g = in->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_rows");
  if (begin > end || end > a.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(a.shape()));
  }
  const std::size_t cols = a.dim(1);
  std::vector<double> out(a.data().begin() + begin * cols, a.data().begin() + end * cols);
  return make_result({end - begin, cols}, std::move(out), "slice_rows", {a.node()}, [begin, cols](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const std::size_t off = begin * cols;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != rows) throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    cols += p.dim(1);
    widths.push_back(p.dim(1));
    inputs.push_back(p.node());
  }
  std::vector<double> out(rows * cols);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.data().begin() + r * w, w, out.begin() + r * cols + c0);
    }
    c0 += w;
  }
  return make_result({rows, cols}, std::move(out), "concat_cols", std::move(inputs),
                     [rows, cols, widths](Node& self) {
                       std::size_t c0 = 0;
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         const std::size_t w = widths[k];
                         Node& in = *self.inputs[k];
                         if (in.requires_grad) {
                           auto& g = in.ensure_grad();
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * cols + c0 + c];
                           }
                         }
                         c0 += w;
                       }
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_cols");
  if (begin > end || end > a.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(a.shape()));
  }
  const std::size_t rows = a.dim(0), cols = a.dim(1), w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + r * cols + begin, w, out.begin() + r * w);
  }
  return make_result({rows, w}, std::move(out), "slice_cols", {a.node()}, [rows, cols, w, begin](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) g[r * cols + begin + c] += self.grad[r * w + c];
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (rank == 0) throw DimensionError("softmax of rank-0 tensor");
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(i);
  for (int i = ax + 1; i < rank; ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(ax);
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = -INFINITY;
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, in[base + l * inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(in[base + l * inner] - mx);
        out[base + l * inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), "softmax", {x.node()}, [outer, inner, len](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < len; ++l) dot += y[base + l * inner] * self.grad[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t k = base + l * inner;
          g[k] += y[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gain.defined() && gain.numel() != cols) throw DimensionError("layernorm: gain size mismatch");
  if (bias.defined() && bias.numel() != cols) throw DimensionError("layernorm: bias size mismatch");
  std::vector<double> xhat(x.numel()), inv_std(rows), out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[r * cols + c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = in[r * cols + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t k = r * cols + c;
      xhat[k] = (in[k] - mu) * inv_std[r];
      double y = xhat[k];
      if (gain.defined()) y *= gain.data()[c];
      if (bias.defined()) y += bias.data()[c];
      out[k] = y;
    }
  }
  std::vector<NodePtr> inputs{x.node()};
  const bool has_gain = gain.defined(), has_bias = bias.defined();
  if (has_gain) inputs.push_back(gain.node());
  if (has_bias) inputs.push_back(bias.node());
  return make_result(x.shape(), std::move(out), "layernorm", std::move(inputs),
                     [rows, cols, has_gain, has_bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& nx = *self.inputs[0];
                       Node* ng = has_gain ? self.inputs[1].get() : nullptr;
                       Node* nb = has_bias ? self.inputs[has_gain ? 2 : 1].get() : nullptr;
                       if (ng && ng->requires_grad) {
                         auto& g = ng->ensure_grad();
                         for (std::size_t k = 0; k < self.grad.size(); ++k) g[k % cols] += self.grad[k] * xhat[k];
                       }
                       if (nb && nb->requires_grad) {
                         auto& g = nb->ensure_grad();
                         for (std::size_t k = 0; k < self.grad.size(); ++k) g[k % cols] += self.grad[k];
                       }
                       if (!nx.requires_grad) return;
                       auto& gx = nx.ensure_grad();
                       std::vector<double> dxhat(cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) {
                           const std::size_t k = r * cols + c;
                           dxhat[c] = self.grad[k] * (ng ? ng->value[c] : 1.0);
                           m1 += dxhat[c];
                           m2 += dxhat[c] * xhat[k];
                         }
                         m1 /= static_cast<double>(cols);
                         m2 /= static_cast<double>(cols);
                         for (std::size_t c = 0; c < cols; ++c) {
                           const std::size_t k = r * cols + c;
                           gx[k] += inv_std[r] * (dxhat[c] - m1 - xhat[k] * m2);
                         }
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] / std::numbers::sqrt2));
  }
  return make_result(x.shape(), std::move(out), "gelu", {x.node()}, [](Node& self) {
    Node& nx = *self.inputs[0];
    auto& g = nx.ensure_grad();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = nx.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return make_result(x.shape(), std::move(out), "relu", {x.node()}, [](Node& self) {
    Node& nx = *self.inputs[0];
    auto& g = nx.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (nx.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode) {
  require_rank2(x, "batchnorm");
  const std::size_t b = x.dim(0), f = x.dim(1);
  if (gamma.numel() != f || beta.numel() != f) throw DimensionError("batchnorm: affine size mismatch");
  if (state.running_mean.size() != f || state.running_var.size() != f) {
    throw DimensionError("batchnorm: running statistics size mismatch");
  }
  const auto in = x.data();
  std::vector<double> mu(f, 0.0), inv_std(f), xhat(x.numel()), out(x.numel());
  if (mode == Mode::train) {
    if (b < 2) throw ConfigError("batchnorm in train mode requires batch >= 2");
    std::vector<double> var(f, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < f; ++j) mu[j] += in[i * f + j];
    }
    for (double& m : mu) m /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        const double d = in[i * f + j] - mu[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < f; ++j) {
      const double biased = var[j] / static_cast<double>(b);
      const double unbiased = var[j] / static_cast<double>(b - 1);
      inv_std[j] = 1.0 / std::sqrt(biased + state.eps);
      state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mu[j];
      state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * unbiased;
    }
    round_to_precision(state.running_mean);
    round_to_precision(state.running_var);
  } else {
    for (std::size_t j = 0; j < f; ++j) {
      mu[j] = state.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
    }
  }
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const std::size_t k = i * f + j;
      xhat[k] = (in[k] - mu[j]) * inv_std[j];
      out[k] = gamma.data()[j] * xhat[k] + beta.data()[j];
    }
  }
  const bool train = mode == Mode::train;
  return make_result(x.shape(), std::move(out), "batchnorm", {x.node(), gamma.node(), beta.node()},
                     [b, f, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& nx = *self.inputs[0];
                       Node& ng = *self.inputs[1];
                       Node& nb = *self.inputs[2];
                       if (ng.requires_grad) {
                         auto& g = ng.ensure_grad();
                         for (std::size_t k = 0; k < self.grad.size(); ++k) g[k % f] += self.grad[k] * xhat[k];
                       }
                       if (nb.requires_grad) {
                         auto& g = nb.ensure_grad();
                         for (std::size_t k = 0; k < self.grad.size(); ++k) g[k % f] += self.grad[k];
                       }
                       if (!nx.requires_grad) return;
                       auto& gx = nx.ensure_grad();
                       if (!train) {
                         for (std::size_t k = 0; k < gx.size(); ++k) {
                           gx[k] += self.grad[k] * ng.value[k % f] * inv_std[k % f];
                         }
                         return;
                       }
                       std::vector<double> m1(f, 0.0), m2(f, 0.0);
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < f; ++j) {
                           const std::size_t k = i * f + j;
                           const double d = self.grad[k] * ng.value[j];
                           m1[j] += d;
                           m2[j] += d * xhat[k];
                         }
                       }
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < f; ++j) {
                           const std::size_t k = i * f + j;
                           const double d = self.grad[k] * ng.value[j];
                           gx[k] += inv_std[j] * (d - m1[j] / b - xhat[k] * m2[j] / b);
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank2(logits, "cross_entropy");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (c < 2) throw DimensionError("cross_entropy needs at least 2 classes");
  if (targets.size() != b) throw DimensionError("cross_entropy: target count != batch");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw IndexError("cross_entropy target " + std::to_string(t) + " outside [0," + std::to_string(c) + ")");
    }
  }
  const auto in = logits.data();
  std::vector<double> probs(b * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, in[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(in[i * c + j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss += std::log(z) + (mx - in[i * c + targets[i]]);
  }
  loss /= static_cast<double>(b);
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result({1}, {loss}, "cross_entropy", {logits.node()},
                     [b, c, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       const double s = self.grad[0] / static_cast<double>(b);
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < c; ++j) {
                           const double onehot = static_cast<int>(j) == tgt[i] ? 1.0 : 0.0;
                           g[i * c + j] += s * (probs[i * c + j] - onehot);
                         }
                       }
                     });
}

Tensor cross_entropy_dist(const Tensor& logits, const Tensor& target_probs) {
  require_rank2(logits, "cross_entropy_dist");
  require_same_shape(logits, target_probs, "cross_entropy_dist");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (c < 2) throw DimensionError("cross_entropy_dist needs at least 2 classes");
  const auto in = logits.data();
  const auto q = target_probs.data();
  for (std::size_t i = 0; i < b; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (q[i * c + j] < 0.0) throw ContractError("cross_entropy_dist: negative target probability");
      total += q[i * c + j];
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("cross_entropy_dist: target row does not sum to 1");
  }
  std::vector<double> probs(b * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, in[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(in[i * c + j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    double cross = 0.0;
    for (std::size_t j = 0; j < c; ++j) cross += q[i * c + j] * (mx - in[i * c + j]);
    loss += std::log(z) + cross;
  }
  loss /= static_cast<double>(b);
  std::vector<double> qv(q.begin(), q.end());
  return make_result({1}, {loss}, "cross_entropy_dist", {logits.node()},
                     [b, c, probs = std::move(probs), qv = std::move(qv)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       const double s = self.grad[0] / static_cast<double>(b);
                       for (std::size_t i = 0; i < b * c; ++i) g[i] += s * (probs[i] - qv[i]);
                     });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result({1}, {acc}, "sum", {a.node()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(a.numel()), inv_norm(rows);
  const auto in = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += in[r * cols + c] * in[r * cols + c];
    inv_norm[r] = 1.0 / std::max(std::sqrt(ss), eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[r * cols + c] * inv_norm[r];
  }
  return make_result(a.shape(), std::move(out), "l2_normalize_rows", {a.node()},
                     [rows, cols, inv_norm = std::move(inv_norm)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       const auto& y = self.value;
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * self.grad[r * cols + c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           const std::size_t k = r * cols + c;
                           g[k] += inv_norm[r] * (self.grad[k] - y[k] * dot);
                         }
                       }
                     });
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  require_rank2(a, "row_dot");
  require_same_shape(a, b, "row_dot");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r] += a.data()[r * cols + c] * b.data()[r * cols + c];
  }
  return make_result({rows, 1}, std::move(out), "row_dot", {a.node(), b.node()}, [rows, cols](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r] * nb.value[r * cols + c];
      }
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r] * na.value[r * cols + c];
      }
    }
  });
}

}  // namespace mfvit::ad
