#include "mfvit/nn.hpp"

#include <cmath>

#include "mfvit/error.hpp"

namespace mfvit::ad {

Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  round_to_precision(v);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor xavier_uniform_param(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_param({fan_in, fan_out}, bound, rng);
}

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  round_to_precision(v);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Linear Linear::xavier(std::size_t in, std::size_t out, Rng& rng) {
  return {xavier_uniform_param(in, out, rng), Tensor::zeros({1, out}, true)};
}

Linear Linear::fan_in_uniform(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor w = uniform_param({in, out}, bound, rng);
  Tensor b = uniform_param({1, out}, bound, rng);
  return {w, b};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({1, out}, true)};
}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNormParams LayerNormParams::create(std::size_t dim) {
  return {Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

void LayerNormParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

BatchNorm1d BatchNorm1d::create(std::size_t features) {
  return {Tensor::full({features}, 1.0, true), Tensor::zeros({features}, true), BatchNormState(features)};
}

void BatchNorm1d::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm1d::collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
  const std::size_t f = state.running_mean.size();
  out.push_back({prefix + ".running_mean", Tensor::from({f}, state.running_mean)});
  out.push_back({prefix + ".running_var", Tensor::from({f}, state.running_var)});
}

void BatchNorm1d::load_buffers(const std::vector<double>& mean, const std::vector<double>& var) {
  if (mean.size() != state.running_mean.size() || var.size() != state.running_var.size()) {
    throw DimensionError("batchnorm buffer size mismatch");
  }
  state.running_mean = mean;
  state.running_var = var;
}

std::size_t count_elements(const std::vector<NamedTensor>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

namespace {

void require_matching(const std::vector<NamedTensor>& dst, const std::vector<NamedTensor>& src, const char* what) {
  if (dst.size() != src.size()) throw DimensionError(std::string(what) + ": parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].tensor.shape() != src[i].tensor.shape()) {
      throw DimensionError(std::string(what) + ": shape mismatch at " + dst[i].name + " " +
                           shape_str(dst[i].tensor.shape()) + " vs " + shape_str(src[i].tensor.shape()));
    }
  }
}

}  // namespace

void ema_update(const std::vector<NamedTensor>& dst, const std::vector<NamedTensor>& src, double m) {
  require_matching(dst, src, "momentum update");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    Tensor d = dst[i].tensor;
    auto dv = d.mutable_data();
    const auto sv = src[i].tensor.data();
    for (std::size_t k = 0; k < dv.size(); ++k) dv[k] = m * dv[k] + (1.0 - m) * sv[k];
    round_to_precision(dv);
  }
}

void copy_values(const std::vector<NamedTensor>& dst, const std::vector<NamedTensor>& src) {
  require_matching(dst, src, "copy_values");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    Tensor d = dst[i].tensor;
    auto dv = d.mutable_data();
    const auto sv = src[i].tensor.data();
    std::copy(sv.begin(), sv.end(), dv.begin());
  }
}

}  // namespace mfvit::ad
