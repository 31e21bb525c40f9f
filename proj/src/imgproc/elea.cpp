#include "mfvit/elea.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mfvit/error.hpp"
#include "mfvit/fft.hpp"

namespace mfvit::imgproc {

std::vector<DifferenceKernel> default_difference_kernels() {
  return {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
}

void EleaParams::validate() const {
  if (!(rho > 0.0)) throw ConfigError("elea rho must be > 0");
  if (!(beta0 > 0.0)) throw ConfigError("elea beta0 must be > 0");
  if (!(beta0 <= beta_max)) throw ConfigError("elea beta0 must be <= beta_max");
  if (!(beta_rate > 1.0)) throw ConfigError("elea beta_rate must be > 1");
  if (kernels.empty()) throw ConfigError("elea needs at least one difference kernel");
  if (max_inner_iters < 1) throw ConfigError("elea max_inner_iters must be >= 1");
}

namespace {

// Calls f(dst, src, len) over the contiguous runs of row y such that
// src = dst shifted by (dx, dy), periodic on a w x h grid.
template <class F>
void row_segments(int y, int w, int h, int dx, int dy, F&& f) {
  const int ox = ((dx % w) + w) % w;
  const int sy = (((y + dy) % h) + h) % h;
  const std::size_t drow = static_cast<std::size_t>(y) * w;
  const std::size_t srow = static_cast<std::size_t>(sy) * w;
  const int split = w - ox;
  f(drow, srow + ox, static_cast<std::size_t>(split));
  if (ox > 0) f(drow + split, srow, static_cast<std::size_t>(ox));
}

template <class F>
void for_each_segment(int w, int h, int dx, int dy, F&& f) {
  for (int y = 0; y < h; ++y) row_segments(y, w, h, dx, dy, f);
}

template <class F>
void for_each_shifted(int w, int h, int dx, int dy, F&& f) {
  for_each_segment(w, h, dx, dy, [&](std::size_t d, std::size_t s, std::size_t len) {
    for (std::size_t x = 0; x < len; ++x) f(d + x, s + x);
  });
}

// t = soft_threshold(ad - as, wd / beta); rd += m t; rs -= m t.
// rd and rs may overlap, so the two scatters stay separate loops.
void shrink_and_scatter(const double* __restrict ad, const double* __restrict as, const double* __restrict wd,
                        double inv_beta, double m, double* __restrict t, double* rd, double* rs,
                        std::size_t len) {
  for (std::size_t x = 0; x < len; ++x) {
    const double v = ad[x] - as[x];
    t[x] = std::copysign(std::max(std::abs(v) - wd[x] * inv_beta, 0.0), v);
  }
  // D_j^T u: u(p) - u(p - offset).
  for (std::size_t x = 0; x < len; ++x) rd[x] += m * t[x];
  for (std::size_t x = 0; x < len; ++x) rs[x] -= m * t[x];
}

std::vector<double> difference(const std::vector<double>& a, int w, int h,
                               const DifferenceKernel& k) {
  std::vector<double> d(a.size());
  for_each_shifted(w, h, k.dx, k.dy, [&](std::size_t i, std::size_t j) { d[i] = a[i] - a[j]; });
  return d;
}

std::vector<std::vector<double>> weight_maps(const Image2D& a0, const EleaParams& params) {
  std::vector<std::vector<double>> maps;
  maps.reserve(params.kernels.size());
  for (const auto& k : params.kernels) {
    auto d = difference(a0.values(), a0.width(), a0.height(), k);
    for (double& v : d) v = std::exp(-std::abs(v));
    maps.push_back(std::move(d));
  }
  return maps;
}

// Kernels k and -k have identical weights (W_{-k}(p + k) = W_k(p)) and
// u_{-k}(p + k) = -u_k(p), so both contribute the same terms. Each group is
// handled once through its representative and scaled by its size.
struct KernelGroup {
  std::size_t rep;
  double multiplicity = 0.0;
};

std::vector<KernelGroup> group_kernels(const std::vector<DifferenceKernel>& kernels) {
  std::vector<KernelGroup> groups;
  for (std::size_t j = 0; j < kernels.size(); ++j) {
    const auto& k = kernels[j];
    auto it = std::find_if(groups.begin(), groups.end(), [&](const KernelGroup& g) {
      const auto& r = kernels[g.rep];
      return (r.dx == k.dx && r.dy == k.dy) || (r.dx == -k.dx && r.dy == -k.dy);
    });
    if (it == groups.end()) it = groups.insert(groups.end(), KernelGroup{j});
    it->multiplicity += 1.0;
  }
  return groups;
}

// u holds one shrunk difference map per group.
double split_objective(const std::vector<double>& a, const std::vector<double>& a0,
                       const std::vector<std::vector<double>>& u, const std::vector<KernelGroup>& groups,
                       const std::vector<std::vector<double>>& weights, const EleaParams& params,
                       double beta, int w, int h) {
  double fidelity = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) fidelity += (a[i] - a0[i]) * (a[i] - a0[i]);
  double l1 = 0.0;
  double coupling = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& k = params.kernels[groups[g].rep];
    const double* ug = u[g].data();
    const double* wg = weights[groups[g].rep].data();
    double l1g = 0.0, cg = 0.0;
    for_each_shifted(w, h, k.dx, k.dy, [&](std::size_t i, std::size_t s) {
      const double r = ug[i] - (a[i] - a[s]);
      l1g += wg[i] * std::abs(ug[i]);
      cg += r * r;
    });
    l1 += groups[g].multiplicity * l1g;
    coupling += groups[g].multiplicity * cg;
  }
  return 0.5 * params.rho * fidelity + l1 + 0.5 * beta * coupling;
}

}  // namespace

double elea_objective(const Image2D& a, const Image2D& a0, const EleaParams& params) {
  require_same_grid(a, a0, "elea_objective");
  const auto weights = weight_maps(a0, params);
  double fidelity = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = a.data()[i] - a0.data()[i];
    fidelity += r * r;
  }
  double l1 = 0.0;
  for (std::size_t j = 0; j < params.kernels.size(); ++j) {
    const auto d = difference(a.values(), a.width(), a.height(), params.kernels[j]);
    for (std::size_t i = 0; i < d.size(); ++i) l1 += weights[j][i] * std::abs(d[i]);
  }
  return 0.5 * params.rho * fidelity + l1;
}

Image2D elea(const Image2D& lpe_img, const EleaParams& params, EleaTrace* trace) {
  params.validate();
  const int w = lpe_img.width();
  const int h = lpe_img.height();
  if (!is_power_of_two(w) || !is_power_of_two(h)) {
    throw ConfigError("elea grid must be a power of two");
  }
  for (double v : lpe_img.data()) {
    if (!(v >= -1e-12 && v <= 1.0 + 1e-12)) throw ContractError("elea input must lie in [0, 1]");
  }

  const auto& fft = *fft_for_grid(w, h);
  const int hw = fft.half_width();
  const std::size_t n = lpe_img.size();
  const std::vector<double>& a0 = lpe_img.values();
  const auto weights = weight_maps(lpe_img, params);

  // Fourier symbol of sum_j D_j^T D_j: sum_j (2 - 2 cos theta_j).
  std::vector<double> symbol(fft.spectrum_size(), 0.0);
  for (int ky = 0; ky < h; ++ky) {
    for (int kx = 0; kx < hw; ++kx) {
      double acc = 0.0;
      for (const auto& k : params.kernels) {
        const double theta = 2.0 * std::numbers::pi *
                             (static_cast<double>(kx) * k.dx / w + static_cast<double>(ky) * k.dy / h);
        acc += 2.0 - 2.0 * std::cos(theta);
      }
      symbol[static_cast<std::size_t>(ky) * hw + kx] = acc;
    }
  }

  const auto groups = group_kernels(params.kernels);
  std::vector<double> a = a0;
  std::vector<std::vector<double>> u(trace ? groups.size() : 0, std::vector<double>(n, 0.0));
  std::vector<double> row(static_cast<std::size_t>(w));
  std::vector<double> inv_system(symbol.size());
  FftWorkspace ws(fft);
  const std::span<double> rhs = ws.real();
  const std::span<std::complex<double>> spec = ws.spectrum();

  for (double beta = params.beta0; beta <= params.beta_max; beta *= params.beta_rate) {
    const double inv_beta = 1.0 / beta;
    const double ratio = params.rho / beta;
    // The unnormalized inverse transform's factor n is folded in here.
    for (std::size_t i = 0; i < symbol.size(); ++i) {
      inv_system[i] = 1.0 / ((ratio + symbol[i]) * static_cast<double>(n));
    }
    for (int it = 0; it < params.max_inner_iters; ++it) {
      for (std::size_t i = 0; i < n; ++i) rhs[i] = ratio * a0[i];
      // Row-major sweep keeps a and rhs cache resident; the shrunk
      // differences are only kept for the trace.
      for (int y = 0; y < h; ++y) {
        for (std::size_t g = 0; g < groups.size(); ++g) {
          const auto& k = params.kernels[groups[g].rep];
          const double* wj = weights[groups[g].rep].data();
          row_segments(y, w, h, k.dx, k.dy, [&](std::size_t d, std::size_t s, std::size_t len) {
            double* t = trace ? u[g].data() + d : row.data();
            shrink_and_scatter(a.data() + d, a.data() + s, wj + d, inv_beta, groups[g].multiplicity, t,
                               rhs.data() + d, rhs.data() + s, len);
          });
        }
      }
      fft.forward(ws);
      for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= inv_system[i];
      fft.inverse_unscaled(ws);
      // 0 * inf and 0 * nan are nan, so one pass flags any non-finite entry.
      double probe = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = rhs[i];
        probe += 0.0 * a[i];
      }
      if (!(probe == 0.0)) {
        throw NumericError("elea quadratic step produced a non-finite residual at beta " +
                           std::to_string(beta));
      }
      if (trace) {
        trace->iterations.push_back({beta, it, split_objective(a, a0, u, groups, weights, params, beta, w, h)});
      }
    }
  }

  for (double& v : a) v = std::clamp(v, 0.0, 1.0);
  return Image2D(w, h, std::move(a));
}

}  // namespace mfvit::imgproc
