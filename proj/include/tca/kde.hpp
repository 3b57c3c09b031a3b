#pragma once

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <string>
#include <vector>

#include "tca/cache.hpp"
#include "tca/core.hpp"
#include "tca/errors.hpp"

namespace tca {

// Kernel density entropy estimation on regular grids with Gaussian kernels.
// Samples are linearly binned onto the grid and the binned weights are
// convolved with the sampled kernel via FFT.
struct KdeConfig {
  double bandwidth = 0.125;
  int grid_points = 256;
  double grid_margin = 3.0;  // multiples of bandwidth*std beyond data min/max

  void validate() const {
    if (!(bandwidth > 0.0)) throw Error("kde bandwidth must be > 0");
    if (grid_points < 16 || (grid_points & (grid_points - 1)) != 0) {
      throw Error("kde grid_points must be a power of two >= 16");
    }
    if (grid_margin < 0.0) throw Error("kde grid_margin must be >= 0");
  }
};

struct GridSpec {
  double lo = 0.0;
  double step = 0.0;
  int points = 0;
  double hi() const { return lo + step * (points - 1); }
  double at(int i) const { return lo + step * i; }
};

struct EntropyEstimate {
  double value = 0.0;
  GridSpec grid_u;
  GridSpec grid_v;  // unused for 1-D estimates
  bool bivariate = false;
};

namespace detail {

constexpr double kDensityFloor = 1e-12;

inline void check_samples(const Vector& samples) {
  if (samples.size() < 2) throw Error("kde requires at least 2 samples");
  if (!samples.allFinite()) throw Error("kde samples must be finite");
}

inline GridSpec kde_grid(const Vector& samples, const KdeConfig& cfg) {
  const double lo_s = samples.minCoeff();
  const double hi_s = samples.maxCoeff();
  if (!(hi_s - lo_s > 0.0)) throw DegenerateData("kde samples have zero range");
  const double mean = samples.mean();
  const double sd = std::sqrt((samples.array() - mean).square().mean());
  const double pad = cfg.grid_margin * cfg.bandwidth * sd;
  GridSpec g;
  g.points = cfg.grid_points;
  g.lo = lo_s - pad;
  g.step = (hi_s + pad - g.lo) / (g.points - 1);
  return g;
}

// linear binning: each sample splits its unit mass over the two nearest nodes
inline Vector linear_bin(const Vector& samples, const GridSpec& grid) {
  Vector bins = Vector::Zero(grid.points);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    double t = (samples[i] - grid.lo) / grid.step;
    int j = static_cast<int>(std::floor(t));
    j = std::clamp(j, 0, grid.points - 2);
    const double frac = std::clamp(t - j, 0.0, 1.0);
    bins[j] += 1.0 - frac;
    bins[j + 1] += frac;
  }
  return bins;
}

// sampled Gaussian kernel over circular offsets of a length-p transform
inline Vector sampled_kernel(int p, double step, double bandwidth) {
  Vector k(p);
  const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
  for (int d = 0; d < p; ++d) {
    const double off = (d <= p / 2 ? d : d - p) * step;
    k[d] = std::exp(-off * off * inv2h2);
  }
  return k;
}

class KernelConvolver {
public:
  KernelConvolver(int grid_points, double step, double bandwidth) : m_(grid_points), p_(2 * grid_points) {
    Eigen::VectorXd kern = sampled_kernel(p_, step, bandwidth);
    fft_.fwd(kernel_spec_, kern);
  }

  // convolve a length-m signal with the sampled kernel, exact linear part
  Vector apply(const Vector& signal) {
    Eigen::VectorXd padded = Eigen::VectorXd::Zero(p_);
    padded.head(m_) = signal;
    Eigen::VectorXcd spec;
    fft_.fwd(spec, padded);
    spec.array() *= kernel_spec_.array();
    Eigen::VectorXd out;
    fft_.inv(out, spec);
    return out.head(m_);
  }

private:
  int m_;
  int p_;
  Eigen::FFT<double> fft_;
  Eigen::VectorXcd kernel_spec_;
};

inline Vector sorted_copy(const Vector& v) {
  Vector out = v;
  std::sort(out.data(), out.data() + out.size());
  return out;
}

}  // namespace detail

// Gaussian KDE evaluated on a regular grid covering the data support.
inline Vector kde_density_grid_1d(const Vector& samples, const KdeConfig& cfg,
                                  GridSpec* grid_out = nullptr) {
  cfg.validate();
  detail::check_samples(samples);
  const Vector sorted = detail::sorted_copy(samples);
  const GridSpec grid = detail::kde_grid(sorted, cfg);
  detail::KernelConvolver conv(grid.points, grid.step, cfg.bandwidth);
  Vector density = conv.apply(detail::linear_bin(sorted, grid));
  const double norm =
      1.0 / (static_cast<double>(samples.size()) * cfg.bandwidth * std::sqrt(2.0 * M_PI));
  density *= norm;
  density = density.cwiseMax(0.0);  // FFT round-off can leave tiny negatives
  if (grid_out) *grid_out = grid;
  return density;
}

inline Matrix kde_density_grid_2d(const Vector& samples_u, const Vector& samples_v,
                                  const KdeConfig& cfg, GridSpec* grid_u_out = nullptr,
                                  GridSpec* grid_v_out = nullptr) {
  cfg.validate();
  detail::check_samples(samples_u);
  detail::check_samples(samples_v);
  if (samples_u.size() != samples_v.size()) {
    throw DimensionMismatch("kde 2-D samples must have equal length");
  }
  // sort sample pairs lexicographically so estimates are reorder-invariant
  const Eigen::Index n = samples_u.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (samples_u[a] != samples_u[b]) return samples_u[a] < samples_u[b];
    return samples_v[a] < samples_v[b];
  });
  Vector su(n), sv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    su[i] = samples_u[order[i]];
    sv[i] = samples_v[order[i]];
  }

  const GridSpec gu = detail::kde_grid(su, cfg);
  const GridSpec gv = detail::kde_grid(sv, cfg);
  const int mpts = cfg.grid_points;

  Matrix bins = Matrix::Zero(mpts, mpts);  // (u index, v index)
  for (Eigen::Index i = 0; i < n; ++i) {
    double tu = (su[i] - gu.lo) / gu.step;
    double tv = (sv[i] - gv.lo) / gv.step;
    int ju = std::clamp(static_cast<int>(std::floor(tu)), 0, mpts - 2);
    int jv = std::clamp(static_cast<int>(std::floor(tv)), 0, mpts - 2);
    const double fu = std::clamp(tu - ju, 0.0, 1.0);
    const double fv = std::clamp(tv - jv, 0.0, 1.0);
    bins(ju, jv) += (1.0 - fu) * (1.0 - fv);
    bins(ju + 1, jv) += fu * (1.0 - fv);
    bins(ju, jv + 1) += (1.0 - fu) * fv;
    bins(ju + 1, jv + 1) += fu * fv;
  }

  // separable Gaussian kernel: convolve along u (columns), then along v (rows)
  detail::KernelConvolver conv_u(mpts, gu.step, cfg.bandwidth);
  for (int c = 0; c < mpts; ++c) bins.col(c) = conv_u.apply(bins.col(c));
  detail::KernelConvolver conv_v(mpts, gv.step, cfg.bandwidth);
  for (int r = 0; r < mpts; ++r) bins.row(r) = conv_v.apply(bins.row(r).transpose()).transpose();

  const double norm = 1.0 / (static_cast<double>(n) * cfg.bandwidth * cfg.bandwidth * 2.0 * M_PI);
  bins *= norm;
  bins = bins.cwiseMax(0.0);
  if (grid_u_out) *grid_u_out = gu;
  if (grid_v_out) *grid_v_out = gv;
  return bins;
}

// Plug-in entropy: -sum f log f over grid cells with the density floor
// treated as contributing zero (the -f log f -> 0 limit).
inline EntropyEstimate kde_entropy_1d(const Vector& samples, const KdeConfig& cfg) {
  GridSpec grid;
  const Vector density = kde_density_grid_1d(samples, cfg, &grid);
  double h = 0.0;
  for (Eigen::Index i = 0; i < density.size(); ++i) {
    const double f = density[i];
    if (f > detail::kDensityFloor) h -= f * std::log(f);
  }
  EntropyEstimate est;
  est.value = h * grid.step;
  est.grid_u = grid;
  return est;
}

inline EntropyEstimate kde_entropy_2d(const Vector& samples_u, const Vector& samples_v,
                                      const KdeConfig& cfg) {
  GridSpec gu, gv;
  const Matrix density = kde_density_grid_2d(samples_u, samples_v, cfg, &gu, &gv);
  double h = 0.0;
  for (Eigen::Index c = 0; c < density.cols(); ++c) {
    for (Eigen::Index r = 0; r < density.rows(); ++r) {
      const double f = density(r, c);
      if (f > detail::kDensityFloor) h -= f * std::log(f);
    }
  }
  EntropyEstimate est;
  est.value = h * gu.step * gv.step;
  est.grid_u = gu;
  est.grid_v = gv;
  est.bivariate = true;
  return est;
}

// I(u,v) = H_u + H_v - H_uv. Estimation error can make this slightly
// negative; values are passed through unclamped.
inline double pairwise_mi_kde(const Vector& samples_u, const Vector& samples_v,
                              const KdeConfig& cfg) {
  return kde_entropy_1d(samples_u, cfg).value + kde_entropy_1d(samples_v, cfg).value -
         kde_entropy_2d(samples_u, samples_v, cfg).value;
}

// KDE contrast: J^E = sum_i H_i - sum_{(u,v) in T} (H_u + H_v - H_uv) - log|det W|.
// Per-component and per-edge entropies are cached by row content hash.
inline double contrast_JE(const DemixingMatrix& w, const Dataset& data, const SpanningTree& tree,
                          const KdeConfig& cfg, ContrastCache* cache = nullptr) {
  if (tree.vertex_count() != w.dim()) throw DimensionMismatch("tree size does not match W");
  if (w.log_abs_det() < std::log(1e-12)) throw SingularMatrix("|det W| below 1e-12");
  const Dataset s = transform_sources(w, data);
  const int m = static_cast<int>(s.m());

  std::vector<std::uint64_t> row_hash(m);
  for (int i = 0; i < m; ++i) row_hash[i] = hash_row(w.matrix().row(i));

  auto entropy_1d = [&](int i) {
    const CacheKey key{ContrastCache::kEntropy1d, i, -1, row_hash[i], 0};
    if (cache) {
      if (const auto hit = cache->get_scalar(key)) return *hit;
    }
    const double value = kde_entropy_1d(s.component(i), cfg).value;
    if (cache) cache->put_scalar(key, value);
    return value;
  };
  auto entropy_2d = [&](int u, int v) {
    const CacheKey key{ContrastCache::kEntropy2d, u, v, row_hash[u], row_hash[v]};
    if (cache) {
      if (const auto hit = cache->get_scalar(key)) return *hit;
    }
    const double value = kde_entropy_2d(s.component(u), s.component(v), cfg).value;
    if (cache) cache->put_scalar(key, value);
    return value;
  };

  double out = 0.0;
  std::vector<double> h1(m);
  for (int i = 0; i < m; ++i) {
    h1[i] = entropy_1d(i);
    out += h1[i];
  }
  for (const auto& [u, v] : tree.edges()) {
    out -= h1[u] + h1[v] - entropy_2d(u, v);
  }
  return out - w.log_abs_det();
}

// debug dump of a density grid for plotting
inline void write_density_csv(const std::string& path, const GridSpec& grid, const Vector& density) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "x,density\n";
  for (int i = 0; i < grid.points; ++i) {
    out << detail::format_double(grid.at(i)) << ',' << detail::format_double(density[i]) << '\n';
  }
}

}  // namespace tca
