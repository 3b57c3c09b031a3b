#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <vector>

#include "tca/cache.hpp"
#include "tca/core.hpp"
#include "tca/errors.hpp"

namespace tca {

// Kernel generalized variance machinery: Gaussian-kernel Gram matrices are
// factored by incomplete Cholesky and all mutual-information terms are
// assembled in the rank-r factor coordinates; N-by-N matrices are never
// materialized outside the factorization itself.
struct KgvConfig {
  double kernel_width = 0.5;     // Gaussian kernel k(x,y) = exp(-(x-y)^2 / 2 sigma^2)
  double regularization = 1e-3;  // kappa
  double cholesky_tol = 1e-4;    // eta: stop when residual trace <= eta * N

  void validate() const {
    if (!(kernel_width > 0.0)) throw Error("kgv kernel_width must be > 0");
    if (!(regularization > 0.0)) throw Error("kgv regularization must be > 0");
    if (!(cholesky_tol > 0.0)) throw Error("kgv cholesky_tol must be > 0");
  }

  // Gram-matrix regularizer. Gram eigenvalues grow linearly with N, so kappa
  // is applied at the scale kappa*N/2 to keep the attenuation sample-size
  // independent (the scaling used by the kernel-ICA construction the KGV
  // comes from).
  double effective_kappa(Eigen::Index n) const {
    return 0.5 * regularization * static_cast<double>(n);
  }
};

// Low-rank factor of one component's centered Gram matrix, plus the
// eigen-prepared form used by the KGV assembly.
struct CholeskyFactor {
  Matrix g;                      // N x r, G G^T approximates the centered Gram
  std::vector<int> pivot_order;  // greedy pivots, nonincreasing residual diagonal
  Matrix u;                      // N x r', orthonormal basis of range(g)
  Vector d;                      // r' attenuations lambda / (lambda + kappa_eff)
  Eigen::Index n = 0;

  Eigen::Index rank() const { return g.cols(); }
};

namespace detail {

inline double logdet_spd_floored(const Matrix& s) {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success) {
    double out = 0.0;
    const auto& l = llt.matrixLLT();
    for (Eigen::Index i = 0; i < l.rows(); ++i) out += std::log(l(i, i));
    return 2.0 * out;
  }
  // indefinite due to rank deficiency: floor eigenvalues before log-det
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  double out = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    out += std::log(std::max(eig.eigenvalues()[i], 1e-12));
  }
  return out;
}

}  // namespace detail

// Greedy pivoted incomplete Cholesky of the centered Gram matrix
// H K H (H = I - 11^T/N), stopping when the residual trace drops to
// cholesky_tol * N. Columns of the centered Gram are formed on demand.
inline CholeskyFactor incomplete_cholesky(const Vector& samples, const KgvConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = samples.size();
  if (n < 2) throw Error("incomplete_cholesky requires N >= 2");
  if (!samples.allFinite()) throw Error("incomplete_cholesky requires finite samples");

  const double inv2s2 = 1.0 / (2.0 * cfg.kernel_width * cfg.kernel_width);
  auto kernel_col = [&](Eigen::Index p) {
    return ((samples.array() - samples[p]).square() * (-inv2s2)).exp().matrix().eval();
  };

  // row means of the uncentered Gram, needed to center columns on demand
  Vector row_mean(n);
  for (Eigen::Index a = 0; a < n; ++a) row_mean[a] = kernel_col(a).mean();
  const double grand_mean = row_mean.mean();

  Vector diag = (1.0 - 2.0 * row_mean.array() + grand_mean).matrix();
  diag = diag.cwiseMax(0.0);

  const double tol = cfg.cholesky_tol * static_cast<double>(n);
  std::vector<char> used(n, 0);
  std::vector<int> pivots;
  Matrix g(n, std::min<Eigen::Index>(n, 16));
  Eigen::Index r = 0;
  double residual = diag.sum();

  while (residual > tol && r < n) {
    Eigen::Index p = -1;
    double best = 1e-12;  // numerical floor for usable pivots
    for (Eigen::Index a = 0; a < n; ++a) {
      if (!used[a] && diag[a] > best) {
        best = diag[a];
        p = a;
      }
    }
    if (p < 0) break;

    if (r == g.cols()) g.conservativeResize(Eigen::NoChange, 2 * g.cols());
    Vector col = kernel_col(p);
    col.array() += grand_mean - row_mean[p];
    col -= row_mean;
    if (r > 0) col.noalias() -= g.leftCols(r) * g.row(p).head(r).transpose();
    const double root = std::sqrt(diag[p]);
    col /= root;
    col[p] = root;
    g.col(r) = col;

    used[p] = 1;
    pivots.push_back(static_cast<int>(p));
    diag -= col.cwiseProduct(col);
    diag = diag.cwiseMax(0.0);
    diag[p] = 0.0;
    ++r;
    residual = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
      if (!used[a]) residual += diag[a];
    }
  }

  CholeskyFactor f;
  f.g = g.leftCols(r);
  f.pivot_order = std::move(pivots);
  f.n = n;

  // eigen-prepared form: G = U Lambda^{1/2} V^T, keep numerically nonzero modes
  if (r > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(f.g.transpose() * f.g);
    const Vector& ev = eig.eigenvalues();
    const double floor = std::max(1e-12, 1e-12 * ev.maxCoeff());
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = ev.size() - 1; i >= 0; --i) {
      if (ev[i] > floor) keep.push_back(i);
    }
    const double kappa = cfg.effective_kappa(n);
    f.u.resize(n, static_cast<Eigen::Index>(keep.size()));
    f.d.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const double lambda = ev[keep[k]];
      f.u.col(static_cast<Eigen::Index>(k)) =
          f.g * eig.eigenvectors().col(keep[k]) / std::sqrt(lambda);
      f.d[static_cast<Eigen::Index>(k)] = lambda / (lambda + kappa);
    }
  } else {
    f.u.resize(n, 0);
    f.d.resize(0);
  }
  return f;
}

// Joint correlation structure of a set of prepared factors. The KGV block
// matrix with regularized diagonal blocks reduces, in factor coordinates, to
// S = I + C with off-diagonal blocks C_ij = D_i U_i^T U_j D_j; every
// mutual-information term is -1/2 log det of a principal submatrix of S.
class KgvJoint {
public:
  KgvJoint(std::vector<const CholeskyFactor*> factors, std::vector<std::uint64_t> content_hashes = {},
           ContrastCache* cache = nullptr)
      : factors_(std::move(factors)), hashes_(std::move(content_hashes)), cache_(cache) {
    const int m = static_cast<int>(factors_.size());
    offsets_.resize(m + 1, 0);
    for (int i = 0; i < m; ++i) {
      if (factors_[i]->n != factors_[0]->n) {
        throw DimensionMismatch("kgv factors disagree on sample count");
      }
      offsets_[i + 1] = offsets_[i] + static_cast<int>(factors_[i]->d.size());
    }
    blocks_.assign(static_cast<std::size_t>(m) * m, nullptr);
  }

  int component_count() const { return static_cast<int>(factors_.size()); }

  // -1/2 log det of S restricted to the given components; this is the
  // KGV mutual information of that subset (zero for a single component).
  double mutual_information(const std::vector<int>& comps) const {
    if (comps.size() <= 1) return 0.0;
    return -0.5 * logdet_subset(comps);
  }

  double total_mutual_information() const {
    std::vector<int> all(factors_.size());
    std::iota(all.begin(), all.end(), 0);
    return mutual_information(all);
  }

  // mutual information between groups of components, each group entering as
  // one concatenated block: -1/2 [log det S_union - sum_g log det S_g]
  double grouped_mutual_information(const std::vector<std::vector<int>>& groups) const {
    if (groups.size() <= 1) return 0.0;
    std::vector<int> all;
    double out = 0.0;
    for (const auto& g : groups) {
      all.insert(all.end(), g.begin(), g.end());
      out += logdet_subset(g);
    }
    return -0.5 * (logdet_subset(all) - out);
  }

  double logdet_subset(const std::vector<int>& comps) const {
    int dim = 0;
    for (int c : comps) dim += block_size(c);
    Matrix s = Matrix::Identity(dim, dim);
    int row = 0;
    for (std::size_t a = 0; a < comps.size(); ++a) {
      int col = 0;
      for (std::size_t b = 0; b < a; ++b) {
        const Matrix& blk = cross(comps[b], comps[a]);  // (b, a) with b first
        s.block(row, col, block_size(comps[a]), block_size(comps[b])) = blk.transpose();
        s.block(col, row, block_size(comps[b]), block_size(comps[a])) = blk;
        col += block_size(comps[b]);
      }
      row += block_size(comps[a]);
    }
    return detail::logdet_spd_floored(s);
  }

private:
  int block_size(int c) const { return static_cast<int>(factors_[c]->d.size()); }

  // cross block D_i U_i^T U_j D_j for i, j in any order
  const Matrix& cross(int i, int j) const {
    const int m = component_count();
    auto& slot = blocks_[static_cast<std::size_t>(i) * m + j];
    if (slot) return *slot;
    std::shared_ptr<const Matrix> blk;
    if (cache_ && !hashes_.empty()) {
      const CacheKey key{ContrastCache::kKgvCross, i, j, hashes_[i], hashes_[j]};
      blk = cache_->get_block(key);
      if (!blk) {
        blk = std::make_shared<const Matrix>(compute_cross(i, j));
        cache_->put_block(key, blk);
      }
    } else {
      blk = std::make_shared<const Matrix>(compute_cross(i, j));
    }
    slot = std::move(blk);
    return *slot;
  }

  Matrix compute_cross(int i, int j) const {
    const CholeskyFactor& fi = *factors_[i];
    const CholeskyFactor& fj = *factors_[j];
    return fi.d.asDiagonal() * (fi.u.transpose() * fj.u) * fj.d.asDiagonal();
  }

  std::vector<const CholeskyFactor*> factors_;
  std::vector<std::uint64_t> hashes_;
  ContrastCache* cache_;
  std::vector<int> offsets_;
  mutable std::vector<std::shared_ptr<const Matrix>> blocks_;
};

// KGV mutual information of m components (Gaussian mutual information of the
// kernel-mapped, regularized features). Nonnegative up to numerical slack.
inline double kgv_mutual_information(const std::vector<const CholeskyFactor*>& factors,
                                     const KgvConfig& cfg) {
  cfg.validate();
  if (factors.size() <= 1) return 0.0;
  return KgvJoint(factors).total_mutual_information();
}

inline std::vector<const CholeskyFactor*> factor_ptrs(const std::vector<CholeskyFactor>& factors) {
  std::vector<const CholeskyFactor*> ptrs;
  ptrs.reserve(factors.size());
  for (const auto& f : factors) ptrs.push_back(&f);
  return ptrs;
}

inline double pairwise_kgv_mi(const CholeskyFactor& f_u, const CholeskyFactor& f_v,
                              const KgvConfig& cfg) {
  return kgv_mutual_information(std::vector<const CholeskyFactor*>{&f_u, &f_v}, cfg);
}

namespace detail {

inline std::shared_ptr<const CholeskyFactor> factor_for_component(
    const Dataset& s, int i, std::uint64_t row_hash, const KgvConfig& cfg, ContrastCache* cache) {
  if (cache) {
    const CacheKey key{ContrastCache::kKgvFactor, i, -1, row_hash, 0};
    if (auto hit = cache->get_factor(key)) return hit;
    auto f = std::make_shared<const CholeskyFactor>(incomplete_cholesky(s.component(i), cfg));
    cache->put_factor(key, f);
    return f;
  }
  return std::make_shared<const CholeskyFactor>(incomplete_cholesky(s.component(i), cfg));
}

}  // namespace detail

// KGV contrast: J^K = I^K(s) - sum_{(u,v) in T} I^K_uv(s) with s = W x.
// A T-mutual information of the Gaussianized features, hence nonnegative.
inline double contrast_JK(const DemixingMatrix& w, const Dataset& data, const SpanningTree& tree,
                          const KgvConfig& cfg, ContrastCache* cache = nullptr) {
  cfg.validate();
  if (tree.vertex_count() != w.dim()) throw DimensionMismatch("tree size does not match W");
  if (w.log_abs_det() < std::log(1e-12)) throw SingularMatrix("|det W| below 1e-12");
  const Dataset s = transform_sources(w, data);
  const int m = static_cast<int>(s.m());

  std::vector<std::uint64_t> row_hash(m);
  std::vector<std::shared_ptr<const CholeskyFactor>> held(m);
  std::vector<const CholeskyFactor*> factors(m);
  for (int i = 0; i < m; ++i) {
    row_hash[i] = hash_row(w.matrix().row(i));
    held[i] = detail::factor_for_component(s, i, row_hash[i], cfg, cache);
    factors[i] = held[i].get();
  }

  const KgvJoint joint(factors, row_hash, cache);
  double out = joint.total_mutual_information();
  for (const auto& [u, v] : tree.edges()) {
    double pair_mi;
    const CacheKey key{ContrastCache::kKgvPairMi, u, v, row_hash[u], row_hash[v]};
    if (cache) {
      if (const auto hit = cache->get_scalar(key)) {
        pair_mi = *hit;
      } else {
        pair_mi = joint.mutual_information({u, v});
        cache->put_scalar(key, pair_mi);
      }
    } else {
      pair_mi = joint.mutual_information({u, v});
    }
    out -= pair_mi;
  }
  return out;
}

}  // namespace tca
