#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <utility>
#include <vector>

#include "tca/core.hpp"
#include "tca/errors.hpp"
#include "tca/random.hpp"

namespace tca {

namespace detail {

inline Eigen::LLT<Matrix> checked_llt(const Matrix& sigma) {
  if (sigma.rows() != sigma.cols()) throw DimensionMismatch("matrix must be square");
  const double asym = (sigma - sigma.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * std::max(1.0, sigma.cwiseAbs().maxCoeff())) {
    throw NotSpd("matrix not symmetric");
  }
  Eigen::LLT<Matrix> llt(((sigma + sigma.transpose()) * 0.5).eval());
  if (llt.info() != Eigen::Success) throw NotSpd("matrix not positive definite");
  return llt;
}

inline double logdet_from_llt(const Eigen::LLT<Matrix>& llt) {
  double s = 0.0;
  const auto& L = llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) s += std::log(L(i, i));
  return 2.0 * s;
}

}  // namespace detail

// m-fold Gaussian mutual information: -1/2 log(det sigma / prod_i sigma_ii).
inline double gaussian_total_mi(const Matrix& sigma) {
  const auto llt = detail::checked_llt(sigma);
  double log_prod_diag = 0.0;
  for (Eigen::Index i = 0; i < sigma.rows(); ++i) {
    if (sigma(i, i) <= 0.0) throw NotSpd("nonpositive diagonal entry");
    log_prod_diag += std::log(sigma(i, i));
  }
  return -0.5 * (detail::logdet_from_llt(llt) - log_prod_diag);
}

// Pairwise Gaussian mutual information between components u and v.
inline double gaussian_pairwise_mi(const Matrix& sigma, int u, int v) {
  detail::checked_llt(sigma);
  const double suu = sigma(u, u), svv = sigma(v, v), suv = sigma(u, v);
  return -0.5 * std::log((suu * svv - suv * suv) / (suu * svv));
}

// T-mutual information of a Gaussian: zero iff sigma factorizes in the tree.
inline double gaussian_t_mi(const Matrix& sigma, const SpanningTree& tree) {
  if (sigma.rows() != tree.vertex_count()) {
    throw DimensionMismatch("covariance does not match tree size");
  }
  double out = gaussian_total_mi(sigma);
  for (const auto& [u, v] : tree.edges()) out -= gaussian_pairwise_mi(sigma, u, v);
  return out;
}

// Unit-diagonal covariance whose precision matrix vanishes off the tree.
struct TreeStructuredCovariance {
  Matrix c;
  SpanningTree tree;
};

// Constructive sampler for C^T: root the tree, draw an edge correlation per
// edge (sign random, magnitude in correlation_range), and build the implied
// linear-Gaussian covariance. Covariances between vertices are products of
// edge correlations along the connecting path.
inline TreeStructuredCovariance sample_tree_covariance(const SpanningTree& tree, Rng& rng,
                                                       double corr_lo = 0.3,
                                                       double corr_hi = 0.9) {
  const int m = tree.vertex_count();
  Matrix c = Matrix::Identity(m, m);
  std::vector<int> order;
  order.reserve(m);
  std::vector<char> seen(m, 0);
  order.push_back(0);
  seen[0] = 1;
  for (std::size_t head = 0; head < order.size(); ++head) {
    const int p = order[head];
    for (int u : tree.neighbors(p)) {
      if (seen[u]) continue;
      seen[u] = 1;
      double rho = rng.uniform(corr_lo, corr_hi);
      if (rng.uniform() < 0.5) rho = -rho;
      // s_u = rho * s_p + sqrt(1 - rho^2) * eps, all unit variance
      for (int w : order) c(u, w) = c(w, u) = rho * c(p, w);
      c(u, u) = 1.0;
      order.push_back(u);
    }
  }
  return TreeStructuredCovariance{std::move(c), tree};
}

// Theorem-3 parametrization of the Gaussian TCA solutions: W = C^{1/2} R Sigma^{-1/2}.
inline DemixingMatrix theorem3_demixing(const CovarianceMatrix& sigma,
                                        const TreeStructuredCovariance& c,
                                        const Matrix& rotation) {
  const Eigen::Index m = sigma.sigma.rows();
  if (c.c.rows() != m || rotation.rows() != m || rotation.cols() != m) {
    throw DimensionMismatch("theorem3_demixing dimension mismatch");
  }
  const double ortho_err = (rotation.transpose() * rotation - Matrix::Identity(m, m)).cwiseAbs().maxCoeff();
  if (ortho_err > 1e-10) throw NotOrthogonal("rotation is not orthogonal");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c.c);
  if (eig.eigenvalues().minCoeff() <= 0.0) throw NotSpd("tree covariance not positive definite");
  const Matrix c_sqrt =
      eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
  return DemixingMatrix(c_sqrt * rotation * sigma.inv_sqrt);
}

}  // namespace tca
