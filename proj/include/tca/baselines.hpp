#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "tca/core.hpp"
#include "tca/density.hpp"
#include "tca/errors.hpp"
#include "tca/kde.hpp"
#include "tca/random.hpp"
#include "tca/tree_select.hpp"

namespace tca {

// Full-covariance multivariate Gaussian (the GAU baseline).
struct MvGaussian {
  Vector mean;
  Matrix cov;

  double log_pdf(const Vector& x) const {
    const Eigen::Index m = mean.size();
    Eigen::LLT<Matrix> llt(cov);
    const Vector d = x - mean;
    const Vector z = llt.matrixL().solve(d);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) logdet += std::log(llt.matrixLLT()(i, i));
    return -0.5 * (static_cast<double>(m) * detail::kLog2Pi + z.squaredNorm()) - logdet;
  }

  double mean_loglik(const Dataset& data) const {
    Eigen::LLT<Matrix> llt(cov);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < mean.size(); ++i) logdet += std::log(llt.matrixLLT()(i, i));
    double out = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      const Vector d = data.samples().row(i).transpose() - mean;
      out += -0.5 * (static_cast<double>(mean.size()) * detail::kLog2Pi +
                     llt.matrixL().solve(d).squaredNorm()) -
             logdet;
    }
    return out / static_cast<double>(data.n());
  }
};

inline MvGaussian fit_gaussian(const Dataset& data) {
  MvGaussian g;
  g.mean = data.samples().colwise().mean();
  Matrix x = data.samples();
  x.rowwise() -= g.mean.transpose();
  g.cov = (x.transpose() * x) / static_cast<double>(data.n());
  g.cov += 1e-9 * g.cov.trace() / static_cast<double>(data.m()) * Matrix::Identity(data.m(), data.m());
  return g;
}

// Independent univariate Gaussian mixtures, one per raw coordinate (IND).
struct IndependentMixtures {
  std::vector<GaussianMixture> per_coordinate;

  double mean_loglik(const Dataset& data) const {
    double out = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      for (Eigen::Index j = 0; j < data.m(); ++j) {
        out += per_coordinate[j].log_pdf(data.samples()(i, j));
      }
    }
    return out / static_cast<double>(data.n());
  }
};

inline IndependentMixtures fit_independent_mixtures(const Dataset& data, int k_max,
                                                    std::uint64_t seed) {
  IndependentMixtures out;
  out.per_coordinate.reserve(data.m());
  for (Eigen::Index j = 0; j < data.m(); ++j) {
    out.per_coordinate.push_back(
        mdl_select_gmm(data.component(j), k_max, derive_seed(seed, static_cast<std::uint64_t>(j)))
            .model);
  }
  return out;
}

// Chow-Liu with mixtures on the raw coordinates (CL): KDE pairwise mutual
// informations pick the tree, then the usual tree density machinery runs with
// a diagonal standardizing transform.
inline TreeDensityModel fit_chow_liu_mixtures(const Dataset& data, int k_max, std::uint64_t seed,
                                              const KdeConfig& mi_cfg = {}) {
  const int m = static_cast<int>(data.m());
  Vector mean = data.samples().colwise().mean();
  Vector sd(m);
  for (int j = 0; j < m; ++j) {
    const double var = (data.samples().col(j).array() - mean[j]).square().mean();
    if (var < 1e-12) throw DegenerateComponent("constant coordinate in CL baseline");
    sd[j] = std::sqrt(var);
  }
  Matrix w = Matrix::Zero(m, m);
  for (int j = 0; j < m; ++j) w(j, j) = 1.0 / sd[j];

  const Dataset s = transform_sources(DemixingMatrix(w), data);
  Matrix mi(m, m);
  mi.setZero();
  for (int u = 0; u < m; ++u) {
    for (int v = u + 1; v < m; ++v) {
      mi(u, v) = mi(v, u) = pairwise_mi_kde(s.component(u), s.component(v), mi_cfg);
    }
  }
  const SpanningTree tree = max_weight_spanning_tree(mi);
  return fit_tree_density(data, w, tree, k_max, seed, mi_cfg);
}

// Full-covariance multivariate Gaussian mixture (GMM baseline), EM with
// kmeans++ seeding and MDL size selection.
struct MvGaussianMixture {
  Vector weights;
  std::vector<Vector> means;
  std::vector<Matrix> covs;

  int k() const { return static_cast<int>(weights.size()); }

  double log_pdf(const Vector& x) const {
    Vector terms(k());
    for (int j = 0; j < k(); ++j) {
      Eigen::LLT<Matrix> llt(covs[j]);
      const Vector z = llt.matrixL().solve(x - means[j]);
      double logdet = 0.0;
      for (Eigen::Index i = 0; i < x.size(); ++i) logdet += std::log(llt.matrixLLT()(i, i));
      terms[j] = std::log(weights[j]) -
                 0.5 * (static_cast<double>(x.size()) * detail::kLog2Pi + z.squaredNorm()) - logdet;
    }
    return detail::log_sum_exp(terms);
  }

  double mean_loglik(const Dataset& data) const {
    double out = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      out += log_pdf(data.samples().row(i).transpose());
    }
    return out / static_cast<double>(data.n());
  }
};

inline MvGaussianMixture fit_mv_gmm(const Dataset& data, int k, std::uint64_t seed,
                                    const EmOptions& opt = {}) {
  const Eigen::Index n = data.n();
  const Eigen::Index m = data.m();
  if (k < 1) throw Error("fit_mv_gmm requires k >= 1");
  if (n < 5 * k) throw Error("fit_mv_gmm requires N >= 5k samples");
  Rng rng(derive_seed(seed, 0x3177ULL));
  const Matrix& x = data.samples();

  const Matrix base_cov = [&]() {
    Matrix c = x;
    c.rowwise() -= x.colwise().mean();
    Matrix out = (c.transpose() * c) / static_cast<double>(n);
    out += 1e-6 * out.trace() / static_cast<double>(m) * Matrix::Identity(m, m);
    return out;
  }();
  const double ridge = 1e-6 * base_cov.trace() / static_cast<double>(m);

  MvGaussianMixture gm;
  gm.weights = Vector::Constant(k, 1.0 / k);
  gm.means.resize(k);
  gm.covs.assign(k, base_cov);
  // kmeans++ seeding on rows
  std::vector<int> picks;
  picks.push_back(rng.uniform_int(static_cast<int>(n)));
  while (static_cast<int>(picks.size()) < k) {
    Vector dist2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int p : picks) best = std::min(best, (x.row(i) - x.row(p)).squaredNorm());
      dist2[i] = best;
    }
    const double total = dist2.sum();
    double r = rng.uniform() * total;
    Eigen::Index pick = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      r -= dist2[i];
      if (r <= 0.0) {
        pick = i;
        break;
      }
    }
    picks.push_back(static_cast<int>(pick));
  }
  for (int j = 0; j < k; ++j) gm.means[j] = x.row(picks[j]).transpose();

  Matrix log_resp(n, k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opt.max_iters; ++iter) {
    std::vector<Eigen::LLT<Matrix>> llts;
    std::vector<double> logdets(k, 0.0);
    llts.reserve(k);
    for (int j = 0; j < k; ++j) {
      llts.emplace_back(gm.covs[j]);
      for (Eigen::Index i = 0; i < m; ++i) logdets[j] += std::log(llts[j].matrixLLT()(i, i));
    }
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) {
        const Vector z = llts[j].matrixL().solve(x.row(i).transpose() - gm.means[j]);
        log_resp(i, j) = std::log(gm.weights[j]) -
                         0.5 * (static_cast<double>(m) * detail::kLog2Pi + z.squaredNorm()) -
                         logdets[j];
      }
      const double lse = detail::log_sum_exp(log_resp.row(i).transpose());
      log_resp.row(i).array() -= lse;
      ll += lse;
    }

    for (int j = 0; j < k; ++j) {
      const Vector resp = log_resp.col(j).array().exp();
      const double nk = resp.sum();
      if (nk < 1e-8 * static_cast<double>(n)) {
        gm.means[j] = x.row(rng.uniform_int(static_cast<int>(n))).transpose();
        gm.covs[j] = base_cov;
        gm.weights[j] = 1.0 / static_cast<double>(n);
        continue;
      }
      const Vector mu = (x.transpose() * resp) / nk;
      Matrix c = Matrix::Zero(m, m);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vector d = x.row(i).transpose() - mu;
        c.noalias() += resp[i] * d * d.transpose();
      }
      c /= nk;
      c += ridge * Matrix::Identity(m, m);
      gm.weights[j] = nk / static_cast<double>(n);
      gm.means[j] = mu;
      gm.covs[j] = c;
    }
    gm.weights /= gm.weights.sum();
    if (iter > 0 && ll - prev_ll < opt.tol * (std::abs(prev_ll) + 1.0)) break;
    prev_ll = ll;
  }
  return gm;
}

inline MvGaussianMixture mdl_select_mv_gmm(const Dataset& data, int k_max, std::uint64_t seed,
                                           const EmOptions& opt = {}) {
  const double md = static_cast<double>(data.m());
  const double logn = std::log(static_cast<double>(data.n()));
  MvGaussianMixture best;
  double best_score = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= k_max; ++k) {
    if (data.n() < 5 * k) break;
    MvGaussianMixture gm = fit_mv_gmm(data, k, derive_seed(seed, static_cast<std::uint64_t>(k)), opt);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) ll += gm.log_pdf(data.samples().row(i).transpose());
    const double params = (k - 1) + k * (md + md * (md + 1) / 2.0);
    const double score = -ll + 0.5 * params * logn;
    if (score < best_score) {
      best_score = score;
      best = std::move(gm);
    }
  }
  return best;
}

}  // namespace tca
