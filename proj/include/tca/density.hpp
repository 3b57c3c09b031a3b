#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "tca/core.hpp"
#include "tca/errors.hpp"
#include "tca/kde.hpp"
#include "tca/random.hpp"

namespace tca {

// Directed version of a spanning tree: BFS orientation away from the root.
struct DirectedTree {
  int root = 0;
  std::vector<int> parent;  // -1 at the root
  std::vector<int> order;   // ancestral order (root first)
};

inline DirectedTree root_tree(const SpanningTree& tree, int root) {
  const int m = tree.vertex_count();
  if (root < 0 || root >= m) throw InvalidVertex("root vertex out of range");
  DirectedTree out;
  out.root = root;
  out.parent.assign(m, -1);
  out.order.clear();
  out.order.reserve(m);
  std::vector<char> seen(m, 0);
  out.order.push_back(root);
  seen[root] = 1;
  for (std::size_t head = 0; head < out.order.size(); ++head) {
    const int u = out.order[head];
    for (int nb : tree.neighbors(u)) {
      if (seen[nb]) continue;
      seen[nb] = 1;
      out.parent[nb] = u;
      out.order.push_back(nb);
    }
  }
  return out;
}

struct EmOptions {
  double tol = 1e-7;       // relative log-likelihood change
  int max_iters = 500;
  double variance_floor = 1e-8;
};

struct EmTrace {
  std::vector<double> loglik;  // one entry per EM iteration
  int resets = 0;              // collapsed-component reinitializations
  int final_k = 0;
};

namespace detail {

constexpr double kLog2Pi = 1.8378770664093454836;

inline double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

inline double log_sum_exp(const Vector& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

// kmeans++-style seeding: first pick uniform, later picks proportional to the
// squared distance from the chosen set
inline std::vector<double> kmeanspp_centers(const Vector& samples, int k, Rng& rng) {
  const Eigen::Index n = samples.size();
  std::vector<double> centers;
  centers.push_back(samples[rng.uniform_int(static_cast<int>(n))]);
  Vector dist2(n);
  while (static_cast<int>(centers.size()) < k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (samples[i] - c) * (samples[i] - c));
      dist2[i] = best;
    }
    const double total = dist2.sum();
    if (total <= 0.0) {
      centers.push_back(samples[rng.uniform_int(static_cast<int>(n))]);
      continue;
    }
    double r = rng.uniform() * total;
    Eigen::Index pick = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      r -= dist2[i];
      if (r <= 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(samples[pick]);
  }
  return centers;
}

}  // namespace detail

struct GaussianMixture {
  Vector weights;
  Vector means;
  Vector variances;

  int k() const { return static_cast<int>(weights.size()); }

  double log_pdf(double x) const {
    Vector terms(k());
    for (int j = 0; j < k(); ++j) {
      terms[j] = std::log(weights[j]) + detail::log_normal_pdf(x, means[j], variances[j]);
    }
    return detail::log_sum_exp(terms);
  }

  double sample(Rng& rng) const {
    double r = rng.uniform();
    int j = 0;
    for (; j < k() - 1; ++j) {
      r -= weights[j];
      if (r <= 0.0) break;
    }
    return means[j] + std::sqrt(variances[j]) * rng.normal();
  }

  double mean() const { return weights.dot(means); }

  double variance() const {
    const double mu = mean();
    double out = 0.0;
    for (int j = 0; j < k(); ++j) {
      out += weights[j] * (variances[j] + (means[j] - mu) * (means[j] - mu));
    }
    return out;
  }
};

// EM fit of a univariate Gaussian mixture. Collapsed components (variance at
// the floor with negligible weight) are reset and EM continues; a component
// that keeps collapsing drops K by one.
inline GaussianMixture fit_gmm(const Vector& samples, int k, std::uint64_t seed,
                               const EmOptions& opt = {}, EmTrace* trace = nullptr) {
  const Eigen::Index n = samples.size();
  if (k < 1) throw Error("fit_gmm requires k >= 1");
  if (n < 5 * k) throw Error("fit_gmm requires N >= 5k samples");

  Rng rng(derive_seed(seed, 0x63b9));
  const double sample_mean = samples.mean();
  const double sample_var =
      std::max((samples.array() - sample_mean).square().mean(), opt.variance_floor);

  GaussianMixture gm;
  gm.weights = Vector::Constant(k, 1.0 / k);
  gm.means.resize(k);
  const auto centers = detail::kmeanspp_centers(samples, k, rng);
  for (int j = 0; j < k; ++j) gm.means[j] = centers[j];
  gm.variances = Vector::Constant(k, sample_var);

  Matrix log_resp(n, k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  std::vector<int> collapse_count(k, 0);

  for (int iter = 0; iter < opt.max_iters; ++iter) {
    // E-step
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) {
        log_resp(i, j) =
            std::log(gm.weights[j]) + detail::log_normal_pdf(samples[i], gm.means[j], gm.variances[j]);
      }
      const double lse = detail::log_sum_exp(log_resp.row(i).transpose());
      log_resp.row(i).array() -= lse;
      ll += lse;
    }
    if (trace) trace->loglik.push_back(ll);

    // M-step
    bool reset_happened = false;
    for (int j = 0; j < k; ++j) {
      const Vector resp = log_resp.col(j).array().exp();
      const double nk = resp.sum();
      if (nk < 1e-10 * static_cast<double>(n)) {
        gm.means[j] = samples[rng.uniform_int(static_cast<int>(n))];
        gm.variances[j] = sample_var;
        gm.weights[j] = 1.0 / static_cast<double>(n);
        reset_happened = true;
        if (trace) ++trace->resets;
        if (++collapse_count[j] >= 3 && k > 1) {
          return fit_gmm(samples, k - 1, derive_seed(seed, static_cast<std::uint64_t>(k)), opt,
                         trace);
        }
        continue;
      }
      const double mean = resp.dot(samples) / nk;
      const double var = resp.dot((samples.array() - mean).square().matrix()) / nk;
      gm.weights[j] = nk / static_cast<double>(n);
      gm.means[j] = mean;
      if (var < opt.variance_floor) {
        gm.variances[j] = opt.variance_floor;
        if (++collapse_count[j] >= 3 && k > 1) {
          return fit_gmm(samples, k - 1, derive_seed(seed, static_cast<std::uint64_t>(k)), opt,
                         trace);
        }
        reset_happened = true;
        if (trace) ++trace->resets;
      } else {
        gm.variances[j] = var;
      }
    }
    gm.weights /= gm.weights.sum();

    if (!reset_happened && iter > 0 && ll - prev_ll < opt.tol * (std::abs(prev_ll) + 1.0)) {
      break;
    }
    prev_ll = ll;
  }
  if (trace) trace->final_k = k;
  return gm;
}

// Conditional density p(child | parent): softmax-gated linear-Gaussian
// experts. The last expert's gate score is fixed to zero so the gate
// parameters are identifiable; free parameters are 5K - 2.
struct MixtureOfExperts {
  Vector gate_slope;  // K entries, last always 0
  Vector gate_bias;   // K entries, last always 0
  Vector slope;
  Vector intercept;
  Vector variance;

  int k() const { return static_cast<int>(slope.size()); }

  Vector gate_log_probs(double parent) const {
    Vector scores = gate_slope * parent + gate_bias;
    const double lse = detail::log_sum_exp(scores);
    return scores.array() - lse;
  }

  double log_pdf(double child, double parent) const {
    Vector terms = gate_log_probs(parent);
    for (int j = 0; j < k(); ++j) {
      terms[j] += detail::log_normal_pdf(child, slope[j] * parent + intercept[j], variance[j]);
    }
    return detail::log_sum_exp(terms);
  }

  double sample(double parent, Rng& rng) const {
    const Vector logp = gate_log_probs(parent);
    double r = rng.uniform();
    int j = 0;
    for (; j < k() - 1; ++j) {
      r -= std::exp(logp[j]);
      if (r <= 0.0) break;
    }
    return slope[j] * parent + intercept[j] + std::sqrt(variance[j]) * rng.normal();
  }
};

namespace detail {

// gate M-step: a few gradient-ascent steps on the expected gate
// log-likelihood with backtracking, never decreasing the objective (keeps the
// generalized EM monotone)
inline void improve_gate(MixtureOfExperts& moe, const Vector& parent, const Matrix& resp) {
  const int k = moe.k();
  if (k < 2) return;
  const Eigen::Index n = parent.size();

  auto gate_q = [&](const Vector& gs, const Vector& gb) {
    double q = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Vector scores = gs * parent[i] + gb;
      const double lse = log_sum_exp(scores);
      for (int j = 0; j < k; ++j) q += resp(i, j) * (scores[j] - lse);
    }
    return q;
  };

  Vector gs = moe.gate_slope, gb = moe.gate_bias;
  double q = gate_q(gs, gb);
  for (int pass = 0; pass < 10; ++pass) {
    Vector grad_s = Vector::Zero(k), grad_b = Vector::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      Vector scores = gs * parent[i] + gb;
      const double lse = log_sum_exp(scores);
      for (int j = 0; j < k; ++j) {
        const double diff = resp(i, j) - std::exp(scores[j] - lse);
        grad_s[j] += diff * parent[i];
        grad_b[j] += diff;
      }
    }
    grad_s[k - 1] = 0.0;  // reference expert stays pinned
    grad_b[k - 1] = 0.0;
    const double gnorm2 = grad_s.squaredNorm() + grad_b.squaredNorm();
    if (gnorm2 < 1e-20) break;
    double step = 1.0 / static_cast<double>(n);
    bool improved = false;
    for (int h = 0; h < 20; ++h, step *= 0.5) {
      const Vector ts = gs + step * grad_s;
      const Vector tb = gb + step * grad_b;
      const double tq = gate_q(ts, tb);
      if (tq > q) {
        gs = ts;
        gb = tb;
        q = tq;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  moe.gate_slope = gs;
  moe.gate_bias = gb;
}

}  // namespace detail

inline MixtureOfExperts fit_moe(const Vector& child, const Vector& parent, int k,
                                std::uint64_t seed, const EmOptions& opt = {},
                                EmTrace* trace = nullptr) {
  const Eigen::Index n = child.size();
  if (child.size() != parent.size()) throw DimensionMismatch("fit_moe sample length mismatch");
  if (k < 1) throw Error("fit_moe requires k >= 1");
  if (n < 5 * k) throw Error("fit_moe requires N >= 5k samples");

  Rng rng(derive_seed(seed, 0x303e));
  const double child_mean = child.mean();
  const double child_var =
      std::max((child.array() - child_mean).square().mean(), opt.variance_floor);

  MixtureOfExperts moe;
  moe.gate_slope = Vector::Zero(k);
  moe.gate_bias = Vector::Zero(k);
  moe.slope = Vector::Zero(k);
  moe.intercept.resize(k);
  moe.variance = Vector::Constant(k, child_var);
  // seed experts from kmeans++ centers of the child values
  const auto centers = detail::kmeanspp_centers(child, k, rng);
  for (int j = 0; j < k; ++j) moe.intercept[j] = centers[j];

  Matrix resp(n, k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  std::vector<int> collapse_count(k, 0);

  for (int iter = 0; iter < opt.max_iters; ++iter) {
    // E-step
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Vector terms = moe.gate_log_probs(parent[i]);
      for (int j = 0; j < k; ++j) {
        terms[j] += detail::log_normal_pdf(child[i], moe.slope[j] * parent[i] + moe.intercept[j],
                                           moe.variance[j]);
      }
      const double lse = detail::log_sum_exp(terms);
      resp.row(i) = (terms.array() - lse).exp();
      ll += lse;
    }
    if (trace) trace->loglik.push_back(ll);

    // M-step: weighted least squares per expert
    bool reset_happened = false;
    for (int j = 0; j < k; ++j) {
      const Vector r = resp.col(j);
      const double nk = r.sum();
      const double sp = r.dot(parent);
      const double spp = r.dot(parent.cwiseProduct(parent));
      const double sc = r.dot(child);
      const double spc = r.dot(parent.cwiseProduct(child));
      const double det = nk * spp - sp * sp;
      if (nk < 1e-10 * static_cast<double>(n) || std::abs(det) < 1e-12 * (1.0 + spp * nk)) {
        moe.slope[j] = 0.0;
        moe.intercept[j] = child[rng.uniform_int(static_cast<int>(n))];
        moe.variance[j] = child_var;
        reset_happened = true;
        if (trace) ++trace->resets;
        if (++collapse_count[j] >= 3 && k > 1) {
          return fit_moe(child, parent, k - 1, derive_seed(seed, static_cast<std::uint64_t>(k)),
                         opt, trace);
        }
        continue;
      }
      const double slope = (nk * spc - sp * sc) / det;
      const double intercept = (sc - slope * sp) / nk;
      double var = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = child[i] - slope * parent[i] - intercept;
        var += r[i] * d * d;
      }
      var /= nk;
      moe.slope[j] = slope;
      moe.intercept[j] = intercept;
      if (var < opt.variance_floor) {
        moe.variance[j] = opt.variance_floor;
        if (++collapse_count[j] >= 3 && k > 1) {
          return fit_moe(child, parent, k - 1, derive_seed(seed, static_cast<std::uint64_t>(k)),
                         opt, trace);
        }
        reset_happened = true;
        if (trace) ++trace->resets;
      } else {
        moe.variance[j] = var;
      }
    }
    detail::improve_gate(moe, parent, resp);

    if (!reset_happened && iter > 0 && ll - prev_ll < opt.tol * (std::abs(prev_ll) + 1.0)) {
      break;
    }
    prev_ll = ll;
  }
  if (trace) trace->final_k = k;
  return moe;
}

// Minimum description length: -loglik + (P_K / 2) log N over K = 1..k_max.
// Free parameter counts: 3K - 1 for a Gaussian mixture, 5K - 2 for a mixture
// of experts (gates identifiable up to the pinned reference expert).
struct GmmSelection {
  GaussianMixture model;
  int chosen_k = 1;
  std::vector<double> scores;  // indexed by K - 1
};

struct MoeSelection {
  MixtureOfExperts model;
  int chosen_k = 1;
  std::vector<double> scores;
};

namespace detail {

inline double data_loglik(const GaussianMixture& gm, const Vector& samples) {
  double out = 0.0;
  for (Eigen::Index i = 0; i < samples.size(); ++i) out += gm.log_pdf(samples[i]);
  return out;
}

inline double data_loglik(const MixtureOfExperts& moe, const Vector& child, const Vector& parent) {
  double out = 0.0;
  for (Eigen::Index i = 0; i < child.size(); ++i) out += moe.log_pdf(child[i], parent[i]);
  return out;
}

}  // namespace detail

inline GmmSelection mdl_select_gmm(const Vector& samples, int k_max, std::uint64_t seed,
                                   const EmOptions& opt = {}) {
  if (k_max < 1) throw Error("mdl_select_gmm requires k_max >= 1");
  GmmSelection out;
  double best = std::numeric_limits<double>::infinity();
  const double logn = std::log(static_cast<double>(samples.size()));
  for (int k = 1; k <= k_max; ++k) {
    if (samples.size() < 5 * k) break;
    GaussianMixture gm = fit_gmm(samples, k, derive_seed(seed, static_cast<std::uint64_t>(k)), opt);
    const double params = 3.0 * gm.k() - 1.0;
    const double score = -detail::data_loglik(gm, samples) + 0.5 * params * logn;
    out.scores.push_back(score);
    if (score < best) {
      best = score;
      out.model = std::move(gm);
      out.chosen_k = out.model.k();
    }
  }
  return out;
}

inline MoeSelection mdl_select_moe(const Vector& child, const Vector& parent, int k_max,
                                   std::uint64_t seed, const EmOptions& opt = {}) {
  if (k_max < 1) throw Error("mdl_select_moe requires k_max >= 1");
  MoeSelection out;
  double best = std::numeric_limits<double>::infinity();
  const double logn = std::log(static_cast<double>(child.size()));
  for (int k = 1; k <= k_max; ++k) {
    if (child.size() < 5 * k) break;
    MixtureOfExperts moe =
        fit_moe(child, parent, k, derive_seed(seed, static_cast<std::uint64_t>(k)), opt);
    const double params = 5.0 * moe.k() - 2.0;
    const double score = -detail::data_loglik(moe, child, parent) + 0.5 * params * logn;
    out.scores.push_back(score);
    if (score < best) {
      best = score;
      out.model = std::move(moe);
      out.chosen_k = out.model.k();
    }
  }
  return out;
}

// Tree-factorized density of x: root marginal + per-edge conditionals on the
// sources s = W x, with the change-of-variables term log|det W|.
struct TreeDensityModel {
  Matrix w;
  double log_abs_det_w = 0.0;
  DirectedTree dtree;
  GaussianMixture root_model;
  std::map<int, MixtureOfExperts> edge_models;  // keyed by the non-root child vertex

  double log_pdf_sources(const Vector& s) const {
    double out = root_model.log_pdf(s[dtree.root]);
    for (const auto& [u, moe] : edge_models) out += moe.log_pdf(s[u], s[dtree.parent[u]]);
    return out;
  }

  double log_pdf(const Vector& x) const { return log_pdf_sources(w * x) + log_abs_det_w; }
};

// Fit the second stage on s = W x: root selected as the vertex with maximal
// summed incident edge mutual information (KDE estimates), then one MDL-sized
// mixture per decoupled factor.
inline TreeDensityModel fit_tree_density(const Dataset& data, const Matrix& w,
                                         const SpanningTree& tree, int k_max, std::uint64_t seed,
                                         const KdeConfig& mi_cfg = {}) {
  const DemixingMatrix dw(w);
  const Dataset s = transform_sources(dw, data);
  const int m = static_cast<int>(s.m());
  if (tree.vertex_count() != m) throw DimensionMismatch("tree does not match data dimension");

  Vector incident_mi = Vector::Zero(m);
  for (const auto& [u, v] : tree.edges()) {
    const double mi = pairwise_mi_kde(s.component(u), s.component(v), mi_cfg);
    incident_mi[u] += mi;
    incident_mi[v] += mi;
  }
  int root = 0;
  for (int u = 1; u < m; ++u) {
    if (incident_mi[u] > incident_mi[root]) root = u;
  }

  TreeDensityModel model;
  model.w = w;
  model.log_abs_det_w = dw.log_abs_det();
  model.dtree = root_tree(tree, root);
  model.root_model = mdl_select_gmm(s.component(root), k_max, derive_seed(seed, 0x9007ULL)).model;
  for (int u = 0; u < m; ++u) {
    if (u == root) continue;
    model.edge_models[u] =
        mdl_select_moe(s.component(u), s.component(model.dtree.parent[u]), k_max,
                       derive_seed(seed, static_cast<std::uint64_t>(u) + 1))
            .model;
  }
  return model;
}

// Average held-out log-likelihood per sample (in nats).
inline double log_likelihood(const TreeDensityModel& model, const Dataset& data) {
  if (data.m() != model.w.rows()) throw DimensionMismatch("model does not match data dimension");
  const Matrix s = data.samples() * model.w.transpose();
  double out = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    out += model.log_pdf_sources(s.row(i).transpose());
  }
  return out / static_cast<double>(data.n()) + model.log_abs_det_w;
}

// Ancestral sampling of the directed tree followed by x = W^{-1} s. Returns
// the raw n-by-m sample matrix (n = 1 is legal here, unlike Dataset).
inline Matrix sample_model(const TreeDensityModel& model, int n, std::uint64_t seed) {
  if (n < 1) throw Error("sample_model requires n >= 1");
  const int m = static_cast<int>(model.w.rows());
  Rng rng(derive_seed(seed, 0x5a3eULL));
  Matrix s(n, m);
  for (int i = 0; i < n; ++i) {
    for (int u : model.dtree.order) {
      if (u == model.dtree.root) {
        s(i, u) = model.root_model.sample(rng);
      } else {
        s(i, u) = model.edge_models.at(u).sample(s(i, model.dtree.parent[u]), rng);
      }
    }
  }
  return model.w.partialPivLu().solve(s.transpose()).transpose();
}

}  // namespace tca
