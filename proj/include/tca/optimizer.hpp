#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tca/cache.hpp"
#include "tca/core.hpp"
#include "tca/errors.hpp"
#include "tca/gaussian.hpp"
#include "tca/kde.hpp"
#include "tca/kgv.hpp"
#include "tca/random.hpp"
#include "tca/tree_select.hpp"

namespace tca {

enum class ContrastKind { kKde, kKgv };

enum class InitMode { kIca, kIdentity, kGaussianTree };

struct LineSearchConfig {
  double initial_step = 1.0;
  double shrink = 0.5;
  double armijo_c = 1e-4;
  int max_halvings = 30;
};

struct OptimizerConfig {
  double lambda_c = 0.05;
  ContrastKind contrast = ContrastKind::kKgv;
  int max_outer_iters = 200;
  double grad_eps = 1e-4;
  LineSearchConfig line_search;
  double convergence_tol = 1e-6;
  std::uint64_t seed = 0;
  KdeConfig kde;
  KgvConfig kgv;
  InitMode init_mode = InitMode::kIca;
  int refine_max_subtree = 4;
  double refine_score_threshold = 0.01;
  int refine_steps = 10;
  std::ostream* trace_stream = nullptr;  // per-iteration records when verbose

  void validate() const {
    if (lambda_c < 0.0) throw Error("lambda_c must be >= 0");
    if (max_outer_iters < 1) throw Error("max_outer_iters must be >= 1");
    if (!(grad_eps > 0.0) || !(convergence_tol > 0.0)) {
      throw Error("optimizer tolerances must be > 0");
    }
    kde.validate();
    kgv.validate();
  }
};

struct FitResult {
  Matrix w;
  SpanningTree tree{2, {{0, 1}}};
  std::vector<double> objective_trace;
  int tree_switch_count = 0;
  bool converged = false;
  bool ica_converged = true;
  double wall_seconds = 0.0;
};

// Correlation penalty along tree edges:
// J^C = -1/2 sum_{(u,v) in T} log(1 - corr^2(s_u, s_v)). Returns +infinity
// when an edge pair is perfectly correlated.
inline double penalty_JC(const DemixingMatrix& w, const Dataset& data, const SpanningTree& tree) {
  if (tree.vertex_count() != w.dim()) throw DimensionMismatch("tree size does not match W");
  const Dataset s = transform_sources(w, data);
  Matrix x = s.samples();
  x.rowwise() -= x.colwise().mean();
  const double n = static_cast<double>(x.rows());
  Vector var(x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    var[i] = x.col(i).squaredNorm() / n;
    if (var[i] < 1e-12) {
      throw DegenerateComponent("component " + std::to_string(i) + " has vanishing variance");
    }
  }
  double out = 0.0;
  for (const auto& [u, v] : tree.edges()) {
    const double cov = x.col(u).dot(x.col(v)) / n;
    const double rho2 = cov * cov / (var[u] * var[v]);
    if (rho2 >= (1.0 - 1e-12) * (1.0 - 1e-12)) {
      return std::numeric_limits<double>::infinity();
    }
    out -= 0.5 * std::log(1.0 - rho2);
  }
  return out;
}

// Penalized objective: contrast (J^E or J^K) + lambda_C * J^C.
inline double objective(const DemixingMatrix& w, const Dataset& data, const SpanningTree& tree,
                        const OptimizerConfig& cfg, ContrastCache* cache = nullptr) {
  const double contrast = cfg.contrast == ContrastKind::kKde
                              ? contrast_JE(w, data, tree, cfg.kde, cache)
                              : contrast_JK(w, data, tree, cfg.kgv, cache);
  if (cfg.lambda_c == 0.0) return contrast;
  return contrast + cfg.lambda_c * penalty_JC(w, data, tree);
}

// Scale every row of a raw matrix so that (W Sigma W^T)_ii = 1.
inline DemixingMatrix project_unit_rows(const Matrix& w, const CovarianceMatrix& cov) {
  if (w.rows() != cov.sigma.rows()) throw DimensionMismatch("matrix does not match covariance");
  Matrix out = w;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double q = out.row(i) * cov.sigma * out.row(i).transpose();
    if (!(q > 1e-300)) throw ZeroRow("row " + std::to_string(i) + " has zero Sigma-norm");
    out.row(i) /= std::sqrt(q);
  }
  return DemixingMatrix(std::move(out));
}

namespace detail {

// project a single row; used by finite differences so unchanged rows keep
// their bit patterns (and therefore their cache entries)
inline void project_row(Matrix& w, Eigen::Index i, const Matrix& sigma) {
  const double q = w.row(i) * sigma * w.row(i).transpose();
  if (!(q > 1e-300)) throw ZeroRow("row " + std::to_string(i) + " has zero Sigma-norm");
  w.row(i) /= std::sqrt(q);
}

}  // namespace detail

// Deflation fixed-point ICA (tanh nonlinearity) on whitened data, used as the
// TCA initializer. Non-convergence is reported through the flag, not thrown;
// the last iterate is still a usable starting point.
inline DemixingMatrix ica_initialize(const Dataset& data, const CovarianceMatrix& cov,
                                     std::uint64_t seed, bool* converged_out = nullptr) {
  Matrix x = data.samples();
  x.rowwise() -= x.colwise().mean();
  const Matrix z = x * cov.inv_sqrt;  // inv_sqrt is symmetric
  const Eigen::Index n = z.rows();
  const Eigen::Index m = z.cols();
  Rng rng(derive_seed(seed, 0x1caULL));
  bool all_converged = true;

  Matrix b(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    Vector w(m);
    for (Eigen::Index j = 0; j < m; ++j) w[j] = rng.normal();
    auto deflate = [&](Vector& v) {
      for (Eigen::Index k = 0; k < i; ++k) v -= v.dot(b.row(k)) * b.row(k).transpose();
      const double norm = v.norm();
      if (norm < 1e-12) {
        for (Eigen::Index j = 0; j < m; ++j) v[j] = rng.normal();
        for (Eigen::Index k = 0; k < i; ++k) v -= v.dot(b.row(k)) * b.row(k).transpose();
        v /= v.norm();
      } else {
        v /= norm;
      }
    };
    deflate(w);
    bool converged = false;
    for (int iter = 0; iter < 200; ++iter) {
      const Vector y = z * w;
      const Vector t = y.array().tanh().matrix();
      const double g_prime_mean = (1.0 - t.array().square()).mean();
      Vector w_new = (z.transpose() * t) / static_cast<double>(n) - g_prime_mean * w;
      deflate(w_new);
      const double agreement = std::abs(w_new.dot(w));
      w = w_new;
      if (std::abs(1.0 - agreement) < 1e-6) {
        converged = true;
        break;
      }
    }
    all_converged = all_converged && converged;
    b.row(i) = w.transpose();
  }

  // symmetric re-orthonormalization of the accumulated rows
  Eigen::SelfAdjointEigenSolver<Matrix> eig(b * b.transpose());
  const Matrix fix = eig.eigenvectors() *
                     eig.eigenvalues().cwiseMax(1e-12).cwiseSqrt().cwiseInverse().asDiagonal() *
                     eig.eigenvectors().transpose();
  b = fix * b;

  if (converged_out) *converged_out = all_converged;
  return project_unit_rows(b * cov.inv_sqrt, cov);
}

namespace detail {

// central differences over the entries of the listed rows; the perturbed row
// is re-projected before evaluation and the result rows are projected onto
// the constraint tangent space
inline Matrix gradient_fd_rows(const std::function<double(const Matrix&)>& objective_fn,
                               const Matrix& w, const CovarianceMatrix& cov, double eps,
                               const std::vector<int>& rows) {
  const Eigen::Index m = w.rows();
  Matrix grad = Matrix::Zero(m, m);
  Matrix trial = w;
  for (int i : rows) {
    for (Eigen::Index j = 0; j < m; ++j) {
      trial.row(i) = w.row(i);
      trial(i, j) = w(i, j) + eps;
      project_row(trial, i, cov.sigma);
      const double f_plus = objective_fn(trial);
      trial.row(i) = w.row(i);
      trial(i, j) = w(i, j) - eps;
      project_row(trial, i, cov.sigma);
      const double f_minus = objective_fn(trial);
      trial.row(i) = w.row(i);
      grad(i, j) = (f_plus - f_minus) / (2.0 * eps);
    }
  }
  for (int i : rows) {
    const Vector sw = cov.sigma * w.row(i).transpose();
    grad.row(i) -= (grad.row(i).dot(sw)) * w.row(i);
  }
  return grad;
}

}  // namespace detail

// Central-difference gradient of an objective over all entries of W on the
// unit-row manifold.
inline Matrix gradient_fd(const std::function<double(const Matrix&)>& objective_fn, const Matrix& w,
                          const CovarianceMatrix& cov, double eps) {
  std::vector<int> rows(static_cast<std::size_t>(w.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  return detail::gradient_fd_rows(objective_fn, w, cov, eps, rows);
}

namespace detail {

struct LineSearchOutcome {
  Matrix w;
  double objective;
  double step;
};

// backtracking Armijo line search along -grad, projecting only the rows the
// gradient touches
inline std::optional<LineSearchOutcome> backtracking_search(
    const std::function<double(const Matrix&)>& objective_fn, const Matrix& w,
    const Matrix& grad, const std::vector<int>& rows, const CovarianceMatrix& cov,
    const LineSearchConfig& ls, double current_objective) {
  const double grad_sq = grad.squaredNorm();
  if (!(grad_sq > 0.0)) return std::nullopt;
  double step = ls.initial_step;
  for (int k = 0; k < ls.max_halvings; ++k, step *= ls.shrink) {
    Matrix trial = w;
    bool feasible = true;
    for (int i : rows) {
      trial.row(i) -= step * grad.row(i);
      try {
        project_row(trial, i, cov.sigma);
      } catch (const Error&) {
        feasible = false;
        break;
      }
    }
    if (!feasible) continue;
    double f_trial;
    try {
      f_trial = objective_fn(trial);
    } catch (const Error&) {
      continue;
    }
    if (f_trial <= current_objective - ls.armijo_c * step * grad_sq) {
      return LineSearchOutcome{std::move(trial), f_trial, step};
    }
  }
  return std::nullopt;
}

struct Evaluator {
  const Dataset& data;
  const OptimizerConfig& cfg;
  ContrastCache cache;

  double objective_at(const Matrix& w, const SpanningTree& tree) {
    return tca::objective(DemixingMatrix(w), data, tree, cfg, &cache);
  }

  // trial evaluation that treats numerically unusable points as +infinity
  double objective_or_inf(const Matrix& w, const SpanningTree& tree) {
    try {
      return objective_at(w, tree);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  }

  double entropy_1d(const Dataset& s, int i, std::uint64_t row_hash) {
    const CacheKey key{ContrastCache::kEntropy1d, i, -1, row_hash, 0};
    if (const auto hit = cache.get_scalar(key)) return *hit;
    const double value = kde_entropy_1d(s.component(i), cfg.kde).value;
    cache.put_scalar(key, value);
    return value;
  }

  double entropy_2d(const Dataset& s, int u, int v, std::uint64_t hu, std::uint64_t hv) {
    const CacheKey key{ContrastCache::kEntropy2d, u, v, hu, hv};
    if (const auto hit = cache.get_scalar(key)) return *hit;
    const double value = kde_entropy_2d(s.component(u), s.component(v), cfg.kde).value;
    cache.put_scalar(key, value);
    return value;
  }

  std::shared_ptr<const CholeskyFactor> factor(const Dataset& s, int i, std::uint64_t row_hash) {
    return factor_for_component(s, i, row_hash, cfg.kgv, &cache);
  }

  // Contrast (plus edge penalty) restricted to a component subset and the
  // tree edges inside it. Used by the subtree refinement pass; the log-det
  // term of the KDE contrast always refers to the full matrix.
  double local_objective(const Matrix& w, const std::vector<int>& comps,
                         const std::vector<std::pair<int, int>>& local_edges) {
    const DemixingMatrix dw(w);
    const Dataset s = transform_sources(dw, data);
    std::vector<std::uint64_t> row_hash(s.m());
    for (int i : comps) row_hash[i] = hash_row(w.row(i));

    double contrast = 0.0;
    if (cfg.contrast == ContrastKind::kKde) {
      std::vector<double> h1(s.m(), 0.0);
      for (int i : comps) {
        h1[i] = entropy_1d(s, i, row_hash[i]);
        contrast += h1[i];
      }
      for (const auto& [u, v] : local_edges) {
        contrast -= h1[u] + h1[v] - entropy_2d(s, u, v, row_hash[u], row_hash[v]);
      }
      contrast -= dw.log_abs_det();
    } else {
      std::vector<std::shared_ptr<const CholeskyFactor>> held;
      std::vector<const CholeskyFactor*> factors;
      std::vector<std::uint64_t> hashes;
      std::vector<int> index_of(s.m(), -1);
      for (int i : comps) {
        index_of[i] = static_cast<int>(factors.size());
        held.push_back(factor(s, i, row_hash[i]));
        factors.push_back(held.back().get());
        hashes.push_back(row_hash[i]);
      }
      const KgvJoint joint(factors, hashes, &cache);
      contrast = joint.total_mutual_information();
      for (const auto& [u, v] : local_edges) {
        contrast -= joint.mutual_information({index_of[u], index_of[v]});
      }
    }

    if (cfg.lambda_c > 0.0) {
      Matrix x = s.samples();
      x.rowwise() -= x.colwise().mean();
      const double n = static_cast<double>(x.rows());
      for (const auto& [u, v] : local_edges) {
        const double vu = x.col(u).squaredNorm() / n;
        const double vv = x.col(v).squaredNorm() / n;
        const double cov_uv = x.col(u).dot(x.col(v)) / n;
        const double rho2 = std::min(cov_uv * cov_uv / std::max(vu * vv, 1e-300), 1.0 - 1e-12);
        contrast -= cfg.lambda_c * 0.5 * std::log(1.0 - rho2);
      }
    }
    return contrast;
  }

  // Edge weights for the tree step. The full penalized objective is
  // edge-decomposable, so a maximum-weight spanning tree over
  // (MI_uv - lambda_C * pen_uv) minimizes contrast + lambda_C J^C over trees.
  Matrix penalized_weights(const Matrix& w) {
    const DemixingMatrix dw(w);
    const Dataset s = transform_sources(dw, data);
    const int m = static_cast<int>(s.m());
    std::vector<std::uint64_t> row_hash(m);
    for (int i = 0; i < m; ++i) row_hash[i] = hash_row(w.row(i));

    Matrix mi(m, m);
    mi.setZero();
    if (cfg.contrast == ContrastKind::kKde) {
      std::vector<double> h1(m);
      for (int i = 0; i < m; ++i) h1[i] = entropy_1d(s, i, row_hash[i]);
      for (int u = 0; u < m; ++u) {
        for (int v = u + 1; v < m; ++v) {
          mi(u, v) = mi(v, u) = h1[u] + h1[v] - entropy_2d(s, u, v, row_hash[u], row_hash[v]);
        }
      }
    } else {
      std::vector<std::shared_ptr<const CholeskyFactor>> held(m);
      std::vector<const CholeskyFactor*> factors(m);
      for (int i = 0; i < m; ++i) {
        held[i] = factor(s, i, row_hash[i]);
        factors[i] = held[i].get();
      }
      const KgvJoint joint(factors, row_hash, &cache);
      for (int u = 0; u < m; ++u) {
        for (int v = u + 1; v < m; ++v) {
          const CacheKey key{ContrastCache::kKgvPairMi, u, v, row_hash[u], row_hash[v]};
          double pair_mi;
          if (const auto hit = cache.get_scalar(key)) {
            pair_mi = *hit;
          } else {
            pair_mi = joint.mutual_information({u, v});
            cache.put_scalar(key, pair_mi);
          }
          mi(u, v) = mi(v, u) = pair_mi;
        }
      }
    }

    if (cfg.lambda_c > 0.0) {
      Matrix x = s.samples();
      x.rowwise() -= x.colwise().mean();
      const double n = static_cast<double>(x.rows());
      Vector var(m);
      for (int i = 0; i < m; ++i) var[i] = x.col(i).squaredNorm() / n;
      for (int u = 0; u < m; ++u) {
        for (int v = u + 1; v < m; ++v) {
          const double cov_uv = x.col(u).dot(x.col(v)) / n;
          const double rho2 =
              std::min(cov_uv * cov_uv / std::max(var[u] * var[v], 1e-300), 1.0 - 1e-12);
          const double pen = -0.5 * std::log(1.0 - rho2);
          mi(u, v) -= cfg.lambda_c * pen;
          mi(v, u) = mi(u, v);
        }
      }
    }
    return mi;
  }
};

inline Matrix initial_demixing(const Dataset& data, const CovarianceMatrix& cov,
                               const OptimizerConfig& cfg, bool* ica_ok) {
  switch (cfg.init_mode) {
    case InitMode::kIdentity:
      return project_unit_rows(Matrix::Identity(data.m(), data.m()), cov).matrix();
    case InitMode::kGaussianTree: {
      // closed-form Gaussian solution (Theorem 3 with R = I) under the
      // Gaussian Chow-Liu tree of the empirical covariance
      const int m = static_cast<int>(data.m());
      Matrix gauss_mi(m, m);
      gauss_mi.setZero();
      for (int u = 0; u < m; ++u) {
        for (int v = u + 1; v < m; ++v) {
          gauss_mi(u, v) = gauss_mi(v, u) = gaussian_pairwise_mi(cov.sigma, u, v);
        }
      }
      const SpanningTree tree = max_weight_spanning_tree(gauss_mi);
      Matrix corr = cov.sigma;
      for (int u = 0; u < m; ++u) {
        for (int v = 0; v < m; ++v) {
          corr(u, v) = cov.sigma(u, v) / std::sqrt(cov.sigma(u, u) * cov.sigma(v, v));
        }
      }
      // unit-diagonal member of C^T carrying the empirical edge correlations
      Matrix c = Matrix::Identity(m, m);
      std::vector<int> order{0};
      std::vector<char> seen(static_cast<std::size_t>(m), 0);
      seen[0] = 1;
      for (std::size_t head = 0; head < order.size(); ++head) {
        const int p = order[head];
        for (int u : tree.neighbors(p)) {
          if (seen[u]) continue;
          seen[u] = 1;
          const double rho = corr(u, p);
          for (int w : order) c(u, w) = c(w, u) = rho * c(p, w);
          c(u, u) = 1.0;
          order.push_back(u);
        }
      }
      const TreeStructuredCovariance tsc{std::move(c), tree};
      return theorem3_demixing(CovarianceMatrix::from_sigma(cov.sigma), tsc,
                               Matrix::Identity(m, m))
          .matrix();
    }
    case InitMode::kIca:
    default:
      return ica_initialize(data, cov, cfg.seed, ica_ok).matrix();
  }
}

}  // namespace detail

// The TCA algorithm: alternating minimization over (W, T). Each outer
// iteration takes one projected-gradient line-search step on W under the
// current tree, then re-selects the tree; tree switches are accepted only if
// the full penalized objective does not increase, so the accepted trace is
// nonincreasing.
inline FitResult alternate_minimize(const Dataset& data, const OptimizerConfig& cfg) {
  cfg.validate();
  const CovarianceMatrix cov = estimate_covariance(data);
  detail::Evaluator eval{data, cfg, {}};

  FitResult result;
  result.ica_converged = true;
  Matrix w = detail::initial_demixing(data, cov, cfg, &result.ica_converged);

  SpanningTree tree = max_weight_spanning_tree(eval.penalized_weights(w));
  double obj = eval.objective_at(w, tree);
  result.objective_trace.push_back(obj);

  const auto emit_trace = [&](int iter, double step, double objective_now,
                              const SpanningTree& tree_now) {
    if (!cfg.trace_stream) return;
    auto& os = *cfg.trace_stream;
    os << "{\"iter\":" << iter << ",\"objective\":" << objective_now << ",\"step\":" << step
       << ",\"tree\":[";
    bool first = true;
    for (const auto& [u, v] : tree_now.edges()) {
      if (!first) os << ',';
      first = false;
      os << '[' << u << ',' << v << ']';
    }
    os << "]}\n";
  };
  emit_trace(0, 0.0, obj, tree);

  std::vector<int> all_rows(static_cast<std::size_t>(data.m()));
  std::iota(all_rows.begin(), all_rows.end(), 0);

  for (int iter = 1; iter <= cfg.max_outer_iters; ++iter) {
    const SpanningTree tree_now = tree;
    const auto objective_fn = [&](const Matrix& candidate) {
      return eval.objective_or_inf(candidate, tree_now);
    };
    const Matrix grad = detail::gradient_fd_rows(objective_fn, w, cov, cfg.grad_eps, all_rows);
    const auto outcome =
        detail::backtracking_search(objective_fn, w, grad, all_rows, cov, cfg.line_search, obj);
    if (!outcome) {
      result.converged = true;  // no acceptable descent step: stationary
      break;
    }

    const double obj_prev = obj;
    w = outcome->w;
    obj = outcome->objective;

    // drop the previous iteration's perturbed entries; the weights pass below
    // repopulates the cache for the accepted point
    eval.cache.clear();

    // tree re-selection after the accepted step, compared on the full
    // penalized objective
    const SpanningTree candidate = max_weight_spanning_tree(eval.penalized_weights(w));
    if (!(candidate == tree)) {
      const double obj_candidate = eval.objective_or_inf(w, candidate);
      if (obj_candidate <= obj) {
        tree = candidate;
        obj = obj_candidate;
        ++result.tree_switch_count;
      }
    }

    result.objective_trace.push_back(obj);
    emit_trace(iter, outcome->step, obj, tree);
    if (obj_prev - obj < cfg.convergence_tol) {
      result.converged = true;
      break;
    }
  }

  result.w = w;
  result.tree = tree;
  return result;
}

// Subtree-separation score J(V) = I(s_V, s_{U_1}, .., s_{U_p}) - sum_i I(s_V, s_{U_i})
// where U_i are the connected components of the complement of V in the tree.
// Computed from cached Cholesky factors with groups entering as concatenated
// blocks; small scores certify approximate conditional independence given s_V.
inline double subtree_score(const std::vector<const CholeskyFactor*>& factors,
                            const SpanningTree& tree, const std::vector<int>& subtree_v,
                            const KgvConfig& cfg) {
  cfg.validate();
  const int m = tree.vertex_count();
  if (static_cast<int>(factors.size()) != m) {
    throw DimensionMismatch("factor list does not match tree size");
  }
  if (subtree_v.empty()) throw InvalidSubtree("subtree V is empty");
  std::set<int> v_set(subtree_v.begin(), subtree_v.end());
  for (int v : v_set) {
    if (v < 0 || v >= m) throw InvalidSubtree("subtree vertex out of range");
  }
  {
    std::vector<int> stack{*v_set.begin()};
    std::set<int> seen{*v_set.begin()};
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int nb : tree.neighbors(u)) {
        if (v_set.count(nb) && !seen.count(nb)) {
          seen.insert(nb);
          stack.push_back(nb);
        }
      }
    }
    if (seen.size() != v_set.size()) throw InvalidSubtree("subtree V is not connected in T");
  }

  // connected components of the complement of V
  std::vector<std::vector<int>> complements;
  std::vector<char> visited(static_cast<std::size_t>(m), 0);
  for (int v : v_set) visited[v] = 1;
  for (int start = 0; start < m; ++start) {
    if (visited[start]) continue;
    std::vector<int> comp;
    std::vector<int> stack{start};
    visited[start] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      comp.push_back(u);
      for (int nb : tree.neighbors(u)) {
        if (!visited[nb]) {
          visited[nb] = 1;
          stack.push_back(nb);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    complements.push_back(std::move(comp));
  }
  if (complements.size() <= 1) return 0.0;

  const KgvJoint joint(factors);
  const std::vector<int> v_sorted(v_set.begin(), v_set.end());
  // J(V) = -1/2 [ logdet S_all + (p-1) logdet S_V - sum_i logdet S_{V u U_i} ]
  std::vector<int> all(static_cast<std::size_t>(m));
  std::iota(all.begin(), all.end(), 0);
  double acc = joint.logdet_subset(all);
  acc += (static_cast<double>(complements.size()) - 1.0) * joint.logdet_subset(v_sorted);
  for (const auto& u_i : complements) {
    std::vector<int> merged = v_sorted;
    merged.insert(merged.end(), u_i.begin(), u_i.end());
    std::sort(merged.begin(), merged.end());
    acc -= joint.logdet_subset(merged);
  }
  return -0.5 * acc;
}

struct RefineReport {
  struct ScoreEntry {
    std::vector<int> subtree;
    double score = 0.0;
  };
  std::vector<ScoreEntry> scores;
  std::vector<std::vector<int>> targets;  // complement components selected for re-optimization
  int accepted = 0;
};

namespace detail {

inline std::vector<std::vector<int>> connected_subtrees_up_to(const SpanningTree& tree,
                                                              int max_size) {
  const int m = tree.vertex_count();
  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> out;
  std::vector<int> current;
  std::function<void(int)> grow = [&](int anchor) {
    std::vector<int> sorted = current;
    std::sort(sorted.begin(), sorted.end());
    if (seen.insert(sorted).second) out.push_back(sorted);
    if (static_cast<int>(current.size()) == max_size) return;
    std::set<int> candidates;
    for (int u : current) {
      for (int nb : tree.neighbors(u)) {
        if (std::find(current.begin(), current.end(), nb) == current.end()) candidates.insert(nb);
      }
    }
    for (int c : candidates) {
      if (c <= anchor) continue;  // only grow with vertices above the anchor
      current.push_back(c);
      grow(anchor);
      current.pop_back();
    }
  };
  for (int v = 0; v < m; ++v) {
    current = {v};
    grow(v);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  return out;
}

}  // namespace detail

// Post-pass over a completed fit (Section-9 style local optimization): score
// all small connected subtrees V; for the complement components U flagged by
// high-score V's, re-optimize only the rows of W in U against the contrast
// restricted to U and its tree neighbors. Candidate updates are kept only
// when the full penalized objective decreases, so the objective never
// increases.
inline FitResult refine_subtrees(const Dataset& data, const FitResult& fit,
                                 const OptimizerConfig& cfg, RefineReport* report = nullptr) {
  cfg.validate();
  const CovarianceMatrix cov = estimate_covariance(data);
  const int m = static_cast<int>(data.m());
  detail::Evaluator eval{data, cfg, {}};
  const SpanningTree& tree = fit.tree;

  // KGV factors of the current sources; the separation score is KGV-based
  // regardless of the fit contrast
  const Dataset s = transform_sources(DemixingMatrix(fit.w), data);
  std::vector<std::shared_ptr<const CholeskyFactor>> held(static_cast<std::size_t>(m));
  std::vector<const CholeskyFactor*> factors(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    held[i] = std::make_shared<const CholeskyFactor>(incomplete_cholesky(s.component(i), cfg.kgv));
    factors[i] = held[i].get();
  }

  const int cap = m > 12 ? std::min(cfg.refine_max_subtree, 3) : cfg.refine_max_subtree;
  std::vector<std::pair<std::vector<int>, double>> scored;
  double best_score = -1.0;
  for (const auto& v : detail::connected_subtrees_up_to(tree, cap)) {
    if (static_cast<int>(v.size()) == m) continue;  // empty complement
    const double score = subtree_score(factors, tree, v, cfg.kgv);
    scored.emplace_back(v, score);
    best_score = std::max(best_score, score);
    if (report) report->scores.push_back({v, score});
  }

  // targets: complement components of flagged subtrees
  std::set<std::vector<int>> target_set;
  for (const auto& [v, score] : scored) {
    const bool flagged = score > cfg.refine_score_threshold ||
                         (best_score <= cfg.refine_score_threshold && score == best_score &&
                          score > 1e-4);
    if (!flagged) continue;
    std::vector<char> visited(static_cast<std::size_t>(m), 0);
    for (int u : v) visited[u] = 1;
    for (int start = 0; start < m; ++start) {
      if (visited[start]) continue;
      std::vector<int> comp;
      std::vector<int> stack{start};
      visited[start] = 1;
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        comp.push_back(u);
        for (int nb : tree.neighbors(u)) {
          if (!visited[nb]) {
            visited[nb] = 1;
            stack.push_back(nb);
          }
        }
      }
      std::sort(comp.begin(), comp.end());
      target_set.insert(std::move(comp));
    }
  }

  FitResult out = fit;
  double full_obj = eval.objective_at(out.w, tree);

  for (const auto& target : target_set) {
    if (report) report->targets.push_back(target);
    // local scope: the target subtree plus its neighbors in T
    std::set<int> scope_set(target.begin(), target.end());
    for (int u : target) {
      for (int nb : tree.neighbors(u)) scope_set.insert(nb);
    }
    const std::vector<int> scope(scope_set.begin(), scope_set.end());
    std::vector<std::pair<int, int>> local_edges;
    for (const auto& [u, v] : tree.edges()) {
      if (scope_set.count(u) && scope_set.count(v)) local_edges.emplace_back(u, v);
    }

    const auto local_fn = [&](const Matrix& candidate) -> double {
      try {
        return eval.local_objective(candidate, scope, local_edges);
      } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
      }
    };

    Matrix w_local = out.w;
    double local_obj = local_fn(w_local);
    bool moved = false;
    for (int step = 0; step < cfg.refine_steps; ++step) {
      const Matrix grad = detail::gradient_fd_rows(local_fn, w_local, cov, cfg.grad_eps, target);
      const auto outcome = detail::backtracking_search(local_fn, w_local, grad, target, cov,
                                                       cfg.line_search, local_obj);
      if (!outcome) break;
      w_local = outcome->w;
      local_obj = outcome->objective;
      moved = true;
    }
    if (!moved) continue;

    const double full_candidate = eval.objective_or_inf(w_local, tree);
    if (full_candidate < full_obj) {
      out.w = w_local;
      full_obj = full_candidate;
      if (report) ++report->accepted;
    }
  }

  if (!out.objective_trace.empty() && full_obj < out.objective_trace.back()) {
    out.objective_trace.push_back(full_obj);
  }
  return out;
}

}  // namespace tca
