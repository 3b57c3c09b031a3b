#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "tca/core.hpp"
#include "tca/errors.hpp"

namespace tca {

namespace detail {

// max-weight assignment on a rectangular nonnegative matrix, unmatched rows
// and columns allowed (padding with zero-weight dummies); Hungarian algorithm
inline double max_weight_assignment(const Matrix& weight) {
  const int rows = static_cast<int>(weight.rows());
  const int cols = static_cast<int>(weight.cols());
  if (rows == 0 || cols == 0) return 0.0;
  const int n = std::max(rows, cols);
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<std::vector<double>> a(n + 1, std::vector<double>(n + 1, 0.0));
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) a[i + 1][j + 1] = -weight(i, j);
  }
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[i0][j] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total -= a[p[j]][j];
  return total;
}

}  // namespace detail

// Amari-style discrepancy between demixing matrices, invariant under
// permutation and row scaling; in [0, 100], zero iff A = P D.
inline double amari_distance(const Matrix& w_hat, const Matrix& w_true) {
  if (w_hat.rows() != w_hat.cols() || w_hat.rows() != w_true.rows() ||
      w_true.rows() != w_true.cols()) {
    throw DimensionMismatch("amari_distance requires square matrices of equal size");
  }
  const Eigen::Index m = w_hat.rows();
  Eigen::FullPivLU<Matrix> lu(w_true);
  if (!lu.isInvertible()) throw SingularMatrix("reference demixing matrix is singular");
  if (!Eigen::FullPivLU<Matrix>(w_hat).isInvertible()) {
    throw SingularMatrix("estimated demixing matrix is singular");
  }
  const Matrix a = (w_hat * lu.inverse()).cwiseAbs();

  double acc = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    acc += a.row(i).sum() / a.row(i).maxCoeff();
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    acc += a.col(j).sum() / a.col(j).maxCoeff();
  }
  const double md = static_cast<double>(m);
  return 100.0 / (2.0 * md * (md - 1.0)) * (acc - 2.0 * md);
}

// Quotient out the leaf-mixing invariance: every leaf row is decorrelated
// from its parent row under sigma and rescaled to unit variance. All rows are
// first scaled to unit sigma-variance (the scaling invariance), non-leaf
// directions are untouched.
inline Matrix leaf_normalize(const Matrix& w, const SpanningTree& tree, const Matrix& sigma) {
  if (w.rows() != tree.vertex_count() || sigma.rows() != w.rows()) {
    throw DimensionMismatch("leaf_normalize dimension mismatch");
  }
  Matrix out = w;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double q = out.row(i) * sigma * out.row(i).transpose();
    if (!(q > 1e-300)) throw SingularMatrix("row with zero sigma-norm");
    out.row(i) /= std::sqrt(q);
  }
  for (int c = 0; c < tree.vertex_count(); ++c) {
    if (tree.degree(c) != 1) continue;
    const int p = tree.neighbors(c).front();
    const double cov_cp = out.row(c) * sigma * out.row(p).transpose();
    const double var_p = out.row(p) * sigma * out.row(p).transpose();
    out.row(c) -= (cov_cp / var_p) * out.row(p);
    const double q = out.row(c) * sigma * out.row(c).transpose();
    if (!(q > 1e-300)) throw SingularMatrix("leaf row collapsed onto its parent");
    out.row(c) /= std::sqrt(q);
  }
  return out;
}

// Demixing error e_W: Amari distance after quotienting the leaf-mixing
// invariance on both matrices under their own trees.
inline double demixing_error(const Matrix& w_hat, const SpanningTree& tree_hat,
                             const Matrix& w_true, const SpanningTree& tree_true,
                             const Matrix& sigma) {
  return amari_distance(leaf_normalize(w_hat, tree_hat, sigma),
                        leaf_normalize(w_true, tree_true, sigma));
}

struct TreeErrorReport {
  int s_t = 0;      // largest common connected subtree size
  double e_t = 0.0;  // 1 - (s_t - 1)/(m - 1)
};

namespace detail {

// rooted-pair DP for the maximum common connected subtree under isomorphism:
// state (u, parent(u)) x (v, parent(v)); children subtrees are paired with a
// maximum-weight bipartite matching
class CommonSubtreeDp {
public:
  CommonSubtreeDp(const SpanningTree& t1, const SpanningTree& t2) : t1_(t1), t2_(t2) {
    m1_ = t1.vertex_count();
    m2_ = t2.vertex_count();
    memo_.assign(static_cast<std::size_t>(m1_) * (m1_ + 1) * m2_ * (m2_ + 1), -1);
  }

  int best() {
    int out = 0;
    for (int u = 0; u < m1_; ++u) {
      for (int v = 0; v < m2_; ++v) out = std::max(out, solve(u, -1, v, -1));
    }
    return out;
  }

private:
  int solve(int u, int pu, int v, int pv) {
    const std::size_t key = index(u, pu, v, pv);
    if (memo_[key] >= 0) return memo_[key];
    std::vector<int> cu, cv;
    for (int nb : t1_.neighbors(u)) {
      if (nb != pu) cu.push_back(nb);
    }
    for (int nb : t2_.neighbors(v)) {
      if (nb != pv) cv.push_back(nb);
    }
    int out = 1;
    if (!cu.empty() && !cv.empty()) {
      Matrix weight(cu.size(), cv.size());
      for (std::size_t i = 0; i < cu.size(); ++i) {
        for (std::size_t j = 0; j < cv.size(); ++j) {
          weight(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              solve(cu[i], u, cv[j], v);
        }
      }
      out += static_cast<int>(std::lround(max_weight_assignment(weight)));
    }
    memo_[key] = out;
    return out;
  }

  std::size_t index(int u, int pu, int v, int pv) const {
    std::size_t k = static_cast<std::size_t>(u);
    k = k * (m1_ + 1) + (pu + 1);
    k = k * m2_ + v;
    k = k * (m2_ + 1) + (pv + 1);
    return k;
  }

  const SpanningTree& t1_;
  const SpanningTree& t2_;
  int m1_ = 0;
  int m2_ = 0;
  std::vector<int> memo_;
};

}  // namespace detail

// Tree error e_T = 1 - (s_T - 1)/(m - 1), with s_T the size of the largest
// connected subtree of one tree isomorphic to a connected subtree of the
// other (structure only, vertex labels ignored).
inline TreeErrorReport tree_error(const SpanningTree& t1, const SpanningTree& t2) {
  if (t1.vertex_count() != t2.vertex_count()) {
    throw DimensionMismatch("tree_error requires trees on the same vertex count");
  }
  detail::CommonSubtreeDp dp(t1, t2);
  TreeErrorReport rep;
  rep.s_t = dp.best();
  rep.e_t = 1.0 - static_cast<double>(rep.s_t - 1) / static_cast<double>(t1.vertex_count() - 1);
  return rep;
}

struct MetricRow {
  int m = 0;
  std::string contrast;
  int replicate = 0;
  double e_w = 0.0;
  double e_t = 0.0;
  double seconds = 0.0;
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "m,contrast,replicate,e_w,e_t,seconds\n";
  for (const auto& r : rows) {
    out << r.m << ',' << r.contrast << ',' << r.replicate << ',' << detail::format_double(r.e_w)
        << ',' << detail::format_double(r.e_t) << ',' << detail::format_double(r.seconds) << '\n';
  }
}

}  // namespace tca
