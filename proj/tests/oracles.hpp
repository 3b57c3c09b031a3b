#pragma once

// Test-only reference implementations, kept independent of the library code
// paths they check.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "tca/core.hpp"
#include "tca/kde.hpp"

namespace oracles {

using tca::Matrix;
using tca::Vector;

// all m^(m-2) labeled trees via exhaustive Prufer sequences
inline std::vector<tca::SpanningTree> all_labeled_trees(int m) {
  std::vector<tca::SpanningTree> out;
  if (m == 2) {
    out.emplace_back(2, std::vector<std::pair<int, int>>{{0, 1}});
    return out;
  }
  const int len = m - 2;
  std::vector<int> seq(len, 0);
  while (true) {
    // decode
    std::vector<int> degree(m, 1);
    for (int p : seq) ++degree[p];
    std::vector<std::pair<int, int>> edges;
    std::vector<char> used(m, 0);
    for (int p : seq) {
      for (int leaf = 0; leaf < m; ++leaf) {
        if (degree[leaf] == 1 && !used[leaf]) {
          edges.emplace_back(leaf, p);
          used[leaf] = 1;
          --degree[p];
          break;
        }
      }
    }
    int first = -1;
    for (int v = 0; v < m; ++v) {
      if (!used[v] && degree[v] == 1) {
        if (first < 0) {
          first = v;
        } else {
          edges.emplace_back(first, v);
        }
      }
    }
    out.emplace_back(m, std::move(edges));
    // next sequence
    int pos = len - 1;
    while (pos >= 0 && seq[pos] == m - 1) {
      seq[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++seq[pos];
  }
  return out;
}

inline double tree_weight(const Matrix& w, const tca::SpanningTree& t) {
  double s = 0.0;
  for (const auto& [u, v] : t.edges()) s += w(u, v);
  return s;
}

// direct O(N*M) evaluation of the linearly binned kernel density estimate:
// every sample contributes its two binning-node kernels at each grid point
inline Vector direct_binned_kde_1d(const Vector& samples, const tca::GridSpec& grid,
                                   double bandwidth) {
  const int m = grid.points;
  Vector out = Vector::Zero(m);
  const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    double t = (samples[i] - grid.lo) / grid.step;
    int j = std::clamp(static_cast<int>(std::floor(t)), 0, m - 2);
    const double frac = std::clamp(t - j, 0.0, 1.0);
    for (int g = 0; g < m; ++g) {
      const double d0 = (g - j) * grid.step;
      const double d1 = (g - j - 1) * grid.step;
      out[g] += (1.0 - frac) * std::exp(-d0 * d0 * inv2h2) + frac * std::exp(-d1 * d1 * inv2h2);
    }
  }
  return out / (static_cast<double>(samples.size()) * bandwidth * std::sqrt(2.0 * M_PI));
}

inline Matrix direct_binned_kde_2d(const Vector& su, const Vector& sv, const tca::GridSpec& gu,
                                   const tca::GridSpec& gv, double bandwidth) {
  const int m = gu.points;
  Matrix out = Matrix::Zero(m, m);
  const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
  for (Eigen::Index i = 0; i < su.size(); ++i) {
    const double tu = (su[i] - gu.lo) / gu.step;
    const double tv = (sv[i] - gv.lo) / gv.step;
    const int ju = std::clamp(static_cast<int>(std::floor(tu)), 0, m - 2);
    const int jv = std::clamp(static_cast<int>(std::floor(tv)), 0, m - 2);
    const double fu = std::clamp(tu - ju, 0.0, 1.0);
    const double fv = std::clamp(tv - jv, 0.0, 1.0);
    const double wt[2] = {1.0 - fu, fu};
    const double wv[2] = {1.0 - fv, fv};
    for (int a = 0; a < m; ++a) {
      double ku[2];
      ku[0] = std::exp(-(a - ju) * (a - ju) * gu.step * gu.step * inv2h2);
      ku[1] = std::exp(-(a - ju - 1) * (a - ju - 1) * gu.step * gu.step * inv2h2);
      for (int b = 0; b < m; ++b) {
        double kv[2];
        kv[0] = std::exp(-(b - jv) * (b - jv) * gv.step * gv.step * inv2h2);
        kv[1] = std::exp(-(b - jv - 1) * (b - jv - 1) * gv.step * gv.step * inv2h2);
        out(a, b) += (wt[0] * ku[0] + wt[1] * ku[1]) * (wv[0] * kv[0] + wv[1] * kv[1]);
      }
    }
  }
  return out / (static_cast<double>(su.size()) * bandwidth * bandwidth * 2.0 * M_PI);
}

// dense KGV reference: exact centered Gram matrices, blockwise
// M_ij = (K_i + kappa I)^{-1} K_i K_j (K_j + kappa I)^{-1}, I^K = -1/2 logdet M
inline double dense_kgv_mi(const std::vector<Vector>& components, double sigma, double kappa_eff) {
  const int m = static_cast<int>(components.size());
  const Eigen::Index n = components.front().size();
  std::vector<Matrix> grams;
  const Matrix h = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  for (const auto& x : components) {
    Matrix k(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b < n; ++b) {
        const double d = x[a] - x[b];
        k(a, b) = std::exp(-d * d / (2.0 * sigma * sigma));
      }
    }
    grams.push_back(h * k * h);
  }
  Matrix big = Matrix::Identity(m * n, m * n);
  std::vector<Matrix> reg_inv;
  for (const auto& k : grams) {
    reg_inv.push_back((k + kappa_eff * Matrix::Identity(n, n)).inverse());
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      big.block(i * n, j * n, n, n) = reg_inv[i] * grams[i] * grams[j] * reg_inv[j];
    }
  }
  const Eigen::PartialPivLU<Matrix> lu(big);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < big.rows(); ++i) {
    logdet += std::log(std::abs(lu.matrixLU()(i, i)));
  }
  return -0.5 * logdet;
}

// exact treewidth by dynamic programming over vertex subsets (m <= ~16)
inline int exact_treewidth(int m, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<char>> adj(m, std::vector<char>(m, 0));
  for (const auto& [u, v] : edges) adj[u][v] = adj[v][u] = 1;
  const int full = 1 << m;
  // back-degree of v eliminated after the set S: neighbors reachable through S
  auto elim_degree = [&](int v, int s) {
    int seen = 0, stack_bits = 0, degree_set = 0;
    stack_bits = 1 << v;
    seen = 1 << v;
    while (stack_bits) {
      const int u = __builtin_ctz(stack_bits);
      stack_bits &= stack_bits - 1;
      for (int w = 0; w < m; ++w) {
        if (!adj[u][w] || (seen >> w) & 1) continue;
        seen |= 1 << w;
        if ((s >> w) & 1) {
          stack_bits |= 1 << w;  // pass through eliminated vertices
        } else if (w != v) {
          degree_set |= 1 << w;
        }
      }
    }
    return __builtin_popcount(degree_set);
  };
  std::vector<int> dp(full, m);
  dp[0] = -1;
  for (int s = 1; s < full; ++s) {
    int best = m;
    for (int v = 0; v < m; ++v) {
      if (!((s >> v) & 1)) continue;
      const int prev = s ^ (1 << v);
      best = std::min(best, std::max(dp[prev], elim_degree(v, prev)));
    }
    dp[s] = best;
  }
  return dp[full - 1];
}

// brute-force maximum common connected subtree size under isomorphism
namespace {

inline std::string ahu_canonical(int root, int parent, const std::vector<std::vector<int>>& adj) {
  std::vector<std::string> child_codes;
  for (int nb : adj[root]) {
    if (nb != parent) child_codes.push_back(ahu_canonical(nb, root, adj));
  }
  std::sort(child_codes.begin(), child_codes.end());
  std::string code = "(";
  for (const auto& c : child_codes) code += c;
  code += ")";
  return code;
}

inline std::string canonical_tree_code(const std::vector<int>& vertices,
                                       const std::vector<std::vector<int>>& adj_full) {
  // induced adjacency (vertices of a connected subtree)
  std::map<int, int> index;
  for (std::size_t i = 0; i < vertices.size(); ++i) index[vertices[i]] = static_cast<int>(i);
  std::vector<std::vector<int>> adj(vertices.size());
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    for (int nb : adj_full[vertices[i]]) {
      const auto it = index.find(nb);
      if (it != index.end()) adj[i].push_back(it->second);
    }
  }
  std::string best;
  for (std::size_t r = 0; r < vertices.size(); ++r) {
    const std::string code = ahu_canonical(static_cast<int>(r), -1, adj);
    if (best.empty() || code < best) best = code;
  }
  return best;
}

}  // namespace

inline std::vector<std::vector<int>> connected_subsets(const tca::SpanningTree& tree) {
  const int m = tree.vertex_count();
  std::vector<std::vector<int>> out;
  for (int mask = 1; mask < (1 << m); ++mask) {
    std::vector<int> verts;
    for (int v = 0; v < m; ++v) {
      if ((mask >> v) & 1) verts.push_back(v);
    }
    // connectivity check by BFS within the mask
    std::set<int> seen{verts[0]};
    std::vector<int> stack{verts[0]};
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int nb : tree.neighbors(u)) {
        if (((mask >> nb) & 1) && !seen.count(nb)) {
          seen.insert(nb);
          stack.push_back(nb);
        }
      }
    }
    if (static_cast<int>(seen.size()) == static_cast<int>(verts.size())) out.push_back(verts);
  }
  return out;
}

inline int brute_force_common_subtree(const tca::SpanningTree& t1, const tca::SpanningTree& t2) {
  const int m1 = t1.vertex_count();
  const int m2 = t2.vertex_count();
  std::vector<std::vector<int>> adj1(m1), adj2(m2);
  for (const auto& [u, v] : t1.edges()) {
    adj1[u].push_back(v);
    adj1[v].push_back(u);
  }
  for (const auto& [u, v] : t2.edges()) {
    adj2[u].push_back(v);
    adj2[v].push_back(u);
  }
  std::map<std::size_t, std::set<std::string>> codes2;
  for (const auto& verts : connected_subsets(t2)) {
    codes2[verts.size()].insert(canonical_tree_code(verts, adj2));
  }
  int best = 0;
  for (const auto& verts : connected_subsets(t1)) {
    if (static_cast<int>(verts.size()) <= best) continue;
    const auto it = codes2.find(verts.size());
    if (it == codes2.end()) continue;
    if (it->second.count(canonical_tree_code(verts, adj1))) {
      best = static_cast<int>(verts.size());
    }
  }
  return best;
}

}  // namespace oracles
