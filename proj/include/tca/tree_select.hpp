#pragma once

#include <algorithm>
#include <numeric>
#include <tuple>
#include <vector>

#include "tca/core.hpp"
#include "tca/errors.hpp"

namespace tca {

// Chow-Liu inner loop: maximum-weight spanning tree over symmetric pairwise
// weights. Kruskal with edges ordered by (weight desc, (u,v) lexicographic asc)
// so ties resolve deterministically. Negative weights are legal; the result is
// always a spanning tree, never a forest.
inline SpanningTree max_weight_spanning_tree(const Matrix& weights) {
  const int m = static_cast<int>(weights.rows());
  if (weights.rows() != weights.cols() || m < 2) {
    throw DimensionMismatch("weight matrix must be square, m >= 2");
  }
  if (!weights.allFinite()) throw Error("weight matrix has non-finite entries");

  struct Edge {
    double w;
    int u, v;
  };
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
  for (int u = 0; u < m; ++u) {
    for (int v = u + 1; v < m; ++v) {
      edges.push_back({0.5 * (weights(u, v) + weights(v, u)), u, v});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.w != b.w) return a.w > b.w;
    return std::tie(a.u, a.v) < std::tie(b.u, b.v);
  });

  std::vector<int> parent(m);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };

  std::vector<std::pair<int, int>> chosen;
  chosen.reserve(m - 1);
  for (const Edge& e : edges) {
    const int ru = find(e.u), rv = find(e.v);
    if (ru == rv) continue;
    parent[ru] = rv;
    chosen.emplace_back(e.u, e.v);
    if (static_cast<int>(chosen.size()) == m - 1) break;
  }
  return SpanningTree(m, std::move(chosen));
}

inline double tree_edge_weight_sum(const Matrix& weights, const SpanningTree& tree) {
  double s = 0.0;
  for (const auto& [u, v] : tree.edges()) s += 0.5 * (weights(u, v) + weights(v, u));
  return s;
}

// T-mutual information given a total mutual information and pairwise weights:
// I^T = I(x_1..x_m) - sum of tree-edge weights.
inline double t_mutual_information_decomposition(double total_mi, const Matrix& weights,
                                                 const SpanningTree& tree) {
  if (weights.rows() != tree.vertex_count()) {
    throw DimensionMismatch("weight matrix does not match tree size");
  }
  return total_mi - tree_edge_weight_sum(weights, tree);
}

}  // namespace tca
