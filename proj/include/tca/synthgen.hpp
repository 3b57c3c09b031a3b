#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tca/core.hpp"
#include "tca/density.hpp"
#include "tca/errors.hpp"
#include "tca/random.hpp"

namespace tca {

struct GeneratorSpec {
  int m = 4;
  int n = 1000;
  int treewidth = 1;
  int catalog = 0;  // 0 = random template per edge, 1..4 = pin one edge template
  std::uint64_t seed = 0;

  void validate() const {
    if (m < 2) throw Error("generator requires m >= 2");
    if (n < 2) throw Error("generator requires n >= 2");
    if (treewidth < 1 || treewidth > m - 1) {
      throw InvalidTreewidth("treewidth must satisfy 1 <= tau <= m-1");
    }
  }
};

// Uniform random labeled tree via Prufer-sequence decoding.
inline SpanningTree random_spanning_tree(int m, Rng& rng) {
  if (m < 2) throw Error("random_spanning_tree requires m >= 2");
  if (m == 2) return SpanningTree(2, {{0, 1}});
  std::vector<int> prufer(m - 2);
  for (auto& p : prufer) p = rng.uniform_int(m);
  std::vector<int> degree(m, 1);
  for (int p : prufer) ++degree[p];
  std::vector<std::pair<int, int>> edges;
  edges.reserve(m - 1);
  std::vector<char> used(m, 0);
  for (int p : prufer) {
    for (int leaf = 0; leaf < m; ++leaf) {
      if (degree[leaf] == 1 && !used[leaf]) {
        edges.emplace_back(leaf, p);
        used[leaf] = 1;
        --degree[p];
        break;
      }
    }
  }
  int a = -1;
  for (int v = 0; v < m; ++v) {
    if (!used[v] && degree[v] == 1) {
      if (a < 0) {
        a = v;
      } else {
        edges.emplace_back(a, v);
      }
    }
  }
  return SpanningTree(m, std::move(edges));
}

// Standard-normal entries, redrawn until the condition number is below 100.
inline Matrix random_mixing_matrix(int m, Rng& rng) {
  if (m < 2) throw Error("random_mixing_matrix requires m >= 2");
  while (true) {
    Matrix a(m, m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) a(i, j) = rng.normal();
    }
    Eigen::JacobiSVD<Matrix> svd(a);
    const double cond = svd.singularValues()(0) / svd.singularValues()(m - 1);
    if (std::isfinite(cond) && cond < 100.0) return a;
  }
}

// Conditional density of one vertex given its (possibly empty) parent set:
// softmax-gated linear-Gaussian experts. Zero parents makes this a plain
// univariate Gaussian mixture.
struct VertexConditional {
  Matrix gate_slope;     // K x p
  Vector gate_bias;      // K
  Matrix expert_slope;   // K x p
  Vector expert_intercept;
  Vector expert_variance;

  int k() const { return static_cast<int>(gate_bias.size()); }
  int parent_count() const { return static_cast<int>(gate_slope.cols()); }

  Vector gate_log_probs(const Vector& parents) const {
    Vector scores = gate_bias;
    if (parents.size() > 0) scores += gate_slope * parents;
    const double lse = detail::log_sum_exp(scores);
    return scores.array() - lse;
  }

  double sample(const Vector& parents, Rng& rng) const {
    const Vector logp = gate_log_probs(parents);
    double r = rng.uniform();
    int j = 0;
    for (; j < k() - 1; ++j) {
      r -= std::exp(logp[j]);
      if (r <= 0.0) break;
    }
    double mean = expert_intercept[j];
    if (parents.size() > 0) mean += expert_slope.row(j).dot(parents);
    return mean + std::sqrt(expert_variance[j]) * rng.normal();
  }

  double log_pdf(double value, const Vector& parents) const {
    Vector terms = gate_log_probs(parents);
    for (int j = 0; j < k(); ++j) {
      double mean = expert_intercept[j];
      if (parents.size() > 0) mean += expert_slope.row(j).dot(parents);
      terms[j] += detail::log_normal_pdf(value, mean, expert_variance[j]);
    }
    return detail::log_sum_exp(terms);
  }
};

// Directed graphical model in ancestral order with an affine standardization
// recorded so the density of the delivered (standardized) sources is exact.
struct AncestralModel {
  int m = 0;
  std::vector<int> order;                       // ancestral order over vertex ids
  std::vector<std::vector<int>> parents;        // per vertex id
  std::vector<VertexConditional> conditionals;  // per vertex id
  Vector shift;                                 // s_std = (s_raw - shift) / scale
  Vector scale;

  Vector sample_raw(Rng& rng) const {
    Vector s(m);
    for (int u : order) {
      Vector pv(parents[u].size());
      for (std::size_t i = 0; i < parents[u].size(); ++i) pv[i] = s[parents[u][i]];
      s[u] = conditionals[u].sample(pv, rng);
    }
    return s;
  }

  double log_pdf_raw(const Vector& s) const {
    double out = 0.0;
    for (int u : order) {
      Vector pv(parents[u].size());
      for (std::size_t i = 0; i < parents[u].size(); ++i) pv[i] = s[parents[u][i]];
      out += conditionals[u].log_pdf(s[u], pv);
    }
    return out;
  }

  // density of the standardized sources z = (s - shift)/scale
  double log_pdf_standardized(const Vector& z) const {
    const Vector raw = shift + scale.cwiseProduct(z);
    return log_pdf_raw(raw) + scale.array().log().sum();
  }
};

namespace catalog {

// Root marginals, all clearly non-Gaussian (bimodal, skewed or heavy-tailed).
inline VertexConditional root_template(int id) {
  VertexConditional c;
  auto fill = [&](std::initializer_list<double> w, std::initializer_list<double> mu,
                  std::initializer_list<double> var) {
    const int k = static_cast<int>(w.size());
    c.gate_slope.resize(k, 0);
    c.expert_slope.resize(k, 0);
    c.gate_bias.resize(k);
    c.expert_intercept.resize(k);
    c.expert_variance.resize(k);
    int i = 0;
    for (double x : w) c.gate_bias[i++] = std::log(x);
    i = 0;
    for (double x : mu) c.expert_intercept[i++] = x;
    i = 0;
    for (double x : var) c.expert_variance[i++] = x;
  };
  switch (id % 4) {
    case 0:
      fill({0.5, 0.5}, {-1.0, 1.0}, {0.15, 0.15});  // bimodal
      break;
    case 1:
      fill({0.7, 0.3}, {-0.45, 1.05}, {0.12, 0.5});  // skewed
      break;
    case 2:
      fill({0.85, 0.15}, {0.0, 0.0}, {0.12, 2.2});  // heavy-tailed
      break;
    default:
      fill({0.4, 0.2, 0.4}, {-1.2, 0.0, 1.2}, {0.1, 0.3, 0.1});  // trimodal
      break;
  }
  return c;
}

constexpr int kEdgeTemplateCount = 4;

// One-parent conditionals: bimodal-slope, heteroscedastic, skewed,
// heavy-tailed mixture. All non-Gaussian (validated by the build checks).
inline VertexConditional edge_template(int id) {
  VertexConditional c;
  auto fill = [&](std::initializer_list<double> gate_a, std::initializer_list<double> gate_b,
                  std::initializer_list<double> slope, std::initializer_list<double> intercept,
                  std::initializer_list<double> var) {
    const int k = static_cast<int>(gate_b.size());
    c.gate_slope.resize(k, 1);
    c.gate_bias.resize(k);
    c.expert_slope.resize(k, 1);
    c.expert_intercept.resize(k);
    c.expert_variance.resize(k);
    int i = 0;
    for (double x : gate_a) c.gate_slope(i++, 0) = x;
    i = 0;
    for (double x : gate_b) c.gate_bias[i++] = x;
    i = 0;
    for (double x : slope) c.expert_slope(i++, 0) = x;
    i = 0;
    for (double x : intercept) c.expert_intercept[i++] = x;
    i = 0;
    for (double x : var) c.expert_variance[i++] = x;
  };
  switch (id % kEdgeTemplateCount) {
    case 0:  // bimodal-slope
      fill({0.0, 0.0}, {0.0, 0.0}, {0.8, -0.8}, {0.9, -0.9}, {0.08, 0.08});
      break;
    case 1:  // heteroscedastic
      fill({3.0, 0.0}, {0.0, 0.0}, {0.6, 0.6}, {0.0, 0.0}, {0.04, 0.8});
      break;
    case 2:  // skewed
      fill({0.0, 0.0}, {1.0986122886681098, 0.0}, {0.7, 0.7}, {-0.35, 1.1}, {0.07, 0.4});
      break;
    default:  // heavy-tailed mixture
      fill({0.0, 0.0}, {2.1972245773362196, 0.0}, {0.75, 0.75}, {0.0, 0.0}, {0.06, 1.8});
      break;
  }
  return c;
}

inline const char* version() { return "tca-catalog-1"; }

}  // namespace catalog

struct TcaInstance {
  Dataset x;
  Matrix mixing;   // A with x = A s
  Matrix w_true;   // A^{-1}
  SpanningTree tree;
  Matrix sources;  // standardized sources, one row per sample
  AncestralModel model;

  // exact generator density of an observation row
  double generator_log_pdf(const Vector& x_row) const {
    double logdet = 0.0;
    const Eigen::PartialPivLU<Matrix> lu(w_true);
    for (Eigen::Index i = 0; i < w_true.rows(); ++i) {
      logdet += std::log(std::abs(lu.matrixLU()(i, i)));
    }
    return model.log_pdf_standardized(w_true * x_row) + logdet;
  }
};

namespace detail {

// draw all raw source rows, then fold the batch standardization into the
// recorded model so the delivered samples follow the recorded density exactly
inline Matrix sample_and_standardize(AncestralModel& model, int n, Rng& rng) {
  Matrix raw(n, model.m);
  for (int i = 0; i < n; ++i) raw.row(i) = model.sample_raw(rng).transpose();
  model.shift = raw.colwise().mean();
  model.scale.resize(model.m);
  for (int j = 0; j < model.m; ++j) {
    const double var = (raw.col(j).array() - model.shift[j]).square().mean();
    model.scale[j] = std::sqrt(std::max(var, 1e-12));
  }
  Matrix std_rows(n, model.m);
  for (int j = 0; j < model.m; ++j) {
    std_rows.col(j) = (raw.col(j).array() - model.shift[j]) / model.scale[j];
  }
  return std_rows;
}

}  // namespace detail

// Tree-structured (treewidth 1) benchmark instance: random tree, catalog
// conditionals, standardized sources, observations rotated by a random
// mixing matrix.
inline TcaInstance sample_tca_instance(const GeneratorSpec& spec) {
  spec.validate();
  if (spec.treewidth != 1) throw InvalidTreewidth("sample_tca_instance requires treewidth 1");
  Rng rng(spec.seed);

  const SpanningTree tree = random_spanning_tree(spec.m, rng);
  const int root = rng.uniform_int(spec.m);
  const DirectedTree dtree = root_tree(tree, root);

  AncestralModel model;
  model.m = spec.m;
  model.order = dtree.order;
  model.parents.assign(spec.m, {});
  model.conditionals.resize(spec.m);
  for (int u = 0; u < spec.m; ++u) {
    if (u == root) {
      model.conditionals[u] = catalog::root_template(rng.uniform_int(4));
    } else {
      model.parents[u] = {dtree.parent[u]};
      const int tpl = spec.catalog > 0 ? (spec.catalog - 1)
                                       : rng.uniform_int(catalog::kEdgeTemplateCount);
      model.conditionals[u] = catalog::edge_template(tpl);
    }
  }

  Matrix sources = detail::sample_and_standardize(model, spec.n, rng);
  const Matrix mixing = random_mixing_matrix(spec.m, rng);
  Matrix x = sources * mixing.transpose();

  TcaInstance inst{Dataset(std::move(x)), mixing, mixing.inverse(), tree, std::move(sources),
                   std::move(model)};
  return inst;
}

struct TreewidthInstance {
  Dataset x;
  Matrix mixing;
  Matrix w_true;
  int tau = 1;
  Matrix sources;
  AncestralModel model;

  double generator_log_pdf(const Vector& x_row) const {
    double logdet = 0.0;
    const Eigen::PartialPivLU<Matrix> lu(w_true);
    for (Eigen::Index i = 0; i < w_true.rows(); ++i) {
      logdet += std::log(std::abs(lu.matrixLU()(i, i)));
    }
    return model.log_pdf_standardized(w_true * x_row) + logdet;
  }
};

// Random k-tree generator: seed a (tau+1)-clique, then attach each new vertex
// to a random existing tau-clique. Conditionals are two-expert mixtures of
// tau-parent linear-Gaussian experts with softmax gating on the parent vector.
inline TreewidthInstance sample_treewidth_instance(const GeneratorSpec& spec) {
  spec.validate();
  if (spec.treewidth > 4) throw InvalidTreewidth("treewidth benchmark range is 1..4");
  const int m = spec.m;
  const int tau = spec.treewidth;
  Rng rng(spec.seed);

  std::vector<std::vector<int>> parents(m);
  std::vector<std::vector<int>> tau_cliques;
  for (int v = 0; v < m; ++v) {
    if (v <= tau) {
      parents[v].resize(v);
      std::iota(parents[v].begin(), parents[v].end(), 0);
    } else {
      parents[v] = tau_cliques[rng.uniform_int(static_cast<int>(tau_cliques.size()))];
    }
    // record the new tau-sized cliques that contain v
    const std::vector<int>& q = parents[v];
    if (static_cast<int>(q.size()) == tau) {
      for (std::size_t drop = 0; drop < q.size(); ++drop) {
        std::vector<int> clique;
        for (std::size_t i = 0; i < q.size(); ++i) {
          if (i != drop) clique.push_back(q[i]);
        }
        clique.push_back(v);
        std::sort(clique.begin(), clique.end());
        tau_cliques.push_back(std::move(clique));
      }
    } else if (static_cast<int>(q.size()) == tau - 1) {
      // seed-clique phase: q together with v completes the first tau-clique
      std::vector<int> clique = q;
      clique.push_back(v);
      tau_cliques.push_back(std::move(clique));
    }
  }

  AncestralModel model;
  model.m = m;
  model.order.resize(m);
  std::iota(model.order.begin(), model.order.end(), 0);
  model.parents = parents;
  model.conditionals.resize(m);
  for (int v = 0; v < m; ++v) {
    const int p = static_cast<int>(parents[v].size());
    if (p == 0) {
      model.conditionals[v] = catalog::root_template(rng.uniform_int(4));
      continue;
    }
    VertexConditional c;
    c.gate_slope.resize(2, p);
    c.gate_bias = Vector::Zero(2);
    c.expert_slope.resize(2, p);
    c.expert_intercept.resize(2);
    c.expert_variance.resize(2);
    for (int j = 0; j < p; ++j) {
      const double mag = rng.uniform(0.25, 0.7) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      c.expert_slope(0, j) = mag;
      c.expert_slope(1, j) = mag;
      c.gate_slope(0, j) = rng.uniform(-2.5, 2.5);
      c.gate_slope(1, j) = 0.0;
    }
    const double sep = rng.uniform(0.5, 1.1);
    c.expert_intercept << sep, -sep;
    c.expert_variance << rng.uniform(0.03, 0.1), rng.uniform(0.4, 1.2);
    model.conditionals[v] = c;
  }

  Matrix sources = detail::sample_and_standardize(model, spec.n, rng);
  const Matrix mixing = random_mixing_matrix(m, rng);
  Matrix x = sources * mixing.transpose();

  TreewidthInstance inst{Dataset(std::move(x)), mixing, mixing.inverse(),
                         tau,                   std::move(sources), std::move(model)};
  return inst;
}

// moral-graph adjacency of an ancestral model (parents form cliques)
inline std::vector<std::pair<int, int>> moral_graph_edges(const AncestralModel& model) {
  std::set<std::pair<int, int>> edges;
  for (int v = 0; v < model.m; ++v) {
    for (std::size_t i = 0; i < model.parents[v].size(); ++i) {
      const int a = model.parents[v][i];
      edges.emplace(std::min(a, v), std::max(a, v));
      for (std::size_t j = i + 1; j < model.parents[v].size(); ++j) {
        const int b = model.parents[v][j];
        edges.emplace(std::min(a, b), std::max(a, b));
      }
    }
  }
  return {edges.begin(), edges.end()};
}

}  // namespace tca
