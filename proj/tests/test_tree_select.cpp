#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "tca/random.hpp"
#include "tca/tree_select.hpp"

using tca::Matrix;

namespace {

Matrix random_symmetric(int m, tca::Rng& rng) {
  Matrix w = Matrix::Zero(m, m);
  for (int u = 0; u < m; ++u) {
    for (int v = u + 1; v < m; ++v) w(u, v) = w(v, u) = rng.normal();
  }
  return w;
}

}  // namespace

TEST_CASE("mst on two vertices is the single edge") {
  Matrix w = Matrix::Zero(2, 2);
  w(0, 1) = w(1, 0) = -3.5;  // negative weights still yield a spanning tree
  const auto tree = tca::max_weight_spanning_tree(w);
  REQUIRE(tree.edges() == std::vector<std::pair<int, int>>{{0, 1}});
}

TEST_CASE("mst three-vertex example matches enumeration") {
  Matrix w = Matrix::Zero(3, 3);
  w(0, 1) = w(1, 0) = 0.5;
  w(0, 2) = w(2, 0) = 0.2;
  w(1, 2) = w(2, 1) = 0.4;
  const auto tree = tca::max_weight_spanning_tree(w);
  REQUIRE(tree.has_edge(0, 1));
  REQUIRE(tree.has_edge(1, 2));
  REQUIRE(oracles::tree_weight(w, tree) == Catch::Approx(0.9));

  double best = -1e100;
  for (const auto& t : oracles::all_labeled_trees(3)) {
    best = std::max(best, oracles::tree_weight(w, t));
  }
  REQUIRE(oracles::tree_weight(w, tree) == Catch::Approx(best));
}

TEST_CASE("mst matches exhaustive enumeration on random weights") {
  tca::Rng rng(2024);
  for (int m = 3; m <= 5; ++m) {
    const auto all_trees = oracles::all_labeled_trees(m);
    for (int rep = 0; rep < 20; ++rep) {
      const Matrix w = random_symmetric(m, rng);
      const auto tree = tca::max_weight_spanning_tree(w);
      double best = -1e100;
      for (const auto& t : all_trees) best = std::max(best, oracles::tree_weight(w, t));
      REQUIRE(oracles::tree_weight(w, tree) == Catch::Approx(best).margin(1e-12));
    }
  }
}

TEST_CASE("constant weight shift leaves the argmax tree unchanged") {
  tca::Rng rng(77);
  const Matrix w = random_symmetric(5, rng);
  Matrix shifted = w;
  for (int u = 0; u < 5; ++u) {
    for (int v = 0; v < 5; ++v) {
      if (u != v) shifted(u, v) += 2.75;
    }
  }
  REQUIRE(tca::max_weight_spanning_tree(w) == tca::max_weight_spanning_tree(shifted));
}

TEST_CASE("mst commutes with vertex relabeling on tie-free weights") {
  tca::Rng rng(99);
  const Matrix w = random_symmetric(5, rng);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  Matrix pw = Matrix::Zero(5, 5);
  for (int u = 0; u < 5; ++u) {
    for (int v = 0; v < 5; ++v) pw(perm[u], perm[v]) = w(u, v);
  }
  const auto direct = tca::max_weight_spanning_tree(pw);
  const auto relabeled = tca::max_weight_spanning_tree(w).relabeled(perm);
  REQUIRE(direct == relabeled);
}

TEST_CASE("t-mutual-information decomposition") {
  Matrix w = Matrix::Zero(3, 3);
  const tca::SpanningTree tree(3, {{0, 1}, {1, 2}});

  SECTION("independent components give zero") {
    REQUIRE(tca::t_mutual_information_decomposition(0.0, w, tree) == 0.0);
  }
  SECTION("arithmetic by definition") {
    w(0, 1) = w(1, 0) = 0.3;
    w(1, 2) = w(2, 1) = 0.4;
    REQUIRE(tca::t_mutual_information_decomposition(1.0, w, tree) == Catch::Approx(0.3));
  }
  SECTION("chow-liu tree minimizes the decomposition at m=4") {
    tca::Rng rng(5);
    const Matrix weights = random_symmetric(4, rng).cwiseAbs();
    const auto chosen = tca::max_weight_spanning_tree(weights);
    const double total = 10.0;
    const double chosen_value = tca::t_mutual_information_decomposition(total, weights, chosen);
    for (const auto& t : oracles::all_labeled_trees(4)) {
      REQUIRE(chosen_value <= tca::t_mutual_information_decomposition(total, weights, t) + 1e-12);
    }
  }
}
