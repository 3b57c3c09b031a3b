#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "tca/kgv.hpp"
#include "tca/random.hpp"

using tca::CholeskyFactor;
using tca::KgvConfig;
using tca::Matrix;
using tca::Vector;

namespace {

Vector normal_samples(int n, std::uint64_t seed, double scale = 1.0, double shift = 0.0) {
  tca::Rng rng(seed);
  Vector out(n);
  for (int i = 0; i < n; ++i) out[i] = shift + scale * rng.normal();
  return out;
}

Matrix exact_centered_gram(const Vector& x, double sigma) {
  const Eigen::Index n = x.size();
  Matrix k(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      const double d = x[a] - x[b];
      k(a, b) = std::exp(-d * d / (2.0 * sigma * sigma));
    }
  }
  const Matrix h = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  return h * k * h;
}

}  // namespace

TEST_CASE("incomplete cholesky: constant samples give an empty factor") {
  const Vector x = Vector::Constant(40, 2.5);
  const auto f = tca::incomplete_cholesky(x, KgvConfig{});
  REQUIRE(f.rank() == 0);
  REQUIRE(f.d.size() == 0);
}

TEST_CASE("incomplete cholesky: tight tolerance reproduces the exact centered gram") {
  Vector x(5);
  x << -1.3, -0.4, 0.1, 0.9, 2.2;
  KgvConfig cfg;
  cfg.cholesky_tol = 1e-12;
  const auto f = tca::incomplete_cholesky(x, cfg);
  const Matrix approx = f.g * f.g.transpose();
  const Matrix exact = exact_centered_gram(x, cfg.kernel_width);
  REQUIRE((approx - exact).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("incomplete cholesky: residual trace obeys the stopping rule") {
  const Vector x = normal_samples(300, 17);
  KgvConfig cfg;
  const auto f = tca::incomplete_cholesky(x, cfg);
  const Matrix exact = exact_centered_gram(x, cfg.kernel_width);
  const double residual = (exact - f.g * f.g.transpose()).trace();
  REQUIRE(residual <= cfg.cholesky_tol * 300.0 + 1e-9);
  REQUIRE(static_cast<Eigen::Index>(f.pivot_order.size()) == f.rank());
}

TEST_CASE("incomplete cholesky: tight clusters give tiny rank") {
  tca::Rng rng(5);
  Vector x(1000);
  for (int i = 0; i < 1000; ++i) x[i] = 0.01 * rng.uniform();
  const auto f = tca::incomplete_cholesky(x, KgvConfig{});
  REQUIRE(f.rank() <= 5);
}

TEST_CASE("kgv mutual information basics") {
  KgvConfig cfg;
  const int n = 2000;

  SECTION("single component is exactly zero") {
    const auto f = tca::incomplete_cholesky(normal_samples(n, 1), cfg);
    REQUIRE(tca::kgv_mutual_information({&f}, cfg) == 0.0);
  }
  SECTION("independent components give near-zero") {
    const auto fu = tca::incomplete_cholesky(normal_samples(n, 2), cfg);
    const auto fv = tca::incomplete_cholesky(normal_samples(n, 3), cfg);
    const double mi = tca::kgv_mutual_information({&fu, &fv}, cfg);
    REQUIRE(mi >= -1e-9);
    REQUIRE(mi < 0.05);
  }
  SECTION("duplicated component gives large mutual information") {
    const auto f = tca::incomplete_cholesky(normal_samples(n, 4), cfg);
    REQUIRE(tca::kgv_mutual_information({&f, &f}, cfg) > 1.0);
  }
}

TEST_CASE("pairwise kgv consistency and symmetry") {
  KgvConfig cfg;
  const auto fu = tca::incomplete_cholesky(normal_samples(2000, 7), cfg);
  const auto fv = tca::incomplete_cholesky(normal_samples(2000, 8), cfg);

  REQUIRE(tca::pairwise_kgv_mi(fu, fu, cfg) ==
          Catch::Approx(tca::kgv_mutual_information({&fu, &fu}, cfg)).margin(1e-10));
  REQUIRE(tca::pairwise_kgv_mi(fu, fv, cfg) ==
          Catch::Approx(tca::pairwise_kgv_mi(fv, fu, cfg)).margin(1e-10));
  REQUIRE(tca::pairwise_kgv_mi(fu, fv, cfg) < 0.05);
}

TEST_CASE("low-rank path matches the dense reference at small N") {
  KgvConfig cfg;
  cfg.cholesky_tol = 1e-12;
  const int n = 50;
  tca::Rng rng(23);
  for (int m : {2, 3}) {
    std::vector<Vector> comps;
    std::vector<CholeskyFactor> factors;
    for (int i = 0; i < m; ++i) {
      Vector x(n);
      for (int a = 0; a < n; ++a) x[a] = rng.normal();
      if (i > 0) x += 0.4 * comps.front();  // correlated block
      comps.push_back(x);
      factors.push_back(tca::incomplete_cholesky(x, cfg));
    }
    const double low_rank = tca::kgv_mutual_information(tca::factor_ptrs(factors), cfg);
    const double dense = oracles::dense_kgv_mi(comps, cfg.kernel_width, cfg.effective_kappa(n));
    REQUIRE(low_rank == Catch::Approx(dense).margin(1e-6));
  }
}

TEST_CASE("kgv mutual information is nonnegative on random inputs") {
  KgvConfig cfg;
  tca::Rng rng(31);
  for (int rep = 0; rep < 25; ++rep) {
    const int m = 2 + rng.uniform_int(3);
    const int n = 100 + rng.uniform_int(200);
    std::vector<CholeskyFactor> factors;
    Vector base = normal_samples(n, 1000 + rep);
    for (int i = 0; i < m; ++i) {
      Vector x(n);
      for (int a = 0; a < n; ++a) x[a] = rng.normal();
      if (rng.uniform() < 0.5) x += rng.uniform(0.2, 1.5) * base;
      factors.push_back(tca::incomplete_cholesky(x, cfg));
    }
    REQUIRE(tca::kgv_mutual_information(tca::factor_ptrs(factors), cfg) >= -1e-9);
  }
}

TEST_CASE("monotone regularization: larger kappa never increases I^K") {
  const int n = 500;
  tca::Rng rng(41);
  Vector u(n), v(n);
  for (int i = 0; i < n; ++i) {
    u[i] = rng.normal();
    v[i] = 0.6 * u[i] + 0.8 * rng.normal();
  }
  double prev = std::numeric_limits<double>::infinity();
  for (double kappa : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    KgvConfig cfg;
    cfg.regularization = kappa;
    const auto fu = tca::incomplete_cholesky(u, cfg);
    const auto fv = tca::incomplete_cholesky(v, cfg);
    const double mi = tca::kgv_mutual_information({&fu, &fv}, cfg);
    REQUIRE(mi <= prev + 1e-12);
    prev = mi;
  }
}

namespace {

tca::Dataset chain_sources(int n, int m, std::uint64_t seed) {
  tca::Rng rng(seed);
  Matrix s(n, m);
  for (int i = 0; i < n; ++i) {
    s(i, 0) = rng.uniform() < 0.5 ? rng.normal() * 0.4 - 1.0 : rng.normal() * 0.4 + 1.0;
    for (int j = 1; j < m; ++j) {
      const double innov =
          rng.uniform() < 0.5 ? rng.normal() * 0.3 - 0.7 : rng.normal() * 0.3 + 0.7;
      s(i, j) = 0.7 * s(i, j - 1) + innov;
    }
  }
  for (int j = 0; j < m; ++j) {
    s.col(j).array() -= s.col(j).mean();
    s.col(j) /= std::sqrt(s.col(j).squaredNorm() / n);
  }
  return tca::Dataset(s);
}

}  // namespace

TEST_CASE("contrast J^K") {
  KgvConfig cfg;

  SECTION("m = 2: the single-edge tree cancels exactly") {
    tca::Rng rng(51);
    Matrix x(600, 2);
    for (int i = 0; i < 600; ++i) {
      x(i, 0) = rng.normal();
      x(i, 1) = 0.5 * x(i, 0) + rng.normal();
    }
    const double jk = tca::contrast_JK(tca::DemixingMatrix(Matrix::Identity(2, 2)),
                                       tca::Dataset(x), tca::SpanningTree(2, {{0, 1}}), cfg);
    REQUIRE(std::abs(jk) < 1e-9);
  }

  SECTION("true tree minimizes J^K over all trees at m = 4") {
    const auto data = chain_sources(1200, 4, 61);
    const tca::DemixingMatrix w(Matrix::Identity(4, 4));
    const tca::SpanningTree chain(4, {{0, 1}, {1, 2}, {2, 3}});
    tca::ContrastCache cache;
    const double jk_true = tca::contrast_JK(w, data, chain, cfg, &cache);
    REQUIRE(jk_true >= -1e-6);
    for (const auto& tree : oracles::all_labeled_trees(4)) {
      const double jk = tca::contrast_JK(w, data, tree, cfg, &cache);
      REQUIRE(jk >= -1e-6);
      REQUIRE(jk_true <= jk + 1e-9);
    }
  }

  SECTION("permutation invariance") {
    const auto data = chain_sources(500, 3, 71);
    Matrix w(3, 3);
    w << 1.0, 0.2, 0.0, -0.1, 0.9, 0.3, 0.0, 0.4, 1.1;
    const tca::SpanningTree tree(3, {{0, 1}, {1, 2}});
    const double base = tca::contrast_JK(tca::DemixingMatrix(w), data, tree, cfg);

    const std::vector<int> perm{1, 2, 0};
    Matrix pw(3, 3);
    for (int i = 0; i < 3; ++i) pw.row(perm[i]) = w.row(i);
    const double permuted =
        tca::contrast_JK(tca::DemixingMatrix(pw), data, tree.relabeled(perm), cfg);
    REQUIRE(permuted == Catch::Approx(base).margin(1e-9));
  }

  SECTION("caching is transparent") {
    const auto data = chain_sources(400, 3, 81);
    const tca::DemixingMatrix w(Matrix::Identity(3, 3));
    const tca::SpanningTree tree(3, {{0, 1}, {1, 2}});
    tca::ContrastCache cache;
    const double cold = tca::contrast_JK(w, data, tree, cfg, &cache);
    const double warm = tca::contrast_JK(w, data, tree, cfg, &cache);
    const double uncached = tca::contrast_JK(w, data, tree, cfg);
    REQUIRE(cold == warm);
    REQUIRE(cold == uncached);
  }
}
