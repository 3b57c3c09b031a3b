#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tca/baselines.hpp"
#include "tca/density.hpp"
#include "tca/random.hpp"
#include "tca/synthgen.hpp"

using tca::GaussianMixture;
using tca::Matrix;
using tca::MixtureOfExperts;
using tca::SpanningTree;
using tca::Vector;

namespace {

Vector normal_samples(int n, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
  tca::Rng rng(seed);
  Vector out(n);
  for (int i = 0; i < n; ++i) out[i] = mean + sd * rng.normal();
  return out;
}

Vector mixture_samples(int n, std::uint64_t seed, double sep) {
  tca::Rng rng(seed);
  Vector out(n);
  for (int i = 0; i < n; ++i) {
    const double center = rng.uniform() < 0.5 ? -sep : sep;
    out[i] = center + rng.normal();
  }
  return out;
}

void require_nondecreasing(const std::vector<double>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    REQUIRE(trace[i] >= trace[i - 1] - 1e-9 * (std::abs(trace[i - 1]) + 1.0));
  }
}

}  // namespace

TEST_CASE("root_tree orientations") {
  const SpanningTree chain(3, {{0, 1}, {1, 2}});
  const auto rooted = tca::root_tree(chain, 0);
  REQUIRE(rooted.parent[1] == 0);
  REQUIRE(rooted.parent[2] == 1);
  REQUIRE(rooted.parent[0] == -1);
  REQUIRE(rooted.order.front() == 0);

  const SpanningTree star(4, {{0, 1}, {0, 2}, {0, 3}});
  const auto star_rooted = tca::root_tree(star, 0);
  for (int leaf : {1, 2, 3}) REQUIRE(star_rooted.parent[leaf] == 0);

  // rooting elsewhere keeps the same undirected edges
  const auto rerooted = tca::root_tree(chain, 2);
  REQUIRE(rerooted.parent[1] == 2);
  REQUIRE(rerooted.parent[0] == 1);

  REQUIRE_THROWS_AS(tca::root_tree(chain, 5), tca::InvalidVertex);
}

TEST_CASE("gmm fitting") {
  SECTION("K = 1 matches sample statistics") {
    const Vector x = normal_samples(4000, 3, 0.7, 1.3);
    const auto gm = tca::fit_gmm(x, 1, 11);
    const double se_mean = 1.3 / std::sqrt(4000.0);
    REQUIRE(gm.means[0] == Catch::Approx(x.mean()).margin(3.0 * se_mean));
    const double sample_var = (x.array() - x.mean()).square().mean();
    REQUIRE(gm.variances[0] == Catch::Approx(sample_var).margin(1e-9));
    REQUIRE(gm.weights[0] == 1.0);
  }
  SECTION("EM log-likelihood is nondecreasing") {
    const Vector x = mixture_samples(1500, 5, 2.5);
    tca::EmTrace trace;
    tca::fit_gmm(x, 3, 7, {}, &trace);
    REQUIRE(trace.loglik.size() >= 2);
    if (trace.resets == 0) require_nondecreasing(trace.loglik);
  }
  SECTION("sample size guard") {
    REQUIRE_THROWS_AS(tca::fit_gmm(normal_samples(9, 1), 2, 1), tca::Error);
  }
}

TEST_CASE("moe fitting") {
  SECTION("K = 1 is weighted least squares") {
    tca::Rng rng(13);
    const int n = 3000;
    Vector parent(n), child(n);
    for (int i = 0; i < n; ++i) {
      parent[i] = rng.normal();
      child[i] = parent[i] + 0.1 * rng.normal();
    }
    const auto moe = tca::fit_moe(child, parent, 1, 17);
    REQUIRE(moe.slope[0] == Catch::Approx(1.0).margin(0.05));
    REQUIRE(std::abs(moe.intercept[0]) < 0.05);
  }
  SECTION("EM log-likelihood is nondecreasing") {
    tca::Rng rng(19);
    const int n = 1500;
    Vector parent(n), child(n);
    for (int i = 0; i < n; ++i) {
      parent[i] = rng.normal();
      child[i] = (rng.uniform() < 0.5 ? 0.8 : -0.8) * parent[i] + 0.3 * rng.normal();
    }
    tca::EmTrace trace;
    tca::fit_moe(child, parent, 2, 23, {}, &trace);
    REQUIRE(trace.loglik.size() >= 2);
    if (trace.resets == 0) require_nondecreasing(trace.loglik);
  }
}

TEST_CASE("mdl selection consistency") {
  SECTION("single gaussian picks K = 1 in at least 18 of 20 runs") {
    int correct = 0;
    for (int rep = 0; rep < 20; ++rep) {
      const Vector x = normal_samples(2000, 100 + rep);
      const auto sel = tca::mdl_select_gmm(x, 5, 200 + rep);
      if (sel.chosen_k == 1) ++correct;
    }
    REQUIRE(correct >= 18);
  }
  SECTION("well-separated two-component mixture picks K = 2 in at least 18 of 20 runs") {
    int correct = 0;
    for (int rep = 0; rep < 20; ++rep) {
      const Vector x = mixture_samples(2000, 300 + rep, 3.0);
      const auto sel = tca::mdl_select_gmm(x, 5, 400 + rep);
      if (sel.chosen_k == 2) ++correct;
    }
    REQUIRE(correct >= 18);
  }
  SECTION("score curve dips at the selected K on separated data") {
    const Vector x = mixture_samples(2000, 901, 3.0);
    const auto sel = tca::mdl_select_gmm(x, 4, 902);
    REQUIRE(sel.chosen_k == 2);
    REQUIRE(sel.scores[0] > sel.scores[1]);
    REQUIRE(sel.scores[2] > sel.scores[1]);
  }
}

namespace {

tca::TreeDensityModel fitted_reference_model(std::uint64_t seed, tca::TcaInstance* out_inst = nullptr) {
  tca::GeneratorSpec spec;
  spec.m = 4;
  spec.n = 2000;
  spec.seed = seed;
  auto inst = tca::sample_tca_instance(spec);
  auto model = tca::fit_tree_density(inst.x, inst.w_true, inst.tree, 6, seed + 1);
  if (out_inst) *out_inst = std::move(inst);
  return model;
}

}  // namespace

TEST_CASE("tree density model log-likelihood") {
  SECTION("identity demixing has zero jacobian term") {
    tca::GeneratorSpec spec;
    spec.m = 3;
    spec.n = 1500;
    spec.seed = 31;
    const auto inst = tca::sample_tca_instance(spec);
    const tca::Dataset sources(inst.sources);
    const auto model =
        tca::fit_tree_density(sources, Matrix::Identity(3, 3), inst.tree, 5, 32);
    REQUIRE(model.log_abs_det_w == 0.0);
    const Vector row = sources.samples().row(0).transpose();
    REQUIRE(model.log_pdf(row) == Catch::Approx(model.log_pdf_sources(row)).margin(1e-12));
  }

  SECTION("held-out log-likelihood approaches the generator's entropy rate") {
    tca::GeneratorSpec spec;
    spec.m = 4;
    spec.n = 6000;
    spec.seed = 41;
    const auto inst = tca::sample_tca_instance(spec);
    // evaluate the generating model on its own sample: the mean log-density
    // is a Monte-Carlo estimate of -H(generator)
    double generator_ll = 0.0;
    for (int i = 0; i < spec.n; ++i) {
      generator_ll += inst.generator_log_pdf(inst.x.samples().row(i).transpose());
    }
    generator_ll /= spec.n;
    // a fresh draw from the same seed-family gives the same estimate within
    // Monte-Carlo error
    tca::GeneratorSpec spec2 = spec;
    spec2.seed = 42;
    const auto inst2 = tca::sample_tca_instance(spec);
    double generator_ll2 = 0.0;
    for (int i = 0; i < spec.n; ++i) {
      generator_ll2 += inst2.generator_log_pdf(inst2.x.samples().row(i).transpose());
    }
    generator_ll2 /= spec.n;
    REQUIRE(generator_ll == Catch::Approx(generator_ll2).margin(0.05));
  }

  SECTION("row rescaling with compensated mixtures leaves the likelihood unchanged") {
    tca::TcaInstance inst;
    const auto model = fitted_reference_model(51, &inst);
    const double base = tca::log_likelihood(model, inst.x);

    const double a = 2.0;  // scale every source by the same factor
    tca::TreeDensityModel scaled = model;
    scaled.w = a * model.w;
    scaled.log_abs_det_w = tca::DemixingMatrix(scaled.w).log_abs_det();
    scaled.root_model.means *= a;
    scaled.root_model.variances *= a * a;
    for (auto& [u, moe] : scaled.edge_models) {
      moe.intercept *= a;
      moe.variance *= a * a;
      moe.gate_slope /= a;  // gates see the scaled parent
    }
    const double rescaled = tca::log_likelihood(scaled, inst.x);
    REQUIRE(rescaled == Catch::Approx(base).margin(1e-8));
  }
}

TEST_CASE("model sampling") {
  tca::TcaInstance inst;
  const auto model = fitted_reference_model(61, &inst);

  SECTION("n = 1 returns one row") {
    const Matrix one = tca::sample_model(model, 1, 7);
    REQUIRE(one.rows() == 1);
    REQUIRE(one.cols() == 4);
  }

  SECTION("root moments match the root mixture") {
    const int n = 20000;
    const Matrix x = tca::sample_model(model, n, 8);
    const Matrix s = x * model.w.transpose();
    const int root = model.dtree.root;
    const double mean = s.col(root).mean();
    const double var = (s.col(root).array() - mean).square().mean();
    const double se_mean = std::sqrt(model.root_model.variance() / n);
    REQUIRE(mean == Catch::Approx(model.root_model.mean()).margin(3.0 * se_mean + 1e-6));
    REQUIRE(var == Catch::Approx(model.root_model.variance()).epsilon(0.1));
  }

  SECTION("sample then refit round trip") {
    const Matrix train = tca::sample_model(model, 5000, 9);
    const auto refit =
        tca::fit_tree_density(tca::Dataset(train), model.w, inst.tree, 6, 10);
    const Matrix test = tca::sample_model(model, 5000, 11);
    const tca::Dataset test_data(test);
    const double original = tca::log_likelihood(model, test_data);
    const double roundtrip = tca::log_likelihood(refit, test_data);
    REQUIRE(roundtrip == Catch::Approx(original).margin(0.1));
  }

  SECTION("deterministic per seed") {
    const Matrix a = tca::sample_model(model, 50, 12);
    const Matrix b = tca::sample_model(model, 50, 12);
    REQUIRE((a - b).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("density normalization") {
  tca::TcaInstance inst;
  const auto model = fitted_reference_model(71, &inst);

  SECTION("root mixture integrates to one") {
    const auto& gm = model.root_model;
    const double sd = std::sqrt(gm.variance());
    const double lo = gm.mean() - 12.0 * sd;
    const double hi = gm.mean() + 12.0 * sd;
    const int grid = 40000;
    const double step = (hi - lo) / grid;
    double total = 0.0;
    for (int i = 0; i < grid; ++i) {
      total += std::exp(gm.log_pdf(lo + (i + 0.5) * step)) * step;
    }
    REQUIRE(total == Catch::Approx(1.0).margin(1e-4));
  }

  SECTION("conditionals integrate to one at probe parent values") {
    for (const auto& [u, moe] : model.edge_models) {
      for (double parent : {-2.0, -0.5, 0.0, 0.5, 2.0}) {
        double spread = 0.0;
        for (int j = 0; j < moe.k(); ++j) {
          spread = std::max(spread, std::abs(moe.slope[j] * parent + moe.intercept[j]) +
                                        12.0 * std::sqrt(moe.variance[j]));
        }
        const int grid = 40000;
        const double lo = -spread, hi = spread;
        const double step = (hi - lo) / grid;
        double total = 0.0;
        for (int i = 0; i < grid; ++i) {
          total += std::exp(moe.log_pdf(lo + (i + 0.5) * step, parent)) * step;
        }
        REQUIRE(total == Catch::Approx(1.0).margin(1e-4));
      }
      break;  // one edge model suffices per fit; others share the code path
    }
  }
}

TEST_CASE("tree model beats the independent-gaussian baseline on dependent data") {
  tca::GeneratorSpec spec;
  spec.m = 4;
  spec.n = 2000;
  spec.seed = 81;
  const auto inst = tca::sample_tca_instance(spec);

  // split 80/20
  const int n_train = 1600;
  std::vector<int> train_idx, test_idx;
  for (int i = 0; i < spec.n; ++i) (i < n_train ? train_idx : test_idx).push_back(i);
  const tca::Dataset train = inst.x.rows(train_idx);
  const tca::Dataset test = inst.x.rows(test_idx);

  const auto model = tca::fit_tree_density(train, inst.w_true, inst.tree, 6, 82);
  const double tca_ll = tca::log_likelihood(model, test);

  // independent gaussian baseline: diagonal covariance fit
  const auto gau = tca::fit_gaussian(train);
  tca::MvGaussian diag = gau;
  diag.cov = gau.cov.diagonal().asDiagonal();
  const double ind_ll = diag.mean_loglik(test);

  REQUIRE(tca_ll > ind_ll + 0.1);
}
