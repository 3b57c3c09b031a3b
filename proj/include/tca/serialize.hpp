#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tca/core.hpp"
#include "tca/density.hpp"
#include "tca/errors.hpp"
#include "tca/optimizer.hpp"
#include "tca/synthgen.hpp"

namespace tca {

using Json = nlohmann::json;

constexpr int kDocumentVersion = 1;

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw ParseError("expected a non-empty array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j.front().size();
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (j[i].size() != cols) throw ParseError("ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c) out(i, c) = j[i][c].get<double>();
  }
  return out;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Vector vector_from_json(const Json& j) {
  Vector out(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out[i] = j[i].get<double>();
  return out;
}

inline Json edges_to_json(const SpanningTree& tree) {
  Json out = Json::array();
  for (const auto& [u, v] : tree.edges()) out.push_back(Json::array({u, v}));
  return out;
}

inline SpanningTree edges_from_json(int m, const Json& j) {
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : j) edges.emplace_back(e[0].get<int>(), e[1].get<int>());
  return SpanningTree(m, std::move(edges));
}

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("invalid JSON document: ") + e.what());
  }
  return j;
}

inline void save_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

inline void expect_kind(const Json& j, const std::string& kind) {
  if (!j.contains("kind") || j["kind"].get<std::string>() != kind) {
    throw ParseError("document is not of kind '" + kind + "'");
  }
}

}  // namespace detail

// ---- fit result documents -------------------------------------------------

struct FitDocument {
  FitResult result;
  std::string contrast;  // "kde" | "kgv"
  Json config_echo;
};

inline Json fit_result_to_json(const FitResult& fit, const OptimizerConfig& cfg) {
  Json j;
  j["version"] = kDocumentVersion;
  j["kind"] = "tca_fit";
  j["contrast"] = cfg.contrast == ContrastKind::kKde ? "kde" : "kgv";
  j["m"] = fit.w.rows();
  j["w"] = detail::matrix_to_json(fit.w);
  j["tree"] = detail::edges_to_json(fit.tree);
  j["objective_trace"] = fit.objective_trace;
  j["tree_switch_count"] = fit.tree_switch_count;
  j["converged"] = fit.converged;
  j["ica_converged"] = fit.ica_converged;
  j["wall_seconds"] = fit.wall_seconds;
  j["config"] = {
      {"lambda_c", cfg.lambda_c},
      {"max_outer_iters", cfg.max_outer_iters},
      {"grad_eps", cfg.grad_eps},
      {"convergence_tol", cfg.convergence_tol},
      {"seed", cfg.seed},
      {"kde_bandwidth", cfg.kde.bandwidth},
      {"kde_grid_points", cfg.kde.grid_points},
      {"kgv_kernel_width", cfg.kgv.kernel_width},
      {"kgv_regularization", cfg.kgv.regularization},
      {"kgv_cholesky_tol", cfg.kgv.cholesky_tol},
  };
  return j;
}

inline FitDocument fit_result_from_json(const Json& j) {
  detail::expect_kind(j, "tca_fit");
  FitDocument doc;
  doc.contrast = j["contrast"].get<std::string>();
  doc.config_echo = j.value("config", Json::object());
  const int m = j["m"].get<int>();
  doc.result.w = detail::matrix_from_json(j["w"]);
  doc.result.tree = detail::edges_from_json(m, j["tree"]);
  doc.result.objective_trace = j["objective_trace"].get<std::vector<double>>();
  doc.result.tree_switch_count = j["tree_switch_count"].get<int>();
  doc.result.converged = j["converged"].get<bool>();
  doc.result.ica_converged = j.value("ica_converged", true);
  doc.result.wall_seconds = j.value("wall_seconds", 0.0);
  return doc;
}

// ---- generator truth documents ---------------------------------------------

inline Json conditional_to_json(const VertexConditional& c) {
  return Json{{"gate_slope", detail::matrix_to_json(c.gate_slope)},
              {"gate_bias", detail::vector_to_json(c.gate_bias)},
              {"expert_slope", detail::matrix_to_json(c.expert_slope)},
              {"expert_intercept", detail::vector_to_json(c.expert_intercept)},
              {"expert_variance", detail::vector_to_json(c.expert_variance)}};
}

inline VertexConditional conditional_from_json(const Json& j) {
  VertexConditional c;
  c.gate_bias = detail::vector_from_json(j["gate_bias"]);
  c.expert_intercept = detail::vector_from_json(j["expert_intercept"]);
  c.expert_variance = detail::vector_from_json(j["expert_variance"]);
  const int k = static_cast<int>(c.gate_bias.size());
  const auto read_k_by_p = [&](const Json& m) {
    if (m.empty() || m.front().empty()) return Matrix(k, 0);
    return detail::matrix_from_json(m);
  };
  c.gate_slope = read_k_by_p(j["gate_slope"]);
  c.expert_slope = read_k_by_p(j["expert_slope"]);
  return c;
}

inline Json ancestral_model_to_json(const AncestralModel& model) {
  Json conds = Json::array();
  for (const auto& c : model.conditionals) conds.push_back(conditional_to_json(c));
  return Json{{"m", model.m},
              {"order", model.order},
              {"parents", model.parents},
              {"conditionals", std::move(conds)},
              {"shift", detail::vector_to_json(model.shift)},
              {"scale", detail::vector_to_json(model.scale)}};
}

inline AncestralModel ancestral_model_from_json(const Json& j) {
  AncestralModel model;
  model.m = j["m"].get<int>();
  model.order = j["order"].get<std::vector<int>>();
  model.parents = j["parents"].get<std::vector<std::vector<int>>>();
  for (const auto& c : j["conditionals"]) model.conditionals.push_back(conditional_from_json(c));
  model.shift = detail::vector_from_json(j["shift"]);
  model.scale = detail::vector_from_json(j["scale"]);
  return model;
}

inline Json truth_to_json(const TcaInstance& inst, const GeneratorSpec& spec) {
  Json j;
  j["version"] = kDocumentVersion;
  j["kind"] = "tca_truth";
  j["generator_version"] = catalog::version();
  j["seed"] = spec.seed;
  j["m"] = spec.m;
  j["n"] = spec.n;
  j["treewidth"] = 1;
  j["mixing"] = detail::matrix_to_json(inst.mixing);
  j["w_true"] = detail::matrix_to_json(inst.w_true);
  j["tree"] = detail::edges_to_json(inst.tree);
  j["model"] = ancestral_model_to_json(inst.model);
  return j;
}

inline Json truth_to_json(const TreewidthInstance& inst, const GeneratorSpec& spec) {
  Json j;
  j["version"] = kDocumentVersion;
  j["kind"] = "tca_truth";
  j["generator_version"] = catalog::version();
  j["seed"] = spec.seed;
  j["m"] = spec.m;
  j["n"] = spec.n;
  j["treewidth"] = inst.tau;
  j["mixing"] = detail::matrix_to_json(inst.mixing);
  j["w_true"] = detail::matrix_to_json(inst.w_true);
  j["model"] = ancestral_model_to_json(inst.model);
  return j;
}

struct TruthDocument {
  int m = 0;
  int n = 0;
  int treewidth = 1;
  std::uint64_t seed = 0;
  Matrix mixing;
  Matrix w_true;
  std::optional<SpanningTree> tree;
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

inline TruthDocument truth_from_json(const Json& j) {
  detail::expect_kind(j, "tca_truth");
  TruthDocument doc;
  doc.m = j["m"].get<int>();
  doc.n = j["n"].get<int>();
  doc.treewidth = j["treewidth"].get<int>();
  doc.seed = j["seed"].get<std::uint64_t>();
  doc.mixing = detail::matrix_from_json(j["mixing"]);
  doc.w_true = detail::matrix_from_json(j["w_true"]);
  if (j.contains("tree")) doc.tree = detail::edges_from_json(doc.m, j["tree"]);
  doc.model = ancestral_model_from_json(j["model"]);
  return doc;
}

// ---- density model documents -----------------------------------------------

inline Json density_model_to_json(const TreeDensityModel& model) {
  Json j;
  j["version"] = kDocumentVersion;
  j["kind"] = "tca_density_model";
  j["w"] = detail::matrix_to_json(model.w);
  j["root"] = model.dtree.root;
  j["parent"] = model.dtree.parent;
  j["order"] = model.dtree.order;
  j["root_model"] = {{"weights", detail::vector_to_json(model.root_model.weights)},
                     {"means", detail::vector_to_json(model.root_model.means)},
                     {"variances", detail::vector_to_json(model.root_model.variances)}};
  Json edges = Json::array();
  for (const auto& [u, moe] : model.edge_models) {
    edges.push_back(Json{{"vertex", u},
                         {"gate_slope", detail::vector_to_json(moe.gate_slope)},
                         {"gate_bias", detail::vector_to_json(moe.gate_bias)},
                         {"slope", detail::vector_to_json(moe.slope)},
                         {"intercept", detail::vector_to_json(moe.intercept)},
                         {"variance", detail::vector_to_json(moe.variance)}});
  }
  j["edge_models"] = std::move(edges);
  return j;
}

inline TreeDensityModel density_model_from_json(const Json& j) {
  detail::expect_kind(j, "tca_density_model");
  TreeDensityModel model;
  model.w = detail::matrix_from_json(j["w"]);
  model.log_abs_det_w = DemixingMatrix(model.w).log_abs_det();
  model.dtree.root = j["root"].get<int>();
  model.dtree.parent = j["parent"].get<std::vector<int>>();
  model.dtree.order = j["order"].get<std::vector<int>>();
  model.root_model.weights = detail::vector_from_json(j["root_model"]["weights"]);
  model.root_model.means = detail::vector_from_json(j["root_model"]["means"]);
  model.root_model.variances = detail::vector_from_json(j["root_model"]["variances"]);
  for (const auto& e : j["edge_models"]) {
    MixtureOfExperts moe;
    moe.gate_slope = detail::vector_from_json(e["gate_slope"]);
    moe.gate_bias = detail::vector_from_json(e["gate_bias"]);
    moe.slope = detail::vector_from_json(e["slope"]);
    moe.intercept = detail::vector_from_json(e["intercept"]);
    moe.variance = detail::vector_from_json(e["variance"]);
    model.edge_models[e["vertex"].get<int>()] = std::move(moe);
  }
  return model;
}

}  // namespace tca
