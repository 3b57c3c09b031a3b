#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tca/errors.hpp"

namespace tca {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {

// shortest round-trip decimal representation
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& tok, std::size_t line) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  while (last != first && (*(last - 1) == ' ' || *(last - 1) == '\t')) --last;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ParseError("invalid numeric field '" + tok + "'", line);
  }
  return v;
}

}  // namespace detail

// N samples of an m-dimensional observation; rows are observations.
class Dataset {
public:
  explicit Dataset(Matrix samples) : samples_(std::move(samples)) {
    if (samples_.rows() < 2 || samples_.cols() < 2) {
      throw DimensionMismatch("dataset requires N >= 2 samples and m >= 2 components");
    }
    if (!samples_.allFinite()) {
      throw Error("dataset contains non-finite entries");
    }
  }

  Eigen::Index n() const { return samples_.rows(); }
  Eigen::Index m() const { return samples_.cols(); }
  const Matrix& samples() const { return samples_; }
  Vector component(Eigen::Index i) const { return samples_.col(i); }

  Dataset centered() const {
    Matrix out = samples_;
    out.rowwise() -= samples_.colwise().mean();
    return Dataset(std::move(out));
  }

  // column-standardized view (zero mean, unit variance per component)
  Dataset standardized() const {
    Matrix out = samples_;
    out.rowwise() -= samples_.colwise().mean();
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const double sd = std::sqrt(out.col(j).squaredNorm() / static_cast<double>(out.rows()));
      if (sd < 1e-12) throw DegenerateComponent("component " + std::to_string(j) + " has zero variance");
      out.col(j) /= sd;
    }
    return Dataset(std::move(out));
  }

  Dataset rows(const std::vector<int>& idx) const {
    Matrix out(static_cast<Eigen::Index>(idx.size()), samples_.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = samples_.row(idx[i]);
    return Dataset(std::move(out));
  }

  // Data are mean-centered once at load; downstream math assumes it.
  static Dataset load_csv(const std::string& path, char delimiter = ',') {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<double> row;
      std::size_t start = 0;
      while (true) {
        const std::size_t pos = line.find(delimiter, start);
        const std::string tok = line.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
        row.push_back(detail::parse_double(tok, lineno));
        if (pos == std::string::npos) break;
        start = pos + 1;
      }
      if (!rows.empty() && row.size() != rows.front().size()) {
        throw ParseError("row has " + std::to_string(row.size()) + " fields, expected " +
                             std::to_string(rows.front().size()),
                         lineno);
      }
      rows.push_back(std::move(row));
    }
    if (rows.size() < 2) throw ParseError("need at least 2 data rows", lineno);
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < rows[i].size(); ++j) {
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
      }
    }
    return Dataset(std::move(out)).centered();
  }

  void save_csv(const std::string& path, char delimiter = ',') const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (Eigen::Index i = 0; i < samples_.rows(); ++i) {
      for (Eigen::Index j = 0; j < samples_.cols(); ++j) {
        if (j) out << delimiter;
        out << detail::format_double(samples_(i, j));
      }
      out << '\n';
    }
  }

  // Binary dump: magic "TCAD", u32 N, u32 m, column-major float64 payload.
  static Dataset load_tcad(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "TCAD", 4) != 0) {
      throw ParseError("bad magic in '" + path + "', expected TCAD");
    }
    std::uint32_t n = 0, m = 0;
    in.read(reinterpret_cast<char*>(&n), 4);
    in.read(reinterpret_cast<char*>(&m), 4);
    if (!in || n < 2 || m < 2) throw ParseError("bad TCAD header in '" + path + "'");
    Matrix out(n, m);
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(sizeof(double)) * n * m);
    if (!in) throw ParseError("truncated TCAD payload in '" + path + "'");
    return Dataset(std::move(out)).centered();
  }

  void save_tcad(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write("TCAD", 4);
    const std::uint32_t n = static_cast<std::uint32_t>(samples_.rows());
    const std::uint32_t m = static_cast<std::uint32_t>(samples_.cols());
    out.write(reinterpret_cast<const char*>(&n), 4);
    out.write(reinterpret_cast<const char*>(&m), 4);
    out.write(reinterpret_cast<const char*>(samples_.data()),
              static_cast<std::streamsize>(sizeof(double)) * n * m);
  }

private:
  Matrix samples_;  // column-major; TCAD payload matches this layout
};

// Empirical covariance with its symmetric inverse square root.
struct CovarianceMatrix {
  Matrix sigma;
  Matrix inv_sqrt;

  static CovarianceMatrix from_sigma(Matrix s) {
    const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * std::max(1.0, s.cwiseAbs().maxCoeff())) {
      throw NotSpd("covariance not symmetric");
    }
    s = ((s + s.transpose()) * 0.5).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    const Vector& ev = eig.eigenvalues();
    const double max_ev = ev.maxCoeff();
    if (max_ev <= 0.0 || ev.minCoeff() < 1e-12 * max_ev) {
      throw SingularCovariance("covariance is numerically singular");
    }
    Matrix inv_sqrt =
        eig.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    return CovarianceMatrix{std::move(s), std::move(inv_sqrt)};
  }
};

inline CovarianceMatrix estimate_covariance(const Dataset& data) {
  Matrix x = data.samples();
  x.rowwise() -= data.samples().colwise().mean();
  Matrix sigma = (x.transpose() * x) / static_cast<double>(data.n());
  return CovarianceMatrix::from_sigma(std::move(sigma));
}

// Invertible m-by-m demixing transform. The unit-variance row constraint
// (w sigma w^T)_ii = 1 is enforced by the optimizer's projection, not here.
class DemixingMatrix {
public:
  explicit DemixingMatrix(Matrix w) : w_(std::move(w)) {
    if (w_.rows() != w_.cols() || w_.rows() < 2) {
      throw DimensionMismatch("demixing matrix must be square, m >= 2");
    }
    if (!w_.allFinite()) throw Error("demixing matrix has non-finite entries");
    Eigen::PartialPivLU<Matrix> lu(w_);
    log_abs_det_ = 0.0;
    for (Eigen::Index i = 0; i < w_.rows(); ++i) {
      const double d = std::abs(lu.matrixLU()(i, i));
      if (d < 1e-300) throw SingularMatrix("demixing matrix is singular");
      log_abs_det_ += std::log(d);
    }
  }

  Eigen::Index dim() const { return w_.rows(); }
  const Matrix& matrix() const { return w_; }
  double log_abs_det() const { return log_abs_det_; }

private:
  Matrix w_;
  double log_abs_det_;
};

inline Dataset transform_sources(const DemixingMatrix& w, const Dataset& data) {
  if (w.dim() != data.m()) {
    throw DimensionMismatch("demixing matrix dimension does not match dataset");
  }
  return Dataset(data.samples() * w.matrix().transpose());
}

// Undirected spanning tree on vertices {0..m-1}; edges stored as u < v, sorted.
class SpanningTree {
public:
  SpanningTree(int m, std::vector<std::pair<int, int>> edges) : m_(m), edges_(std::move(edges)) {
    if (m_ < 2) throw DimensionMismatch("spanning tree needs m >= 2 vertices");
    if (edges_.size() != static_cast<std::size_t>(m_ - 1)) {
      throw Error("spanning tree on " + std::to_string(m_) + " vertices needs exactly " +
                  std::to_string(m_ - 1) + " edges");
    }
    for (auto& [u, v] : edges_) {
      if (u == v || u < 0 || v < 0 || u >= m_ || v >= m_) {
        throw InvalidVertex("edge (" + std::to_string(u) + "," + std::to_string(v) + ") out of range");
      }
      if (u > v) std::swap(u, v);
    }
    std::sort(edges_.begin(), edges_.end());
    if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end()) {
      throw Error("duplicate edge in spanning tree");
    }
    // connectivity via union-find; m-1 edges + connected implies acyclic
    std::vector<int> parent(m_);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int a) {
      while (parent[a] != a) a = parent[a] = parent[parent[a]];
      return a;
    };
    int components = m_;
    degree_.assign(m_, 0);
    for (const auto& [u, v] : edges_) {
      ++degree_[u];
      ++degree_[v];
      const int ru = find(u), rv = find(v);
      if (ru == rv) throw Error("edge set contains a cycle");
      parent[ru] = rv;
      --components;
    }
    if (components != 1) throw Error("edge set is not connected");
    adjacency_.assign(m_, {});
    for (const auto& [u, v] : edges_) {
      adjacency_[u].push_back(v);
      adjacency_[v].push_back(u);
    }
    for (auto& nb : adjacency_) std::sort(nb.begin(), nb.end());
  }

  int vertex_count() const { return m_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  int degree(int u) const { return degree_[u]; }
  const std::vector<int>& neighbors(int u) const { return adjacency_[u]; }
  bool has_edge(int u, int v) const {
    if (u > v) std::swap(u, v);
    return std::binary_search(edges_.begin(), edges_.end(), std::make_pair(u, v));
  }
  bool operator==(const SpanningTree& other) const {
    return m_ == other.m_ && edges_ == other.edges_;
  }

  SpanningTree relabeled(const std::vector<int>& perm) const {
    std::vector<std::pair<int, int>> out;
    out.reserve(edges_.size());
    for (const auto& [u, v] : edges_) out.emplace_back(perm[u], perm[v]);
    return SpanningTree(m_, std::move(out));
  }

private:
  int m_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<int> degree_;
  std::vector<std::vector<int>> adjacency_;
};

}  // namespace tca
