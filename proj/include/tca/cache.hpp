#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <unordered_map>

namespace tca {

struct CholeskyFactor;

// FNV-1a over raw bytes; used to key cached per-component quantities by the
// content of the demixing row that produced them.
inline std::uint64_t hash_bytes(const void* data, std::size_t len, std::uint64_t seed = 0) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Derived>
std::uint64_t hash_row(const Eigen::MatrixBase<Derived>& row) {
  Eigen::RowVectorXd r = row;
  return hash_bytes(r.data(), sizeof(double) * static_cast<std::size_t>(r.size()));
}

struct CacheKey {
  int kind = 0;
  int u = -1;
  int v = -1;
  std::uint64_t ha = 0;
  std::uint64_t hb = 0;
  bool operator==(const CacheKey&) const = default;
};

struct CacheKeyHash {
  std::size_t operator()(const CacheKey& k) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    auto mix = [&h](std::uint64_t x) {
      h ^= x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    };
    mix(static_cast<std::uint64_t>(k.kind));
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.u)) |
        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.v)) << 32));
    mix(k.ha);
    mix(k.hb);
    return static_cast<std::size_t>(h);
  }
};

// Cache keyed by (component index, row content hash). Changing one row of W
// invalidates only that component's entries because unchanged rows keep their
// hashes. Thread-safe; inserting an identical key twice is idempotent.
class ContrastCache {
public:
  enum Kind {
    kEntropy1d = 1,
    kEntropy2d = 2,
    kKgvFactor = 3,
    kKgvCross = 4,
    kKgvPairMi = 5,
  };

  std::optional<double> get_scalar(const CacheKey& key) const {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = scalars_.find(key);
    if (it == scalars_.end()) return std::nullopt;
    return it->second;
  }

  void put_scalar(const CacheKey& key, double value) {
    std::lock_guard<std::mutex> lock(mu_);
    scalars_.emplace(key, value);
  }

  std::shared_ptr<const CholeskyFactor> get_factor(const CacheKey& key) const {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = factors_.find(key);
    return it == factors_.end() ? nullptr : it->second;
  }

  void put_factor(const CacheKey& key, std::shared_ptr<const CholeskyFactor> f) {
    std::lock_guard<std::mutex> lock(mu_);
    factors_.emplace(key, std::move(f));
  }

  std::shared_ptr<const Eigen::MatrixXd> get_block(const CacheKey& key) const {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = blocks_.find(key);
    return it == blocks_.end() ? nullptr : it->second;
  }

  void put_block(const CacheKey& key, std::shared_ptr<const Eigen::MatrixXd> b) {
    std::lock_guard<std::mutex> lock(mu_);
    blocks_.emplace(key, std::move(b));
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mu_);
    scalars_.clear();
    factors_.clear();
    blocks_.clear();
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return scalars_.size() + factors_.size() + blocks_.size();
  }

private:
  mutable std::mutex mu_;
  std::unordered_map<CacheKey, double, CacheKeyHash> scalars_;
  std::unordered_map<CacheKey, std::shared_ptr<const CholeskyFactor>, CacheKeyHash> factors_;
  std::unordered_map<CacheKey, std::shared_ptr<const Eigen::MatrixXd>, CacheKeyHash> blocks_;
};

}  // namespace tca
