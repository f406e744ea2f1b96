#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dit/geometry.hpp"
#include "dit/tensor.hpp"

namespace dit {

/// Named, ordered collection of learnable tensors.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    ad::Tensor tensor;
  };

  /// Registers a parameter initialised uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  ad::Tensor add_uniform(const std::string& name, ad::Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> v(ad::numel(shape));
    for (double& x : v) x = u(rng);
    return add(name, std::move(shape), std::move(v));
  }

  ad::Tensor add_constant(const std::string& name, ad::Shape shape, double value) {
    return add(name, shape, std::vector<double>(ad::numel(shape), value));
  }

  ad::Tensor add(const std::string& name, ad::Shape shape, std::vector<double> values) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, ad::Tensor::parameter(std::move(shape), std::move(values))});
    return entries_.back().tensor;
  }

  const ad::Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].tensor;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  /// Element-wise copy of values from `other`; names and shapes must match.
  void copy_values_from(const ModelParams& other) {
    if (other.entries_.size() != entries_.size()) throw std::invalid_argument("copy_values_from: parameter count mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& src = other.entries_[i];
      auto& dst = entries_[i];
      if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape())
        throw std::invalid_argument("copy_values_from: mismatch at " + dst.name);
      auto out = dst.tensor.mutable_values();
      std::copy(src.tensor.values().begin(), src.tensor.values().end(), out.begin());
    }
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamOptions {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are indexed like ModelParams::entries().
class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

  const AdamOptions& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }
  std::size_t steps() const { return step_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

  /// Applies one update from the accumulated grads. Parameters without a
  /// grad are treated as having a zero gradient. Throws NonFiniteError,
  /// leaving parameters and state untouched, if any gradient is non-finite.
  void step(ModelParams& params) {
    const auto& entries = params.entries();
    if (m_.empty()) {
      for (const auto& e : entries) {
        m_.emplace_back(e.tensor.size(), 0.0);
        v_.emplace_back(e.tensor.size(), 0.0);
      }
    }
    if (m_.size() != entries.size()) throw std::invalid_argument("Adam: parameter set changed between steps");
    for (const auto& e : entries)
      for (double g : e.tensor.grad())
        if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in " + e.name);

    ++step_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < entries.size(); ++k) {
      ad::Tensor t = entries[k].tensor;
      auto val = t.mutable_values();
      const auto grad = t.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      if (m.size() != val.size()) throw std::invalid_argument("Adam: shape changed for " + entries[k].name);
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
        val[i] -= opt_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
      }
    }
  }

 private:
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint: <dir>/manifest.txt ("name rank e0 e1 ..." per line) and
// <dir>/weights.bin (little-endian float64, manifest order).

namespace checkpoint {

namespace fs = std::filesystem;

inline void write_le_double(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  out.write(buf, 8);
}

inline double read_le_double(std::istream& in) {
  char buf[8];
  if (!in.read(buf, 8)) throw std::runtime_error("checkpoint: weights blob truncated");
  std::uint64_t bits;
  std::memcpy(&bits, buf, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

inline void save(const fs::path& dir, const ModelParams& params) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  std::ofstream blob(dir / "weights.bin", std::ios::binary);
  if (!manifest || !blob) throw std::runtime_error("checkpoint: cannot write into " + dir.string());
  for (const auto& e : params.entries()) {
    manifest << e.name << ' ' << e.tensor.rank();
    for (std::size_t d : e.tensor.shape()) manifest << ' ' << d;
    manifest << '\n';
    for (double v : e.tensor.values()) write_le_double(blob, v);
  }
}

/// Loads values into an already-constructed parameter set; every name and
/// shape must match the manifest exactly.
inline void load(const fs::path& dir, ModelParams& params) {
  std::ifstream manifest(dir / "manifest.txt");
  std::ifstream blob(dir / "weights.bin", std::ios::binary);
  if (!manifest || !blob) throw std::runtime_error("checkpoint: cannot read " + dir.string());
  std::string line;
  std::size_t k = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    std::size_t rank = 0;
    ls >> name >> rank;
    ad::Shape shape(rank);
    for (auto& d : shape) ls >> d;
    if (!ls) throw std::runtime_error("checkpoint: malformed manifest line: " + line);
    if (k >= params.count()) throw std::runtime_error("checkpoint: more tensors than the model has (" + name + ")");
    const auto& e = params.entries()[k];
    if (e.name != name || e.tensor.shape() != shape)
      throw std::runtime_error("checkpoint: expected " + e.name + " " + ad::to_string(e.tensor.shape()) + ", found " +
                               name + " " + ad::to_string(shape));
    ad::Tensor t = e.tensor;
    for (double& v : t.mutable_values()) v = read_le_double(blob);
    ++k;
  }
  if (k != params.count()) throw std::runtime_error("checkpoint: manifest lists fewer tensors than the model has");
  if (blob.peek() != std::char_traits<char>::eof()) throw std::runtime_error("checkpoint: trailing bytes in weights blob");
}

}  // namespace checkpoint

}  // namespace dit
