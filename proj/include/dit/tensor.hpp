#pragma once

// Minimal dense tensor with reverse-mode automatic differentiation.
//
// Values are row-major float64. Every op is shape-strict: there is no
// implicit broadcasting, rank adaptation goes through reshape / tile_rows /
// tile_cols. An op output records its pullback only when at least one input
// requires a gradient, so graphs built purely from constants cost nothing
// extra.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

namespace dit::ad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream o;
  o << '[';
  for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "x" : "") << s[i];
  o << ']';
  return o.str();
}

/// Cache-line aligned storage. Eigen's vectorised reductions peel to an
/// aligned boundary, so a fixed alignment keeps results independent of
/// where the allocator places a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until something accumulates into it
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> pullback;
  bool requires_grad = false;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor make(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != numel(shape))
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(values.begin(), values.end());
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor constant(Shape shape, std::vector<double> values) { return make(std::move(shape), std::move(values), false); }
  static Tensor parameter(Shape shape, std::vector<double> values) { return make(std::move(shape), std::move(values), true); }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return make({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  double item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }
  /// Row-major 2D access.
  double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.back() + c]; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace detail {

inline ConstMatMap as_mat(const Node& n) {
  return {n.value.data(), static_cast<Eigen::Index>(n.shape[0]), static_cast<Eigen::Index>(n.shape[1])};
}
inline MatMap as_grad_mat(Node& n) {
  return {n.grad_buffer(), static_cast<Eigen::Index>(n.shape[0]), static_cast<Eigen::Index>(n.shape[1])};
}
inline ConstMatMap as_out_grad(const Node& n) {
  return {n.grad.data(), static_cast<Eigen::Index>(n.shape[0]), static_cast<Eigen::Index>(n.shape[1])};
}

/// Builds an op output; the pullback is attached only when an input needs it.
inline Tensor record(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                     std::function<void(Node&)> pullback) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.assign(value.begin(), value.end());
  for (const auto& t : inputs) n->requires_grad = n->requires_grad || t.requires_grad();
  if (n->requires_grad) {
    for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->pullback = std::move(pullback);
  }
  return Tensor(std::move(n));
}

inline Tensor record(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                     std::function<void(Node&)> pullback) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.assign(value.begin(), value.end());
  for (const auto& t : inputs) n->requires_grad = n->requires_grad || t.requires_grad();
  if (n->requires_grad) {
    for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->pullback = std::move(pullback);
  }
  return Tensor(std::move(n));
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + to_string(t.shape()));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) throw ShapeError(std::string(op) + ": axis out of range for " + to_string(s));
  AxisSplit a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

template <class F>
Tensor unary(const Tensor& a, F&& f, std::function<void(Node&)> pullback) {
  std::vector<double> out(a.size());
  const auto v = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(v[i]);
  return record(a.shape(), std::move(out), {a}, std::move(pullback));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return detail::record(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      double* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return detail::record(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      double* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return detail::record(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) {
      double* g = x.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      double* g = y.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(a, [c](double v) { return c * v; }, [c](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += c * self.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary(a, [c](double v) { return v + c; }, [](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

/// a / s where s holds exactly one element.
inline Tensor div_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("div_scalar: divisor must have one element, got " + to_string(s.shape()));
  const double d = s.item();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / d;
  return detail::record(a.shape(), std::move(out), {a, s}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    const double d = y.value[0];
    if (x.requires_grad) {
      double* g = x.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / d;
    }
    if (y.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * self.value[i];
      y.grad_buffer()[0] -= acc / d;
    }
  });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double v) { return v < 0.0 ? 0.0 : v; }, [](Node& self) {  // NaN passes through
    Node& x = *self.parents[0];
    double* g = x.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (x.value[i] > 0.0) g[i] += self.grad[i];
  });
}

inline double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, sigmoid_value, [](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double v) { return std::exp(v); }, [](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

inline Tensor log(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("log: empty tensor");
  return detail::unary(a, [](double v) { return std::log(v); }, [](Node& self) {
    Node& x = *self.parents[0];
    double* g = x.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / x.value[i];
  });
}

inline Tensor sqrt(const Tensor& a) {
  return detail::unary(a, [](double v) { return std::sqrt(v); }, [](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * 0.5 / self.value[i];
  });
}

inline Tensor square(const Tensor& a) { return mul(a, a); }

/// Clamp to [lo, hi]; the gradient passes only where the input is inside.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return detail::unary(a, [lo, hi](double v) { return std::clamp(v, lo, hi); }, [lo, hi](Node& self) {
    Node& x = *self.parents[0];
    double* g = x.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (x.value[i] >= lo && x.value[i] <= hi) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  return detail::record(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()), {a},
                        [](Node& self) {
                          double* g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                        });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  const auto v = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return detail::record({c, r}, std::move(out), {a}, [r, c](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

/// Concatenate along the last axis; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape base = parts[0].shape();
  if (base.empty()) throw ShapeError("concat: rank-0 input");
  const std::size_t rows = numel(base) / base.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != base.size() || !std::equal(s.begin(), s.end() - 1, base.begin()))
      throw ShapeError("concat: incompatible shapes " + to_string(base) + " and " + to_string(s));
    widths.push_back(s.back());
    total += s.back();
  }
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  Shape shape = base;
  shape.back() = total;
  return detail::record(shape, std::move(out), parts, [rows, total, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) {
        double* g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += self.grad[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

/// Columns [begin, end) of the last axis.
inline Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin > end || end > a.shape().back())
    throw ShapeError("slice_last: bad range for " + to_string(a.shape()));
  const std::size_t width = a.shape().back(), rows = a.size() / width, w = end - begin;
  std::vector<double> out(rows * w);
  const auto v = a.values();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + r * width + begin, w, out.data() + r * w);
  Shape shape = a.shape();
  shape.back() = w;
  return detail::record(shape, std::move(out), {a}, [rows, width, begin, w](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) g[r * width + begin + c] += self.grad[r * w + c];
  });
}

/// Rows of a rank-2 tensor selected by index (repeats allowed).
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  detail::require_rank(a, 2, "gather_rows");
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<double> out(index.size() * d);
  const auto v = a.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) throw std::out_of_range("gather_rows: index " + std::to_string(index[i]) + " >= " + std::to_string(n));
    std::copy_n(v.data() + index[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return detail::record({index.size(), d}, std::move(out), {a}, [idx = std::move(idx), d](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) g[idx[i] * d + c] += self.grad[i * d + c];
  });
}

/// Entry (i, cols[i]) of a rank-2 tensor for every row i, as an n x 1 column.
inline Tensor pick_per_row(const Tensor& a, std::span<const std::size_t> cols) {
  detail::require_rank(a, 2, "pick_per_row");
  const std::size_t n = a.dim(0), m = a.dim(1);
  if (cols.size() != n) throw ShapeError("pick_per_row: need one column index per row");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cols[i] >= m) throw std::out_of_range("pick_per_row: column " + std::to_string(cols[i]) + " >= " + std::to_string(m));
    out[i] = a.values()[i * m + cols[i]];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return detail::record({n, 1}, std::move(out), {a}, [idx = std::move(idx), m](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * m + idx[i]] += self.grad[i];
  });
}

/// Repeats a 1 x d row n times.
inline Tensor tile_rows(const Tensor& row, std::size_t n) {
  detail::require_rank(row, 2, "tile_rows");
  if (row.dim(0) != 1) throw ShapeError("tile_rows: expected 1 x d, got " + to_string(row.shape()));
  const std::size_t d = row.dim(1);
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(row.values().data(), d, out.data() + i * d);
  return detail::record({n, d}, std::move(out), {row}, [n, d](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[i * d + c];
  });
}

/// Repeats an n x 1 column m times.
inline Tensor tile_cols(const Tensor& col, std::size_t m) {
  detail::require_rank(col, 2, "tile_cols");
  if (col.dim(1) != 1) throw ShapeError("tile_cols: expected n x 1, got " + to_string(col.shape()));
  const std::size_t n = col.dim(0);
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(out.data() + i * m, m, col.values()[i]);
  return detail::record({n, m}, std::move(out), {col}, [n, m](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < m; ++c) g[i] += self.grad[i * m + c];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner extents differ " + to_string(a.shape()) + " * " + to_string(b.shape()));
  const std::size_t n = a.dim(0), m = b.dim(1);
  std::vector<double> out(n * m);
  MatMap(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m)).noalias() =
      detail::as_mat(*a.node()) * detail::as_mat(*b.node());
  return detail::record({n, m}, std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    const auto g = detail::as_out_grad(self);
    if (x.requires_grad) detail::as_grad_mat(x).noalias() += g * detail::as_mat(y).transpose();
    if (y.requires_grad) detail::as_grad_mat(y).noalias() += detail::as_mat(x).transpose() * g;
  });
}

/// a * b^T without materialising the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: widths differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t n = a.dim(0), m = b.dim(0);
  std::vector<double> out(n * m);
  MatMap(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m)).noalias() =
      detail::as_mat(*a.node()) * detail::as_mat(*b.node()).transpose();
  return detail::record({n, m}, std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    const auto g = detail::as_out_grad(self);
    if (x.requires_grad) detail::as_grad_mat(x).noalias() += g * detail::as_mat(y);
    if (y.requires_grad) detail::as_grad_mat(y).noalias() += g.transpose() * detail::as_mat(x);
  });
}

/// x W + 1 b for x: n x k, W: k x m, b: 1 x m.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  if (x.dim(1) != w.dim(0)) throw ShapeError("linear: " + to_string(x.shape()) + " * " + to_string(w.shape()));
  if (b.shape() != Shape{1, w.dim(1)}) throw ShapeError("linear: bias shape " + to_string(b.shape()));
  const std::size_t n = x.dim(0), m = w.dim(1);
  std::vector<double> out(n * m);
  MatMap o(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  o.noalias() = detail::as_mat(*x.node()) * detail::as_mat(*w.node());
  o.rowwise() += detail::as_mat(*b.node()).row(0);
  return detail::record({n, m}, std::move(out), {x, w, b}, [](Node& self) {
    Node& xi = *self.parents[0];
    Node& wi = *self.parents[1];
    Node& bi = *self.parents[2];
    const auto g = detail::as_out_grad(self);
    if (xi.requires_grad) detail::as_grad_mat(xi).noalias() += g * detail::as_mat(wi).transpose();
    if (wi.requires_grad) detail::as_grad_mat(wi).noalias() += detail::as_mat(xi).transpose() * g;
    if (bi.requires_grad) detail::as_grad_mat(bi).row(0) += g.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Reductions. Axis reductions keep the reduced axis with extent 1.

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::record({1}, {s}, {a}, [](Node& self) {
    Node& x = *self.parents[0];
    double* g = x.grad_buffer();
    for (std::size_t i = 0; i < x.value.size(); ++i) g[i] += self.grad[0];
  });
}

inline Tensor sum(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "sum");
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const auto v = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += v[(o * sp.len + l) * sp.inner + i];
  Shape shape = a.shape();
  shape[axis] = 1;
  return detail::record(shape, std::move(out), {a}, [sp](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "mean");
  if (sp.len == 0) throw ShapeError("mean: empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(sp.len));
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Max along an axis; the gradient flows to the first maximal entry.
inline Tensor max(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "max");
  if (sp.len == 0) throw ShapeError("max: empty axis");
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(out.size());
  const auto v = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      for (std::size_t l = 1; l < sp.len; ++l)
        if (v[(o * sp.len + l) * sp.inner + i] > v[(o * sp.len + best) * sp.inner + i]) best = l;
      out[o * sp.inner + i] = v[(o * sp.len + best) * sp.inner + i];
      arg[o * sp.inner + i] = (o * sp.len + best) * sp.inner + i;
    }
  Shape shape = a.shape();
  shape[axis] = 1;
  return detail::record(shape, std::move(out), {a}, [arg = std::move(arg)](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k]] += self.grad[k];
  });
}

/// Numerically stable softmax along an axis (max-subtracted).
inline Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "softmax");
  if (sp.len == 0) throw ShapeError("softmax: empty axis");
  std::vector<double> out(a.size());
  const auto v = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) m = std::max(m, v[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) z += (out[at(l)] = std::exp(v[at(l)] - m));
      for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] /= z;
    }
  return detail::record(a.shape(), std::move(out), {a}, [sp](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += self.grad[at(l)] * self.value[at(l)];
        for (std::size_t l = 0; l < sp.len; ++l) g[at(l)] += self.value[at(l)] * (self.grad[at(l)] - dot);
      }
  });
}

/// Per row i of the logits z, log p or log(1 - p) with p = softmax(z_i)[cols[i]],
/// as an n x 1 column. Both are formed from log-sum-exps of the logits, so
/// rows where p is within roundoff of 1 keep full relative accuracy in 1 - p.
inline Tensor log_softmax_pick(const Tensor& z, std::span<const std::size_t> cols, bool complement = false) {
  detail::require_rank(z, 2, "log_softmax_pick");
  const std::size_t n = z.dim(0), m = z.dim(1);
  if (cols.size() != n) throw ShapeError("log_softmax_pick: need one column index per row");
  if (m == 0 || (complement && m < 2)) throw ShapeError("log_softmax_pick: too few columns");
  const auto v = z.values();
  const auto lse = [&](std::size_t row, std::size_t skip) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k)
      if (k != skip) mx = std::max(mx, v[row * m + k]);
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k)
      if (k != skip) s += std::exp(v[row * m + k] - mx);
    return mx + std::log(s);
  };
  std::vector<double> out(n), full(n), rest(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cols[i] >= m) throw std::out_of_range("log_softmax_pick: column " + std::to_string(cols[i]) + " >= " + std::to_string(m));
    full[i] = lse(i, m);
    if (complement) rest[i] = lse(i, cols[i]);
    out[i] = (complement ? rest[i] : v[i * m + cols[i]]) - full[i];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return detail::record({n, 1}, std::move(out), {z},
                        [idx = std::move(idx), full = std::move(full), rest = std::move(rest), m, complement](Node& self) {
                          Node& x = *self.parents[0];
                          double* g = x.grad_buffer();
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            const double gi = self.grad[i];
                            for (std::size_t k = 0; k < m; ++k) {
                              const double zk = x.value[i * m + k];
                              double d = -std::exp(zk - full[i]);
                              if (complement && k != idx[i]) d += std::exp(zk - rest[i]);
                              if (!complement && k == idx[i]) d += 1.0;
                              g[i * m + k] += gi * d;
                            }
                          }
                        });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Layer normalisation over the last axis with learnable 1 x d scale and shift.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t d = x.shape().back(), rows = x.size() / d;
  if (gamma.size() != d || beta.size() != d) throw ShapeError("layer_norm: scale/shift width must be " + std::to_string(d));
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
  const auto v = x.values();
  const auto gm = gamma.values();
  const auto bt = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mu) * inv_std[r];
      out[r * d + c] = gm[c] * xhat[r * d + c] + bt[c];
    }
  }
  return detail::record(x.shape(), std::move(out), {x, gamma, beta},
                        [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                          Node& xi = *self.parents[0];
                          Node& gi = *self.parents[1];
                          Node& bi = *self.parents[2];
                          if (gi.requires_grad) {
                            double* g = gi.grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c] * xhat[r * d + c];
                          }
                          if (bi.requires_grad) {
                            double* g = bi.grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
                          }
                          if (xi.requires_grad) {
                            double* g = xi.grad_buffer();
                            const double inv_d = 1.0 / static_cast<double>(d);
                            for (std::size_t r = 0; r < rows; ++r) {
                              double m1 = 0.0, m2 = 0.0;
                              for (std::size_t c = 0; c < d; ++c) {
                                const double dy = self.grad[r * d + c] * gi.value[c];
                                m1 += dy;
                                m2 += dy * xhat[r * d + c];
                              }
                              m1 *= inv_d;
                              m2 *= inv_d;
                              for (std::size_t c = 0; c < d; ++c) {
                                const double dy = self.grad[r * d + c] * gi.value[c];
                                g[r * d + c] += inv_std[r] * (dy - m1 - xhat[r * d + c] * m2);
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// 3x3 special-orthogonal polar factor, the rotation step of weighted Procrustes.

/// Nearest rotation to a 3x3 matrix K: R = U diag(1, 1, det(U V^T)) V^T with
/// K = U S V^T. Pullback: with R^T K = V L V^T (L = diag(s1, s2, det*s3)),
/// B = V^T R^T G V, Z = V (B_ij / (l_i + l_j)) V^T, dK = R (Z - Z^T).
inline Tensor polar_rotation(const Tensor& k, double denom_floor = 1e-12) {
  if (k.shape() != Shape{3, 3}) throw ShapeError("polar_rotation: expected 3x3, got " + to_string(k.shape()));
  const Eigen::Matrix3d km = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(k.values().data());
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(km, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  const double det = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Eigen::Vector3d lam = svd.singularValues();
  lam[2] *= det;
  const Eigen::Matrix3d r = u * Eigen::Vector3d(1.0, 1.0, det).asDiagonal() * v.transpose();
  std::vector<double> out(9);
  Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(out.data()) = r;
  return detail::record({3, 3}, std::move(out), {k}, [r, v, lam, denom_floor](Node& self) {
    const Eigen::Matrix3d g = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(self.grad.data());
    Eigen::Matrix3d b = v.transpose() * r.transpose() * g * v;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = lam[i] + lam[j];
        if (std::abs(s) < denom_floor) s = s < 0.0 ? -denom_floor : denom_floor;
        b(i, j) /= s;
      }
    const Eigen::Matrix3d z = v * b * v.transpose();
    const Eigen::Matrix3d dk = r * (z - z.transpose());
    Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(self.parents[0]->grad_buffer()) += dk;
  });
}

// ---------------------------------------------------------------------------
// Backward pass

/// Reverse topological order of the graph rooted at `root`, each node once.
inline std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

/// Accumulates d(output)/d(leaf) into every reachable leaf's grad.
inline void backward(const Tensor& output) {
  if (output.size() != 1) throw ShapeError("backward: output must be a scalar, got " + to_string(output.shape()));
  if (!output.requires_grad()) return;
  Node* root = output.node();
  const auto order = topological_order(root);
  // Interior grads start from zero for this pass; leaves keep accumulating.
  for (Node* n : order)
    if (n != root && n->pullback) n->grad.clear();
  root->grad.assign(1, 1.0);
  for (Node* n : order) {
    if (n->pullback && !n->grad.empty()) n->pullback(*n);
  }
}

}  // namespace dit::ad
