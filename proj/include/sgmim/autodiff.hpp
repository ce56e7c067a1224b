#pragma once

// Reverse-mode differentiation over a dynamically recorded tape.
//
// Every op evaluates eagerly and, when the tape is recording and any input
// requires a gradient, stores a closure that pushes the output gradient back
// into its inputs. Tape::backward() walks the nodes in reverse creation order,
// which is a valid topological order because inputs always precede outputs.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "sgmim/errors.hpp"
#include "sgmim/tensor.hpp"

namespace sgmim {

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  std::size_t id() const noexcept { return id_; }
  Tape<T>& tape() const noexcept { return *tape_; }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  // Called with the node's accumulated gradient and its forward value.
  using Backward = std::function<void(const Tensor<T>&, const Tensor<T>&)>;

  // A non-recording tape only evaluates; no closures are stored.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return add_node(std::move(value), false, {}); }

  Var<T> variable(Tensor<T> value) { return add_node(std::move(value), recording_, {}); }

  // Named parameter leaf; repeated lookups of the same name return the same node.
  Var<T> param(const std::string& name, const Tensor<T>& value) {
    if (auto it = params_.find(name); it != params_.end()) return Var<T>(this, it->second);
    auto v = variable(value);
    params_.emplace(name, v.id());
    return v;
  }

  Var<T> push(Tensor<T> value, std::vector<Var<T>> inputs, Backward backward) {
    bool needs = false;
    if (recording_) {
      for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    return add_node(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient accumulator for a node, allocated as zeros on first use.
  Tensor<T>& grad_buffer(std::size_t id) {
    auto& node = nodes_.at(id);
    if (node.grad.empty() && node.value.size() > 0) node.grad = Tensor<T>(node.value.shape(), T(0));
    return node.grad;
  }

  Tensor<T> grad(const Var<T>& v) const {
    const auto& node = nodes_.at(v.id());
    if (node.grad.empty()) return Tensor<T>(node.value.shape(), T(0));
    return node.grad;
  }

  void backward(const Var<T>& root) {
    if (!recording_) throw ConfigError("backward() on a non-recording tape");
    if (root.value().size() != 1) throw GeometryError("backward() needs a scalar root, got " + shape_string(root.shape()));
    if (!requires_grad(root.id())) return;
    grad_buffer(root.id())[0] = T(1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (node.backward && !node.grad.empty()) node.backward(node.grad, node.value);
    }
  }

  std::map<std::string, Tensor<T>> param_grads() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, id] : params_) out.emplace(name, grad(Var<T>(const_cast<Tape*>(this), id)));
    return out;
  }

  const std::map<std::string, std::size_t>& params() const noexcept { return params_; }

  // Hash of the branch taken by every non-smooth op evaluated so far (the sign
  // pattern of abs inputs). Equal signatures at two points mean no kink lies
  // between them along a path that keeps the pattern.
  std::uint64_t kink_signature() const noexcept { return kinks_; }
  void note_branch(std::uint64_t branch) noexcept {
    kinks_ ^= branch;
    kinks_ *= 0x100000001b3ULL;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<T> add_node(Tensor<T> value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad, std::move(backward)});
    return Var<T>(this, nodes_.size() - 1);
  }

  bool recording_;
  std::uint64_t kinks_ = 0xcbf29ce484222325ULL;
  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> params_;
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMat<T>> mat(T* p, std::size_t r, std::size_t c) {
  return Eigen::Map<RowMat<T>>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
Eigen::Map<const RowMat<T>> mat(const T* p, std::size_t r, std::size_t c) {
  return Eigen::Map<const RowMat<T>>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
void accumulate(const Var<T>& v, const Tensor<T>& g) {
  if (!v.requires_grad()) return;
  auto& buf = v.tape().grad_buffer(v.id());
  T* d = buf.ptr();
  const T* s = g.ptr();
  for (std::size_t i = 0, n = buf.size(); i < n; ++i) d[i] += s[i];
}

inline void same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw GeometryError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

inline std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// [m,k] x [k,n] -> [m,n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw GeometryError("matmul: incompatible shapes " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  detail::mat(out.ptr(), m, n).noalias() = detail::mat(av.ptr(), m, k) * detail::mat(bv.ptr(), k, n);
  return a.tape().push(std::move(out), {a, b}, [a, b, m, k, n](const Tensor<T>& g, const Tensor<T>&) {
    auto dc = detail::mat(g.ptr(), m, n);
    if (a.requires_grad()) {
      auto& da = a.tape().grad_buffer(a.id());
      detail::mat(da.ptr(), m, k).noalias() += dc * detail::mat(b.value().ptr(), k, n).transpose();
    }
    if (b.requires_grad()) {
      auto& db = b.tape().grad_buffer(b.id());
      detail::mat(db.ptr(), k, n).noalias() += detail::mat(a.value().ptr(), m, k).transpose() * dc;
    }
  });
}

// Batched matmul: [g,m,k] x [g,k,n] -> [g,m,n], or with transpose_b
// [g,m,k] x [g,n,k]^T -> [g,m,n].
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b = false) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != (transpose_b ? bv.dim(2) : bv.dim(1))) {
    throw GeometryError("bmm: incompatible shapes " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const std::size_t groups = av.dim(0), m = av.dim(1), k = av.dim(2);
  const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
  Tensor<T> out({groups, m, n});
  for (std::size_t g = 0; g < groups; ++g) {
    auto A = detail::mat(av.ptr() + g * m * k, m, k);
    auto C = detail::mat(out.ptr() + g * m * n, m, n);
    if (transpose_b) {
      C.noalias() = A * detail::mat(bv.ptr() + g * n * k, n, k).transpose();
    } else {
      C.noalias() = A * detail::mat(bv.ptr() + g * k * n, k, n);
    }
  }
  return a.tape().push(std::move(out), {a, b}, [a, b, groups, m, k, n, transpose_b](const Tensor<T>& grad, const Tensor<T>&) {
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t g = 0; g < groups; ++g) {
      auto dC = detail::mat(grad.ptr() + g * m * n, m, n);
      auto A = detail::mat(av.ptr() + g * m * k, m, k);
      if (transpose_b) {
        auto B = detail::mat(bv.ptr() + g * n * k, n, k);
        if (a.requires_grad()) {
          detail::mat(a.tape().grad_buffer(a.id()).ptr() + g * m * k, m, k).noalias() += dC * B;
        }
        if (b.requires_grad()) {
          detail::mat(b.tape().grad_buffer(b.id()).ptr() + g * n * k, n, k).noalias() += dC.transpose() * A;
        }
      } else {
        auto B = detail::mat(bv.ptr() + g * k * n, k, n);
        if (a.requires_grad()) {
          detail::mat(a.tape().grad_buffer(a.id()).ptr() + g * m * k, m, k).noalias() += dC * B.transpose();
        }
        if (b.requires_grad()) {
          detail::mat(b.tape().grad_buffer(b.id()).ptr() + g * k * n, k, n).noalias() += A.transpose() * dC;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Element-wise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bp[i];
  return a.tape().push(std::move(out), {a, b}, [a, b](const Tensor<T>& g, const Tensor<T>&) {
    detail::accumulate(a, g);
    detail::accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bp[i];
  return a.tape().push(std::move(out), {a, b}, [a, b](const Tensor<T>& g, const Tensor<T>&) {
    detail::accumulate(a, g);
    if (b.requires_grad()) {
      auto& db = b.tape().grad_buffer(b.id());
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bp[i];
  return a.tape().push(std::move(out), {a, b}, [a, b](const Tensor<T>& g, const Tensor<T>&) {
    if (a.requires_grad()) {
      auto& da = a.tape().grad_buffer(a.id());
      const T* bp = b.value().ptr();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bp[i];
    }
    if (b.requires_grad()) {
      auto& db = b.tape().grad_buffer(b.id());
      const T* ap = a.value().ptr();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * ap[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.tape().push(std::move(out), {a}, [a, factor](const Tensor<T>& g, const Tensor<T>&) {
    auto& da = a.tape().grad_buffer(a.id());
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * factor;
  });
}

// x[..., n] + bias[n], broadcast over all leading dimensions.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  const std::size_t n = detail::last_dim(x.shape());
  if (bias.value().size() != n) {
    throw GeometryError("add_bias: bias of size " + std::to_string(bias.value().size()) + " vs last dim " +
                        std::to_string(n));
  }
  Tensor<T> out = x.value();
  const T* bp = bias.value().ptr();
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.ptr() + r * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += bp[j];
  }
  return x.tape().push(std::move(out), {x, bias}, [x, bias, rows, n](const Tensor<T>& g, const Tensor<T>&) {
    detail::accumulate(x, g);
    if (bias.requires_grad()) {
      auto& db = bias.tape().grad_buffer(bias.id());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) db[j] += g[r * n + j];
      }
    }
  });
}

// x W + b for x [rows, in], W [in, out], b [out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return add_bias(matmul(x, weight), bias);
}

// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out = x.value();
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (auto& v : out.data()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return x.tape().push(std::move(out), {x}, [x](const Tensor<T>& g, const Tensor<T>&) {
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    auto& dx = x.tape().grad_buffer(x.id());
    const T* xp = x.value().ptr();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T v = xp[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      dx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

// |x| with subgradient 0 at 0.
template <typename T>
Var<T> abs(const Var<T>& x) {
  Tensor<T> out = x.value();
  auto& tape = x.tape();
  for (auto& v : out.data()) {
    tape.note_branch(v > T(0) ? 1 : (v < T(0) ? 2 : 3));
    v = std::abs(v);
  }
  return tape.push(std::move(out), {x}, [x](const Tensor<T>& g, const Tensor<T>&) {
    auto& dx = x.tape().grad_buffer(x.id());
    const T* xp = x.value().ptr();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T s = xp[i] > T(0) ? T(1) : (xp[i] < T(0) ? T(-1) : T(0));
      dx[i] += g[i] * s;
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations over the last dimension

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const std::size_t n = detail::last_dim(x.shape());
  Tensor<T> out = x.value();
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.ptr() + r * n;
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
  return x.tape().push(std::move(out), {x}, [x, rows, n](const Tensor<T>& g, const Tensor<T>& y) {
    auto& dx = x.tape().grad_buffer(x.id());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.ptr() + r * n;
      const T* gr = g.ptr() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      T* dr = dx.ptr() + r * n;
      for (std::size_t j = 0; j < n; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

// Per-row layer normalization with learnable scale and shift (biased variance).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::size_t n = detail::last_dim(x.shape());
  if (gamma.value().size() != n || beta.value().size() != n) throw GeometryError("layer_norm: scale/shift width mismatch");
  const auto& xv = x.value();
  const std::size_t rows = xv.size() / n;
  Tensor<T> xhat(xv.shape());
  std::vector<T> rstd(rows);
  Tensor<T> out(xv.shape());
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(n);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    T* hr = xhat.ptr() + r * n;
    T* orow = out.ptr() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      hr[j] = (xr[j] - mu) * rs;
      orow[j] = hr[j] * gp[j] + bp[j];
    }
  }
  return x.tape().push(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, rows, n, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor<T>& g, const Tensor<T>&) {
                         const T* gp = gamma.value().ptr();
                         T* dg = gamma.requires_grad() ? gamma.tape().grad_buffer(gamma.id()).ptr() : nullptr;
                         T* db = beta.requires_grad() ? beta.tape().grad_buffer(beta.id()).ptr() : nullptr;
                         T* dx = x.requires_grad() ? x.tape().grad_buffer(x.id()).ptr() : nullptr;
                         std::vector<T> dh(n);
                         for (std::size_t r = 0; r < rows; ++r) {
                           const T* gr = g.ptr() + r * n;
                           const T* hr = xhat.ptr() + r * n;
                           T mean_dh = 0, mean_dh_h = 0;
                           for (std::size_t j = 0; j < n; ++j) {
                             if (dg) dg[j] += gr[j] * hr[j];
                             if (db) db[j] += gr[j];
                             dh[j] = gr[j] * gp[j];
                             mean_dh += dh[j];
                             mean_dh_h += dh[j] * hr[j];
                           }
                           if (!dx) continue;
                           mean_dh /= T(n);
                           mean_dh_h /= T(n);
                           T* dr = dx + r * n;
                           for (std::size_t j = 0; j < n; ++j) dr[j] += rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                         }
                       });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  // Neumaier-compensated accumulation in double.
  double total = 0, carry = 0;
  for (T v : x.value().data()) {
    const double t = total + v;
    carry += std::abs(total) >= std::abs(double(v)) ? (total - t) + v : (double(v) - t) + total;
    total = t;
  }
  return x.tape().push(Tensor<T>::scalar(static_cast<T>(total + carry)), {x}, [x](const Tensor<T>& g, const Tensor<T>&) {
    auto& dx = x.tape().grad_buffer(x.id());
    const T s = g[0];
    for (auto& v : dx.data()) v += s;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape().push(std::move(out), {x}, [x](const Tensor<T>& g, const Tensor<T>&) {
    auto& dx = x.tape().grad_buffer(x.id());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
  });
}

namespace detail {

// Maps every flat output index of permute(shape, axes) to its flat input index.
inline std::vector<std::size_t> permutation_index(const Shape& in_shape, const std::vector<std::size_t>& axes) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];
  const std::size_t total = shape_size(in_shape);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t o = 0; o < total; ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += counter[i] * in_stride[axes[i]];
    map[o] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return map;
}

}  // namespace detail

template <typename T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> axes) {
  const auto& in_shape = x.shape();
  if (axes.size() != in_shape.size()) throw GeometryError("permute: axis count does not match rank");
  std::vector<bool> seen(axes.size(), false);
  for (auto a : axes) {
    if (a >= axes.size() || seen[a]) throw GeometryError("permute: axes are not a permutation");
    seen[a] = true;
  }
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = in_shape[axes[i]];
  auto map = detail::permutation_index(in_shape, axes);
  Tensor<T> out(out_shape);
  const T* src = x.value().ptr();
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = src[map[o]];
  return x.tape().push(std::move(out), {x}, [x, map = std::move(map)](const Tensor<T>& g, const Tensor<T>&) {
    auto& dx = x.tape().grad_buffer(x.id());
    for (std::size_t o = 0; o < map.size(); ++o) dx[map[o]] += g[o];
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  if (x.value().rank() != 2) throw GeometryError("transpose: rank-2 input required");
  return permute(x, {1, 0});
}

// Concatenate along `axis`; all other dimensions must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw GeometryError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw GeometryError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw GeometryError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) throw GeometryError("concat: dimension mismatch on axis " + std::to_string(i));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_block = out_shape[axis] * inner;
  Tensor<T> out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.shape()[axis] * inner;
    const T* src = p.value().ptr();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * block, block, out.ptr() + o * out_block + offset);
    offsets.push_back(offset);
    offset += block;
  }
  return parts.front().tape().push(std::move(out), parts, [parts, offsets, outer, inner, out_block, axis](const Tensor<T>& g, const Tensor<T>&) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& p = parts[k];
      if (!p.requires_grad()) continue;
      const std::size_t block = p.shape()[axis] * inner;
      auto& dp = p.tape().grad_buffer(p.id());
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = g.ptr() + o * out_block + offsets[k];
        T* dst = dp.ptr() + o * block;
        for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
      }
    }
  });
}

// Rows of x [R, C] at `indices` (repeats allowed) -> [indices.size(), C].
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<std::size_t> indices) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw GeometryError("gather_rows: rank-2 input required");
  if (indices.empty()) throw GeometryError("gather_rows: empty index set");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor<T> out({indices.size(), cols});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= rows) throw GeometryError("gather_rows: index out of range");
    std::copy_n(xv.ptr() + indices[k] * cols, cols, out.ptr() + k * cols);
  }
  return x.tape().push(std::move(out), {x}, [x, cols, indices = std::move(indices)](const Tensor<T>& g, const Tensor<T>&) {
    auto& dx = x.tape().grad_buffer(x.id());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      T* dst = dx.ptr() + indices[k] * cols;
      const T* src = g.ptr() + k * cols;
      for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
    }
  });
}

// Scatter-add rows of x [K, C] into a zero [rows, C] tensor at `indices`.
template <typename T>
Var<T> scatter_rows(const Var<T>& x, std::vector<std::size_t> indices, std::size_t rows) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || xv.dim(0) != indices.size()) throw GeometryError("scatter_rows: index count mismatch");
  const std::size_t cols = xv.dim(1);
  Tensor<T> out({rows, cols});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= rows) throw GeometryError("scatter_rows: index out of range");
    T* dst = out.ptr() + indices[k] * cols;
    const T* src = xv.ptr() + k * cols;
    for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
  }
  return x.tape().push(std::move(out), {x}, [x, cols, indices = std::move(indices)](const Tensor<T>& g, const Tensor<T>&) {
    auto& dx = x.tape().grad_buffer(x.id());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const T* src = g.ptr() + indices[k] * cols;
      T* dst = dx.ptr() + k * cols;
      for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
    }
  });
}

}  // namespace sgmim
