#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vist/tensor.hpp"

// Differentiable operations over Tensor<T>. No implicit broadcasting: binary
// elementwise ops require identical shapes, and row-wise bias addition is its
// own named op.

namespace vist {

namespace detail {

template <typename T>
using ImplRaw = TensorImpl<T>*;

// Gradient destination, or nullptr when the input is a constant.
template <typename T>
inline ImplRaw<T> sink(const Tensor<T>& t) {
  return t.requires_grad() ? &t.impl() : nullptr;
}

template <typename T>
inline std::vector<T>& grad_of(ImplRaw<T> p) {
  p->ensure_grad();
  return p->grad;
}

template <typename T, typename Backward>
Tensor<T> record(const char* op, Tensor<T> out, const std::vector<Tensor<T>>& inputs,
                 Backward bw) {
  auto* tape = Tape<T>::active();
  if (tape == nullptr) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  out.impl().requires_grad = true;
  out.impl().is_leaf = false;
  typename Tape<T>::Record rec;
  rec.op = op;
  rec.inputs.reserve(inputs.size());
  for (const auto& in : inputs) rec.inputs.push_back(in.impl_ptr());
  rec.output = out.impl_ptr();
  auto* o = out.impl_ptr().get();
  rec.backward = [bw = std::move(bw), o]() { bw(o->grad); };
  tape->push(std::move(rec));
  return out;
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  T e = std::exp(x);
  return e / (T{1} + e);
}

}  // namespace detail

// ---------------------------------------------------------------- products

/// a[m×k] · b[k×n] -> [m×n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " · " +
                     shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T{0});
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto da = detail::sink(a), db = detail::sink(b);
  auto ai = a.impl_ptr().get(), bi = b.impl_ptr().get();
  return detail::record("matmul", Tensor<T>({m, n}, std::move(out)), {a, b},
                        [=](const std::vector<T>& g) {
                          const T* Ad = ai->data.data();
                          const T* Bd = bi->data.data();
                          if (da) {
                            auto& ga = detail::grad_of(da);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                T s{0};
                                const T* grow = g.data() + i * n;
                                const T* brow = Bd + p * n;
                                for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                                ga[i * k + p] += s;
                              }
                          }
                          if (db) {
                            auto& gb = detail::grad_of(db);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                const T av = Ad[i * k + p];
                                const T* grow = g.data() + i * n;
                                T* gbrow = gb.data() + p * n;
                                for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                              }
                          }
                        });
}

/// w[m×k] · x[k] -> [m]
template <typename T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& x) {
  detail::require_rank("matvec", w, 2);
  detail::require_rank("matvec", x, 1);
  const std::size_t m = w.dim(0), k = w.dim(1);
  if (x.dim(0) != k) {
    throw ShapeError("matvec: inner dimensions differ, " + shape_str(w.shape()) + " · " +
                     shape_str(x.shape()));
  }
  std::vector<T> out(m);
  const T* W = w.data().data();
  const T* X = x.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T s{0};
    const T* row = W + i * k;
    for (std::size_t j = 0; j < k; ++j) s += row[j] * X[j];
    out[i] = s;
  }
  auto dw = detail::sink(w), dx = detail::sink(x);
  auto wi = w.impl_ptr().get(), xi = x.impl_ptr().get();
  return detail::record("matvec", Tensor<T>({m}, std::move(out)), {w, x},
                        [=](const std::vector<T>& g) {
                          const T* Wd = wi->data.data();
                          const T* Xd = xi->data.data();
                          if (dw) {
                            auto& gw = detail::grad_of(dw);
                            for (std::size_t i = 0; i < m; ++i) {
                              const T gi = g[i];
                              T* row = gw.data() + i * k;
                              for (std::size_t j = 0; j < k; ++j) row[j] += gi * Xd[j];
                            }
                          }
                          if (dx) {
                            auto& gx = detail::grad_of(dx);
                            for (std::size_t i = 0; i < m; ++i) {
                              const T gi = g[i];
                              const T* row = Wd + i * k;
                              for (std::size_t j = 0; j < k; ++j) gx[j] += gi * row[j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  auto da = detail::sink(a);
  return detail::record("transpose", Tensor<T>({n, m}, std::move(out)), {a},
                        [=](const std::vector<T>& g) {
                          if (!da) return;
                          auto& ga = detail::grad_of(da);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                        });
}

// ------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto da = detail::sink(a), db = detail::sink(b);
  return detail::record("add", Tensor<T>(a.shape(), std::move(out)), {a, b},
                        [=](const std::vector<T>& g) {
                          if (da) {
                            auto& ga = detail::grad_of(da);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          }
                          if (db) {
                            auto& gb = detail::grad_of(db);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                          }
                        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto da = detail::sink(a), db = detail::sink(b);
  return detail::record("sub", Tensor<T>(a.shape(), std::move(out)), {a, b},
                        [=](const std::vector<T>& g) {
                          if (da) {
                            auto& ga = detail::grad_of(da);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          }
                          if (db) {
                            auto& gb = detail::grad_of(db);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                          }
                        });
}

/// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto da = detail::sink(a), db = detail::sink(b);
  auto ai = a.impl_ptr().get(), bi = b.impl_ptr().get();
  return detail::record("mul", Tensor<T>(a.shape(), std::move(out)), {a, b},
                        [=](const std::vector<T>& g) {
                          if (da) {
                            auto& ga = detail::grad_of(da);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
                          }
                          if (db) {
                            auto& gb = detail::grad_of(db);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  auto da = detail::sink(a);
  return detail::record("scale", Tensor<T>(a.shape(), std::move(out)), {a},
                        [=](const std::vector<T>& g) {
                          if (!da) return;
                          auto& ga = detail::grad_of(da);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
                        });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_scalar(a[i]);
  auto da = detail::sink(a);
  Tensor<T> result(a.shape(), std::move(out));
  auto yi = result.impl_ptr().get();
  return detail::record("sigmoid", result, {a}, [=](const std::vector<T>& g) {
    if (!da) return;
    auto& ga = detail::grad_of(da);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = yi->data[i];
      ga[i] += g[i] * s * (T{1} - s);
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  auto da = detail::sink(a);
  Tensor<T> result(a.shape(), std::move(out));
  auto yi = result.impl_ptr().get();
  return detail::record("tanh", result, {a}, [=](const std::vector<T>& g) {
    if (!da) return;
    auto& ga = detail::grad_of(da);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T t = yi->data[i];
      ga[i] += g[i] * (T{1} - t * t);
    }
  });
}

/// tanh-approximated GELU, used in the patch-encoder MLP.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a[i];
    out[i] = T(0.5) * x * (T{1} + std::tanh(kC * (x + kA * x * x * x)));
  }
  auto da = detail::sink(a);
  auto ai = a.impl_ptr().get();
  return detail::record("gelu", Tensor<T>(a.shape(), std::move(out)), {a},
                        [=](const std::vector<T>& g) {
                          if (!da) return;
                          auto& ga = detail::grad_of(da);
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const T x = ai->data[i];
                            const T t = std::tanh(kC * (x + kA * x * x * x));
                            const T d = T(0.5) * (T{1} + t) +
                                        T(0.5) * x * (T{1} - t * t) * kC * (T{1} + T(3) * kA * x * x);
                            ga[i] += g[i] * d;
                          }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s{0};
  for (auto v : a.data()) s += v;
  auto da = detail::sink(a);
  return detail::record("sum", Tensor<T>::scalar(s), {a}, [=](const std::vector<T>& g) {
    if (!da) return;
    auto& ga = detail::grad_of(da);
    for (auto& v : ga) v += g[0];
  });
}

// --------------------------------------------------------- structural ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto da = detail::sink(a);
  return detail::record("reshape", Tensor<T>(std::move(shape), a.values()), {a},
                        [=](const std::vector<T>& g) {
                          if (!da) return;
                          auto& ga = detail::grad_of(da);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis = 0) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: part " + shape_str(s) + " disagrees with " + shape_str(first) +
                       " off axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const auto split = detail::split_axis(out_shape, axis);
  std::vector<T> out(shape_size(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t ext = p.dim(axis);
    for (std::size_t o = 0; o < split.outer; ++o) {
      const T* src = p.data().data() + o * ext * split.inner;
      T* dst = out.data() + (o * split.extent + offset) * split.inner;
      std::copy(src, src + ext * split.inner, dst);
    }
    offset += ext;
  }
  std::vector<detail::ImplRaw<T>> sinks;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    sinks.push_back(detail::sink(p));
    extents.push_back(p.dim(axis));
  }
  return detail::record("concat", Tensor<T>(out_shape, std::move(out)), parts,
                        [=](const std::vector<T>& g) {
                          for (std::size_t k = 0; k < sinks.size(); ++k) {
                            if (!sinks[k]) continue;
                            auto& gp = detail::grad_of(sinks[k]);
                            const std::size_t ext = extents[k];
                            for (std::size_t o = 0; o < split.outer; ++o) {
                              const T* src = g.data() + (o * split.extent + offsets[k]) * split.inner;
                              T* dst = gp.data() + o * ext * split.inner;
                              for (std::size_t i = 0; i < ext * split.inner; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

/// Elements [begin, begin+length) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t length) {
  if (axis >= a.rank() || length == 0 || begin + length > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + length) + ") invalid on axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  const auto split = detail::split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<T> out(shape_size(out_shape));
  for (std::size_t o = 0; o < split.outer; ++o) {
    const T* src = a.data().data() + (o * split.extent + begin) * split.inner;
    std::copy(src, src + length * split.inner, out.data() + o * length * split.inner);
  }
  auto da = detail::sink(a);
  return detail::record("slice", Tensor<T>(out_shape, std::move(out)), {a},
                        [=](const std::vector<T>& g) {
                          if (!da) return;
                          auto& ga = detail::grad_of(da);
                          for (std::size_t o = 0; o < split.outer; ++o) {
                            T* dst = ga.data() + (o * split.extent + begin) * split.inner;
                            const T* src = g.data() + o * length * split.inner;
                            for (std::size_t i = 0; i < length * split.inner; ++i) dst[i] += src[i];
                          }
                        });
}

/// Row r of a matrix as a vector (embedding lookup).
template <typename T>
Tensor<T> row(const Tensor<T>& a, std::size_t r) {
  detail::require_rank("row", a, 2);
  if (r >= a.dim(0)) {
    throw ShapeError("row: index " + std::to_string(r) + " out of range for " +
                     shape_str(a.shape()));
  }
  const std::size_t n = a.dim(1);
  std::vector<T> out(a.data().begin() + r * n, a.data().begin() + (r + 1) * n);
  auto da = detail::sink(a);
  return detail::record("row", Tensor<T>({n}, std::move(out)), {a},
                        [=](const std::vector<T>& g) {
                          if (!da) return;
                          auto& ga = detail::grad_of(da);
                          for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[j];
                        });
}

/// Stacks equal-length vectors as the rows of a matrix.
template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  for (const auto& r : rows) detail::require_rank("stack_rows", r, 1);
  auto m = concat(rows, 0);
  return reshape(m, Shape{rows.size(), rows.front().dim(0)});
}

/// x[m×n] + b[n] added to every row.
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require_rank("add_rowwise", x, 2);
  detail::require_rank("add_rowwise", b, 1);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (b.dim(0) != n) {
    throw ShapeError("add_rowwise: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] + b[j];
  auto dx = detail::sink(x), db = detail::sink(b);
  return detail::record("add_rowwise", Tensor<T>({m, n}, std::move(out)), {x, b},
                        [=](const std::vector<T>& g) {
                          if (dx) {
                            auto& gx = detail::grad_of(dx);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                          }
                          if (db) {
                            auto& gb = detail::grad_of(db);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                          }
                        });
}

/// Column-wise mean of a[m×n] -> [n].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  detail::require_rank("mean_rows", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(n, T{0});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
  const T inv = T{1} / static_cast<T>(m);
  for (auto& v : out) v *= inv;
  auto da = detail::sink(a);
  return detail::record("mean_rows", Tensor<T>({n}, std::move(out)), {a},
                        [=](const std::vector<T>& g) {
                          if (!da) return;
                          auto& ga = detail::grad_of(da);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
                        });
}

// ----------------------------------------------------------- normalizers

/// Softmax along `axis`, computed with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  const auto sp = detail::split_axis(x.shape(), axis);
  std::vector<T> out(x.size());
  const T* X = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      auto at = [&](std::size_t k) { return (o * sp.extent + k) * sp.inner + in; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < sp.extent; ++k) mx = std::max(mx, X[at(k)]);
      T total{0};
      for (std::size_t k = 0; k < sp.extent; ++k) {
        out[at(k)] = std::exp(X[at(k)] - mx);
        total += out[at(k)];
      }
      for (std::size_t k = 0; k < sp.extent; ++k) out[at(k)] /= total;
    }
  auto dx = detail::sink(x);
  Tensor<T> result(x.shape(), std::move(out));
  auto yi = result.impl_ptr().get();
  return detail::record("softmax", result, {x}, [=](const std::vector<T>& g) {
    if (!dx) return;
    auto& gx = detail::grad_of(dx);
    const auto& y = yi->data;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        auto at = [&](std::size_t k) { return (o * sp.extent + k) * sp.inner + in; };
        T dot{0};
        for (std::size_t k = 0; k < sp.extent; ++k) dot += g[at(k)] * y[at(k)];
        for (std::size_t k = 0; k < sp.extent; ++k) gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
      }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  return softmax(x, x.rank() - 1);
}

/// Per-row layer normalization of x[m×n] with gain and bias of length n.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                          T eps = T(1e-5)) {
  detail::require_rank("layer_norm_rows", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw ShapeError("layer_norm_rows: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " vs rows of " + shape_str(x.shape()));
  }
  std::vector<T> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* r = x.data().data() + i * n;
    T mu{0};
    for (std::size_t j = 0; j < n; ++j) mu += r[j];
    mu /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= static_cast<T>(n);
    inv_std[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (r[j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain[j] + bias[j];
    }
  }
  auto dx = detail::sink(x), dg = detail::sink(gain), db = detail::sink(bias);
  auto gi = gain.impl_ptr().get();
  return detail::record(
      "layer_norm_rows", Tensor<T>({m, n}, std::move(out)), {x, gain, bias},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const std::vector<T>& g) {
        if (dg) {
          auto& gg = detail::grad_of(dg);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
        }
        if (db) {
          auto& gb = detail::grad_of(db);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
        if (dx) {
          auto& gx = detail::grad_of(dx);
          for (std::size_t i = 0; i < m; ++i) {
            T mean_d{0}, mean_dx{0};
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g[i * n + j] * gi->data[j];
              mean_d += d;
              mean_dx += d * xhat[i * n + j];
            }
            mean_d /= static_cast<T>(n);
            mean_dx /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g[i * n + j] * gi->data[j];
              gx[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
      });
}

// ------------------------------------------------------------------ loss

/// Mean negative log-softmax over rows of logits[T×V] whose target differs
/// from pad_index. Pad rows contribute neither loss nor gradient.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, int pad_index) {
  detail::require_rank("cross_entropy", logits, 2);
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(logits.shape()) + " logits");
  }
  std::size_t supervised = 0;
  for (int t : targets) {
    if (t == pad_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw DataError("cross_entropy: target index " + std::to_string(t) +
                      " outside vocabulary of size " + std::to_string(vocab));
    }
    ++supervised;
  }
  if (supervised == 0) throw DataError("cross_entropy: no supervised positions");

  std::vector<T> probs(rows * vocab, T{0});
  T total{0};
  for (std::size_t i = 0; i < rows; ++i) {
    if (targets[i] == pad_index) continue;
    const T* z = logits.data().data() + i * vocab;
    T mx = *std::max_element(z, z + vocab);
    T denom{0};
    for (std::size_t j = 0; j < vocab; ++j) denom += std::exp(z[j] - mx);
    const T log_denom = std::log(denom) + mx;
    total += log_denom - z[targets[i]];
    for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] = std::exp(z[j] - log_denom);
  }
  const T inv = T{1} / static_cast<T>(supervised);
  std::vector<int> tgt(targets.begin(), targets.end());
  auto dl = detail::sink(logits);
  return detail::record(
      "cross_entropy", Tensor<T>::scalar(total * inv), {logits},
      [=, probs = std::move(probs), tgt = std::move(tgt)](const std::vector<T>& g) {
        if (!dl) return;
        auto& gl = detail::grad_of(dl);
        const T s = g[0] * inv;
        for (std::size_t i = 0; i < rows; ++i) {
          if (tgt[i] == pad_index) continue;
          for (std::size_t j = 0; j < vocab; ++j) gl[i * vocab + j] += s * probs[i * vocab + j];
          gl[i * vocab + tgt[i]] -= s;
        }
      });
}

}  // namespace vist
