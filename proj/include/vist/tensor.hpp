#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vist/errors.hpp"

namespace vist {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool is_leaf = true;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
  }
};

}  // namespace detail

/// Dense row-major array of reals. Copies share storage (handle semantics),
/// so a parameter tensor updated in place is seen by every holder.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_size(shape) != data.size()) {
      throw ShapeError("shape " + shape_str(shape) + " needs " +
                       std::to_string(shape_size(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor vector(std::vector<T> values, bool requires_grad = false) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values,
                       bool requires_grad = false) {
    return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }

  T operator[](std::size_t i) const { return impl_->data[i]; }
  T at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->shape[1] + c]; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy detached from any tape.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(impl_->shape, impl_->data, requires_grad);
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl<T>& impl() const { return *impl_; }
  const std::shared_ptr<detail::TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Ordered record of differentiable operations. Recording is active while a
/// Tape::Recording guard is alive on the current thread; ops executed with no
/// active tape produce constants.
template <typename T>
class Tape {
 public:
  using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

  struct Record {
    const char* op;
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    std::function<void()> backward;
  };

  class Recording {
   public:
    explicit Recording(Tape& tape) : previous_(active_) { active_ = &tape; }
    ~Recording() { active_ = previous_; }
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] Recording record() { return Recording(*this); }

  static Tape* active() { return active_; }

  void push(Record rec) { records_.push_back(std::move(rec)); }
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  /// Propagates d(loss)/d(x) into every requires_grad leaf reachable from
  /// loss. Leaf gradients accumulate across calls; intermediates are reset.
  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) {
      throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
    }
    const auto* target = loss.impl_ptr().get();
    std::size_t last = records_.size();
    bool found = false;
    for (std::size_t i = records_.size(); i-- > 0;) {
      if (records_[i].output.get() == target) {
        last = i;
        found = true;
        break;
      }
    }
    if (!found) {
      if (loss.requires_grad() && loss.impl().is_leaf) {
        loss.impl().ensure_grad();
        loss.impl().grad[0] += T{1};
        return;
      }
      throw std::logic_error("backward: loss was not recorded on this tape");
    }
    for (std::size_t i = 0; i <= last; ++i) records_[i].output->grad.clear();
    loss.impl().ensure_grad();
    loss.impl().grad[0] = T{1};
    for (std::size_t i = last + 1; i-- > 0;) {
      auto& rec = records_[i];
      if (rec.output->grad.empty()) continue;
      rec.backward();
    }
  }

 private:
  static inline thread_local Tape* active_ = nullptr;
  std::vector<Record> records_;
};

template <typename T>
void backward(Tape<T>& tape, const Tensor<T>& loss) {
  tape.backward(loss);
}

}  // namespace vist
