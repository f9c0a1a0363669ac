#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "pathmamba/error.hpp"

namespace pathmamba {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass touches it
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy. The element type (float or double) is fixed at creation.
template <class T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "Tensor supports 32-bit and 64-bit floats only");

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : s_(std::make_shared<TensorStorage<T>>()) {
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    s_->data.assign(shape_numel(shape), fill);
    s_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<TensorStorage<T>>()) {
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    if (shape_numel(shape) != values.size())
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    s_->data = std::move(values);
    s_->shape = std::move(shape);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T* ptr() { return s_->data.data(); }
  const T* ptr() const { return s_->data.data(); }
  std::vector<T>& vec() & { return s_->data; }
  const std::vector<T>& vec() const& { return s_->data; }
  std::vector<T> vec() && { return s_->data; }  // temporaries hand out a copy

  T& operator[](std::size_t i) { return s_->data[i]; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return s_->data[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    s_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return s_ && s_->grad.size() == s_->data.size(); }
  std::span<const T> grad() const { return s_->grad; }
  std::span<T> grad() { return s_->grad; }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }
  void drop_grad() { s_->grad.clear(); }

  /// Deep copy without gradient history.
  Tensor clone() const {
    Tensor t;
    t.s_ = std::make_shared<TensorStorage<T>>();
    t.s_->shape = s_->shape;
    t.s_->data = s_->data;
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> v(s_->data.begin(), s_->data.end());
    return Tensor<U>(s_->shape, std::move(v));
  }

  const std::shared_ptr<TensorStorage<T>>& storage() const { return s_; }
  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

/// Ordered record of backward rules. A tape belongs to one thread; the
/// thread-local active tape is installed with TapeScope.
template <class T>
class Tape {
 public:
  using Rule = std::function<void()>;

  void record(Rule rule) { rules_.push_back(std::move(rule)); }
  std::size_t size() const { return rules_.size(); }
  bool consumed() const { return consumed_; }

  void reset() {
    rules_.clear();
    consumed_ = false;
  }

  /// Seeds d(loss)/d(loss) = 1 and replays rules in reverse order.
  void backward(const Tensor<T>& loss) {
    if (consumed_) throw StateError("backward called twice without reset");
    if (!loss.defined() || loss.numel() != 1)
      throw DimensionError("backward requires a scalar loss");
    consumed_ = true;
    if (!loss.requires_grad()) return;
    auto& g = loss.storage()->ensure_grad();
    g[0] += T(1);
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  }

 private:
  std::vector<Rule> rules_;
  bool consumed_ = false;
};

namespace detail {
template <class T>
inline thread_local Tape<T>* active_tape = nullptr;
}  // namespace detail

template <class T>
Tape<T>* active_tape() {
  return detail::active_tape<T>;
}

/// Installs a tape as the thread's active tape for the scope's lifetime.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(detail::active_tape<T>) { detail::active_tape<T> = &tape; }
  ~TapeScope() { detail::active_tape<T> = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Suspends recording (e.g. for evaluation or finite differences).
template <class T>
class NoGradScope {
 public:
  NoGradScope() : prev_(detail::active_tape<T>) { detail::active_tape<T> = nullptr; }
  ~NoGradScope() { detail::active_tape<T> = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* prev_;
};

template <class T>
void backward(const Tensor<T>& loss) {
  auto* tape = active_tape<T>();
  if (tape == nullptr) throw StateError("backward called with no active tape");
  tape->backward(loss);
}

/// True when an op on these inputs must record a backward rule.
template <class T, class... Ts>
bool needs_record(const Ts&... inputs) {
  return active_tape<T>() != nullptr && (inputs.requires_grad() || ...);
}

template <class T>
bool needs_record_list(const std::vector<Tensor<T>>& inputs) {
  if (active_tape<T>() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
}

/// Registers `rule` on the active tape and marks `out` as differentiable.
/// The rule receives the output gradient (skipped when nothing flowed in).
template <class T, class F>
void record_op(Tensor<T>& out, F&& rule) {
  out.set_requires_grad(true);
  std::weak_ptr<TensorStorage<T>> weak_out = out.storage();
  active_tape<T>()->record([weak_out, rule = std::forward<F>(rule)]() {
    auto o = weak_out.lock();
    if (!o || o->grad.size() != o->data.size()) return;
    rule(std::span<const T>(o->grad));
  });
}

/// Gradient buffer of an input, or nullptr when it does not require grad.
template <class T>
T* grad_sink(const Tensor<T>& t) {
  if (!t.requires_grad()) return nullptr;
  return t.storage()->ensure_grad().data();
}

}  // namespace pathmamba
