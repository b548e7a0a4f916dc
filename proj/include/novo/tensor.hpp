#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// Every op that sees an active tape (see TapeScope) and at least one input
// with requires_grad set records a backward closure. BasicTape::backward
// replays those closures newest-first, which is a reverse topological order
// because ops are recorded in the order their outputs are created.
//
// The library is templated on the scalar so gradient checks can run the
// same code in 64-bit; models train with Tensor (32-bit).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace novo {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor();
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value);

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return s_->data.size(); }

  std::span<const T> values() const { return s_->data; }
  // In-place writes are reserved for optimizers and parameter surgery.
  std::span<T> mutable_values() { return s_->data; }
  T operator[](std::size_t i) const { return s_->data[i]; }
  T item() const;

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }
  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const T> grad() const { return s_->grad; }
  std::span<T> mutable_grad() { return s_->grad_buffer(); }
  void zero_grad() { s_->grad.clear(); }

  // Deep copy of the values, detached from any tape.
  BasicTensor clone(bool requires_grad = false) const;

  const std::shared_ptr<TensorStorage<T>>& storage() const { return s_; }
  bool same_storage(const BasicTensor& other) const { return s_ == other.s_; }

 private:
  explicit BasicTensor(std::shared_ptr<TensorStorage<T>> s) : s_(std::move(s)) {}
  template <typename U>
  friend BasicTensor<U> make_result(Shape shape, std::vector<U> values, bool track);

  std::shared_ptr<TensorStorage<T>> s_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
class BasicTape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::shared_ptr<TensorStorage<T>> output, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure once, newest
  // first. A tape can be replayed only once; clear() it before reuse.
  void backward(const BasicTensor<T>& loss);

  void clear();
  std::size_t size() const { return entries_.size(); }

  // Tape that ops record onto in the current thread, or nullptr.
  static BasicTape* active();
  // Installs `tape` as the thread's active tape and returns the previous one.
  static BasicTape* exchange_active(BasicTape* tape);

 private:
  struct Entry {
    std::shared_ptr<TensorStorage<T>> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool replayed_ = false;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

// Makes `tape` the recording target for this thread for the scope lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(BasicTape<T>& tape) : previous_(BasicTape<T>::exchange_active(&tape)) {}
  ~TapeScope() { BasicTape<T>::exchange_active(previous_); }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

// ---- elementwise -----------------------------------------------------------

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T offset);
// x[..., n] + row[n], broadcast over all leading axes.
template <typename T> BasicTensor<T> add_row(const BasicTensor<T>& x, const BasicTensor<T>& row);
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> reciprocal(const BasicTensor<T>& x);

// ---- linear algebra --------------------------------------------------------

template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
// Batched product: [b, m, k] x [b, k, n] -> [b, m, n].
template <typename T> BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b);
// Swaps the last two axes (rank 2 or 3).
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& x);

// ---- layout ----------------------------------------------------------------

template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T> BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T> BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <typename T> BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts);
template <typename T> BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end);
// Stacks `count` copies along a new leading axis.
template <typename T> BasicTensor<T> repeat(const BasicTensor<T>& x, std::size_t count);
// Gathers rows of a [vocab, d] table.
template <typename T>
BasicTensor<T> embedding_lookup(const BasicTensor<T>& table, std::span<const std::size_t> indices);

// ---- normalization and reductions ------------------------------------------

template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias, T eps);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);
// Per-row cross-entropy of softmax(logits[b, c]) against integer labels -> [b].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> labels);

// Casts values (not tape history) to another scalar type.
template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& x, bool requires_grad = false) {
  std::vector<To> out(x.values().begin(), x.values().end());
  return BasicTensor<To>(x.shape(), std::move(out), requires_grad);
}

}  // namespace novo
