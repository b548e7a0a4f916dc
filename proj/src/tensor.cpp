#include "novo/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "novo/errors.hpp"

namespace novo {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- tensor / tape -----------------------------------------------------------

template <typename T>
BasicTensor<T>::BasicTensor() : s_(std::make_shared<TensorStorage<T>>()) {
  s_->shape = {0};
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
    : s_(std::make_shared<TensorStorage<T>>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  s_->shape = std::move(shape);
  s_->data = std::move(values);
  s_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T{0}, requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> v(shape_numel(shape), value);
  return BasicTensor(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{}, std::vector<T>{value});
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return s_->shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return s_->data[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone(bool requires_grad) const {
  return BasicTensor(shape(), s_->data, requires_grad);
}

namespace {

template <typename T>
BasicTape<T>*& active_slot() {
  thread_local BasicTape<T>* active = nullptr;
  return active;
}

}  // namespace

template <typename T>
BasicTape<T>* BasicTape<T>::active() {
  return active_slot<T>();
}

template <typename T>
BasicTape<T>* BasicTape<T>::exchange_active(BasicTape* tape) {
  return std::exchange(active_slot<T>(), tape);
}

template <typename T>
void BasicTape<T>::record(std::shared_ptr<TensorStorage<T>> output, BackwardFn fn) {
  entries_.push_back({std::move(output), std::move(fn)});
}

template <typename T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that was not produced under an active tape");
  }
  if (replayed_) throw ContractError("tape already replayed; clear() before recording again");
  replayed_ = true;
  loss.storage()->grad_buffer()[0] += T{1};
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // no path to the loss
    it->fn();
  }
}

template <typename T>
void BasicTape<T>::clear() {
  entries_.clear();
  replayed_ = false;
}

template <typename U>
BasicTensor<U> make_result(Shape shape, std::vector<U> values, bool track) {
  auto s = std::make_shared<TensorStorage<U>>();
  s->shape = std::move(shape);
  s->data = std::move(values);
  s->requires_grad = track;
  return BasicTensor<U>(std::move(s));
}

namespace {

template <typename T>
bool tracking(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (BasicTape<T>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void record(const BasicTensor<T>& out, std::function<void()> fn) {
  BasicTape<T>::active()->record(out.storage(), std::move(fn));
}

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Generic unary elementwise op with derivative f'(x, y).
template <typename T, typename F, typename D>
BasicTensor<T> unary(const BasicTensor<T>& x, F f, D df) {
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  const bool track = tracking({&x});
  auto y = make_result(x.shape(), std::move(out), track);
  if (track) {
    auto xs = x.storage();
    auto ys = y.storage();
    record(y, [xs, ys, df] {
      auto& g = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i] * df(xs->data[i], ys->data[i]);
    });
  }
  return y;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---- elementwise -------------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  const bool track = tracking({&a, &b});
  auto y = make_result(a.shape(), std::move(out), track);
  if (track) {
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    record(y, [as, bs, ys] {
      if (as->requires_grad) {
        auto& g = as->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i];
      }
      if (bs->requires_grad) {
        auto& g = bs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i];
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  const bool track = tracking({&a, &b});
  auto y = make_result(a.shape(), std::move(out), track);
  if (track) {
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    record(y, [as, bs, ys] {
      if (as->requires_grad) {
        auto& g = as->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i];
      }
      if (bs->requires_grad) {
        auto& g = bs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= ys->grad[i];
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  const bool track = tracking({&a, &b});
  auto y = make_result(a.shape(), std::move(out), track);
  if (track) {
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    record(y, [as, bs, ys] {
      if (as->requires_grad) {
        auto& g = as->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        auto& g = bs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i] * as->data[i];
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  return unary(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T offset) {
  return unary(a, [offset](T x) { return x + offset; }, [](T, T) { return T{1}; });
}

template <typename T>
BasicTensor<T> add_row(const BasicTensor<T>& x, const BasicTensor<T>& row) {
  const std::size_t n = row.numel();
  if (x.rank() == 0 || x.shape().back() != n || row.rank() != 1) {
    throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += row[i % n];
  const bool track = tracking({&x, &row});
  auto y = make_result(x.shape(), std::move(out), track);
  if (track) {
    auto xs = x.storage(), rs = row.storage(), ys = y.storage();
    record(y, [xs, rs, ys, n] {
      if (xs->requires_grad) {
        auto& g = xs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i];
      }
      if (rs->requires_grad) {
        auto& g = rs->grad_buffer();
        for (std::size_t i = 0; i < ys->grad.size(); ++i) g[i % n] += ys->grad[i];
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  const auto xv = x.values();
  std::vector<T> cdf(xv.size()), out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    cdf[i] = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
    out[i] = xv[i] * cdf[i];
  }
  const bool track = tracking({&x});
  auto y = make_result(x.shape(), std::move(out), track);
  if (track) {
    auto xs = x.storage();
    auto ys = y.storage();
    record(y, [xs, ys, cdf = std::move(cdf)] {
      auto& g = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xs->data[i];
        g[i] += ys->grad[i] * (cdf[i] + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v));
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
BasicTensor<T> reciprocal(const BasicTensor<T>& x) {
  return unary(x, [](T v) { return T(1) / v; }, [](T, T y) { return -y * y; });
}

// ---- linear algebra ------------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)),
            n = static_cast<int>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m) * n, T{0});
  if (m && n && k) gemm(false, false, m, n, k, T(1), a.values().data(), k, b.values().data(), n, T(0), out.data(), n);
  const bool track = tracking({&a, &b});
  auto y = make_result(Shape{a.dim(0), b.dim(1)}, std::move(out), track);
  if (track) {
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    record(y, [as, bs, ys, m, n, k] {
      if (as->requires_grad) {
        gemm(false, true, m, k, n, T(1), ys->grad.data(), n, bs->data.data(), n, T(1),
             as->grad_buffer().data(), k);
      }
      if (bs->requires_grad) {
        gemm(true, false, k, n, m, T(1), as->data.data(), k, ys->grad.data(), n, T(1),
             bs->grad_buffer().data(), n);
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0);
  const int m = static_cast<int>(a.dim(1)), k = static_cast<int>(a.dim(2)),
            n = static_cast<int>(b.dim(2));
  const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * n,
                    sc = static_cast<std::size_t>(m) * n;
  std::vector<T> out(batch * sc, T{0});
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(false, false, m, n, k, T(1), a.values().data() + i * sa, k, b.values().data() + i * sb, n,
         T(0), out.data() + i * sc, n);
  }
  const bool track = tracking({&a, &b});
  auto y = make_result(Shape{batch, a.dim(1), b.dim(2)}, std::move(out), track);
  if (track) {
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    record(y, [=] {
      for (std::size_t i = 0; i < batch; ++i) {
        if (as->requires_grad) {
          gemm(false, true, m, k, n, T(1), ys->grad.data() + i * sc, n, bs->data.data() + i * sb, n,
               T(1), as->grad_buffer().data() + i * sa, k);
        }
        if (bs->requires_grad) {
          gemm(true, false, k, n, m, T(1), as->data.data() + i * sa, k, ys->grad.data() + i * sc, n,
               T(1), bs->grad_buffer().data() + i * sb, n);
        }
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  if (x.rank() == 2) return permute(x, {1, 0});
  if (x.rank() == 3) return permute(x, {0, 2, 1});
  throw DimensionError("transpose: expected rank 2 or 3, got " + shape_str(x.shape()));
}

// ---- layout ----------------------------------------------------------------------

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  const bool track = tracking({&x});
  auto y = make_result(std::move(shape), std::move(out), track);
  if (track) {
    auto xs = x.storage(), ys = y.storage();
    record(y, [xs, ys] {
      auto& g = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i];
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) throw DimensionError("permute: axis count mismatch for " + shape_str(x.shape()));
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) throw DimensionError("permute: invalid axis order for " + shape_str(x.shape()));
    seen[ax] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  std::vector<std::size_t> src_stride(r);  // input stride along each output axis
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  // Source offset for every output position, shared with backward.
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  {
    std::vector<std::size_t> counter(r, 0);
    std::size_t offset = 0;
    for (std::size_t o = 0; o < index->size(); ++o) {
      (*index)[o] = offset;
      for (std::size_t ax = r; ax-- > 0;) {
        offset += src_stride[ax];
        if (++counter[ax] < out_shape[ax]) break;
        offset -= src_stride[ax] * out_shape[ax];
        counter[ax] = 0;
      }
    }
  }
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[(*index)[o]];
  const bool track = tracking({&x});
  auto y = make_result(std::move(out_shape), std::move(out), track);
  if (track) {
    auto xs = x.storage(), ys = y.storage();
    record(y, [xs, ys, index] {
      auto& g = xs->grad_buffer();
      for (std::size_t o = 0; o < index->size(); ++o) g[(*index)[o]] += ys->grad[o];
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) ok = i == axis || p.shape()[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(first) +
                           " along axis " + std::to_string(axis));
    }
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit whole = split_at(out_shape, axis);
  const std::size_t out_block = whole.len * whole.inner;
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t running = 0;
  for (const auto& p : parts) {
    offsets.push_back(running);
    const std::size_t block = p.shape()[axis] * whole.inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + o * out_block + running);
    }
    running += block;
  }
  bool track = false;
  for (const auto& p : parts) track = track || tracking({&p});
  auto y = make_result(std::move(out_shape), std::move(out), track);
  if (track) {
    std::vector<std::shared_ptr<TensorStorage<T>>> ins;
    for (const auto& p : parts) ins.push_back(p.storage());
    auto ys = y.storage();
    const std::size_t outer = whole.outer, inner = whole.inner;
    record(y, [ins, ys, offsets, outer, inner, out_block, axis] {
      for (std::size_t j = 0; j < ins.size(); ++j) {
        if (!ins[j]->requires_grad) continue;
        const std::size_t block = ins[j]->shape[axis] * inner;
        auto& g = ins[j]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = ys->grad.data() + o * out_block + offsets[j];
          T* dst = g.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
  return concat(parts, 0);
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.shape()[axis]) {
    throw DimensionError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t in_block = s.len * s.inner, out_block = (end - begin) * s.inner,
                    skip = begin * s.inner;
  std::vector<T> out(s.outer * out_block);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + o * in_block + skip, out_block, out.data() + o * out_block);
  }
  const bool track = tracking({&x});
  auto y = make_result(std::move(out_shape), std::move(out), track);
  if (track) {
    auto xs = x.storage(), ys = y.storage();
    const std::size_t outer = s.outer;
    record(y, [=] {
      auto& g = xs->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < out_block; ++i) g[o * in_block + skip + i] += ys->grad[o * out_block + i];
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  return slice(x, 0, begin, end);
}

template <typename T>
BasicTensor<T> repeat(const BasicTensor<T>& x, std::size_t count) {
  Shape out_shape{count};
  out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
  const std::size_t n = x.numel();
  std::vector<T> out(count * n);
  for (std::size_t c = 0; c < count; ++c) std::copy_n(x.values().data(), n, out.data() + c * n);
  const bool track = tracking({&x});
  auto y = make_result(std::move(out_shape), std::move(out), track);
  if (track) {
    auto xs = x.storage(), ys = y.storage();
    record(y, [xs, ys, n, count] {
      auto& g = xs->grad_buffer();
      for (std::size_t c = 0; c < count; ++c) {
        for (std::size_t i = 0; i < n; ++i) g[i] += ys->grad[c * n + i];
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> embedding_lookup(const BasicTensor<T>& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= vocab) {
      throw IndexError("embedding_lookup: index " + std::to_string(indices[r]) + " >= table size " +
                       std::to_string(vocab));
    }
    std::copy_n(table.values().data() + indices[r] * d, d, out.data() + r * d);
  }
  const bool track = tracking({&table});
  auto y = make_result(Shape{indices.size(), d}, std::move(out), track);
  if (track) {
    auto ts = table.storage(), ys = y.storage();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    record(y, [ts, ys, idx, d] {
      auto& g = ts->grad_buffer();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += ys->grad[r * d + j];
      }
    });
  }
  return y;
}

// ---- normalization and reductions -----------------------------------------------

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  for (T v : x.values()) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      T mx = xv[base];
      for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      T total = 0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const T e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= total;
    }
  }
  const bool track = tracking({&x});
  auto y = make_result(x.shape(), std::move(out), track);
  if (track) {
    auto xs = x.storage(), ys = y.storage();
    record(y, [xs, ys, s] {
      auto& g = xs->grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.len * s.inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t p = base + j * s.inner;
            dot += ys->grad[p] * ys->data[p];
          }
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t p = base + j * s.inner;
            g[p] += ys->data[p] * (ys->grad[p] - dot);
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias, T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t n = x.shape().back();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " must match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = n ? x.numel() / n : 0;
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    double m = 0;
    for (std::size_t j = 0; j < n; ++j) m += row[j];
    m /= static_cast<double>(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - m) * (row[j] - m);
    var /= static_cast<double>(n);
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - static_cast<T>(m)) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gain[j] + bias[j];
    }
  }
  const bool track = tracking({&x, &gain, &bias});
  auto y = make_result(x.shape(), std::move(out), track);
  if (track) {
    auto xs = x.storage(), gs = gain.storage(), bs = bias.storage(), ys = y.storage();
    record(y, [=] {
      const auto& dy = ys->grad;
      if (gs->requires_grad || bs->requires_grad) {
        auto& dg = gs->grad_buffer();
        auto& db = bs->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            dg[j] += dy[r * n + j] * (*xhat)[r * n + j];
            db[j] += dy[r * n + j];
          }
        }
      }
      if (!xs->requires_grad) return;
      auto& dx = xs->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_d = 0, mean_dh = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const T d = dy[r * n + j] * gs->data[j];
          mean_d += d;
          mean_dh += d * (*xhat)[r * n + j];
        }
        mean_d /= static_cast<T>(n);
        mean_dh /= static_cast<T>(n);
        for (std::size_t j = 0; j < n; ++j) {
          const T d = dy[r * n + j] * gs->data[j];
          dx[r * n + j] += (*inv_std)[r] * (d - mean_d - (*xhat)[r * n + j] * mean_dh);
        }
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  const bool track = tracking({&x});
  auto y = make_result(Shape{}, std::vector<T>{total}, track);
  if (track) {
    auto xs = x.storage(), ys = y.storage();
    record(y, [xs, ys] {
      auto& g = xs->grad_buffer();
      for (auto& v : g) v += ys->grad[0];
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mse", a, b);
  const auto d = sub(a, b);
  return mean(mul(d, d));
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  std::vector<T> out(rows);
  const auto z = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[r]) + " >= " + std::to_string(classes));
    }
    const T* row = z.data() + r * classes;
    const T mx = *std::max_element(row, row + classes);
    T total = 0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < classes; ++c) (*probs)[r * classes + c] = std::exp(row[c] - mx) / total;
    out[r] = std::log(total) + mx - row[labels[r]];
  }
  const bool track = tracking({&logits});
  auto y = make_result(Shape{rows}, std::move(out), track);
  if (track) {
    auto ls = logits.storage(), ys = y.storage();
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    record(y, [ls, ys, probs, lab, classes] {
      auto& g = ls->grad_buffer();
      for (std::size_t r = 0; r < lab.size(); ++r) {
        const T gr = ys->grad[r];
        for (std::size_t c = 0; c < classes; ++c) {
          g[r * classes + c] += gr * ((*probs)[r * classes + c] - (c == lab[r] ? T(1) : T(0)));
        }
      }
    });
  }
  return y;
}

// ---- instantiations ---------------------------------------------------------------

#define NOVO_INSTANTIATE(T)                                                                          \
  template class BasicTensor<T>;                                                                     \
  template class BasicTape<T>;                                                                       \
  template BasicTensor<T> make_result<T>(Shape, std::vector<T>, bool);                               \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                           \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                      \
  template BasicTensor<T> add_row(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                               \
  template BasicTensor<T> log(const BasicTensor<T>&);                                                \
  template BasicTensor<T> reciprocal(const BasicTensor<T>&);                                         \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> bmm(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                          \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                     \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::size_t>&);           \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);                   \
  template BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>&);                           \
  template BasicTensor<T> slice(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t);       \
  template BasicTensor<T> slice_rows(const BasicTensor<T>&, std::size_t, std::size_t);               \
  template BasicTensor<T> repeat(const BasicTensor<T>&, std::size_t);                                \
  template BasicTensor<T> embedding_lookup(const BasicTensor<T>&, std::span<const std::size_t>);     \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                               \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                     const BasicTensor<T>&, T);                                      \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                               \
  template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const std::size_t>);

NOVO_INSTANTIATE(float)
NOVO_INSTANTIATE(double)

#undef NOVO_INSTANTIATE

}  // namespace novo
