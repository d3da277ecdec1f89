#pragma once

// Dense tensor with reverse-mode autodiff. Tape-based: every op records its
// parents and a backward closure on the result; backward() walks the tape in
// reverse topological order. Scalar type is a template parameter: float for
// training, double for the gradient-check suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace eabn {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // sized like data iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void()> backward_fn;  // adds into parents' grads
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = shape;
    t.impl_->data.assign(shape_numel(shape), T(0));
    t.set_requires_grad(requires_grad);
    return t;
  }

  static Tensor from_data(const Shape& shape, std::vector<T> values,
                          bool requires_grad = false) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
      throw TensorError("data size " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = shape;
    t.impl_->data = std::move(values);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }
  std::vector<T>& grad() {
    if (!impl_->requires_grad) throw TensorError("tensor has no grad buffer");
    return impl_->grad;
  }
  const std::vector<T>& grad() const {
    if (!impl_->requires_grad) throw TensorError("tensor has no grad buffer");
    return impl_->grad;
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    if (rg)
      impl_->grad.assign(impl_->data.size(), T(0));
    else
      impl_->grad.clear();
  }
  void zero_grad() {
    if (impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
  }

  std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

  // Detached copy: same values, no history, no grad.
  Tensor detach() const { return from_data(shape(), data(), false); }

  // Reverse-mode sweep from a scalar. Grads accumulate into every
  // requires_grad tensor reachable through the tape.
  void backward() const {
    if (numel() != 1) throw TensorError("backward() requires a scalar loss, got " + shape_str(shape()));
    if (!impl_->requires_grad)
      throw TensorError("backward() on a tensor that does not require grad");

    // iterative post-order DFS
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> visited;
    std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        TensorImpl<T>* p = node->parents[idx++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    // Non-leaf grads are scratch for this sweep; leaf (parameter) grads
    // accumulate across sweeps.
    for (auto* node : order)
      if (node->backward_fn) std::fill(node->grad.begin(), node->grad.end(), T(0));
    impl_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn) (*it)->backward_fn();
  }

  // --- construction helper for ops ---
  static Tensor make_result(const Shape& shape, std::vector<T> values,
                            std::vector<Tensor> parents,
                            std::function<void()> backward_fn) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    Tensor t = from_data(shape, std::move(values), rg);
    if (rg) {
      for (auto& p : parents) t.impl_->parents.push_back(p.impl_);
      t.impl_->backward_fn = std::move(backward_fn);
    }
    return t;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, bi, ri]() {
      if (ai->requires_grad)
        for (size_t i = 0; i < ri->grad.size(); ++i) ai->grad[i] += ri->grad[i];
      if (bi->requires_grad)
        for (size_t i = 0; i < ri->grad.size(); ++i) bi->grad[i] += ri->grad[i];
    };
  }
  return r;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, bi, ri]() {
      if (ai->requires_grad)
        for (size_t i = 0; i < ri->grad.size(); ++i) ai->grad[i] += ri->grad[i];
      if (bi->requires_grad)
        for (size_t i = 0; i < ri->grad.size(); ++i) bi->grad[i] -= ri->grad[i];
    };
  }
  return r;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, bi, ri]() {
      if (ai->requires_grad)
        for (size_t i = 0; i < ri->grad.size(); ++i) ai->grad[i] += ri->grad[i] * bi->data[i];
      if (bi->requires_grad)
        for (size_t i = 0; i < ri->grad.size(); ++i) bi->grad[i] += ri->grad[i] * ai->data[i];
    };
  }
  return r;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto ai = a.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri, c]() {
      for (size_t i = 0; i < ri->grad.size(); ++i) ai->grad[i] += ri->grad[i] * c;
    };
  }
  return r;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
  auto ai = a.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri]() {
      for (size_t i = 0; i < ri->grad.size(); ++i) ai->grad[i] += ri->grad[i];
    };
  }
  return r;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  auto ai = a.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri]() {
      for (size_t i = 0; i < ri->grad.size(); ++i)
        if (ai->data[i] > T(0)) ai->grad[i] += ri->grad[i];
    };
  }
  return r;
}

template <typename T>
inline T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(a.data()[i]);
  auto ai = a.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri]() {
      for (size_t i = 0; i < ri->grad.size(); ++i) {
        T s = ri->data[i];
        ai->grad[i] += ri->grad[i] * s * (T(1) - s);
      }
    };
  }
  return r;
}

template <typename T>
Tensor<T> swish(const Tensor<T>& a) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * sigmoid_value(a.data()[i]);
  auto ai = a.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri]() {
      for (size_t i = 0; i < ri->grad.size(); ++i) {
        T s = sigmoid_value(ai->data[i]);
        ai->grad[i] += ri->grad[i] * (s + ai->data[i] * s * (T(1) - s));
      }
    };
  }
  return r;
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& a) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    if (a.data()[i] <= T(0)) throw TensorError("log of non-positive value");
    out[i] = std::log(a.data()[i]);
  }
  auto ai = a.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri]() {
      for (size_t i = 0; i < ri->grad.size(); ++i) ai->grad[i] += ri->grad[i] / ai->data[i];
    };
  }
  return r;
}

// x^c for x > 0 (exponent is a constant, not a tensor)
template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::pow(a.data()[i], c);
  auto ai = a.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri, c]() {
      for (size_t i = 0; i < ri->grad.size(); ++i)
        ai->grad[i] += ri->grad[i] * c * std::pow(ai->data[i], c - T(1));
    };
  }
  return r;
}

// clamp from below; gradient passes only where the input is above the floor
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], lo);
  auto ai = a.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri, lo]() {
      for (size_t i = 0; i < ri->grad.size(); ++i)
        if (ai->data[i] > lo) ai->grad[i] += ri->grad[i];
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = std::accumulate(a.data().begin(), a.data().end(), T(0));
  auto ai = a.impl();
  auto r = Tensor<T>::make_result({1}, {s}, {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri]() {
      for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += ri->grad[0];
    };
  }
  return r;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// sum over the last axis: [N,D] -> [N]
template <typename T>
Tensor<T> sum_cols(const Tensor<T>& a) {
  if (a.rank() != 2) throw TensorError("sum_cols expects rank-2, got " + shape_str(a.shape()));
  int64_t n = a.dim(0), d = a.dim(1);
  std::vector<T> out(static_cast<size_t>(n), T(0));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out[i] += a.data()[i * d + j];
  auto ai = a.impl();
  auto r = Tensor<T>::make_result({n}, std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri, n, d]() {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) ai->grad[i * d + j] += ri->grad[i];
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel())
    throw TensorError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                      ": element count mismatch");
  auto ai = a.impl();
  auto r = Tensor<T>::make_result(shape, a.data(), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri]() {
      for (size_t i = 0; i < ri->grad.size(); ++i) ai->grad[i] += ri->grad[i];
    };
  }
  return r;
}

// concatenate along the channel axis of NCHW tensors
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw TensorError("concat_channels: empty input list");
  int64_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int64_t ctot = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || p.dim(0) != n || p.dim(2) != h || p.dim(3) != w)
      throw TensorError("concat_channels: incompatible shape " + shape_str(p.shape()));
    ctot += p.dim(1);
  }
  std::vector<T> out(static_cast<size_t>(n * ctot * h * w));
  int64_t hw = h * w;
  int64_t coff = 0;
  for (const auto& p : parts) {
    int64_t c = p.dim(1);
    for (int64_t b = 0; b < n; ++b)
      std::copy(p.data().begin() + b * c * hw, p.data().begin() + (b + 1) * c * hw,
                out.begin() + (b * ctot + coff) * hw);
    coff += c;
  }
  std::vector<Tensor<T>> parents(parts.begin(), parts.end());
  auto r = Tensor<T>::make_result({n, ctot, h, w}, std::move(out), parents, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    std::vector<std::shared_ptr<TensorImpl<T>>> pimpls;
    std::vector<int64_t> chans;
    for (const auto& p : parts) {
      pimpls.push_back(p.impl());
      chans.push_back(p.dim(1));
    }
    r.impl()->backward_fn = [ri, pimpls, chans, n, hw, ctot]() {
      int64_t coff = 0;
      for (size_t k = 0; k < pimpls.size(); ++k) {
        int64_t c = chans[k];
        if (pimpls[k]->requires_grad)
          for (int64_t b = 0; b < n; ++b)
            for (int64_t i = 0; i < c * hw; ++i)
              pimpls[k]->grad[b * c * hw + i] += ri->grad[(b * ctot + coff) * hw + i];
        coff += c;
      }
    };
  }
  return r;
}

// channel slice [c0, c1) of an NCHW tensor
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, int64_t c0, int64_t c1) {
  if (a.rank() != 4) throw TensorError("slice_channels expects NCHW");
  int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (c0 < 0 || c1 > c || c0 >= c1)
    throw TensorError("slice_channels: bad range [" + std::to_string(c0) + "," +
                      std::to_string(c1) + ") of " + std::to_string(c) + " channels");
  int64_t cs = c1 - c0, hw = h * w;
  std::vector<T> out(static_cast<size_t>(n * cs * hw));
  for (int64_t b = 0; b < n; ++b)
    std::copy(a.data().begin() + (b * c + c0) * hw, a.data().begin() + (b * c + c1) * hw,
              out.begin() + b * cs * hw);
  auto ai = a.impl();
  auto r = Tensor<T>::make_result({n, cs, h, w}, std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri, n, c, c0, cs, hw]() {
      for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < cs * hw; ++i)
          ai->grad[(b * c + c0) * hw + i] += ri->grad[b * cs * hw + i];
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// softmax along an axis (numerically stabilized)

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  int rank = a.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw TensorError("softmax: axis out of range");
  int64_t dim = a.dim(axis);
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < rank; ++i) inner *= a.dim(i);
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);

  std::vector<T> out(a.data().size());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t k = 0; k < dim; ++k)
        mx = std::max(mx, a.data()[(o * dim + k) * inner + in]);
      T z = T(0);
      for (int64_t k = 0; k < dim; ++k) {
        T e = std::exp(a.data()[(o * dim + k) * inner + in] - mx);
        out[(o * dim + k) * inner + in] = e;
        z += e;
      }
      for (int64_t k = 0; k < dim; ++k) out[(o * dim + k) * inner + in] /= z;
    }
  auto ai = a.impl();
  auto r = Tensor<T>::make_result(a.shape(), std::move(out), {a}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ai, ri, outer, inner, dim]() {
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          T dot = T(0);
          for (int64_t k = 0; k < dim; ++k) {
            size_t idx = (o * dim + k) * inner + in;
            dot += ri->grad[idx] * ri->data[idx];
          }
          for (int64_t k = 0; k < dim; ++k) {
            size_t idx = (o * dim + k) * inner + in;
            ai->grad[idx] += ri->data[idx] * (ri->grad[idx] - dot);
          }
        }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// gather-style ops used by the losses

// probs[N,K], labels[N] -> p[N] with p[i] = probs[i, labels[i]]
template <typename T>
Tensor<T> pick_class(const Tensor<T>& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2) throw TensorError("pick_class expects rank-2 probabilities");
  int64_t n = probs.dim(0), k = probs.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw TensorError("pick_class: label count mismatch");
  std::vector<T> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw TensorError("pick_class: label out of range");
    out[i] = probs.data()[i * k + labels[i]];
  }
  auto pi = probs.impl();
  auto r = Tensor<T>::make_result({n}, std::move(out), {probs}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [pi, ri, labels, k, n]() {
      for (int64_t i = 0; i < n; ++i) pi->grad[i * k + labels[i]] += ri->grad[i];
    };
  }
  return r;
}

// centers[K,D], labels[N] -> rows[N,D]; backward scatters into the centers
template <typename T>
Tensor<T> select_rows(const Tensor<T>& centers, const std::vector<int>& labels) {
  if (centers.rank() != 2) throw TensorError("select_rows expects rank-2");
  int64_t k = centers.dim(0), d = centers.dim(1);
  int64_t n = static_cast<int64_t>(labels.size());
  std::vector<T> out(static_cast<size_t>(n * d));
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw TensorError("select_rows: index out of range");
    std::copy(centers.data().begin() + labels[i] * d, centers.data().begin() + (labels[i] + 1) * d,
              out.begin() + i * d);
  }
  auto ci = centers.impl();
  auto r = Tensor<T>::make_result({n, d}, std::move(out), {centers}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [ci, ri, labels, d, n]() {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) ci->grad[labels[i] * d + j] += ri->grad[i * d + j];
    };
  }
  return r;
}

// [N,C,H,W] scaled per channel by s[N,C] (squeeze-excitation gating)
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() != 4 || s.rank() != 2 || x.dim(0) != s.dim(0) || x.dim(1) != s.dim(1))
    throw TensorError("channel_scale: shapes " + shape_str(x.shape()) + " and " +
                      shape_str(s.shape()) + " are incompatible");
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(x.data().size());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      T g = s.data()[b * c + ch];
      const T* src = x.data().data() + (b * c + ch) * hw;
      T* dst = out.data() + (b * c + ch) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * g;
    }
  auto xi = x.impl(), si = s.impl();
  auto r = Tensor<T>::make_result(x.shape(), std::move(out), {x, s}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [xi, si, ri, n, c, hw]() {
      for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
          T g = si->data[b * c + ch];
          const T* go = ri->grad.data() + (b * c + ch) * hw;
          if (xi->requires_grad) {
            T* gx = xi->grad.data() + (b * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) gx[i] += go[i] * g;
          }
          if (si->requires_grad) {
            const T* xv = xi->data.data() + (b * c + ch) * hw;
            T acc = T(0);
            for (int64_t i = 0; i < hw; ++i) acc += go[i] * xv[i];
            si->grad[b * c + ch] += acc;
          }
        }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// pooling

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw TensorError("global_avg_pool expects NCHW, got " + shape_str(x.shape()));
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<size_t>(n * c), T(0));
  for (int64_t i = 0; i < n * c; ++i) {
    const T* src = x.data().data() + i * hw;
    T acc = T(0);
    for (int64_t j = 0; j < hw; ++j) acc += src[j];
    out[i] = acc / static_cast<T>(hw);
  }
  auto xi = x.impl();
  auto r = Tensor<T>::make_result({n, c}, std::move(out), {x}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [xi, ri, n, c, hw]() {
      for (int64_t i = 0; i < n * c; ++i) {
        T g = ri->grad[i] / static_cast<T>(hw);
        T* dst = xi->grad.data() + i * hw;
        for (int64_t j = 0; j < hw; ++j) dst[j] += g;
      }
    };
  }
  return r;
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int kh, int kw, int sh, int sw) {
  if (x.rank() != 4) throw TensorError("avg_pool2d expects NCHW");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kh > h || kw > w)
    throw TensorError("avg_pool2d: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                      " larger than input " + std::to_string(h) + "x" + std::to_string(w));
  int64_t ho = (h - kh) / sh + 1, wo = (w - kw) / sw + 1;
  std::vector<T> out(static_cast<size_t>(n * c * ho * wo));
  for (int64_t bc = 0; bc < n * c; ++bc)
    for (int64_t i = 0; i < ho; ++i)
      for (int64_t j = 0; j < wo; ++j) {
        T acc = T(0);
        for (int p = 0; p < kh; ++p)
          for (int q = 0; q < kw; ++q) acc += x.data()[(bc * h + i * sh + p) * w + j * sw + q];
        out[(bc * ho + i) * wo + j] = acc / static_cast<T>(kh * kw);
      }
  auto xi = x.impl();
  auto r = Tensor<T>::make_result({n, c, ho, wo}, std::move(out), {x}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [xi, ri, n, c, h, w, ho, wo, kh, kw, sh, sw]() {
      for (int64_t bc = 0; bc < n * c; ++bc)
        for (int64_t i = 0; i < ho; ++i)
          for (int64_t j = 0; j < wo; ++j) {
            T g = ri->grad[(bc * ho + i) * wo + j] / static_cast<T>(kh * kw);
            for (int p = 0; p < kh; ++p)
              for (int q = 0; q < kw; ++q)
                xi->grad[(bc * h + i * sh + p) * w + j * sw + q] += g;
          }
    };
  }
  return r;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kh, int kw, int sh, int sw) {
  if (x.rank() != 4) throw TensorError("max_pool2d expects NCHW");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kh > h || kw > w)
    throw TensorError("max_pool2d: window larger than input");
  int64_t ho = (h - kh) / sh + 1, wo = (w - kw) / sw + 1;
  std::vector<T> out(static_cast<size_t>(n * c * ho * wo));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  for (int64_t bc = 0; bc < n * c; ++bc)
    for (int64_t i = 0; i < ho; ++i)
      for (int64_t j = 0; j < wo; ++j) {
        T best = -std::numeric_limits<T>::infinity();
        int64_t bidx = -1;
        for (int p = 0; p < kh; ++p)
          for (int q = 0; q < kw; ++q) {
            int64_t idx = (bc * h + i * sh + p) * w + j * sw + q;
            if (x.data()[idx] > best) {
              best = x.data()[idx];
              bidx = idx;
            }
          }
        out[(bc * ho + i) * wo + j] = best;
        (*argmax)[(bc * ho + i) * wo + j] = bidx;
      }
  auto xi = x.impl();
  auto r = Tensor<T>::make_result({n, c, ho, wo}, std::move(out), {x}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    r.impl()->backward_fn = [xi, ri, argmax]() {
      for (size_t i = 0; i < ri->grad.size(); ++i) xi->grad[(*argmax)[i]] += ri->grad[i];
    };
  }
  return r;
}

}  // namespace eabn
