#pragma once

// conv2d / linear / batchnorm2d with full backward. The GEMM-shaped inner
// loops go through Eigen maps over the flat buffers; im2col keeps the FLOP
// accounting transparent.

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>

#include "eabn/tensor.hpp"

namespace eabn {

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kh = 3, kw = 3;
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  int groups = 1;
  bool bias = true;

  void validate() const {
    if (in_channels % groups != 0)
      throw TensorError("ConvSpec: in_channels " + std::to_string(in_channels) +
                        " not divisible by groups " + std::to_string(groups));
    if (out_channels % groups != 0)
      throw TensorError("ConvSpec: out_channels " + std::to_string(out_channels) +
                        " not divisible by groups " + std::to_string(groups));
  }
  int64_t out_h(int64_t h) const { return (h + 2 * pad_h - kh) / stride_h + 1; }
  int64_t out_w(int64_t w) const { return (w + 2 * pad_w - kw) / stride_w + 1; }
};

namespace detail {

// input channel block [cg,h,w] -> col [cg*kh*kw, ho*wo]
template <typename T>
void im2col(const T* src, int64_t cg, int64_t h, int64_t w, const ConvSpec& s,
            int64_t ho, int64_t wo, T* col) {
  for (int64_t c = 0; c < cg; ++c)
    for (int p = 0; p < s.kh; ++p)
      for (int q = 0; q < s.kw; ++q) {
        T* dst = col + ((c * s.kh + p) * s.kw + q) * ho * wo;
        for (int64_t i = 0; i < ho; ++i) {
          int64_t y = i * s.stride_h + p - s.pad_h;
          if (y < 0 || y >= h) {
            std::fill(dst + i * wo, dst + (i + 1) * wo, T(0));
            continue;
          }
          if (s.stride_w == 1) {
            // x = j + off: one contiguous run, zero-padded at the edges
            int64_t off = q - s.pad_w;
            int64_t j0 = std::max<int64_t>(0, -off);
            int64_t j1 = std::clamp(w - off, j0, wo);
            std::fill(dst + i * wo, dst + i * wo + j0, T(0));
            std::copy(src + (c * h + y) * w + j0 + off, src + (c * h + y) * w + j1 + off,
                      dst + i * wo + j0);
            std::fill(dst + i * wo + j1, dst + (i + 1) * wo, T(0));
            continue;
          }
          for (int64_t j = 0; j < wo; ++j) {
            int64_t x = j * s.stride_w + q - s.pad_w;
            dst[i * wo + j] = (x >= 0 && x < w) ? src[(c * h + y) * w + x] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, int64_t cg, int64_t h, int64_t w, const ConvSpec& s,
            int64_t ho, int64_t wo, T* dst) {
  for (int64_t c = 0; c < cg; ++c)
    for (int p = 0; p < s.kh; ++p)
      for (int q = 0; q < s.kw; ++q) {
        const T* src = col + ((c * s.kh + p) * s.kw + q) * ho * wo;
        for (int64_t i = 0; i < ho; ++i) {
          int64_t y = i * s.stride_h + p - s.pad_h;
          if (y < 0 || y >= h) continue;
          if (s.stride_w == 1) {
            int64_t off = q - s.pad_w;
            int64_t j0 = std::max<int64_t>(0, -off);
            int64_t j1 = std::clamp(w - off, j0, wo);
            T* d = dst + (c * h + y) * w + off;
            const T* sp = src + i * wo;
            for (int64_t j = j0; j < j1; ++j) d[j] += sp[j];
            continue;
          }
          for (int64_t j = 0; j < wo; ++j) {
            int64_t x = j * s.stride_w + q - s.pad_w;
            if (x >= 0 && x < w) dst[(c * h + y) * w + x] += src[i * wo + j];
          }
        }
      }
}

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// weight layout [Cout, Cin/groups, kh, kw]; bias [Cout] (optional, undefined Tensor to skip)
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>& bias = Tensor<T>()) {
  spec.validate();
  if (input.rank() != 4)
    throw TensorError("conv2d: input must be NCHW, got " + shape_str(input.shape()));
  int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (c != spec.in_channels)
    throw TensorError("conv2d: input has " + std::to_string(c) + " channels, spec expects " +
                      std::to_string(spec.in_channels));
  int64_t cg = spec.in_channels / spec.groups;
  int64_t og = spec.out_channels / spec.groups;
  Shape wshape = {spec.out_channels, cg, spec.kh, spec.kw};
  if (weight.shape() != wshape)
    throw TensorError("conv2d: weight shape " + shape_str(weight.shape()) +
                      " does not match spec " + shape_str(wshape));
  if (spec.bias) {
    if (!bias.defined() || bias.shape() != Shape{spec.out_channels})
      throw TensorError("conv2d: bias missing or wrong shape (want [" +
                        std::to_string(spec.out_channels) + "])");
  }
  int64_t ho = spec.out_h(h), wo = spec.out_w(w);
  if (ho <= 0 || wo <= 0)
    throw TensorError("conv2d: output spatial size " + std::to_string(ho) + "x" +
                      std::to_string(wo) + " is non-positive (input " + std::to_string(h) +
                      "x" + std::to_string(w) + ")");

  int64_t k = cg * spec.kh * spec.kw;
  int64_t hw = ho * wo;
  std::vector<T> out(static_cast<size_t>(n * spec.out_channels * hw));
  // per-sample GEMM with a per-group weight matrix [og, k]
  std::vector<T> colbuf(static_cast<size_t>(k * hw));
  for (int64_t b = 0; b < n; ++b)
    for (int g = 0; g < spec.groups; ++g) {
      detail::im2col(input.data().data() + (b * c + g * cg) * h * w, cg, h, w, spec, ho, wo,
                     colbuf.data());
      detail::ConstMatMap<T> W(weight.data().data() + g * og * k, og, k);
      detail::ConstMatMap<T> C(colbuf.data(), k, hw);
      detail::MatMap<T> O(out.data() + (b * spec.out_channels + g * og) * hw, og, hw);
      O.noalias() = W * C;
    }
  if (spec.bias)
    for (int64_t b = 0; b < n; ++b)
      for (int64_t oc = 0; oc < spec.out_channels; ++oc) {
        T bv = bias.data()[oc];
        T* dst = out.data() + (b * spec.out_channels + oc) * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] += bv;
      }

  std::vector<Tensor<T>> parents = {input, weight};
  if (spec.bias) parents.push_back(bias);
  auto r = Tensor<T>::make_result({n, spec.out_channels, ho, wo}, std::move(out), parents, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    auto xi = input.impl();
    auto wi = weight.impl();
    auto bi = spec.bias ? bias.impl() : nullptr;
    ConvSpec s = spec;
    r.impl()->backward_fn = [ri, xi, wi, bi, s, n, c, h, w, ho, wo, cg, og, k, hw]() {
      std::vector<T> colbuf(static_cast<size_t>(k * hw));
      std::vector<T> dcol(static_cast<size_t>(k * hw));
      for (int64_t b = 0; b < n; ++b)
        for (int g = 0; g < s.groups; ++g) {
          detail::ConstMatMap<T> GO(ri->grad.data() + (b * s.out_channels + g * og) * hw, og, hw);
          if (wi->requires_grad) {
            detail::im2col(xi->data.data() + (b * c + g * cg) * h * w, cg, h, w, s, ho, wo,
                           colbuf.data());
            detail::ConstMatMap<T> C(colbuf.data(), k, hw);
            detail::MatMap<T> GW(wi->grad.data() + g * og * k, og, k);
            GW.noalias() += GO * C.transpose();
          }
          if (xi->requires_grad) {
            detail::ConstMatMap<T> W(wi->data.data() + g * og * k, og, k);
            detail::MatMap<T> DC(dcol.data(), k, hw);
            DC.noalias() = W.transpose() * GO;
            detail::col2im(dcol.data(), cg, h, w, s, ho, wo,
                           xi->grad.data() + (b * c + g * cg) * h * w);
          }
        }
      if (bi && bi->requires_grad)
        for (int64_t b = 0; b < n; ++b)
          for (int64_t oc = 0; oc < s.out_channels; ++oc) {
            const T* src = ri->grad.data() + (b * s.out_channels + oc) * hw;
            T acc = T(0);
            for (int64_t i = 0; i < hw; ++i) acc += src[i];
            bi->grad[oc] += acc;
          }
    };
  }
  return r;
}

// input [N,D] x weight [D,E] + bias [E]
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias = Tensor<T>()) {
  if (input.rank() != 2 || weight.rank() != 2)
    throw TensorError("linear: expects rank-2 input and weight");
  int64_t n = input.dim(0), d = input.dim(1), e = weight.dim(1);
  if (weight.dim(0) != d)
    throw TensorError("linear: inner dimensions disagree, input " + shape_str(input.shape()) +
                      " vs weight " + shape_str(weight.shape()));
  if (bias.defined() && bias.shape() != Shape{e})
    throw TensorError("linear: bias shape " + shape_str(bias.shape()) + ", want [" +
                      std::to_string(e) + "]");
  std::vector<T> out(static_cast<size_t>(n * e));
  {
    detail::ConstMatMap<T> X(input.data().data(), n, d);
    detail::ConstMatMap<T> W(weight.data().data(), d, e);
    detail::MatMap<T> O(out.data(), n, e);
    O.noalias() = X * W;
    if (bias.defined())
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < e; ++j) out[i * e + j] += bias.data()[j];
  }
  std::vector<Tensor<T>> parents = {input, weight};
  if (bias.defined()) parents.push_back(bias);
  auto r = Tensor<T>::make_result({n, e}, std::move(out), parents, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    auto xi = input.impl();
    auto wi = weight.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    r.impl()->backward_fn = [ri, xi, wi, bi, n, d, e]() {
      detail::ConstMatMap<T> GO(ri->grad.data(), n, e);
      if (xi->requires_grad) {
        detail::ConstMatMap<T> W(wi->data.data(), d, e);
        detail::MatMap<T> GX(xi->grad.data(), n, d);
        GX.noalias() += GO * W.transpose();
      }
      if (wi->requires_grad) {
        detail::ConstMatMap<T> X(xi->data.data(), n, d);
        detail::MatMap<T> GW(wi->grad.data(), d, e);
        GW.noalias() += X.transpose() * GO;
      }
      if (bi && bi->requires_grad)
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < e; ++j) bi->grad[j] += ri->grad[i * e + j];
    };
  }
  return r;
}

// Batch norm over NCHW, per channel. Running stats are plain buffers owned by
// the caller (not part of the tape); in training mode they are updated with
// the given momentum.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                      T momentum = T(0.1), T eps = T(1e-5)) {
  if (input.rank() != 4) throw TensorError("batchnorm2d expects NCHW");
  int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (gamma.numel() != c || beta.numel() != c ||
      static_cast<int64_t>(running_mean.size()) != c ||
      static_cast<int64_t>(running_var.size()) != c)
    throw TensorError("batchnorm2d: parameter length does not match " + std::to_string(c) +
                      " channels");
  int64_t hw = h * w;
  int64_t cnt = n * hw;

  auto mean_v = std::make_shared<std::vector<T>>(c, T(0));
  auto invstd_v = std::make_shared<std::vector<T>>(c, T(0));
  if (training) {
    for (int64_t ch = 0; ch < c; ++ch) {
      T m = T(0);
      for (int64_t b = 0; b < n; ++b) {
        const T* src = input.data().data() + (b * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) m += src[i];
      }
      m /= static_cast<T>(cnt);
      T v = T(0);
      for (int64_t b = 0; b < n; ++b) {
        const T* src = input.data().data() + (b * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          T d = src[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<T>(cnt);  // biased variance, as used for normalization
      (*mean_v)[ch] = m;
      (*invstd_v)[ch] = T(1) / std::sqrt(v + eps);
      running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * m;
      T unbiased = cnt > 1 ? v * static_cast<T>(cnt) / static_cast<T>(cnt - 1) : v;
      running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * unbiased;
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      (*mean_v)[ch] = running_mean[ch];
      (*invstd_v)[ch] = T(1) / std::sqrt(running_var[ch] + eps);
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(input.data().size());
  std::vector<T> out(input.data().size());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* src = input.data().data() + (b * c + ch) * hw;
      T* xh = xhat->data() + (b * c + ch) * hw;
      T* dst = out.data() + (b * c + ch) * hw;
      T m = (*mean_v)[ch], is = (*invstd_v)[ch];
      T g = gamma.data()[ch], bb = beta.data()[ch];
      for (int64_t i = 0; i < hw; ++i) {
        xh[i] = (src[i] - m) * is;
        dst[i] = g * xh[i] + bb;
      }
    }

  auto r = Tensor<T>::make_result(input.shape(), std::move(out), {input, gamma, beta}, nullptr);
  if (r.requires_grad()) {
    auto* ri = r.impl().get();
    auto xi = input.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    r.impl()->backward_fn = [ri, xi, gi, bi, xhat, invstd_v, training, n, c, hw, cnt]() {
      for (int64_t ch = 0; ch < c; ++ch) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int64_t b = 0; b < n; ++b) {
          const T* gy = ri->grad.data() + (b * c + ch) * hw;
          const T* xh = xhat->data() + (b * c + ch) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            sum_dy += gy[i];
            sum_dy_xhat += gy[i] * xh[i];
          }
        }
        if (gi->requires_grad) gi->grad[ch] += sum_dy_xhat;
        if (bi->requires_grad) bi->grad[ch] += sum_dy;
        if (xi->requires_grad) {
          T g = gi->data[ch], is = (*invstd_v)[ch];
          for (int64_t b = 0; b < n; ++b) {
            const T* gy = ri->grad.data() + (b * c + ch) * hw;
            const T* xh = xhat->data() + (b * c + ch) * hw;
            T* gx = xi->grad.data() + (b * c + ch) * hw;
            if (training) {
              T inv_cnt = T(1) / static_cast<T>(cnt);
              for (int64_t i = 0; i < hw; ++i)
                gx[i] += g * is * (gy[i] - inv_cnt * sum_dy - xh[i] * inv_cnt * sum_dy_xhat);
            } else {
              for (int64_t i = 0; i < hw; ++i) gx[i] += g * is * gy[i];
            }
          }
        }
      }
    };
  }
  return r;
}

}  // namespace eabn
