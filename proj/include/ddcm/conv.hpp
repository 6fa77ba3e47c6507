#ifndef DDCM_CONV_HPP
#define DDCM_CONV_HPP

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "ddcm/parallel.hpp"
#include "ddcm/tensor.hpp"

namespace ddcm {

/// k grown by the dilation gaps: k + (k-1)(r-1). Rate 1 is a standard conv.
inline Index effective_kernel(Index k, Index r) { return k + (k - 1) * (r - 1); }

/// Symmetric padding that preserves spatial size at stride 1 (odd k only).
inline Index same_padding(Index k, Index r) { return (effective_kernel(k, r) - 1) / 2; }

/// Parameters of one 2-D convolution. padding < 0 means "same".
struct ConvSpec {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 3;
  Index dilation = 1;
  Index stride = 1;
  Index groups = 1;
  Index padding = -1;
  bool has_bias = true;

  Index effective_kernel() const { return ddcm::effective_kernel(kernel, dilation); }

  Index pad() const { return padding >= 0 ? padding : same_padding(kernel, dilation); }

  Index out_dim(Index in) const {
    return (in + 2 * pad() - effective_kernel()) / stride + 1;
  }

  void validate() const {
    if (in_channels < 1 || out_channels < 1) throw ShapeError("conv: channel counts must be >= 1");
    if (kernel < 1 || kernel % 2 == 0)
      throw ShapeError("conv: kernel must be odd and >= 1, got " + std::to_string(kernel));
    if (dilation < 1 || stride < 1 || groups < 1) throw ShapeError("conv: dilation/stride/groups must be >= 1");
    if (in_channels % groups != 0 || out_channels % groups != 0)
      throw ShapeError("conv: in=" + std::to_string(in_channels) + " out=" + std::to_string(out_channels) +
                       " not divisible by groups=" + std::to_string(groups));
  }
};

template <typename Scalar>
struct Conv2dGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
  VecX<Scalar> bias;
};

namespace detail {

/// Output indices o for which 0 <= o*s + tap_off < in_dim, clipped to [0, out_dim).
inline std::pair<Index, Index> tap_range(Index tap_off, Index s, Index in_dim, Index out_dim) {
  Index lo = tap_off >= 0 ? 0 : (-tap_off + s - 1) / s;
  const Index hi_num = in_dim - tap_off;
  Index hi = hi_num <= 0 ? 0 : std::min(out_dim, (hi_num + s - 1) / s);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

template <typename Scalar>
inline void check_conv_args(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                            const VecX<Scalar>& bias, const ConvSpec& spec) {
  spec.validate();
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (is.c != spec.in_channels)
    throw ShapeError("conv: input has " + std::to_string(is.c) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  const TensorShape want{spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel};
  if (!(ws == want))
    throw ShapeError("conv: weight shape " + ws.str() + " does not match spec " + want.str());
  if (spec.has_bias && bias.size() != spec.out_channels)
    throw ShapeError("conv: bias length " + std::to_string(bias.size()) + " != out_channels");
  if (spec.out_dim(is.h) < 1 || spec.out_dim(is.w) < 1)
    throw ShapeError("conv: non-positive output size for input " + is.str());
}

}  // namespace detail

/// Dilated / grouped / strided 2-D convolution with zero padding.
///
/// out[n,o,y,x] = bias[o] + sum_{c in o's group} sum_{i,j}
///                  weight[o,c,i,j] * in[n,c, y*s + i*r - p, x*s + j*r - p]
///
/// Each output element is reduced in a fixed (c, i, j) tap order into a
/// 64-bit accumulator and stored back in Scalar precision; results are
/// bit-identical across runs and worker counts.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const VecX<Scalar>& bias, const ConvSpec& spec) {
  detail::check_conv_args(input, weight, bias, spec);
  const auto& is = input.shape();
  const Index k = spec.kernel, r = spec.dilation, s = spec.stride, p = spec.pad();
  const Index oh = spec.out_dim(is.h), ow = spec.out_dim(is.w);
  const Index cpg = spec.in_channels / spec.groups;   // input channels per group
  const Index opg = spec.out_channels / spec.groups;  // output channels per group

  Tensor<Scalar> out(is.n, spec.out_channels, oh, ow);

  parallel_for(is.n * spec.out_channels, [&](Index job) {
    const Index n = job / spec.out_channels;
    const Index o = job % spec.out_channels;
    const Index g = o / opg;

    std::vector<double> acc(static_cast<size_t>(oh * ow),
                            spec.has_bias ? static_cast<double>(bias[o]) : 0.0);
    // Taps are applied plane-at-a-time in (c, i, j) order; every output
    // element therefore sees the same reduction order as the defining
    // formula, while the x loop stays branch-free and vectorizable.
    for (Index c = 0; c < cpg; ++c) {
      const Scalar* in_plane = input.data() + input.offset(n, g * cpg + c, 0, 0);
      for (Index i = 0; i < k; ++i) {
        const auto [y_lo, y_hi] = detail::tap_range(i * r - p, s, is.h, oh);
        for (Index j = 0; j < k; ++j) {
          const double wv = static_cast<double>(weight(o, c, i, j));
          const auto [x_lo, x_hi] = detail::tap_range(j * r - p, s, is.w, ow);
          for (Index y = y_lo; y < y_hi; ++y) {
            double* arow = acc.data() + y * ow;
            const Scalar* irow = in_plane + (y * s + i * r - p) * is.w + (j * r - p);
            for (Index x = x_lo; x < x_hi; ++x) arow[x] += wv * static_cast<double>(irow[x * s]);
          }
        }
      }
    }
    Scalar* orow = out.data() + out.offset(n, o, 0, 0);
    for (Index e = 0; e < oh * ow; ++e) orow[e] = static_cast<Scalar>(acc[static_cast<size_t>(e)]);
  });
  return out;
}

/// Exact adjoints of conv2d w.r.t. input, weight and bias.
template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& input,
                                    const Tensor<Scalar>& weight, const ConvSpec& spec) {
  spec.validate();
  const auto& is = input.shape();
  const auto& gs = grad_out.shape();
  const Index k = spec.kernel, r = spec.dilation, s = spec.stride, p = spec.pad();
  const Index oh = spec.out_dim(is.h), ow = spec.out_dim(is.w);
  if (!(gs == TensorShape{is.n, spec.out_channels, oh, ow}))
    throw ShapeError("conv backward: grad_out shape " + gs.str() + " does not match forward output");
  const Index cpg = spec.in_channels / spec.groups;
  const Index opg = spec.out_channels / spec.groups;

  Conv2dGrads<Scalar> grads;
  grads.input = Tensor<Scalar>(is);
  grads.weight = Tensor<Scalar>(weight.shape());
  grads.bias = VecX<Scalar>::Zero(spec.has_bias ? spec.out_channels : 0);

  // d/d input: scatter grad_out planes back through the kernel. One job owns
  // one (n, c) plane; per input element the contributions arrive in the fixed
  // lexicographic (o, i, j) order, independent of threading.
  parallel_for(is.n * spec.in_channels, [&](Index job) {
    const Index n = job / spec.in_channels;
    const Index c = job % spec.in_channels;
    const Index g = c / cpg;
    std::vector<double> acc(static_cast<size_t>(is.h * is.w), 0.0);
    for (Index oo = 0; oo < opg; ++oo) {
      const Index o = g * opg + oo;
      const Scalar* gplane = grad_out.data() + grad_out.offset(n, o, 0, 0);
      for (Index i = 0; i < k; ++i) {
        const auto [y_lo, y_hi] = detail::tap_range(i * r - p, s, is.h, oh);
        for (Index j = 0; j < k; ++j) {
          const double wv = static_cast<double>(weight(o, c - g * cpg, i, j));
          const auto [x_lo, x_hi] = detail::tap_range(j * r - p, s, is.w, ow);
          for (Index y = y_lo; y < y_hi; ++y) {
            double* arow = acc.data() + (y * s + i * r - p) * is.w + (j * r - p);
            const Scalar* grow = gplane + y * ow;
            for (Index x = x_lo; x < x_hi; ++x) arow[x * s] += wv * static_cast<double>(grow[x]);
          }
        }
      }
    }
    Scalar* gout = grads.input.data() + grads.input.offset(n, c, 0, 0);
    for (Index e = 0; e < is.h * is.w; ++e) gout[e] = static_cast<Scalar>(acc[static_cast<size_t>(e)]);
  });

  // d/d weight and d/d bias: one job per output channel, each tap reduced
  // over (n, y, x) in fixed order.
  parallel_for(spec.out_channels, [&](Index o) {
    const Index g = o / opg;
    std::vector<double> wacc(static_cast<size_t>(cpg * k * k), 0.0);
    for (Index c = 0; c < cpg; ++c) {
      for (Index i = 0; i < k; ++i) {
        const auto [y_lo, y_hi] = detail::tap_range(i * r - p, s, is.h, oh);
        for (Index j = 0; j < k; ++j) {
          const auto [x_lo, x_hi] = detail::tap_range(j * r - p, s, is.w, ow);
          double acc = 0.0;
          for (Index n = 0; n < is.n; ++n) {
            const Scalar* gplane = grad_out.data() + grad_out.offset(n, o, 0, 0);
            const Scalar* in_plane = input.data() + input.offset(n, g * cpg + c, 0, 0);
            for (Index y = y_lo; y < y_hi; ++y) {
              const Scalar* grow = gplane + y * ow;
              const Scalar* irow = in_plane + (y * s + i * r - p) * is.w + (j * r - p);
              for (Index x = x_lo; x < x_hi; ++x)
                acc += static_cast<double>(grow[x]) * static_cast<double>(irow[x * s]);
            }
          }
          wacc[static_cast<size_t>((c * k + i) * k + j)] = acc;
        }
      }
    }
    Scalar* wrow = grads.weight.data() + grads.weight.offset(o, 0, 0, 0);
    for (Index e = 0; e < cpg * k * k; ++e) wrow[e] = static_cast<Scalar>(wacc[static_cast<size_t>(e)]);
    if (spec.has_bias) {
      double bacc = 0.0;
      for (Index n = 0; n < is.n; ++n) {
        const Scalar* gplane = grad_out.data() + grad_out.offset(n, o, 0, 0);
        for (Index e = 0; e < oh * ow; ++e) bacc += static_cast<double>(gplane[e]);
      }
      grads.bias[o] = static_cast<Scalar>(bacc);
    }
  });

  return grads;
}

}  // namespace ddcm

#endif  // DDCM_CONV_HPP
