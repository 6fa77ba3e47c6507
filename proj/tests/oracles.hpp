// Independent reference implementations used as test oracles. These evaluate
// the defining formulas directly (materialized padding, per-pixel loops) and
// share no code with the optimized kernels they check.
#ifndef DDCM_TESTS_ORACLES_HPP
#define DDCM_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>

#include "ddcm/conv.hpp"
#include "ddcm/rng.hpp"
#include "ddcm/tensor.hpp"

namespace oracles {

using ddcm::ConvSpec;
using ddcm::Index;
using ddcm::Tensor;
using ddcm::VecX;

template <typename S>
void fill_uniform(Tensor<S>& t, ddcm::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (Index i = 0; i < t.count(); ++i) t.data()[i] = static_cast<S>(rng.uniform(lo, hi));
}

template <typename S>
void fill_uniform(VecX<S>& v, ddcm::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(rng.uniform(lo, hi));
}

/// Straight evaluation of the convolution formula over a materialized
/// zero-padded input; 64-bit accumulation in (c, i, j) order.
template <typename S>
Tensor<S> conv2d_reference(const Tensor<S>& input, const Tensor<S>& weight, const VecX<S>& bias,
                           const ConvSpec& spec) {
  const auto& is = input.shape();
  const Index k = spec.kernel, r = spec.dilation, s = spec.stride, p = spec.pad();
  Tensor<S> padded(is.n, is.c, is.h + 2 * p, is.w + 2 * p);
  for (Index n = 0; n < is.n; ++n)
    for (Index c = 0; c < is.c; ++c)
      for (Index y = 0; y < is.h; ++y)
        for (Index x = 0; x < is.w; ++x) padded(n, c, y + p, x + p) = input(n, c, y, x);

  const Index oh = spec.out_dim(is.h), ow = spec.out_dim(is.w);
  const Index cpg = spec.in_channels / spec.groups;
  const Index opg = spec.out_channels / spec.groups;
  Tensor<S> out(is.n, spec.out_channels, oh, ow);
  for (Index n = 0; n < is.n; ++n)
    for (Index o = 0; o < spec.out_channels; ++o) {
      const Index g = o / opg;
      for (Index y = 0; y < oh; ++y)
        for (Index x = 0; x < ow; ++x) {
          double acc = spec.has_bias ? static_cast<double>(bias[o]) : 0.0;
          for (Index c = 0; c < cpg; ++c)
            for (Index i = 0; i < k; ++i)
              for (Index j = 0; j < k; ++j)
                acc += static_cast<double>(weight(o, c, i, j)) *
                       static_cast<double>(padded(n, g * cpg + c, y * s + i * r, x * s + j * r));
          out(n, o, y, x) = static_cast<S>(acc);
        }
    }
  return out;
}

/// Central finite differences of `loss` against an analytic gradient.
/// Returns the worst relative mismatch (1e-6 denominator floor).
template <typename F>
double max_rel_fd_error(double* data, Index size, const double* analytic, F&& loss,
                        double h = 1e-3) {
  double worst = 0.0;
  for (Index i = 0; i < size; ++i) {
    const double save = data[i];
    data[i] = save + h;
    const double lp = loss();
    data[i] = save - h;
    const double lm = loss();
    data[i] = save;
    const double fd = (lp - lm) / (2.0 * h);
    const double an = analytic[i];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

/// Sum of squares in 64-bit; the usual finite-difference scalar loss.
template <typename S>
double sum_squares(const Tensor<S>& t) {
  double acc = 0.0;
  for (Index i = 0; i < t.count(); ++i) {
    const double v = static_cast<double>(t.data()[i]);
    acc += v * v;
  }
  return acc;
}

}  // namespace oracles

#endif  // DDCM_TESTS_ORACLES_HPP
