#ifndef DDCM_NN_OPS_HPP
#define DDCM_NN_OPS_HPP

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "ddcm/parallel.hpp"
#include "ddcm/tensor.hpp"

namespace ddcm {

// ---------------------------------------------------------------------------
// PReLU, one learnable slope per channel.

template <typename Scalar>
Tensor<Scalar> prelu(const Tensor<Scalar>& input, const VecX<Scalar>& slopes) {
  const auto& s = input.shape();
  if (slopes.size() != s.c)
    throw ShapeError("prelu: " + std::to_string(slopes.size()) + " slopes for " +
                     std::to_string(s.c) + " channels");
  Tensor<Scalar> out(s);
  parallel_for(s.n * s.c, [&](Index job) {
    const Index c = job % s.c;
    const Scalar a = slopes[c];
    auto in = input.plane(job / s.c, c);
    out.plane(job / s.c, c) = (in > Scalar(0)).select(in, a * in);
  });
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, VecX<Scalar>> prelu_backward(const Tensor<Scalar>& grad_out,
                                                       const Tensor<Scalar>& input,
                                                       const VecX<Scalar>& slopes) {
  const auto& s = input.shape();
  if (!(grad_out.shape() == s)) throw ShapeError("prelu backward: shape mismatch");
  Tensor<Scalar> grad_input(s);
  VecX<Scalar> grad_slopes = VecX<Scalar>::Zero(s.c);
  std::vector<double> slope_acc(static_cast<size_t>(s.c), 0.0);
  // One job per channel so the (n, y, x) reduction order for each slope
  // gradient is fixed.
  parallel_for(s.c, [&](Index c) {
    const Scalar a = slopes[c];
    double acc = 0.0;
    for (Index n = 0; n < s.n; ++n) {
      const Scalar* in = input.data() + input.offset(n, c, 0, 0);
      const Scalar* g = grad_out.data() + grad_out.offset(n, c, 0, 0);
      Scalar* gi = grad_input.data() + grad_input.offset(n, c, 0, 0);
      for (Index e = 0; e < s.h * s.w; ++e) {
        if (in[e] > Scalar(0)) {
          gi[e] = g[e];
        } else {
          gi[e] = a * g[e];
          acc += static_cast<double>(g[e]) * static_cast<double>(in[e]);
        }
      }
    }
    slope_acc[static_cast<size_t>(c)] = acc;
  });
  for (Index c = 0; c < s.c; ++c) grad_slopes[c] = static_cast<Scalar>(slope_acc[static_cast<size_t>(c)]);
  return {std::move(grad_input), std::move(grad_slopes)};
}

// ---------------------------------------------------------------------------
// Batch normalization over (n, h, w) per channel.

/// Batch statistics kept for the backward pass (64-bit).
struct BnStats {
  VecX<double> mean;
  VecX<double> inv_std;  // 1 / sqrt(var + eps)
};

namespace detail {

template <typename Scalar>
void check_bn_args(const Tensor<Scalar>& input, const VecX<Scalar>& gamma, const VecX<Scalar>& beta) {
  const auto& s = input.shape();
  if (gamma.size() != s.c || beta.size() != s.c)
    throw ShapeError("batch_norm: gamma/beta length must equal channel count " + std::to_string(s.c));
}

}  // namespace detail

/// Train-mode BN: normalizes with batch statistics, updates running stats by
/// EMA (running var uses the unbiased N/(N-1) estimate). Requires n*h*w >= 2.
template <typename Scalar>
Tensor<Scalar> batch_norm_train(const Tensor<Scalar>& input, const VecX<Scalar>& gamma,
                                const VecX<Scalar>& beta, VecX<Scalar>& running_mean,
                                VecX<Scalar>& running_var, double momentum, double eps,
                                BnStats* stats) {
  detail::check_bn_args(input, gamma, beta);
  const auto& s = input.shape();
  const Index reduce_n = s.n * s.h * s.w;
  if (reduce_n < 2)
    throw NumericError("batch_norm: train mode needs n*h*w >= 2, got " + std::to_string(reduce_n));

  VecX<double> mean(s.c), var(s.c);
  parallel_for(s.c, [&](Index c) {
    double sum = 0.0;
    for (Index n = 0; n < s.n; ++n) {
      const Scalar* in = input.data() + input.offset(n, c, 0, 0);
      for (Index e = 0; e < s.h * s.w; ++e) sum += static_cast<double>(in[e]);
    }
    const double m = sum / static_cast<double>(reduce_n);
    double sq = 0.0;
    for (Index n = 0; n < s.n; ++n) {
      const Scalar* in = input.data() + input.offset(n, c, 0, 0);
      for (Index e = 0; e < s.h * s.w; ++e) {
        const double d = static_cast<double>(in[e]) - m;
        sq += d * d;
      }
    }
    mean[c] = m;
    var[c] = sq / static_cast<double>(reduce_n);
  });

  if (stats) {
    stats->mean = mean;
    stats->inv_std = (var + eps).rsqrt();
  }

  Tensor<Scalar> out(s);
  parallel_for(s.n * s.c, [&](Index job) {
    const Index c = job % s.c;
    const double inv = 1.0 / std::sqrt(var[c] + eps);
    const double g = static_cast<double>(gamma[c]), b = static_cast<double>(beta[c]), m = mean[c];
    const Scalar* in = input.data() + input.offset(job / s.c, c, 0, 0);
    Scalar* o = out.data() + out.offset(job / s.c, c, 0, 0);
    for (Index e = 0; e < s.h * s.w; ++e)
      o[e] = static_cast<Scalar>(g * ((static_cast<double>(in[e]) - m) * inv) + b);
  });

  const double unbias = static_cast<double>(reduce_n) / static_cast<double>(reduce_n - 1);
  for (Index c = 0; c < s.c; ++c) {
    running_mean[c] = static_cast<Scalar>((1.0 - momentum) * static_cast<double>(running_mean[c]) +
                                          momentum * mean[c]);
    running_var[c] = static_cast<Scalar>((1.0 - momentum) * static_cast<double>(running_var[c]) +
                                         momentum * var[c] * unbias);
  }
  return out;
}

/// Eval-mode BN: out = gamma * (x - running_mean) / sqrt(running_var + eps) + beta.
template <typename Scalar>
Tensor<Scalar> batch_norm_eval(const Tensor<Scalar>& input, const VecX<Scalar>& gamma,
                               const VecX<Scalar>& beta, const VecX<Scalar>& running_mean,
                               const VecX<Scalar>& running_var, double eps) {
  detail::check_bn_args(input, gamma, beta);
  const auto& s = input.shape();
  Tensor<Scalar> out(s);
  parallel_for(s.n * s.c, [&](Index job) {
    const Index c = job % s.c;
    const double inv = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
    const double g = static_cast<double>(gamma[c]), b = static_cast<double>(beta[c]);
    const double m = static_cast<double>(running_mean[c]);
    const Scalar* in = input.data() + input.offset(job / s.c, c, 0, 0);
    Scalar* o = out.data() + out.offset(job / s.c, c, 0, 0);
    for (Index e = 0; e < s.h * s.w; ++e)
      o[e] = static_cast<Scalar>(g * ((static_cast<double>(in[e]) - m) * inv) + b);
  });
  return out;
}

template <typename Scalar>
struct BnGrads {
  Tensor<Scalar> input;
  VecX<Scalar> gamma;
  VecX<Scalar> beta;
};

/// Exact train-mode backward, accounting for the dependence of the batch
/// statistics on the input.
template <typename Scalar>
BnGrads<Scalar> batch_norm_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& input,
                                    const VecX<Scalar>& gamma, const BnStats& stats) {
  const auto& s = input.shape();
  if (!(grad_out.shape() == s)) throw ShapeError("batch_norm backward: shape mismatch");
  const double N = static_cast<double>(s.n * s.h * s.w);

  BnGrads<Scalar> grads;
  grads.input = Tensor<Scalar>(s);
  grads.gamma = VecX<Scalar>::Zero(s.c);
  grads.beta = VecX<Scalar>::Zero(s.c);

  parallel_for(s.c, [&](Index c) {
    const double m = stats.mean[c], inv = stats.inv_std[c];
    double sum_g = 0.0, sum_gx = 0.0;
    for (Index n = 0; n < s.n; ++n) {
      const Scalar* in = input.data() + input.offset(n, c, 0, 0);
      const Scalar* g = grad_out.data() + grad_out.offset(n, c, 0, 0);
      for (Index e = 0; e < s.h * s.w; ++e) {
        const double xh = (static_cast<double>(in[e]) - m) * inv;
        sum_g += static_cast<double>(g[e]);
        sum_gx += static_cast<double>(g[e]) * xh;
      }
    }
    const double scale = static_cast<double>(gamma[c]) * inv;
    for (Index n = 0; n < s.n; ++n) {
      const Scalar* in = input.data() + input.offset(n, c, 0, 0);
      const Scalar* g = grad_out.data() + grad_out.offset(n, c, 0, 0);
      Scalar* gi = grads.input.data() + grads.input.offset(n, c, 0, 0);
      for (Index e = 0; e < s.h * s.w; ++e) {
        const double xh = (static_cast<double>(in[e]) - m) * inv;
        gi[e] = static_cast<Scalar>(scale * (static_cast<double>(g[e]) - sum_g / N - xh * sum_gx / N));
      }
    }
    grads.gamma[c] = static_cast<Scalar>(sum_gx);
    grads.beta[c] = static_cast<Scalar>(sum_g);
  });
  return grads;
}

// ---------------------------------------------------------------------------
// Bilinear interpolation, align-corners-false source mapping.

namespace detail {

/// Source coordinate for output index i: (i + 0.5) * in/out - 0.5, clamped.
inline void bilinear_taps(Index i, Index in_dim, double scale, Index& i0, Index& i1, double& frac) {
  double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  i0 = std::min(static_cast<Index>(src), in_dim - 1);
  i1 = std::min(i0 + 1, in_dim - 1);
  frac = src - static_cast<double>(i0);
}

}  // namespace detail

/// General bilinear resize (grow or shrink, no antialiasing).
template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& input, Index out_h, Index out_w) {
  const auto& s = input.shape();
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output dims must be >= 1");
  if (out_h == s.h && out_w == s.w) return input;
  Tensor<Scalar> out(s.n, s.c, out_h, out_w);
  const double sy = static_cast<double>(s.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(s.w) / static_cast<double>(out_w);
  parallel_for(s.n * s.c, [&](Index job) {
    const Scalar* in = input.data() + job * s.h * s.w;
    Scalar* o = out.data() + job * out_h * out_w;
    for (Index y = 0; y < out_h; ++y) {
      Index y0, y1;
      double fy;
      detail::bilinear_taps(y, s.h, sy, y0, y1, fy);
      for (Index x = 0; x < out_w; ++x) {
        Index x0, x1;
        double fx;
        detail::bilinear_taps(x, s.w, sx, x0, x1, fx);
        const double v = (1.0 - fy) * (1.0 - fx) * static_cast<double>(in[y0 * s.w + x0]) +
                         (1.0 - fy) * fx * static_cast<double>(in[y0 * s.w + x1]) +
                         fy * (1.0 - fx) * static_cast<double>(in[y1 * s.w + x0]) +
                         fy * fx * static_cast<double>(in[y1 * s.w + x1]);
        o[y * out_w + x] = static_cast<Scalar>(v);
      }
    }
  });
  return out;
}

/// Upsampling-only wrapper: shrinking is rejected.
template <typename Scalar>
Tensor<Scalar> bilinear_upsample(const Tensor<Scalar>& input, Index out_h, Index out_w) {
  const auto& s = input.shape();
  if (out_h < s.h || out_w < s.w)
    throw ShapeError("bilinear_upsample: requested " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " smaller than input " + s.str());
  return bilinear_resize(input, out_h, out_w);
}

/// Exact adjoint of bilinear_resize (transposed interpolation weights).
template <typename Scalar>
Tensor<Scalar> bilinear_resize_backward(const Tensor<Scalar>& grad_out, Index in_h, Index in_w) {
  const auto& gs = grad_out.shape();
  Tensor<Scalar> grad_in(gs.n, gs.c, in_h, in_w);
  if (gs.h == in_h && gs.w == in_w) {
    grad_in.array() = grad_out.array();
    return grad_in;
  }
  const double sy = static_cast<double>(in_h) / static_cast<double>(gs.h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(gs.w);
  parallel_for(gs.n * gs.c, [&](Index job) {
    std::vector<double> acc(static_cast<size_t>(in_h * in_w), 0.0);
    const Scalar* g = grad_out.data() + job * gs.h * gs.w;
    for (Index y = 0; y < gs.h; ++y) {
      Index y0, y1;
      double fy;
      detail::bilinear_taps(y, in_h, sy, y0, y1, fy);
      for (Index x = 0; x < gs.w; ++x) {
        Index x0, x1;
        double fx;
        detail::bilinear_taps(x, in_w, sx, x0, x1, fx);
        const double gv = static_cast<double>(g[y * gs.w + x]);
        acc[static_cast<size_t>(y0 * in_w + x0)] += (1.0 - fy) * (1.0 - fx) * gv;
        acc[static_cast<size_t>(y0 * in_w + x1)] += (1.0 - fy) * fx * gv;
        acc[static_cast<size_t>(y1 * in_w + x0)] += fy * (1.0 - fx) * gv;
        acc[static_cast<size_t>(y1 * in_w + x1)] += fy * fx * gv;
      }
    }
    Scalar* gi = grad_in.data() + job * in_h * in_w;
    for (Index e = 0; e < in_h * in_w; ++e) gi[e] = static_cast<Scalar>(acc[static_cast<size_t>(e)]);
  });
  return grad_in;
}

// ---------------------------------------------------------------------------
// Max pooling.

template <typename Scalar>
struct MaxPoolResult {
  Tensor<Scalar> out;
  std::vector<Index> argmax;  // flat input offsets, first occurrence on ties
};

template <typename Scalar>
MaxPoolResult<Scalar> max_pool(const Tensor<Scalar>& input, Index window, Index stride) {
  const auto& s = input.shape();
  if (window < 1 || stride < 1) throw ShapeError("max_pool: window/stride must be >= 1");
  if (window > s.h || window > s.w)
    throw ShapeError("max_pool: window " + std::to_string(window) + " larger than input " + s.str());
  const Index oh = (s.h - window) / stride + 1;
  const Index ow = (s.w - window) / stride + 1;
  MaxPoolResult<Scalar> res;
  res.out = Tensor<Scalar>(s.n, s.c, oh, ow);
  res.argmax.assign(static_cast<size_t>(s.n * s.c * oh * ow), 0);
  parallel_for(s.n * s.c, [&](Index job) {
    const Scalar* in = input.data() + job * s.h * s.w;
    Scalar* o = res.out.data() + job * oh * ow;
    Index* am = res.argmax.data() + job * oh * ow;
    for (Index y = 0; y < oh; ++y) {
      for (Index x = 0; x < ow; ++x) {
        Index best = (y * stride) * s.w + (x * stride);
        Scalar bv = in[best];
        for (Index wy = 0; wy < window; ++wy) {
          for (Index wx = 0; wx < window; ++wx) {
            const Index idx = (y * stride + wy) * s.w + (x * stride + wx);
            if (in[idx] > bv) {
              bv = in[idx];
              best = idx;
            }
          }
        }
        o[y * ow + x] = bv;
        am[y * ow + x] = job * s.h * s.w + best;
      }
    }
  });
  return res;
}

template <typename Scalar>
Tensor<Scalar> max_pool_backward(const Tensor<Scalar>& grad_out, const std::vector<Index>& argmax,
                                 const TensorShape& input_shape) {
  const auto& gs = grad_out.shape();
  if (static_cast<size_t>(gs.count()) != argmax.size())
    throw ShapeError("max_pool backward: argmax size mismatch");
  Tensor<Scalar> grad_in(input_shape);
  const Index plane = input_shape.h * input_shape.w;
  const Index oplane = gs.h * gs.w;
  parallel_for(gs.n * gs.c, [&](Index job) {
    std::vector<double> acc(static_cast<size_t>(plane), 0.0);
    const Scalar* g = grad_out.data() + job * oplane;
    const Index* am = argmax.data() + job * oplane;
    const Index base = job * plane;
    for (Index e = 0; e < oplane; ++e)
      acc[static_cast<size_t>(am[e] - base)] += static_cast<double>(g[e]);
    Scalar* gi = grad_in.data() + base;
    for (Index e = 0; e < plane; ++e) gi[e] = static_cast<Scalar>(acc[static_cast<size_t>(e)]);
  });
  return grad_in;
}

// ---------------------------------------------------------------------------

/// Per-pixel softmax over the channel axis (shift-stabilized, 64-bit sums).
template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& logits) {
  const auto& s = logits.shape();
  Tensor<Scalar> out(s);
  const Index plane = s.h * s.w;
  parallel_for(s.n, [&](Index n) {
    for (Index e = 0; e < plane; ++e) {
      double mx = static_cast<double>(logits.data()[(n * s.c) * plane + e]);
      for (Index c = 1; c < s.c; ++c)
        mx = std::max(mx, static_cast<double>(logits.data()[(n * s.c + c) * plane + e]));
      double sum = 0.0;
      for (Index c = 0; c < s.c; ++c)
        sum += std::exp(static_cast<double>(logits.data()[(n * s.c + c) * plane + e]) - mx);
      for (Index c = 0; c < s.c; ++c) {
        const double p = std::exp(static_cast<double>(logits.data()[(n * s.c + c) * plane + e]) - mx) / sum;
        out.data()[(n * s.c + c) * plane + e] = static_cast<Scalar>(p);
      }
    }
  });
  return out;
}

}  // namespace ddcm

#endif  // DDCM_NN_OPS_HPP
