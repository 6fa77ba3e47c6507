#include "ddcm/inference.hpp"

#include <algorithm>
#include <cmath>

namespace ddcm {

namespace {

std::vector<Index> axis_origins(Index dim, Index window, Index stride) {
  std::vector<Index> origins;
  for (Index o = 0;; o += stride) {
    if (o + window >= dim) {
      origins.push_back(dim - window);
      break;
    }
    origins.push_back(o);
  }
  return origins;
}

Tensor<float> crop_window(const Tensor<float>& img, Index oy, Index ox, Index window) {
  const auto& s = img.shape();
  Tensor<float> out(1, s.c, window, window);
  for (Index c = 0; c < s.c; ++c)
    for (Index y = 0; y < window; ++y)
      std::copy(img.data() + img.offset(0, c, oy + y, ox),
                img.data() + img.offset(0, c, oy + y, ox + window),
                out.data() + out.offset(0, c, y, 0));
  return out;
}

Tensor<float> flip_tensor(const Tensor<float>& t, bool horizontal, bool vertical) {
  const auto& s = t.shape();
  Tensor<float> out(s);
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index y = 0; y < s.h; ++y) {
        const Index sy = vertical ? s.h - 1 - y : y;
        for (Index x = 0; x < s.w; ++x)
          out(n, c, y, x) = t(n, c, sy, horizontal ? s.w - 1 - x : x);
      }
  return out;
}

/// One window forward under the configured TTA set, averaged in prob or
/// logit space; returns (1, C, win, win) in the chosen space.
Tensor<float> predict_window(Network<float>& net, const Tensor<float>& window, const InferOptions& opt) {
  struct Flip {
    bool h, v;
  };
  const std::vector<Flip> set = opt.tta ? std::vector<Flip>{{false, false}, {true, false}, {false, true}, {true, true}}
                                        : std::vector<Flip>{{false, false}};
  Tensor<float> acc;
  for (size_t i = 0; i < set.size(); ++i) {
    Tensor<float> in = (set[i].h || set[i].v) ? flip_tensor(window, set[i].h, set[i].v) : window;
    Tensor<float> pred = net.forward(in, Mode::eval);
    if (opt.prob_space) pred = softmax_channels(pred);
    if (set[i].h || set[i].v) pred = flip_tensor(pred, set[i].h, set[i].v);
    if (i == 0) {
      acc = std::move(pred);
    } else {
      acc.array() += pred.array();
    }
  }
  if (set.size() > 1) acc.array() /= static_cast<float>(set.size());
  return acc;
}

LabelMap argmax_channels(const Tensor<float>& probs) {
  const auto& s = probs.shape();
  LabelMap out(s.n, s.h, s.w);
  for (Index n = 0; n < s.n; ++n)
    for (Index y = 0; y < s.h; ++y)
      for (Index x = 0; x < s.w; ++x) {
        Index best = 0;
        float bv = probs(n, 0, y, x);
        for (Index c = 1; c < s.c; ++c)
          if (probs(n, c, y, x) > bv) {
            bv = probs(n, c, y, x);
            best = c;
          }
        out(n, y, x) = static_cast<std::int32_t>(best);
      }
  return out;
}

}  // namespace

StitchPlan plan_windows(Index h, Index w, Index window, Index stride) {
  if (window < 1 || stride < 1) throw ShapeError("plan_windows: window/stride must be >= 1");
  if (stride > window)
    throw ShapeError("plan_windows: stride " + std::to_string(stride) + " exceeds window " +
                     std::to_string(window) + " and would leave uncovered pixels");
  if (window > h || window > w)
    throw ShapeError("plan_windows: window " + std::to_string(window) + " larger than image " +
                     std::to_string(h) + "x" + std::to_string(w));
  StitchPlan plan;
  plan.window = window;
  plan.stride = stride;
  plan.ys = axis_origins(h, window, stride);
  plan.xs = axis_origins(w, window, stride);
  plan.row_coverage.assign(static_cast<size_t>(h), 0);
  plan.col_coverage.assign(static_cast<size_t>(w), 0);
  for (Index o : plan.ys)
    for (Index y = o; y < o + window; ++y) ++plan.row_coverage[static_cast<size_t>(y)];
  for (Index o : plan.xs)
    for (Index x = o; x < o + window; ++x) ++plan.col_coverage[static_cast<size_t>(x)];
  return plan;
}

Prediction predict_stitched(Network<float>& net, const Tensor<float>& image, const StitchPlan& plan,
                            const InferOptions& opt) {
  const auto& s = image.shape();
  if (s.n != 1) throw ShapeError("predict_stitched: one image at a time");
  const Index C = net.spec().num_classes;

  // Window predictions are accumulated in 64-bit in fixed window order.
  std::vector<double> acc(static_cast<size_t>(C * s.h * s.w), 0.0);
  for (Index oy : plan.ys) {
    for (Index ox : plan.xs) {
      Tensor<float> win = crop_window(image, oy, ox, plan.window);
      Tensor<float> pred = predict_window(net, win, opt);
      for (Index c = 0; c < C; ++c)
        for (Index y = 0; y < plan.window; ++y)
          for (Index x = 0; x < plan.window; ++x)
            acc[static_cast<size_t>((c * s.h + oy + y) * s.w + ox + x)] +=
                static_cast<double>(pred(0, c, y, x));
    }
  }

  Prediction out;
  out.probs = Tensor<float>(1, C, s.h, s.w);
  if (opt.prob_space) {
    for (Index c = 0; c < C; ++c)
      for (Index y = 0; y < s.h; ++y)
        for (Index x = 0; x < s.w; ++x)
          out.probs(0, c, y, x) = static_cast<float>(
              acc[static_cast<size_t>((c * s.h + y) * s.w + x)] /
              static_cast<double>(plan.coverage_at(y, x)));
  } else {
    // logit space: average logits per pixel, then one softmax
    Tensor<float> logits(1, C, s.h, s.w);
    for (Index c = 0; c < C; ++c)
      for (Index y = 0; y < s.h; ++y)
        for (Index x = 0; x < s.w; ++x)
          logits(0, c, y, x) = static_cast<float>(
              acc[static_cast<size_t>((c * s.h + y) * s.w + x)] /
              static_cast<double>(plan.coverage_at(y, x)));
    out.probs = softmax_channels(logits);
  }
  out.classes = argmax_channels(out.probs);
  return out;
}

Prediction predict_image(Network<float>& net, const Tensor<float>& image, Index window, Index stride,
                         const InferOptions& opt) {
  const auto& s = image.shape();
  const Index net_stride = net.spec().backbone.total_stride();
  Index win = std::min({window, s.h, s.w});
  win = (win / net_stride) * net_stride;
  if (win < net_stride)
    throw ShapeError("predict: image " + s.str() + " smaller than the backbone stride " +
                     std::to_string(net_stride));
  return predict_stitched(net, image, plan_windows(s.h, s.w, win, std::min(stride, win)), opt);
}

Prediction predict_downscaled(Network<float>& net, const Tensor<float>& image, Index factor,
                              Index window, Index stride, const InferOptions& opt) {
  if (factor < 1) throw ShapeError("predict_downscaled: factor must be >= 1");
  const auto& s = image.shape();
  if (factor == 1) return predict_image(net, image, window, stride, opt);
  const Index dh = static_cast<Index>(std::llround(static_cast<double>(s.h) / factor));
  const Index dw = static_cast<Index>(std::llround(static_cast<double>(s.w) / factor));
  const Index net_stride = net.spec().backbone.total_stride();
  if (dh < net_stride || dw < net_stride)
    throw ShapeError("predict_downscaled: image degenerates below the backbone stride at factor " +
                     std::to_string(factor));
  Tensor<float> small = bilinear_resize(image, dh, dw);
  Prediction low = predict_image(net, small, window, stride, opt);
  Prediction out;
  out.probs = bilinear_upsample(low.probs, s.h, s.w);
  out.classes = argmax_channels(out.probs);
  return out;
}

}  // namespace ddcm
