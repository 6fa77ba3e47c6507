#ifndef DDCM_INFERENCE_HPP
#define DDCM_INFERENCE_HPP

#include <vector>

#include "ddcm/network.hpp"

namespace ddcm {

/// Sliding-window tiling of one image axis pair: origins step by `stride`
/// and the last origin is clamped so the window ends exactly at the edge.
struct StitchPlan {
  Index window = 448;
  Index stride = 100;
  std::vector<Index> ys, xs;           // window origins per axis
  std::vector<Index> row_coverage;     // windows covering each row
  std::vector<Index> col_coverage;     // windows covering each column

  Index coverage_at(Index y, Index x) const {
    return row_coverage[static_cast<size_t>(y)] * col_coverage[static_cast<size_t>(x)];
  }
  Index window_count() const { return static_cast<Index>(ys.size() * xs.size()); }
};

StitchPlan plan_windows(Index h, Index w, Index window, Index stride);

struct InferOptions {
  bool tta = false;            // average over {identity, h-flip, v-flip, hv-flip}
  bool prob_space = true;      // average softmax outputs; false averages logits
};

struct Prediction {
  LabelMap classes;      // (1, h, w) argmax map
  Tensor<float> probs;   // (1, C, h, w), per-pixel probabilities summing to 1
};

/// Predicts every window, averages overlapping per-pixel predictions by
/// coverage count, and takes the per-pixel argmax.
Prediction predict_stitched(Network<float>& net, const Tensor<float>& image, const StitchPlan& plan,
                            const InferOptions& opt = {});

/// Convenience wrapper: plans windows for the image, clamping the window to
/// the image and to a multiple of the backbone stride.
Prediction predict_image(Network<float>& net, const Tensor<float>& image, Index window, Index stride,
                         const InferOptions& opt = {});

/// Downsample by `factor`, predict (optionally with TTA), upsample the
/// probabilities back to the original size, then argmax.
Prediction predict_downscaled(Network<float>& net, const Tensor<float>& image, Index factor,
                              Index window, Index stride, const InferOptions& opt = {});

}  // namespace ddcm

#endif  // DDCM_INFERENCE_HPP
