#ifndef DDCM_LOSS_HPP
#define DDCM_LOSS_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "ddcm/parallel.hpp"
#include "ddcm/tensor.hpp"

namespace ddcm {

/// Median-frequency-balancing weights: W_c = median({f_c > 0}) / f_c.
/// Zero-frequency classes get weight 0 and do not enter the median (they
/// cannot be learned from the data). Even counts use the mean of the two
/// middle values.
inline VecX<double> mfb_weights(const VecX<double>& freqs) {
  if (freqs.size() == 0) throw ShapeError("mfb_weights: empty frequency vector");
  std::vector<double> positive;
  for (Index i = 0; i < freqs.size(); ++i) {
    if (freqs[i] < 0.0) throw NumericError("mfb_weights: negative frequency");
    if (freqs[i] > 0.0) positive.push_back(freqs[i]);
  }
  VecX<double> w = VecX<double>::Zero(freqs.size());
  if (positive.empty()) return w;
  std::sort(positive.begin(), positive.end());
  const size_t m = positive.size();
  const double median =
      (m % 2 == 1) ? positive[m / 2] : 0.5 * (positive[m / 2 - 1] + positive[m / 2]);
  for (Index i = 0; i < freqs.size(); ++i)
    if (freqs[i] > 0.0) w[i] = median / freqs[i];
  return w;
}

template <typename Scalar>
struct CeResult {
  double loss = 0.0;
  Tensor<Scalar> grad_logits;
  Index counted_pixels = 0;
};

/// Class-weighted softmax cross-entropy, averaged over non-ignored pixels:
///   Loss = -(1/N) sum_pixels W_label * log p_label
/// Gradient w.r.t. the logits is exact: (W_label/N) * (softmax - onehot).
template <typename Scalar>
CeResult<Scalar> weighted_ce_loss(const Tensor<Scalar>& logits, const LabelMap& labels,
                                  const VecX<double>& weights,
                                  std::optional<std::int32_t> ignore_id = std::nullopt) {
  const auto& s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w)
    throw ShapeError("weighted_ce_loss: label map " + std::to_string(labels.n) + "x" +
                     std::to_string(labels.h) + "x" + std::to_string(labels.w) +
                     " does not match logits " + s.str());
  if (weights.size() != s.c)
    throw ShapeError("weighted_ce_loss: weight vector length != class count");

  CeResult<Scalar> res;
  res.grad_logits = Tensor<Scalar>(s);
  const Index plane = s.h * s.w;

  std::vector<double> loss_per_image(static_cast<size_t>(s.n), 0.0);
  std::vector<Index> count_per_image(static_cast<size_t>(s.n), 0);

  // Count first: the 1/N factor enters each pixel's gradient.
  for (Index n = 0; n < s.n; ++n)
    for (Index e = 0; e < plane; ++e) {
      const std::int32_t lbl = labels.v[static_cast<size_t>(n * plane + e)];
      if (ignore_id && lbl == *ignore_id) continue;
      if (lbl < 0 || lbl >= s.c)
        throw ShapeError("weighted_ce_loss: label " + std::to_string(lbl) + " out of range");
      ++count_per_image[static_cast<size_t>(n)];
    }
  Index total = 0;
  for (auto c : count_per_image) total += c;
  res.counted_pixels = total;
  if (total == 0) return res;
  const double inv_n = 1.0 / static_cast<double>(total);

  parallel_for(s.n, [&](Index n) {
    double acc = 0.0;
    std::vector<double> p(static_cast<size_t>(s.c));
    for (Index e = 0; e < plane; ++e) {
      const std::int32_t lbl = labels.v[static_cast<size_t>(n * plane + e)];
      const bool skip = ignore_id && lbl == *ignore_id;
      double mx = static_cast<double>(logits.data()[(n * s.c) * plane + e]);
      for (Index c = 1; c < s.c; ++c)
        mx = std::max(mx, static_cast<double>(logits.data()[(n * s.c + c) * plane + e]));
      double sum = 0.0;
      for (Index c = 0; c < s.c; ++c) {
        p[static_cast<size_t>(c)] =
            std::exp(static_cast<double>(logits.data()[(n * s.c + c) * plane + e]) - mx);
        sum += p[static_cast<size_t>(c)];
      }
      if (skip) {
        for (Index c = 0; c < s.c; ++c)
          res.grad_logits.data()[(n * s.c + c) * plane + e] = Scalar(0);
        continue;
      }
      const double log_sum = std::log(sum);
      const double w = weights[lbl];
      const double z_lbl = static_cast<double>(logits.data()[(n * s.c + lbl) * plane + e]);
      acc += -w * (z_lbl - mx - log_sum);
      for (Index c = 0; c < s.c; ++c) {
        const double soft = p[static_cast<size_t>(c)] / sum;
        const double grad = w * inv_n * (soft - (c == lbl ? 1.0 : 0.0));
        res.grad_logits.data()[(n * s.c + c) * plane + e] = static_cast<Scalar>(grad);
      }
    }
    loss_per_image[static_cast<size_t>(n)] = acc;
  });

  double loss = 0.0;
  for (double v : loss_per_image) loss += v;  // fixed image order
  res.loss = loss * inv_n;
  return res;
}

}  // namespace ddcm

#endif  // DDCM_LOSS_HPP
