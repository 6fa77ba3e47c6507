#ifndef DDCM_AUGMENT_HPP
#define DDCM_AUGMENT_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "ddcm/rng.hpp"
#include "ddcm/tensor.hpp"

namespace ddcm {

/// An image/label pair. Images are (1, c, h, w) in [0, 1].
struct Sample {
  Tensor<float> image;
  LabelMap label;
};

struct AugmentConfig {
  double flip_prob = 0.5;   // horizontal and vertical flips, drawn independently
  bool affine = false;      // random shift/scale/rotate
  double shift_limit = 0.0625;
  double scale_limit = 0.1;
  double rotate_limit = 10.0;  // degrees
};

namespace detail {

inline void flip_h(Sample& s) {
  const auto& sh = s.image.shape();
  for (Index c = 0; c < sh.c; ++c)
    for (Index y = 0; y < sh.h; ++y)
      for (Index x = 0; x < sh.w / 2; ++x)
        std::swap(s.image(0, c, y, x), s.image(0, c, y, sh.w - 1 - x));
  for (Index y = 0; y < s.label.h; ++y)
    for (Index x = 0; x < s.label.w / 2; ++x)
      std::swap(s.label(0, y, x), s.label(0, y, s.label.w - 1 - x));
}

inline void flip_v(Sample& s) {
  const auto& sh = s.image.shape();
  for (Index c = 0; c < sh.c; ++c)
    for (Index y = 0; y < sh.h / 2; ++y)
      for (Index x = 0; x < sh.w; ++x)
        std::swap(s.image(0, c, y, x), s.image(0, c, sh.h - 1 - y, x));
  for (Index y = 0; y < s.label.h / 2; ++y)
    for (Index x = 0; x < s.label.w; ++x)
      std::swap(s.label(0, y, x), s.label(0, s.label.h - 1 - y, x));
}

/// Shared geometric transform: the image is sampled bilinearly, the label
/// nearest-neighbor, both with clamp-to-edge and the same dst->src mapping.
inline Sample warp_affine(const Sample& s, const Eigen::Matrix2d& inv_lin, const Eigen::Vector2d& inv_off) {
  const auto& sh = s.image.shape();
  Sample out;
  out.image = Tensor<float>(sh);
  out.label = LabelMap(s.label.n, s.label.h, s.label.w);
  const double cy = 0.5 * static_cast<double>(sh.h - 1);
  const double cx = 0.5 * static_cast<double>(sh.w - 1);
  for (Index y = 0; y < sh.h; ++y) {
    for (Index x = 0; x < sh.w; ++x) {
      const Eigen::Vector2d src =
          inv_lin * Eigen::Vector2d(static_cast<double>(y) - cy, static_cast<double>(x) - cx) + inv_off +
          Eigen::Vector2d(cy, cx);
      const double syf = std::clamp(src[0], 0.0, static_cast<double>(sh.h - 1));
      const double sxf = std::clamp(src[1], 0.0, static_cast<double>(sh.w - 1));
      const Index y0 = static_cast<Index>(syf), x0 = static_cast<Index>(sxf);
      const Index y1 = std::min(y0 + 1, sh.h - 1), x1 = std::min(x0 + 1, sh.w - 1);
      const double fy = syf - static_cast<double>(y0), fx = sxf - static_cast<double>(x0);
      for (Index c = 0; c < sh.c; ++c) {
        const double v = (1 - fy) * (1 - fx) * s.image(0, c, y0, x0) +
                         (1 - fy) * fx * s.image(0, c, y0, x1) +
                         fy * (1 - fx) * s.image(0, c, y1, x0) + fy * fx * s.image(0, c, y1, x1);
        out.image(0, c, y, x) = static_cast<float>(v);
      }
      const Index ny = static_cast<Index>(std::lround(syf));
      const Index nx = static_cast<Index>(std::lround(sxf));
      out.label(0, y, x) = s.label(0, std::min(ny, sh.h - 1), std::min(nx, sh.w - 1));
    }
  }
  return out;
}

}  // namespace detail

/// Applies the same random geometric transform to image and label. Flips are
/// exact pixel permutations; the affine stage interpolates the image and
/// takes nearest-neighbor labels.
inline Sample augment(const Sample& in, const AugmentConfig& cfg, Rng& rng) {
  Sample s = in;
  if (rng.bernoulli(cfg.flip_prob)) detail::flip_h(s);
  if (rng.bernoulli(cfg.flip_prob)) detail::flip_v(s);
  if (cfg.affine) {
    const double angle = rng.uniform(-cfg.rotate_limit, cfg.rotate_limit) * M_PI / 180.0;
    const double scale = 1.0 + rng.uniform(-cfg.scale_limit, cfg.scale_limit);
    const double dy = rng.uniform(-cfg.shift_limit, cfg.shift_limit) * s.image.shape().h;
    const double dx = rng.uniform(-cfg.shift_limit, cfg.shift_limit) * s.image.shape().w;
    Eigen::Matrix2d fwd;
    fwd << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    fwd *= scale;
    const Eigen::Matrix2d inv_lin = fwd.inverse();
    const Eigen::Vector2d inv_off = inv_lin * Eigen::Vector2d(-dy, -dx);
    s = detail::warp_affine(s, inv_lin, inv_off);
  }
  return s;
}

/// One planned training patch: tile index and top-left origin.
struct PatchPlan {
  Index tile = 0;
  Index y = 0;
  Index x = 0;
};

/// Uniform random patch origins, reshuffled each epoch, reproducible under
/// (seed, epoch) alone.
inline std::vector<PatchPlan> sample_patches(const std::vector<TensorShape>& tiles, Index patch,
                                             Index count, std::uint64_t seed, Index epoch) {
  if (tiles.empty()) throw ShapeError("sample_patches: no tiles");
  for (const auto& t : tiles)
    if (t.h < patch || t.w < patch)
      throw ShapeError("sample_patches: tile " + t.str() + " smaller than patch " + std::to_string(patch));
  Rng rng = Rng::keyed(seed, 0x70617463ULL, static_cast<std::uint64_t>(epoch));
  std::vector<PatchPlan> plans(static_cast<size_t>(count));
  for (auto& p : plans) {
    p.tile = static_cast<Index>(rng.uniform_int(tiles.size()));
    const auto& t = tiles[static_cast<size_t>(p.tile)];
    p.y = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(t.h - patch + 1)));
    p.x = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(t.w - patch + 1)));
  }
  return plans;
}

/// Cuts the planned patch out of a full tile sample.
inline Sample crop(const Sample& tile, const PatchPlan& p, Index patch) {
  const auto& sh = tile.image.shape();
  Sample out;
  out.image = Tensor<float>(1, sh.c, patch, patch);
  out.label = LabelMap(1, patch, patch);
  for (Index c = 0; c < sh.c; ++c)
    for (Index y = 0; y < patch; ++y)
      for (Index x = 0; x < patch; ++x)
        out.image(0, c, y, x) = tile.image(0, c, p.y + y, p.x + x);
  for (Index y = 0; y < patch; ++y)
    for (Index x = 0; x < patch; ++x) out.label(0, y, x) = tile.label(0, p.y + y, p.x + x);
  return out;
}

}  // namespace ddcm

#endif  // DDCM_AUGMENT_HPP
