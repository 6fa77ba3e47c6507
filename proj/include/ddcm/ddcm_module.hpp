#ifndef DDCM_DDCM_MODULE_HPP
#define DDCM_DDCM_MODULE_HPP

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ddcm/layers.hpp"

namespace ddcm {

/// How a DDCM module strides its DC-block convolutions.
struct StrideMode {
  enum class Kind { unit, fixed, dynamic } kind = Kind::unit;
  Index value = 1;  // used when kind == fixed

  Index for_rate(Index r) const {
    switch (kind) {
      case Kind::unit: return 1;
      case Kind::fixed: return value;
      case Kind::dynamic: return r + 1;
    }
    return 1;
  }

  static StrideMode unit() { return {}; }
  static StrideMode fixed(Index s) { return {Kind::fixed, s}; }
  static StrideMode dynamic() { return {Kind::dynamic, 0}; }

  bool operator==(const StrideMode& o) const = default;
};

/// One DC block: dilated conv -> PReLU -> BN, upsampled back if strided,
/// then stacked onto its own input.
struct DcBlockSpec {
  Index in_channels = 0;
  Index width = 0;  // channels produced by the block's convolution
  Index kernel = 3;
  Index dilation = 1;
  Index groups = 1;
  Index stride = 1;

  ConvSpec conv() const {
    return ConvSpec{in_channels, width, kernel, dilation, stride, groups, -1, true};
  }

  Index out_channels() const { return in_channels + width; }

  void validate() const {
    if (width < 1) throw ShapeError("dc block: width must be >= 1");
    conv().validate();
  }
};

/// A DDCM module: a chain of DC blocks followed by the 1x1 merging layer
/// (PReLU + BN) over the whole feature stack.
struct DdcmSpec {
  Index in_channels = 0;
  std::vector<Index> dilation_rates;
  Index width = 0;  // per-block width m; 0 means "same as merge_out_channels"
  Index kernel = 3;
  Index groups = 1;
  StrideMode stride;
  Index merge_out_channels = 0;

  Index block_width() const { return width > 0 ? width : merge_out_channels; }

  Index stacked_channels() const {
    return in_channels + static_cast<Index>(dilation_rates.size()) * block_width();
  }

  DcBlockSpec block(Index i) const {
    const Index r = dilation_rates[static_cast<size_t>(i)];
    return DcBlockSpec{in_channels + i * block_width(), block_width(), kernel, r, groups,
                       stride.for_rate(r)};
  }

  ConvSpec merge_conv() const {
    return ConvSpec{stacked_channels(), merge_out_channels, 1, 1, 1, 1, 0, true};
  }

  void validate() const {
    if (dilation_rates.empty()) throw ShapeError("ddcm: dilation rate list is empty");
    for (Index r : dilation_rates)
      if (r < 1) throw ShapeError("ddcm: dilation rates must be >= 1");
    if (merge_out_channels < 1) throw ShapeError("ddcm: merge_out_channels must be >= 1");
    if (block_width() < 1) throw ShapeError("ddcm: block width must be >= 1");
    for (Index i = 0; i < static_cast<Index>(dilation_rates.size()); ++i) block(i).validate();
    merge_conv().validate();
  }

  /// Same module with every dilation rate forced to 1 (ablation).
  DdcmSpec without_dilation() const {
    DdcmSpec s = *this;
    for (auto& r : s.dilation_rates) r = 1;
    return s;
  }

  bool operator==(const DdcmSpec& o) const = default;
};

// ---------------------------------------------------------------------------
// Receptive-field calculus for a DDCM module with unit stride.

struct ReceptiveFields {
  std::vector<std::vector<Index>> per_layer;  // fused RF list of each block output
  std::vector<Index> merged;                  // union over the final stack, descending
};

/// Fused receptive fields of kernel-k DC blocks with the given rates.
/// Block i adds k_eff - 1 to the scalar RF of every feature already in its
/// stack (the raw input counts with RF 1); the merged list is the union of
/// all per-layer lists plus the raw input.
inline ReceptiveFields fused_receptive_fields(Index k, const std::vector<Index>& rates) {
  if (rates.empty()) throw ShapeError("fused_receptive_fields: empty rate list");
  ReceptiveFields rf;
  std::vector<Index> feature_rf{1};  // scalar RF per stack feature, oldest first
  std::set<Index, std::greater<Index>> merged{1};
  for (Index r : rates) {
    const Index grow = effective_kernel(k, r) - 1;
    std::vector<Index> layer;
    for (auto it = feature_rf.rbegin(); it != feature_rf.rend(); ++it) {
      layer.push_back(*it + grow);
      merged.insert(*it + grow);
    }
    feature_rf.push_back(layer.front());  // newest feature carries the largest RF
    rf.per_layer.push_back(std::move(layer));
  }
  rf.merged.assign(merged.begin(), merged.end());
  return rf;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
class DcBlock {
 public:
  DcBlock() = default;
  explicit DcBlock(const DcBlockSpec& spec)
      : spec_(spec), conv_(spec.conv()), act_(spec.width), bn_(spec.width) {
    spec_.validate();
  }

  void init(Rng& rng) { conv_.init(rng); }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    const Index h = x.shape().h, w = x.shape().w;
    Tensor<Scalar> y = bn_.forward(act_.forward(conv_.forward(x, mode), mode), mode);
    if (spec_.stride > 1) {
      conv_out_h_ = y.shape().h;
      conv_out_w_ = y.shape().w;
      y = bilinear_upsample(y, h, w);
    }
    return concat_channels(y, x);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    auto [gy, gx_pass] = concat_channels_backward(grad_out, spec_.width, spec_.in_channels);
    if (spec_.stride > 1) gy = bilinear_resize_backward(gy, conv_out_h_, conv_out_w_);
    Tensor<Scalar> gx = conv_.backward(act_.backward(bn_.backward(gy)));
    gx.array() += gx_pass.array();
    return gx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Scalar>>& out) {
    conv_.collect(prefix + ".conv", out);
    act_.collect(prefix + ".act", out);
    bn_.collect(prefix + ".bn", out);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<Scalar>>& out) {
    bn_.collect_state(prefix + ".bn", out);
  }

  const DcBlockSpec& spec() const { return spec_; }
  ConvLayer<Scalar>& conv() { return conv_; }
  PreluLayer<Scalar>& act() { return act_; }
  BnLayer<Scalar>& bn() { return bn_; }

 private:
  DcBlockSpec spec_;
  ConvLayer<Scalar> conv_;
  PreluLayer<Scalar> act_;
  BnLayer<Scalar> bn_;
  Index conv_out_h_ = 0, conv_out_w_ = 0;
};

template <typename Scalar>
class DdcmModule {
 public:
  DdcmModule() = default;
  explicit DdcmModule(const DdcmSpec& spec)
      : spec_(spec),
        merge_(spec.merge_conv()),
        merge_act_(spec.merge_out_channels),
        merge_bn_(spec.merge_out_channels) {
    spec_.validate();
    for (Index i = 0; i < static_cast<Index>(spec_.dilation_rates.size()); ++i)
      blocks_.emplace_back(spec_.block(i));
  }

  void init(Rng& rng) {
    for (auto& b : blocks_) b.init(rng);
    merge_.init(rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    Tensor<Scalar> stack = x;
    for (auto& b : blocks_) stack = b.forward(stack, mode);
    return merge_bn_.forward(merge_act_.forward(merge_.forward(stack, mode), mode), mode);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    Tensor<Scalar> g = merge_.backward(merge_act_.backward(merge_bn_.backward(grad_out)));
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
    return g;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Scalar>>& out) {
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
    merge_.collect(prefix + ".merge", out);
    merge_act_.collect(prefix + ".merge_act", out);
    merge_bn_.collect(prefix + ".merge_bn", out);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<Scalar>>& out) {
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect_state(prefix + ".block" + std::to_string(i), out);
    merge_bn_.collect_state(prefix + ".merge_bn", out);
  }

  const DdcmSpec& spec() const { return spec_; }
  std::vector<DcBlock<Scalar>>& blocks() { return blocks_; }
  ConvLayer<Scalar>& merge() { return merge_; }
  PreluLayer<Scalar>& merge_act() { return merge_act_; }
  BnLayer<Scalar>& merge_bn() { return merge_bn_; }

 private:
  DdcmSpec spec_;
  std::vector<DcBlock<Scalar>> blocks_;
  ConvLayer<Scalar> merge_;
  PreluLayer<Scalar> merge_act_;
  BnLayer<Scalar> merge_bn_;
};

}  // namespace ddcm

#endif  // DDCM_DDCM_MODULE_HPP
