#ifndef DDCM_NETWORK_HPP
#define DDCM_NETWORK_HPP

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ddcm/ddcm_module.hpp"
#include "ddcm/tensor_io.hpp"

namespace ddcm {

enum class BackboneMode { toy, structural_resnet50, structural_se_resnext50 };

namespace detail {

/// Copyable atomic counter (instrumentation survives moving a network).
struct EvalCounter {
  std::atomic<std::uint64_t> value{0};
  EvalCounter() = default;
  EvalCounter(const EvalCounter& o) : value(o.value.load()) {}
  EvalCounter& operator=(const EvalCounter& o) {
    value.store(o.value.load());
    return *this;
  }
};

}  // namespace detail

/// Feature extractor feeding the high-level decoder stream. The toy mode is
/// runnable; the structural modes describe layer graphs for cost accounting
/// only and refuse to execute.
struct BackboneSpec {
  BackboneMode mode = BackboneMode::toy;
  std::vector<Index> toy_widths = {16, 32, 64};

  bool runnable() const { return mode == BackboneMode::toy; }

  Index out_channels() const {
    return mode == BackboneMode::toy ? toy_widths.back() : 1024;
  }

  /// Total spatial reduction: one pool-2 per toy stage; the truncated
  /// residual backbones end at 1/16 resolution.
  Index total_stride() const {
    if (mode == BackboneMode::toy) return Index(1) << toy_widths.size();
    return 16;
  }

  void validate() const {
    if (mode == BackboneMode::toy) {
      if (toy_widths.empty()) throw ShapeError("toy backbone needs at least one stage");
      for (Index w : toy_widths)
        if (w < 1) throw ShapeError("toy backbone widths must be >= 1");
    }
  }

  bool operator==(const BackboneSpec& o) const = default;
};

enum class FusionOp { concat, sum };
enum class PoolOp { max, avg };

/// The whole pipeline: backbone, low-level encoder stream, high-level
/// decoder stream, fusion head.
struct NetworkSpec {
  BackboneSpec backbone;
  DdcmSpec low_level;
  std::vector<DdcmSpec> high_level;
  FusionOp fusion = FusionOp::concat;
  PoolOp pool = PoolOp::max;
  Index fusion_hidden = 64;
  Index num_classes = 6;
  bool no_ll_encoder = false;
  bool no_dilation = false;

  /// Spec with the ablation flags folded in; build and analysis both
  /// consume this form.
  NetworkSpec resolved() const {
    NetworkSpec s = *this;
    if (s.no_dilation) {
      s.low_level = s.low_level.without_dilation();
      for (auto& m : s.high_level) m = m.without_dilation();
    }
    return s;
  }

  Index fused_channels() const {
    const Index hl = high_level.back().merge_out_channels;
    if (no_ll_encoder) return hl;
    return fusion == FusionOp::concat ? low_level.merge_out_channels + hl : hl;
  }

  void validate() const {
    backbone.validate();
    if (high_level.empty()) throw ShapeError("network: at least one high-level module required");
    if (high_level.front().in_channels != backbone.out_channels())
      throw ShapeError("network: first decoder expects " +
                       std::to_string(high_level.front().in_channels) + " channels, backbone yields " +
                       std::to_string(backbone.out_channels()));
    for (size_t i = 1; i < high_level.size(); ++i)
      if (high_level[i].in_channels != high_level[i - 1].merge_out_channels)
        throw ShapeError("network: decoder chain channel mismatch at module " + std::to_string(i));
    for (const auto& m : high_level) m.validate();
    if (!no_ll_encoder) {
      if (low_level.in_channels != 3)
        throw ShapeError("network: low-level encoder must take the 3-channel image");
      low_level.validate();
      if (fusion == FusionOp::sum &&
          low_level.merge_out_channels != high_level.back().merge_out_channels)
        throw ShapeError("network: sum fusion needs equal stream widths");
    }
    if (fusion_hidden < 1 || num_classes < 2)
      throw ShapeError("network: fusion_hidden >= 1 and num_classes >= 2 required");
  }
};

// ---------------------------------------------------------------------------

template <typename Scalar>
class Network {
 public:
  explicit Network(const NetworkSpec& raw_spec) : spec_(raw_spec.resolved()) {
    spec_.validate();
    if (spec_.backbone.mode == BackboneMode::toy) {
      Index in_ch = 3;
      for (Index w : spec_.backbone.toy_widths) {
        stages_.push_back(Stage{ConvLayer<Scalar>(ConvSpec{in_ch, w, 3, 1, 1, 1, -1, true}),
                                PreluLayer<Scalar>(w), BnLayer<Scalar>(w), {}, {}});
        in_ch = w;
      }
    }
    if (!spec_.no_ll_encoder) ll_.emplace(spec_.low_level);
    for (const auto& m : spec_.high_level) hl_.emplace_back(m);
    head_conv_ = ConvLayer<Scalar>(ConvSpec{spec_.fused_channels(), spec_.fusion_hidden, 3, 1, 1, 1, -1, true});
    head_act_ = PreluLayer<Scalar>(spec_.fusion_hidden);
    head_bn_ = BnLayer<Scalar>(spec_.fusion_hidden);
    cls_ = ConvLayer<Scalar>(ConvSpec{spec_.fusion_hidden, spec_.num_classes, 1, 1, 1, 1, 0, true});
  }

  void init(std::uint64_t seed) {
    Rng rng = Rng::keyed(seed, 0x6e657477ULL);  // one stream, layers consume in fixed order
    for (auto& st : stages_) st.conv.init(rng);
    if (ll_) ll_->init(rng);
    for (auto& m : hl_) m.init(rng);
    head_conv_.init(rng);
    cls_.init(rng);
  }

  /// images (n, 3, h, w) -> raw logits (n, num_classes, h, w).
  Tensor<Scalar> forward(const Tensor<Scalar>& images, Mode mode) {
    if (!spec_.backbone.runnable())
      throw ConfigError("backbone is structural (cost accounting only) and cannot run; use the toy backbone");
    const auto& s = images.shape();
    const Index stride = spec_.backbone.total_stride();
    if (s.c != 3) throw ShapeError("network: expected 3-channel images, got " + s.str());
    if (s.h % stride != 0 || s.w % stride != 0)
      throw ShapeError("network: spatial size " + s.str() + " not divisible by backbone stride " +
                       std::to_string(stride));

    Tensor<Scalar> t = images;
    for (auto& st : stages_) {
      t = st.bn.forward(st.act.forward(st.conv.forward(t, mode), mode), mode);
      st.pre_pool_shape = t.shape();
      auto pooled = max_pool(t, 2, 2);
      st.pool_argmax = std::move(pooled.argmax);
      t = std::move(pooled.out);
    }
    for (auto& m : hl_) t = m.forward(t, mode);

    Tensor<Scalar> fused = std::move(t);
    if (ll_) {
      ll_evals_.value.fetch_add(1, std::memory_order_relaxed);
      Tensor<Scalar> ll = ll_->forward(images, mode);
      ll_pre_pool_shape_ = ll.shape();
      if (spec_.pool == PoolOp::max) {
        auto pooled = max_pool(ll, stride, stride);
        ll_pool_argmax_ = std::move(pooled.argmax);
        ll = std::move(pooled.out);
      } else {
        ll = avg_pool(ll, stride);
      }
      if (spec_.fusion == FusionOp::concat) {
        fused = concat_channels(ll, fused);
      } else {
        fused.array() += ll.array();
      }
    }

    Tensor<Scalar> h1 = head_bn_.forward(head_act_.forward(head_conv_.forward(fused, mode), mode), mode);
    Tensor<Scalar> logits8 = cls_.forward(h1, mode);
    logits8_h_ = logits8.shape().h;
    logits8_w_ = logits8.shape().w;
    return bilinear_upsample(logits8, s.h, s.w);
  }

  /// Propagates d(loss)/d(logits); fills every parameter gradient. Only
  /// valid right after a train-mode forward.
  void backward(const Tensor<Scalar>& grad_logits) {
    Tensor<Scalar> g = bilinear_resize_backward(grad_logits, logits8_h_, logits8_w_);
    g = cls_.backward(g);
    g = head_conv_.backward(head_act_.backward(head_bn_.backward(g)));

    Tensor<Scalar> g_hl;
    if (ll_) {
      Tensor<Scalar> g_ll;
      if (spec_.fusion == FusionOp::concat) {
        auto [a, b] = concat_channels_backward(g, spec_.low_level.merge_out_channels,
                                               spec_.high_level.back().merge_out_channels);
        g_ll = std::move(a);
        g_hl = std::move(b);
      } else {
        g_ll = g;
        g_hl = std::move(g);
      }
      const Index stride = spec_.backbone.total_stride();
      if (spec_.pool == PoolOp::max) {
        g_ll = max_pool_backward(g_ll, ll_pool_argmax_, ll_pre_pool_shape_);
      } else {
        g_ll = avg_pool_backward(g_ll, ll_pre_pool_shape_, stride);
      }
      ll_->backward(g_ll);  // image gradient discarded
    } else {
      g_hl = std::move(g);
    }

    for (auto it = hl_.rbegin(); it != hl_.rend(); ++it) g_hl = it->backward(g_hl);
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
      g_hl = max_pool_backward(g_hl, it->pool_argmax, it->pre_pool_shape);
      g_hl = it->conv.backward(it->act.backward(it->bn.backward(g_hl)));
    }
  }

  std::vector<ParamRef<Scalar>> params() {
    std::vector<ParamRef<Scalar>> out;
    for (size_t i = 0; i < stages_.size(); ++i) {
      const std::string p = "backbone.stage" + std::to_string(i);
      stages_[i].conv.collect(p + ".conv", out);
      stages_[i].act.collect(p + ".act", out);
      stages_[i].bn.collect(p + ".bn", out);
    }
    if (ll_) ll_->collect("ll", out);
    for (size_t i = 0; i < hl_.size(); ++i) hl_[i].collect("hl" + std::to_string(i), out);
    head_conv_.collect("head.conv", out);
    head_act_.collect("head.act", out);
    head_bn_.collect("head.bn", out);
    cls_.collect("head.cls", out);
    return out;
  }

  std::vector<StateRef<Scalar>> state() {
    std::vector<StateRef<Scalar>> out;
    for (size_t i = 0; i < stages_.size(); ++i)
      stages_[i].bn.collect_state("backbone.stage" + std::to_string(i) + ".bn", out);
    if (ll_) ll_->collect_state("ll", out);
    for (size_t i = 0; i < hl_.size(); ++i) hl_[i].collect_state("hl" + std::to_string(i), out);
    head_bn_.collect_state("head.bn", out);
    return out;
  }

  /// Learnable parameter count of the executable graph.
  Index param_count() {
    Index n = 0;
    for (const auto& p : params()) n += p.size;
    return n;
  }

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t ll_eval_count() const { return ll_evals_.value.load(); }
  DdcmModule<Scalar>* low_level() { return ll_ ? &*ll_ : nullptr; }
  std::vector<DdcmModule<Scalar>>& high_level() { return hl_; }
  ConvLayer<Scalar>& head_conv() { return head_conv_; }

 private:
  template <typename T>
  static Tensor<T> avg_pool(const Tensor<T>& in, Index factor) {
    const auto& s = in.shape();
    Tensor<T> out(s.n, s.c, s.h / factor, s.w / factor);
    const double inv = 1.0 / static_cast<double>(factor * factor);
    parallel_for(s.n * s.c, [&](Index job) {
      const T* ip = in.data() + job * s.h * s.w;
      T* op = out.data() + job * (s.h / factor) * (s.w / factor);
      for (Index y = 0; y < s.h / factor; ++y)
        for (Index x = 0; x < s.w / factor; ++x) {
          double acc = 0.0;
          for (Index wy = 0; wy < factor; ++wy)
            for (Index wx = 0; wx < factor; ++wx)
              acc += static_cast<double>(ip[(y * factor + wy) * s.w + (x * factor + wx)]);
          op[y * (s.w / factor) + x] = static_cast<T>(acc * inv);
        }
    });
    return out;
  }

  template <typename T>
  static Tensor<T> avg_pool_backward(const Tensor<T>& g, const TensorShape& in_shape, Index factor) {
    Tensor<T> out(in_shape);
    const auto& gs = g.shape();
    const double inv = 1.0 / static_cast<double>(factor * factor);
    parallel_for(gs.n * gs.c, [&](Index job) {
      const T* gp = g.data() + job * gs.h * gs.w;
      T* op = out.data() + job * in_shape.h * in_shape.w;
      for (Index y = 0; y < gs.h; ++y)
        for (Index x = 0; x < gs.w; ++x) {
          const T v = static_cast<T>(static_cast<double>(gp[y * gs.w + x]) * inv);
          for (Index wy = 0; wy < factor; ++wy)
            for (Index wx = 0; wx < factor; ++wx)
              op[(y * factor + wy) * in_shape.w + (x * factor + wx)] = v;
        }
    });
    return out;
  }

  struct Stage {
    ConvLayer<Scalar> conv;
    PreluLayer<Scalar> act;
    BnLayer<Scalar> bn;
    std::vector<Index> pool_argmax;
    TensorShape pre_pool_shape;
  };

  NetworkSpec spec_;
  std::vector<Stage> stages_;
  std::optional<DdcmModule<Scalar>> ll_;
  std::vector<DdcmModule<Scalar>> hl_;
  ConvLayer<Scalar> head_conv_;
  PreluLayer<Scalar> head_act_;
  BnLayer<Scalar> head_bn_;
  ConvLayer<Scalar> cls_;
  Index logits8_h_ = 0, logits8_w_ = 0;
  TensorShape ll_pre_pool_shape_;
  std::vector<Index> ll_pool_argmax_;
  detail::EvalCounter ll_evals_;
};

// ---------------------------------------------------------------------------
// Checkpoints: the tensor container plus a "__spec__" text entry holding the
// canonical config that built the network.

template <typename Scalar>
void add_network_state(Network<Scalar>& net, TensorFile& tf) {
  auto dims_of = [](const ParamRef<Scalar>& p) {
    return std::vector<std::uint32_t>{static_cast<std::uint32_t>(p.size)};
  };
  for (auto& p : net.params()) {
    std::vector<float> buf(static_cast<size_t>(p.size));
    for (Index i = 0; i < p.size; ++i) buf[static_cast<size_t>(i)] = static_cast<float>(p.data[i]);
    tf.add(p.name, dims_of(p), buf.data());
  }
  for (auto& s : net.state()) {
    std::vector<float> buf(static_cast<size_t>(s.size));
    for (Index i = 0; i < s.size; ++i) buf[static_cast<size_t>(i)] = static_cast<float>(s.data[i]);
    tf.add(s.name, {static_cast<std::uint32_t>(s.size)}, buf.data());
  }
}

template <typename Scalar>
void load_network_state(Network<Scalar>& net, const TensorFile& tf) {
  auto restore = [&](const std::string& name, Scalar* dst, Index size) {
    const NamedTensor* e = tf.find(name);
    if (!e || static_cast<Index>(e->element_count()) != size)
      throw IoError("checkpoint inventory mismatch at '" + name + "'");
    for (Index i = 0; i < size; ++i) dst[i] = static_cast<Scalar>(e->data[static_cast<size_t>(i)]);
  };
  for (auto& p : net.params()) restore(p.name, p.data, p.size);
  for (auto& s : net.state()) restore(s.name, s.data, s.size);
}

template <typename Scalar>
void save_checkpoint(Network<Scalar>& net, const std::filesystem::path& path,
                     const std::string& config_text,
                     const TensorFile* extra = nullptr) {
  TensorFile tf;
  tf.add_text("__spec__", config_text);
  add_network_state(net, tf);
  if (extra)
    for (const auto& e : extra->entries()) tf.entries().push_back(e);
  tf.write(path);
}

inline TensorFile load_checkpoint(const std::filesystem::path& path) { return TensorFile::read(path); }

}  // namespace ddcm

#endif  // DDCM_NETWORK_HPP
