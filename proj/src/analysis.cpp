#include "ddcm/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace ddcm {

namespace {

/// Accumulates layer costs while tracking the running activation shape.
class Walker {
 public:
  explicit Walker(TensorShape input) : shape_(input) { report_.input = input; }

  TensorShape shape() const { return shape_; }
  void set_shape(TensorShape s) { shape_ = s; }

  void conv(const std::string& name, const ConvSpec& spec) {
    LayerCost lc;
    lc.name = name;
    const Index cpg = spec.in_channels / spec.groups;
    lc.params = spec.out_channels * cpg * spec.kernel * spec.kernel +
                (spec.has_bias ? spec.out_channels : 0);
    const Index oh = spec.out_dim(shape_.h), ow = spec.out_dim(shape_.w);
    const double out_elems = dbl(shape_.n) * dbl(spec.out_channels) * dbl(oh) * dbl(ow);
    lc.conv_macs = out_elems * dbl(cpg) * dbl(spec.kernel) * dbl(spec.kernel);
    if (spec.has_bias) lc.other_flops += out_elems;
    shape_ = {shape_.n, spec.out_channels, oh, ow};
    lc.out = shape_;
    report_.layers.push_back(lc);
  }

  void bn(const std::string& name) {
    push(name, 2 * shape_.c, 2 * shape_.c, 0, 2.0 * elems());
  }
  void prelu(const std::string& name) { push(name, shape_.c, 0, 0, 2.0 * elems()); }
  void relu(const std::string& name) { push(name, 0, 0, 0, elems()); }
  void sigmoid(const std::string& name) { push(name, 0, 0, 0, 4.0 * elems()); }
  void channel_scale(const std::string& name) { push(name, 0, 0, 0, elems()); }
  void add(const std::string& name) { push(name, 0, 0, 0, elems()); }

  void pool(const std::string& name, Index window, Index stride, Index pad, bool is_max) {
    const Index oh = (shape_.h + 2 * pad - window) / stride + 1;
    const Index ow = (shape_.w + 2 * pad - window) / stride + 1;
    shape_ = {shape_.n, shape_.c, oh, ow};
    const double win_ops = is_max ? dbl(window * window - 1) : dbl(window * window);
    push(name, 0, 0, 0, win_ops * elems());
  }

  void global_avg_pool(const std::string& name) {
    const double cost = elems() + dbl(shape_.c) * dbl(shape_.n);
    shape_ = {shape_.n, shape_.c, 1, 1};
    push(name, 0, 0, 0, cost);
  }

  void resize(const std::string& name, Index oh, Index ow) {
    shape_ = {shape_.n, shape_.c, oh, ow};
    push(name, 0, 0, 0, 8.0 * elems());
  }

  /// 1x1 conv on a 1x1 map (squeeze-excite fc layers).
  void fc(const std::string& name, Index in, Index out) {
    LayerCost lc;
    lc.name = name;
    lc.params = in * out + out;
    lc.conv_macs = dbl(in) * dbl(out) * dbl(shape_.n);
    lc.other_flops = dbl(out) * dbl(shape_.n);
    shape_ = {shape_.n, out, 1, 1};
    lc.out = shape_;
    report_.layers.push_back(lc);
  }

  CostReport take() { return std::move(report_); }

 private:
  static double dbl(Index v) { return static_cast<double>(v); }
  double elems() const { return dbl(shape_.count()); }

  void push(const std::string& name, std::int64_t params, std::int64_t state, double macs, double other) {
    LayerCost lc;
    lc.name = name;
    lc.params = params;
    lc.state = state;
    lc.conv_macs = macs;
    lc.other_flops = other;
    lc.out = shape_;
    report_.layers.push_back(lc);
  }

  TensorShape shape_;
  CostReport report_;
};

void walk_ddcm(Walker& w, const std::string& prefix, const DdcmSpec& spec) {
  const TensorShape entry = w.shape();
  for (Index i = 0; i < static_cast<Index>(spec.dilation_rates.size()); ++i) {
    const DcBlockSpec b = spec.block(i);
    const std::string p = prefix + ".block" + std::to_string(i);
    const TensorShape stack_in{entry.n, b.in_channels, entry.h, entry.w};
    w.set_shape(stack_in);
    w.conv(p + ".conv", b.conv());
    w.prelu(p + ".act");
    w.bn(p + ".bn");
    if (b.stride > 1) w.resize(p + ".up", entry.h, entry.w);
    // concat with the stack: no arithmetic
  }
  w.set_shape({entry.n, spec.stacked_channels(), entry.h, entry.w});
  w.conv(prefix + ".merge", spec.merge_conv());
  w.prelu(prefix + ".merge_act");
  w.bn(prefix + ".merge_bn");
}

// Residual bottleneck: 1x1 -> 3x3 (stride, groups) -> 1x1 x4, BN+ReLU,
// optional downsample projection and squeeze-excite block.
void walk_bottleneck(Walker& w, const std::string& p, Index in, Index width, Index out, Index stride,
                     Index groups, bool se) {
  const TensorShape entry = w.shape();
  w.conv(p + ".conv1", ConvSpec{in, width, 1, 1, 1, 1, 0, false});
  w.bn(p + ".bn1");
  w.relu(p + ".relu1");
  w.conv(p + ".conv2", ConvSpec{width, width, 3, 1, stride, groups, 1, false});
  w.bn(p + ".bn2");
  w.relu(p + ".relu2");
  w.conv(p + ".conv3", ConvSpec{width, out, 1, 1, 1, 1, 0, false});
  w.bn(p + ".bn3");
  const TensorShape main_out = w.shape();
  if (se) {
    const Index red = out / 16;
    w.global_avg_pool(p + ".se.pool");
    w.fc(p + ".se.fc1", out, red);
    w.relu(p + ".se.relu");
    w.fc(p + ".se.fc2", red, out);
    w.sigmoid(p + ".se.sigmoid");
    w.set_shape(main_out);
    w.channel_scale(p + ".se.scale");
  }
  if (in != out || stride != 1) {
    w.set_shape(entry);
    w.conv(p + ".downsample", ConvSpec{in, out, 1, 1, stride, 1, 0, false});
    w.bn(p + ".downsample_bn");
  }
  w.set_shape(main_out);
  w.add(p + ".add");
  w.relu(p + ".relu3");
}

/// Truncated residual stem: conv1 + three bottleneck stages, 1024 channels
/// at 1/16 resolution.
void walk_residual_backbone(Walker& w, bool se_resnext) {
  const Index groups = se_resnext ? 32 : 1;
  // {blocks, bottleneck width, out channels, stride}; widths follow the
  // 32x4d recipe when grouped
  struct StageDef {
    Index blocks, width, out, stride;
  };
  const StageDef stages_plain[3] = {{3, 64, 256, 1}, {4, 128, 512, 2}, {6, 256, 1024, 2}};
  const StageDef stages_grouped[3] = {{3, 128, 256, 1}, {4, 256, 512, 2}, {6, 512, 1024, 2}};
  const StageDef* stages = se_resnext ? stages_grouped : stages_plain;

  w.conv("backbone.conv1", ConvSpec{3, 64, 7, 1, 2, 1, 3, false});
  w.bn("backbone.bn1");
  w.relu("backbone.relu1");
  w.pool("backbone.maxpool", 3, 2, 1, true);
  Index in = 64;
  for (int s = 0; s < 3; ++s) {
    for (Index b = 0; b < stages[s].blocks; ++b) {
      const std::string p = "backbone.layer" + std::to_string(s + 1) + "." + std::to_string(b);
      walk_bottleneck(w, p, in, stages[s].width, stages[s].out, b == 0 ? stages[s].stride : 1, groups,
                      se_resnext);
      in = stages[s].out;
    }
  }
}

CostReport walk_network(const NetworkSpec& raw, TensorShape input) {
  const NetworkSpec spec = raw.resolved();
  spec.validate();
  const Index stride = spec.backbone.total_stride();
  if (input.c != 3) throw ShapeError("analysis: input must have 3 channels");
  if (input.h % stride != 0 || input.w % stride != 0)
    throw ShapeError("analysis: input " + input.str() + " not divisible by backbone stride " +
                     std::to_string(stride));

  Walker w(input);
  switch (spec.backbone.mode) {
    case BackboneMode::toy: {
      Index in = 3;
      for (size_t i = 0; i < spec.backbone.toy_widths.size(); ++i) {
        const std::string p = "backbone.stage" + std::to_string(i);
        w.conv(p + ".conv", ConvSpec{in, spec.backbone.toy_widths[i], 3, 1, 1, 1, -1, true});
        w.prelu(p + ".act");
        w.bn(p + ".bn");
        w.pool(p + ".pool", 2, 2, 0, true);
        in = spec.backbone.toy_widths[i];
      }
      break;
    }
    case BackboneMode::structural_resnet50:
      walk_residual_backbone(w, false);
      break;
    case BackboneMode::structural_se_resnext50:
      walk_residual_backbone(w, true);
      break;
  }

  for (size_t i = 0; i < spec.high_level.size(); ++i)
    walk_ddcm(w, "hl" + std::to_string(i), spec.high_level[i]);
  const TensorShape hl_out = w.shape();

  if (!spec.no_ll_encoder) {
    w.set_shape(input);
    walk_ddcm(w, "ll", spec.low_level);
    w.pool("ll.pool", stride, stride, 0, spec.pool == PoolOp::max);
    if (spec.fusion == FusionOp::sum) {
      w.add("fusion.sum");
      w.set_shape(hl_out);
    } else {
      w.set_shape({hl_out.n, spec.fused_channels(), hl_out.h, hl_out.w});
    }
  } else {
    w.set_shape(hl_out);
  }

  w.conv("head.conv", ConvSpec{spec.fused_channels(), spec.fusion_hidden, 3, 1, 1, 1, -1, true});
  w.prelu("head.act");
  w.bn("head.bn");
  w.conv("head.cls", ConvSpec{spec.fusion_hidden, spec.num_classes, 1, 1, 1, 1, 0, true});
  w.resize("head.up", input.h, input.w);
  return w.take();
}

}  // namespace

std::int64_t CostReport::total_params() const {
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.params;
  return n;
}

std::int64_t CostReport::total_state() const {
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.state;
  return n;
}

double CostReport::conv_flops(FlopConvention c) const {
  double macs = 0;
  for (const auto& l : layers) macs += l.conv_macs;
  return c == FlopConvention::mac2 ? 2.0 * macs : macs;
}

double CostReport::total_flops(FlopConvention c) const {
  double other = 0;
  for (const auto& l : layers) other += l.other_flops;
  return conv_flops(c) + other;
}

CostReport count_params(const NetworkSpec& spec) {
  const Index stride = spec.backbone.total_stride();
  return walk_network(spec, TensorShape{1, 3, 16 * stride, 16 * stride});
}

CostReport count_flops(const NetworkSpec& spec, TensorShape input) { return walk_network(spec, input); }

std::string cost_report_text(const CostReport& r, FlopConvention convention, bool both) {
  std::ostringstream os;
  char buf[256];
  os << "layer                                    params     out shape        GFLOPs(conv)\n";
  const double conv_scale = convention == FlopConvention::mac2 ? 2.0 : 1.0;
  for (const auto& l : r.layers) {
    std::snprintf(buf, sizeof(buf), "%-40s %-10lld %-16s %.4f\n", l.name.c_str(),
                  static_cast<long long>(l.params), l.out.str().c_str(),
                  l.conv_macs * conv_scale / 1e9);
    os << buf;
  }
  os << "\n";
  std::snprintf(buf, sizeof(buf), "input                 %s\n", r.input.str().c_str());
  os << buf;
  std::snprintf(buf, sizeof(buf), "total params          %lld (%.2f M)\n",
                static_cast<long long>(r.total_params()), static_cast<double>(r.total_params()) / 1e6);
  os << buf;
  std::snprintf(buf, sizeof(buf), "bn running state      %lld\n", static_cast<long long>(r.total_state()));
  os << buf;
  auto emit = [&](FlopConvention c, const char* tag) {
    std::snprintf(buf, sizeof(buf), "FLOPs %-5s conv-only %.4f G   all-ops %.4f G\n", tag,
                  r.conv_flops(c) / 1e9, r.total_flops(c) / 1e9);
    os << buf;
  };
  if (both) {
    emit(FlopConvention::mac1, "mac1");
    emit(FlopConvention::mac2, "mac2");
  } else {
    emit(convention, convention == FlopConvention::mac2 ? "mac2" : "mac1");
  }
  return os.str();
}

std::string cost_report_csv(const CostReport& r) {
  std::ostringstream os;
  os << "layer,params,state,out_n,out_c,out_h,out_w,conv_macs,other_flops\n";
  for (const auto& l : r.layers)
    os << l.name << "," << l.params << "," << l.state << "," << l.out.n << "," << l.out.c << ","
       << l.out.h << "," << l.out.w << "," << l.conv_macs << "," << l.other_flops << "\n";
  os << "total," << r.total_params() << "," << r.total_state() << ",,,,,"
     << r.conv_flops(FlopConvention::mac1) << "," << r.total_flops(FlopConvention::mac1) -
     r.conv_flops(FlopConvention::mac1) << "\n";
  return os.str();
}

namespace {

std::string join(const std::vector<Index>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

std::string rf_report_text(Index kernel, const std::vector<Index>& rates, const StrideMode& stride) {
  const ReceptiveFields rf = fused_receptive_fields(kernel, rates);
  std::ostringstream os;
  os << "kernel " << kernel << ", rates [" << join(rates) << "]\n";
  for (size_t i = 0; i < rf.per_layer.size(); ++i) {
    os << "  block " << i << " (r=" << rates[i]
       << ", k_eff=" << effective_kernel(kernel, rates[i]) << "): [" << join(rf.per_layer[i]) << "]";
    const Index s = stride.for_rate(rates[i]);
    if (s > 1) os << "  (input sampled every " << s << " px, upsampled back)";
    os << "\n";
  }
  os << "  merged: [" << join(rf.merged) << "]\n";
  return os.str();
}

std::string rf_report_text(const NetworkSpec& raw) {
  const NetworkSpec spec = raw.resolved();
  std::ostringstream os;
  if (!spec.no_ll_encoder) {
    os << "low-level encoder\n"
       << rf_report_text(spec.low_level.kernel, spec.low_level.dilation_rates, spec.low_level.stride);
  }
  for (size_t i = 0; i < spec.high_level.size(); ++i)
    os << "high-level decoder " << i << "\n"
       << rf_report_text(spec.high_level[i].kernel, spec.high_level[i].dilation_rates,
                         spec.high_level[i].stride);
  return os.str();
}

std::string rf_report_csv(const NetworkSpec& raw) {
  const NetworkSpec spec = raw.resolved();
  std::ostringstream os;
  os << "module,block,rate,k_eff,stride,fused_rfs\n";
  auto emit = [&](const std::string& name, const DdcmSpec& m) {
    const ReceptiveFields rf = fused_receptive_fields(m.kernel, m.dilation_rates);
    for (size_t i = 0; i < rf.per_layer.size(); ++i) {
      const Index r = m.dilation_rates[i];
      os << name << "," << i << "," << r << "," << effective_kernel(m.kernel, r) << ","
         << m.stride.for_rate(r) << ",\"" << join(rf.per_layer[i]) << "\"\n";
    }
    os << name << ",merged,,,,\"" << join(rf.merged) << "\"\n";
  };
  if (!spec.no_ll_encoder) emit("ll", spec.low_level);
  for (size_t i = 0; i < spec.high_level.size(); ++i)
    emit("hl" + std::to_string(i), spec.high_level[i]);
  return os.str();
}

}  // namespace ddcm
