#include "ddcm/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "ddcm/errors.hpp"

namespace ddcm {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void fail(int line, const std::string& msg) {
  if (line < 1) throw ConfigError(msg);  // single-line overrides carry no line number
  throw ConfigError("line " + std::to_string(line) + ": " + msg);
}

double parse_number(const std::string& key, const std::string& v, int line) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    fail(line, "key '" + key + "': expected number, got '" + v + "'");
  return d;
}

Index parse_int(const std::string& key, const std::string& v, int line) {
  const double d = parse_number(key, v, line);
  const Index i = static_cast<Index>(d);
  if (static_cast<double>(i) != d) fail(line, "key '" + key + "': expected integer, got '" + v + "'");
  return i;
}

bool parse_bool(const std::string& key, const std::string& v, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(line, "key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<Index> parse_int_list(const std::string& key, const std::string& v, int line,
                                  bool allow_empty) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell = trim(cell);
    if (cell.empty()) continue;
    out.push_back(parse_int(key, cell, line));
  }
  if (out.empty() && !allow_empty) fail(line, "key '" + key + "': expected a non-empty list");
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<Index>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

struct Field {
  std::string key;
  std::string doc;
  std::function<void(Config&, const std::string&, int)> set;
  std::function<std::string(const Config&)> get;
};

Field int_field(const char* key, const char* doc, Index Config::* member, Index lo, Index hi) {
  return {key, doc,
          [key, member, lo, hi](Config& c, const std::string& v, int line) {
            const Index i = parse_int(key, v, line);
            if (i < lo || i > hi)
              fail(line, "key '" + std::string(key) + "': value " + std::to_string(i) +
                             " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
            c.*member = i;
          },
          [member](const Config& c) { return std::to_string(c.*member); }};
}

Field u64_field(const char* key, const char* doc, std::uint64_t Config::* member) {
  return {key, doc,
          [key, member](Config& c, const std::string& v, int line) {
            const double d = parse_number(key, v, line);
            if (d < 0 || d != std::floor(d))
              fail(line, "key '" + std::string(key) + "': expected non-negative integer");
            c.*member = static_cast<std::uint64_t>(d);
          },
          [member](const Config& c) { return std::to_string(c.*member); }};
}

Field dbl_field(const char* key, const char* doc, double Config::* member, double lo, double hi) {
  return {key, doc,
          [key, member, lo, hi](Config& c, const std::string& v, int line) {
            const double d = parse_number(key, v, line);
            if (d < lo || d > hi)
              fail(line, "key '" + std::string(key) + "': value " + v + " outside [" +
                             fmt_double(lo) + ", " + fmt_double(hi) + "]");
            c.*member = d;
          },
          [member](const Config& c) { return fmt_double(c.*member); }};
}

Field bool_field(const char* key, const char* doc, bool Config::* member) {
  return {key, doc,
          [key, member](Config& c, const std::string& v, int line) { c.*member = parse_bool(key, v, line); },
          [member](const Config& c) { return c.*member ? "true" : "false"; }};
}

Field enum_field(const char* key, const char* doc, std::string Config::* member,
                 std::vector<std::string> allowed) {
  return {key, doc,
          [key, member, allowed](Config& c, const std::string& v, int line) {
            if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
              std::string opts;
              for (const auto& a : allowed) opts += (opts.empty() ? "" : "|") + a;
              fail(line, "key '" + std::string(key) + "': '" + v + "' is not one of " + opts);
            }
            c.*member = v;
          },
          [member](const Config& c) { return c.*member; }};
}

Field list_field(const char* key, const char* doc, std::vector<Index> Config::* member, Index lo,
                 bool allow_empty) {
  return {key, doc,
          [key, member, lo, allow_empty](Config& c, const std::string& v, int line) {
            auto vals = parse_int_list(key, v, line, allow_empty);
            for (Index i : vals)
              if (i < lo) fail(line, "key '" + std::string(key) + "': values must be >= " + std::to_string(lo));
            c.*member = std::move(vals);
          },
          [member](const Config& c) { return fmt_list(c.*member); }};
}

std::vector<Field> ddcm_section_fields(const char* section, DdcmSection Config::* member) {
  const std::string s(section);
  auto sec = [member](Config& c) -> DdcmSection& { return c.*member; };
  auto csec = [member](const Config& c) -> const DdcmSection& { return c.*member; };
  std::vector<Field> f;
  f.push_back({s + ".rates", "dilation rates of the DC blocks, in order",
               [sec](Config& c, const std::string& v, int line) {
                 auto vals = parse_int_list("rates", v, line, false);
                 for (Index i : vals)
                   if (i < 1) fail(line, "dilation rates must be >= 1");
                 sec(c).rates = std::move(vals);
               },
               [csec](const Config& c) { return fmt_list(csec(c).rates); }});
  f.push_back({s + ".out", "channels produced by the merging layer",
               [sec](Config& c, const std::string& v, int line) {
                 const Index i = parse_int("out", v, line);
                 if (i < 1) fail(line, "merge output channels must be >= 1");
                 sec(c).out = i;
               },
               [csec](const Config& c) { return std::to_string(csec(c).out); }});
  f.push_back({s + ".width",
               "channels produced by each DC block; 0 follows the module output width",
               [sec](Config& c, const std::string& v, int line) {
                 const Index i = parse_int("width", v, line);
                 if (i < 0) fail(line, "block width must be >= 0");
                 sec(c).width = i;
               },
               [csec](const Config& c) { return std::to_string(csec(c).width); }});
  f.push_back({s + ".kernel", "convolution kernel size (odd)",
               [sec](Config& c, const std::string& v, int line) {
                 const Index i = parse_int("kernel", v, line);
                 if (i < 1 || i % 2 == 0) fail(line, "kernel must be odd and >= 1");
                 sec(c).kernel = i;
               },
               [csec](const Config& c) { return std::to_string(csec(c).kernel); }});
  f.push_back({s + ".groups", "convolution group count",
               [sec](Config& c, const std::string& v, int line) {
                 const Index i = parse_int("groups", v, line);
                 if (i < 1) fail(line, "groups must be >= 1");
                 sec(c).groups = i;
               },
               [csec](const Config& c) { return std::to_string(csec(c).groups); }});
  f.push_back({s + ".stride",
               "DC-block stride: 1, a fixed integer, or 'dynamic' for r+1 per block",
               [sec](Config& c, const std::string& v, int line) {
                 if (v != "dynamic") {
                   const Index i = parse_int("stride", v, line);
                   if (i < 1) fail(line, "stride must be >= 1 or 'dynamic'");
                 }
                 sec(c).stride = v;
               },
               [csec](const Config& c) { return csec(c).stride; }});
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back({"data.root", "dataset directory (images/, labels/, manifest.csv)",
                 [](Config& c, const std::string& v, int) { c.data_root = v; },
                 [](const Config& c) { return c.data_root; }});
    f.push_back(int_field("data.classes", "class count of generated scenes", &Config::data_classes, 1, 6));
    f.push_back(int_field("data.tile_size", "generated tile side length", &Config::tile_size, 32, 65536));
    f.push_back(int_field("data.tiles", "number of tiles to generate", &Config::tiles, 1, 1000000));
    f.push_back(dbl_field("data.noise", "per-pixel Gaussian noise level", &Config::noise, 0.0, 1.0));
    f.push_back(u64_field("data.seed", "scene generator seed", &Config::data_seed));
    f.push_back(dbl_field("data.train_frac", "train split fraction", &Config::train_frac, 0.0, 1.0));
    f.push_back(dbl_field("data.val_frac", "validation split fraction", &Config::val_frac, 0.0, 1.0));
    f.push_back(dbl_field("data.test_frac", "test split fraction", &Config::test_frac, 0.0, 1.0));

    f.push_back(enum_field("net.backbone",
                           "feature extractor: toy (runnable) or a structural residual graph",
                           &Config::backbone, {"toy", "resnet50", "se-resnext50"}));
    f.push_back(list_field("net.toy_widths", "channel widths of the toy backbone stages",
                           &Config::toy_widths, 1, false));
    f.push_back(int_field("net.classes", "number of output classes", &Config::classes, 2, 255));
    f.push_back(enum_field("net.fusion", "how the two streams are joined", &Config::fusion,
                           {"concat", "sum"}));
    f.push_back(int_field("net.fusion_hidden", "classifier head hidden width", &Config::fusion_hidden,
                          1, 65536));
    f.push_back(enum_field("net.pool", "pooling that brings the low-level stream down", &Config::pool,
                           {"max", "avg"}));
    f.push_back(bool_field("net.no_ll_encoder", "ablation: drop the low-level encoder stream",
                           &Config::no_ll_encoder));
    f.push_back(bool_field("net.no_dilation", "ablation: force all dilation rates to 1",
                           &Config::no_dilation));
    for (auto& x : ddcm_section_fields("encoder", &Config::encoder)) f.push_back(std::move(x));
    for (auto& x : ddcm_section_fields("decoder1", &Config::decoder1)) f.push_back(std::move(x));
    for (auto& x : ddcm_section_fields("decoder2", &Config::decoder2)) f.push_back(std::move(x));

    f.push_back(dbl_field("train.lr", "initial learning rate", &Config::lr, 0.0, 10.0));
    f.push_back(dbl_field("train.weight_decay", "L2 penalty on conv weights only", &Config::weight_decay,
                          0.0, 1.0));
    f.push_back(dbl_field("train.bias_lr_multiplier", "LR multiplier for bias parameters",
                          &Config::bias_lr_multiplier, 0.0, 100.0));
    f.push_back(dbl_field("train.beta1", "Adam first-moment decay", &Config::beta1, 0.0, 1.0));
    f.push_back(dbl_field("train.beta2", "Adam second-moment decay", &Config::beta2, 0.0, 1.0));
    f.push_back(dbl_field("train.eps", "Adam denominator epsilon", &Config::adam_eps, 0.0, 1.0));
    f.push_back(bool_field("train.amsgrad", "keep the running max of the second moment",
                           &Config::amsgrad));
    f.push_back(enum_field("train.decay", "weight decay coupling", &Config::decay,
                           {"coupled", "decoupled"}));
    f.push_back(enum_field("train.schedule", "learning-rate schedule", &Config::schedule,
                           {"poly", "step", "multistep"}));
    f.push_back(dbl_field("train.poly_power", "poly schedule exponent", &Config::poly_power, 0.0, 10.0));
    f.push_back(dbl_field("train.poly_max_iter", "poly schedule horizon", &Config::poly_max_iter, 1.0,
                          1e12));
    f.push_back(dbl_field("train.step_factor", "step schedule decay factor", &Config::step_factor, 0.0,
                          1.0));
    f.push_back(int_field("train.step_every", "epochs between step reductions", &Config::step_every, 1,
                          1000000));
    f.push_back(dbl_field("train.multistep_factor", "multistep decay factor", &Config::multistep_factor,
                          0.0, 1.0));
    f.push_back(list_field("train.multistep_epochs", "epochs at which multistep reduces the LR",
                           &Config::multistep_epochs, 0, false));
    f.push_back(int_field("train.epochs", "training epochs", &Config::epochs, 1, 1000000));
    f.push_back(int_field("train.batch", "batch size", &Config::batch, 1, 4096));
    f.push_back(int_field("train.patch", "training patch side length", &Config::patch, 8, 65536));
    f.push_back(int_field("train.patches_per_epoch", "random patches sampled per epoch",
                          &Config::patches_per_epoch, 1, 100000000));
    f.push_back(u64_field("train.seed", "training seed (init, sampling, augmentation)",
                          &Config::train_seed));
    f.push_back(int_field("train.val_every", "epochs between validation passes", &Config::val_every, 1,
                          1000000));

    f.push_back(dbl_field("aug.flip_prob", "probability of each flip/mirror", &Config::flip_prob, 0.0,
                          1.0));
    f.push_back(bool_field("aug.affine", "enable random shift/scale/rotate", &Config::affine));
    f.push_back(dbl_field("aug.shift_limit", "shift limit as a fraction of the patch",
                          &Config::shift_limit, 0.0, 1.0));
    f.push_back(dbl_field("aug.scale_limit", "scale limit around 1", &Config::scale_limit, 0.0, 1.0));
    f.push_back(dbl_field("aug.rotate_limit", "rotation limit in degrees", &Config::rotate_limit, 0.0,
                          180.0));

    f.push_back(int_field("infer.window", "sliding window size", &Config::window, 8, 65536));
    f.push_back(int_field("infer.stride", "sliding window stride", &Config::window_stride, 1, 65536));
    f.push_back(bool_field("infer.tta", "average flip/mirror test-time augmentation", &Config::tta));
    f.push_back(enum_field("infer.tta_space", "average predictions in probability or logit space",
                           &Config::tta_space, {"prob", "logit"}));
    f.push_back(int_field("infer.downscale", "predict on a 1/f downsampled image, upsample back",
                          &Config::downscale, 1, 64));

    f.push_back(list_field("eval.exclude", "class ids excluded from mean scores", &Config::eval_exclude,
                           0, true));
    return f;
  }();
  return all;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return &f;
  return nullptr;
}

}  // namespace

StrideMode DdcmSection::stride_mode() const {
  if (stride == "dynamic") return StrideMode::dynamic();
  const Index s = std::stoll(stride);
  return s == 1 ? StrideMode::unit() : StrideMode::fixed(s);
}

NetworkSpec Config::network_spec() const {
  NetworkSpec spec;
  if (backbone == "toy") {
    spec.backbone.mode = BackboneMode::toy;
    spec.backbone.toy_widths = toy_widths;
  } else if (backbone == "resnet50") {
    spec.backbone.mode = BackboneMode::structural_resnet50;
  } else {
    spec.backbone.mode = BackboneMode::structural_se_resnext50;
  }
  auto module = [](const DdcmSection& s, Index in) {
    DdcmSpec m;
    m.in_channels = in;
    m.dilation_rates = s.rates;
    m.width = s.width;
    m.kernel = s.kernel;
    m.groups = s.groups;
    m.stride = s.stride_mode();
    m.merge_out_channels = s.out;
    return m;
  };
  spec.low_level = module(encoder, 3);
  spec.high_level.push_back(module(decoder1, spec.backbone.out_channels()));
  spec.high_level.push_back(module(decoder2, decoder1.out));
  spec.fusion = fusion == "sum" ? FusionOp::sum : FusionOp::concat;
  spec.pool = pool == "avg" ? PoolOp::avg : PoolOp::max;
  spec.fusion_hidden = fusion_hidden;
  spec.num_classes = classes;
  spec.no_ll_encoder = no_ll_encoder;
  spec.no_dilation = no_dilation;
  return spec;
}

OptimizerConfig Config::optimizer_config() const {
  OptimizerConfig oc;
  oc.base_lr = lr;
  oc.weight_decay = weight_decay;
  oc.bias_lr_multiplier = bias_lr_multiplier;
  oc.beta1 = beta1;
  oc.beta2 = beta2;
  oc.eps = adam_eps;
  oc.amsgrad = amsgrad;
  oc.decay = decay == "decoupled" ? OptimizerConfig::Decay::decoupled : OptimizerConfig::Decay::coupled;
  return oc;
}

LrSchedule Config::lr_schedule() const {
  LrSchedule s;
  s.kind = schedule == "poly"   ? LrSchedule::Kind::poly
           : schedule == "step" ? LrSchedule::Kind::step
                                : LrSchedule::Kind::multistep;
  s.poly_power = poly_power;
  s.poly_max_iter = poly_max_iter;
  s.step_factor = step_factor;
  s.step_every = step_every;
  s.multistep_factor = multistep_factor;
  s.multistep_epochs = multistep_epochs;
  return s;
}

AugmentConfig Config::augment_config() const {
  AugmentConfig a;
  a.flip_prob = flip_prob;
  a.affine = affine;
  a.shift_limit = shift_limit;
  a.scale_limit = scale_limit;
  a.rotate_limit = rotate_limit;
  return a;
}

void apply_config_line(Config& cfg, const std::string& raw) {
  std::string line = raw;
  const size_t hash = line.find('#');
  if (hash != std::string::npos) line = line.substr(0, hash);
  line = trim(line);
  if (line.empty()) return;
  const size_t eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError("expected 'key = value' in '" + raw + "'");
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown key '" + key + "'");
  f->set(cfg, value, 0);
}

Config parse_config(const std::string& text) {
  Config cfg = preset("isprs");
  std::istringstream ss(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(key);
    if (!f) fail(line_no, "unknown key '" + key + "'");
    f->set(cfg, value, line_no);
  }
  return cfg;
}

std::string render_config(const Config& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += "\n";
  }
  return out;
}

std::string dump_defaults() {
  const Config cfg = preset("isprs");
  std::string out;
  for (const auto& f : fields()) {
    out += "# ";
    out += f.doc;
    out += "\n";
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += "\n";
  }
  return out;
}

std::vector<std::string> preset_names() {
  return {"toy", "isprs", "ddcm-r50", "deepglobe", "ddcm-ser50"};
}

Config preset(const std::string& name) {
  Config c;
  // shared DDCM layout (the ISPRS arrangement)
  c.encoder.rates = {1, 2, 3, 5, 7, 9};
  c.encoder.out = 3;
  c.decoder1.rates = {1, 2, 3, 4};
  c.decoder1.out = 36;
  c.decoder2.rates = {1};
  c.decoder2.out = 18;

  if (name == "toy") {
    c.backbone = "toy";
    c.lr = 1e-3;
    c.schedule = "step";
    c.step_every = 2;
    c.epochs = 8;
    c.batch = 5;
    c.patch = 96;
    c.patches_per_epoch = 260;
    c.window = 256;
    c.window_stride = 192;
    c.val_every = 2;
    c.eval_exclude = {5};
    c.tiles = 24;
    return c;
  }
  if (name == "isprs" || name == "ddcm-r50") {
    c.backbone = "resnet50";
    c.lr = 8.5e-5 / std::sqrt(2.0);
    c.schedule = "step";
    c.epochs = 100;
    c.batch = 5;
    c.patch = 256;
    c.patches_per_epoch = 5000;
    c.window = 448;
    c.window_stride = 100;
    c.tta = true;
    c.eval_exclude = {5};
    return c;
  }
  if (name == "deepglobe" || name == "ddcm-ser50") {
    c.backbone = "se-resnext50";
    c.classes = 7;
    c.data_classes = 6;
    c.encoder.rates = {1, 2, 4, 8, 16, 32};
    c.encoder.stride = "2";
    c.decoder1.rates = {1, 2, 4};
    c.decoder1.out = 64;
    c.decoder1.groups = 2;
    c.decoder1.stride = "2";
    c.decoder2.rates = {1};
    c.decoder2.out = 32;
    c.decoder2.groups = 2;
    c.decoder2.stride = "2";
    c.lr = 8.5e-4 / std::sqrt(2.0);
    c.schedule = "multistep";
    c.epochs = 150;
    c.batch = 4;
    c.patch = 765;
    c.patches_per_epoch = 4000;
    c.affine = true;
    c.tta = true;
    c.downscale = 3;
    c.eval_exclude = {6};  // the 'unknown' class stays out of the means
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> variant_names() {
  return {"s2", "s3", "dynamic", "no-ll-encoder", "no-dilation"};
}

void apply_variant(Config& cfg, const std::string& variant) {
  auto set_stride = [&](const std::string& s) {
    cfg.encoder.stride = s;
    cfg.decoder1.stride = s;
    cfg.decoder2.stride = s;
  };
  if (variant == "s2") {
    set_stride("2");
  } else if (variant == "s3") {
    set_stride("3");
  } else if (variant == "dynamic") {
    set_stride("dynamic");
  } else if (variant == "no-ll-encoder") {
    cfg.no_ll_encoder = true;
    cfg.decoder2.out = 21;
  } else if (variant == "no-dilation") {
    cfg.no_dilation = true;
  } else {
    throw ConfigError("unknown variant '" + variant + "'");
  }
}

}  // namespace ddcm
