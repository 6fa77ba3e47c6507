// Command-line front end: generate / train / predict / eval / analyze.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ddcm/analysis.hpp"
#include "ddcm/config.hpp"
#include "ddcm/data.hpp"
#include "ddcm/inference.hpp"
#include "ddcm/metrics.hpp"
#include "ddcm/parallel.hpp"
#include "ddcm/training.hpp"

namespace fs = std::filesystem;
using namespace ddcm;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

// Class colors for the rendered map (surface, building, low veg, tree, car,
// clutter, then spares).
constexpr unsigned char kPalette[8][3] = {
    {255, 255, 255}, {0, 0, 255},   {0, 255, 255}, {0, 255, 0},
    {255, 255, 0},   {255, 0, 0},   {255, 0, 255}, {255, 128, 0},
};

std::string read_file(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot open '" + p.string() + "' for writing");
  f << text;
}

Config build_config(const std::string& config_path, const std::string& preset_name,
                    const std::vector<std::string>& variants, const std::vector<std::string>& sets) {
  Config cfg;
  if (!config_path.empty()) {
    cfg = parse_config(read_file(config_path));
  } else if (!preset_name.empty()) {
    cfg = preset(preset_name);
  } else {
    cfg = preset("isprs");
  }
  for (const auto& v : variants) apply_variant(cfg, v);
  for (const auto& kv : sets) apply_config_line(cfg, kv);
  if (const char* env_seed = std::getenv("DDCM_SEED")) {
    const std::uint64_t s = std::strtoull(env_seed, nullptr, 10);
    cfg.data_seed = s;
    cfg.train_seed = s;
  }
  return cfg;
}

TensorShape parse_input_shape(const std::string& text) {
  std::vector<Index> dims;
  std::string cell;
  std::stringstream ss(text);
  while (std::getline(ss, cell, 'x')) dims.push_back(std::stoll(cell));
  if (dims.size() == 3) return {1, dims[0], dims[1], dims[2]};
  if (dims.size() == 4) return {dims[0], dims[1], dims[2], dims[3]};
  throw ConfigError("--input expects CxHxW or NxCxHxW, got '" + text + "'");
}

void write_color_map(const fs::path& path, const LabelMap& classes) {
  Tensor<float> rgb(1, 3, classes.h, classes.w);
  for (Index y = 0; y < classes.h; ++y)
    for (Index x = 0; x < classes.w; ++x) {
      const auto& c = kPalette[classes(0, y, x) % 8];
      rgb(0, 0, y, x) = c[0] / 255.0f;
      rgb(0, 1, y, x) = c[1] / 255.0f;
      rgb(0, 2, y, x) = c[2] / 255.0f;
    }
  write_ppm(path, rgb);
}

struct LoadedNet {
  Config cfg;
  std::unique_ptr<Network<float>> net;
  TensorFile file;
};

LoadedNet load_net(const fs::path& checkpoint) {
  LoadedNet out;
  out.file = load_checkpoint(checkpoint);
  out.cfg = parse_config(out.file.text("__spec__"));
  out.net = std::make_unique<Network<float>>(out.cfg.network_spec());
  load_network_state(*out.net, out.file);
  return out;
}

int cmd_generate(const std::string& out_dir, Index tiles, Index size, Index classes,
                 std::uint64_t seed, double noise) {
  SceneSpec spec;
  spec.tile_size = size;
  spec.class_count = classes;
  spec.noise = noise;
  spec.seed = seed;
  if (const char* env_seed = std::getenv("DDCM_SEED"))
    spec.seed = std::strtoull(env_seed, nullptr, 10);
  Manifest m = generate_dataset(spec, tiles, out_dir);
  VecX<double> f = m.frequencies();
  std::printf("wrote %lld tiles of %lldx%lld to %s\n", static_cast<long long>(tiles),
              static_cast<long long>(size), static_cast<long long>(size), out_dir.c_str());
  std::printf("class frequencies:");
  for (Index c = 0; c < f.size(); ++c) std::printf(" %.4f", f[c]);
  std::printf("\n");
  return 0;
}

int cmd_train(const Config& cfg, const std::string& data_dir, const std::string& out_ckpt,
              const std::string& log_path, const std::string& resume, bool verbose) {
  Dataset data = load_dataset(data_dir.empty() ? cfg.data_root : data_dir, cfg.train_frac,
                              cfg.val_frac, cfg.test_frac, cfg.data_seed);
  Config effective = cfg;
  Network<float> net(effective.network_spec());
  AdamAmsgrad<float> opt(net.params(), effective.optimizer_config());
  TrainState state;

  if (!resume.empty()) {
    TensorFile tf = load_checkpoint(resume);
    const Config saved = parse_config(tf.text("__spec__"));
    if (!(saved.network_spec().resolved().fused_channels() ==
          effective.network_spec().resolved().fused_channels()))
      throw ConfigError("resume: checkpoint was built from a different network config");
    load_network_state(net, tf);
    opt.load_state(net.params(), tf);
    std::istringstream ss(tf.text("__train_state__"));
    std::string tok;
    while (ss >> tok) {
      if (tok.rfind("epoch=", 0) == 0) state.next_epoch = std::stoll(tok.substr(6));
      if (tok.rfind("iter=", 0) == 0) state.iter = std::stoll(tok.substr(5));
    }
  } else {
    net.init(effective.train_seed);
  }

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, resume.empty() ? std::ios::out : std::ios::app);
    if (!log) throw IoError("cannot open '" + log_path + "' for writing");
    if (resume.empty()) log << metrics_csv_header();
  }

  TrainResult res = train(net, opt, data, effective, state,
                          out_ckpt.empty() ? fs::path{} : fs::path(out_ckpt + ".nan"), verbose);
  for (const auto& e : res.log)
    if (log.is_open()) log << metrics_csv_row(e);

  if (!out_ckpt.empty()) {
    TensorFile extra;
    extra.add_text("__train_state__", "epoch=" + std::to_string(state.next_epoch) +
                                          " iter=" + std::to_string(state.iter));
    opt.add_state(net.params(), extra);
    save_checkpoint(net, out_ckpt, render_config(effective), &extra);
    std::printf("checkpoint written to %s\n", out_ckpt.c_str());
  }
  if (!res.log.empty() && res.log.back().val_miou >= 0)
    std::printf("final val mIoU %.4f  mF1 %.4f\n", res.log.back().val_miou, res.log.back().val_mf1);
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& image_path, const std::string& out_pgm,
                const std::string& color_ppm, const std::string& prob_path, int tta_flag,
                Index downscale, Index window, Index stride) {
  LoadedNet ln = load_net(checkpoint);
  Tensor<float> image = read_ppm(image_path);
  InferOptions opt;
  opt.tta = tta_flag < 0 ? ln.cfg.tta : tta_flag > 0;
  opt.prob_space = ln.cfg.tta_space == "prob";
  const Index win = window > 0 ? window : ln.cfg.window;
  const Index str = stride > 0 ? stride : ln.cfg.window_stride;
  const Index factor = downscale > 0 ? downscale : ln.cfg.downscale;

  Prediction p = factor > 1 ? predict_downscaled(*ln.net, image, factor, win, str, opt)
                            : predict_image(*ln.net, image, win, str, opt);

  write_pgm(out_pgm, p.classes);
  if (!color_ppm.empty()) write_color_map(color_ppm, p.classes);
  if (!prob_path.empty()) {
    TensorFile tf;
    const auto& s = p.probs.shape();
    tf.add("probs",
           {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
            static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
           p.probs.data());
    tf.write(prob_path);
  }
  std::printf("prediction written to %s\n", out_pgm.c_str());
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& label_dir, Index classes,
             const std::vector<Index>& exclude, int ignore_id, const std::string& report_path,
             const std::string& csv_path) {
  std::vector<fs::path> preds;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.path().extension() == ".pgm") preds.push_back(e.path());
  std::sort(preds.begin(), preds.end());
  if (preds.empty()) throw IoError("no .pgm predictions in '" + pred_dir + "'");

  ConfusionMatrix cm(classes);
  for (const auto& p : preds) {
    const fs::path lp = fs::path(label_dir) / p.filename();
    if (!fs::exists(lp)) throw IoError("missing label for '" + p.filename().string() + "'");
    LabelMap pred = read_pgm(p);
    LabelMap label = read_pgm(lp);
    cm.accumulate(pred, label,
                  ignore_id >= 0 ? std::optional<std::int32_t>(ignore_id) : std::nullopt);
  }
  Scores s = compute_scores(cm, exclude);
  const std::string report = scores_report(s);
  std::fputs(report.c_str(), stdout);
  if (!report_path.empty()) write_file(report_path, report);
  if (!csv_path.empty()) write_file(csv_path, scores_csv(s));
  return 0;
}

int cmd_analyze(const Config& cfg, const std::string& input, const std::string& convention,
                const std::string& report_path, const std::string& csv_path) {
  const NetworkSpec spec = cfg.network_spec();
  const TensorShape shape = parse_input_shape(input);
  CostReport rep = count_flops(spec, shape);

  std::string text;
  if (convention == "both") {
    text = cost_report_text(rep, FlopConvention::mac1, true);
  } else {
    text = cost_report_text(rep, convention == "mac2" ? FlopConvention::mac2 : FlopConvention::mac1,
                            false);
  }
  text += "\nreceptive fields\n";
  text += rf_report_text(spec);

  std::fputs(text.c_str(), stdout);
  if (!report_path.empty()) write_file(report_path, text);
  if (!csv_path.empty()) write_file(csv_path, cost_report_csv(rep) + "\n" + rf_report_csv(spec));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dense dilated convolutions merging segmentation engine"};
  app.require_subcommand(0, 1);

  int workers = 0;
  std::string root;
  bool dump_defaults_flag = false;
  app.add_option("--workers", workers, "cap on worker threads (results are identical for any value)");
  app.add_option("--root", root, "resolve relative paths against this directory");
  app.add_flag("--dump-defaults", dump_defaults_flag, "print the documented default config and exit");

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic segmentation dataset");
  std::string gen_out = "./data";
  Index gen_tiles = 24, gen_size = 512, gen_classes = 6;
  std::uint64_t gen_seed = 1;
  double gen_noise = 0.06;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--tiles", gen_tiles, "tile count");
  gen->add_option("--size", gen_size, "tile side length");
  gen->add_option("--classes", gen_classes, "class count (1..6)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--noise", gen_noise, "noise level");

  // shared config options
  std::string cfg_path, preset_name;
  std::vector<std::string> variants, sets;
  auto add_cfg_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", cfg_path, "config file");
    cmd->add_option("--preset", preset_name, "named preset (toy, isprs, ddcm-r50, deepglobe, ddcm-ser50)");
    cmd->add_option("--variant", variants, "overlay: s2, s3, dynamic, no-ll-encoder, no-dilation");
    cmd->add_option("--set", sets, "override single keys, e.g. --set train.epochs=4");
  };

  // train
  auto* tr = app.add_subcommand("train", "train a network on a dataset directory");
  std::string tr_data, tr_out = "checkpoint.bin", tr_log, tr_resume;
  bool tr_verbose = false;
  add_cfg_opts(tr);
  tr->add_option("--data", tr_data, "dataset directory (defaults to data.root)");
  tr->add_option("--out", tr_out, "checkpoint output path");
  tr->add_option("--log", tr_log, "metrics CSV path");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->add_flag("--verbose", tr_verbose, "per-epoch progress on stdout");

  // predict
  auto* pr = app.add_subcommand("predict", "predict a class map for one image");
  std::string pr_ckpt, pr_image, pr_out = "prediction.pgm", pr_color, pr_prob;
  bool pr_tta_on = false, pr_tta_off = false;
  Index pr_downscale = 0, pr_window = 0, pr_stride = 0;
  pr->add_option("--checkpoint", pr_ckpt, "trained checkpoint")->required();
  pr->add_option("--image", pr_image, "input PPM image")->required();
  pr->add_option("--out", pr_out, "class map PGM path");
  pr->add_option("--color", pr_color, "color-mapped PPM path");
  pr->add_option("--prob", pr_prob, "per-class probability tensor file");
  pr->add_flag("--tta", pr_tta_on, "force flip/mirror test-time augmentation on");
  pr->add_flag("--no-tta", pr_tta_off, "force test-time augmentation off");
  pr->add_option("--downscale", pr_downscale, "predict at 1/f scale and upsample back");
  pr->add_option("--window", pr_window, "sliding window size");
  pr->add_option("--stride", pr_stride, "sliding window stride");

  // eval
  auto* ev = app.add_subcommand("eval", "score predictions against labels");
  std::string ev_pred, ev_labels, ev_report, ev_csv;
  Index ev_classes = 6;
  int ev_ignore = -1;
  std::vector<Index> ev_exclude;
  ev->add_option("--pred", ev_pred, "directory of predicted .pgm maps")->required();
  ev->add_option("--labels", ev_labels, "directory of ground-truth .pgm maps")->required();
  ev->add_option("--classes", ev_classes, "class count");
  ev->add_option("--exclude", ev_exclude, "class ids excluded from mean scores");
  ev->add_option("--ignore", ev_ignore, "label id treated as unlabeled");
  ev->add_option("--report", ev_report, "text report path");
  ev->add_option("--csv", ev_csv, "CSV report path");

  // analyze
  auto* an = app.add_subcommand("analyze", "parameter/FLOP/receptive-field report");
  std::string an_input = "3x256x256", an_convention = "both", an_report, an_csv;
  add_cfg_opts(an);
  an->add_option("--input", an_input, "input shape CxHxW or NxCxHxW");
  an->add_option("--convention", an_convention, "mac1 | mac2 | both")
      ->check(CLI::IsMember({"mac1", "mac2", "both"}));
  an->add_option("--report", an_report, "text report path");
  an->add_option("--csv", an_csv, "CSV report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (app.exit(e) == 0) return 0;  // --help
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return kExitConfig;
  }

  try {
    if (workers > 0) set_workers(workers);
    if (!root.empty()) fs::current_path(root);
    if (dump_defaults_flag) {
      std::fputs(dump_defaults().c_str(), stdout);
      return 0;
    }
    if (gen->parsed())
      return cmd_generate(gen_out, gen_tiles, gen_size, gen_classes, gen_seed, gen_noise);
    if (tr->parsed())
      return cmd_train(build_config(cfg_path, preset_name, variants, sets), tr_data, tr_out, tr_log,
                       tr_resume, tr_verbose);
    if (pr->parsed())
      return cmd_predict(pr_ckpt, pr_image, pr_out, pr_color, pr_prob,
                         pr_tta_on ? 1 : (pr_tta_off ? 0 : -1), pr_downscale, pr_window, pr_stride);
    if (ev->parsed())
      return cmd_eval(ev_pred, ev_labels, ev_classes, ev_exclude, ev_ignore, ev_report, ev_csv);
    if (an->parsed())
      return cmd_analyze(build_config(cfg_path, preset_name, variants, sets), an_input, an_convention,
                         an_report, an_csv);
    std::fputs(app.help().c_str(), stdout);
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return kExitIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: numeric: %s\n", e.what());
    return kExitNumeric;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: numeric: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return kExitIo;
  }
}
