#ifndef DDCM_CONFIG_HPP
#define DDCM_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ddcm/augment.hpp"
#include "ddcm/network.hpp"
#include "ddcm/optim.hpp"

namespace ddcm {

/// One DDCM module section (encoder / decoder1 / decoder2).
struct DdcmSection {
  std::vector<Index> rates;
  Index out = 0;
  Index width = 0;  // per-block width m; 0 follows `out`
  Index kernel = 3;
  Index groups = 1;
  std::string stride = "1";  // "1", an integer, or "dynamic" (r+1 per block)

  StrideMode stride_mode() const;
  bool operator==(const DdcmSection& o) const = default;
};

/// Flat `section.key = value` configuration covering the whole pipeline.
/// Unknown keys are rejected with their line number.
struct Config {
  // data
  std::string data_root = "./data";
  Index data_classes = 6;
  Index tile_size = 512;
  Index tiles = 24;
  double noise = 0.06;
  std::uint64_t data_seed = 1;
  double train_frac = 0.84, val_frac = 0.08, test_frac = 0.08;

  // net
  std::string backbone = "toy";  // toy | resnet50 | se-resnext50 (structural)
  std::vector<Index> toy_widths = {16, 32, 64};
  Index classes = 6;
  std::string fusion = "concat";  // concat | sum
  Index fusion_hidden = 64;
  std::string pool = "max";  // max | avg
  bool no_ll_encoder = false;
  bool no_dilation = false;
  DdcmSection encoder, decoder1, decoder2;

  // train
  double lr = 8.5e-5 / 1.4142135623730951;
  double weight_decay = 2e-5;
  double bias_lr_multiplier = 2.0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  bool amsgrad = true;
  std::string decay = "coupled";     // coupled | decoupled
  std::string schedule = "step";     // poly | step | multistep
  double poly_power = 0.9;
  double poly_max_iter = 1e8;
  double step_factor = 0.85;
  Index step_every = 15;
  double multistep_factor = 0.56;
  std::vector<Index> multistep_epochs = {4, 8, 16, 24, 32, 96, 128};
  Index epochs = 100;
  Index batch = 5;
  Index patch = 256;
  Index patches_per_epoch = 5000;
  std::uint64_t train_seed = 1;
  Index val_every = 1;

  // aug
  double flip_prob = 0.5;
  bool affine = false;
  double shift_limit = 0.0625;
  double scale_limit = 0.1;
  double rotate_limit = 10.0;

  // infer
  Index window = 448;
  Index window_stride = 100;
  bool tta = false;
  std::string tta_space = "prob";  // prob | logit
  Index downscale = 1;

  // eval
  std::vector<Index> eval_exclude;

  bool operator==(const Config& o) const = default;

  NetworkSpec network_spec() const;
  OptimizerConfig optimizer_config() const;
  LrSchedule lr_schedule() const;
  AugmentConfig augment_config() const;
};

/// Parses config text over the ISPRS defaults (an empty file is exactly the
/// `isprs` preset). Errors carry line numbers.
Config parse_config(const std::string& text);

/// Applies one `key = value` line onto an existing config.
void apply_config_line(Config& cfg, const std::string& line);

/// Canonical text form; parse(render(c)) == c.
std::string render_config(const Config& cfg);

/// Canonical text with a documentation comment per key.
std::string dump_defaults();

std::vector<std::string> preset_names();
Config preset(const std::string& name);

std::vector<std::string> variant_names();
void apply_variant(Config& cfg, const std::string& variant);

}  // namespace ddcm

#endif  // DDCM_CONFIG_HPP
