#ifndef DDCM_TRAINING_HPP
#define DDCM_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddcm/config.hpp"
#include "ddcm/data.hpp"
#include "ddcm/metrics.hpp"
#include "ddcm/network.hpp"
#include "ddcm/optim.hpp"

namespace ddcm {

struct TrainState {
  Index next_epoch = 0;
  std::int64_t iter = 0;
};

struct EpochLog {
  Index epoch = 0;
  std::int64_t iter = 0;
  double lr = 0;
  double loss = 0;
  double val_miou = -1;  // -1 when validation did not run this epoch
  double val_mf1 = -1;
  double wall_seconds = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
};

/// Validation pass: stitched prediction over every tile, scored with the
/// configured class exclusions.
Scores validate(Network<float>& net, const std::vector<Sample>& tiles, const Config& cfg);

/// Runs augment -> forward -> loss -> backward -> step for cfg.epochs,
/// starting from `state` (resume-aware). Deterministic under
/// (cfg.train_seed, worker count notwithstanding). A non-finite loss aborts
/// with a diagnostic state dump at `nan_dump` when given.
TrainResult train(Network<float>& net, AdamAmsgrad<float>& opt, const Dataset& data, const Config& cfg,
                  TrainState& state, const std::filesystem::path& nan_dump = {}, bool verbose = false);

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochLog& e);

}  // namespace ddcm

#endif  // DDCM_TRAINING_HPP
