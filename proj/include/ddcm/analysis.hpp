#ifndef DDCM_ANALYSIS_HPP
#define DDCM_ANALYSIS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ddcm/network.hpp"

namespace ddcm {

/// FLOP counting conventions: mac2 charges a multiply-add as 2 FLOPs, mac1
/// as 1. Contemporary counters disagree, so reports carry both.
enum class FlopConvention { mac1, mac2 };

struct LayerCost {
  std::string name;
  std::int64_t params = 0;  // trainable
  std::int64_t state = 0;   // BN running statistics, reported separately
  double conv_macs = 0;     // multiply-adds of conv/fc kernels
  double other_flops = 0;   // everything else (bias adds, BN, activations, pools, resize)
  TensorShape out;
};

struct CostReport {
  std::vector<LayerCost> layers;
  TensorShape input;

  std::int64_t total_params() const;
  std::int64_t total_state() const;
  double conv_flops(FlopConvention c) const;   // conv-only subtotal
  double total_flops(FlopConvention c) const;  // conv + everything else
};

/// Trainable parameter inventory of a network spec (structural backbones
/// allowed). Matches the executable graph exactly for runnable configs.
CostReport count_params(const NetworkSpec& spec);

/// Full cost walk at the given input size (n, 3, h, w).
CostReport count_flops(const NetworkSpec& spec, TensorShape input);

std::string cost_report_text(const CostReport& r, FlopConvention convention, bool both_conventions);
std::string cost_report_csv(const CostReport& r);

/// Receptive-field report for one DDCM module or a whole network spec.
std::string rf_report_text(Index kernel, const std::vector<Index>& rates, const StrideMode& stride);
std::string rf_report_text(const NetworkSpec& spec);
std::string rf_report_csv(const NetworkSpec& spec);

}  // namespace ddcm

#endif  // DDCM_ANALYSIS_HPP
