#ifndef DDCM_OPTIM_HPP
#define DDCM_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ddcm/layers.hpp"
#include "ddcm/tensor_io.hpp"

namespace ddcm {

struct OptimizerConfig {
  double base_lr = 8.5e-5 / 1.4142135623730951;
  double weight_decay = 2e-5;  // weights only, never biases or norm params
  double bias_lr_multiplier = 2.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool amsgrad = true;
  enum class Decay { coupled, decoupled } decay = Decay::coupled;
};

struct LrSchedule {
  enum class Kind { poly, step, multistep } kind = Kind::poly;
  double poly_power = 0.9;
  double poly_max_iter = 1e8;
  double step_factor = 0.85;
  Index step_every = 15;
  double multistep_factor = 0.56;
  std::vector<Index> multistep_epochs = {4, 8, 16, 24, 32, 96, 128};

  bool operator==(const LrSchedule& o) const = default;
};

/// Multiplicative factor on the base LR. poly is indexed by iteration,
/// step/multistep by epoch.
inline double lr_at(const LrSchedule& s, Index counter) {
  if (counter < 0) throw NumericError("lr_at: negative counter");
  switch (s.kind) {
    case LrSchedule::Kind::poly: {
      const double frac = std::min(1.0, static_cast<double>(counter) / s.poly_max_iter);
      return std::pow(1.0 - frac, s.poly_power);
    }
    case LrSchedule::Kind::step:
      return std::pow(s.step_factor, static_cast<double>(counter / s.step_every));
    case LrSchedule::Kind::multistep: {
      Index hits = 0;
      for (Index e : s.multistep_epochs)
        if (counter >= e) ++hits;
      return std::pow(s.multistep_factor, static_cast<double>(hits));
    }
  }
  return 1.0;
}

/// Adam with AMSGrad bookkeeping and the parameter-group rules: weight decay
/// on `weight` params only (coupled by default: added to the gradient),
/// biases stepped at bias_lr_multiplier * lr. State is stored in Scalar so
/// checkpoints round-trip bit-exactly; arithmetic runs in 64-bit.
template <typename Scalar>
class AdamAmsgrad {
 public:
  AdamAmsgrad(const std::vector<ParamRef<Scalar>>& params, OptimizerConfig cfg) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.push_back(VecX<Scalar>::Zero(p.size));
      v_.push_back(VecX<Scalar>::Zero(p.size));
      vmax_.push_back(VecX<Scalar>::Zero(p.size));
    }
  }

  /// One update with the already-scheduled learning rate lr_t.
  void step(const std::vector<ParamRef<Scalar>>& params, double lr_t) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      const bool decayed = p.kind == ParamKind::weight && cfg_.weight_decay != 0.0;
      const double lr_p = lr_t * (p.kind == ParamKind::bias ? cfg_.bias_lr_multiplier : 1.0);
      Scalar* m = m_[i].data();
      Scalar* v = v_[i].data();
      Scalar* vm = vmax_[i].data();
      for (Index e = 0; e < p.size; ++e) {
        double g = static_cast<double>(p.grad[e]);
        const double w = static_cast<double>(p.data[e]);
        if (decayed && cfg_.decay == OptimizerConfig::Decay::coupled) g += cfg_.weight_decay * w;
        const double mn = cfg_.beta1 * static_cast<double>(m[e]) + (1.0 - cfg_.beta1) * g;
        const double vn = cfg_.beta2 * static_cast<double>(v[e]) + (1.0 - cfg_.beta2) * g * g;
        m[e] = static_cast<Scalar>(mn);
        v[e] = static_cast<Scalar>(vn);
        const double mhat = mn / bc1;
        const double vhat = vn / bc2;
        double denom;
        if (cfg_.amsgrad) {
          const double vmx = std::max(static_cast<double>(vm[e]), vhat);
          vm[e] = static_cast<Scalar>(vmx);
          denom = std::sqrt(vmx) + cfg_.eps;
        } else {
          denom = std::sqrt(vhat) + cfg_.eps;
        }
        double wn = w - lr_p * mhat / denom;
        if (decayed && cfg_.decay == OptimizerConfig::Decay::decoupled)
          wn -= lr_p * cfg_.weight_decay * w;
        p.data[e] = static_cast<Scalar>(wn);
      }
    }
  }

  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }
  const OptimizerConfig& config() const { return cfg_; }

  /// Optimizer state as container entries (prefix "opt.").
  void add_state(const std::vector<ParamRef<Scalar>>& params, TensorFile& tf) const {
    tf.add_text("opt.step", std::to_string(step_count_));
    for (size_t i = 0; i < params.size(); ++i) {
      auto put = [&](const char* tag, const VecX<Scalar>& vec) {
        std::vector<float> buf(static_cast<size_t>(vec.size()));
        for (Index e = 0; e < vec.size(); ++e) buf[static_cast<size_t>(e)] = static_cast<float>(vec[e]);
        tf.add("opt." + params[i].name + tag, {static_cast<std::uint32_t>(vec.size())}, buf.data());
      };
      put(".m", m_[i]);
      put(".v", v_[i]);
      put(".vmax", vmax_[i]);
    }
  }

  void load_state(const std::vector<ParamRef<Scalar>>& params, const TensorFile& tf) {
    step_count_ = std::stoll(tf.text("opt.step"));
    for (size_t i = 0; i < params.size(); ++i) {
      auto get = [&](const char* tag, VecX<Scalar>& vec) {
        const NamedTensor* e = tf.find("opt." + params[i].name + tag);
        if (!e || static_cast<Index>(e->element_count()) != vec.size())
          throw IoError("checkpoint optimizer state mismatch at '" + params[i].name + tag + "'");
        for (Index k = 0; k < vec.size(); ++k) vec[k] = static_cast<Scalar>(e->data[static_cast<size_t>(k)]);
      };
      get(".m", m_[i]);
      get(".v", v_[i]);
      get(".vmax", vmax_[i]);
    }
  }

 private:
  OptimizerConfig cfg_;
  std::int64_t step_count_ = 0;
  std::vector<VecX<Scalar>> m_, v_, vmax_;
};

}  // namespace ddcm

#endif  // DDCM_OPTIM_HPP
