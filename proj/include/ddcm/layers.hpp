#ifndef DDCM_LAYERS_HPP
#define DDCM_LAYERS_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ddcm/conv.hpp"
#include "ddcm/nn_ops.hpp"
#include "ddcm/rng.hpp"
#include "ddcm/tensor.hpp"

namespace ddcm {

enum class Mode { train, eval };

/// Optimizer grouping: weight-decay applies to `weight` only; `bias` runs at
/// 2x LR; `norm` covers BN affine and PReLU slopes (no decay, 1x LR).
enum class ParamKind { weight, bias, norm };

template <typename Scalar>
struct ParamRef {
  std::string name;
  ParamKind kind;
  Scalar* data;
  Scalar* grad;
  Index size;
};

/// Named flat views of non-learnable state (BN running statistics).
template <typename Scalar>
struct StateRef {
  std::string name;
  Scalar* data;
  Index size;
};

// ---------------------------------------------------------------------------

template <typename Scalar>
class ConvLayer {
 public:
  ConvLayer() = default;
  explicit ConvLayer(ConvSpec spec) : spec_(spec) {
    spec_.validate();
    w_ = Tensor<Scalar>(spec_.out_channels, spec_.in_channels / spec_.groups, spec_.kernel, spec_.kernel);
    gw_ = Tensor<Scalar>(w_.shape());
    if (spec_.has_bias) {
      b_ = VecX<Scalar>::Zero(spec_.out_channels);
      gb_ = VecX<Scalar>::Zero(spec_.out_channels);
    }
  }

  /// Kaiming fan-in normal init for weights, zero biases.
  void init(Rng& rng) {
    const double fan_in = static_cast<double>(spec_.in_channels / spec_.groups) *
                          static_cast<double>(spec_.kernel * spec_.kernel);
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (Index i = 0; i < w_.count(); ++i)
      w_.data()[i] = static_cast<Scalar>(rng.gaussian() * std_dev);
    if (spec_.has_bias) b_.setZero();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    if (mode == Mode::train) cached_input_ = x;
    return conv2d(x, w_, b_, spec_);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    auto g = conv2d_backward(grad_out, cached_input_, w_, spec_);
    // copy into the long-lived buffers: ParamRef pointers must stay valid
    gw_.array() = g.weight.array();
    if (spec_.has_bias) gb_.array() = g.bias.array();
    return std::move(g.input);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Scalar>>& out) {
    out.push_back({prefix + ".w", ParamKind::weight, w_.data(), gw_.data(), w_.count()});
    if (spec_.has_bias)
      out.push_back({prefix + ".b", ParamKind::bias, b_.data(), gb_.data(), b_.size()});
  }

  Index param_count() const { return w_.count() + (spec_.has_bias ? b_.size() : 0); }

  const ConvSpec& spec() const { return spec_; }
  Tensor<Scalar>& weight() { return w_; }
  VecX<Scalar>& bias() { return b_; }

 private:
  ConvSpec spec_;
  Tensor<Scalar> w_, gw_;
  VecX<Scalar> b_, gb_;
  Tensor<Scalar> cached_input_;
};

// ---------------------------------------------------------------------------

template <typename Scalar>
class PreluLayer {
 public:
  PreluLayer() = default;
  explicit PreluLayer(Index channels)
      : slopes_(VecX<Scalar>::Constant(channels, Scalar(0.25))),
        gslopes_(VecX<Scalar>::Zero(channels)) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    if (mode == Mode::train) cached_input_ = x;
    return prelu(x, slopes_);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    auto [gi, gs] = prelu_backward(grad_out, cached_input_, slopes_);
    gslopes_.array() = gs.array();
    return std::move(gi);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Scalar>>& out) {
    out.push_back({prefix + ".slopes", ParamKind::norm, slopes_.data(), gslopes_.data(), slopes_.size()});
  }

  Index param_count() const { return slopes_.size(); }
  VecX<Scalar>& slopes() { return slopes_; }

 private:
  VecX<Scalar> slopes_, gslopes_;
  Tensor<Scalar> cached_input_;
};

// ---------------------------------------------------------------------------

template <typename Scalar>
class BnLayer {
 public:
  BnLayer() = default;
  explicit BnLayer(Index channels)
      : gamma_(VecX<Scalar>::Constant(channels, Scalar(1))),
        beta_(VecX<Scalar>::Zero(channels)),
        ggamma_(VecX<Scalar>::Zero(channels)),
        gbeta_(VecX<Scalar>::Zero(channels)),
        running_mean_(VecX<Scalar>::Zero(channels)),
        running_var_(VecX<Scalar>::Constant(channels, Scalar(1))) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    if (mode == Mode::train) {
      cached_input_ = x;
      return batch_norm_train(x, gamma_, beta_, running_mean_, running_var_, momentum_, eps_, &stats_);
    }
    return batch_norm_eval(x, gamma_, beta_, running_mean_, running_var_, eps_);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    auto g = batch_norm_backward(grad_out, cached_input_, gamma_, stats_);
    ggamma_.array() = g.gamma.array();
    gbeta_.array() = g.beta.array();
    return std::move(g.input);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Scalar>>& out) {
    out.push_back({prefix + ".gamma", ParamKind::norm, gamma_.data(), ggamma_.data(), gamma_.size()});
    out.push_back({prefix + ".beta", ParamKind::norm, beta_.data(), gbeta_.data(), beta_.size()});
  }

  void collect_state(const std::string& prefix, std::vector<StateRef<Scalar>>& out) {
    out.push_back({prefix + ".running_mean", running_mean_.data(), running_mean_.size()});
    out.push_back({prefix + ".running_var", running_var_.data(), running_var_.size()});
  }

  Index param_count() const { return gamma_.size() + beta_.size(); }
  Index state_count() const { return running_mean_.size() + running_var_.size(); }

  VecX<Scalar>& gamma() { return gamma_; }
  VecX<Scalar>& beta() { return beta_; }
  VecX<Scalar>& running_mean() { return running_mean_; }
  VecX<Scalar>& running_var() { return running_var_; }
  double eps() const { return eps_; }

 private:
  VecX<Scalar> gamma_, beta_, ggamma_, gbeta_;
  VecX<Scalar> running_mean_, running_var_;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Tensor<Scalar> cached_input_;
  BnStats stats_;
};

}  // namespace ddcm

#endif  // DDCM_LAYERS_HPP
