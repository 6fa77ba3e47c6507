#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ddcm/ddcm_module.hpp"
#include "ddcm/rng.hpp"
#include "oracles.hpp"

using namespace ddcm;
using oracles::fill_uniform;
using oracles::max_rel_fd_error;
using oracles::sum_squares;

namespace {

DdcmSpec make_spec(Index in, std::vector<Index> rates, Index width, Index merge_out,
                   StrideMode stride = StrideMode::unit(), Index groups = 1, Index kernel = 3) {
  DdcmSpec s;
  s.in_channels = in;
  s.dilation_rates = std::move(rates);
  s.width = width;
  s.kernel = kernel;
  s.groups = groups;
  s.stride = stride;
  s.merge_out_channels = merge_out;
  return s;
}

}  // namespace

TEST_CASE("dc block stacks its input unchanged") {
  Rng rng(31);
  DcBlockSpec spec{3, 1, 3, 2, 1, 1};
  DcBlock<float> block(spec);
  block.init(rng);
  Tensor<float> x(2, 3, 10, 10);
  fill_uniform(x, rng);
  Tensor<float> y = block.forward(x, Mode::train);
  REQUIRE(y.shape() == TensorShape{2, 4, 10, 10});
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 3; ++c)
      for (Index e = 0; e < 100; ++e) CHECK(y.plane(n, c + 1)[e] == x.plane(n, c)[e]);
}

TEST_CASE("strided dc block upsamples back before stacking") {
  Rng rng(32);
  DcBlockSpec spec{3, 2, 3, 1, 1, 2};
  DcBlock<float> block(spec);
  block.init(rng);
  Tensor<float> x(1, 3, 64, 64);
  fill_uniform(x, rng);
  Tensor<float> y = block.forward(x, Mode::train);
  CHECK(y.shape() == TensorShape{1, 5, 64, 64});
  // the internal conv ran at half resolution
  CHECK(spec.conv().out_dim(64) == 32);

  SUBCASE("stride only changes the produced channels, not the pass-through") {
    DcBlockSpec unit{3, 2, 3, 1, 1, 1};
    DcBlock<float> block1(unit);
    Rng rng_a(33), rng_b(33);
    block1.init(rng_a);
    DcBlock<float> block2(spec);
    block2.init(rng_b);  // identical weights
    Tensor<float> y1 = block1.forward(x, Mode::train);
    Tensor<float> y2 = block2.forward(x, Mode::train);
    for (Index c = 0; c < 3; ++c)
      for (Index e = 0; e < 64 * 64; ++e) CHECK(y1.plane(0, c + 2)[e] == y2.plane(0, c + 2)[e]);
  }
}

TEST_CASE("ddcm module output keeps the input spatial size") {
  Rng rng(34);
  // the 6-rate low-level encoder arrangement: 3 -> 3 channels
  DdcmSpec spec = make_spec(3, {1, 2, 3, 5, 7, 9}, 3, 3);
  DdcmModule<float> mod(spec);
  mod.init(rng);
  Tensor<float> x(1, 3, 64, 64);
  fill_uniform(x, rng, 0.0, 1.0);
  Tensor<float> y = mod.forward(x, Mode::train);
  CHECK(y.shape() == TensorShape{1, 3, 64, 64});
  CHECK(y.all_finite());

  SUBCASE("spatial size preserved for strided and grouped variants") {
    for (StrideMode sm : {StrideMode::fixed(2), StrideMode::fixed(3), StrideMode::dynamic()}) {
      DdcmSpec v = make_spec(4, {1, 2, 4}, 2, 6, sm, 2);
      DdcmModule<float> m2(v);
      m2.init(rng);
      Tensor<float> x2(1, 4, 48, 48);
      fill_uniform(x2, rng);
      CHECK(m2.forward(x2, Mode::eval).shape() == TensorShape{1, 6, 48, 48});
    }
  }
}

TEST_CASE("degenerate module specs rejected") {
  CHECK_THROWS_AS(DdcmSpec(make_spec(3, {}, 1, 3)).validate(), ShapeError);
  CHECK_THROWS_AS(DdcmSpec(make_spec(3, {1}, -1, 0)).validate(), ShapeError);
  DdcmSpec zero_m = make_spec(3, {1}, 0, 3);
  zero_m.merge_out_channels = 0;
  CHECK_THROWS_AS(zero_m.validate(), ShapeError);
  CHECK_THROWS_AS(DdcmSpec(make_spec(3, {1, 0}, 1, 3)).validate(), ShapeError);
}

TEST_CASE("identity configuration reproduces the input exactly") {
  // zero block convs, unit PReLU slopes, BN as identity, merge reading the
  // pass-through channels
  DdcmSpec spec = make_spec(3, {1, 2}, 2, 3);
  DdcmModule<float> mod(spec);
  const float var_id = 1.0f - 1e-5f;  // sqrt(var + eps) == 1

  for (auto& b : mod.blocks()) {
    b.conv().weight().array().setZero();
    b.conv().bias().setZero();
    b.act().slopes().setConstant(1.0f);
    b.bn().gamma().setConstant(1.0f);
    b.bn().beta().setZero();
    b.bn().running_mean().setZero();
    b.bn().running_var().setConstant(var_id);
  }
  mod.merge().weight().array().setZero();
  const Index stacked = spec.stacked_channels();  // 3 + 2*2 = 7
  for (Index j = 0; j < 3; ++j) mod.merge().weight()(j, stacked - 3 + j, 0, 0) = 1.0f;
  mod.merge().bias().setZero();
  mod.merge_act().slopes().setConstant(1.0f);
  mod.merge_bn().gamma().setConstant(1.0f);
  mod.merge_bn().beta().setZero();
  mod.merge_bn().running_mean().setZero();
  mod.merge_bn().running_var().setConstant(var_id);

  Rng rng(35);
  Tensor<float> x(1, 3, 12, 12);
  fill_uniform(x, rng);
  Tensor<float> y = mod.forward(x, Mode::eval);
  REQUIRE(y.shape() == x.shape());
  CHECK((y.array() == x.array()).all());
}

TEST_CASE("effective kernel size") {
  CHECK(effective_kernel(3, 1) == 3);
  CHECK(effective_kernel(3, 4) == 9);
  CHECK(effective_kernel(3, 9) == 19);
  CHECK(effective_kernel(1, 7) == 1);
}

TEST_CASE("fused receptive fields") {
  SUBCASE("k=3 rates [1,2,4]") {
    ReceptiveFields rf = fused_receptive_fields(3, {1, 2, 4});
    REQUIRE(rf.per_layer.size() == 3);
    CHECK(rf.per_layer[0] == std::vector<Index>{3});
    CHECK(rf.per_layer[1] == std::vector<Index>{7, 5});
    CHECK(rf.per_layer[2] == std::vector<Index>{15, 11, 9});
    CHECK(rf.merged == std::vector<Index>{15, 11, 9, 7, 5, 3, 1});
  }
  SUBCASE("single standard conv") {
    ReceptiveFields rf = fused_receptive_fields(3, {1});
    CHECK(rf.merged == std::vector<Index>{3, 1});
  }
  SUBCASE("6-rate encoder tops out at 55") {
    ReceptiveFields rf = fused_receptive_fields(3, {1, 2, 3, 5, 7, 9});
    CHECK(rf.merged.front() == 55);
  }
  SUBCASE("empty rate list rejected") {
    CHECK_THROWS_AS(fused_receptive_fields(3, {}), ShapeError);
  }
}

TEST_CASE("parameters grow linearly per added block, receptive field much faster") {
  // count(n+1) - count(n) must be affine in n; the max merged RF grows by
  // k_eff(r_{n+1}) - 1 with each block
  auto param_count = [](const DdcmSpec& s) {
    DdcmModule<float> m(s);
    std::vector<ParamRef<float>> refs;
    m.collect("m", refs);
    Index total = 0;
    for (const auto& r : refs) total += r.size;
    return total;
  };
  const std::vector<Index> all_rates = {1, 2, 4, 8, 16, 32, 64, 128};
  std::vector<Index> counts, max_rf;
  for (size_t n = 1; n <= 8; ++n) {
    std::vector<Index> rates(all_rates.begin(), all_rates.begin() + static_cast<std::ptrdiff_t>(n));
    counts.push_back(param_count(make_spec(4, rates, 4, 8)));
    max_rf.push_back(fused_receptive_fields(3, rates).merged.front());
  }
  // affine first difference <=> constant second difference
  const Index second = counts[2] - 2 * counts[1] + counts[0];
  for (size_t n = 0; n + 2 < counts.size(); ++n)
    CHECK(counts[n + 2] - 2 * counts[n + 1] + counts[n] == second);
  CHECK(second > 0);
  for (size_t n = 0; n + 1 < max_rf.size(); ++n)
    CHECK(max_rf[n + 1] - max_rf[n] == effective_kernel(3, all_rates[n + 1]) - 1);

  SUBCASE("closed form for the block convolutions") {
    for (size_t n = 1; n <= 8; ++n) {
      std::vector<Index> rates(all_rates.begin(), all_rates.begin() + static_cast<std::ptrdiff_t>(n));
      DdcmSpec s = make_spec(4, rates, 4, 8);
      const Index m = s.block_width(), in = s.in_channels, k = s.kernel, g = s.groups;
      const Index nn = static_cast<Index>(n);
      const Index conv_params =
          m * k * k / g * (nn * in + m * nn * (nn - 1) / 2) + nn * m;  // weights + biases
      Index measured = 0;
      for (Index i = 0; i < nn; ++i) {
        const ConvSpec c = s.block(i).conv();
        measured += c.out_channels * (c.in_channels / c.groups) * c.kernel * c.kernel + c.out_channels;
      }
      CHECK(measured == conv_params);
    }
  }
}

TEST_CASE("unit-rate module matches the base parameter count") {
  DdcmSpec base = make_spec(3, {1, 2, 3, 5, 7, 9}, 3, 3);
  DdcmSpec flat = base.without_dilation();
  auto count = [](const DdcmSpec& s) {
    DdcmModule<float> m(s);
    std::vector<ParamRef<float>> refs;
    m.collect("m", refs);
    Index total = 0;
    for (const auto& r : refs) total += r.size;
    return total;
  };
  CHECK(count(base) == count(flat));
  for (Index r : flat.dilation_rates) CHECK(r == 1);
  CHECK(flat.dilation_rates.size() == base.dilation_rates.size());
}

TEST_CASE("2-block module gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng = Rng::keyed(seed, 0x6464636dULL);
    DdcmSpec spec = make_spec(2, {1, 2}, 2, 2, StrideMode::unit(), 2);
    spec.dilation_rates = {1, 2};
    DdcmModule<double> mod(spec);
    mod.init(rng);
    // unit slopes keep the composition smooth; the kink branches are
    // exercised by the dedicated PReLU gradient test
    for (auto& b : mod.blocks()) b.act().slopes().setConstant(1.0);
    mod.merge_act().slopes().setConstant(1.0);

    Tensor<double> x(1, 2, 8, 8);
    fill_uniform(x, rng);

    auto loss = [&] { return sum_squares(mod.forward(x, Mode::train)); };
    Tensor<double> out = mod.forward(x, Mode::train);
    Tensor<double> gout(out.shape());
    gout.array() = 2.0 * out.array();
    Tensor<double> gx = mod.backward(gout);

    CHECK(max_rel_fd_error(x.data(), x.count(), gx.data(), loss) < 1e-3);
    std::vector<ParamRef<double>> refs;
    mod.collect("m", refs);
    for (auto& p : refs) CHECK(max_rel_fd_error(p.data, p.size, p.grad, loss) < 1e-3);
  }
}
