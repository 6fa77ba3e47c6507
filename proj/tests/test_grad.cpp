#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ddcm/conv.hpp"
#include "ddcm/nn_ops.hpp"
#include "ddcm/rng.hpp"
#include "oracles.hpp"

using namespace ddcm;
using oracles::fill_uniform;
using oracles::max_rel_fd_error;
using oracles::sum_squares;

namespace {

constexpr double kTol = 1e-3;

/// Keeps values away from the PReLU/pool kinks so central differences with
/// h=1e-3 stay on one side.
template <typename T>
void fill_away_from_zero(T& t, Rng& rng, double margin = 5e-2) {
  for (Index i = 0; i < t.size(); ++i) {
    double v = rng.uniform(-1.0, 1.0);
    if (std::abs(v) < margin) v += v >= 0 ? margin : -margin;
    t[i] = v;
  }
}

}  // namespace

TEST_CASE("conv2d backward: zero grad and the scalar product rule") {
  Rng rng(21);
  ConvSpec spec;
  spec.in_channels = spec.out_channels = 1;
  spec.kernel = 1;
  spec.padding = 0;
  Tensor<double> x(1, 1, 1, 1), w(1, 1, 1, 1);
  VecX<double> b(1);
  x(0, 0, 0, 0) = 3.0;
  w(0, 0, 0, 0) = -2.0;
  b[0] = 0.5;
  Tensor<double> out = conv2d(x, w, b, spec);
  CHECK(out(0, 0, 0, 0) == doctest::Approx(-5.5));

  Tensor<double> gout(1, 1, 1, 1);
  SUBCASE("all-zero grad_out gives all-zero gradients") {
    auto g = conv2d_backward(gout, x, w, spec);
    CHECK(g.input(0, 0, 0, 0) == 0.0);
    CHECK(g.weight(0, 0, 0, 0) == 0.0);
    CHECK(g.bias[0] == 0.0);
  }
  SUBCASE("1x1 single-pixel adjoints are the scalar products") {
    gout(0, 0, 0, 0) = 1.75;
    auto g = conv2d_backward(gout, x, w, spec);
    CHECK(g.input(0, 0, 0, 0) == doctest::Approx(1.75 * -2.0));
    CHECK(g.weight(0, 0, 0, 0) == doctest::Approx(1.75 * 3.0));
    CHECK(g.bias[0] == doctest::Approx(1.75));
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  struct Case {
    Index in, out, k, r, s, g, h, w;
  };
  const Case cases[] = {
      {2, 2, 3, 2, 1, 1, 6, 6},
      {4, 2, 3, 1, 2, 2, 8, 8},
      {2, 4, 1, 1, 1, 1, 5, 5},
      {2, 2, 3, 3, 2, 1, 9, 9},
  };
  for (const auto& c : cases) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng = Rng::keyed(seed, c.in, c.k, c.r, c.s);
      ConvSpec spec;
      spec.in_channels = c.in;
      spec.out_channels = c.out;
      spec.kernel = c.k;
      spec.dilation = c.r;
      spec.stride = c.s;
      spec.groups = c.g;
      Tensor<double> x(1, c.in, c.h, c.w), w(c.out, c.in / c.g, c.k, c.k);
      VecX<double> b(c.out);
      fill_uniform(x, rng);
      fill_uniform(w, rng);
      fill_uniform(b, rng);

      auto loss = [&] { return sum_squares(conv2d(x, w, b, spec)); };
      Tensor<double> out = conv2d(x, w, b, spec);
      Tensor<double> gout(out.shape());
      gout.array() = 2.0 * out.array();
      auto grads = conv2d_backward(gout, x, w, spec);

      CHECK(max_rel_fd_error(x.data(), x.count(), grads.input.data(), loss) < kTol);
      CHECK(max_rel_fd_error(w.data(), w.count(), grads.weight.data(), loss) < kTol);
      CHECK(max_rel_fd_error(b.data(), b.size(), grads.bias.data(), loss) < kTol);
    }
  }
}

TEST_CASE("prelu forward definition and gradients") {
  VecX<double> slopes(2);
  slopes << 1.0, 0.25;
  Tensor<double> x(1, 2, 2, 2);
  x(0, 0, 0, 0) = -3.0;
  x(0, 1, 0, 0) = -2.0;
  x(0, 1, 1, 1) = 4.0;
  Tensor<double> y = prelu(x, slopes);
  CHECK(y(0, 0, 0, 0) == -3.0);  // slope 1 is the identity
  CHECK(y(0, 1, 0, 0) == -0.5);
  CHECK(y(0, 1, 1, 1) == 4.0);

  VecX<double> bad(3);
  CHECK_THROWS_AS(prelu(x, bad), ShapeError);

  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng = Rng::keyed(seed, 0x7072ULL);
    Tensor<double> in(2, 3, 5, 5);
    VecX<double> a(3);
    fill_away_from_zero(in.array(), rng);
    for (Index i = 0; i < 3; ++i) a[i] = rng.uniform(0.05, 0.8);

    auto loss = [&] { return sum_squares(prelu(in, a)); };
    Tensor<double> out = prelu(in, a);
    Tensor<double> gout(out.shape());
    gout.array() = 2.0 * out.array();
    auto [gi, ga] = prelu_backward(gout, in, a);
    CHECK(max_rel_fd_error(in.data(), in.count(), gi.data(), loss) < kTol);
    CHECK(max_rel_fd_error(a.data(), a.size(), ga.data(), loss) < kTol);
  }
}

TEST_CASE("batch norm statistics, eval formula, gradients") {
  Rng rng(23);
  SUBCASE("train mode normalizes each channel") {
    Tensor<double> x(4, 3, 5, 5);
    fill_uniform(x, rng, -2.0, 5.0);
    VecX<double> gamma = VecX<double>::Ones(3), beta = VecX<double>::Zero(3);
    VecX<double> rm = VecX<double>::Zero(3), rv = VecX<double>::Ones(3);
    BnStats stats;
    Tensor<double> y = batch_norm_train(x, gamma, beta, rm, rv, 0.1, 1e-5, &stats);
    for (Index c = 0; c < 3; ++c) {
      double sum = 0, sq = 0;
      Index n = 0;
      for (Index b = 0; b < 4; ++b)
        for (Index e = 0; e < 25; ++e) {
          const double v = y.plane(b, c)[e];
          sum += v;
          sq += v * v;
          ++n;
        }
      const double mean = sum / n;
      const double var = sq / n - mean * mean;
      CHECK(std::abs(mean) < 1e-5);
      CHECK(std::abs(var - 1.0) < 1e-4);  // eps shifts variance slightly below 1
    }
  }

  SUBCASE("eval mode applies the running-stat formula exactly") {
    Tensor<double> x(1, 2, 3, 3);
    fill_uniform(x, rng);
    VecX<double> gamma(2), beta(2), rm(2), rv(2);
    gamma << 1.5, 0.5;
    beta << -1.0, 2.0;
    rm << 0.3, -0.2;
    rv << 2.0, 0.5;
    const double eps = 1e-5;
    Tensor<double> y = batch_norm_eval(x, gamma, beta, rm, rv, eps);
    for (Index c = 0; c < 2; ++c)
      for (Index e = 0; e < 9; ++e) {
        const double want = gamma[c] * (x.plane(0, c)[e] - rm[c]) / std::sqrt(rv[c] + eps) + beta[c];
        CHECK(y.plane(0, c)[e] == want);
      }
  }

  SUBCASE("degenerate single-element normalization rejected") {
    Tensor<double> x(1, 2, 1, 1);
    VecX<double> g = VecX<double>::Ones(2), b = VecX<double>::Zero(2);
    VecX<double> rm = VecX<double>::Zero(2), rv = VecX<double>::Ones(2);
    CHECK_THROWS_AS(batch_norm_train(x, g, b, rm, rv, 0.1, 1e-5, nullptr), NumericError);
  }

  SUBCASE("train-mode gradients match finite differences") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng r2 = Rng::keyed(seed, 0x626eULL);
      Tensor<double> x(4, 3, 5, 5);
      fill_uniform(x, r2, -1.5, 1.5);
      VecX<double> gamma(3), beta(3);
      fill_uniform(gamma, r2, 0.5, 1.5);
      fill_uniform(beta, r2, -0.5, 0.5);

      auto loss = [&] {
        VecX<double> rm = VecX<double>::Zero(3), rv = VecX<double>::Ones(3);
        return sum_squares(batch_norm_train(x, gamma, beta, rm, rv, 0.1, 1e-5, nullptr));
      };
      VecX<double> rm = VecX<double>::Zero(3), rv = VecX<double>::Ones(3);
      BnStats stats;
      Tensor<double> out = batch_norm_train(x, gamma, beta, rm, rv, 0.1, 1e-5, &stats);
      Tensor<double> gout(out.shape());
      gout.array() = 2.0 * out.array();
      auto grads = batch_norm_backward(gout, x, gamma, stats);
      CHECK(max_rel_fd_error(x.data(), x.count(), grads.input.data(), loss) < kTol);
      CHECK(max_rel_fd_error(gamma.data(), gamma.size(), grads.gamma.data(), loss) < kTol);
      CHECK(max_rel_fd_error(beta.data(), beta.size(), grads.beta.data(), loss) < kTol);
    }
  }
}

TEST_CASE("bilinear upsampling") {
  Rng rng(24);
  SUBCASE("same size is the identity") {
    Tensor<double> x(1, 2, 4, 4);
    fill_uniform(x, rng);
    Tensor<double> y = bilinear_upsample(x, 4, 4);
    CHECK((y.array() == x.array()).all());
  }
  SUBCASE("constant input stays constant") {
    Tensor<float> x(1, 1, 3, 5);
    x.array().setConstant(0.3125f);
    Tensor<float> y = bilinear_upsample(x, 7, 11);
    for (Index i = 0; i < y.count(); ++i) CHECK(y.data()[i] == 0.3125f);
  }
  SUBCASE("3x3 -> 6x6 matches the per-pixel interpolation oracle") {
    Tensor<double> x(1, 1, 3, 3);
    fill_uniform(x, rng);
    Tensor<double> y = bilinear_upsample(x, 6, 6);
    for (Index oy = 0; oy < 6; ++oy)
      for (Index ox = 0; ox < 6; ++ox) {
        auto src = [](Index i) { return (static_cast<double>(i) + 0.5) * 0.5 - 0.5; };
        const double sy = std::max(0.0, src(oy)), sx = std::max(0.0, src(ox));
        const Index y0 = std::min<Index>(static_cast<Index>(sy), 2), y1 = std::min<Index>(y0 + 1, 2);
        const Index x0 = std::min<Index>(static_cast<Index>(sx), 2), x1 = std::min<Index>(x0 + 1, 2);
        const double fy = sy - y0, fx = sx - x0;
        const double want = (1 - fy) * (1 - fx) * x(0, 0, y0, x0) + (1 - fy) * fx * x(0, 0, y0, x1) +
                            fy * (1 - fx) * x(0, 0, y1, x0) + fy * fx * x(0, 0, y1, x1);
        CHECK(y(0, 0, oy, ox) == doctest::Approx(want).epsilon(1e-6));
      }
  }
  SUBCASE("shrinking rejected by the upsample wrapper") {
    Tensor<double> x(1, 1, 4, 4);
    CHECK_THROWS_AS(bilinear_upsample(x, 3, 4), ShapeError);
  }
  SUBCASE("backward is the exact adjoint: <Ax, y> == <x, A'y>") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng r2 = Rng::keyed(seed, 0x6269ULL);
      Tensor<double> x(1, 2, 3, 4), y(1, 2, 7, 9);
      fill_uniform(x, r2);
      fill_uniform(y, r2);
      Tensor<double> ax = bilinear_upsample(x, 7, 9);
      Tensor<double> aty = bilinear_resize_backward(y, 3, 4);
      const double lhs = (ax.array() * y.array()).sum();
      const double rhs = (x.array() * aty.array()).sum();
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
  }
}

TEST_CASE("max pooling") {
  SUBCASE("window 1 stride 1 is the identity") {
    Rng rng(25);
    Tensor<double> x(1, 2, 3, 3);
    fill_uniform(x, rng);
    auto res = max_pool(x, 1, 1);
    CHECK((res.out.array() == x.array()).all());
  }
  SUBCASE("2x2/2 on the 0..15 ramp") {
    Tensor<double> x(1, 1, 4, 4);
    for (Index i = 0; i < 16; ++i) x.data()[i] = static_cast<double>(i);
    auto res = max_pool(x, 2, 2);
    REQUIRE(res.out.shape() == TensorShape{1, 1, 2, 2});
    CHECK(res.out(0, 0, 0, 0) == 5.0);
    CHECK(res.out(0, 0, 0, 1) == 7.0);
    CHECK(res.out(0, 0, 1, 0) == 13.0);
    CHECK(res.out(0, 0, 1, 1) == 15.0);
  }
  SUBCASE("window larger than input rejected") {
    Tensor<double> x(1, 1, 4, 4);
    CHECK_THROWS_AS(max_pool(x, 5, 1), ShapeError);
  }
  SUBCASE("backward matches finite differences away from ties") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng = Rng::keyed(seed, 0x6d70ULL);
      Tensor<double> x(1, 2, 6, 6);
      fill_uniform(x, rng);  // continuous draws: ties have measure zero
      auto loss = [&] { return sum_squares(max_pool(x, 2, 2).out); };
      auto res = max_pool(x, 2, 2);
      Tensor<double> gout(res.out.shape());
      gout.array() = 2.0 * res.out.array();
      Tensor<double> gi = max_pool_backward(gout, res.argmax, x.shape());
      CHECK(max_rel_fd_error(x.data(), x.count(), gi.data(), loss) < kTol);
    }
  }
}

TEST_CASE("softmax over channels sums to one") {
  Rng rng(26);
  Tensor<float> logits(2, 5, 4, 4);
  fill_uniform(logits, rng, -8.0, 8.0);
  Tensor<float> p = softmax_channels(logits);
  for (Index n = 0; n < 2; ++n)
    for (Index y = 0; y < 4; ++y)
      for (Index x = 0; x < 4; ++x) {
        double sum = 0;
        for (Index c = 0; c < 5; ++c) sum += p(n, c, y, x);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
      }
}
