#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "ddcm/rng.hpp"
#include "ddcm/tensor.hpp"
#include "ddcm/tensor_io.hpp"
#include "oracles.hpp"

using namespace ddcm;

TEST_CASE("tensor shape invariants") {
  Tensor<float> t(2, 3, 4, 5);
  CHECK(t.count() == 120);
  CHECK(t.shape().str() == "(2,3,4,5)");
  CHECK(t.array().size() == 120);
  CHECK_THROWS_AS(Tensor<float>(0, 1, 1, 1), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(1, 1, -2, 1), ShapeError);
  // zero-initialized and finite
  CHECK(t.all_finite());
  t(1, 2, 3, 4) = 7.0f;
  CHECK(t.data()[t.offset(1, 2, 3, 4)] == 7.0f);
  t(0, 0, 0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("concat_channels stacks a first, b second") {
  Rng rng(7);
  Tensor<float> a(1, 2, 4, 4), b(1, 3, 4, 4);
  oracles::fill_uniform(a, rng);
  oracles::fill_uniform(b, rng);
  Tensor<float> c = concat_channels(a, b);
  CHECK(c.shape() == TensorShape{1, 5, 4, 4});
  for (Index ch = 0; ch < 2; ++ch)
    for (Index y = 0; y < 4; ++y)
      for (Index x = 0; x < 4; ++x) CHECK(c(0, ch, y, x) == a(0, ch, y, x));

  SUBCASE("slice recovers both inputs exactly") {
    Tensor<float> ra = slice_channels(c, 0, 2);
    Tensor<float> rb = slice_channels(c, 2, 3);
    CHECK((ra.array() == a.array()).all());
    CHECK((rb.array() == b.array()).all());
  }
  SUBCASE("backward splits grad bit-exactly") {
    Tensor<float> g(1, 5, 4, 4);
    oracles::fill_uniform(g, rng);
    auto [ga, gb] = concat_channels_backward(g, 2, 3);
    CHECK((ga.array() == slice_channels(g, 0, 2).array()).all());
    CHECK((gb.array() == slice_channels(g, 2, 3).array()).all());
  }
  SUBCASE("mismatched spatial dims rejected") {
    Tensor<float> d(1, 1, 5, 4);
    CHECK_THROWS_AS(concat_channels(a, d), ShapeError);
  }
}

TEST_CASE("tensor container round trip") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "ddcm_test_container.bin";
  TensorFile tf;
  std::vector<float> payload = {1.5f, -2.0f, 0.25f, 1e-20f, 3e20f, -0.0f};
  tf.add("conv.w", {2, 3}, payload.data());
  tf.add_text("__spec__", "net.classes = 6\n");
  tf.write(path);

  TensorFile back = TensorFile::read(path);
  REQUIRE(back.entries().size() == 2);
  const NamedTensor* e = back.find("conv.w");
  REQUIRE(e != nullptr);
  CHECK(e->dims == std::vector<std::uint32_t>{2, 3});
  for (size_t i = 0; i < payload.size(); ++i) {
    // bit-exact, including the signed zero
    std::uint32_t a, b;
    std::memcpy(&a, &payload[i], 4);
    std::memcpy(&b, &e->data[i], 4);
    CHECK(a == b);
  }
  CHECK(back.text("__spec__") == "net.classes = 6\n");

  SUBCASE("truncated file is a corrupt-checkpoint error") {
    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 5);
    CHECK_THROWS_AS(TensorFile::read(path), IoError);
  }
  SUBCASE("bad magic rejected") {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE nothing";
    f.close();
    CHECK_THROWS_AS(TensorFile::read(path), IoError);
  }
  SUBCASE("format version mismatch rejected") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const char v2[4] = {2, 0, 0, 0};
    f.write(v2, 4);
    f.close();
    CHECK_THROWS_AS(TensorFile::read(path), IoError);
  }
  fs::remove(path);
}
