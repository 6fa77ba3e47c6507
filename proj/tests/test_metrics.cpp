#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "ddcm/metrics.hpp"
#include "ddcm/rng.hpp"

using namespace ddcm;

namespace {

LabelMap map_of(std::vector<std::int32_t> v) {
  LabelMap m(1, 1, static_cast<Index>(v.size()));
  m.v = std::move(v);
  return m;
}

}  // namespace

TEST_CASE("confusion accumulation") {
  SUBCASE("perfect prediction is diagonal") {
    ConfusionMatrix cm(3);
    LabelMap l = map_of({0, 1, 2, 1, 0});
    cm.accumulate(l, l);
    CHECK(cm.at(0, 0) == 2);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.at(2, 2) == 1);
    CHECK(cm.total() == 5);
  }
  SUBCASE("hand-counted example") {
    ConfusionMatrix cm(2);
    cm.accumulate(map_of({0, 0, 1, 1}), map_of({0, 1, 1, 1}));
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 0);
    CHECK(cm.at(1, 0) == 1);
    CHECK(cm.at(1, 1) == 2);
  }
  SUBCASE("ignored pixels counted separately") {
    ConfusionMatrix cm(2);
    cm.accumulate(map_of({0, 1, 0}), map_of({0, 255, 1}), 255);
    CHECK(cm.total() == 2);
    CHECK(cm.ignored() == 1);
  }
  SUBCASE("out-of-range ids rejected") {
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(cm.accumulate(map_of({7}), map_of({0})), ShapeError);
  }
  SUBCASE("shard merge equals single-pass accumulation") {
    ConfusionMatrix a(3), b(3), whole(3);
    LabelMap p1 = map_of({0, 1, 2, 0}), l1 = map_of({0, 2, 2, 1});
    LabelMap p2 = map_of({1, 1}), l2 = map_of({1, 0});
    a.accumulate(p1, l1);
    b.accumulate(p2, l2);
    whole.accumulate(p1, l1);
    whole.accumulate(p2, l2);
    a += b;
    CHECK(a.counts() == whole.counts());
  }
}

TEST_CASE("scores from the worked 2x2 example") {
  ConfusionMatrix cm(2);
  cm.accumulate(map_of({0, 0, 1, 1}), map_of({0, 1, 1, 1}));
  Scores s = compute_scores(cm);
  CHECK(s.per_class[1].precision == doctest::Approx(1.0));
  CHECK(s.per_class[1].recall == doctest::Approx(2.0 / 3.0));
  CHECK(s.per_class[1].f1 == doctest::Approx(0.8));
  CHECK(s.per_class[1].iou == doctest::Approx(2.0 / 3.0));
  CHECK(s.overall_accuracy == doctest::Approx(0.75));
}

TEST_CASE("scores match a set-arithmetic oracle on random maps") {
  Rng rng(61);
  for (int trial = 0; trial < 5; ++trial) {
    const Index C = 3;
    const Index N = 10000;
    LabelMap pred(1, 1, N), label(1, 1, N);
    for (Index i = 0; i < N; ++i) {
      pred.v[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(C));
      label.v[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(C));
    }
    ConfusionMatrix cm(C);
    cm.accumulate(pred, label);
    Scores s = compute_scores(cm);

    for (Index c = 0; c < C; ++c) {
      // independent evaluation from pixel index sets
      std::set<Index> P, L;
      for (Index i = 0; i < N; ++i) {
        if (pred.v[static_cast<size_t>(i)] == c) P.insert(i);
        if (label.v[static_cast<size_t>(i)] == c) L.insert(i);
      }
      std::vector<Index> inter;
      std::set_intersection(P.begin(), P.end(), L.begin(), L.end(), std::back_inserter(inter));
      const double tp = static_cast<double>(inter.size());
      const double prec = tp / static_cast<double>(P.size());
      const double rec = tp / static_cast<double>(L.size());
      const double f1 = 2 * tp / static_cast<double>(P.size() + L.size());
      const double iou = tp / static_cast<double>(P.size() + L.size() - inter.size());
      CHECK(std::abs(s.per_class[static_cast<size_t>(c)].precision - prec) < 1e-12);
      CHECK(std::abs(s.per_class[static_cast<size_t>(c)].recall - rec) < 1e-12);
      CHECK(std::abs(s.per_class[static_cast<size_t>(c)].f1 - f1) < 1e-12);
      CHECK(std::abs(s.per_class[static_cast<size_t>(c)].iou - iou) < 1e-12);
    }
  }
}

TEST_CASE("iou and f1 satisfy IoU = F1 / (2 - F1)") {
  Rng rng(62);
  LabelMap pred(1, 1, 5000), label(1, 1, 5000);
  for (Index i = 0; i < 5000; ++i) {
    pred.v[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(4));
    label.v[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(4));
  }
  ConfusionMatrix cm(4);
  cm.accumulate(pred, label);
  Scores s = compute_scores(cm);
  for (const auto& c : s.per_class) {
    REQUIRE(c.defined);
    CHECK(c.iou == doctest::Approx(c.f1 / (2.0 - c.f1)).epsilon(1e-12));
  }
}

TEST_CASE("overall accuracy is invariant under consistent class permutation") {
  Rng rng(63);
  LabelMap pred(1, 1, 2000), label(1, 1, 2000);
  for (Index i = 0; i < 2000; ++i) {
    pred.v[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(3));
    label.v[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(3));
  }
  const std::int32_t perm[3] = {2, 0, 1};
  LabelMap pred2 = pred, label2 = label;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    pred2.v[i] = perm[pred.v[i]];
    label2.v[i] = perm[label.v[i]];
  }
  ConfusionMatrix a(3), b(3);
  a.accumulate(pred, label);
  b.accumulate(pred2, label2);
  CHECK(compute_scores(a).overall_accuracy == compute_scores(b).overall_accuracy);
}

TEST_CASE("excluding the best class cannot raise the means") {
  Rng rng(64);
  LabelMap pred(1, 1, 3000), label(1, 1, 3000);
  for (Index i = 0; i < 3000; ++i) {
    label.v[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(3));
    pred.v[static_cast<size_t>(i)] =
        rng.bernoulli(0.7) ? label.v[static_cast<size_t>(i)] : static_cast<std::int32_t>(rng.uniform_int(3));
  }
  ConfusionMatrix cm(3);
  cm.accumulate(pred, label);
  Scores all = compute_scores(cm);
  Index best = 0;
  for (Index c = 1; c < 3; ++c)
    if (all.per_class[static_cast<size_t>(c)].f1 > all.per_class[static_cast<size_t>(best)].f1) best = c;
  Scores without = compute_scores(cm, {best});
  CHECK(all.mean_f1 >= without.mean_f1 - 1e-12);
  CHECK(all.mean_iou >= without.mean_iou - 1e-12);
}

TEST_CASE("row normalization") {
  SUBCASE("diagonal becomes identity") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 5;
    cm.at(1, 1) = 2;
    cm.at(2, 2) = 9;
    Eigen::MatrixXd n = normalize_rows(cm);
    CHECK(n.isApprox(Eigen::MatrixXd::Identity(3, 3)));
  }
  SUBCASE("hand example and idempotence") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 1;
    cm.at(0, 1) = 1;
    cm.at(1, 1) = 2;
    Eigen::MatrixXd n = normalize_rows(cm);
    CHECK(n(0, 0) == doctest::Approx(0.5));
    CHECK(n(0, 1) == doctest::Approx(0.5));
    CHECK(n(1, 0) == 0.0);
    CHECK(n(1, 1) == doctest::Approx(1.0));
    for (Index i = 0; i < 2; ++i) CHECK(n.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("zero-support rows flagged") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 3;
    std::vector<bool> zero;
    Eigen::MatrixXd n = normalize_rows(cm, &zero);
    CHECK(zero == std::vector<bool>{false, true});
    CHECK(n.row(1).sum() == 0.0);
  }
  SUBCASE("zero-support class excluded from means with a warning") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 4;
    cm.at(1, 1) = 4;
    Scores s = compute_scores(cm);
    CHECK(s.undefined == std::vector<Index>{2});
    CHECK(s.mean_f1 == doctest::Approx(1.0));
  }
}
