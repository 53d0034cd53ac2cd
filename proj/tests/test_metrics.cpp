#include <doctest.h>

#include <random>

#include "fedema/metrics.hpp"
#include "metric_oracle.hpp"

using namespace fedema;
using Labels = std::vector<std::uint32_t>;

TEST_CASE("confusion_from counts the hand example") {
  const Labels truth{0, 0, 1, 1}, pred{0, 1, 1, 1};
  const auto c = confusion_from(pred, truth, 2);
  CHECK(c[0] == ClassCounts{1, 0, 1});
  CHECK(c[1] == ClassCounts{2, 1, 0});
}

TEST_CASE("confusion_from of a perfect prediction has no errors") {
  const Labels l{2, 0, 1, 1, 2};
  for (const auto& c : confusion_from(l, l, 3)) {
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
  }
}

TEST_CASE("swapping prediction and truth swaps FP and FN") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::uint32_t> lab(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Labels a(10), b(10);
    for (auto& x : a) x = lab(rng);
    for (auto& x : b) x = lab(rng);
    const auto ab = confusion_from(a, b, 4), ba = confusion_from(b, a, 4);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(ab[k].tp == ba[k].tp);
      CHECK(ab[k].fp == ba[k].fn);
      CHECK(ab[k].fn == ba[k].fp);
    }
  }
}

TEST_CASE("confusion_from rejects bad input") {
  const Labels ok{0, 1}, bad{0, 2}, shorter{0};
  try {
    confusion_from(bad, ok, 2);
    FAIL("expected invalid label");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidLabel);
  }
  CHECK_THROWS_AS(confusion_from(ok, bad, 2), Error);
  CHECK_THROWS_AS(confusion_from(ok, shorter, 2), Error);
}

TEST_CASE("four pixel example") {
  ConfusionMatrix cm(2);
  cm.add_image(Labels{0, 1, 1, 1}, Labels{0, 0, 1, 1});
  const auto m = metric_bundle(cm);
  CHECK(std::abs(m.miou - (0.5 + 2.0 / 3.0) / 2) <= 1e-9);
  CHECK(std::abs(m.mprecision - (1.0 + 2.0 / 3.0) / 2) <= 1e-9);
  CHECK(std::abs(m.mrecall - 0.75) <= 1e-9);
  CHECK(std::abs(m.mf1 - (2.0 / 3.0 + 0.8) / 2) <= 1e-9);
}

TEST_CASE("perfect predictions score one") {
  ConfusionMatrix cm(3);
  cm.add_image(Labels{0, 1, 2, 2}, Labels{0, 1, 2, 2});
  cm.add_image(Labels{1, 1}, Labels{1, 1});
  const auto m = metric_bundle(cm);
  CHECK(m.miou == 1.0);
  CHECK(m.mf1 == 1.0);
  CHECK(m.mprecision == 1.0);
  CHECK(m.mrecall == 1.0);
}

TEST_CASE("duplicating an image leaves the bundle unchanged") {
  ConfusionMatrix one(3), two(3);
  const Labels pred{0, 2, 1, 1, 0}, truth{0, 1, 1, 2, 2};
  one.add_image(pred, truth);
  two.add_image(pred, truth);
  two.add_image(pred, truth);
  const auto a = metric_bundle(one), b = metric_bundle(two);
  CHECK(a.miou == doctest::Approx(b.miou).epsilon(1e-15));
  CHECK(a.mf1 == doctest::Approx(b.mf1).epsilon(1e-15));
  CHECK(a.mprecision == doctest::Approx(b.mprecision).epsilon(1e-15));
  CHECK(a.mrecall == doctest::Approx(b.mrecall).epsilon(1e-15));
}

TEST_CASE("absent classes are skipped and zero denominators score zero") {
  // Class 2 never appears; class 1 is predicted but absent from the truth.
  ConfusionMatrix cm(3);
  cm.add_image(Labels{0, 1}, Labels{0, 0});
  const auto m = metric_bundle(cm);
  // class 0: IoU 1/2, Pre 1, Rec 1/2; class 1: IoU 0, Pre 0, Rec 0.
  CHECK(m.miou == doctest::Approx(0.25));
  CHECK(m.mprecision == doctest::Approx(0.5));
  CHECK(m.mrecall == doctest::Approx(0.25));
  CHECK(m.mf1 == doctest::Approx((2.0 / 3.0) / 2));
  CHECK_THROWS_AS(metric_bundle(ConfusionMatrix(3)), Error);
}

TEST_CASE("merge appends images") {
  ConfusionMatrix a(2), b(2), both(2);
  a.add_image(Labels{0, 1}, Labels{0, 0});
  b.add_image(Labels{1, 1, 0}, Labels{1, 0, 0});
  both.add_image(Labels{0, 1}, Labels{0, 0});
  both.add_image(Labels{1, 1, 0}, Labels{1, 0, 0});
  a.merge(b);
  CHECK(a.image_count() == 2);
  CHECK(metric_bundle(a).miou == metric_bundle(both).miou);
}

TEST_CASE("metric_bundle matches the set-based oracle and respects bounds") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::uint32_t> lab(0, 2);
  std::uniform_int_distribution<int> count(1, 6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<testing::Image> images(static_cast<std::size_t>(count(rng)));
    ConfusionMatrix cm(3);
    for (auto& img : images) {
      img.pred.resize(8);
      img.truth.resize(8);
      for (auto& x : img.pred) x = lab(rng);
      for (auto& x : img.truth) x = lab(rng);
      cm.add_image(img.pred, img.truth);
    }
    const auto m = metric_bundle(cm);
    const auto o = testing::brute_force_bundle(images, 3);
    CHECK(m.miou == o.miou);
    CHECK(m.mf1 == o.mf1);
    CHECK(m.mprecision == o.mprecision);
    CHECK(m.mrecall == o.mrecall);
    for (double v : {m.miou, m.mf1, m.mprecision, m.mrecall}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(m.miou <= m.mprecision);
    CHECK(m.miou <= m.mrecall);
  }
}

TEST_CASE("forgetting score") {
  const std::vector<std::vector<double>> flat{{0.5, 0.5, 0.5}};
  CHECK(forgetting_score(flat) == 0.0);
  const std::vector<std::vector<double>> drop{{0.3, 0.8, 0.7, 0.6}};
  CHECK(forgetting_score(drop) == doctest::Approx(0.2).epsilon(1e-12));
  const std::vector<std::vector<double>> three{{0.1, 0.9, 0.5}, {0.4, 0.3}, {0.2, 0.6, 0.6, 0.3}};
  // drops: 0.4, 0.1, 0.3
  CHECK(forgetting_score(three) == doctest::Approx(0.8 / 3).epsilon(1e-12));
  const std::vector<std::vector<double>> none;
  try {
    forgetting_score(none);
    FAIL("expected not applicable");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotApplicable);
  }
}
