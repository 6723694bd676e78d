// Baseline suppression and image-level fault metrics.

#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "ffpdet/metrics.hpp"
#include "ffpdet/nms.hpp"
#include "ffpdet/rng.hpp"

using namespace ffpdet;

namespace {

std::vector<Detection> random_dets(Rng& rng, int n) {
  std::vector<Detection> dets;
  for (int i = 0; i < n; ++i) {
    const double x1 = rng.uniform(0, 80), y1 = rng.uniform(0, 80);
    dets.push_back({{x1, y1, x1 + rng.uniform(4, 30), y1 + rng.uniform(4, 30)},
                    int(rng.uniform_int(0, 1)),
                    rng.uniform(0.01, 0.99)});
  }
  return dets;
}

// Textbook O(n^2) reference: independent of the production implementation.
std::vector<Detection> nms_reference(std::vector<Detection> dets,
                                     double thr) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (size_t idx : order) {
    bool ok = true;
    for (const auto& k : kept)
      if (k.cls == dets[idx].cls && iou(k.box, dets[idx].box) >= thr)
        ok = false;
    if (ok) kept.push_back(dets[idx]);
  }
  return kept;
}

bool same(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].cls != b[i].cls || a[i].score != b[i].score ||
        a[i].box.x1 != b[i].box.x1 || a[i].box.y1 != b[i].box.y1 ||
        a[i].box.x2 != b[i].box.x2 || a[i].box.y2 != b[i].box.y2)
      return false;
  return true;
}

}  // namespace

TEST_CASE("iou hand values") {
  const BBox a{0, 0, 2, 2};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, BBox{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
  CHECK(iou(a, BBox{2, 0, 4, 2}) == doctest::Approx(0.0));  // touching
  CHECK(iou(a, BBox{5, 5, 6, 6}) == doctest::Approx(0.0));
  CHECK(iou(a, BBox{0, 0, 1, 2}) == doctest::Approx(0.5));
}

TEST_CASE("suppression threshold must lie strictly inside (0,1)") {
  CHECK_THROWS_AS(nms({}, 0.0), ConfigError);
  CHECK_THROWS_AS(nms({}, 1.0), ConfigError);
  CHECK_THROWS_AS(nms({}, -0.3), ConfigError);
  CHECK_NOTHROW(nms({}, 0.5));
}

TEST_CASE("suppression matches an independent reference on random inputs") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto dets = random_dets(rng, 200);
    for (double thr : {0.3, 0.5, 0.7}) {
      CAPTURE(seed);
      CAPTURE(thr);
      CHECK(same(nms(dets, thr), nms_reference(dets, thr)));
    }
  }
}

TEST_CASE("suppression only compares boxes of the same class") {
  // Two identical boxes in different classes both survive.
  std::vector<Detection> dets = {{{0, 0, 10, 10}, 0, 0.9},
                                 {{0, 0, 10, 10}, 1, 0.8}};
  auto kept = nms(dets, 0.5);
  CHECK(kept.size() == 2);

  // Same class: the lower-scored duplicate dies.
  dets[1].cls = 0;
  kept = nms(dets, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);
}

TEST_CASE("suppression output is sorted and ties keep input order") {
  std::vector<Detection> dets = {{{40, 40, 50, 50}, 0, 0.5},
                                 {{0, 0, 10, 10}, 0, 0.9},
                                 {{60, 60, 70, 70}, 0, 0.5}};
  auto kept = nms(dets, 0.5);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].score == 0.9);
  // The two 0.5-scored boxes keep their relative input order.
  CHECK(kept[1].box.x1 == 40);
  CHECK(kept[2].box.x1 == 60);
}

TEST_CASE("suppression is idempotent") {
  for (uint64_t seed = 50; seed < 60; ++seed) {
    Rng rng(seed);
    auto once = nms(random_dets(rng, 120), 0.5);
    auto twice = nms(once, 0.5);
    CHECK(same(once, twice));
  }
}

TEST_CASE("boundary IoU exactly at the threshold suppresses") {
  // IoU of these two is exactly 0.5.
  std::vector<Detection> dets = {{{0, 0, 2, 1}, 0, 0.9},
                                 {{0, 0, 1, 1}, 0, 0.8}};
  REQUIRE(iou(dets[0].box, dets[1].box) == doctest::Approx(0.5));
  CHECK(nms(dets, 0.5).size() == 1);
  CHECK(nms(dets, 0.51).size() == 2);
}

TEST_CASE("image classification threshold is inclusive") {
  std::vector<Detection> dets = {{{0, 0, 5, 5}, 0, 0.4}};
  CHECK(classify_image(dets, 0.4));
  CHECK_FALSE(classify_image(dets, 0.41));
  CHECK_FALSE(classify_image({}, 0.0));
}

TEST_CASE("metric identities hold exactly") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<bool, bool>> flags;
    const int m = int(rng.uniform_int(0, 60));
    const int n = int(rng.uniform_int(m == 0 ? 1 : 0, 60));
    const int d = int(rng.uniform_int(0, m));
    const int b = int(rng.uniform_int(0, n));
    for (int i = 0; i < m; ++i) flags.push_back({i >= d, true});
    for (int i = 0; i < n; ++i) flags.push_back({i < b, false});
    for (int i = int(flags.size()) - 1; i > 0; --i)
      std::swap(flags[i], flags[rng.uniform_int(0, i)]);

    const auto r = compute_metrics(flags);
    CHECK(r.m == m);
    CHECK(r.n == n);
    CHECK(r.b == b);
    CHECK(r.d == d);
    CHECK(r.a == (m - d) + b);
    CHECK(r.c == d + (n - b));
    CHECK(r.a + r.c == m + n);
    CHECK(r.fdr == double(b) / double(m + n));
    CHECK(r.mdr == double(d) / double(m + n));
    CHECK(r.cdr == 1.0 - r.fdr - r.mdr);
  }
}

TEST_CASE("metrics from per-image predictions align by id") {
  std::vector<ImagePrediction> preds = {
      {"a", {{{0, 0, 5, 5}, 0, 0.9}}},                     // true positive
      {"b", {}},                                           // true negative
      {"c", {{{0, 0, 5, 5}, 1, 0.2}}},                     // miss (below thr)
      {"d", {{{0, 0, 5, 5}, 1, 0.7}, {{1, 1, 6, 6}, 0, 0.8}}},  // false alarm
  };
  std::vector<ImageTruth> truth = {
      {"a", true}, {"b", false}, {"c", true}, {"d", false}};
  const auto r = compute_metrics(preds, truth, 0.4);
  CHECK(r.m == 2);
  CHECK(r.n == 2);
  CHECK(r.b == 1);
  CHECK(r.d == 1);
  CHECK(r.cdr == doctest::Approx(0.5));
  // Detections above the threshold are tallied per class.
  CHECK(r.class_detections.at(0) == 2);
  CHECK(r.class_detections.at(1) == 1);

  SUBCASE("id mismatch is a data error naming the stray id") {
    auto bad = truth;
    bad[3].id = "zzz";
    try {
      compute_metrics(preds, bad, 0.4);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("zzz") != std::string::npos);
    }
  }
  SUBCASE("duplicate prediction ids are rejected") {
    auto dup = preds;
    dup[1].id = "a";
    CHECK_THROWS_AS(compute_metrics(dup, truth, 0.4), DataError);
  }
}

TEST_CASE("empty flag list yields zero error rates") {
  const auto r = compute_metrics(std::vector<std::pair<bool, bool>>{});
  CHECK(r.cdr == 1.0);
  CHECK(r.fdr == 0.0);
  CHECK(r.mdr == 0.0);
}
