// Detection head: tower structure, bias priming, box decoding, one-to-one
// assignment, the composite loss, and NMS-free decoding.

#include <cmath>
#include <limits>
#include <set>
#include <tuple>

#include "doctest.h"
#include "ffpdet/gradcheck.hpp"
#include "ffpdet/head.hpp"
#include "ffpdet/rng.hpp"

using namespace ffpdet;

namespace {

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Small three-level grid: 4x4 / 2x2 / 1x1 at strides 8/16/32 (21 locations,
// two classes) for a nominal 32x32 image.
PredictionGrid<double> toy_grid(Rng& rng, int64_t batch = 1,
                                bool grad = false) {
  PredictionGrid<double> g;
  g.num_classes = 2;
  const int64_t sizes[3] = {4, 2, 1};
  const int64_t strides[3] = {8, 16, 32};
  for (int lv = 0; lv < 3; ++lv) {
    auto cls = Tensor<double>::zeros({batch, 2, sizes[lv], sizes[lv]});
    auto reg = Tensor<double>::zeros({batch, 4, sizes[lv], sizes[lv]});
    for (int64_t i = 0; i < cls.numel(); ++i)
      cls.ptr()[i] = rng.uniform(-3, 3);
    for (int64_t i = 0; i < reg.numel(); ++i)
      reg.ptr()[i] = rng.uniform(2, 40);
    cls.set_requires_grad(grad);
    reg.set_requires_grad(grad);
    g.levels[lv] = {cls, reg, strides[lv]};
  }
  return g;
}

std::vector<GtBox> toy_gts(Rng& rng, int count) {
  std::vector<GtBox> gts;
  for (int i = 0; i < count; ++i) {
    const double x1 = rng.uniform(0, 50), y1 = rng.uniform(0, 50);
    gts.push_back({int(rng.uniform_int(0, 1)),
                   {x1, y1, x1 + rng.uniform(4, 30), y1 + rng.uniform(4, 30)}});
  }
  return gts;
}

}  // namespace

TEST_CASE("head config validation") {
  HeadConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.tower_kernels = {1, 3, 3};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = HeadConfig{};
  cfg.tower_kernels = {1, 3, 3, 4};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = HeadConfig{};
  cfg.prior_probability = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = HeadConfig{};
  cfg.strides = {8, 8, 32};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = HeadConfig{};
  cfg.num_classes = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("head structure: four convolutions per tower, primed class bias") {
  ParamStore<float> ps;
  Rng rng(3);
  HeadConfig cfg;
  cfg.in_channels = 16;
  cfg.tower_channels = 8;
  Head<float> head(ps, "head", cfg, rng);

  for (int i = 0; i < 4; ++i) {
    CHECK(ps.find("head.cls_tower" + std::to_string(i) + ".weight"));
    CHECK(ps.find("head.reg_tower" + std::to_string(i) + ".weight"));
  }
  CHECK(ps.find("head.cls_tower4.weight") == nullptr);

  // bias = -log((1-p)/p), p = 0.01: puts untrained scores near the prior.
  const auto* bias = ps.find("head.cls_out.bias");
  REQUIRE(bias);
  const double want = -std::log((1.0 - 0.01) / 0.01);
  for (float b : bias->tensor.data())
    CHECK(b == doctest::Approx(want).epsilon(1e-6));
  CHECK(want == doctest::Approx(-4.59512).epsilon(1e-5));
}

TEST_CASE("head forward emits per-level logits and positive distances") {
  ParamStore<float> ps;
  Rng rng(5);
  HeadConfig cfg;
  cfg.in_channels = 16;
  cfg.tower_channels = 8;
  Head<float> head(ps, "head", cfg, rng);

  std::array<Tensor<float>, 3> p = {Tensor<float>::zeros({2, 16, 8, 8}),
                                    Tensor<float>::zeros({2, 16, 4, 4}),
                                    Tensor<float>::zeros({2, 16, 2, 2})};
  for (auto& t : p)
    for (int64_t i = 0; i < t.numel(); ++i)
      t.ptr()[i] = static_cast<float>(rng.uniform(-1, 1));
  auto grid = head.forward(p);

  CHECK(grid.num_classes == 2);
  CHECK(grid.location_count() == 64 + 16 + 4);
  for (int lv = 0; lv < 3; ++lv) {
    CHECK(grid.levels[lv].cls.dim(1) == 2);
    CHECK(grid.levels[lv].reg.dim(1) == 4);
    CHECK(grid.levels[lv].cls.dim(2) == p[lv].dim(2));
    CHECK(grid.levels[lv].stride == cfg.strides[lv]);
    for (int64_t i = 0; i < grid.levels[lv].reg.numel(); ++i)
      CHECK(grid.levels[lv].reg.ptr()[i] > 0.f);  // exp * stride
  }

  // Untrained scores should sit near the prior probability.
  double mean = 0;
  for (int64_t i = 0; i < grid.levels[0].cls.numel(); ++i)
    mean += sig(grid.levels[0].cls.ptr()[i]);
  mean /= double(grid.levels[0].cls.numel());
  CHECK(mean > 0.001);
  CHECK(mean < 0.1);

  // Channel mismatch is rejected.
  std::array<Tensor<float>, 3> bad = {Tensor<float>::zeros({1, 8, 8, 8}),
                                      Tensor<float>::zeros({1, 8, 4, 4}),
                                      Tensor<float>::zeros({1, 8, 2, 2})};
  CHECK_THROWS_AS(head.forward(bad), ShapeError);
}

TEST_CASE("decoded_box offsets the cell center by the four distances") {
  LevelPrediction<double> lv;
  lv.stride = 8;
  lv.cls = Tensor<double>::zeros({1, 2, 3, 4});
  lv.reg = Tensor<double>::zeros({1, 4, 3, 4});
  const int64_t plane = 12;
  // location (i=1, j=2): center ((2+0.5)*8, (1+0.5)*8) = (20, 12)
  lv.reg.ptr()[0 * plane + 1 * 4 + 2] = 3;  // left
  lv.reg.ptr()[1 * plane + 1 * 4 + 2] = 4;  // top
  lv.reg.ptr()[2 * plane + 1 * 4 + 2] = 5;  // right
  lv.reg.ptr()[3 * plane + 1 * 4 + 2] = 6;  // bottom
  const BBox b = decoded_box(lv, 0, 1, 2);
  CHECK(b.x1 == doctest::Approx(17.0));
  CHECK(b.y1 == doctest::Approx(8.0));
  CHECK(b.x2 == doctest::Approx(25.0));
  CHECK(b.y2 == doctest::Approx(18.0));
}

TEST_CASE("one-to-one assignment is injective and complete") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto grid = toy_grid(rng);
    auto gts = toy_gts(rng, int(rng.uniform_int(0, 6)));
    auto asg = assign_one_to_one(grid, 0, gts, 64, 64);
    REQUIRE(asg.size() == gts.size());
    std::set<std::tuple<int, int64_t, int64_t>> locs;
    std::set<int> gtids;
    for (const auto& p : asg) {
      locs.insert({p.level, p.row, p.col});
      gtids.insert(p.gt);
      CHECK(p.level >= 0);
      CHECK(p.level < 3);
    }
    CHECK(locs.size() == asg.size());      // no location reused
    CHECK(gtids.size() == asg.size());     // every gt exactly once
    if (!asg.empty()) {
      CHECK(*gtids.begin() == 0);
      CHECK(*gtids.rbegin() == int(asg.size()) - 1);
    }
  }
}

TEST_CASE("assignment edge cases") {
  Rng rng(9);
  auto grid = toy_grid(rng);

  CHECK(assign_one_to_one(grid, 0, {}, 64, 64).empty());

  // More ground truths than grid locations cannot be assigned one-to-one.
  auto many = toy_gts(rng, 22);
  CHECK_THROWS_AS(assign_one_to_one(grid, 0, many, 64, 64), DataError);

  std::vector<GtBox> flat = {{0, {10, 10, 10, 20}}};
  CHECK_THROWS_AS(assign_one_to_one(grid, 0, flat, 64, 64), DataError);

  std::vector<GtBox> badcls = {{2, {10, 10, 20, 20}}};
  CHECK_THROWS_AS(assign_one_to_one(grid, 0, badcls, 64, 64), DataError);

  // Identical duplicated boxes still land on distinct locations.
  std::vector<GtBox> dup = {{0, {10, 10, 26, 26}}, {0, {10, 10, 26, 26}}};
  auto asg = assign_one_to_one(grid, 0, dup, 64, 64);
  REQUIRE(asg.size() == 2);
  CHECK(std::tuple(asg[0].level, asg[0].row, asg[0].col) !=
        std::tuple(asg[1].level, asg[1].row, asg[1].col));
}

TEST_CASE("single ground truth: greedy equals the exhaustive minimum") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto grid = toy_grid(rng);
    auto gts = toy_gts(rng, 1);
    auto asg = assign_one_to_one(grid, 0, gts, 64, 64);
    REQUIRE(asg.size() == 1);

    double best = std::numeric_limits<double>::infinity();
    AssignedPair pick{0, -1, 0, 0};
    for (int lv = 0; lv < 3; ++lv) {
      const auto& level = grid.levels[lv];
      const int64_t h = level.cls.dim(2), w = level.cls.dim(3);
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          const double logit =
              level.cls.ptr()[(gts[0].cls * h + i) * w + j];
          const double cost = matching_cost(
              sig(logit), decoded_box(level, 0, i, j), gts[0].box, 64, 64);
          if (cost < best) {
            best = cost;
            pick = {0, lv, i, j};
          }
        }
    }
    CHECK(asg[0] == pick);
  }
}

TEST_CASE("loss parts combine with the configured weights") {
  Rng rng(13);
  auto grid = toy_grid(rng);
  auto gts = toy_gts(rng, 2);
  LossWeights w;
  auto res = total_loss(grid, {gts}, 64, 64, w);
  CHECK(res.parts.total ==
        doctest::Approx(w.cls * res.parts.cls + w.l1 * res.parts.l1 +
                        w.giou * res.parts.giou)
            .epsilon(1e-15));
  CHECK(res.parts.cls > 0);
  CHECK(res.parts.l1 > 0);
  CHECK(res.parts.giou > 0);
  CHECK(res.loss.item() == doctest::Approx(res.parts.total).epsilon(1e-12));
  REQUIRE(res.assignments.size() == 1);
  CHECK(res.assignments[0].size() == 2);

  // Custom weights shift the blend.
  LossWeights w2{1.0, 0.0, 0.0, 0.25, 2.0};
  auto res2 = total_loss(grid, {gts}, 64, 64, w2);
  CHECK(res2.parts.total == doctest::Approx(res2.parts.cls).epsilon(1e-12));
}

TEST_CASE("loss components average over the batch") {
  Rng rng(15);
  auto a = toy_grid(rng), b = toy_grid(rng);
  auto gts_a = toy_gts(rng, 2), gts_b = toy_gts(rng, 1);

  // Stack a and b into a batch-2 grid.
  PredictionGrid<double> both;
  both.num_classes = 2;
  for (int lv = 0; lv < 3; ++lv) {
    const auto& la = a.levels[lv];
    auto cls = Tensor<double>::zeros(
        {2, 2, la.cls.dim(2), la.cls.dim(3)});
    auto reg = Tensor<double>::zeros(
        {2, 4, la.reg.dim(2), la.reg.dim(3)});
    std::copy(la.cls.data().begin(), la.cls.data().end(), cls.ptr());
    std::copy(b.levels[lv].cls.data().begin(), b.levels[lv].cls.data().end(),
              cls.ptr() + la.cls.numel());
    std::copy(la.reg.data().begin(), la.reg.data().end(), reg.ptr());
    std::copy(b.levels[lv].reg.data().begin(), b.levels[lv].reg.data().end(),
              reg.ptr() + la.reg.numel());
    both.levels[lv] = {cls, reg, la.stride};
  }

  auto ra = total_loss(a, {gts_a}, 64, 64);
  auto rb = total_loss(b, {gts_b}, 64, 64);
  auto rj = total_loss(both, {gts_a, gts_b}, 64, 64);
  CHECK(rj.parts.cls ==
        doctest::Approx((ra.parts.cls + rb.parts.cls) / 2).epsilon(1e-12));
  CHECK(rj.parts.l1 ==
        doctest::Approx((ra.parts.l1 + rb.parts.l1) / 2).epsilon(1e-12));
  CHECK(rj.parts.giou ==
        doctest::Approx((ra.parts.giou + rb.parts.giou) / 2).epsilon(1e-12));
}

TEST_CASE("an image with no ground truth contributes only background loss") {
  Rng rng(17);
  auto grid = toy_grid(rng);
  auto res = total_loss(grid, {{}}, 64, 64);
  CHECK(res.parts.l1 == 0.0);
  CHECK(res.parts.giou == 0.0);
  CHECK(res.parts.cls > 0.0);
  CHECK(res.assignments[0].empty());

  // Mismatched batch size is rejected.
  CHECK_THROWS_AS(total_loss(grid, {{}, {}}, 64, 64), ShapeError);
  CHECK_THROWS_AS(total_loss(grid, {{}}, 0, 64), ConfigError);
}

TEST_CASE("loss gradient matches finite differences on a frozen assignment") {
  Rng rng(19);
  auto grid = toy_grid(rng, 1, true);
  auto gts = toy_gts(rng, 2);
  const auto frozen =
      total_loss(grid, {gts}, 64, 64).assignments;

  std::vector<Tensor<double>> leaves;
  for (int lv = 0; lv < 3; ++lv) {
    leaves.push_back(grid.levels[lv].cls);
    leaves.push_back(grid.levels[lv].reg);
  }
  GradCheckOptions opt;
  opt.step = 1e-6;
  auto rep = grad_check(leaves, [&] {
    return total_loss(grid, {gts}, 64, 64, LossWeights{}, &frozen).loss;
  }, opt);
  CHECK_MESSAGE(rep.ok, rep.worst);
  CHECK(rep.checked > 0);
}

TEST_CASE("focal loss hand values and logit derivative") {
  const double ln2 = std::log(2.0);
  CHECK(focal_loss<double>(0.5, 1) ==
        doctest::Approx(0.25 * 0.25 * ln2).epsilon(1e-12));
  CHECK(focal_loss<double>(0.5, 0) ==
        doctest::Approx(0.75 * 0.25 * ln2).epsilon(1e-12));
  // beta = 0 reduces to alpha-weighted cross entropy.
  CHECK(focal_loss<double>(0.3, 1, 0.25, 0.0) ==
        doctest::Approx(-0.25 * std::log(0.3)).epsilon(1e-12));

  // d(focal)/d(logit) against central differences through the sigmoid.
  Rng rng(21);
  for (int t = 0; t < 50; ++t) {
    const double z = rng.uniform(-4, 4);
    const int label = rng.bernoulli(0.5) ? 1 : 0;
    const double h = 1e-6;
    const double up = focal_loss<double>(sig(z + h), label);
    const double dn = focal_loss<double>(sig(z - h), label);
    const double fd = (up - dn) / (2 * h);
    const double an = focal_loss_dlogit<double>(sig(z), label);
    CHECK(an == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("corner-normalized l1 hand value") {
  const BBox pred{0, 0, 10, 10}, gt{1, 2, 3, 4};
  CHECK(l1_loss<double>(pred, gt, 10, 20) ==
        doctest::Approx(0.1 + 0.1 + 0.7 + 0.3).epsilon(1e-12));
}

TEST_CASE("generalized IoU loss hand values") {
  const BBox unit{0, 0, 1, 1};
  CHECK(giou_loss<double>(unit, unit) == doctest::Approx(0.0));
  CHECK(giou_loss<double>(unit, BBox{1, 0, 2, 1}) ==
        doctest::Approx(1.0).epsilon(1e-12));  // touching: IoU 0, C == union
  CHECK(giou_loss<double>(unit, BBox{2, 0, 3, 1}) ==
        doctest::Approx(4.0 / 3.0).epsilon(1e-12));  // gap adds (C-U)/C = 1/3
  CHECK(giou_loss<double>(BBox{0, 0, 2, 2}, BBox{1, 1, 3, 3}) ==
        doctest::Approx(68.0 / 63.0).epsilon(1e-12));
}

TEST_CASE("generalized IoU gradient matches finite differences") {
  Rng rng(23);
  int done = 0;
  while (done < 30) {
    BBox p{rng.uniform(0, 30), rng.uniform(0, 30), 0, 0};
    p.x2 = p.x1 + rng.uniform(5, 25);
    p.y2 = p.y1 + rng.uniform(5, 25);
    BBox g{rng.uniform(0, 30), rng.uniform(0, 30), 0, 0};
    g.x2 = g.x1 + rng.uniform(5, 25);
    g.y2 = g.y1 + rng.uniform(5, 25);
    // Stay away from the subgradient kinks where corners coincide.
    const double margin = 1e-3;
    if (std::fabs(p.x1 - g.x1) < margin || std::fabs(p.x2 - g.x2) < margin ||
        std::fabs(p.y1 - g.y1) < margin || std::fabs(p.y2 - g.y2) < margin ||
        std::fabs(std::min(p.x2, g.x2) - std::max(p.x1, g.x1)) < margin ||
        std::fabs(std::min(p.y2, g.y2) - std::max(p.y1, g.y1)) < margin)
      continue;
    ++done;
    const auto an = giou_loss_grad(p, g);
    const double h = 1e-6;
    auto fd = [&](double BBox::* c) {
      BBox up = p, dn = p;
      up.*c += h;
      dn.*c -= h;
      return (giou_loss<double>(up, g) - giou_loss<double>(dn, g)) / (2 * h);
    };
    CHECK(an.dx1 == doctest::Approx(fd(&BBox::x1)).epsilon(1e-4));
    CHECK(an.dy1 == doctest::Approx(fd(&BBox::y1)).epsilon(1e-4));
    CHECK(an.dx2 == doctest::Approx(fd(&BBox::x2)).epsilon(1e-4));
    CHECK(an.dy2 == doctest::Approx(fd(&BBox::y2)).epsilon(1e-4));
  }
}

TEST_CASE("decoding sorts by score, breaks ties by scan order, truncates") {
  PredictionGrid<double> g;
  g.num_classes = 2;
  const int64_t sizes[3] = {2, 1, 1};
  const int64_t strides[3] = {8, 16, 32};
  for (int lv = 0; lv < 3; ++lv) {
    g.levels[lv] = {Tensor<double>::filled({1, 2, sizes[lv], sizes[lv]}, -9.0),
                    Tensor<double>::filled({1, 4, sizes[lv], sizes[lv]}, 4.0),
                    strides[lv]};
  }
  // Class 0 plane of level 0 (flat indices 0..3): cells 1 and 2 share a
  // logit; cell 3 scores highest; the level-1 cell (flat 8) sits between.
  g.levels[0].cls.ptr()[1] = 0.7;
  g.levels[0].cls.ptr()[2] = 0.7;
  g.levels[0].cls.ptr()[3] = 2.0;
  g.levels[1].cls.ptr()[0] = 1.0;  // flat index 8 (class 0 of level 1)

  auto dets = decode_nms_free(g, 0, 0.5, 50);
  REQUIRE(dets.size() == 4);
  CHECK(dets[0].score == doctest::Approx(sig(2.0)));
  CHECK(dets[1].score == doctest::Approx(sig(1.0)));
  CHECK(dets[2].score == doctest::Approx(sig(0.7)));
  CHECK(dets[3].score == doctest::Approx(sig(0.7)));
  // The tied pair keeps scan order: flat 1 = (row 0, col 1) before flat 2 =
  // (row 1, col 0) of the 2x2 level-0 plane.
  CHECK(dets[2].box.x1 == doctest::Approx((1 + 0.5) * 8 - 4));
  CHECK(dets[3].box.x1 == doctest::Approx((0 + 0.5) * 8 - 4));
  CHECK(dets[3].box.y1 == doctest::Approx((1 + 0.5) * 8 - 4));

  SUBCASE("threshold boundary is inclusive") {
    auto g2 = g;
    g2.levels[0].cls.ptr()[0] = 0.0;  // sigmoid(0) == 0.5 exactly
    auto kept = decode_nms_free(g2, 0, 0.5, 50);
    bool found = false;
    for (const auto& d : kept)
      if (d.score == 0.5) found = true;
    CHECK(found);
  }
  SUBCASE("truncation keeps the top scores") {
    auto top = decode_nms_free(g, 0, 0.5, 2);
    REQUIRE(top.size() == 2);
    CHECK(top[0].score == doctest::Approx(sig(2.0)));
    CHECK(top[1].score == doctest::Approx(sig(1.0)));
  }
  SUBCASE("negative cap is rejected") {
    CHECK_THROWS_AS(decode_nms_free(g, 0, 0.5, -1), ConfigError);
  }
}
