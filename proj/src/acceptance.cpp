#include "ffpdet/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "ffpdet/bench.hpp"
#include "ffpdet/checkpoint.hpp"
#include "ffpdet/config.hpp"
#include "ffpdet/detector.hpp"
#include "ffpdet/gradcheck.hpp"
#include "ffpdet/head.hpp"
#include "ffpdet/metrics.hpp"
#include "ffpdet/nms.hpp"
#include "ffpdet/ops.hpp"
#include "ffpdet/synth.hpp"
#include "ffpdet/train.hpp"

namespace fs = std::filesystem;

namespace ffpdet {
namespace {

// ---------------------------------------------------------------------------
// Pinned gate tolerances. Changing any of these loosens the release gate and
// needs a very good reason.
// ---------------------------------------------------------------------------
constexpr int64_t kBranchParams = 10496;     // bottleneck branch, exact
constexpr int64_t kDenseParams = 589824;     // dense 3x3 256->256, exact
constexpr double kParamRatioFloor = 56.0;    // dense/branch must exceed this
constexpr double kHandValueTol = 1e-9;       // closed-form loss values
constexpr double kRecombineTol = 1e-12;      // loss breakdown recombination
constexpr double kGradStep = 1e-5;           // FD half-step (double)
constexpr double kGradRelTol = 1e-4;         // FD relative error bound
constexpr double kGradAbsFloor = 1e-7;       // FD absolute slack
constexpr int64_t kToyInstances = 1000;      // assignment property trials
constexpr double kNoopFractionMin = 0.95;    // decode->NMS no-op fraction
constexpr double kCdrFloor = 0.90;           // end-to-end correct rate
constexpr double kErrorSumCeil = 0.10;       // end-to-end FDR+MDR
constexpr int64_t kIterationCeil = 5000;     // end-to-end training budget
constexpr double kTrainSecondsCeil = 1800;   // end-to-end wall-clock budget
constexpr int64_t kStressLarge = 10000;      // suppression stress sizes
constexpr int64_t kStressSmall = 100;
constexpr double kStressRatioFloor = 10.0;   // large/small time ratio
constexpr int64_t kMetricTrials = 300;       // metric identity sweep

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  require<IoError>(is.is_open(), "cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool trees_equal(const fs::path& a, const fs::path& b, std::string& why) {
  auto listing = [](const fs::path& root) {
    std::vector<std::string> rel;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file())
        rel.push_back(fs::relative(e.path(), root).generic_string());
    std::sort(rel.begin(), rel.end());
    return rel;
  };
  const auto la = listing(a), lb = listing(b);
  if (la != lb) {
    why = "file lists differ";
    return false;
  }
  for (const auto& r : la)
    if (read_file(a / r) != read_file(b / r)) {
      why = r + " differs";
      return false;
    }
  return true;
}

/// Shared state across checks: the end-to-end run's artifacts feed the
/// decode/no-op and timing checks.
struct Context {
  AcceptanceOptions opt;
  std::ostream* log = nullptr;
  fs::path work;

  bool e2e_ready = false;
  GlobalConfig e2e_cfg;
  std::unique_ptr<Detector<float>> trained;
  std::string checkpoint;
  Dataset test_data;
  EvalOutput eval_out;
};

// ---------------------------------------------------------------------------
// 1. Parameter arithmetic.
// ---------------------------------------------------------------------------
CriterionResult check_parameters() {
  CriterionResult r{1, "parameter arithmetic", false, "", 0};
  ParamStore<float> ps;
  Rng rng(1);
  FfpConfig fc;  // defaults: 256 pyramid channels, 16 bottleneck channels
  FbmBranch<float> branch(ps, "branch", fc, rng);
  const int64_t got = branch.parameter_count();
  const int64_t stored = count_parameters(ps);

  ConvSpec dense;
  dense.in_channels = 256;
  dense.out_channels = 256;
  dense.kernel = 3;
  dense.padding = 1;
  dense.bias = false;
  const int64_t ref = dense.parameter_count();
  const double ratio = double(ref) / double(got);

  r.passed = got == kBranchParams && stored == kBranchParams &&
             ref == kDenseParams && ratio > kParamRatioFloor;
  r.detail = strfmt("branch=%lld dense=%lld ratio=%.2f", (long long)got,
                    (long long)ref, ratio);
  return r;
}

// ---------------------------------------------------------------------------
// 2. Dilation-gap recurrence vs. brute-force composed kernel.
// ---------------------------------------------------------------------------

/// Independent oracle: compose the dilated kernels tap-by-tap (Minkowski sum
/// of the per-layer offset sets) and measure the worst gap between
/// consecutive active taps. A gap of 1 means every input pixel in the span
/// contributes; anything larger skips pixels.
int64_t composed_tap_gap(const std::vector<int64_t>& rates, int64_t kernel) {
  const int64_t half = (kernel - 1) / 2;
  std::set<int64_t> taps{0};
  for (int64_t rate : rates) {
    std::set<int64_t> next;
    for (int64_t t : taps)
      for (int64_t j = -half; j <= half; ++j) next.insert(t + j * rate);
    taps.swap(next);
  }
  int64_t gap = 1;
  int64_t prev = *taps.begin();
  for (int64_t t : taps) {
    gap = std::max(gap, t - prev);
    prev = t;
  }
  return gap;
}

CriterionResult check_dilation_rule() {
  CriterionResult r{2, "dilation gap rule", false, "", 0};
  const auto good = hdc_check({1, 2, 5}, 3);
  const auto bad = hdc_check({2, 2}, 3);
  const int64_t good_gap = composed_tap_gap({1, 2, 5}, 3);
  const int64_t bad_gap = composed_tap_gap({2, 2}, 3);

  const bool sequence_ok = good.max_gap == std::vector<int64_t>{1, 2, 5};
  const bool good_ok = !good.gridding && good_gap == 1;
  const bool bad_ok = bad.gridding && bad_gap > 1;
  const bool oracle_matches_flag = (good.max_gap[0] > 1) == (good_gap > 1) &&
                                   (bad.max_gap[0] > 1) == (bad_gap > 1);

  r.passed = sequence_ok && good_ok && bad_ok && oracle_matches_flag;
  r.detail = strfmt(
      "L(1,2,5)=[%lld,%lld,%lld] gridding=%s; L(2,2) gridding=%s; oracle "
      "gaps %lld/%lld",
      (long long)good.max_gap[0], (long long)good.max_gap[1],
      (long long)good.max_gap[2], good.gridding ? "yes" : "no",
      bad.gridding ? "yes" : "no", (long long)good_gap, (long long)bad_gap);
  return r;
}

// ---------------------------------------------------------------------------
// 3. Loss oracles.
// ---------------------------------------------------------------------------

/// Small random prediction grid used by the loss and assignment checks:
/// levels 3x4, 2x2 and 1x1 at strides 8/16/32 for a 100x100 image.
PredictionGrid<double> toy_grid(Rng& rng, bool requires_grad = false) {
  PredictionGrid<double> grid;
  grid.num_classes = 2;
  const int64_t heights[3] = {3, 2, 1};
  const int64_t widths[3] = {4, 2, 1};
  const int64_t strides[3] = {8, 16, 32};
  for (int lv = 0; lv < 3; ++lv) {
    const int64_t h = heights[lv], w = widths[lv];
    auto cls = Tensor<double>::zeros({1, grid.num_classes, h, w});
    for (int64_t i = 0; i < cls.numel(); ++i)
      cls.ptr()[i] = rng.uniform(-3.0, 3.0);
    auto reg = Tensor<double>::zeros({1, 4, h, w});
    for (int64_t i = 0; i < reg.numel(); ++i)
      reg.ptr()[i] = rng.uniform(2.0, 50.0);
    cls.set_requires_grad(requires_grad);
    reg.set_requires_grad(requires_grad);
    grid.levels[lv].cls = cls;
    grid.levels[lv].reg = reg;
    grid.levels[lv].stride = strides[lv];
  }
  return grid;
}

std::vector<GtBox> toy_gts(Rng& rng, int count) {
  std::vector<GtBox> gts;
  for (int i = 0; i < count; ++i) {
    GtBox g;
    g.cls = (int)rng.uniform_int(0, 1);
    const double x1 = rng.uniform(0.0, 60.0), y1 = rng.uniform(0.0, 60.0);
    g.box = BBox{x1, y1, x1 + rng.uniform(6.0, 35.0),
                 y1 + rng.uniform(6.0, 35.0)};
    gts.push_back(g);
  }
  return gts;
}

CriterionResult check_loss_oracles() {
  CriterionResult r{3, "loss oracles", false, "", 0};
  // Focal loss of a positive predicted at 0.5: alpha*(1-y)^beta*(-ln y).
  const double focal = focal_loss<double>(0.5, 1, 0.25, 2.0);
  const double focal_expect = 0.25 * 0.25 * std::log(2.0);
  const bool focal_ok = std::fabs(focal - focal_expect) <= kHandValueTol;

  // Touching unit squares: IoU=0 and the hull is exactly the union -> 1.
  // Separated by one unit: hull is 3x1, union 2 -> 1 + 1/3.
  const BBox base{0, 0, 1, 1};
  const double touching = giou_loss<double>(base, BBox{1, 0, 2, 1});
  const double separated = giou_loss<double>(base, BBox{2, 0, 3, 1});
  const bool giou_ok = std::fabs(touching - 1.0) <= kHandValueTol &&
                       std::fabs(separated - 4.0 / 3.0) <= kHandValueTol;

  // Recombining the reported components with their weights reproduces the
  // reported total.
  Rng rng(3);
  auto grid = toy_grid(rng);
  const std::vector<std::vector<GtBox>> gts{toy_gts(rng, 2)};
  const auto res = total_loss<double>(grid, gts, 100, 100);
  const auto& p = res.parts;
  const double recombined =
      p.weights.cls * p.cls + p.weights.l1 * p.l1 + p.weights.giou * p.giou;
  const bool recombine_ok =
      std::fabs(p.total - recombined) <=
          kRecombineTol * std::max(1.0, std::fabs(p.total)) &&
      std::fabs(res.loss.item() - p.total) <=
          kRecombineTol * std::max(1.0, std::fabs(p.total));

  r.passed = focal_ok && giou_ok && recombine_ok;
  r.detail = strfmt(
      "focal=%.12f (expect %.12f) giou=%g,%g recombine |d|=%.2e", focal,
      focal_expect, touching, separated, std::fabs(p.total - recombined));
  return r;
}

// ---------------------------------------------------------------------------
// 4. Gradient fidelity (double precision, central differences).
// ---------------------------------------------------------------------------

Tensor<double> random_tensor(Rng& rng, Shape shape, double lo, double hi,
                             bool grad = true) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.ptr()[i] = rng.uniform(lo, hi);
  t.set_requires_grad(grad);
  return t;
}

/// Keeps values away from activation kinks so finite differences stay on one
/// smooth piece.
void nudge_away(Tensor<double>& t, std::initializer_list<double> kinks,
                double margin = 0.05) {
  for (int64_t i = 0; i < t.numel(); ++i)
    for (double k : kinks)
      if (std::fabs(t.ptr()[i] - k) < margin)
        t.ptr()[i] = k + (t.ptr()[i] >= k ? margin : -margin);
}

/// Reduces an NCHW tensor to a scalar through fixed random channel gains so
/// per-channel gradient errors cannot cancel.
Tensor<double> weighted_sum(const Tensor<double>& y, Rng& rng) {
  auto gains = Tensor<double>::zeros({y.dim(1)});
  for (int64_t i = 0; i < gains.numel(); ++i)
    gains.ptr()[i] = rng.uniform(0.5, 1.5);
  return sum_all(mul_channel(y, gains));
}

struct OpCase {
  std::string name;
  GradCheckReport report;
};

std::vector<OpCase> op_gradient_cases() {
  std::vector<OpCase> cases;
  auto run = [&](const std::string& name,
                 const std::vector<Tensor<double>>& leaves,
                 const std::function<Tensor<double>()>& fn) {
    GradCheckOptions o;
    o.step = kGradStep;
    o.rel_tol = kGradRelTol;
    o.abs_floor = kGradAbsFloor;
    cases.push_back({name, grad_check(leaves, fn, o)});
  };

  Rng rng(17);
  {
    auto x = random_tensor(rng, {2, 3, 6, 5}, -1, 1);
    auto w = random_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5);
    auto b = random_tensor(rng, {4}, -0.2, 0.2);
    ConvSpec spec{3, 4, 3, 1, 1, 1, 1, true};
    Rng wr(101);
    run("conv2d", {x, w, b},
        [=, &wr]() mutable { return weighted_sum(conv2d(x, w, b, spec), wr); });
  }
  {
    auto x = random_tensor(rng, {1, 4, 7, 7}, -1, 1);
    auto w = random_tensor(rng, {6, 2, 3, 3}, -0.5, 0.5);
    auto b = random_tensor(rng, {6}, -0.2, 0.2);
    ConvSpec spec{4, 6, 3, 2, 2, 2, 2, true};
    Rng wr(102);
    run("conv2d s2 d2 g2", {x, w, b},
        [=, &wr]() mutable { return weighted_sum(conv2d(x, w, b, spec), wr); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 5, 5}, -1, 1);
    auto w = random_tensor(rng, {5, 3, 1, 1}, -0.5, 0.5);
    ConvSpec spec{3, 5, 1, 1, 0, 1, 1, false};
    Rng wr(103);
    run("conv2d 1x1 no-bias", {x, w}, [=, &wr]() mutable {
      return weighted_sum(conv2d(x, w, Tensor<double>(), spec), wr);
    });
  }
  {
    auto x = random_tensor(rng, {3, 5}, -1, 1);
    auto w = random_tensor(rng, {4, 5}, -0.5, 0.5);
    auto b = random_tensor(rng, {4}, -0.2, 0.2);
    run("dense", {x, w, b}, [=]() { return sum_all(dense(x, w, b)); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 4, 4}, -2, 2);
    nudge_away(x, {0.0});
    Rng wr(104);
    run("relu", {x},
        [=, &wr]() mutable { return weighted_sum(relu(x), wr); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 4, 4}, -5, 5);
    nudge_away(x, {-3.0, 3.0});
    Rng wr(105);
    run("hard_swish", {x},
        [=, &wr]() mutable { return weighted_sum(hard_swish(x), wr); });
  }
  {
    auto x = random_tensor(rng, {2, 2, 3, 3}, -3, 3);
    Rng wr(106);
    run("sigmoid", {x},
        [=, &wr]() mutable { return weighted_sum(sigmoid(x), wr); });
  }
  {
    auto x = random_tensor(rng, {1, 4, 3, 3}, -2, 2);
    Rng wr(107);
    run("exp_map", {x},
        [=, &wr]() mutable { return weighted_sum(exp_map(x), wr); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 3, 3}, -2, 2);
    Rng wr(108);
    run("scale", {x},
        [=, &wr]() mutable { return weighted_sum(scale(x, 1.7), wr); });
  }
  {
    auto a = random_tensor(rng, {2, 3, 3, 3}, -2, 2);
    auto b = random_tensor(rng, {2, 3, 3, 3}, -2, 2);
    Rng wr(109);
    run("add", {a, b},
        [=, &wr]() mutable { return weighted_sum(add(a, b), wr); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 4, 4}, -2, 2);
    auto g = random_tensor(rng, {3}, -1.5, 1.5);
    Rng wr(110);
    run("add_channel", {x, g},
        [=, &wr]() mutable { return weighted_sum(add_channel(x, g), wr); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 4, 4}, -2, 2);
    auto g = random_tensor(rng, {3}, 0.5, 1.5);
    Rng wr(111);
    run("mul_channel", {x, g},
        [=, &wr]() mutable { return weighted_sum(mul_channel(x, g), wr); });
  }
  {
    auto x = random_tensor(rng, {2, 4, 5, 5}, -2, 2);
    Rng wr(112);
    run("global_avg_pool", {x},
        [=, &wr]() mutable { return weighted_sum(global_avg_pool(x), wr); });
  }
  {
    auto x = random_tensor(rng, {1, 3, 3, 4}, -2, 2);
    Rng wr(113);
    run("upsample_nearest_2x", {x}, [=, &wr]() mutable {
      return weighted_sum(upsample_nearest_2x(x), wr);
    });
  }
  {
    auto x = random_tensor(rng, {2, 3, 2, 2}, -2, 2);
    run("reshape", {x},
        [=]() { return sum_all(reshape(x, {2, 12})); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 4, 4}, -2, 2);
    run("sum_all", {x}, [=]() { return sum_all(x); });
  }
  {
    auto x = random_tensor(rng, {3, 2, 4, 4}, -2, 2);
    auto gamma = random_tensor(rng, {2}, 0.5, 1.5);
    auto beta = random_tensor(rng, {2}, -0.5, 0.5);
    Rng wr(114);
    run("batch_norm_train", {x, gamma, beta}, [=, &wr]() mutable {
      auto rmean = Tensor<double>::zeros({2});
      auto rvar = Tensor<double>::filled({2}, 1.0);
      return weighted_sum(
          batch_norm_train(x, gamma, beta, rmean, rvar, 0.1, 1e-5), wr);
    });
  }
  {
    auto x = random_tensor(rng, {2, 2, 3, 3}, -2, 2);
    auto gamma = random_tensor(rng, {2}, 0.5, 1.5);
    auto beta = random_tensor(rng, {2}, -0.5, 0.5);
    auto rmean = random_tensor(rng, {2}, -0.5, 0.5, false);
    auto rvar = random_tensor(rng, {2}, 0.5, 2.0, false);
    Rng wr(115);
    run("batch_norm_infer", {x, gamma, beta}, [=, &wr]() mutable {
      return weighted_sum(batch_norm_infer(x, gamma, beta, rmean, rvar, 1e-5),
                          wr);
    });
  }
  {
    // The composite loss as one differentiable node over raw logit planes
    // and activated distance planes, matching held fixed.
    Rng gr(21);
    auto grid = toy_grid(gr, /*requires_grad=*/true);
    const std::vector<std::vector<GtBox>> gts{toy_gts(gr, 3)};
    const auto frozen = total_loss<double>(grid, gts, 100, 100).assignments;
    std::vector<Tensor<double>> leaves;
    for (int lv = 0; lv < 3; ++lv) {
      leaves.push_back(grid.levels[lv].cls);
      leaves.push_back(grid.levels[lv].reg);
    }
    run("total_loss node", leaves, [=]() {
      return total_loss<double>(grid, gts, 100, 100, {}, &frozen).loss;
    });
  }
  return cases;
}

GradCheckReport end_to_end_gradient_case() {
  // Full detector in double precision on a small two-target scene; the
  // matching is frozen at its base-point value so the probed function is
  // differentiable.
  DetectorConfig dc;
  Detector<double> det(dc);

  Rng rng(29);
  auto image = random_tensor(rng, {1, 3, 64, 64}, 0.0, 1.0, false);
  const std::vector<std::vector<GtBox>> gts{
      {GtBox{0, BBox{8, 8, 28, 30}}, GtBox{1, BBox{34, 20, 58, 52}}}};

  auto grid = det.forward(image, /*training=*/true);
  const auto frozen = total_loss<double>(grid, gts, 64, 64).assignments;

  auto loss_fn = [&]() {
    auto g = det.forward(image, /*training=*/true);
    return total_loss<double>(g, gts, 64, 64, {}, &frozen).loss;
  };

  // Probe a spread of trainable tensors end to end.
  std::vector<Tensor<double>> leaves;
  std::vector<const typename ParamStore<double>::Entry*> trainable;
  for (const auto& e : det.store().entries())
    if (e.trainable) trainable.push_back(&e);
  const size_t stride = std::max<size_t>(1, trainable.size() / 10);
  for (size_t i = 0; i < trainable.size(); i += stride)
    leaves.push_back(trainable[i]->tensor);
  leaves.push_back(trainable.back()->tensor);

  GradCheckOptions o;
  o.step = kGradStep;
  o.rel_tol = kGradRelTol;
  o.abs_floor = kGradAbsFloor;
  o.max_per_leaf = 2;
  o.seed = 5;
  return grad_check(leaves, loss_fn, o);
}

CriterionResult check_gradients(Context& ctx) {
  CriterionResult r{4, "gradient fidelity", true, "", 0};
  auto cases = op_gradient_cases();
  *ctx.log << "  .. op-level finite differences done\n" << std::flush;
  cases.push_back({"end-to-end", end_to_end_gradient_case()});

  double worst = 0;
  std::string worst_name = "-";
  int64_t checked = 0;
  for (const auto& c : cases) {
    checked += c.report.checked;
    if (c.report.max_rel > worst) {
      worst = c.report.max_rel;
      worst_name = c.name;
    }
    if (!c.report.ok) {
      r.passed = false;
      r.detail += strfmt("[%s: %s rel=%.2e] ", c.name.c_str(),
                         c.report.worst.c_str(), c.report.max_rel);
    }
  }
  r.detail += strfmt("%lld checks, worst rel %.2e (%s), tol %g",
                     (long long)checked, worst, worst_name.c_str(),
                     kGradRelTol);
  return r;
}

// ---------------------------------------------------------------------------
// 5. One-to-one assignment properties + decode/suppression no-op rate.
// ---------------------------------------------------------------------------
CriterionResult check_one_to_one(Context& ctx) {
  CriterionResult r{5, "one-to-one properties", false, "", 0};
  Rng rng(11);
  int64_t injective_fail = 0, exhaustive_fail = 0, singles = 0;
  for (int64_t t = 0; t < kToyInstances; ++t) {
    auto grid = toy_grid(rng);
    const int count = (int)rng.uniform_int(1, 6);
    const auto gts = toy_gts(rng, count);
    const auto assignment = assign_one_to_one(grid, 0, gts, 100, 100);

    // Complete and injective in both directions.
    bool ok = (int)assignment.size() == count;
    std::set<int> seen_gt;
    std::set<std::tuple<int, int64_t, int64_t>> seen_loc;
    for (const auto& p : assignment) {
      seen_gt.insert(p.gt);
      seen_loc.insert({p.level, p.row, p.col});
    }
    ok = ok && (int)seen_gt.size() == count &&
         *seen_gt.begin() == 0 && *seen_gt.rbegin() == count - 1 &&
         seen_loc.size() == assignment.size();
    if (!ok) ++injective_fail;

    // Single target: greedy equals the exhaustive minimum (first in
    // level/row/column order on ties).
    if (count == 1) {
      ++singles;
      double best = std::numeric_limits<double>::infinity();
      int bl = -1;
      int64_t bi = -1, bj = -1;
      for (int lv = 0; lv < 3; ++lv) {
        const auto& level = grid.levels[lv];
        const int64_t h = level.cls.dim(2), w = level.cls.dim(3);
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < w; ++j) {
            const double logit =
                level.cls.ptr()[(0 * grid.num_classes + gts[0].cls) * h * w +
                                i * w + j];
            const double p = 1.0 / (1.0 + std::exp(-logit));
            const double cost =
                matching_cost(p, decoded_box(level, 0, i, j), gts[0].box,
                              100, 100);
            if (cost < best) {
              best = cost;
              bl = lv;
              bi = i;
              bj = j;
            }
          }
      }
      const auto& got = assignment[0];
      if (got.level != bl || got.row != bi || got.col != bj)
        ++exhaustive_fail;
    }
  }

  const bool toy_ok = injective_fail == 0 && exhaustive_fail == 0;
  bool noop_ok = false;
  double noop = 0;
  if (ctx.e2e_ready) {
    noop = ctx.eval_out.nms_noop_fraction;
    noop_ok = noop >= kNoopFractionMin;
  }
  r.passed = toy_ok && noop_ok;
  r.detail = strfmt(
      "%lld instances (injective fails %lld, exhaustive fails %lld over %lld "
      "singles), decode+suppression no-op on %.1f%% of test images (need "
      ">=%.0f%%)",
      (long long)kToyInstances, (long long)injective_fail,
      (long long)exhaustive_fail, (long long)singles, 100.0 * noop,
      100.0 * kNoopFractionMin);
  if (!ctx.e2e_ready) r.detail += " [end-to-end artifacts unavailable]";
  return r;
}

// ---------------------------------------------------------------------------
// 6. Desk-scale end-to-end quality.
// ---------------------------------------------------------------------------
CriterionResult check_end_to_end(Context& ctx) {
  CriterionResult r{6, "end-to-end quality", false, "", 0};

  GlobalConfig cfg;
  cfg.scene = preset_scene("bogie-key");
  const fs::path root = ctx.work / "bogie";
  cfg.train.dataset = root.string();

  *ctx.log << "  .. generating 2000 train / 500 test images\n" << std::flush;
  generate_dataset(cfg.scene, 2000, "train", root.string());
  generate_dataset(cfg.scene, 500, "test", root.string());

  *ctx.log << strfmt("  .. training %lld iterations (batch %lld, lr %g)\n",
                     (long long)cfg.train.total_iterations,
                     (long long)cfg.train.batch_size, cfg.train.base_lr)
           << std::flush;
  const double t0 = now_s();
  const auto tr =
      train(cfg, (ctx.work / "e2e_run").string(), "",
            [&](const IterationStats& s) {
              if ((s.iteration + 1) % 100 == 0)
                *ctx.log << strfmt("  .. iter %lld loss %.4f\n",
                                   (long long)(s.iteration + 1), s.loss.total)
                         << std::flush;
            });
  const double train_seconds = now_s() - t0;

  ctx.e2e_cfg = cfg;
  ctx.checkpoint = tr.final_checkpoint;
  ctx.trained = std::make_unique<Detector<float>>(cfg.detector);
  load_checkpoint(ctx.trained->store(), tr.final_checkpoint);
  ctx.test_data = load_dataset(root.string(), "test");
  ctx.eval_out = evaluate(*ctx.trained, ctx.test_data, cfg, false);
  ctx.e2e_ready = true;

  const auto& m = ctx.eval_out.metrics;
  r.passed = m.cdr >= kCdrFloor && (m.fdr + m.mdr) <= kErrorSumCeil &&
             cfg.train.total_iterations <= kIterationCeil &&
             train_seconds <= kTrainSecondsCeil;
  r.detail = strfmt(
      "CDR=%.4f FDR=%.4f MDR=%.4f over %lld images; %lld iterations in "
      "%.0f s (budget %lld it / %.0f s)",
      m.cdr, m.fdr, m.mdr, (long long)ctx.eval_out.images,
      (long long)cfg.train.total_iterations, train_seconds,
      (long long)kIterationCeil, kTrainSecondsCeil);
  return r;
}

// ---------------------------------------------------------------------------
// 7. Suppression overhead scaling.
// ---------------------------------------------------------------------------
CriterionResult check_suppression_overhead(Context& ctx) {
  CriterionResult r{7, "suppression overhead", false, "", 0};

  const auto large = nms_stress(kStressLarge, 0.5, 42);
  // Median of repeated small runs for a stable denominator.
  std::vector<double> small_times;
  for (int i = 0; i < 5; ++i)
    small_times.push_back(nms_stress(kStressSmall, 0.5, 42).seconds);
  std::sort(small_times.begin(), small_times.end());
  const double small = small_times[small_times.size() / 2];
  const double ratio = large.seconds / std::max(small, 1e-12);
  const bool scaling_ok = ratio > kStressRatioFloor;

  bool path_ok = false;
  double infer = 0;
  if (ctx.e2e_ready) {
    const auto bench =
        bench_inference(*ctx.trained, ctx.test_data, ctx.e2e_cfg,
                        /*with_nms=*/true, 2, 1, 8, ctx.checkpoint);
    infer = bench.mean_infer_s;
    // Per-image total with the stress-sized suppression stage appended
    // strictly exceeds the suppression-free path.
    path_ok = infer + large.seconds > infer && large.seconds > 0;
  }

  r.passed = scaling_ok && path_ok;
  r.detail = strfmt(
      "suppression %.4fs @%lld boxes vs %.6fs @%lld (ratio %.0fx, need "
      ">%.0fx); infer %.4fs/img, +stress stage %.4fs",
      large.seconds, (long long)kStressLarge, small, (long long)kStressSmall,
      ratio, kStressRatioFloor, infer, large.seconds);
  if (!ctx.e2e_ready) r.detail += " [end-to-end artifacts unavailable]";
  return r;
}

// ---------------------------------------------------------------------------
// 8. Metric identities.
// ---------------------------------------------------------------------------
CriterionResult check_metric_identities() {
  CriterionResult r{8, "metric identities", false, "", 0};
  Rng rng(23);
  int64_t failures = 0;
  for (int64_t t = 0; t < kMetricTrials; ++t) {
    const int64_t m = rng.uniform_int(0, 150);
    int64_t n = rng.uniform_int(0, 150);
    if (m + n == 0) n = 1;
    const int64_t d = rng.uniform_int(0, m);
    const int64_t b = rng.uniform_int(0, n);

    std::vector<std::pair<bool, bool>> flags;
    for (int64_t i = 0; i < m; ++i) flags.push_back({i >= d, true});
    for (int64_t i = 0; i < n; ++i) flags.push_back({i < b, false});
    for (int64_t i = (int64_t)flags.size() - 1; i > 0; --i)
      std::swap(flags[i], flags[rng.uniform_int(0, i)]);

    const MetricReport rep = compute_metrics(flags);
    const double total = double(m + n);
    const bool ok = rep.m == m && rep.n == n && rep.b == b && rep.d == d &&
                    rep.a == (m - d) + b && rep.c == d + (n - b) &&
                    rep.a + rep.c == m + n &&
                    rep.fdr == double(b) / total &&
                    rep.mdr == double(d) / total &&
                    rep.cdr == 1.0 - rep.fdr - rep.mdr;
    if (!ok) ++failures;
  }
  r.passed = failures == 0;
  r.detail = strfmt("%lld randomized count splits, %lld failures, exact "
                    "(no tolerance)",
                    (long long)kMetricTrials, (long long)failures);
  return r;
}

// ---------------------------------------------------------------------------
// 9. Bit-level determinism through the command line.
// ---------------------------------------------------------------------------
CriterionResult check_determinism(Context& ctx) {
  CriterionResult r{9, "byte-identical reruns", false, "", 0};

  fs::path cli = ctx.opt.cli_path;
  if (cli.empty()) cli = fs::read_symlink("/proc/self/exe");
  if (!fs::exists(cli)) {
    r.detail = "command-line binary not found: " + cli.string();
    return r;
  }

  const fs::path wd = ctx.work / "determinism";
  fs::remove_all(wd);
  fs::create_directories(wd);
  const std::string base = "\"" + cli.string() + "\" --workdir \"" +
                           wd.string() + "\" ";
  auto run = [&](const std::string& args, const std::string& log) {
    const std::string cmd =
        base + args + " > \"" + (wd / log).string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };

  struct Phase {
    const char* name;
    std::string a, b;
    fs::path pa, pb;
  };
  const std::string synth_tail =
      " --train 12 --test 4 --preset bogie-key scene.seed=9";
  const std::string train_tail =
      " train.dataset=synthA train.iterations=10 train.batch=2"
      " train.checkpoint_every=100";
  std::vector<Phase> phases = {
      {"synth", "synth --out synthA" + synth_tail,
       "synth --out synthB" + synth_tail, wd / "synthA", wd / "synthB"},
      {"train", "train --out trainA" + train_tail,
       "train --out trainB" + train_tail, wd / "trainA", wd / "trainB"},
      {"eval",
       "eval --checkpoint trainA/model_final.ckpt --dataset synthA --split "
       "test --out evalA",
       "eval --checkpoint trainA/model_final.ckpt --dataset synthA --split "
       "test --out evalB",
       wd / "evalA", wd / "evalB"},
  };

  for (auto& ph : phases) {
    *ctx.log << strfmt("  .. rerunning `%s` twice\n", ph.name) << std::flush;
    const int rc_a = run(ph.a, std::string(ph.name) + "A.log");
    const int rc_b = run(ph.b, std::string(ph.name) + "B.log");
    if (rc_a != 0 || rc_b != 0) {
      r.detail = strfmt("%s runs exited %d/%d (see %s)", ph.name, rc_a, rc_b,
                        (wd / (std::string(ph.name) + "A.log")).c_str());
      return r;
    }
    std::string why;
    if (!trees_equal(ph.pa, ph.pb, why)) {
      r.detail = strfmt("%s outputs differ: %s", ph.name, why.c_str());
      return r;
    }
  }

  r.passed = true;
  r.detail = "synth, train and eval outputs byte-identical across reruns";
  return r;
}

}  // namespace

AcceptanceReport run_acceptance(const AcceptanceOptions& opt) {
  Context ctx;
  ctx.opt = opt;
  ctx.log = opt.log ? opt.log : &std::cout;
  ctx.work = opt.workdir;
  fs::create_directories(ctx.work);

  AcceptanceReport report;
  const double t0 = now_s();
  auto run = [&](int number, auto&& fn, const char* label) {
    *ctx.log << "-- " << label << "\n" << std::flush;
    const double s0 = now_s();
    CriterionResult res;
    try {
      res = fn();
    } catch (const std::exception& e) {
      res.passed = false;
      res.detail = std::string("exception: ") + e.what();
    }
    res.seconds = now_s() - s0;
    res.number = number;
    if (res.name.empty()) res.name = label;
    report.criteria.push_back(res);
  };

  // The end-to-end run executes before the checks that reuse its artifacts;
  // results are reported in criterion order below.
  run(1, [] { return check_parameters(); }, "parameter arithmetic");
  run(2, [] { return check_dilation_rule(); }, "dilation gap rule");
  run(3, [] { return check_loss_oracles(); }, "loss oracles");
  run(4, [&] { return check_gradients(ctx); }, "gradient fidelity");
  run(8, [] { return check_metric_identities(); }, "metric identities");
  run(6, [&] { return check_end_to_end(ctx); }, "end-to-end quality");
  run(5, [&] { return check_one_to_one(ctx); }, "one-to-one properties");
  run(7, [&] { return check_suppression_overhead(ctx); },
      "suppression overhead");
  run(9, [&] { return check_determinism(ctx); }, "byte-identical reruns");

  std::sort(report.criteria.begin(), report.criteria.end(),
            [](const CriterionResult& a, const CriterionResult& b) {
              return a.number < b.number;
            });

  report.all_passed = true;
  for (const auto& c : report.criteria) {
    report.all_passed = report.all_passed && c.passed;
    *ctx.log << strfmt("[%s] %d. %-24s %s (%.1fs)\n",
                       c.passed ? "PASS" : "FAIL", c.number, c.name.c_str(),
                       c.detail.c_str(), c.seconds)
             << std::flush;
  }
  report.seconds = now_s() - t0;
  *ctx.log << strfmt("acceptance: %zu/%zu passed in %.1fs\n",
                     (size_t)std::count_if(report.criteria.begin(),
                                           report.criteria.end(),
                                           [](const CriterionResult& c) {
                                             return c.passed;
                                           }),
                     report.criteria.size(), report.seconds)
           << std::flush;
  return report;
}

}  // namespace ffpdet
