#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "ffpdet/boxes.hpp"
#include "ffpdet/nn.hpp"

namespace ffpdet {

struct HeadConfig {
  int64_t num_classes = 2;
  int64_t in_channels = 256;
  int64_t tower_channels = 32;
  /// Kernel size of each of the four tower convolutions (per branch).
  std::vector<int64_t> tower_kernels = {1, 3, 3, 3};
  /// Expected foreground rate; the classification bias starts at
  /// -log((1-p)/p) so untrained scores sit near p.
  double prior_probability = 0.01;
  std::array<int64_t, 3> strides = {8, 16, 32};

  bool operator==(const HeadConfig&) const = default;

  void validate() const {
    require<ConfigError>(num_classes > 0, "head needs at least one class");
    require<ConfigError>(in_channels > 0 && tower_channels > 0,
                         "head channel widths must be positive");
    require<ConfigError>(tower_kernels.size() == 4,
                         strfmt("head tower takes exactly 4 convolutions, got %zu",
                                tower_kernels.size()));
    for (int64_t k : tower_kernels)
      require<ConfigError>(k > 0 && k % 2 == 1,
                           strfmt("tower kernels must be odd and positive, got %lld",
                                  (long long)k));
    require<ConfigError>(
        prior_probability > 0.0 && prior_probability < 1.0,
        "prior probability must lie strictly between 0 and 1");
    for (int i = 0; i < 3; ++i) {
      require<ConfigError>(strides[i] > 0, "head strides must be positive");
      if (i) require<ConfigError>(strides[i] > strides[i - 1],
                                  "head strides must be increasing");
    }
  }
};

/// Per-level head output: class logits [N,num_classes,H,W] and positive
/// distances (left, top, right, bottom) [N,4,H,W] in image pixels, already
/// activated by exp and scaled by the level stride.
template <typename T>
struct LevelPrediction {
  Tensor<T> cls;
  Tensor<T> reg;
  int64_t stride = 0;
};

template <typename T>
struct PredictionGrid {
  std::array<LevelPrediction<T>, 3> levels;
  int64_t num_classes = 0;

  int64_t location_count() const {
    int64_t total = 0;
    for (const auto& lv : levels) total += lv.cls.dim(2) * lv.cls.dim(3);
    return total;
  }
};

/// Grid location (row i, col j) at stride s has center ((j+0.5)s, (i+0.5)s);
/// the box is the center offset by the four predicted distances.
template <typename T>
inline BBox decoded_box(const LevelPrediction<T>& lv, int64_t n, int64_t i,
                        int64_t j) {
  const int64_t h = lv.reg.dim(2), w = lv.reg.dim(3);
  const int64_t plane = h * w;
  const T* d = lv.reg.ptr() + ((n * 4) * h + i) * w + j;
  const double cx = (double(j) + 0.5) * double(lv.stride);
  const double cy = (double(i) + 0.5) * double(lv.stride);
  return BBox{cx - double(d[0]), cy - double(d[plane]),
              cx + double(d[2 * plane]), cy + double(d[3 * plane])};
}

/// Shared-weight detection head: two towers of four convolutions each
/// (classification and regression), then 1x1 output convolutions. The same
/// weights run on every pyramid level; only the stride scaling differs.
template <typename T>
class Head {
 public:
  Head() = default;

  Head(ParamStore<T>& ps, const std::string& name, const HeadConfig& cfg,
       Rng& rng)
      : cfg_(cfg) {
    cfg_.validate();
    int64_t in = cfg_.in_channels;
    for (size_t i = 0; i < cfg_.tower_kernels.size(); ++i) {
      const int64_t k = cfg_.tower_kernels[i];
      const ConvSpec spec{in, cfg_.tower_channels, k, 1, (k - 1) / 2, 1, 1,
                          true};
      cls_tower_.emplace_back(ps, name + ".cls_tower" + std::to_string(i),
                              spec, rng);
      reg_tower_.emplace_back(ps, name + ".reg_tower" + std::to_string(i),
                              spec, rng);
      in = cfg_.tower_channels;
    }
    const double p = cfg_.prior_probability;
    const T cls_bias = T(-std::log((1.0 - p) / p));
    cls_out_ = Conv2dLayer<T>(
        ps, name + ".cls_out",
        ConvSpec{in, cfg_.num_classes, 1, 1, 0, 1, 1, true}, rng, cls_bias);
    reg_out_ = Conv2dLayer<T>(ps, name + ".reg_out",
                              ConvSpec{in, 4, 1, 1, 0, 1, 1, true}, rng);
  }

  PredictionGrid<T> forward(const std::array<Tensor<T>, 3>& p) const {
    PredictionGrid<T> grid;
    grid.num_classes = cfg_.num_classes;
    for (int lv = 0; lv < 3; ++lv) {
      require<ShapeError>(
          p[lv].dim(1) == cfg_.in_channels,
          strfmt("head expects %lld input channels on level %d, got %lld",
                 (long long)cfg_.in_channels, lv + 3, (long long)p[lv].dim(1)));
      Tensor<T> c = p[lv], r = p[lv];
      for (const auto& layer : cls_tower_) c = relu(layer.forward(c));
      for (const auto& layer : reg_tower_) r = relu(layer.forward(r));
      grid.levels[lv].cls = cls_out_.forward(c);
      grid.levels[lv].reg =
          scale(exp_map(reg_out_.forward(r)), T(cfg_.strides[lv]));
      grid.levels[lv].stride = cfg_.strides[lv];
    }
    return grid;
  }

  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  std::vector<Conv2dLayer<T>> cls_tower_, reg_tower_;
  Conv2dLayer<T> cls_out_, reg_out_;
};

struct GtBox {
  int cls = 0;
  BBox box;
};

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double focal_alpha = 0.25;
  double focal_beta = 2.0;

  bool operator==(const LossWeights&) const = default;
};

/// Cost of putting a ground truth onto one grid location: the same three
/// loss terms as training, with the location's probability for the ground
/// truth's class treated as a positive.
inline double matching_cost(double p_gtclass, const BBox& pred,
                            const BBox& gt, double img_w, double img_h,
                            const LossWeights& w = {}) {
  return w.cls * focal_loss<double>(p_gtclass, 1, w.focal_alpha,
                                    w.focal_beta) +
         w.l1 * l1_loss<double>(pred, gt, img_w, img_h) +
         w.giou * giou_loss<double>(pred, gt);
}

struct AssignedPair {
  int gt = 0;
  int level = 0;
  int64_t row = 0, col = 0;

  bool operator==(const AssignedPair&) const = default;
};

/// One-to-one label assignment: each ground truth owns exactly one grid
/// location, every other location is background.
using Assignment = std::vector<AssignedPair>;

/// Greedy minimum-cost assignment. Ground truths are processed in ascending
/// area order (stable on ties); each takes its cheapest still-unclaimed
/// location, ties broken by (level, row, col) lexicographic order. Output is
/// sorted by ground-truth index.
template <typename T>
Assignment assign_one_to_one(const PredictionGrid<T>& grid, int64_t n,
                             const std::vector<GtBox>& gts, double img_w,
                             double img_h, const LossWeights& w = {}) {
  const int64_t capacity = grid.location_count();
  require<DataError>(
      (int64_t)gts.size() <= capacity,
      strfmt("one-to-one assignment needs %zu locations but the grid has only %lld",
             gts.size(), (long long)capacity));
  for (const auto& g : gts) {
    require<DataError>(g.box.valid(), "ground-truth box has no area");
    require<DataError>(g.cls >= 0 && g.cls < grid.num_classes,
                       strfmt("ground-truth class %d outside [0, %lld)", g.cls,
                              (long long)grid.num_classes));
  }

  std::vector<int> order(gts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return gts[a].box.area() < gts[b].box.area();
  });

  std::array<std::vector<char>, 3> claimed;
  for (int lv = 0; lv < 3; ++lv)
    claimed[lv].assign(grid.levels[lv].cls.dim(2) * grid.levels[lv].cls.dim(3),
                       0);

  Assignment out;
  out.reserve(gts.size());
  for (int gi : order) {
    const GtBox& gt = gts[gi];
    double best = std::numeric_limits<double>::infinity();
    AssignedPair pick{gi, -1, 0, 0};
    for (int lv = 0; lv < 3; ++lv) {
      const auto& level = grid.levels[lv];
      const int64_t h = level.cls.dim(2), wdt = level.cls.dim(3);
      const T* logits =
          level.cls.ptr() + ((n * grid.num_classes + gt.cls) * h) * wdt;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < wdt; ++j) {
          if (claimed[lv][i * wdt + j]) continue;
          const double p = detail::sigmoid_scalar(double(logits[i * wdt + j]));
          const double cost =
              matching_cost(p, decoded_box(level, n, i, j), gt.box, img_w,
                            img_h, w);
          if (cost < best) {
            best = cost;
            pick = {gi, lv, i, j};
          }
        }
    }
    claimed[pick.level][pick.row * grid.levels[pick.level].cls.dim(3) +
                        pick.col] = 1;
    out.push_back(pick);
  }
  std::sort(out.begin(), out.end(),
            [](const AssignedPair& a, const AssignedPair& b) { return a.gt < b.gt; });
  return out;
}

struct LossBreakdown {
  double total = 0;
  double cls = 0;
  double l1 = 0;
  double giou = 0;
  LossWeights weights;
};

template <typename T>
struct LossResult {
  Tensor<T> loss;  ///< differentiable scalar
  LossBreakdown parts;
  std::vector<Assignment> assignments;  ///< one per batch image
};

namespace detail {

/// Per-location labels for one image: -1 background, otherwise the index of
/// the ground truth assigned there.
inline std::array<std::vector<int>, 3> label_maps(
    const Assignment& assignment, const std::array<int64_t, 3>& plane_sizes,
    const std::array<int64_t, 3>& widths) {
  std::array<std::vector<int>, 3> maps;
  for (int lv = 0; lv < 3; ++lv) maps[lv].assign(plane_sizes[lv], -1);
  for (const auto& pair : assignment)
    maps[pair.level][pair.row * widths[pair.level] + pair.col] = pair.gt;
  return maps;
}

}  // namespace detail

/// Composite detection loss over a batch.
///
/// Per image: the classification term sums the focal loss over every
/// (location, class) cell — the assigned location of each ground truth is a
/// positive for its class, everything else is background — normalized by
/// max(1, #ground truths). The box terms average the normalized-corner L1
/// and the generalized-IoU losses over the assigned pairs. Components are
/// averaged over the batch and combined as
///   total = w.cls * cls + w.l1 * l1 + w.giou * giou.
/// The assignment is recomputed from the current predictions and held
/// constant through the backward pass. Passing `fixed_assignments` (one per
/// batch image) skips the matching step and reuses a previously computed
/// assignment; finite-difference checks rely on this to probe a fixed,
/// differentiable slice of the loss.
template <typename T>
LossResult<T> total_loss(
    const PredictionGrid<T>& grid, const std::vector<std::vector<GtBox>>& gts,
    double img_w, double img_h, const LossWeights& w = {},
    const std::vector<Assignment>* fixed_assignments = nullptr) {
  const int64_t batch = grid.levels[0].cls.dim(0);
  require<ShapeError>(
      (int64_t)gts.size() == batch,
      strfmt("loss got %zu ground-truth lists for a batch of %lld", gts.size(),
             (long long)batch));
  require<ConfigError>(img_w > 0 && img_h > 0,
                       "loss needs positive image dimensions");

  const int64_t num_classes = grid.num_classes;
  std::array<int64_t, 3> hs, ws, planes;
  for (int lv = 0; lv < 3; ++lv) {
    hs[lv] = grid.levels[lv].cls.dim(2);
    ws[lv] = grid.levels[lv].cls.dim(3);
    planes[lv] = hs[lv] * ws[lv];
  }

  LossResult<T> result;
  result.parts.weights = w;
  if (fixed_assignments) {
    require<ShapeError>((int64_t)fixed_assignments->size() == batch,
                        "fixed assignment list does not match the batch");
    result.assignments = *fixed_assignments;
  } else {
    result.assignments.reserve(batch);
    for (int64_t n = 0; n < batch; ++n)
      result.assignments.push_back(
          assign_one_to_one(grid, n, gts[n], img_w, img_h, w));
  }

  // Forward value in double precision.
  double cls_sum = 0, l1_sum = 0, giou_sum = 0;
  for (int64_t n = 0; n < batch; ++n) {
    const auto maps = detail::label_maps(result.assignments[n], planes, ws);
    const double norm = std::max<double>(1.0, double(gts[n].size()));
    double cls_img = 0;
    for (int lv = 0; lv < 3; ++lv) {
      const auto& level = grid.levels[lv];
      const T* base = level.cls.ptr() + n * num_classes * planes[lv];
      for (int64_t c = 0; c < num_classes; ++c) {
        const T* plane = base + c * planes[lv];
        for (int64_t s = 0; s < planes[lv]; ++s) {
          const int gi = maps[lv][s];
          const int label = (gi >= 0 && gts[n][gi].cls == c) ? 1 : 0;
          const double y = detail::sigmoid_scalar(double(plane[s]));
          cls_img += focal_loss<double>(y, label, w.focal_alpha, w.focal_beta);
        }
      }
    }
    cls_sum += cls_img / norm;

    if (!result.assignments[n].empty()) {
      const double pair_norm = double(result.assignments[n].size());
      double l1_img = 0, giou_img = 0;
      for (const auto& pair : result.assignments[n]) {
        const BBox pred =
            decoded_box(grid.levels[pair.level], n, pair.row, pair.col);
        const BBox& gt = gts[n][pair.gt].box;
        l1_img += l1_loss<double>(pred, gt, img_w, img_h);
        giou_img += giou_loss<double>(pred, gt);
      }
      l1_sum += l1_img / pair_norm;
      giou_sum += giou_img / pair_norm;
    }
  }
  result.parts.cls = cls_sum / double(batch);
  result.parts.l1 = l1_sum / double(batch);
  result.parts.giou = giou_sum / double(batch);
  result.parts.total = w.cls * result.parts.cls + w.l1 * result.parts.l1 +
                       w.giou * result.parts.giou;

  // Graph node: parents are the three logit tensors then the three distance
  // tensors; backward writes analytic gradients straight into them.
  std::vector<Tensor<T>> parents = {grid.levels[0].cls, grid.levels[1].cls,
                                    grid.levels[2].cls, grid.levels[0].reg,
                                    grid.levels[1].reg, grid.levels[2].reg};
  const auto assignments = result.assignments;
  const auto gts_copy = gts;
  const std::array<int64_t, 3> strides = {grid.levels[0].stride,
                                          grid.levels[1].stride,
                                          grid.levels[2].stride};
  auto backward = [=](detail::TensorNode<T>& node) {
    const T g0 = node.grad[0];
    for (int64_t n = 0; n < batch; ++n) {
      const auto maps = detail::label_maps(assignments[n], planes, ws);
      const double norm = std::max<double>(1.0, double(gts_copy[n].size()));
      const double cls_scale = double(g0) * w.cls / (norm * double(batch));

      for (int lv = 0; lv < 3; ++lv) {
        auto& cls_node = *node.parents[lv];
        if (!cls_node.requires_grad) continue;
        cls_node.ensure_grad();
        const T* base = cls_node.data.data() + n * num_classes * planes[lv];
        T* gbase = cls_node.grad.data() + n * num_classes * planes[lv];
        for (int64_t c = 0; c < num_classes; ++c) {
          const T* plane = base + c * planes[lv];
          T* gplane = gbase + c * planes[lv];
          for (int64_t s = 0; s < planes[lv]; ++s) {
            const int gi = maps[lv][s];
            const int label = (gi >= 0 && gts_copy[n][gi].cls == c) ? 1 : 0;
            const double y = detail::sigmoid_scalar(double(plane[s]));
            gplane[s] += T(cls_scale * focal_loss_dlogit<double>(
                                           y, label, w.focal_alpha,
                                           w.focal_beta));
          }
        }
      }

      if (assignments[n].empty()) continue;
      const double pair_scale =
          double(g0) / (double(assignments[n].size()) * double(batch));
      for (const auto& pair : assignments[n]) {
        auto& reg_node = *node.parents[3 + pair.level];
        if (!reg_node.requires_grad) continue;
        reg_node.ensure_grad();
        const int lv = pair.level;
        const int64_t plane = planes[lv];
        const T* d = reg_node.data.data() +
                     ((n * 4) * hs[lv] + pair.row) * ws[lv] + pair.col;
        const double cx = (double(pair.col) + 0.5) * double(strides[lv]);
        const double cy = (double(pair.row) + 0.5) * double(strides[lv]);
        const BBox pred{cx - double(d[0]), cy - double(d[plane]),
                        cx + double(d[2 * plane]), cy + double(d[3 * plane])};
        const BBox& gt = gts_copy[n][pair.gt].box;

        // Corner gradients of the weighted, pair-averaged box terms.
        const double sx = 1.0 / img_w, sy = 1.0 / img_h;
        const GiouGrad gg = giou_loss_grad(pred, gt);
        const double dx1 =
            pair_scale * (w.l1 * sx * (pred.x1 > gt.x1 ? 1.0 : pred.x1 < gt.x1 ? -1.0 : 0.0) +
                          w.giou * gg.dx1);
        const double dy1 =
            pair_scale * (w.l1 * sy * (pred.y1 > gt.y1 ? 1.0 : pred.y1 < gt.y1 ? -1.0 : 0.0) +
                          w.giou * gg.dy1);
        const double dx2 =
            pair_scale * (w.l1 * sx * (pred.x2 > gt.x2 ? 1.0 : pred.x2 < gt.x2 ? -1.0 : 0.0) +
                          w.giou * gg.dx2);
        const double dy2 =
            pair_scale * (w.l1 * sy * (pred.y2 > gt.y2 ? 1.0 : pred.y2 < gt.y2 ? -1.0 : 0.0) +
                          w.giou * gg.dy2);

        // Chain to the distances: x1 = cx - l, y1 = cy - t, x2 = cx + r,
        // y2 = cy + b.
        T* gd = reg_node.grad.data() +
                ((n * 4) * hs[lv] + pair.row) * ws[lv] + pair.col;
        gd[0] += T(-dx1);
        gd[plane] += T(-dy1);
        gd[2 * plane] += T(dx2);
        gd[3 * plane] += T(dy2);
      }
    }
  };
  result.loss = Tensor<T>::make_op({1}, std::move(parents), std::move(backward));
  result.loss.ptr()[0] = T(result.parts.total);
  return result;
}

/// Decode without suppression: sigmoid every (location, class) score across
/// all levels, keep those at or above the threshold, sort by descending
/// score (ties by flattened scan index ascending), truncate.
template <typename T>
std::vector<Detection> decode_nms_free(const PredictionGrid<T>& grid,
                                       int64_t n, double score_threshold,
                                       int64_t max_detections) {
  require<ConfigError>(max_detections >= 0,
                       "max_detections must be nonnegative");
  struct Candidate {
    double score;
    int64_t flat;
    BBox box;
    int cls;
  };
  std::vector<Candidate> keep;
  int64_t flat = 0;
  for (int lv = 0; lv < 3; ++lv) {
    const auto& level = grid.levels[lv];
    const int64_t h = level.cls.dim(2), w = level.cls.dim(3);
    const T* base = level.cls.ptr() + n * grid.num_classes * h * w;
    for (int64_t c = 0; c < grid.num_classes; ++c) {
      const T* plane = base + c * h * w;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j, ++flat) {
          const double s = detail::sigmoid_scalar(double(plane[i * w + j]));
          if (s >= score_threshold)
            keep.push_back({s, flat, decoded_box(level, n, i, j), int(c)});
        }
    }
  }
  std::sort(keep.begin(), keep.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.flat < b.flat;
  });
  if ((int64_t)keep.size() > max_detections) keep.resize(max_detections);
  std::vector<Detection> out;
  out.reserve(keep.size());
  for (const auto& k : keep) out.push_back({k.box, k.cls, k.score});
  return out;
}

}  // namespace ffpdet
