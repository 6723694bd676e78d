#pragma once

#include <algorithm>
#include <cmath>

#include "ffpdet/common.hpp"

namespace ffpdet {

/// Axis-aligned box, corner form, image pixel coordinates.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }
};

/// A scored, classified box as produced by decoding or suppression.
struct Detection {
  BBox box;
  int cls = 0;
  double score = 0;
};

inline double iou(const BBox& a, const BBox& b) {
  const double iw =
      std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih =
      std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Binary focal term for one predicted probability y in (0,1) and a 0/1
/// label: -alpha (1-y)^beta log y for positives,
/// -(1-alpha) y^beta log(1-y) for negatives. y is clamped away from 0 and 1.
template <typename T>
T focal_loss(T y, int label, T alpha = T(0.25), T beta = T(2)) {
  const T eps = T(1e-9);
  y = std::min(std::max(y, eps), T(1) - eps);
  if (label)
    return -alpha * std::pow(T(1) - y, beta) * std::log(y);
  return -(T(1) - alpha) * std::pow(y, beta) * std::log(T(1) - y);
}

/// d(focal)/d(logit) for y = sigmoid(logit), same clamping as focal_loss.
template <typename T>
T focal_loss_dlogit(T y, int label, T alpha = T(0.25), T beta = T(2)) {
  const T eps = T(1e-9);
  y = std::min(std::max(y, eps), T(1) - eps);
  const T logy = std::log(y);
  const T log1y = std::log(T(1) - y);
  if (label)
    return alpha * std::pow(T(1) - y, beta) * (beta * y * logy - (T(1) - y));
  return (T(1) - alpha) * std::pow(y, beta) * (y - beta * (T(1) - y) * log1y);
}

/// Sum of absolute corner differences with coordinates normalized by the
/// image extent, so the value is scale-free.
template <typename T>
T l1_loss(const BBox& pred, const BBox& gt, T img_w, T img_h) {
  return std::abs((T(pred.x1) - T(gt.x1)) / img_w) +
         std::abs((T(pred.y1) - T(gt.y1)) / img_h) +
         std::abs((T(pred.x2) - T(gt.x2)) / img_w) +
         std::abs((T(pred.y2) - T(gt.y2)) / img_h);
}

/// Generalized IoU loss: 1 - IoU + (C - union)/C where C is the area of the
/// smallest box enclosing both. 0 for perfect overlap, up to 2 for distant
/// boxes.
template <typename T>
T giou_loss(const BBox& pred, const BBox& gt) {
  const T iw = std::max(T(0), T(std::min(pred.x2, gt.x2)) -
                                  T(std::max(pred.x1, gt.x1)));
  const T ih = std::max(T(0), T(std::min(pred.y2, gt.y2)) -
                                  T(std::max(pred.y1, gt.y1)));
  const T inter = iw * ih;
  const T uni = T(pred.area()) + T(gt.area()) - inter;
  const T cw = T(std::max(pred.x2, gt.x2)) - T(std::min(pred.x1, gt.x1));
  const T ch = T(std::max(pred.y2, gt.y2)) - T(std::min(pred.y1, gt.y1));
  const T c = cw * ch;
  return T(1) - inter / uni + (c - uni) / c;
}

/// Partial derivatives of giou_loss with respect to the predicted corners.
struct GiouGrad {
  double dx1 = 0, dy1 = 0, dx2 = 0, dy2 = 0;
};

inline GiouGrad giou_loss_grad(const BBox& p, const BBox& g) {
  const double iw = std::max(0.0, std::min(p.x2, g.x2) - std::max(p.x1, g.x1));
  const double ih = std::max(0.0, std::min(p.y2, g.y2) - std::max(p.y1, g.y1));
  const double inter = iw * ih;
  const double uni = p.area() + g.area() - inter;
  const double cw = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
  const double ch = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
  const double c = cw * ch;

  // Intersection corner sub-gradients (zero when the pred corner is not the
  // binding one or the boxes do not overlap).
  const bool overlap = iw > 0 && ih > 0;
  const double di_dx1 = (overlap && p.x1 > g.x1) ? -ih : 0.0;
  const double di_dx2 = (overlap && p.x2 < g.x2) ? ih : 0.0;
  const double di_dy1 = (overlap && p.y1 > g.y1) ? -iw : 0.0;
  const double di_dy2 = (overlap && p.y2 < g.y2) ? iw : 0.0;

  // Predicted-area derivatives.
  const double da_dx1 = -(p.y2 - p.y1);
  const double da_dx2 = (p.y2 - p.y1);
  const double da_dy1 = -(p.x2 - p.x1);
  const double da_dy2 = (p.x2 - p.x1);

  // Enclosing-box derivatives (nonzero when the pred corner is binding).
  const double dc_dx1 = (p.x1 < g.x1) ? -ch : 0.0;
  const double dc_dx2 = (p.x2 > g.x2) ? ch : 0.0;
  const double dc_dy1 = (p.y1 < g.y1) ? -cw : 0.0;
  const double dc_dy2 = (p.y2 > g.y2) ? cw : 0.0;

  // L = 2 - inter/uni - uni/c; dU = dA - dI.
  auto partial = [&](double di, double da, double dc) {
    const double du = da - di;
    const double d_iou = (di * uni - inter * du) / (uni * uni);
    const double d_ratio = (du * c - uni * dc) / (c * c);
    return -d_iou - d_ratio;
  };
  GiouGrad out;
  out.dx1 = partial(di_dx1, da_dx1, dc_dx1);
  out.dx2 = partial(di_dx2, da_dx2, dc_dx2);
  out.dy1 = partial(di_dy1, da_dy1, dc_dy1);
  out.dy2 = partial(di_dy2, da_dy2, dc_dy2);
  return out;
}

}  // namespace ffpdet
