#pragma once

#include <vector>

#include "ffpdet/boxes.hpp"

namespace ffpdet {

/// Greedy per-class non-maximum suppression, kept as a comparison baseline.
/// Detections are visited in descending score order (ties by input index);
/// one is kept iff its IoU with every already-kept detection of the same
/// class is strictly below the threshold. Output preserves that order.
std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_threshold);

}  // namespace ffpdet
