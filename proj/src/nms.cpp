#include "ffpdet/nms.hpp"

#include <algorithm>
#include <numeric>

namespace ffpdet {

std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_threshold) {
  require<ConfigError>(iou_threshold > 0.0 && iou_threshold < 1.0,
                       strfmt("IoU threshold must lie in (0,1), got %g",
                              iou_threshold));
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].score > dets[b].score;
  });

  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (size_t idx : order) {
    const Detection& d = dets[idx];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.cls != d.cls) continue;
      if (iou(k.box, d.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace ffpdet
