#pragma once

#include <map>
#include <string>
#include <vector>

#include "ffpdet/boxes.hpp"

namespace ffpdet {

/// Image-level fault statistics over a test set of m fault images and n
/// normal images. Of the a images the model flags as faulty, b are actually
/// normal (false detections); of the c images it flags as normal, d are
/// actually faulty (missed detections).
struct MetricReport {
  int64_t m = 0, n = 0;
  int64_t a = 0, b = 0, c = 0, d = 0;
  double cdr = 0, fdr = 0, mdr = 0;
  std::map<int, int64_t> class_detections;
};

/// An image is called faulty iff any detection scores at or above the
/// threshold (inclusive boundary).
bool classify_image(const std::vector<Detection>& dets,
                    double score_threshold);

/// Rates from per-image (predicted fault, actually fault) flags:
/// FDR = b/(m+n), MDR = d/(m+n), CDR = 1 - FDR - MDR.
MetricReport compute_metrics(const std::vector<std::pair<bool, bool>>& flags);

struct ImagePrediction {
  std::string id;
  std::vector<Detection> detections;
};

struct ImageTruth {
  std::string id;
  bool fault = false;
};

/// Full report from per-image detections and ground truth, aligned by image
/// id. Ids present on one side only raise an error naming them.
MetricReport compute_metrics(const std::vector<ImagePrediction>& preds,
                             const std::vector<ImageTruth>& truth,
                             double score_threshold);

}  // namespace ffpdet
