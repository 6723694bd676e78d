#pragma once

#include <map>
#include <string>

#include "ffpdet/config.hpp"
#include "ffpdet/detector.hpp"
#include "ffpdet/metrics.hpp"
#include "ffpdet/synth.hpp"

namespace ffpdet {

/// Inference over one split: per-image decoding, image-level metrics, and a
/// machine-readable detections listing (one line per detection: image id,
/// class, score to 6 decimals, corners to 2 decimals).
struct EvalOutput {
  MetricReport metrics;
  std::string detections_text;
  int64_t images = 0;
  /// Fraction of images where running baseline NMS after the one-to-one
  /// decode changes nothing.
  double nms_noop_fraction = 0;
};

EvalOutput evaluate(Detector<float>& det, const Dataset& data,
                    const GlobalConfig& cfg, bool with_nms);

struct BenchReport {
  int64_t images = 0;
  int64_t repetitions = 1;
  double mean_infer_s = 0;
  double median_infer_s = 0;
  /// Mean per-image time of the suppression stage (0 unless enabled).
  double nms_stage_s = 0;
  double mean_train_step_s = 0;
  int64_t peak_rss_kb = 0;
  int64_t model_size_bytes = 0;
  std::map<int64_t, int64_t> detections_histogram;
};

/// Timed single-image inference passes (single-threaded by default for
/// stable numbers; the first `warmup` passes are excluded). Detection
/// counts are deterministic across repetitions.
BenchReport bench_inference(Detector<float>& det, const Dataset& data,
                            const GlobalConfig& cfg, bool with_nms,
                            int64_t repetitions, int64_t warmup,
                            int64_t max_images,
                            const std::string& checkpoint_path,
                            bool single_thread = true);

/// Mean seconds of one optimization step on a rendered batch.
double bench_train_step(const GlobalConfig& cfg, int64_t steps);

struct StressReport {
  int64_t boxes = 0;
  double seconds = 0;
  int64_t kept = 0;
};

/// Time one suppression pass over `n_boxes` random candidates.
StressReport nms_stress(int64_t n_boxes, double iou_threshold, uint64_t seed);

/// Best-effort peak resident set size of this process, in kilobytes.
int64_t peak_rss_kb();

}  // namespace ffpdet
