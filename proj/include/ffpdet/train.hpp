#pragma once

#include <functional>
#include <string>

#include "ffpdet/config.hpp"
#include "ffpdet/detector.hpp"
#include "ffpdet/synth.hpp"

namespace ffpdet {

/// Zero-pad [3,H,W] on the right and bottom up to multiples of `stride`.
/// Box coordinates are unaffected by this padding convention.
Tensor<float> pad_to_stride(const Tensor<float>& chw, int64_t stride);

/// Stack equal-shape [3,H,W] images into [N,3,H,W].
Tensor<float> stack_images(const std::vector<Tensor<float>>& images);

struct IterationStats {
  int64_t iteration = 0;
  LossBreakdown loss;
  double lr = 0;
};

struct TrainResult {
  int64_t iterations = 0;
  std::string final_checkpoint;
  std::string curve_path;
  LossBreakdown last;
  double seconds = 0;
};

/// Step loop: batch -> forward -> assignment -> loss -> backward -> update,
/// with the 10x learning-rate drop at the configured decay point.
/// Writes checkpoints plus loss_curve.txt (one line per iteration:
/// iteration total cls l1 giou lr) under out_dir. The whole run is a pure
/// function of (config, dataset files); batches, shuffling and augmentation
/// are derived from (seed, iteration) so a resumed run continues exactly
/// where the interrupted one left off. A non-finite loss aborts with the
/// iteration number and per-component values.
TrainResult train(
    const GlobalConfig& cfg, const std::string& out_dir,
    const std::string& resume_from = "",
    const std::function<void(const IterationStats&)>& on_iter = {});

struct SmokeReport {
  bool passed = false;
  int64_t steps = 0;
  double final_loss = 0;
  double threshold = 0;
};

/// Capacity sanity check: repeatedly fit one fixed rendered batch; a
/// healthy configuration drives the total loss below the threshold.
SmokeReport overfit_smoke(const GlobalConfig& cfg, int64_t max_steps = 500,
                          double threshold = 0.05);

}  // namespace ffpdet
