#pragma once

#include <string>

#include "ffpdet/detector.hpp"
#include "ffpdet/synth.hpp"

namespace ffpdet {

struct TrainConfig {
  int64_t batch_size = 8;
  double base_lr = 5e-4;
  int64_t total_iterations = 1500;
  /// Iteration at which the learning rate drops by 10x; -1 places it at 75%
  /// of the total.
  int64_t decay_at = -1;
  double weight_decay = 1e-4;
  uint64_t seed = 1;
  int64_t checkpoint_every = 500;
  std::string dataset = "data";
  AugmentPolicy augment;

  bool operator==(const TrainConfig&) const = default;

  int64_t effective_decay() const {
    return decay_at >= 0 ? decay_at : total_iterations * 3 / 4;
  }

  /// Closed-form schedule: base rate before the decay point, a tenth after.
  double lr_at(int64_t iteration) const {
    return iteration >= effective_decay() ? base_lr * 0.1 : base_lr;
  }

  void validate() const {
    require<ConfigError>(batch_size >= 1, "batch size must be at least 1");
    require<ConfigError>(base_lr > 0, "learning rate must be positive");
    require<ConfigError>(total_iterations >= 0,
                         "iteration count must be nonnegative");
    require<ConfigError>(
        total_iterations == 0 || effective_decay() < total_iterations,
        strfmt("decay point %lld must come before the last iteration %lld",
               (long long)effective_decay(), (long long)total_iterations));
    require<ConfigError>(weight_decay >= 0, "weight decay must be >= 0");
    require<ConfigError>(checkpoint_every >= 1,
                         "checkpoint cadence must be at least 1");
    require<ConfigError>(!dataset.empty(), "dataset path is empty");
    require<ConfigError>(
        augment.flip_probability >= 0 && augment.flip_probability <= 1,
        "flip probability must lie in [0, 1]");
    require<ConfigError>(
        augment.photometric_jitter >= 0 && augment.photometric_jitter < 0.5,
        "photometric jitter must lie in [0, 0.5)");
  }
};

/// Everything the tool needs, in one structured-text file. Parsing is
/// fail-closed: unknown sections or keys are errors, and
/// parse(render(cfg)) == cfg.
struct GlobalConfig {
  DetectorConfig detector;
  LossWeights loss;
  double score_threshold = 0.4;
  int64_t max_detections = 50;
  double nms_iou = 0.5;
  TrainConfig train;
  SceneSpec scene;

  bool operator==(const GlobalConfig&) const = default;

  void validate() const {
    detector.validate();
    train.validate();
    scene.validate();
    require<ConfigError>(loss.cls >= 0 && loss.l1 >= 0 && loss.giou >= 0,
                         "loss weights must be nonnegative");
    require<ConfigError>(loss.focal_alpha > 0 && loss.focal_alpha < 1,
                         "focal alpha must lie in (0, 1)");
    require<ConfigError>(loss.focal_beta >= 0, "focal beta must be >= 0");
    require<ConfigError>(score_threshold >= 0 && score_threshold <= 1,
                         "score threshold must lie in [0, 1]");
    require<ConfigError>(max_detections >= 0,
                         "max detections must be nonnegative");
    require<ConfigError>(nms_iou > 0 && nms_iou < 1,
                         "NMS IoU threshold must lie in (0, 1)");
    require<ConfigError>(
        detector.head.num_classes == kNumClasses,
        strfmt("the synthetic task defines %d fault classes, head has %lld",
               kNumClasses, (long long)detector.head.num_classes));
  }
};

GlobalConfig parse_config(const std::string& text);
GlobalConfig load_config(const std::string& path);
std::string render_config(const GlobalConfig& cfg);

/// The [scene] section alone, as embedded in generated datasets.
std::string render_scene_spec(const SceneSpec& spec);
SceneSpec parse_scene_spec(const std::string& text);

/// Apply `key=value` overrides using the same key names as the file,
/// qualified as `section.key` (for example `train.lr=1e-3`).
void apply_override(GlobalConfig& cfg, const std::string& assignment);

}  // namespace ffpdet
