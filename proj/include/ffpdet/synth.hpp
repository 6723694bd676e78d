#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ffpdet/head.hpp"
#include "ffpdet/image.hpp"
#include "ffpdet/rng.hpp"

namespace ffpdet {

/// Shape family of the inspected component.
enum class ShapeFamily { rectangle, disc, bolt };

/// Fault classes produced by the generator.
inline constexpr int kClassMissing = 0;  ///< component absent from its mount
inline constexpr int kClassBroken = 1;   ///< component present but damaged
inline constexpr int kNumClasses = 2;

/// Parameters of the synthetic inspection-scene generator. A dataset is a
/// pure function of (spec, count, split): identical inputs give bitwise
/// identical files.
struct SceneSpec {
  int64_t width = 704, height = 512;
  int64_t min_components = 2, max_components = 4;
  ShapeFamily family = ShapeFamily::rectangle;
  /// Relative component size (fraction of image height).
  double component_scale = 0.28;
  /// Width/height aspect of the component glyph (elongated families > 1).
  double component_aspect = 1.0;
  /// Probability that an image contains at least one fault.
  double fault_probability = 0.5;
  /// Probability that a dark occluding band crosses the scene.
  double occluder_probability = 0.1;
  /// Distractor blobs per 10000 pixels.
  double clutter_density = 0.1;
  /// Standard deviation of the per-pixel photometric noise.
  double noise_level = 0.02;
  uint64_t seed = 1;

  bool operator==(const SceneSpec&) const = default;

  void validate() const {
    require<ConfigError>(width >= 64 && height >= 64,
                         "scene size must be at least 64x64");
    require<ConfigError>(
        min_components >= 1 && max_components >= min_components,
        "component count range must satisfy 1 <= min <= max");
    require<ConfigError>(component_scale > 0 && component_scale <= 0.9,
                         "component scale must lie in (0, 0.9]");
    require<ConfigError>(component_aspect >= 0.2 && component_aspect <= 5.0,
                         "component aspect must lie in [0.2, 5]");
    for (double p : {fault_probability, occluder_probability})
      require<ConfigError>(p >= 0.0 && p <= 1.0,
                           "probabilities must lie in [0, 1]");
    require<ConfigError>(clutter_density >= 0, "clutter density must be >= 0");
    require<ConfigError>(noise_level >= 0, "noise level must be >= 0");
  }
};

/// Named presets mirroring three inspection scenarios: "bogie-key" (tiny
/// targets), "dust-collector" (mid-size discs), "fastening-bolt"
/// (elongated). Unknown names raise a config error.
SceneSpec preset_scene(const std::string& name);

/// One generated or loaded image with its fault annotations. The flag is
/// true exactly when the annotation list is nonempty.
struct Sample {
  std::string id;
  Tensor<float> image;  // [3,H,W], values in [0,1]
  std::vector<GtBox> boxes;
  bool fault = false;
};

/// Pixel bounds actually painted for each rendered component, exposed for
/// the geometric-consistency oracle (annotation boxes must cover them).
struct RenderTrace {
  std::vector<BBox> component_bounds;  // every component, faulty or not
  std::vector<int> component_fault;    // -1 healthy, else fault class
};

/// Render sample `index` of the stream with the given split tag. Pure
/// function of (spec, split, index); per-sample seeds are derived by
/// hashing so parallel generation is order-independent.
Sample render_scene(const SceneSpec& spec, const std::string& split,
                    int64_t index, RenderTrace* trace = nullptr);

struct DatasetReport {
  int64_t count = 0;
  int64_t fault_images = 0;
  std::map<int, int64_t> class_boxes;
};

/// Write `count` samples under root/<split>/ (images/ + annotations.txt)
/// and embed the generating spec at root/spec.txt.
DatasetReport generate_dataset(const SceneSpec& spec, int64_t count,
                               const std::string& split,
                               const std::string& root);

struct DatasetRecord {
  std::string filename;
  bool fault = false;
  std::vector<GtBox> boxes;
};

/// Index of one split plus lazy image loading.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::string images_dir, std::vector<DatasetRecord> records,
          int64_t width, int64_t height)
      : images_dir_(std::move(images_dir)),
        records_(std::move(records)),
        width_(width),
        height_(height) {}

  int64_t size() const { return (int64_t)records_.size(); }
  int64_t width() const { return width_; }
  int64_t height() const { return height_; }
  const DatasetRecord& record(int64_t i) const { return records_.at(i); }

  /// Load the image for record i and return the full sample.
  Sample load(int64_t i) const;

  /// Deterministic order permutation for a given seed.
  std::vector<int64_t> shuffled_order(uint64_t seed) const;

 private:
  std::string images_dir_;
  std::vector<DatasetRecord> records_;
  int64_t width_ = 0, height_ = 0;
};

/// Parse root/<split>/annotations.txt, validating every record against the
/// sample invariants (boxes inside bounds, flag consistent with the box
/// list). Violations raise an error naming the offending record.
Dataset load_dataset(const std::string& root, const std::string& split);

/// Mirror the sample left-right; boxes map as x -> width - x. Applying it
/// twice restores the original exactly.
Sample flip_horizontal(const Sample& s);

struct AugmentPolicy {
  double flip_probability = 0.5;
  /// Max brightness shift and relative contrast change.
  double photometric_jitter = 0.06;

  bool operator==(const AugmentPolicy&) const = default;
};

/// Deterministic augmentation under the given seed.
Sample augment(const Sample& s, const AugmentPolicy& policy, uint64_t seed);

}  // namespace ffpdet
