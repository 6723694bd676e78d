#pragma once

#include "ffpdet/backbone.hpp"
#include "ffpdet/ffp.hpp"
#include "ffpdet/head.hpp"

namespace ffpdet {

struct DetectorConfig {
  BackboneConfig backbone;
  FfpConfig ffp;
  HeadConfig head;
  /// Seed of the parameter initializer; the full model is a pure function
  /// of the config including this seed.
  uint64_t init_seed = 1;

  bool operator==(const DetectorConfig&) const = default;

  void validate() const {
    backbone.validate();
    ffp.validate();
    head.validate();
    require<ConfigError>(
        head.in_channels == ffp.pyramid_channels,
        strfmt("head input width %lld must equal the pyramid width %lld",
               (long long)head.in_channels, (long long)ffp.pyramid_channels));
  }
};

/// Full detector: backbone taps at strides 8/16/32, feature pyramid, shared
/// detection head.
template <typename T>
class Detector {
 public:
  explicit Detector(const DetectorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    backbone_ = Backbone<T>(store_, "backbone", cfg_.backbone, rng);
    const std::array<int64_t, 3> taps = {cfg_.backbone.tap_channels(0),
                                         cfg_.backbone.tap_channels(1),
                                         cfg_.backbone.tap_channels(2)};
    ffp_ = Ffp<T>(store_, "pyramid", taps, cfg_.ffp, rng);
    head_ = Head<T>(store_, "head", cfg_.head, rng);
  }

  PredictionGrid<T> forward(const Tensor<T>& x, bool training) {
    return head_.forward(ffp_.forward(backbone_.forward(x, training)));
  }

  const DetectorConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  Backbone<T>& backbone() { return backbone_; }
  Ffp<T>& ffp() { return ffp_; }
  Head<T>& head() { return head_; }

 private:
  DetectorConfig cfg_;
  ParamStore<T> store_;
  Backbone<T> backbone_;
  Ffp<T> ffp_;
  Head<T> head_;
};

}  // namespace ffpdet
