#pragma once

#include <array>
#include <variant>
#include <vector>

#include "ffpdet/nn.hpp"

namespace ffpdet {

/// Report of the hybrid-dilated-convolution admissibility check for a stack
/// of KxK convolutions with the given dilation rates (applied bottom-up in
/// list order).
struct HdcReport {
  std::vector<int64_t> rates;
  int64_t kernel = 3;
  /// Worst gap between active taps contributed by layers i..n, computed
  /// top-down with max_gap[n-1] = rates[n-1]; aligned with `rates`.
  std::vector<int64_t> max_gap;
  /// True when the bottom gap exceeds 1: the composed kernel skips input
  /// pixels (gridding), so the rate stack should not be used.
  bool gridding = false;
};

HdcReport hdc_check(const std::vector<int64_t>& rates, int64_t kernel);

enum class LevelModule { fbm, dfb };

struct FfpConfig {
  int64_t pyramid_channels = 256;
  /// Channel reduction of the enhancement gate; hidden width is
  /// pyramid_channels / fea_reduction.
  int64_t fea_reduction = 16;
  int64_t fbm_bottleneck = 16;
  std::vector<int64_t> dfb_rates = {1, 2, 5};
  /// Width of the interior dilated convolutions in the dilated block.
  int64_t dfb_channels = 256;
  /// Smoothing module per pyramid level (P3, P4, P5).
  std::array<LevelModule, 3> placement = {LevelModule::fbm, LevelModule::fbm,
                                          LevelModule::dfb};
  /// Combine the channel gate additively instead of multiplicatively.
  bool fea_additive = false;

  bool operator==(const FfpConfig&) const = default;

  void validate() const {
    require<ConfigError>(pyramid_channels > 0, "pyramid width must be positive");
    require<ConfigError>(
        fbm_bottleneck > 0 && fbm_bottleneck < pyramid_channels,
        strfmt("bottleneck width %lld must be in (0, %lld)",
               (long long)fbm_bottleneck, (long long)pyramid_channels));
    require<ConfigError>(
        fea_reduction > 0 && pyramid_channels % fea_reduction == 0,
        "gate reduction must divide the pyramid width");
    require<ConfigError>(!dfb_rates.empty(), "dilation rate list is empty");
    for (int64_t r : dfb_rates)
      require<ConfigError>(r > 0, "dilation rates must be positive");
    require<ConfigError>(dfb_channels > 0, "dilated block width must be positive");
  }
};

/// Feature enhancement: 1x1 projection to the pyramid width followed by a
/// global channel gate g = sigmoid(W1 relu(W0 GAP(p))) applied per channel.
template <typename T>
class Fea {
 public:
  Fea() = default;

  Fea(ParamStore<T>& ps, const std::string& name, int64_t in_channels,
      const FfpConfig& cfg, Rng& rng)
      : channels_(cfg.pyramid_channels), additive_(cfg.fea_additive) {
    proj_ = Conv2dLayer<T>(
        ps, name + ".proj",
        ConvSpec{in_channels, channels_, 1, 1, 0, 1, 1, true}, rng);
    const int64_t hidden = channels_ / cfg.fea_reduction;
    fc_reduce_ = DenseLayer<T>(ps, name + ".gate_reduce", channels_, hidden, rng);
    fc_expand_ = DenseLayer<T>(ps, name + ".gate_expand", hidden, channels_, rng);
  }

  Tensor<T> project(const Tensor<T>& x) const { return proj_.forward(x); }

  /// Per-channel gate in (0,1), shape [N,C,1,1].
  Tensor<T> gate(const Tensor<T>& projected) const {
    auto pooled = reshape(global_avg_pool(projected),
                          {projected.dim(0), channels_});
    auto g = sigmoid(fc_expand_.forward(relu(fc_reduce_.forward(pooled))));
    return reshape(g, {projected.dim(0), channels_, 1, 1});
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto p = project(x);
    auto g = gate(p);
    return additive_ ? add_channel(p, g) : mul_channel(p, g);
  }

  DenseLayer<T>& gate_expand() { return fc_expand_; }

 private:
  int64_t channels_ = 0;
  bool additive_ = false;
  Conv2dLayer<T> proj_;
  DenseLayer<T> fc_reduce_, fc_expand_;
};

/// Bottleneck smoothing branch: 1x1 reduce, 3x3, 1x1 expand, all bias-free.
template <typename T>
class FbmBranch {
 public:
  FbmBranch() = default;

  FbmBranch(ParamStore<T>& ps, const std::string& name, const FfpConfig& cfg,
            Rng& rng) {
    const int64_t p = cfg.pyramid_channels, b = cfg.fbm_bottleneck;
    reduce_ = Conv2dLayer<T>(ps, name + ".reduce",
                             ConvSpec{p, b, 1, 1, 0, 1, 1, false}, rng);
    mid_ = Conv2dLayer<T>(ps, name + ".smooth",
                          ConvSpec{b, b, 3, 1, 1, 1, 1, false}, rng);
    expand_ = Conv2dLayer<T>(ps, name + ".expand",
                             ConvSpec{b, p, 1, 1, 0, 1, 1, false}, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return expand_.forward(mid_.forward(reduce_.forward(x)));
  }

  int64_t parameter_count() const {
    return reduce_.spec().parameter_count() + mid_.spec().parameter_count() +
           expand_.spec().parameter_count();
  }

 private:
  Conv2dLayer<T> reduce_, mid_, expand_;
};

/// Feature balance module: identity plus the bottleneck branch.
template <typename T>
class Fbm {
 public:
  Fbm() = default;

  Fbm(ParamStore<T>& ps, const std::string& name, const FfpConfig& cfg,
      Rng& rng)
      : branch_(ps, name + ".branch", cfg, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return add(x, branch_.forward(x));
  }

  const FbmBranch<T>& branch() const { return branch_; }

 private:
  FbmBranch<T> branch_;
};

/// Dilated fusion block: a sequential stack of 3x3 dilated convolutions on
/// the shortcut path (the shortcut is convolved, not identity) plus the
/// bottleneck branch.
template <typename T>
class Dfb {
 public:
  Dfb() = default;

  Dfb(ParamStore<T>& ps, const std::string& name, const FfpConfig& cfg,
      Rng& rng)
      : branch_(ps, name + ".branch", cfg, rng) {
    const int64_t p = cfg.pyramid_channels, w = cfg.dfb_channels;
    const size_t n = cfg.dfb_rates.size();
    for (size_t i = 0; i < n; ++i) {
      const int64_t r = cfg.dfb_rates[i];
      const int64_t in = i == 0 ? p : w;
      const int64_t out = i + 1 == n ? p : w;
      dilated_.emplace_back(ps, name + ".dilated" + std::to_string(i),
                            ConvSpec{in, out, 3, 1, r, r, 1, false}, rng);
    }
  }

  Tensor<T> dilated_forward(const Tensor<T>& x) const {
    Tensor<T> t = x;
    for (const auto& c : dilated_) t = c.forward(t);
    return t;
  }

  Tensor<T> branch_forward(const Tensor<T>& x) const {
    return branch_.forward(x);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return add(dilated_forward(x), branch_forward(x));
  }

  const FbmBranch<T>& branch() const { return branch_; }

 private:
  std::vector<Conv2dLayer<T>> dilated_;
  FbmBranch<T> branch_;
};

/// Fault feature pyramid: per-level enhancement, top-down nearest-neighbour
/// fusion, and one smoothing module (FBM or DFB) per level.
template <typename T>
class Ffp {
 public:
  Ffp() = default;

  Ffp(ParamStore<T>& ps, const std::string& name,
      const std::array<int64_t, 3>& in_channels, const FfpConfig& cfg,
      Rng& rng)
      : cfg_(cfg) {
    cfg_.validate();
    const auto hdc = hdc_check(cfg_.dfb_rates, 3);
    require<ConfigError>(
        !hdc.gridding,
        strfmt("dilation rate stack leaves receptive-field holes (bottom gap "
               "%lld); pick rates whose check passes",
               (long long)hdc.max_gap[0]));
    static const char* level_names[3] = {".level3", ".level4", ".level5"};
    for (int i = 0; i < 3; ++i) {
      fea_[i] = Fea<T>(ps, name + level_names[i] + ".enhance", in_channels[i],
                       cfg_, rng);
      if (cfg_.placement[i] == LevelModule::fbm)
        modules_[i].template emplace<Fbm<T>>(ps, name + level_names[i] + ".fbm",
                                             cfg_, rng);
      else
        modules_[i].template emplace<Dfb<T>>(ps, name + level_names[i] + ".dfb",
                                             cfg_, rng);
    }
  }

  /// {C3,C4,C5} -> {P3,P4,P5}, all with pyramid_channels channels.
  std::array<Tensor<T>, 3> forward(const std::array<Tensor<T>, 3>& c) const {
    auto apply = [&](int level, const Tensor<T>& t) {
      if (auto* f = std::get_if<Fbm<T>>(&modules_[level])) return f->forward(t);
      return std::get<Dfb<T>>(modules_[level]).forward(t);
    };
    std::array<Tensor<T>, 3> p;
    p[2] = apply(2, fea_[2].forward(c[2]));
    p[1] = apply(1, add(fea_[1].forward(c[1]), upsample_nearest_2x(p[2])));
    p[0] = apply(0, add(fea_[0].forward(c[0]), upsample_nearest_2x(p[1])));
    return p;
  }

  const FfpConfig& config() const { return cfg_; }
  Fea<T>& fea(int level) { return fea_[level]; }
  const Dfb<T>* dfb(int level) const {
    return std::get_if<Dfb<T>>(&modules_[level]);
  }
  const Fbm<T>* fbm(int level) const {
    return std::get_if<Fbm<T>>(&modules_[level]);
  }

 private:
  FfpConfig cfg_;
  std::array<Fea<T>, 3> fea_;
  std::array<std::variant<std::monostate, Fbm<T>, Dfb<T>>, 3> modules_;
};

}  // namespace ffpdet
