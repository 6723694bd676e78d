// Structured-text configuration: render/parse fixpoint, fail-closed
// parsing with line numbers, command-line overrides, and the pinned
// defaults the rest of the tool chain relies on.
#include <string>

#include "doctest.h"
#include "ffpdet/config.hpp"

using namespace ffpdet;

namespace {

// Runs `fn`, requires it to throw E, and returns the message.
template <typename E, typename Fn>
std::string error_message(Fn&& fn) {
  try {
    fn();
  } catch (const E& e) {
    return e.what();
  } catch (const std::exception& e) {
    FAIL("wrong exception type: ", e.what());
    return "";
  }
  FAIL("expected exception was not thrown");
  return "";
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("default config survives render -> parse -> render unchanged") {
  const GlobalConfig def;
  const std::string text = render_config(def);
  const GlobalConfig back = parse_config(text);
  CHECK(back == def);
  CHECK(render_config(back) == text);
}

TEST_CASE("mutated config round-trips through text exactly") {
  GlobalConfig cfg;
  cfg.detector.init_seed = 99;
  cfg.detector.backbone.in_channels = 3;
  cfg.detector.backbone.stem_channels = 24;
  cfg.detector.backbone.stem_act = Act::relu;
  cfg.detector.backbone.width_multiplier = 0.75;
  cfg.detector.backbone.taps = {16, 40, 80};
  cfg.detector.backbone.stages = {
      StageSpec{3, 2, 16, 16, true, Act::relu},
      StageSpec{5, 2, 72, 24, false, Act::hard_swish},
      StageSpec{5, 1, 96, 40, true, Act::hard_swish},
  };
  cfg.detector.ffp.pyramid_channels = 128;
  cfg.detector.head.in_channels = 128;  // derived from the pyramid width
  cfg.detector.ffp.fea_reduction = 8;
  cfg.detector.ffp.fbm_bottleneck = 32;
  cfg.detector.ffp.dfb_rates = {1, 2, 3};
  cfg.detector.ffp.dfb_channels = 48;
  cfg.detector.ffp.placement = {LevelModule::dfb, LevelModule::fbm,
                                LevelModule::fbm};
  cfg.detector.ffp.fea_additive = true;
  cfg.detector.head.tower_channels = 64;
  cfg.detector.head.tower_kernels = {3, 3, 1, 1};
  cfg.detector.head.prior_probability = 0.02;
  cfg.detector.head.strides = {4, 8, 16};
  cfg.loss.cls = 1.5;
  cfg.loss.focal_beta = 1.0;
  cfg.score_threshold = 0.33;
  cfg.max_detections = 7;
  cfg.nms_iou = 0.65;
  cfg.train.batch_size = 2;
  cfg.train.base_lr = 1e-3;
  cfg.train.total_iterations = 42;
  cfg.train.decay_at = 30;
  cfg.train.weight_decay = 0;
  cfg.train.seed = 7;
  cfg.train.checkpoint_every = 11;
  cfg.train.dataset = "/some/other/root";
  cfg.train.augment.flip_probability = 0.25;
  cfg.train.augment.photometric_jitter = 0.02;
  cfg.scene = preset_scene("fastening-bolt");
  cfg.scene.seed = 31337;

  const std::string text = render_config(cfg);
  const GlobalConfig back = parse_config(text);
  CHECK(back == cfg);
  CHECK(render_config(back) == text);
}

TEST_CASE("parser is fail-closed with positional diagnostics") {
  SUBCASE("unknown section") {
    const auto msg = error_message<ConfigError>(
        [] { parse_config("[warp]\nspeed = 9\n"); });
    CHECK(contains(msg, "unknown config section [warp]"));
  }
  SUBCASE("unknown key reports its line and section") {
    const auto msg = error_message<ConfigError>(
        [] { parse_config("[decode]\nbogus = 1\n"); });
    CHECK(contains(msg, "line 2"));
    CHECK(contains(msg, "'bogus'"));
    CHECK(contains(msg, "[decode]"));
  }
  SUBCASE("missing equals sign") {
    const auto msg = error_message<ConfigError>(
        [] { parse_config("[decode]\nscore_threshold 0.3\n"); });
    CHECK(contains(msg, "line 2"));
    CHECK(contains(msg, "expected 'key = value'"));
  }
  SUBCASE("key before any section header") {
    const auto msg =
        error_message<ConfigError>([] { parse_config("x = 1\n"); });
    CHECK(contains(msg, "line 1"));
    CHECK(contains(msg, "outside any [section]"));
  }
  SUBCASE("malformed section header") {
    const auto msg = error_message<ConfigError>(
        [] { parse_config("[decode\nscore_threshold = 0.3\n"); });
    CHECK(contains(msg, "line 1"));
    CHECK(contains(msg, "malformed section header"));
  }
  SUBCASE("comments, blank lines and padding are tolerated") {
    GlobalConfig cfg = parse_config(
        "\n# leading comment\n  [decode]  \n\n  score_threshold =  0.25 "
        "\n# trailing\n");
    CHECK(cfg.score_threshold == 0.25);
  }
  SUBCASE("pyramid width drives the head input width") {
    GlobalConfig cfg = parse_config("[pyramid]\nchannels = 96\n");
    CHECK(cfg.detector.ffp.pyramid_channels == 96);
    CHECK(cfg.detector.head.in_channels == 96);
    CHECK_NOTHROW(cfg.detector.validate());
  }
}

TEST_CASE("scalar values are validated while parsing") {
  auto bad = [](const std::string& body) {
    return error_message<ConfigError>([&] { parse_config(body); });
  };
  CHECK(contains(bad("[train]\nbatch = 3.5\n"), "as an integer"));
  CHECK(contains(bad("[decode]\nscore_threshold = abc\n"), "as a number"));
  CHECK(contains(bad("[train]\nseed = -5\n"), "as an unsigned integer"));
  CHECK(contains(bad("[pyramid]\nadditive_gate = yes\n"), "true or false"));
  CHECK(contains(bad("[backbone]\nstem_act = gelu\n"), "relu or hard_swish"));
  CHECK(contains(bad("[scene]\nfamily = sphere\n"), "rectangle, disc or bolt"));
  CHECK(contains(bad("[pyramid]\nplacement = fbm,dfb\n"), "three of fbm|dfb"));
  CHECK(contains(bad("[pyramid]\nplacement = fbm,dfb,cat\n"),
                 "three of fbm|dfb"));
  CHECK(contains(bad("[backbone]\ntaps = 24,48\n"),
                 "three comma-separated integers"));
  CHECK(contains(bad("[head]\nstrides = 8,16,32,64\n"),
                 "three comma-separated integers"));
}

TEST_CASE("stage grammar rejects malformed entries") {
  auto bad = [](const std::string& stages) {
    return error_message<ConfigError>(
        [&] { parse_config("[backbone]\nstages = " + stages + "\n"); });
  };
  // Wrong token count.
  CHECK(contains(bad("k3 s2 e16 o16 se"), "k"));
  // Wrong field prefix.
  CHECK(contains(bad("x3 s2 e16 o16 se relu"), "'k<int>'"));
  CHECK(contains(bad("k3 z2 e16 o16 se relu"), "'s<int>'"));
  // Bad squeeze-excite marker and activation.
  CHECK(contains(bad("k3 s2 e16 o16 maybe relu"), "'se' or '-'"));
  CHECK(contains(bad("k3 s2 e16 o16 se tanh"), "relu or hard_swish"));
  // A valid two-stage list parses and renders back identically.
  GlobalConfig cfg = parse_config(
      "[backbone]\nstages = k3 s2 e16 o16 se relu | k5 s1 e64 o24 - "
      "hard_swish\n");
  REQUIRE(cfg.detector.backbone.stages.size() == 2);
  CHECK(cfg.detector.backbone.stages[0] ==
        StageSpec{3, 2, 16, 16, true, Act::relu});
  CHECK(cfg.detector.backbone.stages[1] ==
        StageSpec{5, 1, 64, 24, false, Act::hard_swish});
}

TEST_CASE("command-line overrides reuse the file grammar") {
  GlobalConfig cfg;
  apply_override(cfg, "decode.score_threshold=0.2");
  CHECK(cfg.score_threshold == 0.2);
  apply_override(cfg, "train.lr = 1e-3");
  CHECK(cfg.train.base_lr == 1e-3);
  apply_override(cfg, "train.dataset=/data/run7");
  CHECK(cfg.train.dataset == "/data/run7");
  apply_override(cfg, "pyramid.placement=dfb,dfb,dfb");
  CHECK(cfg.detector.ffp.placement ==
        std::array<LevelModule, 3>{LevelModule::dfb, LevelModule::dfb,
                                   LevelModule::dfb});

  CHECK(contains(error_message<ConfigError>(
                     [&] { apply_override(cfg, "score_threshold=0.2"); }),
                 "section.key"));
  CHECK(contains(error_message<ConfigError>(
                     [&] { apply_override(cfg, "decode.bogus=1"); }),
                 "unknown key 'bogus'"));
  CHECK(contains(error_message<ConfigError>(
                     [&] { apply_override(cfg, "decode.score_threshold"); }),
                 "section.key=value"));
}

TEST_CASE("scene spec text embeds and restores a generator setup") {
  SceneSpec spec = preset_scene("dust-collector");
  spec.seed = 4242;
  const std::string text = render_scene_spec(spec);
  CHECK(parse_scene_spec(text) == spec);
  // The standalone scene parser accepts only the [scene] section.
  const auto msg = error_message<ConfigError>(
      [&] { parse_scene_spec("[train]\nbatch = 4\n" + text); });
  CHECK(contains(msg, "unexpected section [train]"));
}

TEST_CASE("loading a missing config file is an i/o error") {
  CHECK_THROWS_AS(load_config("/nonexistent/path/run.cfg"), IoError);
}

TEST_CASE("semantic validation rejects out-of-range settings") {
  auto rejects = [](auto&& mutate) {
    GlobalConfig cfg;
    mutate(cfg);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  };
  rejects([](GlobalConfig& c) { c.loss.l1 = -1; });
  rejects([](GlobalConfig& c) { c.loss.focal_alpha = 1.0; });
  rejects([](GlobalConfig& c) { c.loss.focal_beta = -0.5; });
  rejects([](GlobalConfig& c) { c.score_threshold = 1.5; });
  rejects([](GlobalConfig& c) { c.max_detections = -1; });
  rejects([](GlobalConfig& c) { c.nms_iou = 1.0; });
  rejects([](GlobalConfig& c) { c.detector.head.num_classes = 3; });
  rejects([](GlobalConfig& c) { c.train.batch_size = 0; });
  rejects([](GlobalConfig& c) { c.train.base_lr = 0; });
  rejects([](GlobalConfig& c) { c.train.total_iterations = -1; });
  rejects([](GlobalConfig& c) {
    c.train.total_iterations = 100;
    c.train.decay_at = 100;
  });
  rejects([](GlobalConfig& c) { c.train.checkpoint_every = 0; });
  rejects([](GlobalConfig& c) { c.train.dataset.clear(); });
  rejects([](GlobalConfig& c) { c.train.augment.flip_probability = 1.5; });
  rejects([](GlobalConfig& c) { c.train.augment.photometric_jitter = 0.5; });

  GlobalConfig ok;
  CHECK_NOTHROW(ok.validate());
  // decay_at = -1 means three quarters of the run.
  CHECK(ok.train.effective_decay() == ok.train.total_iterations * 3 / 4);
  ok.train.decay_at = 10;
  CHECK(ok.train.effective_decay() == 10);
}

TEST_CASE("shipped defaults are pinned") {
  const GlobalConfig cfg;
  CHECK(cfg.loss.cls == 2.0);
  CHECK(cfg.loss.l1 == 5.0);
  CHECK(cfg.loss.giou == 2.0);
  CHECK(cfg.loss.focal_alpha == 0.25);
  CHECK(cfg.loss.focal_beta == 2.0);
  CHECK(cfg.score_threshold == 0.4);
  CHECK(cfg.max_detections == 50);
  CHECK(cfg.nms_iou == 0.5);

  CHECK(cfg.detector.ffp.pyramid_channels == 256);
  CHECK(cfg.detector.ffp.fea_reduction == 16);
  CHECK(cfg.detector.ffp.fbm_bottleneck == 16);
  CHECK(cfg.detector.ffp.dfb_rates == std::vector<int64_t>{1, 2, 5});
  CHECK(cfg.detector.ffp.placement ==
        std::array<LevelModule, 3>{LevelModule::fbm, LevelModule::fbm,
                                   LevelModule::dfb});
  CHECK(cfg.detector.ffp.fea_additive == false);

  CHECK(cfg.detector.head.num_classes == kNumClasses);
  CHECK(cfg.detector.head.tower_channels == 32);
  CHECK(cfg.detector.head.tower_kernels == std::vector<int64_t>{1, 3, 3, 3});
  CHECK(cfg.detector.head.prior_probability == 0.01);
  CHECK(cfg.detector.head.strides == std::array<int64_t, 3>{8, 16, 32});

  CHECK(cfg.train.batch_size == 8);
  CHECK(cfg.train.base_lr == 5e-4);
  CHECK(cfg.train.total_iterations == 1500);
  CHECK(cfg.train.decay_at == -1);
  CHECK(cfg.train.weight_decay == 1e-4);
  CHECK(cfg.train.seed == 1);
  CHECK(cfg.train.checkpoint_every == 500);
  CHECK(cfg.train.augment.flip_probability == 0.5);
  CHECK(cfg.train.augment.photometric_jitter == 0.06);
}
