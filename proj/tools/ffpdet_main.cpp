// ffpdet: one binary for the full fault-detection workflow — dataset
// synthesis, training, evaluation, benchmarking, architecture analysis,
// feature-map dumps and the release-gate checks.
//
// Exit codes: 0 success, 1 failed check or runtime error, 2 configuration
// or usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ffpdet/acceptance.hpp"
#include "ffpdet/bench.hpp"
#include "ffpdet/checkpoint.hpp"
#include "ffpdet/config.hpp"
#include "ffpdet/detector.hpp"
#include "ffpdet/featviz.hpp"
#include "ffpdet/image.hpp"
#include "ffpdet/kernels.hpp"
#include "ffpdet/metrics.hpp"
#include "ffpdet/synth.hpp"
#include "ffpdet/train.hpp"

namespace fs = std::filesystem;
using namespace ffpdet;

namespace {

std::string resolve(const std::string& workdir, const std::string& p) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_absolute()) return p;
  return (fs::path(workdir) / path).string();
}

/// Config precedence: file (or built-in defaults) < scene preset <
/// section.key=value overrides.
GlobalConfig build_config(const std::string& workdir,
                          const std::string& config_path,
                          const std::string& preset,
                          const std::vector<std::string>& overrides) {
  GlobalConfig cfg;
  if (!config_path.empty()) cfg = load_config(resolve(workdir, config_path));
  if (!preset.empty()) cfg.scene = preset_scene(preset);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  require<IoError>(os.is_open(), "cannot write " + path.string());
  os << text;
  require<IoError>(os.good(), "short write on " + path.string());
}

std::string render_metrics(const MetricReport& m, double noop,
                           int64_t images, double threshold) {
  std::string s;
  s += strfmt("images %lld\n", (long long)images);
  s += strfmt("fault_images %lld\n", (long long)m.m);
  s += strfmt("normal_images %lld\n", (long long)m.n);
  s += strfmt("predicted_fault %lld\n", (long long)m.a);
  s += strfmt("false_detections %lld\n", (long long)m.b);
  s += strfmt("predicted_normal %lld\n", (long long)m.c);
  s += strfmt("missed_detections %lld\n", (long long)m.d);
  s += strfmt("cdr %.6f\n", m.cdr);
  s += strfmt("fdr %.6f\n", m.fdr);
  s += strfmt("mdr %.6f\n", m.mdr);
  s += strfmt("score_threshold %.6f\n", threshold);
  for (const auto& [cls, count] : m.class_detections)
    s += strfmt("detections_class%d %lld\n", cls, (long long)count);
  s += strfmt("suppression_noop_fraction %.6f\n", noop);
  return s;
}

/// Loads the detector whose architecture is embedded in the checkpoint
/// (command-line overrides may still change decode/loss settings).
GlobalConfig config_from_checkpoint(const std::string& path,
                                    const std::string& explicit_config,
                                    const std::string& workdir,
                                    const std::vector<std::string>& overrides) {
  GlobalConfig cfg;
  if (!explicit_config.empty()) {
    cfg = load_config(resolve(workdir, explicit_config));
  } else {
    cfg = parse_config(read_checkpoint_info(path).config_text);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

int cmd_synth(const std::string& workdir, const GlobalConfig& cfg,
              const std::string& out, int64_t train_count,
              int64_t test_count) {
  const std::string root = resolve(workdir, out);
  struct SplitPlan {
    const char* name;
    int64_t count;
  };
  for (const SplitPlan plan :
       {SplitPlan{"train", train_count}, SplitPlan{"test", test_count}}) {
    if (plan.count <= 0) continue;
    const auto rep = generate_dataset(cfg.scene, plan.count, plan.name, root);
    std::string boxes;
    for (const auto& [cls, n] : rep.class_boxes)
      boxes += strfmt(" class%d=%lld", cls, (long long)n);
    std::cout << strfmt("%s: %lld images (%lld fault)%s\n", plan.name,
                        (long long)rep.count, (long long)rep.fault_images,
                        boxes.c_str());
  }
  std::cout << "dataset written to " << root << "\n";
  return 0;
}

int cmd_train(const std::string& workdir, GlobalConfig cfg,
              const std::string& out, const std::string& resume,
              int64_t log_every) {
  cfg.train.dataset = resolve(workdir, cfg.train.dataset);
  const std::string out_dir = resolve(workdir, out);
  const std::string resume_path =
      resume.empty() ? "" : resolve(workdir, resume);
  const auto result = train(
      cfg, out_dir, resume_path, [&](const IterationStats& s) {
        if (log_every > 0 && (s.iteration + 1) % log_every == 0)
          std::cout << strfmt(
              "iter %lld/%lld  loss %.4f  (cls %.4f l1 %.4f giou %.4f)  lr "
              "%g\n",
              (long long)(s.iteration + 1),
              (long long)cfg.train.total_iterations, s.loss.total, s.loss.cls,
              s.loss.l1, s.loss.giou, s.lr);
      });
  std::cout << strfmt("trained %lld iterations in %.1f s\n",
                      (long long)result.iterations, result.seconds);
  std::cout << "final checkpoint: " << result.final_checkpoint << "\n";
  std::cout << "loss curve: " << result.curve_path << "\n";
  return 0;
}

int cmd_eval(const std::string& workdir, const std::string& checkpoint,
             const std::string& config_path,
             const std::vector<std::string>& overrides,
             const std::string& dataset, const std::string& split,
             const std::string& out, bool with_nms) {
  const std::string ckpt = resolve(workdir, checkpoint);
  const GlobalConfig cfg =
      config_from_checkpoint(ckpt, config_path, workdir, overrides);
  Detector<float> det(cfg.detector);
  load_checkpoint(det.store(), ckpt);
  const Dataset data = load_dataset(resolve(workdir, dataset), split);
  const EvalOutput ev = evaluate(det, data, cfg, with_nms);

  const auto& m = ev.metrics;
  std::cout << strfmt("images: %lld (fault %lld / normal %lld)%s\n",
                      (long long)ev.images, (long long)m.m, (long long)m.n,
                      with_nms ? "  [baseline suppression applied]" : "");
  std::cout << strfmt(
      "predicted fault: %lld (false %lld), predicted normal: %lld (missed "
      "%lld)\n",
      (long long)m.a, (long long)m.b, (long long)m.c, (long long)m.d);
  std::cout << strfmt("CDR %.4f  FDR %.4f  MDR %.4f\n", m.cdr, m.fdr, m.mdr);
  std::cout << strfmt("decode->suppression no-op fraction: %.4f\n",
                      ev.nms_noop_fraction);
  if (!out.empty()) {
    const fs::path dir = resolve(workdir, out);
    fs::create_directories(dir);
    write_text(dir / "detections.txt", ev.detections_text);
    write_text(dir / "metrics.txt",
               render_metrics(m, ev.nms_noop_fraction, ev.images,
                              cfg.score_threshold));
    std::cout << "wrote " << (dir / "detections.txt").string() << " and "
              << (dir / "metrics.txt").string() << "\n";
  }
  return 0;
}

int cmd_bench(const std::string& workdir, const std::string& checkpoint,
              const std::string& config_path,
              const std::vector<std::string>& overrides,
              const std::string& dataset, const std::string& split,
              bool with_nms, int64_t stress_boxes, int64_t reps,
              int64_t warmup, int64_t max_images, int64_t train_steps,
              bool multi_thread) {
  const std::string ckpt = resolve(workdir, checkpoint);
  const GlobalConfig cfg =
      config_from_checkpoint(ckpt, config_path, workdir, overrides);
  Detector<float> det(cfg.detector);
  load_checkpoint(det.store(), ckpt);
  const Dataset data = load_dataset(resolve(workdir, dataset), split);

  const BenchReport rep =
      bench_inference(det, data, cfg, with_nms, reps, warmup, max_images,
                      ckpt, !multi_thread);
  std::cout << strfmt("images: %lld  repetitions: %lld  (%s)\n",
                      (long long)rep.images, (long long)rep.repetitions,
                      multi_thread ? "parallel kernels" : "single thread");
  std::cout << strfmt("inference: mean %.3f ms/image, median %.3f ms/image\n",
                      1e3 * rep.mean_infer_s, 1e3 * rep.median_infer_s);
  if (with_nms)
    std::cout << strfmt("suppression stage: %.4f ms/image\n",
                        1e3 * rep.nms_stage_s);
  std::string hist;
  for (const auto& [count, images] : rep.detections_histogram)
    hist += strfmt(" %lld:%lld", (long long)count, (long long)images);
  std::cout << "detections/image histogram:" << hist << "\n";
  std::cout << strfmt("model size: %lld bytes  peak rss: %lld kB\n",
                      (long long)rep.model_size_bytes,
                      (long long)rep.peak_rss_kb);

  if (train_steps > 0) {
    GlobalConfig tcfg = cfg;
    const double step_s = bench_train_step(tcfg, train_steps);
    std::cout << strfmt("train step: %.3f ms (batch %lld, %lld steps)\n",
                        1e3 * step_s, (long long)cfg.train.batch_size,
                        (long long)train_steps);
  }

  if (stress_boxes > 0) {
    const StressReport large = nms_stress(stress_boxes, cfg.nms_iou, 42);
    std::vector<double> small_times;
    for (int i = 0; i < 5; ++i)
      small_times.push_back(nms_stress(100, cfg.nms_iou, 42).seconds);
    std::sort(small_times.begin(), small_times.end());
    const double small = small_times[small_times.size() / 2];
    std::cout << strfmt(
        "suppression stress: %lld boxes -> %lld kept in %.4f s; 100 boxes in "
        "%.6f s (ratio %.0fx)\n",
        (long long)large.boxes, (long long)large.kept, large.seconds, small,
        large.seconds / std::max(small, 1e-12));
    if (with_nms)
      std::cout << strfmt(
          "per-image total with stress suppression: %.3f ms (vs %.3f ms "
          "without)\n",
          1e3 * (rep.mean_infer_s + large.seconds), 1e3 * rep.mean_infer_s);
  }
  return 0;
}

int cmd_analyze(const GlobalConfig& cfg, const std::vector<int64_t>& rates,
                int64_t kernel, bool detail) {
  Detector<float> det(cfg.detector);
  std::cout << "trainable parameters by module:\n";
  for (const auto& [name, count] :
       count_parameters_by_prefix(det.store(), detail ? 2 : 1))
    std::cout << strfmt("  %-28s %10lld\n", name.c_str(), (long long)count);
  std::cout << strfmt("  %-28s %10lld\n", "total",
                      (long long)count_parameters(det.store()));

  // Bottleneck-vs-dense arithmetic for the configured pyramid width.
  ParamStore<float> scratch;
  Rng rng(1);
  FbmBranch<float> branch(scratch, "branch", cfg.detector.ffp, rng);
  const int64_t branch_params = branch.parameter_count();
  ConvSpec dense;
  dense.in_channels = cfg.detector.ffp.pyramid_channels;
  dense.out_channels = cfg.detector.ffp.pyramid_channels;
  dense.kernel = 3;
  dense.padding = 1;
  dense.bias = false;
  const int64_t dense_params = dense.parameter_count();
  const double ratio = double(dense_params) / double(branch_params);
  std::cout << strfmt("bottleneck branch parameters: %lld\n",
                      (long long)branch_params);
  std::cout << strfmt("dense 3x3 %lldx%lld reference: %lld\n",
                      (long long)dense.in_channels,
                      (long long)dense.out_channels, (long long)dense_params);
  std::cout << strfmt("dense/branch ratio: %.2f\n", ratio);

  const auto rate_list = rates.empty() ? cfg.detector.ffp.dfb_rates : rates;
  const auto hdc = hdc_check(rate_list, kernel);
  std::string ls, rs;
  for (size_t i = 0; i < hdc.max_gap.size(); ++i) {
    ls += (i ? " " : "") + std::to_string(hdc.max_gap[i]);
    rs += (i ? "," : "") + std::to_string(rate_list[i]);
  }
  std::cout << strfmt("dilation rates: %s (kernel %lld)\n", rs.c_str(),
                      (long long)kernel);
  std::cout << "L: " << ls << "\n";
  std::cout << "gridding: " << (hdc.gridding ? "yes" : "no") << "\n";

  if (ratio <= 56.0) {
    std::cerr << "analysis check failed: dense/branch ratio must exceed 56\n";
    return 1;
  }
  return 0;
}

int cmd_viz(const std::string& workdir, const std::string& checkpoint,
            const std::string& config_path,
            const std::vector<std::string>& overrides,
            const std::string& image_path, const std::string& tap, int level,
            const std::string& out) {
  require<ConfigError>(level >= 3 && level <= 5,
                       "--level must be 3, 4 or 5");
  const int idx = level - 3;
  const std::string ckpt = resolve(workdir, checkpoint);
  const GlobalConfig cfg =
      config_from_checkpoint(ckpt, config_path, workdir, overrides);
  Detector<float> det(cfg.detector);
  load_checkpoint(det.store(), ckpt);

  const ImageU8 img = read_ppm(resolve(workdir, image_path));
  auto x = stack_images({pad_to_stride(image_to_tensor<float>(img), 32)});

  NoGradGuard guard;
  const auto c = det.backbone().forward(x, false);
  auto& ffp = det.ffp();
  auto module_out = [&](int lv, const Tensor<float>& t) {
    if (const auto* d = ffp.dfb(lv)) return d->forward(t);
    return ffp.fbm(lv)->forward(t);
  };
  // Rebuild the top-down pass so intermediate maps are addressable.
  std::array<Tensor<float>, 3> fea_in, fea_out, merged;
  for (int lv = 0; lv < 3; ++lv) {
    fea_in[lv] = c[lv];
    fea_out[lv] = ffp.fea(lv).forward(c[lv]);
  }
  merged[2] = fea_out[2];
  auto p5 = module_out(2, merged[2]);
  merged[1] = add(fea_out[1], upsample_nearest_2x(p5));
  auto p4 = module_out(1, merged[1]);
  merged[0] = add(fea_out[0], upsample_nearest_2x(p4));

  Tensor<float> map;
  if (tap == "fea_pre") {
    map = fea_in[idx];
  } else if (tap == "fea_post") {
    map = fea_out[idx];
  } else if (tap == "dfb_branch" || tap == "dfb_out") {
    const auto* d = ffp.dfb(idx);
    require<ConfigError>(
        d != nullptr,
        strfmt("level %d hosts no dilated module; taps dfb_* need one",
               level));
    map = tap == "dfb_branch" ? d->dilated_forward(merged[idx])
                              : d->forward(merged[idx]);
  } else {
    require<ConfigError>(false,
                         "unknown --tap (use fea_pre, fea_post, dfb_branch "
                         "or dfb_out)");
  }

  const fs::path dir = resolve(workdir, out);
  fs::create_directories(dir);
  const fs::path file =
      dir / strfmt("%s_level%d.pgm", tap.c_str(), level);
  dump_average_feature_map(map, file.string());
  std::cout << "wrote " << file.string() << strfmt(" (%lldx%lld, %lld ch)\n",
                                                   (long long)map.dim(3),
                                                   (long long)map.dim(2),
                                                   (long long)map.dim(1));
  return 0;
}

int cmd_check(const std::string& workdir, const std::string& scratch) {
  AcceptanceOptions opt;
  opt.workdir = resolve(workdir, scratch);
  opt.cli_path = fs::read_symlink("/proc/self/exe").string();
  const auto report = run_acceptance(opt);
  return report.all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* t = std::getenv("FFPDET_THREADS")) {
    const int n = std::atoi(t);
    if (n > 0) kernels::set_max_threads(n);
  }

  CLI::App app{
      "ffpdet: fault detection on synthetic freight-imagery — dataset "
      "synthesis, training, evaluation, benchmarks and analysis"};
  app.require_subcommand(1);
  std::string workdir = ".";
  app.add_option("--workdir", workdir,
                 "directory all relative paths resolve against");

  // Options shared by subcommands that build a config.
  struct Common {
    std::string config;
    std::vector<std::string> overrides;
  };
  auto add_common = [](CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "structured-text config file");
    sub->add_option("overrides", c.overrides,
                    "section.key=value config overrides");
  };

  int rc = 0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  Common synth_c;
  std::string synth_out, synth_preset;
  int64_t synth_train = 100, synth_test = 0;
  synth->add_option("--out", synth_out, "dataset root directory")->required();
  synth->add_option("--train", synth_train, "training image count");
  synth->add_option("--test", synth_test, "test image count");
  synth->add_option("--preset", synth_preset,
                    "scene preset: bogie-key, dust-collector, fastening-bolt");
  add_common(synth, synth_c);
  synth->callback([&] {
    const auto cfg =
        build_config(workdir, synth_c.config, synth_preset, synth_c.overrides);
    rc = cmd_synth(workdir, cfg, synth_out, synth_train, synth_test);
  });

  auto* tr = app.add_subcommand("train", "train a detector");
  Common tr_c;
  std::string tr_out = "run", tr_resume;
  int64_t tr_log_every = 100;
  tr->add_option("--out", tr_out, "output directory for checkpoints");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->add_option("--log-every", tr_log_every, "progress print period");
  add_common(tr, tr_c);
  tr->callback([&] {
    const auto cfg = build_config(workdir, tr_c.config, "", tr_c.overrides);
    rc = cmd_train(workdir, cfg, tr_out, tr_resume, tr_log_every);
  });

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  Common ev_c;
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  bool ev_nms = false;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--dataset", ev_data, "dataset root")->required();
  ev->add_option("--split", ev_split, "dataset split");
  ev->add_option("--out", ev_out, "directory for detections/metrics files");
  ev->add_flag("--with-nms", ev_nms,
               "apply the baseline suppression pass to the decoded boxes");
  add_common(ev, ev_c);
  ev->callback([&] {
    rc = cmd_eval(workdir, ev_ckpt, ev_c.config, ev_c.overrides, ev_data,
                  ev_split, ev_out, ev_nms);
  });

  auto* be = app.add_subcommand("bench", "timing benchmarks");
  Common be_c;
  std::string be_ckpt, be_data, be_split = "test";
  bool be_nms = false, be_mt = false;
  int64_t be_stress = 0, be_reps = 3, be_warmup = 1, be_max = 16,
          be_train_steps = 0;
  be->add_option("--checkpoint", be_ckpt, "model checkpoint")->required();
  be->add_option("--dataset", be_data, "dataset root")->required();
  be->add_option("--split", be_split, "dataset split");
  be->add_flag("--with-nms", be_nms, "time the suppression stage too");
  be->add_option("--stress-boxes", be_stress,
                 "also time suppression on this many synthetic boxes");
  be->add_option("--reps", be_reps, "timed repetitions per image");
  be->add_option("--warmup", be_warmup, "untimed warmup passes");
  be->add_option("--max-images", be_max, "cap on benchmarked images");
  be->add_option("--train-steps", be_train_steps,
                 "also time this many training steps");
  be->add_flag("--multi-thread", be_mt,
               "keep parallel kernels on while timing");
  add_common(be, be_c);
  be->callback([&] {
    rc = cmd_bench(workdir, be_ckpt, be_c.config, be_c.overrides, be_data,
                   be_split, be_nms, be_stress, be_reps, be_warmup, be_max,
                   be_train_steps, be_mt);
  });

  auto* an = app.add_subcommand("analyze",
                                "parameter counts and dilation admissibility");
  Common an_c;
  std::vector<int64_t> an_rates;
  int64_t an_kernel = 3;
  bool an_detail = false;
  an->add_option("--rates", an_rates, "dilation rates to check")
      ->delimiter(',');
  an->add_option("--kernel", an_kernel, "kernel size for the dilation check");
  an->add_flag("--detail", an_detail, "per-submodule parameter rows");
  add_common(an, an_c);
  an->callback([&] {
    const auto cfg = build_config(workdir, an_c.config, "", an_c.overrides);
    rc = cmd_analyze(cfg, an_rates, an_kernel, an_detail);
  });

  auto* vz = app.add_subcommand("viz", "dump averaged feature maps");
  Common vz_c;
  std::string vz_ckpt, vz_img, vz_tap = "fea_post", vz_out = "viz";
  int vz_level = 5;
  vz->add_option("--checkpoint", vz_ckpt, "model checkpoint")->required();
  vz->add_option("--image", vz_img, "input image (binary PPM)")->required();
  vz->add_option("--tap", vz_tap,
                 "fea_pre | fea_post | dfb_branch | dfb_out");
  vz->add_option("--level", vz_level, "pyramid level: 3, 4 or 5");
  vz->add_option("--out", vz_out, "output directory");
  add_common(vz, vz_c);
  vz->callback([&] {
    rc = cmd_viz(workdir, vz_ckpt, vz_c.config, vz_c.overrides, vz_img,
                 vz_tap, vz_level, vz_out);
  });

  auto* ck = app.add_subcommand("check", "run the full release gate");
  std::string ck_scratch = "acceptance_work";
  ck->add_option("--scratch", ck_scratch, "scratch directory for the gate");
  ck->callback([&] { rc = cmd_check(workdir, ck_scratch); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
