#include "ffpdet/bench.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <sstream>

#include "ffpdet/kernels.hpp"
#include "ffpdet/nms.hpp"
#include "ffpdet/optimizer.hpp"
#include "ffpdet/train.hpp"

namespace ffpdet {

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<Detection> run_image(Detector<float>& det, const Sample& s,
                                 const GlobalConfig& cfg) {
  NoGradGuard ng;
  Tensor<float> padded = pad_to_stride(s.image, 32);
  Tensor<float> batch = stack_images({padded});
  auto grid = det.forward(batch, /*training=*/false);
  return decode_nms_free(grid, 0, cfg.score_threshold, cfg.max_detections);
}

}  // namespace

EvalOutput evaluate(Detector<float>& det, const Dataset& data,
                    const GlobalConfig& cfg, bool with_nms) {
  EvalOutput out;
  out.images = data.size();
  std::vector<ImagePrediction> preds;
  std::vector<ImageTruth> truth;
  std::ostringstream text;
  int64_t noop = 0;
  for (int64_t i = 0; i < data.size(); ++i) {
    const Sample s = data.load(i);
    std::vector<Detection> dets = run_image(det, s, cfg);
    const std::vector<Detection> suppressed = nms(dets, cfg.nms_iou);
    bool unchanged = suppressed.size() == dets.size();
    for (size_t k = 0; unchanged && k < dets.size(); ++k)
      unchanged = suppressed[k].cls == dets[k].cls &&
                  suppressed[k].score == dets[k].score &&
                  suppressed[k].box.x1 == dets[k].box.x1 &&
                  suppressed[k].box.y1 == dets[k].box.y1 &&
                  suppressed[k].box.x2 == dets[k].box.x2 &&
                  suppressed[k].box.y2 == dets[k].box.y2;
    noop += unchanged ? 1 : 0;
    if (with_nms) dets = suppressed;

    for (const auto& d : dets)
      text << s.id << " " << d.cls << " "
           << strfmt("%.6f %.2f %.2f %.2f %.2f", d.score, d.box.x1, d.box.y1,
                     d.box.x2, d.box.y2)
           << "\n";
    preds.push_back({s.id, std::move(dets)});
    truth.push_back({s.id, s.fault});
  }
  out.metrics = compute_metrics(preds, truth, cfg.score_threshold);
  out.detections_text = text.str();
  out.nms_noop_fraction =
      data.size() > 0 ? double(noop) / double(data.size()) : 1.0;
  return out;
}

BenchReport bench_inference(Detector<float>& det, const Dataset& data,
                            const GlobalConfig& cfg, bool with_nms,
                            int64_t repetitions, int64_t warmup,
                            int64_t max_images,
                            const std::string& checkpoint_path,
                            bool single_thread) {
  require<ConfigError>(repetitions >= 1, "benchmark needs >= 1 repetition");
  require<DataError>(data.size() > 0, "benchmark dataset is empty");
  const int64_t images = max_images > 0
                             ? std::min<int64_t>(max_images, data.size())
                             : data.size();

  const int64_t saved_threads = kernels::max_threads();
  if (single_thread) kernels::set_max_threads(1);

  std::vector<Sample> samples;
  samples.reserve(images);
  for (int64_t i = 0; i < images; ++i) samples.push_back(data.load(i));

  BenchReport rep;
  rep.images = images;
  rep.repetitions = repetitions;

  for (int64_t w = 0; w < warmup; ++w)
    run_image(det, samples[w % images], cfg);

  std::vector<double> times;
  times.reserve(images * repetitions);
  double nms_total = 0;
  for (int64_t r = 0; r < repetitions; ++r)
    for (int64_t i = 0; i < images; ++i) {
      const double t0 = now_s();
      std::vector<Detection> dets = run_image(det, samples[i], cfg);
      double t1 = now_s();
      if (with_nms) {
        dets = nms(dets, cfg.nms_iou);
        const double t2 = now_s();
        nms_total += t2 - t1;
        t1 = t2;
      }
      times.push_back(t1 - t0);
      if (r == 0) rep.detections_histogram[(int64_t)dets.size()] += 1;
    }

  if (single_thread) kernels::set_max_threads(saved_threads);

  double sum = 0;
  for (double t : times) sum += t;
  rep.mean_infer_s = sum / double(times.size());
  std::sort(times.begin(), times.end());
  rep.median_infer_s = times[times.size() / 2];
  rep.nms_stage_s = with_nms ? nms_total / double(times.size()) : 0.0;
  rep.peak_rss_kb = peak_rss_kb();
  if (!checkpoint_path.empty()) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(checkpoint_path, ec);
    require<IoError>(!ec, "cannot stat checkpoint " + checkpoint_path);
    rep.model_size_bytes = (int64_t)size;
  }
  return rep;
}

double bench_train_step(const GlobalConfig& cfg, int64_t steps) {
  require<ConfigError>(steps >= 1, "need at least one timed step");
  GlobalConfig c = cfg;
  c.train.total_iterations = std::max<int64_t>(1, c.train.total_iterations);
  c.validate();
  Detector<float> det(c.detector);
  AdamW<float> opt(det.store(), (float)c.train.base_lr,
                   (float)c.train.weight_decay);
  SceneSpec scene = c.scene;
  scene.fault_probability = 1.0;
  std::vector<Tensor<float>> images;
  std::vector<std::vector<GtBox>> gts;
  for (int64_t i = 0; i < c.train.batch_size; ++i) {
    Sample s = render_scene(scene, "bench", i);
    images.push_back(pad_to_stride(s.image, 32));
    gts.push_back(s.boxes);
  }
  Tensor<float> batch = stack_images(images);

  // One untimed pass to absorb allocation effects.
  auto warm = [&]() {
    auto grid = det.forward(batch, true);
    auto res = total_loss(grid, gts, (double)scene.width,
                          (double)scene.height, c.loss);
    opt.zero_grad();
    res.loss.backward();
    opt.step();
  };
  warm();
  const double t0 = now_s();
  for (int64_t i = 0; i < steps; ++i) warm();
  return (now_s() - t0) / double(steps);
}

StressReport nms_stress(int64_t n_boxes, double iou_threshold, uint64_t seed) {
  require<ConfigError>(n_boxes >= 1, "stress set must be nonempty");
  Rng rng(seed);
  std::vector<Detection> dets;
  dets.reserve(n_boxes);
  for (int64_t i = 0; i < n_boxes; ++i) {
    const double x = rng.uniform(0.0, 640.0), y = rng.uniform(0.0, 480.0);
    const double w = rng.uniform(8.0, 72.0), h = rng.uniform(8.0, 72.0);
    dets.push_back(
        {BBox{x, y, x + w, y + h}, (int)rng.uniform_int(0, 1), rng.uniform()});
  }
  StressReport rep;
  rep.boxes = n_boxes;
  const double t0 = now_s();
  rep.kept = (int64_t)nms(dets, iou_threshold).size();
  rep.seconds = now_s() - t0;
  return rep;
}

int64_t peak_rss_kb() {
  rusage u{};
  if (getrusage(RUSAGE_SELF, &u) != 0) return 0;
  return (int64_t)u.ru_maxrss;
}

}  // namespace ffpdet
