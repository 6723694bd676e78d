#include "ffpdet/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ffpdet/checkpoint.hpp"
#include "ffpdet/optimizer.hpp"

namespace fs = std::filesystem;

namespace ffpdet {

namespace {

constexpr uint64_t kOrderSalt = 0x6f72646572ull;    // shuffle stream
constexpr uint64_t kAugmentSalt = 0x6175676d656eull;  // augmentation stream

std::string fmt_g(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct TrainerState {
  int64_t iteration = 0;
  std::string optimizer_blob;
};

void save_state(const TrainerState& st, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require<IoError>(os.is_open(), "cannot write trainer state " + path);
  os << "FFPSTATE1\n" << st.iteration << "\n";
  os << st.optimizer_blob.size() << "\n";
  os.write(st.optimizer_blob.data(), (std::streamsize)st.optimizer_blob.size());
  require<IoError>(os.good(), "short write on trainer state " + path);
}

TrainerState load_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require<IoError>(is.is_open(), "cannot open trainer state " + path);
  std::string magic;
  std::getline(is, magic);
  require<DataError>(magic == "FFPSTATE1", "not a trainer state file: " + path);
  TrainerState st;
  size_t blob = 0;
  is >> st.iteration >> blob;
  is.get();  // newline
  st.optimizer_blob.resize(blob);
  is.read(st.optimizer_blob.data(), (std::streamsize)blob);
  require<DataError>(is.good() && st.iteration >= 0,
                     "truncated trainer state: " + path);
  return st;
}

/// Keep only the first `lines` lines of the loss curve so a resumed run
/// appends exactly after the checkpointed iteration.
void truncate_curve(const std::string& path, int64_t lines) {
  std::ifstream in(path);
  if (!in.good()) return;
  std::ostringstream kept;
  std::string line;
  for (int64_t i = 0; i < lines && std::getline(in, line); ++i)
    kept << line << "\n";
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept.str();
}

struct Batch {
  Tensor<float> images;
  std::vector<std::vector<GtBox>> gts;
};

Batch assemble(const std::vector<Sample>& samples) {
  std::vector<Tensor<float>> padded;
  Batch b;
  for (const auto& s : samples) {
    padded.push_back(pad_to_stride(s.image, 32));
    b.gts.push_back(s.boxes);
  }
  b.images = stack_images(padded);
  return b;
}

}  // namespace

Tensor<float> pad_to_stride(const Tensor<float>& chw, int64_t stride) {
  require<ShapeError>(chw.rank() == 3, "pad_to_stride expects [C,H,W], got " +
                                           shape_str(chw.shape()));
  const int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  const int64_t ph = (h + stride - 1) / stride * stride;
  const int64_t pw = (w + stride - 1) / stride * stride;
  if (ph == h && pw == w) return chw;
  Tensor<float> out = Tensor<float>::zeros({c, ph, pw});
  const float* src = chw.ptr();
  float* dst = out.ptr();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      std::copy(src + (ch * h + y) * w, src + (ch * h + y + 1) * w,
                dst + (ch * ph + y) * pw);
  return out;
}

Tensor<float> stack_images(const std::vector<Tensor<float>>& images) {
  require<ShapeError>(!images.empty(), "cannot stack an empty image list");
  const Shape one = images[0].shape();
  for (const auto& im : images)
    require<ShapeError>(im.shape() == one,
                        "stack_images needs equal shapes, got " +
                            shape_str(one) + " and " + shape_str(im.shape()));
  Tensor<float> out = Tensor<float>::zeros(
      {(int64_t)images.size(), one[0], one[1], one[2]});
  const int64_t per = images[0].numel();
  for (size_t i = 0; i < images.size(); ++i)
    std::copy(images[i].ptr(), images[i].ptr() + per, out.ptr() + i * per);
  return out;
}

TrainResult train(const GlobalConfig& cfg, const std::string& out_dir,
                  const std::string& resume_from,
                  const std::function<void(const IterationStats&)>& on_iter) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require<IoError>(!ec, "cannot create output directory " + out_dir);

  Detector<float> det(cfg.detector);
  AdamW<float> opt(det.store(), (float)cfg.train.base_lr,
                   (float)cfg.train.weight_decay);
  const Dataset data = load_dataset(cfg.train.dataset, "train");
  const std::string config_text = render_config(cfg);
  const std::string curve_path = out_dir + "/loss_curve.txt";

  int64_t start_iter = 0;
  if (!resume_from.empty()) {
    load_checkpoint(det.store(), resume_from);
    const TrainerState st = load_state(resume_from + ".state");
    std::istringstream blob(st.optimizer_blob);
    opt.load_state(blob);
    start_iter = st.iteration;
    require<ConfigError>(
        start_iter <= cfg.train.total_iterations,
        strfmt("checkpoint is at iteration %lld, beyond the configured %lld",
               (long long)start_iter, (long long)cfg.train.total_iterations));
    truncate_curve(curve_path, start_iter);
  } else {
    std::ofstream fresh(curve_path, std::ios::trunc);
    require<IoError>(fresh.good(), "cannot write " + curve_path);
  }

  auto save_all = [&](const std::string& stem, int64_t iteration) {
    const std::string path = out_dir + "/" + stem + ".ckpt";
    save_checkpoint(det.store(), config_text, path);
    std::ostringstream blob;
    opt.save_state(blob);
    save_state({iteration, blob.str()}, path + ".state");
    return path;
  };

  TrainResult result;
  result.curve_path = curve_path;
  if (cfg.train.total_iterations == 0) {
    result.final_checkpoint = save_all("model_final", 0);
    result.seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return result;
  }

  std::ofstream curve(curve_path, std::ios::app);
  require<IoError>(curve.good(), "cannot append to " + curve_path);

  const int64_t B = cfg.train.batch_size;
  const int64_t size = data.size();
  int64_t cached_epoch = -1;
  std::vector<int64_t> perm;

  for (int64_t it = start_iter; it < cfg.train.total_iterations; ++it) {
    opt.set_lr((float)cfg.train.lr_at(it));

    std::vector<Sample> samples;
    samples.reserve(B);
    for (int64_t s = 0; s < B; ++s) {
      const int64_t g = it * B + s;
      const int64_t epoch = g / size;
      if (epoch != cached_epoch) {
        perm = data.shuffled_order(mix64(cfg.train.seed ^ kOrderSalt,
                                         (uint64_t)epoch));
        cached_epoch = epoch;
      }
      Sample sample = data.load(perm[g % size]);
      samples.push_back(augment(sample, cfg.train.augment,
                                mix64(cfg.train.seed ^ kAugmentSalt,
                                      (uint64_t)g)));
    }
    const Batch batch = assemble(samples);

    auto grid = det.forward(batch.images, /*training=*/true);
    auto res = total_loss(grid, batch.gts, (double)data.width(),
                          (double)data.height(), cfg.loss);
    require<TrainError>(
        std::isfinite(res.parts.total),
        strfmt("loss diverged at iteration %lld: total=%g cls=%g l1=%g giou=%g",
               (long long)it, res.parts.total, res.parts.cls, res.parts.l1,
               res.parts.giou));

    opt.zero_grad();
    res.loss.backward();
    opt.step();

    curve << it << " " << fmt_g(res.parts.total) << " " << fmt_g(res.parts.cls)
          << " " << fmt_g(res.parts.l1) << " " << fmt_g(res.parts.giou) << " "
          << fmt_g(cfg.train.lr_at(it)) << "\n";

    result.last = res.parts;
    if (on_iter) on_iter({it, res.parts, cfg.train.lr_at(it)});
    if ((it + 1) % cfg.train.checkpoint_every == 0 &&
        it + 1 < cfg.train.total_iterations)
      save_all(strfmt("ckpt_%07lld", (long long)(it + 1)), it + 1);
  }
  curve.flush();
  require<IoError>(curve.good(), "write failed on " + curve_path);

  result.iterations = cfg.train.total_iterations - start_iter;
  result.final_checkpoint =
      save_all("model_final", cfg.train.total_iterations);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

SmokeReport overfit_smoke(const GlobalConfig& cfg, int64_t max_steps,
                          double threshold) {
  GlobalConfig c = cfg;
  c.train.total_iterations = std::max<int64_t>(c.train.total_iterations, 1);
  c.validate();
  Detector<float> det(c.detector);
  AdamW<float> opt(det.store(), (float)c.train.base_lr,
                   (float)c.train.weight_decay);

  SceneSpec scene = c.scene;
  scene.fault_probability = 1.0;  // every smoke sample carries a target
  std::vector<Sample> samples;
  for (int64_t i = 0; i < c.train.batch_size; ++i)
    samples.push_back(render_scene(scene, "smoke", i));
  const Batch batch = assemble(samples);

  SmokeReport report;
  report.threshold = threshold;
  for (int64_t step = 0; step < max_steps; ++step) {
    auto grid = det.forward(batch.images, /*training=*/true);
    auto res = total_loss(grid, batch.gts, (double)c.scene.width,
                          (double)c.scene.height, c.loss);
    report.steps = step + 1;
    report.final_loss = res.parts.total;
    if (!std::isfinite(res.parts.total)) break;
    if (res.parts.total < threshold) {
      report.passed = true;
      break;
    }
    opt.zero_grad();
    res.loss.backward();
    opt.step();
  }
  return report;
}

}  // namespace ffpdet
