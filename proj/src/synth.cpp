#include "ffpdet/synth.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ffpdet/config.hpp"

namespace fs = std::filesystem;

namespace ffpdet {

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Grayscale paint target with optional painted-pixel bounds tracking.
class Canvas {
 public:
  Canvas(int64_t w, int64_t h, float tone)
      : w_(w), h_(h), g_(w * h, tone) {}

  int64_t width() const { return w_; }
  int64_t height() const { return h_; }
  float at(int64_t x, int64_t y) const { return g_[y * w_ + x]; }

  struct Bounds {
    int64_t x0 = 0, y0 = 0, x1 = -1, y1 = -1;
    bool any() const { return x1 >= x0 && y1 >= y0; }
    BBox box() const {
      return BBox{double(x0), double(y0), double(x1 + 1), double(y1 + 1)};
    }
  };

  void start_trace() { trace_ = Bounds{w_, h_, -1, -1}; }
  Bounds take_trace() {
    Bounds b = trace_;
    trace_ = Bounds{};
    tracing_ = false;
    return b;
  }
  void stop_trace() { tracing_ = false; }
  void resume_trace() { tracing_ = true; }

  void set(int64_t x, int64_t y, float v) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    g_[y * w_ + x] = v;
    if (tracing_) {
      trace_.x0 = std::min(trace_.x0, x);
      trace_.y0 = std::min(trace_.y0, y);
      trace_.x1 = std::max(trace_.x1, x);
      trace_.y1 = std::max(trace_.y1, y);
    }
  }

  void blend(int64_t x, int64_t y, float v, float alpha) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    float& p = g_[y * w_ + x];
    set(x, y, p * (1.0f - alpha) + v * alpha);
  }

  void fill_rect(int64_t x0, int64_t y0, int64_t x1, int64_t y1, float v) {
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = x0; x < x1; ++x) set(x, y, v);
  }

  void fill_disc(double cx, double cy, double r, float v) {
    for (int64_t y = (int64_t)std::floor(cy - r); y <= (int64_t)std::ceil(cy + r); ++y)
      for (int64_t x = (int64_t)std::floor(cx - r); x <= (int64_t)std::ceil(cx + r); ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (dx * dx + dy * dy <= r * r) set(x, y, v);
      }
  }

  void blend_rect(int64_t x0, int64_t y0, int64_t x1, int64_t y1, float v,
                  float alpha) {
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = x0; x < x1; ++x) blend(x, y, v, alpha);
  }

 private:
  int64_t w_, h_;
  std::vector<float> g_;
  Bounds trace_;
  bool tracing_ = false;

  friend class TraceScope;
};

/// RAII painted-bounds capture.
class TraceScope {
 public:
  explicit TraceScope(Canvas& c) : c_(c) {
    c_.start_trace();
    c_.tracing_ = true;
  }
  Canvas::Bounds finish() { return c_.take_trace(); }

 private:
  Canvas& c_;
};

struct PartRect {
  int64_t x0, y0, x1, y1;
  int64_t w() const { return x1 - x0; }
  int64_t h() const { return y1 - y0; }
};

// Healthy component glyph. Tones are relative to the scene base.
void paint_part(Canvas& c, const PartRect& r, ShapeFamily family, float base,
                Rng& rng) {
  const float part = base + 0.27f + 0.06f * (float)rng.uniform();
  const float dark = base - 0.35f;
  switch (family) {
    case ShapeFamily::rectangle: {
      c.fill_rect(r.x0, r.y0, r.x1, r.y1, part);
      const int64_t sr = std::max<int64_t>(1, r.h() / 6);
      const int64_t cy = (r.y0 + r.y1) / 2;
      c.fill_disc(double(r.x0 + sr * 2), double(cy), double(sr), dark);
      c.fill_disc(double(r.x1 - sr * 2), double(cy), double(sr), dark);
      break;
    }
    case ShapeFamily::disc: {
      const double cx = (r.x0 + r.x1) / 2.0, cy = (r.y0 + r.y1) / 2.0;
      const double rad = std::min(r.w(), r.h()) / 2.0;
      c.fill_disc(cx, cy, rad, part);
      c.fill_disc(cx, cy, rad * 0.28, dark);
      break;
    }
    case ShapeFamily::bolt: {
      // Head block on the left, threaded shaft to the right.
      const int64_t head_w = std::max<int64_t>(2, (int64_t)(r.w() * 0.3));
      c.fill_rect(r.x0, r.y0, r.x0 + head_w, r.y1, part);
      const int64_t sh0 = r.y0 + (int64_t)(r.h() * 0.25);
      const int64_t sh1 = r.y1 - (int64_t)(r.h() * 0.25);
      c.fill_rect(r.x0 + head_w, std::min(sh0, r.y1 - 1), r.x1,
                  std::max(sh1, sh0 + 1), part);
      for (int64_t x = r.x0 + head_w + 1; x < r.x1; x += 3)
        c.fill_rect(x, std::min(sh0, r.y1 - 1), x + 1,
                    std::max(sh1, sh0 + 1), part - 0.18f);
      break;
    }
  }
}

// Damage: a wide jagged gouge band of the part erased to a deep-shadow tone
// (clearly darker than any occluder shading), its edges wandering a couple
// of pixels per scanline like a fracture, plus stray crack pixels. Painted
// inside the part rect, so the traced bounds of the part are unchanged.
void paint_break(Canvas& c, const PartRect& r, float gouge, Rng& rng) {
  const bool vertical = rng.bernoulli(0.5);
  auto wobble = [&](int64_t& edge) {
    edge += rng.uniform_int(-1, 1);
  };
  if (vertical) {
    const int64_t bw =
        std::max<int64_t>(3, (int64_t)(r.w() * rng.uniform(0.33, 0.5)));
    const int64_t off = (int64_t)(r.w() * rng.uniform(0.12, 0.62));
    int64_t x0 = std::min(r.x0 + off, r.x1 - bw);
    for (int64_t y = r.y0; y < r.y1; ++y) {
      wobble(x0);
      x0 = std::clamp<int64_t>(x0, r.x0, r.x1 - bw);
      c.fill_rect(x0, y, x0 + bw, y + 1, gouge);
    }
    for (int k = 0; k < 10; ++k)
      c.set(x0 + rng.uniform_int(-2, bw + 1),
            r.y0 + rng.uniform_int(0, r.h() - 1), gouge - 0.05f);
  } else {
    const int64_t bh =
        std::max<int64_t>(3, (int64_t)(r.h() * rng.uniform(0.33, 0.5)));
    const int64_t off = (int64_t)(r.h() * rng.uniform(0.12, 0.62));
    int64_t y0 = std::min(r.y0 + off, r.y1 - bh);
    for (int64_t x = r.x0; x < r.x1; ++x) {
      wobble(y0);
      y0 = std::clamp<int64_t>(y0, r.y0, r.y1 - bh);
      c.fill_rect(x, y0, x + 1, y0 + bh, gouge);
    }
    for (int k = 0; k < 10; ++k)
      c.set(r.x0 + rng.uniform_int(0, r.w() - 1),
            y0 + rng.uniform_int(-2, bh + 1), gouge - 0.05f);
  }
}

ImageU8 render_impl(const SceneSpec& spec, const std::string& split,
                    int64_t index, std::vector<GtBox>& boxes,
                    RenderTrace* out_trace) {
  spec.validate();
  Rng rng(mix64(mix64(spec.seed, fnv1a(split)), (uint64_t)index));
  const int64_t W = spec.width, H = spec.height;

  const float base = 0.42f + 0.16f * (float)rng.uniform();
  Canvas c(W, H, base);

  // Background: gentle vertical gradient plus horizontal banding.
  {
    const float grad = 0.05f * (float)rng.uniform(-1.0, 1.0);
    const double freq = rng.uniform(1.0, 4.0);
    const double phase = rng.uniform(0.0, 6.28318);
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const float band =
            0.03f * (float)std::sin(6.28318 * freq * x / double(W) + phase);
        c.set(x, y, base + grad * (float(y) / float(H) - 0.5f) + band);
      }
  }

  // Clutter blobs (painted before the components, which cover them).
  {
    const int64_t blobs =
        (int64_t)std::llround(spec.clutter_density * double(W * H) / 10000.0);
    for (int64_t k = 0; k < blobs; ++k) {
      const float tone = base + 0.15f * (float)rng.uniform(-1.0, 1.0);
      const int64_t bx = rng.uniform_int(0, W - 1);
      const int64_t by = rng.uniform_int(0, H - 1);
      if (rng.bernoulli(0.5)) {
        c.fill_rect(bx, by, bx + rng.uniform_int(2, 9), by + rng.uniform_int(2, 9),
                    tone);
      } else {
        c.fill_disc(double(bx), double(by), rng.uniform(1.5, 4.5), tone);
      }
    }
  }

  // Component slots, left to right.
  const int64_t count =
      rng.uniform_int(spec.min_components, spec.max_components);
  const double margin = 0.04 * double(W);
  const double cell = (double(W) - 2 * margin) / double(count);

  // Which components are faulty, and how.
  std::vector<int> fault_class(count, -1);
  if (rng.bernoulli(spec.fault_probability)) {
    std::vector<int> order((size_t)count);
    for (int i = 0; i < count; ++i) order[i] = i;
    for (int i = int(count) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);
    int faulty = 1;
    for (int i = 1; i < count; ++i)
      if (rng.bernoulli(0.3)) ++faulty;
    for (int i = 0; i < faulty; ++i)
      fault_class[order[i]] = rng.bernoulli(0.5) ? kClassBroken : kClassMissing;
  }

  boxes.clear();
  if (out_trace) {
    out_trace->component_bounds.clear();
    out_trace->component_fault.clear();
  }

  for (int64_t slot = 0; slot < count; ++slot) {
    const double cx =
        margin + cell * (double(slot) + 0.5) + cell * rng.uniform(-0.08, 0.08);
    const double cy = double(H) * (0.5 + rng.uniform(-0.12, 0.12));
    double ph = spec.component_scale * double(H) * rng.uniform(0.85, 1.15);
    double pw = ph * spec.component_aspect * rng.uniform(0.9, 1.1);
    pw = std::min(pw, 0.74 * cell);
    ph = std::min(ph, 0.7 * double(H));
    pw = std::max(pw, 6.0);
    ph = std::max(ph, 6.0);

    const PartRect part{(int64_t)std::llround(cx - pw / 2),
                        (int64_t)std::llround(cy - ph / 2),
                        (int64_t)std::llround(cx + pw / 2),
                        (int64_t)std::llround(cy + ph / 2)};
    const int64_t pad =
        std::max<int64_t>(2, (int64_t)std::llround(0.12 * std::min(pw, ph)));
    const PartRect mount{part.x0 - pad, part.y0 - pad, part.x1 + pad,
                         part.y1 + pad};

    const float frame = base - 0.22f;
    const float recess = base - 0.13f;
    const float hole = base - 0.35f;
    const int fault = fault_class[slot];

    Canvas::Bounds bounds;
    if (fault == kClassMissing) {
      // Mount only: frame, recess, and the empty mounting holes.
      TraceScope trace(c);
      c.fill_rect(mount.x0, mount.y0, mount.x1, mount.y1, frame);
      c.fill_rect(part.x0, part.y0, part.x1, part.y1, recess);
      const int64_t sr = std::max<int64_t>(1, part.h() / 7);
      const int64_t hy = (part.y0 + part.y1) / 2;
      c.fill_disc(double(part.x0 + sr * 2), double(hy), double(sr), hole);
      c.fill_disc(double(part.x1 - sr * 2), double(hy), double(sr), hole);
      bounds = trace.finish();
    } else {
      // Mount painted untraced; the part glyph is the traced entity.
      c.fill_rect(mount.x0, mount.y0, mount.x1, mount.y1, frame);
      c.fill_rect(part.x0, part.y0, part.x1, part.y1, recess);
      TraceScope trace(c);
      paint_part(c, part, spec.family, base, rng);
      if (fault == kClassBroken) {
        c.stop_trace();
        paint_break(c, part, hole, rng);
        c.resume_trace();
      }
      bounds = trace.finish();
    }

    if (bounds.any()) {
      if (fault >= 0) boxes.push_back({fault, bounds.box()});
      if (out_trace) {
        out_trace->component_bounds.push_back(bounds.box());
        out_trace->component_fault.push_back(fault);
      }
    }
  }

  // Occluder: a semi-transparent dark band across the scene.
  if (rng.bernoulli(spec.occluder_probability)) {
    const int64_t bw = (int64_t)(double(W) * rng.uniform(0.04, 0.1));
    const int64_t x0 = rng.uniform_int(0, W - bw - 1);
    c.blend_rect(x0, 0, x0 + bw, H, 0.12f, 0.45f);
  }

  // Photometrics: global brightness shift, per-pixel noise, slight tint.
  const float bright = 0.04f * (float)rng.uniform(-1.0, 1.0);
  std::array<float, 3> tint;
  for (auto& t : tint) t = 0.008f * (float)rng.uniform(-1.0, 1.0);

  ImageU8 img;
  img.width = W;
  img.height = H;
  img.data.resize((size_t)(3 * W * H));
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      const float v =
          c.at(x, y) + bright + (float)rng.normal() * (float)spec.noise_level;
      for (int ch = 0; ch < 3; ++ch) {
        const float u = std::min(1.0f, std::max(0.0f, v + tint[ch]));
        img.data[(y * W + x) * 3 + ch] = (uint8_t)std::lround(u * 255.0f);
      }
    }
  return img;
}

std::string sample_name(int64_t index) {
  return strfmt("%06lld.ppm", (long long)index);
}

std::string fmt_coord(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

SceneSpec preset_scene(const std::string& name) {
  std::string n = name;
  for (char& ch : n)
    if (ch == '_') ch = '-';
  SceneSpec s;
  if (n == "bogie-key") {
    s.width = 176;
    s.height = 128;
    s.min_components = 2;
    s.max_components = 4;
    s.family = ShapeFamily::rectangle;
    s.component_scale = 0.22;
    s.component_aspect = 1.35;
    s.occluder_probability = 0.05;
    s.clutter_density = 0.25;
  } else if (n == "dust-collector") {
    s.width = 352;
    s.height = 256;
    s.min_components = 1;
    s.max_components = 3;
    s.family = ShapeFamily::disc;
    s.component_scale = 0.4;
    s.component_aspect = 1.0;
    s.occluder_probability = 0.12;
    s.clutter_density = 0.15;
    s.noise_level = 0.025;
  } else if (n == "fastening-bolt") {
    s.width = 352;
    s.height = 256;
    s.min_components = 2;
    s.max_components = 5;
    s.family = ShapeFamily::bolt;
    s.component_scale = 0.16;
    s.component_aspect = 2.6;
    s.occluder_probability = 0.1;
    s.clutter_density = 0.2;
  } else {
    throw ConfigError(
        "unknown scene preset '" + name +
        "' (expected bogie-key, dust-collector or fastening-bolt)");
  }
  return s;
}

Sample render_scene(const SceneSpec& spec, const std::string& split,
                    int64_t index, RenderTrace* trace) {
  Sample s;
  std::vector<GtBox> boxes;
  const ImageU8 img = render_impl(spec, split, index, boxes, trace);
  s.id = sample_name(index);
  s.id = s.id.substr(0, s.id.size() - 4);
  s.image = image_to_tensor(img);
  s.boxes = std::move(boxes);
  s.fault = !s.boxes.empty();
  return s;
}

DatasetReport generate_dataset(const SceneSpec& spec, int64_t count,
                               const std::string& split,
                               const std::string& root) {
  spec.validate();
  require<ConfigError>(count >= 1, "dataset needs at least one sample");
  require<ConfigError>(!split.empty() && split.find('/') == std::string::npos,
                       "split must be a bare name like train or test");
  const fs::path images_dir = fs::path(root) / split / "images";
  std::error_code ec;
  fs::create_directories(images_dir, ec);
  require<IoError>(!ec, "cannot create dataset directory " +
                            images_dir.string() + ": " + ec.message());

  std::ostringstream index_text;
  DatasetReport report;
  report.count = count;
  for (int64_t i = 0; i < count; ++i) {
    std::vector<GtBox> boxes;
    const ImageU8 img = render_impl(spec, split, i, boxes, nullptr);
    const std::string name = sample_name(i);
    write_ppm(img, (images_dir / name).string());
    index_text << name << " " << (boxes.empty() ? 0 : 1);
    for (const auto& b : boxes) {
      index_text << " " << b.cls << " " << fmt_coord(b.box.x1) << " "
                 << fmt_coord(b.box.y1) << " " << fmt_coord(b.box.x2) << " "
                 << fmt_coord(b.box.y2);
      report.class_boxes[b.cls] += 1;
    }
    index_text << "\n";
    if (!boxes.empty()) report.fault_images += 1;
  }

  {
    std::ofstream out(fs::path(root) / split / "annotations.txt");
    require<IoError>(out.good(), "cannot write annotations for " + root);
    out << index_text.str();
    require<IoError>(out.good(), "write failed for annotations in " + root);
  }
  {
    std::ofstream out(fs::path(root) / "spec.txt");
    require<IoError>(out.good(), "cannot write spec.txt in " + root);
    out << render_scene_spec(spec);
    require<IoError>(out.good(), "write failed for spec.txt in " + root);
  }
  return report;
}

Sample Dataset::load(int64_t i) const {
  const DatasetRecord& rec = record(i);
  const std::string path = images_dir_ + "/" + rec.filename;
  const ImageU8 img = read_ppm(path);
  require<DataError>(img.width == width_ && img.height == height_,
                     strfmt("image %s is %lldx%lld but the dataset is %lldx%lld",
                            path.c_str(), (long long)img.width,
                            (long long)img.height, (long long)width_,
                            (long long)height_));
  Sample s;
  s.id = rec.filename.substr(0, rec.filename.find_last_of('.'));
  s.image = image_to_tensor(img);
  s.boxes = rec.boxes;
  s.fault = rec.fault;
  return s;
}

std::vector<int64_t> Dataset::shuffled_order(uint64_t seed) const {
  std::vector<int64_t> order(records_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = (int64_t)i;
  Rng rng(seed);
  for (int64_t i = (int64_t)order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(0, i)]);
  return order;
}

Dataset load_dataset(const std::string& root, const std::string& split) {
  const fs::path spec_path = fs::path(root) / "spec.txt";
  std::ifstream spec_in(spec_path);
  require<IoError>(spec_in.good(), "cannot open " + spec_path.string());
  std::ostringstream spec_buf;
  spec_buf << spec_in.rdbuf();
  const SceneSpec spec = parse_scene_spec(spec_buf.str());

  const fs::path index_path = fs::path(root) / split / "annotations.txt";
  std::ifstream in(index_path);
  require<IoError>(in.good(), "cannot open " + index_path.string());

  std::vector<DatasetRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    require<DataError>(tok.size() >= 2 && (tok.size() - 2) % 5 == 0,
                       strfmt("%s line %d: expected 'filename flag "
                              "[class x1 y1 x2 y2]...'",
                              index_path.c_str(), lineno));
    DatasetRecord rec;
    rec.filename = tok[0];
    const char* rn = rec.filename.c_str();
    require<DataError>(tok[1] == "0" || tok[1] == "1",
                       strfmt("record %s: fault flag must be 0 or 1", rn));
    rec.fault = tok[1] == "1";
    auto num = [&](const std::string& s) {
      double v = 0;
      auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      require<DataError>(res.ec == std::errc{} &&
                             res.ptr == s.data() + s.size(),
                         strfmt("record %s: bad number '%s'", rn, s.c_str()));
      return v;
    };
    for (size_t i = 2; i + 4 < tok.size(); i += 5) {
      GtBox b;
      b.cls = (int)num(tok[i]);
      b.box = BBox{num(tok[i + 1]), num(tok[i + 2]), num(tok[i + 3]),
                   num(tok[i + 4])};
      require<DataError>(b.cls >= 0 && b.cls < kNumClasses,
                         strfmt("record %s: class %d out of range", rn, b.cls));
      require<DataError>(b.box.valid(), strfmt("record %s: degenerate box", rn));
      require<DataError>(b.box.x1 >= 0 && b.box.y1 >= 0 &&
                             b.box.x2 <= double(spec.width) &&
                             b.box.y2 <= double(spec.height),
                         strfmt("record %s: box outside the %lldx%lld image",
                                rn, (long long)spec.width,
                                (long long)spec.height));
      rec.boxes.push_back(b);
    }
    require<DataError>(rec.fault == !rec.boxes.empty(),
                       strfmt("record %s: fault flag disagrees with %zu "
                              "annotation boxes",
                              rn, rec.boxes.size()));
    records.push_back(std::move(rec));
  }
  require<DataError>(!records.empty(),
                     "empty dataset index: " + index_path.string());
  return Dataset((fs::path(root) / split / "images").string(),
                 std::move(records), spec.width, spec.height);
}

Sample flip_horizontal(const Sample& s) {
  Sample out;
  out.id = s.id;
  out.fault = s.fault;
  const int64_t hgt = s.image.dim(1), wid = s.image.dim(2);
  out.image = Tensor<float>::zeros({3, hgt, wid});
  const float* src = s.image.ptr();
  float* dst = out.image.ptr();
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t y = 0; y < hgt; ++y) {
      const float* srow = src + (ch * hgt + y) * wid;
      float* drow = dst + (ch * hgt + y) * wid;
      for (int64_t x = 0; x < wid; ++x) drow[x] = srow[wid - 1 - x];
    }
  out.boxes = s.boxes;
  for (auto& b : out.boxes) {
    const double x1 = double(wid) - b.box.x2;
    const double x2 = double(wid) - b.box.x1;
    b.box.x1 = x1;
    b.box.x2 = x2;
  }
  return out;
}

Sample augment(const Sample& s, const AugmentPolicy& policy, uint64_t seed) {
  Rng rng(seed);
  Sample out = rng.bernoulli(policy.flip_probability) ? flip_horizontal(s) : s;
  if (policy.photometric_jitter > 0) {
    const float b =
        (float)rng.uniform(-policy.photometric_jitter, policy.photometric_jitter);
    const float c = 1.0f + (float)rng.uniform(-policy.photometric_jitter,
                                              policy.photometric_jitter);
    Tensor<float> jittered = Tensor<float>::zeros(out.image.shape());
    const float* src = out.image.ptr();
    float* dst = jittered.ptr();
    const int64_t n = out.image.numel();
    for (int64_t i = 0; i < n; ++i) {
      const float v = (src[i] - 0.5f) * c + 0.5f + b;
      dst[i] = std::min(1.0f, std::max(0.0f, v));
    }
    out.image = jittered;
  }
  return out;
}

}  // namespace ffpdet
