#include "ffpdet/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ffpdet {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw ConfigError(strfmt("key '%s': cannot read '%s' as %s", key.c_str(),
                           value.c_str(), expected));
}

int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    bad_value(key, v, "an integer");
  return out;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    bad_value(key, v, "an unsigned integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<int64_t> parse_ints(const std::string& key, const std::string& v) {
  std::vector<int64_t> out;
  for (const auto& part : split(v, ','))
    out.push_back(parse_int(key, part));
  return out;
}

template <typename It>
std::string join_ints(It begin, It end) {
  std::string out;
  for (It it = begin; it != end; ++it) {
    if (!out.empty()) out += ",";
    out += std::to_string(*it);
  }
  return out;
}

const char* act_name(Act a) {
  switch (a) {
    case Act::relu: return "relu";
    case Act::hard_swish: return "hard_swish";
    default: return "identity";
  }
}

Act parse_act(const std::string& key, const std::string& v) {
  if (v == "relu") return Act::relu;
  if (v == "hard_swish") return Act::hard_swish;
  bad_value(key, v, "relu or hard_swish");
}

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::rectangle: return "rectangle";
    case ShapeFamily::disc: return "disc";
    default: return "bolt";
  }
}

ShapeFamily parse_family(const std::string& key, const std::string& v) {
  if (v == "rectangle") return ShapeFamily::rectangle;
  if (v == "disc") return ShapeFamily::disc;
  if (v == "bolt") return ShapeFamily::bolt;
  bad_value(key, v, "rectangle, disc or bolt");
}

const char* module_name(LevelModule m) {
  return m == LevelModule::fbm ? "fbm" : "dfb";
}

std::array<LevelModule, 3> parse_placement(const std::string& key,
                                           const std::string& v) {
  auto parts = split(v, ',');
  if (parts.size() != 3) bad_value(key, v, "three of fbm|dfb");
  std::array<LevelModule, 3> out;
  for (int i = 0; i < 3; ++i) {
    if (parts[i] == "fbm")
      out[i] = LevelModule::fbm;
    else if (parts[i] == "dfb")
      out[i] = LevelModule::dfb;
    else
      bad_value(key, v, "three of fbm|dfb");
  }
  return out;
}

std::string render_stages(const std::vector<StageSpec>& stages) {
  std::string out;
  for (const auto& s : stages) {
    if (!out.empty()) out += " | ";
    out += strfmt("k%lld s%lld e%lld o%lld %s %s", (long long)s.kernel,
                  (long long)s.stride, (long long)s.expand, (long long)s.out,
                  s.se ? "se" : "-", act_name(s.act));
  }
  return out;
}

std::vector<StageSpec> parse_stages(const std::string& key,
                                    const std::string& v) {
  std::vector<StageSpec> out;
  for (const auto& entry : split(v, '|')) {
    std::istringstream in(entry);
    std::vector<std::string> tok;
    std::string t;
    while (in >> t) tok.push_back(t);
    if (tok.size() != 6) bad_value(key, entry, "'kK sS eE oO se|- act'");
    StageSpec s;
    auto field = [&](const std::string& token, char prefix) {
      if (token.size() < 2 || token[0] != prefix)
        bad_value(key, token, strfmt("'%c<int>'", prefix).c_str());
      return parse_int(key, token.substr(1));
    };
    s.kernel = field(tok[0], 'k');
    s.stride = field(tok[1], 's');
    s.expand = field(tok[2], 'e');
    s.out = field(tok[3], 'o');
    if (tok[4] == "se")
      s.se = true;
    else if (tok[4] == "-")
      s.se = false;
    else
      bad_value(key, tok[4], "'se' or '-'");
    s.act = parse_act(key, tok[5]);
    out.push_back(s);
  }
  return out;
}

std::array<int64_t, 3> parse_int3(const std::string& key,
                                  const std::string& v) {
  auto ints = parse_ints(key, v);
  if (ints.size() != 3) bad_value(key, v, "three comma-separated integers");
  return {ints[0], ints[1], ints[2]};
}

// Assign one (section, key) pair. Returns false for an unknown key.
bool set_key(GlobalConfig& cfg, const std::string& sec, const std::string& key,
             const std::string& v) {
  auto& bb = cfg.detector.backbone;
  auto& fp = cfg.detector.ffp;
  auto& hd = cfg.detector.head;
  const std::string id = sec + "." + key;
  if (sec == "detector") {
    if (key == "init_seed") cfg.detector.init_seed = parse_uint(id, v);
    else return false;
  } else if (sec == "backbone") {
    if (key == "in_channels") bb.in_channels = parse_int(id, v);
    else if (key == "stem_channels") bb.stem_channels = parse_int(id, v);
    else if (key == "stem_act") bb.stem_act = parse_act(id, v);
    else if (key == "width_multiplier") bb.width_multiplier = parse_double(id, v);
    else if (key == "taps") bb.taps = parse_int3(id, v);
    else if (key == "stages") bb.stages = parse_stages(id, v);
    else return false;
  } else if (sec == "pyramid") {
    // The head consumes pyramid maps, so its input width is derived here
    // rather than being a second, divergable setting in the file.
    if (key == "channels") hd.in_channels = fp.pyramid_channels = parse_int(id, v);
    else if (key == "gate_reduction") fp.fea_reduction = parse_int(id, v);
    else if (key == "bottleneck") fp.fbm_bottleneck = parse_int(id, v);
    else if (key == "rates") fp.dfb_rates = parse_ints(id, v);
    else if (key == "dfb_channels") fp.dfb_channels = parse_int(id, v);
    else if (key == "placement") fp.placement = parse_placement(id, v);
    else if (key == "additive_gate") fp.fea_additive = parse_bool(id, v);
    else return false;
  } else if (sec == "head") {
    if (key == "classes") hd.num_classes = parse_int(id, v);
    else if (key == "tower_channels") hd.tower_channels = parse_int(id, v);
    else if (key == "tower_kernels") hd.tower_kernels = parse_ints(id, v);
    else if (key == "prior") hd.prior_probability = parse_double(id, v);
    else if (key == "strides") hd.strides = parse_int3(id, v);
    else return false;
  } else if (sec == "loss") {
    if (key == "w_cls") cfg.loss.cls = parse_double(id, v);
    else if (key == "w_l1") cfg.loss.l1 = parse_double(id, v);
    else if (key == "w_giou") cfg.loss.giou = parse_double(id, v);
    else if (key == "focal_alpha") cfg.loss.focal_alpha = parse_double(id, v);
    else if (key == "focal_beta") cfg.loss.focal_beta = parse_double(id, v);
    else return false;
  } else if (sec == "decode") {
    if (key == "score_threshold") cfg.score_threshold = parse_double(id, v);
    else if (key == "max_detections") cfg.max_detections = parse_int(id, v);
    else if (key == "nms_iou") cfg.nms_iou = parse_double(id, v);
    else return false;
  } else if (sec == "train") {
    auto& tr = cfg.train;
    if (key == "batch") tr.batch_size = parse_int(id, v);
    else if (key == "lr") tr.base_lr = parse_double(id, v);
    else if (key == "iterations") tr.total_iterations = parse_int(id, v);
    else if (key == "decay_at") tr.decay_at = parse_int(id, v);
    else if (key == "weight_decay") tr.weight_decay = parse_double(id, v);
    else if (key == "seed") tr.seed = parse_uint(id, v);
    else if (key == "checkpoint_every") tr.checkpoint_every = parse_int(id, v);
    else if (key == "dataset") tr.dataset = v;
    else if (key == "flip") tr.augment.flip_probability = parse_double(id, v);
    else if (key == "jitter") tr.augment.photometric_jitter = parse_double(id, v);
    else return false;
  } else if (sec == "scene") {
    auto& sc = cfg.scene;
    if (key == "width") sc.width = parse_int(id, v);
    else if (key == "height") sc.height = parse_int(id, v);
    else if (key == "min_components") sc.min_components = parse_int(id, v);
    else if (key == "max_components") sc.max_components = parse_int(id, v);
    else if (key == "family") sc.family = parse_family(id, v);
    else if (key == "component_scale") sc.component_scale = parse_double(id, v);
    else if (key == "component_aspect") sc.component_aspect = parse_double(id, v);
    else if (key == "fault_probability") sc.fault_probability = parse_double(id, v);
    else if (key == "occluder_probability") sc.occluder_probability = parse_double(id, v);
    else if (key == "clutter_density") sc.clutter_density = parse_double(id, v);
    else if (key == "noise_level") sc.noise_level = parse_double(id, v);
    else if (key == "seed") sc.seed = parse_uint(id, v);
    else return false;
  } else {
    throw ConfigError("unknown config section [" + sec + "]");
  }
  return true;
}

void parse_into(GlobalConfig& cfg, const std::string& text,
                const std::string& only_section = "") {
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      require<ConfigError>(s.back() == ']' && s.size() > 2,
                           strfmt("line %d: malformed section header '%s'",
                                  lineno, s.c_str()));
      section = s.substr(1, s.size() - 2);
      if (!only_section.empty())
        require<ConfigError>(section == only_section,
                             strfmt("line %d: unexpected section [%s]", lineno,
                                    section.c_str()));
      continue;
    }
    const size_t eq = s.find('=');
    require<ConfigError>(eq != std::string::npos,
                         strfmt("line %d: expected 'key = value', got '%s'",
                                lineno, s.c_str()));
    require<ConfigError>(!section.empty(),
                         strfmt("line %d: key outside any [section]", lineno));
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    require<ConfigError>(
        set_key(cfg, section, key, value),
        strfmt("line %d: unknown key '%s' in section [%s]", lineno,
               key.c_str(), section.c_str()));
  }
}

void render_scene_section(std::ostringstream& out, const SceneSpec& sc) {
  out << "[scene]\n";
  out << "width = " << sc.width << "\n";
  out << "height = " << sc.height << "\n";
  out << "min_components = " << sc.min_components << "\n";
  out << "max_components = " << sc.max_components << "\n";
  out << "family = " << family_name(sc.family) << "\n";
  out << "component_scale = " << fmt_double(sc.component_scale) << "\n";
  out << "component_aspect = " << fmt_double(sc.component_aspect) << "\n";
  out << "fault_probability = " << fmt_double(sc.fault_probability) << "\n";
  out << "occluder_probability = " << fmt_double(sc.occluder_probability)
      << "\n";
  out << "clutter_density = " << fmt_double(sc.clutter_density) << "\n";
  out << "noise_level = " << fmt_double(sc.noise_level) << "\n";
  out << "seed = " << sc.seed << "\n";
}

}  // namespace

GlobalConfig parse_config(const std::string& text) {
  GlobalConfig cfg;
  parse_into(cfg, text);
  return cfg;
}

GlobalConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require<IoError>(in.good(), "cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string render_config(const GlobalConfig& cfg) {
  const auto& bb = cfg.detector.backbone;
  const auto& fp = cfg.detector.ffp;
  const auto& hd = cfg.detector.head;
  std::ostringstream out;
  out << "# Detector, training and data-generation settings.\n";
  out << "# Override on the command line with section.key=value.\n\n";
  out << "[detector]\n";
  out << "init_seed = " << cfg.detector.init_seed << "\n\n";

  out << "[backbone]\n";
  out << "in_channels = " << bb.in_channels << "\n";
  out << "stem_channels = " << bb.stem_channels << "\n";
  out << "stem_act = " << act_name(bb.stem_act) << "\n";
  out << "width_multiplier = " << fmt_double(bb.width_multiplier) << "\n";
  out << "taps = " << join_ints(bb.taps.begin(), bb.taps.end()) << "\n";
  out << "stages = " << render_stages(bb.stages) << "\n\n";

  out << "[pyramid]\n";
  out << "channels = " << fp.pyramid_channels << "\n";
  out << "gate_reduction = " << fp.fea_reduction << "\n";
  out << "bottleneck = " << fp.fbm_bottleneck << "\n";
  out << "rates = " << join_ints(fp.dfb_rates.begin(), fp.dfb_rates.end())
      << "\n";
  out << "dfb_channels = " << fp.dfb_channels << "\n";
  out << "placement = " << module_name(fp.placement[0]) << ","
      << module_name(fp.placement[1]) << "," << module_name(fp.placement[2])
      << "\n";
  out << "additive_gate = " << fmt_bool(fp.fea_additive) << "\n\n";

  out << "[head]\n";
  out << "classes = " << hd.num_classes << "\n";
  out << "tower_channels = " << hd.tower_channels << "\n";
  out << "tower_kernels = "
      << join_ints(hd.tower_kernels.begin(), hd.tower_kernels.end()) << "\n";
  out << "prior = " << fmt_double(hd.prior_probability) << "\n";
  out << "strides = " << join_ints(hd.strides.begin(), hd.strides.end())
      << "\n\n";

  out << "[loss]\n";
  out << "w_cls = " << fmt_double(cfg.loss.cls) << "\n";
  out << "w_l1 = " << fmt_double(cfg.loss.l1) << "\n";
  out << "w_giou = " << fmt_double(cfg.loss.giou) << "\n";
  out << "focal_alpha = " << fmt_double(cfg.loss.focal_alpha) << "\n";
  out << "focal_beta = " << fmt_double(cfg.loss.focal_beta) << "\n\n";

  out << "[decode]\n";
  out << "score_threshold = " << fmt_double(cfg.score_threshold) << "\n";
  out << "max_detections = " << cfg.max_detections << "\n";
  out << "nms_iou = " << fmt_double(cfg.nms_iou) << "\n\n";

  out << "[train]\n";
  out << "batch = " << cfg.train.batch_size << "\n";
  out << "lr = " << fmt_double(cfg.train.base_lr) << "\n";
  out << "iterations = " << cfg.train.total_iterations << "\n";
  out << "decay_at = " << cfg.train.decay_at << "\n";
  out << "weight_decay = " << fmt_double(cfg.train.weight_decay) << "\n";
  out << "seed = " << cfg.train.seed << "\n";
  out << "checkpoint_every = " << cfg.train.checkpoint_every << "\n";
  out << "dataset = " << cfg.train.dataset << "\n";
  out << "flip = " << fmt_double(cfg.train.augment.flip_probability) << "\n";
  out << "jitter = " << fmt_double(cfg.train.augment.photometric_jitter)
      << "\n\n";

  render_scene_section(out, cfg.scene);
  return out.str();
}

std::string render_scene_spec(const SceneSpec& spec) {
  std::ostringstream out;
  render_scene_section(out, spec);
  return out.str();
}

SceneSpec parse_scene_spec(const std::string& text) {
  GlobalConfig cfg;
  parse_into(cfg, text, "scene");
  return cfg.scene;
}

void apply_override(GlobalConfig& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  require<ConfigError>(eq != std::string::npos,
                       "override must look like section.key=value: " +
                           assignment);
  const std::string path = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const size_t dot = path.find('.');
  require<ConfigError>(dot != std::string::npos && dot > 0,
                       "override key must be section.key: " + path);
  const std::string sec = path.substr(0, dot);
  const std::string key = path.substr(dot + 1);
  require<ConfigError>(set_key(cfg, sec, key, value),
                       strfmt("unknown key '%s' in section [%s]", key.c_str(),
                              sec.c_str()));
}

}  // namespace ffpdet
