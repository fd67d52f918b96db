#include "lionxa/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "lionxa/detail/builtin_files.hpp"
#include "lionxa/error.hpp"
#include "lionxa/text_util.hpp"

namespace lionxa {

bool TrainingConfig::operator==(const TrainingConfig& o) const {
  return max_iter == o.max_iter && batch_size == o.batch_size && val_every == o.val_every &&
         seed == o.seed && enable_targetlike == o.enable_targetlike &&
         enable_discriminators == o.enable_discriminators && supervision == o.supervision &&
         cutout_width_source == o.cutout_width_source &&
         cutout_width_target == o.cutout_width_target && voxel_size == o.voxel_size &&
         p_flip_2d == o.p_flip_2d && dropout.max_patches == o.dropout.max_patches &&
         dropout.max_height == o.dropout.max_height && dropout.max_width == o.dropout.max_width &&
         augment_3d.max_rotation == o.augment_3d.max_rotation &&
         augment_3d.max_translation == o.augment_3d.max_translation &&
         augment_3d.p_flip_x == o.augment_3d.p_flip_x && augment_3d.p_flip_y == o.augment_3d.p_flip_y;
}

bool ScenarioConfig::operator==(const ScenarioConfig& o) const {
  return name == o.name && mapping == o.mapping && dataset == o.dataset && source == o.source &&
         target == o.target && weights == o.weights && optimizer == o.optimizer &&
         training == o.training && data == o.data;
}

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::kConfigError, msg); }

// ---- scalar codecs ----

double to_double(std::string_view s) {
  try {
    return text::parse_double(text::trim(s));
  } catch (const Error&) {
    config_error("not a number: '" + std::string(s) + "'");
  }
}

template <typename Int>
Int to_int(std::string_view s) {
  const std::string t = text::trim(s);
  Int v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) config_error("not an integer: '" + t + "'");
  return v;
}

bool to_bool(std::string_view s) {
  const std::string t = text::trim(s);
  if (t == "true") return true;
  if (t == "false") return false;
  config_error("not a boolean: '" + t + "'");
}

std::vector<std::string> to_list(std::string_view s) {
  std::vector<std::string> out;
  if (text::trim(s).empty()) return out;
  for (const auto& part : text::split(s, ',')) out.push_back(text::trim(part));
  return out;
}

std::string fmt(double v) { return text::format_double(v); }
template <typename Int>
std::string fmt_int(Int v) {
  return std::to_string(v);
}
std::string fmt_bool(bool b) { return b ? "true" : "false"; }

// ---- field bindings ----

struct Field {
  std::string key;
  std::function<void(ScenarioConfig&, std::string_view)> set;
  std::function<std::string(const ScenarioConfig&)> get;
};

struct Section {
  std::string name;
  std::vector<Field> fields;
};

template <typename Proj>
Field real(std::string key, Proj proj) {
  return {std::move(key), [proj](ScenarioConfig& c, std::string_view v) { proj(c) = to_double(v); },
          [proj](const ScenarioConfig& c) { return fmt(proj(const_cast<ScenarioConfig&>(c))); }};
}

template <typename Proj>
Field integer(std::string key, Proj proj) {
  return {std::move(key),
          [proj](ScenarioConfig& c, std::string_view v) {
            auto& ref = proj(c);
            ref = to_int<std::remove_reference_t<decltype(ref)>>(v);
          },
          [proj](const ScenarioConfig& c) { return fmt_int(proj(const_cast<ScenarioConfig&>(c))); }};
}

template <typename Proj>
Field boolean(std::string key, Proj proj) {
  return {std::move(key), [proj](ScenarioConfig& c, std::string_view v) { proj(c) = to_bool(v); },
          [proj](const ScenarioConfig& c) { return fmt_bool(proj(const_cast<ScenarioConfig&>(c))); }};
}

template <typename Proj>
Field text_field(std::string key, Proj proj) {
  return {std::move(key), [proj](ScenarioConfig& c, std::string_view v) { proj(c) = text::trim(v); },
          [proj](const ScenarioConfig& c) { return proj(const_cast<ScenarioConfig&>(c)); }};
}

template <typename Proj>
Field real_range(std::string key, Proj proj) {
  return {std::move(key),
          [proj](ScenarioConfig& c, std::string_view v) {
            const auto parts = to_list(v);
            if (parts.size() != 2) config_error("expected 'lo, hi', got '" + std::string(v) + "'");
            proj(c) = Range<double>{to_double(parts[0]), to_double(parts[1])};
          },
          [proj](const ScenarioConfig& c) {
            const auto& r = proj(const_cast<ScenarioConfig&>(c));
            return fmt(r.lo) + ", " + fmt(r.hi);
          }};
}

template <typename Proj>
Field int_range(std::string key, Proj proj) {
  return {std::move(key),
          [proj](ScenarioConfig& c, std::string_view v) {
            const auto parts = to_list(v);
            if (parts.size() != 2) config_error("expected 'lo, hi', got '" + std::string(v) + "'");
            proj(c) = Range<int>{to_int<int>(parts[0]), to_int<int>(parts[1])};
          },
          [proj](const ScenarioConfig& c) {
            const auto& r = proj(const_cast<ScenarioConfig&>(c));
            return std::to_string(r.lo) + ", " + std::to_string(r.hi);
          }};
}

#define LX_PROJ(expr) [](ScenarioConfig& c) -> auto& { return expr; }

std::vector<Field> sensor_fields(DomainConfig ScenarioConfig::*dom) {
  return {
      {"elevations_rad",
       [dom](ScenarioConfig& c, std::string_view v) {
         auto& e = (c.*dom).sensor.beam_elevations;
         e.clear();
         for (const auto& p : to_list(v)) e.push_back(to_double(p));
       },
       [dom](const ScenarioConfig& c) {
         std::string out;
         for (double e : (c.*dom).sensor.beam_elevations) out += (out.empty() ? "" : ", ") + fmt(e);
         return out;
       }},
      integer("horizontal_resolution",
              [dom](ScenarioConfig& c) -> auto& { return (c.*dom).sensor.horizontal_resolution; }),
      real("fov_up_rad", [dom](ScenarioConfig& c) -> auto& { return (c.*dom).sensor.fov_up; }),
      real("fov_down_rad", [dom](ScenarioConfig& c) -> auto& { return (c.*dom).sensor.fov_down; }),
      real("max_range", [dom](ScenarioConfig& c) -> auto& { return (c.*dom).sensor.max_range; }),
      integer("width", [dom](ScenarioConfig& c) -> auto& { return (c.*dom).width; }),
  };
}

std::vector<Field> scene_fields(DomainConfig ScenarioConfig::*dom) {
  auto sp = [dom](auto member) {
    return [dom, member](ScenarioConfig& c) -> auto& { return (c.*dom).scene.*member; };
  };
  return {
      boolean("street", sp(&SceneParams::street)),
      real("ground_z", sp(&SceneParams::ground_z)),
      real("extent", sp(&SceneParams::extent)),
      integer("ground_label", sp(&SceneParams::ground_label)),
      real_range("road_width", sp(&SceneParams::road_width)),
      real_range("sidewalk_width", sp(&SceneParams::sidewalk_width)),
      real("curb_height", sp(&SceneParams::curb_height)),
      int_range("cars", sp(&SceneParams::cars)),
      real_range("car_length", sp(&SceneParams::car_length)),
      real_range("car_width", sp(&SceneParams::car_width)),
      real_range("car_height", sp(&SceneParams::car_height)),
      int_range("buildings", sp(&SceneParams::buildings)),
      real_range("building_length", sp(&SceneParams::building_length)),
      real_range("building_depth", sp(&SceneParams::building_depth)),
      real_range("building_height", sp(&SceneParams::building_height)),
      int_range("poles", sp(&SceneParams::poles)),
      real_range("pole_radius", sp(&SceneParams::pole_radius)),
      real_range("pole_height", sp(&SceneParams::pole_height)),
      int_range("trees", sp(&SceneParams::trees)),
      real_range("trunk_radius", sp(&SceneParams::trunk_radius)),
      real_range("crown_radius", sp(&SceneParams::crown_radius)),
      int_range("fences", sp(&SceneParams::fences)),
      real("remission_scale", sp(&SceneParams::remission_scale)),
  };
}

const std::vector<Section>& sections() {
  static const std::vector<Section> kSections = [] {
    std::vector<Section> s;
    s.push_back({"scenario",
                 {text_field("name", LX_PROJ(c.name)), text_field("mapping", LX_PROJ(c.mapping)),
                  text_field("dataset", LX_PROJ(c.dataset))}});
    s.push_back({"source_sensor", sensor_fields(&ScenarioConfig::source)});
    s.push_back({"source_scene", scene_fields(&ScenarioConfig::source)});
    s.push_back({"target_sensor", sensor_fields(&ScenarioConfig::target)});
    s.push_back({"target_scene", scene_fields(&ScenarioConfig::target)});
    s.push_back({"loss_weights",
                 {real("lambda_p", LX_PROJ(c.weights.lambda_p)),
                  real("lambda_s", LX_PROJ(c.weights.lambda_s)),
                  real("lambda_tl", LX_PROJ(c.weights.lambda_tl)),
                  real("lambda_t", LX_PROJ(c.weights.lambda_t)),
                  real("g2d_tp", LX_PROJ(c.weights.g2d_tp)),
                  real("g3d_tp", LX_PROJ(c.weights.g3d_tp)),
                  real("g2d_tf", LX_PROJ(c.weights.g2d_tf)),
                  real("d2d_tp", LX_PROJ(c.weights.d2d_tp)),
                  real("d3d_tp", LX_PROJ(c.weights.d3d_tp)),
                  real("d2d_tf", LX_PROJ(c.weights.d2d_tf)),
                  real("d2d_sp", LX_PROJ(c.weights.d2d_sp)),
                  real("d3d_sp", LX_PROJ(c.weights.d3d_sp)),
                  real("d2d_sf", LX_PROJ(c.weights.d2d_sf))}});
    s.push_back({"optimizer",
                 {real("sgd_lr", LX_PROJ(c.optimizer.sgd_lr)),
                  real("sgd_momentum", LX_PROJ(c.optimizer.sgd_momentum)),
                  real("adam_lr", LX_PROJ(c.optimizer.adam_lr)),
                  real("adam_beta1", LX_PROJ(c.optimizer.adam_beta1)),
                  real("adam_beta2", LX_PROJ(c.optimizer.adam_beta2)),
                  real("disc_lr", LX_PROJ(c.optimizer.disc_lr)),
                  real("disc_beta1", LX_PROJ(c.optimizer.disc_beta1)),
                  real("disc_beta2", LX_PROJ(c.optimizer.disc_beta2)),
                  real("disc_power", LX_PROJ(c.optimizer.disc_power)),
                  real("lr_gamma", LX_PROJ(c.optimizer.lr_gamma)),
                  {"milestones",
                   [](ScenarioConfig& c, std::string_view v) {
                     c.optimizer.milestones.clear();
                     for (const auto& p : to_list(v)) c.optimizer.milestones.push_back(to_int<std::int64_t>(p));
                   },
                   [](const ScenarioConfig& c) {
                     std::string out;
                     for (auto m : c.optimizer.milestones) out += (out.empty() ? "" : ", ") + std::to_string(m);
                     return out;
                   }}}});
    s.push_back(
        {"training",
         {integer("max_iter", LX_PROJ(c.training.max_iter)),
          integer("batch_size", LX_PROJ(c.training.batch_size)),
          integer("val_every", LX_PROJ(c.training.val_every)),
          integer("seed", LX_PROJ(c.training.seed)),
          boolean("enable_targetlike", LX_PROJ(c.training.enable_targetlike)),
          boolean("enable_discriminators", LX_PROJ(c.training.enable_discriminators)),
          {"supervision",
           [](ScenarioConfig& c, std::string_view v) {
             const std::string t = text::trim(v);
             if (t == "source") c.training.supervision = Supervision::kSource;
             else if (t == "target") c.training.supervision = Supervision::kTarget;
             else config_error("supervision must be 'source' or 'target', got '" + t + "'");
           },
           [](const ScenarioConfig& c) {
             return std::string(c.training.supervision == Supervision::kSource ? "source" : "target");
           }},
          integer("cutout_width_source", LX_PROJ(c.training.cutout_width_source)),
          integer("cutout_width_target", LX_PROJ(c.training.cutout_width_target)),
          real("voxel_size", LX_PROJ(c.training.voxel_size)),
          real("p_flip_2d", LX_PROJ(c.training.p_flip_2d)),
          integer("dropout_patches", LX_PROJ(c.training.dropout.max_patches)),
          integer("dropout_height", LX_PROJ(c.training.dropout.max_height)),
          integer("dropout_width", LX_PROJ(c.training.dropout.max_width)),
          real("rotation_3d", LX_PROJ(c.training.augment_3d.max_rotation)),
          real("translation_3d", LX_PROJ(c.training.augment_3d.max_translation)),
          real("p_flip_x_3d", LX_PROJ(c.training.augment_3d.p_flip_x)),
          real("p_flip_y_3d", LX_PROJ(c.training.augment_3d.p_flip_y))}});
    s.push_back({"data",
                 {integer("source_train", LX_PROJ(c.data.source_train)),
                  integer("target_train", LX_PROJ(c.data.target_train)),
                  integer("target_val", LX_PROJ(c.data.target_val)),
                  integer("target_test", LX_PROJ(c.data.target_test))}});
    return s;
  }();
  return kSections;
}

#undef LX_PROJ

// Uniform-beam shorthand accepted in sensor sections (not rendered back).
struct UniformSensor {
  std::optional<int> beams;
  std::optional<double> up_deg, down_deg;
};

void check_domain(const DomainConfig& d, const std::string& which) {
  try {
    d.sensor.validate();
  } catch (const Error& e) {
    config_error(which + " sensor: " + e.what());
  }
  if (d.width < 8 || d.width % 8 != 0) config_error(which + " width must be a positive multiple of 8");
  if (d.sensor.beams() % 8 != 0) config_error(which + " beam count must be a multiple of 8");
  if (!(d.scene.remission_scale > 0.0)) config_error(which + " remission_scale must be positive");
}

}  // namespace

void ScenarioConfig::validate() const {
  if (name.empty()) config_error("scenario name is empty");
  check_domain(source, "source");
  check_domain(target, "target");
  weights.validate();
  const auto& o = optimizer;
  for (double v : {o.sgd_lr, o.adam_lr, o.disc_lr}) {
    if (!(v > 0.0)) config_error("learning rates must be positive");
  }
  for (double b : {o.sgd_momentum, o.adam_beta1, o.adam_beta2, o.disc_beta1, o.disc_beta2}) {
    if (!(b >= 0.0 && b < 1.0)) config_error("momentum and beta values must lie in [0, 1)");
  }
  if (!(o.lr_gamma > 0.0 && o.lr_gamma <= 1.0)) config_error("lr_gamma must lie in (0, 1]");
  if (!(o.disc_power > 0.0)) config_error("disc_power must be positive");
  const auto& t = training;
  if (t.max_iter < 1) config_error("max_iter must be >= 1");
  if (t.batch_size < 1) config_error("batch_size must be >= 1");
  if (t.val_every < 1) config_error("val_every must be >= 1");
  for (auto m : o.milestones) {
    if (m < 1 || m > t.max_iter) config_error("milestones must lie in [1, max_iter]");
  }
  if (t.cutout_width_source < 8 || t.cutout_width_source % 8 != 0 ||
      t.cutout_width_source > source.width) {
    config_error("cutout_width_source must be a multiple of 8 no wider than the source image");
  }
  if (t.cutout_width_target < 8 || t.cutout_width_target % 8 != 0 ||
      t.cutout_width_target > target.width) {
    config_error("cutout_width_target must be a multiple of 8 no wider than the target image");
  }
  if (!(t.voxel_size > 0.0)) config_error("voxel_size must be positive");
  if (!(t.p_flip_2d >= 0.0 && t.p_flip_2d <= 1.0)) config_error("p_flip_2d must lie in [0, 1]");
  if (data.source_train < 1 || data.target_train < 1 || data.target_val < 1 || data.target_test < 1) {
    config_error("every data split needs at least one scan");
  }
  try {
    (void)class_mapping();
  } catch (const Error& e) {
    config_error(std::string("mapping: ") + e.what());
  }
}

ClassMapping ScenarioConfig::class_mapping() const {
  return load_class_mapping(builtin_mapping_text(mapping), dataset);
}

LossWeights ScenarioConfig::effective_weights() const {
  LossWeights w = weights;
  if (!training.enable_targetlike) w.lambda_tl = 0.0;
  if (!training.enable_discriminators) {
    w.g2d_tp = w.g3d_tp = w.g2d_tf = 0.0;
    w.d2d_tp = w.d3d_tp = w.d2d_tf = w.d2d_sp = w.d3d_sp = w.d2d_sf = 0.0;
  }
  return w;
}

ScenarioConfig load_scenario(std::string_view text_in) {
  ScenarioConfig c;
  const Section* current = nullptr;
  std::map<std::string, UniformSensor> uniform;
  std::set<std::string> seen_sections;
  std::set<std::string> explicit_elevations;
  int line_no = 0;
  for (const auto& raw : text::split_lines(text_in)) {
    ++line_no;
    const std::string line = text::trim(text::strip_comment(raw));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') config_error(where + "unterminated section header");
      const std::string name = text::trim(std::string_view(line).substr(1, line.size() - 2));
      current = nullptr;
      for (const auto& s : sections()) {
        if (s.name == name) current = &s;
      }
      if (!current) config_error(where + "unknown section [" + name + "]");
      if (!seen_sections.insert(name).second) config_error(where + "duplicate section [" + name + "]");
      continue;
    }
    if (!current) config_error(where + "key outside any section");
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_error(where + "expected 'key = value'");
    const std::string key = text::trim(std::string_view(line).substr(0, eq));
    const std::string value = text::trim(std::string_view(line).substr(eq + 1));
    const bool sensor = current->name.ends_with("_sensor");
    try {
      if (sensor && key == "beams") {
        uniform[current->name].beams = to_int<int>(value);
        continue;
      }
      if (sensor && key == "fov_up_deg") {
        uniform[current->name].up_deg = to_double(value);
        continue;
      }
      if (sensor && key == "fov_down_deg") {
        uniform[current->name].down_deg = to_double(value);
        continue;
      }
      const Field* field = nullptr;
      for (const auto& f : current->fields) {
        if (f.key == key) field = &f;
      }
      if (!field) config_error("unknown key '" + key + "' in [" + current->name + "]");
      if (sensor && key == "elevations_rad") explicit_elevations.insert(current->name);
      field->set(c, value);
    } catch (const Error& e) {
      config_error(where + e.what());
    }
  }
  for (const auto& [section, u] : uniform) {
    if (explicit_elevations.count(section)) {
      config_error("[" + section + "] mixes elevations_rad with the uniform shorthand");
    }
    if (!u.beams || !u.up_deg || !u.down_deg) {
      config_error("[" + section + "] uniform shorthand needs beams, fov_up_deg and fov_down_deg");
    }
    DomainConfig& d = section == "source_sensor" ? c.source : c.target;
    const SensorSpec s = SensorSpec::uniform(*u.beams, d.sensor.horizontal_resolution, *u.up_deg,
                                             *u.down_deg, d.sensor.max_range);
    d.sensor.beam_elevations = s.beam_elevations;
    d.sensor.fov_up = s.fov_up;
    d.sensor.fov_down = s.fov_down;
  }
  c.validate();
  return c;
}

std::string render_scenario(const ScenarioConfig& config) {
  std::ostringstream out;
  bool first = true;
  for (const auto& s : sections()) {
    if (!first) out << '\n';
    first = false;
    out << '[' << s.name << "]\n";
    for (const auto& f : s.fields) out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

std::vector<std::string> builtin_scenario_names() {
  std::vector<std::string> names;
  for (const auto& f : detail::builtin_files()) {
    if (f.category == "scenarios") names.emplace_back(f.name);
  }
  return names;
}

std::string_view builtin_scenario_text(std::string_view name) {
  for (const auto& f : detail::builtin_files()) {
    if (f.category == "scenarios" && f.name == name) return f.text;
  }
  config_error("no built-in scenario '" + std::string(name) + "'");
}

ScenarioConfig builtin_scenario(std::string_view name) {
  return load_scenario(builtin_scenario_text(name));
}

ScenarioConfig resolve_scenario(const std::string& name_or_path) {
  for (const auto& f : detail::builtin_files()) {
    if (f.category == "scenarios" && f.name == name_or_path) return load_scenario(f.text);
  }
  std::ifstream in(name_or_path, std::ios::binary);
  if (!in) config_error("'" + name_or_path + "' is neither a built-in scenario nor a readable file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_scenario(buf.str());
}

namespace {

void zero_adversarial(LossWeights& w) {
  w.g2d_tp = w.g3d_tp = w.g2d_tf = 0.0;
  w.d2d_tp = w.d3d_tp = w.d2d_tf = w.d2d_sp = w.d3d_sp = w.d2d_sf = 0.0;
}

}  // namespace

std::vector<NamedVariant> ablation_variants(const ScenarioConfig& config) {
  std::vector<NamedVariant> out;
  out.push_back({"full", config});

  ScenarioConfig no_dis = config;
  no_dis.name += "/no-discriminator";
  no_dis.training.enable_discriminators = false;
  zero_adversarial(no_dis.weights);
  out.push_back({"no-discriminator", no_dis});

  ScenarioConfig no_tgl = config;
  no_tgl.name += "/no-targetlike";
  no_tgl.training.enable_targetlike = false;
  no_tgl.weights.lambda_tl = 0.0;
  out.push_back({"no-targetlike", no_tgl});

  ScenarioConfig neither = no_dis;
  neither.name = config.name + "/no-dis-no-tgl";
  neither.training.enable_targetlike = false;
  neither.weights.lambda_tl = 0.0;
  out.push_back({"no-dis-no-tgl", neither});
  return out;
}

ScenarioConfig baseline_variant(const ScenarioConfig& config) {
  ScenarioConfig b = config;
  b.name += "/baseline";
  b.training.enable_targetlike = false;
  b.training.enable_discriminators = false;
  b.weights.lambda_s = b.weights.lambda_tl = b.weights.lambda_t = 0.0;
  zero_adversarial(b.weights);
  return b;
}

ScenarioConfig oracle_variant(const ScenarioConfig& config) {
  ScenarioConfig o = baseline_variant(config);
  o.name = config.name + "/oracle";
  o.training.supervision = Supervision::kTarget;
  return o;
}

ScenarioConfig with_max_iter(const ScenarioConfig& config, std::int64_t max_iter) {
  if (max_iter < 1) config_error("max_iter must be >= 1");
  ScenarioConfig out = config;
  const double ratio = static_cast<double>(max_iter) / static_cast<double>(config.training.max_iter);
  for (auto& m : out.optimizer.milestones) {
    m = std::clamp<std::int64_t>(std::llround(static_cast<double>(m) * ratio), 1, max_iter);
  }
  out.training.max_iter = max_iter;
  return out;
}

}  // namespace lionxa
