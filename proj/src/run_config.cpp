#include "hcp/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "hcp/error.hpp"

namespace hcp::run {

using nlohmann::json;

namespace {

// Tracks which keys of one JSON object were consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& at(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    out = convert<T>(j_.at(key), child(key));
  }

  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown config key: " + child(key.c_str()));
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(path + " must be a number");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path + " must be non-negative");
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path + " must be a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <class T>
std::vector<T> read_list(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + " must be an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(ObjectReader::convert<T>(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

metrics::Interpolation parse_interpolation(const std::string& s, const std::string& path) {
  if (s == "101") return metrics::Interpolation::k101;
  if (s == "41") return metrics::Interpolation::k41;
  if (s == "raw") return metrics::Interpolation::kRaw;
  throw ConfigError(path + " must be one of \"101\", \"41\", \"raw\"");
}

void read_synth(const json& j, RunConfig& cfg) {
  ObjectReader r(j, "synth");
  if (r.has("preset")) {
    cfg.preset = ObjectReader::convert<std::string>(r.at("preset"), "synth.preset");
    const auto p = synth::preset(cfg.preset);
    if (!p) throw ConfigError("synth.preset: unknown preset \"" + cfg.preset + "\"");
    cfg.synth = *p;
  }
  synth::SynthConfig& s = cfg.synth;
  if (r.has("things")) s.things = read_list<std::string>(r.at("things"), "synth.things");
  r.get("min_persons", s.min_persons);
  r.get("max_persons", s.max_persons);
  if (r.has("objects")) {
    const json& o = r.at("objects");
    if (!o.is_object()) throw ConfigError("synth.objects must be an object of name: probability");
    s.objects.clear();
    for (const auto& [name, p] : o.items()) {
      s.objects.push_back({name, ObjectReader::convert<double>(p, "synth.objects." + name)});
    }
  }
  if (r.has("action_mixture")) {
    const json& m = r.at("action_mixture");
    if (!m.is_object()) throw ConfigError("synth.action_mixture must be an object of action: weight");
    const ActionTaxonomy actions;
    s.action_mixture.assign(ActionTaxonomy::kCount, 0.0);
    for (const auto& [name, w] : m.items()) {
      int index = -1;
      try {
        index = actions.index_of(name);
      } catch (const std::exception&) {
        throw ConfigError("synth.action_mixture: unknown action \"" + name + "\"");
      }
      s.action_mixture[static_cast<std::size_t>(index)] =
          ObjectReader::convert<double>(w, "synth.action_mixture." + name);
    }
  }
  r.get("min_range", s.min_range);
  r.get("extent", s.extent);
  r.get("density", s.density);
  r.get("reference_range", s.reference_range);
  r.get("ground_density", s.ground_density);
  r.get("sensor_height", s.sensor_height);
  r.get("dropout", s.dropout);
  r.get("dropout_sector", s.dropout_sector);
  r.get("min_separation", s.min_separation);
  r.get("min_instance_points", s.min_instance_points);
  r.get("pair_frame_probability", s.pair_frame_probability);
  r.get("pair_distance", s.pair_distance);
  r.finish();
}

void read_backbone(const json& j, backbone::BackboneConfig& b) {
  ObjectReader r(j, "backbone");
  r.get("output_dim", b.output_dim);
  if (r.has("levels")) {
    const json& levels = r.at("levels");
    if (!levels.is_array()) throw ConfigError("backbone.levels must be an array");
    b.levels.clear();
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const std::string path = "backbone.levels[" + std::to_string(i) + "]";
      ObjectReader lr(levels[i], path);
      backbone::AbstractionLevel level;
      lr.get("sample_divisor", level.sample_divisor);
      lr.get("radius", level.radius);
      lr.get("max_group", level.max_group);
      if (lr.has("mlp")) level.mlp = read_list<std::size_t>(lr.at("mlp"), path + ".mlp");
      lr.finish();
      b.levels.push_back(level);
    }
  }
  if (r.has("propagation")) {
    const json& p = r.at("propagation");
    if (!p.is_array()) throw ConfigError("backbone.propagation must be an array");
    b.propagation.clear();
    for (std::size_t i = 0; i < p.size(); ++i) {
      b.propagation.push_back(read_list<std::size_t>(p[i], "backbone.propagation[" + std::to_string(i) + "]"));
    }
  }
  r.finish();
}

void read_hhoi(const json& j, seg::HHOIConfig& h) {
  ObjectReader r(j, "hhoi");
  r.get("tau", h.tau);
  r.get("tokens", h.tokens);
  r.get("head_hidden", h.head_hidden);
  r.get("refine_dim", h.refine_dim);
  r.get("group_radius", h.group_radius);
  r.get("score_threshold", h.score_threshold);
  r.get("min_cluster", h.min_cluster);
  r.get("mask_threshold", h.mask_threshold);
  r.get("match_iou", h.match_iou);
  r.finish();
}

void read_action(const json& j, action::ActionConfig& a) {
  ObjectReader r(j, "action");
  r.get("grow_length", a.grow_length);
  r.get("grow_width", a.grow_width);
  r.get("neighbors", a.neighbors);
  r.get("points", a.points);
  r.get("branches", a.branches);
  r.get("serial", a.serial);
  r.get("base_width", a.base_width);
  r.get("base_radius", a.base_radius);
  r.get("max_group", a.max_group);
  r.get("embed_dim", a.embed_dim);
  r.get("classifier_hidden", a.classifier_hidden);
  r.finish();
}

void read_train(const json& j, const std::string& path, TrainSettings& t) {
  ObjectReader r(j, path);
  r.get("steps", t.steps);
  r.get("learning_rate", t.learning_rate);
  r.get("checkpoint_every", t.checkpoint_every);
  r.finish();
}

void read_eval(const json& j, EvalSettings& e) {
  ObjectReader r(j, "eval");
  if (r.has("interpolation")) {
    e.interpolation = parse_interpolation(ObjectReader::convert<std::string>(r.at("interpolation"), "eval.interpolation"),
                                          "eval.interpolation");
  }
  if (r.has("iou_thresholds")) e.iou_thresholds = read_list<double>(r.at("iou_thresholds"), "eval.iou_thresholds");
  if (r.has("distance_thresholds")) {
    e.distance_thresholds = read_list<double>(r.at("distance_thresholds"), "eval.distance_thresholds");
  }
  r.get("action_match_distance", e.action_match_distance);
  r.finish();
}

json train_json(const TrainSettings& t) {
  return {{"steps", t.steps}, {"learning_rate", t.learning_rate}, {"checkpoint_every", t.checkpoint_every}};
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

const char* interpolation_name(metrics::Interpolation interp) {
  switch (interp) {
    case metrics::Interpolation::k101:
      return "101";
    case metrics::Interpolation::k41:
      return "41";
    case metrics::Interpolation::kRaw:
      return "raw";
  }
  return "101";
}

synth::SynthConfig RunConfig::synth_config() const {
  synth::SynthConfig s = synth;
  s.seed = seed;
  return s;
}

train::SegModelConfig RunConfig::seg_model() const {
  train::SegModelConfig m;
  m.things = synth.things;
  m.backbone = backbone;
  m.hhoi = hhoi;
  m.seed = seed;
  return m.resolved();
}

void RunConfig::validate() const {
  synth_config().validate();
  backbone.validate();
  seg_model().hhoi.validate();
  action.validate();
  require(frames >= 2, "frames must be at least 2");
  for (const TrainSettings* t : {&train_seg, &train_action}) {
    require(t->learning_rate > 0.0, "learning_rate must be positive");
  }
  require(!eval.iou_thresholds.empty(), "eval.iou_thresholds must not be empty");
  for (double t : eval.iou_thresholds) require(t > 0.0 && t <= 1.0, "eval.iou_thresholds must lie in (0, 1]");
  require(!eval.distance_thresholds.empty(), "eval.distance_thresholds must not be empty");
  for (double d : eval.distance_thresholds) require(d > 0.0, "eval.distance_thresholds must be positive");
  require(eval.action_match_distance > 0.0, "eval.action_match_distance must be positive");
}

RunConfig parse_config(const json& doc) {
  RunConfig cfg;
  ObjectReader r(doc, "");
  r.get("seed", cfg.seed);
  r.get("frames", cfg.frames);
  if (r.has("synth")) read_synth(r.at("synth"), cfg);
  if (r.has("backbone")) read_backbone(r.at("backbone"), cfg.backbone);
  if (r.has("hhoi")) read_hhoi(r.at("hhoi"), cfg.hhoi);
  if (r.has("action")) read_action(r.at("action"), cfg.action);
  if (r.has("train_seg")) read_train(r.at("train_seg"), "train_seg", cfg.train_seg);
  if (r.has("train_action")) read_train(r.at("train_action"), "train_action", cfg.train_action);
  if (r.has("eval")) read_eval(r.at("eval"), cfg.eval);
  r.finish();
  return cfg;
}

json to_json(const RunConfig& cfg) {
  const synth::SynthConfig& s = cfg.synth;
  json objects = json::object();
  for (const auto& o : s.objects) objects[o.name] = o.probability;
  json mixture = json::object();
  const ActionTaxonomy actions;
  for (std::size_t i = 0; i < s.action_mixture.size(); ++i) mixture[actions.name(static_cast<int>(i))] = s.action_mixture[i];
  json levels = json::array();
  for (const auto& l : cfg.backbone.levels) {
    levels.push_back({{"sample_divisor", l.sample_divisor}, {"radius", l.radius}, {"max_group", l.max_group}, {"mlp", l.mlp}});
  }
  const seg::HHOIConfig& h = cfg.hhoi;
  const action::ActionConfig& a = cfg.action;
  return {
      {"seed", cfg.seed},
      {"frames", cfg.frames},
      {"synth",
       {{"preset", cfg.preset},
        {"things", s.things},
        {"min_persons", s.min_persons},
        {"max_persons", s.max_persons},
        {"objects", objects},
        {"action_mixture", mixture},
        {"min_range", s.min_range},
        {"extent", s.extent},
        {"density", s.density},
        {"reference_range", s.reference_range},
        {"ground_density", s.ground_density},
        {"sensor_height", s.sensor_height},
        {"dropout", s.dropout},
        {"dropout_sector", s.dropout_sector},
        {"min_separation", s.min_separation},
        {"min_instance_points", s.min_instance_points},
        {"pair_frame_probability", s.pair_frame_probability},
        {"pair_distance", s.pair_distance}}},
      {"backbone", {{"output_dim", cfg.backbone.output_dim}, {"levels", levels}, {"propagation", cfg.backbone.propagation}}},
      {"hhoi",
       {{"tau", h.tau},
        {"tokens", h.tokens},
        {"head_hidden", h.head_hidden},
        {"refine_dim", h.refine_dim},
        {"group_radius", h.group_radius},
        {"score_threshold", h.score_threshold},
        {"min_cluster", h.min_cluster},
        {"mask_threshold", h.mask_threshold},
        {"match_iou", h.match_iou}}},
      {"action",
       {{"grow_length", a.grow_length},
        {"grow_width", a.grow_width},
        {"neighbors", a.neighbors},
        {"points", a.points},
        {"branches", a.branches},
        {"serial", a.serial},
        {"base_width", a.base_width},
        {"base_radius", a.base_radius},
        {"max_group", a.max_group},
        {"embed_dim", a.embed_dim},
        {"classifier_hidden", a.classifier_hidden}}},
      {"train_seg", train_json(cfg.train_seg)},
      {"train_action", train_json(cfg.train_action)},
      {"eval",
       {{"interpolation", interpolation_name(cfg.eval.interpolation)},
        {"iou_thresholds", cfg.eval.iou_thresholds},
        {"distance_thresholds", cfg.eval.distance_thresholds},
        {"action_match_distance", cfg.eval.action_match_distance}}},
  };
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must read key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override has an empty key: " + assignment);
    if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError(IoErrorCode::kOpenFailed, "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    doc = json::parse(ss.str(), nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config " + path + " is not valid JSON");
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  RunConfig cfg = parse_config(doc);
  cfg.validate();
  return cfg;
}

}  // namespace hcp::run
