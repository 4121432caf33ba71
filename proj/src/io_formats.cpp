#include "hcp/io_formats.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "binary_io.hpp"

namespace hcp::io {

namespace {

using json = nlohmann::json;

constexpr char kFrameMagic[4] = {'H', 'C', 'P', 'F'};

[[noreturn]] void fail(IoErrorCode code, const std::string& what) { throw IoError(code, what); }

const json& field(const json& obj, const char* key) {
  if (!obj.is_object()) fail(IoErrorCode::kMalformed, std::string("expected an object holding '") + key + "'");
  const auto it = obj.find(key);
  if (it == obj.end()) fail(IoErrorCode::kMalformed, std::string("missing field '") + key + "'");
  return *it;
}

const json& array_field(const json& obj, const char* key) {
  const json& v = field(obj, key);
  if (!v.is_array()) fail(IoErrorCode::kMalformed, std::string("field '") + key + "' must be an array");
  return v;
}

std::int64_t as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) fail(IoErrorCode::kMalformed, where + ": expected an integer");
  if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
    fail(IoErrorCode::kInvalidValue, where + ": integer too large");
  }
  return v.get<std::int64_t>();
}

int as_small_int(const json& v, const std::string& where) {
  const std::int64_t x = as_int(v, where);
  if (x < INT32_MIN || x > INT32_MAX) fail(IoErrorCode::kInvalidValue, where + ": integer out of range");
  return static_cast<int>(x);
}

std::uint64_t as_u64(const json& v, const std::string& where) {
  if (!v.is_number_unsigned()) fail(IoErrorCode::kMalformed, where + ": expected an unsigned integer");
  return v.get<std::uint64_t>();
}

std::size_t as_index(const json& v, std::size_t limit, const std::string& where) {
  if (!v.is_number_integer()) fail(IoErrorCode::kMalformed, where + ": expected an integer index");
  if (!v.is_number_unsigned() || v.get<std::uint64_t>() >= limit) {
    fail(IoErrorCode::kIndexOutOfRange, where + ": index " + v.dump() + " outside [0, " + std::to_string(limit) + ")");
  }
  return static_cast<std::size_t>(v.get<std::uint64_t>());
}

double as_double(const json& v, const std::string& where) {
  if (!v.is_number()) fail(IoErrorCode::kMalformed, where + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(IoErrorCode::kInvalidValue, where + ": non-finite number");
  return d;
}

std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) fail(IoErrorCode::kMalformed, where + ": expected a string");
  return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) fail(IoErrorCode::kMalformed, where + ": expected a boolean");
  return v.get<bool>();
}

std::optional<int> as_optional_int(const json& v, const std::string& where) {
  if (v.is_null()) return std::nullopt;
  return as_small_int(v, where);
}

json header(const char* schema) { return json{{"schema", schema}, {"version", kSchemaVersion}}; }

json parse_document(std::string_view text, const char* schema) {
  json doc = json::parse(text.begin(), text.end());
  const json& s = field(doc, "schema");
  if (!s.is_string() || s.get<std::string>() != schema) {
    fail(IoErrorCode::kSchemaMismatch, std::string("expected schema '") + schema + "', found " + s.dump());
  }
  const json& v = field(doc, "version");
  if (!v.is_number_integer() || v.get<std::int64_t>() != kSchemaVersion) {
    fail(IoErrorCode::kVersionMismatch, "unsupported schema version " + v.dump());
  }
  return doc;
}

// Maps parser and type exceptions to typed errors.
template <typename F>
auto guarded(F&& body) {
  try {
    return body();
  } catch (const json::exception& e) {
    fail(IoErrorCode::kMalformed, e.what());
  }
}

json box_to_json(const Box7& b) { return json(b.as_array()); }

Box7 box_from_json(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 7) fail(IoErrorCode::kMalformed, where + ": box must hold 7 numbers");
  std::array<double, 7> a{};
  for (std::size_t i = 0; i < 7; ++i) a[i] = as_double(v[i], where);
  const Box7 box = Box7::from_array(a);
  if (!box.valid()) fail(IoErrorCode::kInvalidValue, where + ": box sizes must be positive");
  return box;
}

json optional_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::vector<std::size_t> indices_from_json(const json& v, std::size_t limit, const std::string& where) {
  if (!v.is_array()) fail(IoErrorCode::kMalformed, where + ": indices must be an array");
  std::vector<std::size_t> out;
  out.reserve(v.size());
  for (const json& x : v) out.push_back(as_index(x, limit, where));
  return out;
}

std::vector<int> labels_from_json(const json& v) {
  std::vector<int> out;
  out.reserve(v.size());
  for (const json& x : v) {
    const int l = as_small_int(x, "labels");
    if (l < 0) fail(IoErrorCode::kInvalidValue, "labels: negative class");
    out.push_back(l);
  }
  return out;
}

std::size_t check_point_count(const json& doc, std::size_t point_count) {
  const std::uint64_t n = as_u64(field(doc, "point_count"), "point_count");
  if (n != point_count) {
    fail(IoErrorCode::kSchemaMismatch,
         "point_count " + std::to_string(n) + " does not match the frame (" + std::to_string(point_count) + ")");
  }
  return point_count;
}

}  // namespace

std::string encode_frame(const PointCloud& cloud) {
  if (cloud.size() > UINT32_MAX) throw std::invalid_argument("encode_frame: too many points");
  std::string out;
  out.reserve(10 + 16 * cloud.size());
  out.append(kFrameMagic, 4);
  detail::append_le<std::uint16_t>(out, kFrameVersion);
  detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(cloud.size()));
  for (const Point& p : cloud.points()) {
    detail::append_le(out, p.x);
    detail::append_le(out, p.y);
    detail::append_le(out, p.z);
    detail::append_le(out, p.r);
  }
  return out;
}

PointCloud decode_frame(std::string_view bytes) {
  detail::ByteReader reader(bytes);
  const std::string_view magic = reader.read_bytes(4, "magic");
  if (magic != std::string_view(kFrameMagic, 4)) fail(IoErrorCode::kBadMagic, "not an HCPF frame");
  const auto version = reader.read<std::uint16_t>("version");
  if (version != kFrameVersion) fail(IoErrorCode::kVersionMismatch, "frame version " + std::to_string(version));
  const auto count = reader.read<std::uint32_t>("point count");
  const std::uint64_t expected = 16ULL * count;
  if (reader.remaining() < expected) {
    fail(IoErrorCode::kTruncated, "frame declares " + std::to_string(count) + " points but holds " +
                                      std::to_string(reader.remaining()) + " payload bytes");
  }
  if (reader.remaining() > expected) fail(IoErrorCode::kTrailingBytes, "bytes after the last point");
  std::vector<Point> points(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Point& p = points[i];
    p.x = reader.read<float>("x");
    p.y = reader.read<float>("y");
    p.z = reader.read<float>("z");
    p.r = reader.read<float>("r");
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !std::isfinite(p.r)) {
      fail(IoErrorCode::kInvalidValue, "non-finite value in point " + std::to_string(i));
    }
  }
  return PointCloud(std::move(points));
}

void write_frame(const fs::path& path, const PointCloud& cloud) { detail::write_file(path.string(), encode_frame(cloud)); }

PointCloud read_frame(const fs::path& path) { return decode_frame(detail::read_file(path.string())); }

std::string encode_annotations(const SceneFrame& frame) {
  json doc = header("hcp.annotations");
  doc["frame_id"] = frame.frame_id;
  doc["point_count"] = frame.cloud.size();
  doc["labels"] = frame.labels;
  json instances = json::array();
  for (const InstanceAnnotation& inst : frame.instances) {
    instances.push_back({{"id", inst.id},
                         {"class", inst.semantic_class},
                         {"indices", inst.indices},
                         {"box", box_to_json(inst.box)},
                         {"action", optional_json(inst.action)},
                         {"track_id", optional_json(inst.track_id)}});
  }
  doc["instances"] = std::move(instances);
  return doc.dump() + "\n";
}

SceneFrame decode_annotations(std::string_view text, PointCloud cloud) {
  return guarded([&] {
    const json doc = parse_document(text, "hcp.annotations");
    const std::size_t n = check_point_count(doc, cloud.size());
    SceneFrame frame;
    frame.frame_id = as_string(field(doc, "frame_id"), "frame_id");
    frame.labels = labels_from_json(array_field(doc, "labels"));
    if (frame.labels.size() != n) {
      fail(IoErrorCode::kSchemaMismatch, "labels length " + std::to_string(frame.labels.size()) +
                                             " does not match point_count " + std::to_string(n));
    }
    const json& instances = array_field(doc, "instances");
    for (std::size_t k = 0; k < instances.size(); ++k) {
      const json& j = instances[k];
      const std::string where = "instances[" + std::to_string(k) + "]";
      InstanceAnnotation inst;
      inst.id = as_small_int(field(j, "id"), where + ".id");
      inst.semantic_class = as_small_int(field(j, "class"), where + ".class");
      if (inst.semantic_class < 0) fail(IoErrorCode::kInvalidValue, where + ".class: negative");
      inst.indices = indices_from_json(field(j, "indices"), n, where + ".indices");
      inst.box = box_from_json(field(j, "box"), where + ".box");
      inst.action = as_optional_int(field(j, "action"), where + ".action");
      inst.track_id = as_optional_int(field(j, "track_id"), where + ".track_id");
      frame.instances.push_back(std::move(inst));
    }
    frame.cloud = std::move(cloud);
    return frame;
  });
}

namespace {

void require_valid(const SceneFrame& frame, const SemanticTaxonomy& taxonomy) {
  const std::vector<std::string> issues = validate_frame(frame, taxonomy);
  if (!issues.empty()) {
    fail(IoErrorCode::kInvalidValue, "frame '" + frame.frame_id + "': " + issues.front() + " (" +
                                         std::to_string(issues.size()) + " violation(s))");
  }
}

}  // namespace

SceneFrame decode_annotations(std::string_view text, PointCloud cloud, const SemanticTaxonomy& taxonomy) {
  SceneFrame frame = decode_annotations(text, std::move(cloud));
  require_valid(frame, taxonomy);
  return frame;
}

void write_annotations(const fs::path& path, const SceneFrame& frame) { write_text(path, encode_annotations(frame)); }

SceneFrame read_annotations(const fs::path& path, PointCloud cloud) {
  return decode_annotations(read_text(path), std::move(cloud));
}

std::string encode_predictions(const FramePrediction& prediction, std::size_t point_count) {
  json doc = header("hcp.predictions");
  doc["frame_id"] = prediction.frame_id;
  doc["point_count"] = point_count;
  doc["labels"] = prediction.labels;
  json instances = json::array();
  for (const PredictedInstance& p : prediction.instances) {
    instances.push_back({{"class", p.semantic_class},
                         {"indices", p.indices},
                         {"box", box_to_json(p.box)},
                         {"action", optional_json(p.action)},
                         {"action_scores", p.action_scores},
                         {"confidence", p.confidence}});
  }
  doc["instances"] = std::move(instances);
  return doc.dump() + "\n";
}

FramePrediction decode_predictions(std::string_view text, std::size_t point_count) {
  return guarded([&] {
    const json doc = parse_document(text, "hcp.predictions");
    const std::size_t n = check_point_count(doc, point_count);
    FramePrediction pred;
    pred.frame_id = as_string(field(doc, "frame_id"), "frame_id");
    pred.labels = labels_from_json(array_field(doc, "labels"));
    if (!pred.labels.empty() && pred.labels.size() != n) {
      fail(IoErrorCode::kSchemaMismatch, "labels must be empty or one per point");
    }
    const json& instances = array_field(doc, "instances");
    for (std::size_t k = 0; k < instances.size(); ++k) {
      const json& j = instances[k];
      const std::string where = "instances[" + std::to_string(k) + "]";
      PredictedInstance p;
      p.semantic_class = as_small_int(field(j, "class"), where + ".class");
      if (p.semantic_class < 0) fail(IoErrorCode::kInvalidValue, where + ".class: negative");
      p.indices = indices_from_json(field(j, "indices"), n, where + ".indices");
      p.box = box_from_json(field(j, "box"), where + ".box");
      p.action = as_optional_int(field(j, "action"), where + ".action");
      for (const json& s : array_field(j, "action_scores")) p.action_scores.push_back(as_double(s, where + ".action_scores"));
      p.confidence = as_double(field(j, "confidence"), where + ".confidence");
      pred.instances.push_back(std::move(p));
    }
    return pred;
  });
}

void write_predictions(const fs::path& path, const FramePrediction& prediction, std::size_t point_count) {
  write_text(path, encode_predictions(prediction, point_count));
}

FramePrediction read_predictions(const fs::path& path, std::size_t point_count) {
  return decode_predictions(read_text(path), point_count);
}

std::string encode_reports(const std::vector<metrics::MetricReport>& reports) {
  json doc = header("hcp.report");
  json list = json::array();
  for (const auto& r : reports) {
    json classes = json::array();
    for (const auto& c : r.classes) {
      classes.push_back({{"index", c.index},
                         {"name", c.name},
                         {"value", c.value},
                         {"per_threshold", c.per_threshold},
                         {"tp", c.tp},
                         {"fp", c.fp},
                         {"fn", c.fn}});
    }
    list.push_back({{"metric", r.metric},
                    {"thresholds", r.thresholds},
                    {"mean", r.mean},
                    {"summary", r.summary},
                    {"classes", std::move(classes)}});
  }
  doc["reports"] = std::move(list);
  return doc.dump(2) + "\n";
}

std::vector<metrics::MetricReport> decode_reports(std::string_view text) {
  return guarded([&] {
    const json doc = parse_document(text, "hcp.report");
    std::vector<metrics::MetricReport> out;
    for (const json& j : array_field(doc, "reports")) {
      metrics::MetricReport r;
      r.metric = as_string(field(j, "metric"), "metric");
      for (const json& t : array_field(j, "thresholds")) r.thresholds.push_back(as_double(t, "thresholds"));
      r.mean = as_double(field(j, "mean"), "mean");
      const json& summary = field(j, "summary");
      if (!summary.is_object()) fail(IoErrorCode::kMalformed, "summary must be an object");
      for (const auto& [key, value] : summary.items()) r.summary[key] = as_double(value, "summary." + key);
      for (const json& c : array_field(j, "classes")) {
        metrics::ClassMetric cm;
        cm.index = as_small_int(field(c, "index"), "classes.index");
        cm.name = as_string(field(c, "name"), "classes.name");
        cm.value = as_double(field(c, "value"), "classes.value");
        for (const json& t : array_field(c, "per_threshold")) cm.per_threshold.push_back(as_double(t, "per_threshold"));
        cm.tp = as_u64(field(c, "tp"), "classes.tp");
        cm.fp = as_u64(field(c, "fp"), "classes.fp");
        cm.fn = as_u64(field(c, "fn"), "classes.fn");
        r.classes.push_back(std::move(cm));
      }
      out.push_back(std::move(r));
    }
    return out;
  });
}

std::string encode_manifest(const synth::SceneManifest& m) {
  json doc = header("hcp.manifest");
  doc["frame_id"] = m.frame_id;
  doc["seed"] = m.seed;
  doc["interaction_frame"] = m.interaction_frame;
  doc["class_points"] = m.class_points;
  doc["class_instances"] = m.class_instances;
  json instances = json::array();
  for (const auto& i : m.instances) {
    instances.push_back({{"id", i.id},
                         {"class", i.semantic_class},
                         {"action", optional_json(i.action)},
                         {"pose", i.pose},
                         {"points", i.points},
                         {"range", i.range},
                         {"owner", optional_json(i.owner)},
                         {"owner_distance", i.owner_distance}});
  }
  doc["instances"] = std::move(instances);
  return doc.dump(2) + "\n";
}

synth::SceneManifest decode_manifest(std::string_view text) {
  return guarded([&] {
    const json doc = parse_document(text, "hcp.manifest");
    synth::SceneManifest m;
    m.frame_id = as_string(field(doc, "frame_id"), "frame_id");
    m.seed = as_u64(field(doc, "seed"), "seed");
    m.interaction_frame = as_bool(field(doc, "interaction_frame"), "interaction_frame");
    for (const json& v : array_field(doc, "class_points")) m.class_points.push_back(as_u64(v, "class_points"));
    for (const json& v : array_field(doc, "class_instances")) m.class_instances.push_back(as_u64(v, "class_instances"));
    for (const json& j : array_field(doc, "instances")) {
      synth::InstanceManifest i;
      i.id = as_small_int(field(j, "id"), "instances.id");
      i.semantic_class = as_small_int(field(j, "class"), "instances.class");
      i.action = as_optional_int(field(j, "action"), "instances.action");
      i.pose = as_string(field(j, "pose"), "instances.pose");
      i.points = as_u64(field(j, "points"), "instances.points");
      i.range = as_double(field(j, "range"), "instances.range");
      i.owner = as_optional_int(field(j, "owner"), "instances.owner");
      i.owner_distance = as_double(field(j, "owner_distance"), "instances.owner_distance");
      m.instances.push_back(std::move(i));
    }
    return m;
  });
}

fs::path frame_path(const fs::path& dir, const std::string& id) { return dir / (id + ".hcpf"); }
fs::path annotation_path(const fs::path& dir, const std::string& id) { return dir / (id + ".ann.json"); }
fs::path prediction_path(const fs::path& dir, const std::string& id) { return dir / (id + ".pred.json"); }
fs::path manifest_path(const fs::path& dir, const std::string& id) { return dir / (id + ".manifest.json"); }

void save_scene(const fs::path& dir, const SceneFrame& frame) {
  write_frame(frame_path(dir, frame.frame_id), frame.cloud);
  write_annotations(annotation_path(dir, frame.frame_id), frame);
}

SceneFrame load_scene(const fs::path& dir, const std::string& frame_id) {
  SceneFrame frame = read_annotations(annotation_path(dir, frame_id), read_frame(frame_path(dir, frame_id)));
  if (frame.frame_id != frame_id) {
    fail(IoErrorCode::kSchemaMismatch, "annotation frame_id '" + frame.frame_id + "' != '" + frame_id + "'");
  }
  return frame;
}

SceneFrame load_scene(const fs::path& dir, const std::string& frame_id, const SemanticTaxonomy& taxonomy) {
  SceneFrame frame = load_scene(dir, frame_id);
  require_valid(frame, taxonomy);
  return frame;
}

std::vector<std::string> list_frames(const fs::path& dir) {
  std::error_code ec;
  fs::directory_iterator it(dir, ec);
  if (ec) fail(IoErrorCode::kOpenFailed, "cannot list " + dir.string() + ": " + ec.message());
  std::vector<std::string> ids;
  for (const auto& entry : it) {
    if (entry.is_regular_file() && entry.path().extension() == ".hcpf") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string read_text(const fs::path& path) { return detail::read_file(path.string()); }

void write_text(const fs::path& path, std::string_view text) { detail::write_file(path.string(), text); }

}  // namespace hcp::io
