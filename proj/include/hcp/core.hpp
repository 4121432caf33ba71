#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hcp {

// One LiDAR return. Stored in single precision so that frame files round-trip
// bit-exactly; all geometry is evaluated in double.
struct Point {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float r = 0.0f;  // reflectance in [0, 1]

  bool operator==(const Point&) const = default;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  bool operator==(const Vec3&) const = default;
};

double squared_distance(const Vec3& a, const Vec3& b);
double distance(const Vec3& a, const Vec3& b);

class PointCloud {
 public:
  PointCloud() = default;
  // Reflectance is clamped to [0, 1]; non-finite coordinates throw.
  explicit PointCloud(std::vector<Point> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Point& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<Point>& points() const { return points_; }
  Vec3 position(std::size_t i) const {
    const Point& p = points_[i];
    return {p.x, p.y, p.z};
  }
  std::vector<Vec3> positions() const;
  PointCloud subset(const std::vector<std::size_t>& indices) const;

  bool operator==(const PointCloud&) const = default;

 private:
  std::vector<Point> points_;
};

double normalize_yaw(double yaw);

// Oriented box in sensor coordinates. `l` runs along the heading, `w` across it.
struct Box7 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double w = 1.0;
  double l = 1.0;
  double h = 1.0;
  double yaw = 0.0;

  Vec3 center() const { return {x, y, z}; }
  std::array<double, 7> as_array() const { return {x, y, z, w, l, h, yaw}; }
  static Box7 from_array(const std::array<double, 7>& a);
  bool valid() const;
  bool operator==(const Box7&) const = default;
};

inline constexpr int kUnlabeled = 0;

// Class index 0 is reserved for "unlabeled" and is ignored by losses and metrics.
class SemanticTaxonomy {
 public:
  SemanticTaxonomy(std::vector<std::string> names, const std::string& person,
                   const std::vector<std::string>& stuff);

  // Thing classes as reported in the instance-segmentation benchmark table,
  // plus ground as the single stuff class.
  static SemanticTaxonomy standard();
  // A reduced taxonomy over the named things (person must be one of them) plus ground.
  static SemanticTaxonomy with_things(const std::vector<std::string>& things);

  std::size_t size() const { return names_.size(); }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<int> find(const std::string& name) const;
  int index_of(const std::string& name) const;  // throws on unknown name
  int person() const { return person_; }
  bool is_stuff(int index) const;
  bool is_thing(int index) const;
  std::vector<int> thing_classes() const;
  std::vector<int> stuff_classes() const { return stuff_; }

 private:
  std::vector<std::string> names_;
  int person_ = -1;
  std::vector<int> stuff_;
};

class ActionTaxonomy {
 public:
  ActionTaxonomy();
  static constexpr std::size_t kCount = 12;
  std::size_t size() const { return names_.size(); }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& names() const { return names_; }
  int index_of(const std::string& name) const;

 private:
  std::vector<std::string> names_;
};

struct InstanceAnnotation {
  int id = 0;
  int semantic_class = kUnlabeled;
  std::vector<std::size_t> indices;
  Box7 box;
  std::optional<int> action;
  std::optional<int> track_id;

  bool operator==(const InstanceAnnotation&) const = default;
};

struct SceneFrame {
  std::string frame_id;
  PointCloud cloud;
  std::vector<InstanceAnnotation> instances;
  std::vector<int> labels;  // per point semantic class

  bool operator==(const SceneFrame&) const = default;
};

// Model output for one frame. Segmentation fills labels and instance indices;
// action recognition fills box, action and action_scores.
struct PredictedInstance {
  int semantic_class = kUnlabeled;
  std::vector<std::size_t> indices;
  Box7 box;
  std::optional<int> action;
  std::vector<double> action_scores;
  double confidence = 0.0;

  bool operator==(const PredictedInstance&) const = default;
};

struct FramePrediction {
  std::string frame_id;
  std::vector<int> labels;
  std::vector<PredictedInstance> instances;

  bool operator==(const FramePrediction&) const = default;
};

// Empty result means every invariant holds. Each entry names the field and the
// offending index.
std::vector<std::string> validate_frame(const SceneFrame& frame, const SemanticTaxonomy& taxonomy);

std::vector<std::size_t> semantic_label_histogram(const SceneFrame& frame,
                                                  const SemanticTaxonomy& taxonomy);

}  // namespace hcp
