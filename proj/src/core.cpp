#include "hcp/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace hcp {

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

double distance(const Vec3& a, const Vec3& b) { return std::sqrt(squared_distance(a, b)); }

PointCloud::PointCloud(std::vector<Point> points) : points_(std::move(points)) {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    Point& p = points_[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || std::isnan(p.r)) {
      throw std::invalid_argument("point " + std::to_string(i) + " has a non-finite value");
    }
    p.r = std::clamp(p.r, 0.0f, 1.0f);
  }
}

std::vector<Vec3> PointCloud::positions() const {
  std::vector<Vec3> out;
  out.reserve(points_.size());
  for (const Point& p : points_) out.push_back({p.x, p.y, p.z});
  return out;
}

PointCloud PointCloud::subset(const std::vector<std::size_t>& indices) const {
  std::vector<Point> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(points_.at(i));
  return PointCloud(std::move(out));
}

double normalize_yaw(double yaw) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double y = std::fmod(yaw + std::numbers::pi, kTwoPi);
  if (y < 0.0) y += kTwoPi;
  y -= std::numbers::pi;
  // fmod rounding can land exactly on +pi
  if (y >= std::numbers::pi) y -= kTwoPi;
  return y;
}

Box7 Box7::from_array(const std::array<double, 7>& a) {
  return Box7{a[0], a[1], a[2], a[3], a[4], a[5], normalize_yaw(a[6])};
}

bool Box7::valid() const {
  const auto arr = as_array();
  for (double v : arr) {
    if (!std::isfinite(v)) return false;
  }
  return w > 0.0 && l > 0.0 && h > 0.0 && yaw >= -std::numbers::pi && yaw < std::numbers::pi;
}

SemanticTaxonomy::SemanticTaxonomy(std::vector<std::string> names, const std::string& person,
                                   const std::vector<std::string>& stuff)
    : names_(std::move(names)) {
  if (names_.empty() || names_[0] != "unlabeled") {
    throw std::invalid_argument("taxonomy must start with \"unlabeled\"");
  }
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (!seen.insert(n).second) throw std::invalid_argument("duplicate class name: " + n);
  }
  person_ = index_of(person);
  for (const auto& s : stuff) stuff_.push_back(index_of(s));
  if (is_stuff(person_)) throw std::invalid_argument("person cannot be a stuff class");
}

SemanticTaxonomy SemanticTaxonomy::standard() {
  return SemanticTaxonomy(
      {"unlabeled", "person", "motorbike", "table", "box", "cart", "seesaw", "basketball",
       "fitness equ", "cabinet", "baby", "blackboard", "staircase", "slide", "scooter", "computer",
       "backpack", "obj in hand", "chair", "spring car", "ground"},
      "person", {"ground"});
}

SemanticTaxonomy SemanticTaxonomy::with_things(const std::vector<std::string>& things) {
  std::vector<std::string> names{"unlabeled"};
  names.insert(names.end(), things.begin(), things.end());
  names.push_back("ground");
  return SemanticTaxonomy(std::move(names), "person", {"ground"});
}

std::optional<int> SemanticTaxonomy::find(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

int SemanticTaxonomy::index_of(const std::string& name) const {
  auto idx = find(name);
  if (!idx) throw std::invalid_argument("unknown semantic class: " + name);
  return *idx;
}

bool SemanticTaxonomy::is_stuff(int index) const {
  return std::find(stuff_.begin(), stuff_.end(), index) != stuff_.end();
}

bool SemanticTaxonomy::is_thing(int index) const {
  return index > 0 && index < static_cast<int>(names_.size()) && !is_stuff(index);
}

std::vector<int> SemanticTaxonomy::thing_classes() const {
  std::vector<int> out;
  for (int c = 1; c < static_cast<int>(names_.size()); ++c) {
    if (!is_stuff(c)) out.push_back(c);
  }
  return out;
}

ActionTaxonomy::ActionTaxonomy()
    : names_{"Lift",      "Carry",   "Move",    "Pull_Push", "Sit",       "Scooter-BalanceBike",
             "Hum-Inter", "Fitness", "Entertain", "Sports",  "Bend-Over", "Standing"} {}

int ActionTaxonomy::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::invalid_argument("unknown action: " + name);
  return static_cast<int>(it - names_.begin());
}

std::vector<std::string> validate_frame(const SceneFrame& frame, const SemanticTaxonomy& taxonomy) {
  std::vector<std::string> issues;
  const std::size_t n = frame.cloud.size();
  const int num_classes = static_cast<int>(taxonomy.size());
  const ActionTaxonomy actions;

  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = frame.cloud[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      issues.push_back("points[" + std::to_string(i) + "]: non-finite coordinate");
    }
    if (!(p.r >= 0.0f && p.r <= 1.0f)) {
      issues.push_back("points[" + std::to_string(i) + "]: reflectance outside [0,1]");
    }
  }
  if (frame.labels.size() != n) {
    issues.push_back("labels: length " + std::to_string(frame.labels.size()) + " != point count " +
                     std::to_string(n));
  }

  // owner[i] = position of the instance claiming point i, or -1
  std::vector<long> owner(n, -1);
  std::unordered_set<int> ids;
  for (std::size_t k = 0; k < frame.instances.size(); ++k) {
    const InstanceAnnotation& inst = frame.instances[k];
    const std::string where = "instances[" + std::to_string(k) + "]";
    if (!ids.insert(inst.id).second) {
      issues.push_back(where + ".id: duplicate id " + std::to_string(inst.id));
    }
    if (!taxonomy.is_thing(inst.semantic_class)) {
      issues.push_back(where + ".semantic_class: " + std::to_string(inst.semantic_class) +
                       " is not a thing class");
    }
    if (!inst.box.valid()) issues.push_back(where + ".box: invalid box");
    const bool is_person = inst.semantic_class == taxonomy.person();
    if (is_person && !inst.action) {
      issues.push_back(where + ".action: person instance " + std::to_string(inst.id) +
                       " has no action");
    }
    if (!is_person && inst.action) {
      issues.push_back(where + ".action: non-person instance " + std::to_string(inst.id) +
                       " carries an action");
    }
    if (inst.action && (*inst.action < 0 || *inst.action >= static_cast<int>(actions.size()))) {
      issues.push_back(where + ".action: index " + std::to_string(*inst.action) + " out of range");
    }
    std::unordered_set<std::size_t> local;
    for (std::size_t j = 0; j < inst.indices.size(); ++j) {
      const std::size_t idx = inst.indices[j];
      if (idx >= n) {
        issues.push_back(where + ".indices[" + std::to_string(j) + "]: point " +
                         std::to_string(idx) + " out of range");
        continue;
      }
      if (!local.insert(idx).second) {
        issues.push_back(where + ".indices: point " + std::to_string(idx) + " listed twice");
        continue;
      }
      if (owner[idx] >= 0) {
        issues.push_back("points[" + std::to_string(idx) + "]: point " + std::to_string(idx) +
                         " belongs to instances " + std::to_string(owner[idx]) + " and " +
                         std::to_string(k));
        continue;
      }
      owner[idx] = static_cast<long>(k);
    }
  }

  if (frame.labels.size() == n) {
    for (std::size_t i = 0; i < n; ++i) {
      const int label = frame.labels[i];
      if (label < 0 || label >= num_classes) {
        issues.push_back("labels[" + std::to_string(i) + "]: class " + std::to_string(label) +
                         " out of range");
        continue;
      }
      if (owner[i] >= 0) {
        const int expected = frame.instances[static_cast<std::size_t>(owner[i])].semantic_class;
        if (label != expected) {
          issues.push_back("labels[" + std::to_string(i) + "]: label " + std::to_string(label) +
                           " disagrees with instance class " + std::to_string(expected));
        }
      } else if (label != kUnlabeled && !taxonomy.is_stuff(label)) {
        issues.push_back("labels[" + std::to_string(i) + "]: thing label " + std::to_string(label) +
                         " on a point outside every instance");
      }
    }
  }
  return issues;
}

std::vector<std::size_t> semantic_label_histogram(const SceneFrame& frame,
                                                  const SemanticTaxonomy& taxonomy) {
  std::vector<std::size_t> counts(taxonomy.size(), 0);
  for (int label : frame.labels) {
    if (label >= 0 && static_cast<std::size_t>(label) < counts.size()) ++counts[label];
  }
  return counts;
}

}  // namespace hcp
