#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hcp/core.hpp"

namespace hcp::synth {

struct ObjectSpawn {
  std::string name;
  double probability = 0.0;  // per person

  bool operator==(const ObjectSpawn&) const = default;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  // Thing classes of the taxonomy; "person" is required. Ground is always added.
  std::vector<std::string> things{"person", "box", "cart"};
  std::size_t min_persons = 2;
  std::size_t max_persons = 4;
  // Extra objects placed next to a person, independent of its action.
  std::vector<ObjectSpawn> objects{{"box", 0.2}, {"cart", 0.2}};
  // Relative weights over the action taxonomy; zero weights are never drawn.
  std::vector<double> action_mixture = std::vector<double>(ActionTaxonomy::kCount, 1.0);
  double min_range = 3.0;         // meters from the sensor
  double extent = 10.0;           // maximum person range
  double density = 280.0;         // surface points per m^2 at reference_range
  double reference_range = 5.0;   // density scales with (reference_range / range)^2
  double ground_density = 2.5;    // ground points per m^2 at reference_range
  double sensor_height = 1.8;
  double dropout = 0.0;           // per-instance probability of losing an azimuth sector
  double dropout_sector = 1.2;    // sector width in radians
  double min_separation = 1.6;    // between person centers of different groups
  std::size_t min_instance_points = 24;
  // Interaction frames: persons come in close pairs labelled Hum-Inter, one of
  // them in a plain standing pose. Other frames hold isolated persons and,
  // when this is nonzero, never draw Hum-Inter.
  double pair_frame_probability = 0.0;
  double pair_distance = 1.2;

  void validate() const;
  SemanticTaxonomy taxonomy() const;

  bool operator==(const SynthConfig&) const = default;
};

// Named presets: "segmentation", "separable-actions", "context-actions".
std::optional<SynthConfig> preset(const std::string& name);
std::vector<std::string> preset_names();

struct InstanceManifest {
  int id = 0;
  int semantic_class = kUnlabeled;
  std::optional<int> action;
  std::string pose;
  std::size_t points = 0;
  double range = 0.0;                // sensor distance of the placement origin
  std::optional<int> owner;          // person an object was placed next to
  double owner_distance = 0.0;       // horizontal distance between placement origins

  bool operator==(const InstanceManifest&) const = default;
};

// True composition of one generated frame.
struct SceneManifest {
  std::string frame_id;
  std::uint64_t seed = 0;
  bool interaction_frame = false;
  std::vector<std::size_t> class_points;     // per taxonomy class, including unlabeled
  std::vector<std::size_t> class_instances;  // per taxonomy class
  std::vector<InstanceManifest> instances;

  bool operator==(const SceneManifest&) const = default;
};

struct GeneratedScene {
  SceneFrame frame;
  SceneManifest manifest;
};

GeneratedScene generate_scene(const SynthConfig& cfg, const std::string& frame_id = "");

struct Split {
  std::vector<GeneratedScene> train;
  std::vector<GeneratedScene> test;
};

// Frame seeds derived from cfg.seed; 80/20 split with at least one test frame.
std::vector<std::uint64_t> frame_seeds(std::uint64_t base_seed, std::size_t count);
Split generate_split(const SynthConfig& cfg, std::size_t frame_count);
// Throws ConfigError when the two seed sets share a value.
void require_disjoint_seeds(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b);

}  // namespace hcp::synth
