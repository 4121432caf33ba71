#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcp/action.hpp"
#include "hcp/backbone.hpp"
#include "hcp/hhoi.hpp"
#include "hcp/metrics.hpp"
#include "hcp/scene_synth.hpp"
#include "hcp/training.hpp"

// One structured configuration for every subcommand. Unknown keys and
// mistyped values raise ConfigError naming the offending path.
namespace hcp::run {

struct TrainSettings {
  std::size_t steps = 300;
  double learning_rate = 0.01;
  std::size_t checkpoint_every = 50;  // 0 keeps only the final checkpoint

  bool operator==(const TrainSettings&) const = default;
};

struct EvalSettings {
  metrics::Interpolation interpolation = metrics::Interpolation::k101;
  std::vector<double> iou_thresholds{0.5, 0.25};
  std::vector<double> distance_thresholds = metrics::default_distance_thresholds();
  // Ground-truth person to predicted box pairing radius for action accuracy.
  double action_match_distance = 0.25;

  bool operator==(const EvalSettings&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;       // drives the generator and every model initialization
  std::size_t frames = 20;      // synth split size
  std::string preset = "segmentation";
  synth::SynthConfig synth = *synth::preset("segmentation");
  backbone::BackboneConfig backbone;
  seg::HHOIConfig hhoi;
  action::ActionConfig action;
  TrainSettings train_seg{300, 0.01, 50};
  TrainSettings train_action{200, 0.005, 50};
  EvalSettings eval;

  // Checks every module invariant; throws ConfigError.
  void validate() const;
  SemanticTaxonomy taxonomy() const { return synth.taxonomy(); }
  synth::SynthConfig synth_config() const;
  train::SegModelConfig seg_model() const;
};

// Strict parse. A "preset" key inside "synth" selects the base generator
// settings before the remaining synth keys apply.
RunConfig parse_config(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& cfg);

// "section.key=value"; the value is parsed as JSON and falls back to a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Reads the file (if any), applies overrides, parses and validates.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

const char* interpolation_name(metrics::Interpolation interp);

}  // namespace hcp::run
