#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hcp/core.hpp"
#include "hcp/metrics.hpp"
#include "hcp/run_config.hpp"

namespace hcp::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kIoError = 3,
  kGradcheckFailed = 4,
};

// Full command line, argv[0] included. Returns the process exit code.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

// Metric reports behind the eval-* subcommands. `predictions[i]` belongs to `frames[i]`.
std::vector<metrics::MetricReport> evaluate_segmentation(std::span<const SceneFrame> frames,
                                                         std::span<const FramePrediction> predictions,
                                                         const run::RunConfig& cfg);
std::vector<metrics::MetricReport> evaluate_detection(std::span<const SceneFrame> frames,
                                                      std::span<const FramePrediction> predictions,
                                                      const run::RunConfig& cfg);
std::vector<metrics::MetricReport> evaluate_actions(std::span<const SceneFrame> frames,
                                                    std::span<const FramePrediction> predictions,
                                                    const run::RunConfig& cfg);

// Action predicted for each labelled ground-truth person (frame order, then
// instance order): the nearest predicted box center within `radius`, else -1.
struct ActionPairs {
  std::vector<int> predicted;
  std::vector<int> truth;
};
ActionPairs pair_actions(std::span<const SceneFrame> frames, std::span<const FramePrediction> predictions,
                         double radius);

// Every frame of a dataset directory, sorted by id, validated against `taxonomy`.
std::vector<SceneFrame> load_frames(const std::filesystem::path& dir, const SemanticTaxonomy& taxonomy);

}  // namespace hcp::cli
