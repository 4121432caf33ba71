#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hcp/core.hpp"

namespace hcp::metrics {

// k101/k41: interpolated precision at 101 or 41 evenly spaced recall points.
// kRaw: step-wise area, sum of (r_i - r_{i-1}) * p_i without interpolation.
enum class Interpolation { k101, k41, kRaw };

struct ClassMetric {
  int index = 0;
  std::string name;
  double value = 0.0;               // mean over thresholds where several apply
  std::vector<double> per_threshold;
  std::size_t tp = 0;               // summed over thresholds
  std::size_t fp = 0;
  std::size_t fn = 0;

  bool operator==(const ClassMetric&) const = default;
};

// Only classes that could be evaluated appear in `classes`; `mean` averages
// their values.
struct MetricReport {
  std::string metric;
  std::vector<double> thresholds;
  std::vector<ClassMetric> classes;
  double mean = 0.0;
  std::map<std::string, double> summary;

  bool operator==(const MetricReport&) const = default;
};

// Area under the precision-recall curve. `tp` flags predictions sorted by
// descending confidence. Returns 0 when num_gt is 0.
double average_precision(const std::vector<bool>& tp, std::size_t num_gt, Interpolation interp);

MetricReport semantic_miou(std::span<const int> pred, std::span<const int> gt,
                           const SemanticTaxonomy& taxonomy);

// Predictions and ground truth of one frame.
struct EvalFrame {
  std::vector<PredictedInstance> predictions;
  std::vector<InstanceAnnotation> ground_truth;
};

// Point-set IoU matching per thing class, greedy by confidence (ties by input
// order), each ground truth matched at most once.
MetricReport instance_ap(std::span<const EvalFrame> frames, double iou_threshold,
                         const SemanticTaxonomy& taxonomy, Interpolation interp = Interpolation::k101);

inline const std::vector<double>& default_distance_thresholds() {
  static const std::vector<double> d{0.25, 0.5, 1.0};
  return d;
}

// Center-distance matching per class; mean = mAP over classes and thresholds.
MetricReport detection_ap(std::span<const EvalFrame> frames, std::span<const double> thresholds,
                          const SemanticTaxonomy& taxonomy, Interpolation interp = Interpolation::k101);

// Action classes act as detection classes: a prediction counts only when it
// lies within the distance threshold of an unmatched ground truth with the
// same action. Summary holds mAP, mRecall and mPrecision.
MetricReport action_map(std::span<const EvalFrame> frames, std::span<const double> thresholds,
                        const ActionTaxonomy& actions, Interpolation interp = Interpolation::k101);

MetricReport action_accuracy(std::span<const int> pred, std::span<const int> gt,
                             const ActionTaxonomy& actions);

// Aligned plain-text table: one column per evaluated class plus the mean, in percent.
std::string to_text_table(const MetricReport& report);

}  // namespace hcp::metrics
