#include "hcp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace hcp::metrics {

namespace {

struct Candidate {
  std::size_t frame = 0;
  std::size_t index = 0;
  double confidence = 0.0;
};

struct ClassCurve {
  std::vector<bool> tp;  // in evaluation order
  std::size_t num_gt = 0;
  std::size_t num_tp = 0;
};

// Returns the match score of (prediction, ground truth) if it passes the
// threshold; higher is better.
using Affinity = std::function<std::optional<double>(std::size_t frame, std::size_t pred, std::size_t gt)>;
using Filter = std::function<bool(std::size_t frame, std::size_t index)>;

ClassCurve evaluate_class(std::span<const EvalFrame> frames, const Filter& pred_in, const Filter& gt_in,
                          const Affinity& affinity) {
  ClassCurve curve;
  std::vector<Candidate> candidates;
  std::vector<std::vector<std::size_t>> gts(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < frames[f].predictions.size(); ++i) {
      if (pred_in(f, i)) candidates.push_back({f, i, frames[f].predictions[i].confidence});
    }
    for (std::size_t g = 0; g < frames[f].ground_truth.size(); ++g) {
      if (gt_in(f, g)) gts[f].push_back(g);
    }
    curve.num_gt += gts[f].size();
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.confidence > b.confidence; });
  std::vector<std::vector<bool>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) used[f].assign(gts[f].size(), false);
  for (const Candidate& c : candidates) {
    std::optional<std::size_t> best;
    double best_score = 0.0;
    for (std::size_t j = 0; j < gts[c.frame].size(); ++j) {
      if (used[c.frame][j]) continue;
      const auto score = affinity(c.frame, c.index, gts[c.frame][j]);
      if (score && (!best || *score > best_score)) {
        best = j;
        best_score = *score;
      }
    }
    if (best) {
      used[c.frame][*best] = true;
      ++curve.num_tp;
    }
    curve.tp.push_back(best.has_value());
  }
  return curve;
}

double sorted_iou(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter, ++i, ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::size_t> sorted_unique(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

void finish(MetricReport& report) {
  if (report.classes.empty()) {
    report.mean = 0.0;
    return;
  }
  double sum = 0.0;
  for (const ClassMetric& c : report.classes) sum += c.value;
  report.mean = sum / static_cast<double>(report.classes.size());
}

std::string threshold_label(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", t);
  return buf;
}

// AP_{c,d}, recall and precision per class and threshold over center distances.
MetricReport distance_ap(std::span<const EvalFrame> frames, std::span<const double> thresholds,
                         const std::vector<int>& classes, const std::function<std::string(int)>& name_of,
                         const std::function<std::optional<int>(const PredictedInstance&)>& pred_class,
                         const std::function<std::optional<int>(const InstanceAnnotation&)>& gt_class,
                         Interpolation interp) {
  if (thresholds.empty()) throw std::invalid_argument("metrics: at least one distance threshold required");
  MetricReport report;
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  double recall_sum = 0.0, precision_sum = 0.0;
  std::vector<double> per_threshold_sum(thresholds.size(), 0.0);
  for (int c : classes) {
    const Filter pred_in = [&](std::size_t f, std::size_t i) {
      return pred_class(frames[f].predictions[i]) == c;
    };
    const Filter gt_in = [&](std::size_t f, std::size_t g) {
      return gt_class(frames[f].ground_truth[g]) == c;
    };
    ClassMetric cm;
    cm.index = c;
    cm.name = name_of(c);
    bool evaluated = true;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const double limit = thresholds[t];
      const Affinity aff = [&](std::size_t f, std::size_t i, std::size_t g) -> std::optional<double> {
        const double d = distance(frames[f].predictions[i].box.center(), frames[f].ground_truth[g].box.center());
        if (d <= limit) return -d;
        return std::nullopt;
      };
      const ClassCurve curve = evaluate_class(frames, pred_in, gt_in, aff);
      if (curve.num_gt == 0) {
        evaluated = false;
        break;
      }
      const double ap = average_precision(curve.tp, curve.num_gt, interp);
      cm.per_threshold.push_back(ap);
      cm.tp += curve.num_tp;
      cm.fp += curve.tp.size() - curve.num_tp;
      cm.fn += curve.num_gt - curve.num_tp;
      per_threshold_sum[t] += ap;
      recall_sum += static_cast<double>(curve.num_tp) / static_cast<double>(curve.num_gt);
      precision_sum +=
          curve.tp.empty() ? 0.0 : static_cast<double>(curve.num_tp) / static_cast<double>(curve.tp.size());
    }
    if (!evaluated) continue;
    cm.value = std::accumulate(cm.per_threshold.begin(), cm.per_threshold.end(), 0.0) /
               static_cast<double>(cm.per_threshold.size());
    report.classes.push_back(std::move(cm));
  }
  finish(report);
  const double cells = static_cast<double>(report.classes.size() * thresholds.size());
  report.summary["mAP"] = report.mean;
  report.summary["mRecall"] = cells > 0 ? recall_sum / cells : 0.0;
  report.summary["mPrecision"] = cells > 0 ? precision_sum / cells : 0.0;
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    report.summary["AP@" + threshold_label(thresholds[t])] =
        report.classes.empty() ? 0.0 : per_threshold_sum[t] / static_cast<double>(report.classes.size());
  }
  return report;
}

}  // namespace

double average_precision(const std::vector<bool>& tp, std::size_t num_gt, Interpolation interp) {
  if (num_gt == 0) return 0.0;
  std::vector<double> recall(tp.size()), precision(tp.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]) ++hits;
    recall[i] = static_cast<double>(hits) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  if (interp == Interpolation::kRaw) {
    double area = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
      area += (recall[i] - prev) * precision[i];
      prev = recall[i];
    }
    return area;
  }
  // Precision envelope: max precision at any recall >= r.
  for (std::size_t i = tp.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  const int steps = interp == Interpolation::k101 ? 100 : 40;
  double sum = 0.0;
  std::size_t cursor = 0;
  for (int s = 0; s <= steps; ++s) {
    const double r = static_cast<double>(s) / steps;
    while (cursor < recall.size() && recall[cursor] < r - 1e-12) ++cursor;
    if (cursor < recall.size()) sum += precision[cursor];
  }
  return sum / static_cast<double>(steps + 1);
}

MetricReport semantic_miou(std::span<const int> pred, std::span<const int> gt, const SemanticTaxonomy& taxonomy) {
  if (pred.size() != gt.size()) throw std::invalid_argument("semantic_miou: label length mismatch");
  const std::size_t c = taxonomy.size();
  std::vector<std::size_t> tp(c, 0), fp(c, 0), fn(c, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kUnlabeled) continue;
    if (gt[i] < 0 || static_cast<std::size_t>(gt[i]) >= c || pred[i] < 0 || static_cast<std::size_t>(pred[i]) >= c) {
      throw std::invalid_argument("semantic_miou: label outside the taxonomy at point " + std::to_string(i));
    }
    if (pred[i] == gt[i]) {
      ++tp[gt[i]];
    } else {
      ++fn[gt[i]];
      ++fp[pred[i]];
    }
  }
  MetricReport report;
  report.metric = "mIoU";
  for (std::size_t k = 1; k < c; ++k) {
    const std::size_t denom = tp[k] + fp[k] + fn[k];
    if (denom == 0) continue;
    ClassMetric cm;
    cm.index = static_cast<int>(k);
    cm.name = taxonomy.name(cm.index);
    cm.value = static_cast<double>(tp[k]) / static_cast<double>(denom);
    cm.per_threshold = {cm.value};
    cm.tp = tp[k];
    cm.fp = fp[k];
    cm.fn = fn[k];
    report.classes.push_back(std::move(cm));
  }
  finish(report);
  report.summary["mIoU"] = report.mean;
  return report;
}

MetricReport instance_ap(std::span<const EvalFrame> frames, double iou_threshold, const SemanticTaxonomy& taxonomy,
                         Interpolation interp) {
  // Sorted copies so IoU is a linear merge.
  std::vector<std::vector<std::vector<std::size_t>>> pred_sets(frames.size()), gt_sets(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const auto& p : frames[f].predictions) pred_sets[f].push_back(sorted_unique(p.indices));
    for (const auto& g : frames[f].ground_truth) gt_sets[f].push_back(sorted_unique(g.indices));
  }
  MetricReport report;
  report.metric = "AP" + threshold_label(iou_threshold * 100.0);
  report.thresholds = {iou_threshold};
  for (int c : taxonomy.thing_classes()) {
    const Filter pred_in = [&](std::size_t f, std::size_t i) { return frames[f].predictions[i].semantic_class == c; };
    const Filter gt_in = [&](std::size_t f, std::size_t g) { return frames[f].ground_truth[g].semantic_class == c; };
    const Affinity aff = [&](std::size_t f, std::size_t i, std::size_t g) -> std::optional<double> {
      const double iou = sorted_iou(pred_sets[f][i], gt_sets[f][g]);
      if (iou >= iou_threshold && iou > 0.0) return iou;
      return std::nullopt;
    };
    const ClassCurve curve = evaluate_class(frames, pred_in, gt_in, aff);
    if (curve.num_gt == 0) continue;
    ClassMetric cm;
    cm.index = c;
    cm.name = taxonomy.name(c);
    cm.value = average_precision(curve.tp, curve.num_gt, interp);
    cm.per_threshold = {cm.value};
    cm.tp = curve.num_tp;
    cm.fp = curve.tp.size() - curve.num_tp;
    cm.fn = curve.num_gt - curve.num_tp;
    report.classes.push_back(std::move(cm));
  }
  finish(report);
  report.summary[report.metric] = report.mean;
  return report;
}

MetricReport detection_ap(std::span<const EvalFrame> frames, std::span<const double> thresholds,
                          const SemanticTaxonomy& taxonomy, Interpolation interp) {
  MetricReport report = distance_ap(
      frames, thresholds, taxonomy.thing_classes(), [&](int c) { return taxonomy.name(c); },
      [](const PredictedInstance& p) { return std::optional<int>(p.semantic_class); },
      [](const InstanceAnnotation& g) { return std::optional<int>(g.semantic_class); }, interp);
  report.metric = "detection mAP";
  return report;
}

MetricReport action_map(std::span<const EvalFrame> frames, std::span<const double> thresholds,
                        const ActionTaxonomy& actions, Interpolation interp) {
  std::vector<int> classes(actions.size());
  std::iota(classes.begin(), classes.end(), 0);
  MetricReport report = distance_ap(
      frames, thresholds, classes, [&](int c) { return actions.name(c); },
      [](const PredictedInstance& p) { return p.action; }, [](const InstanceAnnotation& g) { return g.action; },
      interp);
  report.metric = "action mAP";
  return report;
}

MetricReport action_accuracy(std::span<const int> pred, std::span<const int> gt, const ActionTaxonomy& actions) {
  if (pred.size() != gt.size()) throw std::invalid_argument("action_accuracy: length mismatch");
  const std::size_t c = actions.size();
  std::vector<std::size_t> correct(c, 0), total(c, 0), predicted(c, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || static_cast<std::size_t>(gt[i]) >= c) {
      throw std::invalid_argument("action_accuracy: ground-truth action outside the taxonomy at " + std::to_string(i));
    }
    ++total[gt[i]];
    if (pred[i] == gt[i]) ++correct[gt[i]];
    if (pred[i] >= 0 && static_cast<std::size_t>(pred[i]) < c) ++predicted[pred[i]];
  }
  MetricReport report;
  report.metric = "mAcc";
  std::size_t all_correct = 0;
  for (std::size_t k = 0; k < c; ++k) {
    all_correct += correct[k];
    if (total[k] == 0) continue;
    ClassMetric cm;
    cm.index = static_cast<int>(k);
    cm.name = actions.name(cm.index);
    cm.value = static_cast<double>(correct[k]) / static_cast<double>(total[k]);
    cm.per_threshold = {cm.value};
    cm.tp = correct[k];
    cm.fp = predicted[k] - correct[k];
    cm.fn = total[k] - correct[k];
    report.classes.push_back(std::move(cm));
  }
  finish(report);
  report.summary["mAcc"] = report.mean;
  report.summary["accuracy"] = gt.empty() ? 0.0 : static_cast<double>(all_correct) / static_cast<double>(gt.size());
  return report;
}

std::string to_text_table(const MetricReport& report) {
  std::vector<std::string> header{"metric"}, row{report.metric};
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
    return std::string(buf);
  };
  header.push_back("mean");
  row.push_back(pct(report.mean));
  for (const ClassMetric& c : report.classes) {
    header.push_back(c.name);
    row.push_back(pct(c.value));
  }
  std::ostringstream out;
  for (const auto* line : {&header, &row}) {
    for (std::size_t i = 0; i < line->size(); ++i) {
      const std::size_t width = std::max(header[i].size(), row[i].size());
      std::string cell = (*line)[i];
      if (i == 0) {
        cell.resize(width, ' ');
      } else {
        cell.insert(0, width - cell.size(), ' ');
      }
      out << (i ? "  " : "") << cell;
    }
    out << '\n';
  }
  for (const auto& [key, value] : report.summary) {
    if (key == report.metric) continue;
    out << key << ": " << pct(value) << '\n';
  }
  return out.str();
}

}  // namespace hcp::metrics
