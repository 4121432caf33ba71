#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "hcp/metrics.hpp"
#include "oracles.hpp"

using namespace hcp;
using namespace hcp::metrics;
using namespace hcp::oracles;

namespace {

const SemanticTaxonomy& taxonomy() {
  static const SemanticTaxonomy t = SemanticTaxonomy::with_things({"person", "box", "cart"});
  return t;
}

}  // namespace

TEST_CASE("average_precision basic curves") {
  const std::vector<bool> all{true, true, true};
  CHECK(average_precision(all, 3, Interpolation::k101) == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<bool> none{false, false};
  CHECK(average_precision(none, 3, Interpolation::k101) == 0.0);
  CHECK(average_precision({}, 2, Interpolation::k101) == 0.0);
  // One TP among two gts: precision 1 up to recall 0.5 -> 51 of 101 points.
  const std::vector<bool> half{true};
  CHECK(average_precision(half, 2, Interpolation::k101) == doctest::Approx(51.0 / 101.0).epsilon(1e-12));
  CHECK(average_precision(half, 2, Interpolation::k41) == doctest::Approx(21.0 / 41.0).epsilon(1e-12));
  CHECK(average_precision(half, 2, Interpolation::kRaw) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("semantic_miou examples") {
  const std::vector<int> gt{1, 1, 2, 3, 0, 2};
  auto r = semantic_miou(gt, gt, taxonomy());
  CHECK(r.mean == 1.0);
  CHECK(r.classes.size() == 3);

  const std::vector<int> a(10, 1), b(10, 2);
  r = semantic_miou(a, b, taxonomy());
  CHECK(r.mean == 0.0);

  const std::vector<int> shorter{1};
  CHECK_THROWS_AS(semantic_miou(shorter, gt, taxonomy()), std::invalid_argument);
}

TEST_CASE("semantic_miou matches a naive confusion-matrix oracle") {
  std::mt19937_64 rng(11);
  const int c = static_cast<int>(taxonomy().size());
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> pred(100), gt(100);
    for (int i = 0; i < 100; ++i) {
      pred[i] = static_cast<int>(rng() % static_cast<unsigned>(c));
      gt[i] = static_cast<int>(rng() % static_cast<unsigned>(c));
    }
    std::vector<std::vector<int>> conf(c, std::vector<int>(c, 0));
    for (int i = 0; i < 100; ++i) {
      if (gt[i] != 0) conf[gt[i]][pred[i]]++;
    }
    double sum = 0.0;
    int count = 0;
    for (int k = 1; k < c; ++k) {
      int tp = conf[k][k], fp = 0, fn = 0;
      for (int j = 0; j < c; ++j) {
        if (j == k) continue;
        fn += conf[k][j];
        fp += conf[j][k];
      }
      if (tp + fp + fn == 0) continue;
      sum += static_cast<double>(tp) / (tp + fp + fn);
      ++count;
    }
    const auto r = semantic_miou(pred, gt, taxonomy());
    CHECK(std::abs(r.mean - (count ? sum / count : 0.0)) <= 1e-12);
  }
}

TEST_CASE("instance_ap examples") {
  EvalFrame fr;
  InstanceAnnotation g;
  g.semantic_class = 2;
  g.indices = {1, 2, 3, 4};
  fr.ground_truth.push_back(g);
  std::vector<EvalFrame> frames{fr};
  CHECK(instance_ap(frames, 0.5, taxonomy()).mean == 0.0);

  PredictedInstance p;
  p.semantic_class = 2;
  p.indices = {4, 3, 2, 1};
  p.confidence = 0.9;
  frames[0].predictions.push_back(p);
  CHECK(instance_ap(frames, 0.5, taxonomy()).mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(instance_ap(frames, 0.25, taxonomy()).mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(instance_ap(frames, 0.5, taxonomy()).metric == "AP50");

  // IoU 2/5 = 0.4: TP at 0.25 only.
  frames[0].predictions[0].indices = {1, 2, 7};
  CHECK(instance_ap(frames, 0.5, taxonomy()).mean == 0.0);
  CHECK(instance_ap(frames, 0.25, taxonomy()).mean == doctest::Approx(1.0).epsilon(1e-12));

  // Class without ground truth is excluded; ground (stuff) never evaluated.
  const auto r = instance_ap(frames, 0.25, taxonomy());
  REQUIRE(r.classes.size() == 1);
  CHECK(r.classes[0].name == "box");
}

TEST_CASE("instance_ap equals the exhaustive assignment oracle on small sets") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const auto frames = random_instance_frames(rng, 6, 1 + trial % 2, trial % 3 != 0);
    for (double thr : {0.5, 0.25}) {
      for (Interpolation interp : {Interpolation::k101, Interpolation::k41, Interpolation::kRaw}) {
        const auto r = instance_ap(frames, thr, taxonomy(), interp);
        double sum = 0.0;
        int count = 0;
        for (int c : taxonomy().thing_classes()) {
          const auto oc = oracle_class(
              frames, [c](const PredictedInstance& p) { return p.semantic_class == c; },
              [c](const InstanceAnnotation& g) { return g.semantic_class == c; }, iou_score(thr));
          if (oc.num_gt == 0) {
            CHECK(find_class(r, c) == nullptr);
            continue;
          }
          const double ap = oracle_ap(oc.tp, oc.num_gt, interp);
          const ClassMetric* cm = find_class(r, c);
          REQUIRE(cm != nullptr);
          CHECK(std::abs(cm->value - ap) <= 1e-12);
          sum += ap;
          ++count;
        }
        CHECK(std::abs(r.mean - (count ? sum / count : 0.0)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("detection_ap examples") {
  EvalFrame fr;
  InstanceAnnotation g;
  g.semantic_class = 1;
  g.box.x = 1.0;
  fr.ground_truth.push_back(g);
  PredictedInstance p;
  p.semantic_class = 1;
  p.box.x = 1.0;
  p.confidence = 0.5;
  fr.predictions.push_back(p);
  std::vector<EvalFrame> frames{fr};
  auto r = detection_ap(frames, default_distance_thresholds(), taxonomy());
  REQUIRE(r.classes.size() == 1);
  CHECK(r.classes[0].per_threshold == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(r.mean == doctest::Approx(1.0).epsilon(1e-12));

  frames[0].predictions[0].box.x = 1.3;
  r = detection_ap(frames, default_distance_thresholds(), taxonomy());
  CHECK(r.classes[0].per_threshold[0] == 0.0);
  CHECK(r.classes[0].per_threshold[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.classes[0].per_threshold[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.classes[0].tp == 2);
  CHECK(r.classes[0].fp == 1);
  CHECK(r.classes[0].fn == 1);
}

TEST_CASE("detection_ap equals the exhaustive assignment oracle on small sets") {
  std::mt19937_64 rng(31);
  const auto& thresholds = default_distance_thresholds();
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n_gt = rng() % 4, n_pred = rng() % (7 - n_gt);
    const auto frames = random_box_frames(rng, n_gt, n_pred, 1 + trial % 2, 2, false, trial % 3 != 0);
    const auto r = detection_ap(frames, thresholds, taxonomy());
    double sum = 0.0;
    int cells = 0;
    for (int c : taxonomy().thing_classes()) {
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        const auto oc = oracle_class(
            frames, [c](const PredictedInstance& p) { return p.semantic_class == c; },
            [c](const InstanceAnnotation& g) { return g.semantic_class == c; }, distance_score(thresholds[t]));
        if (oc.num_gt == 0) break;
        const double ap = oracle_ap(oc.tp, oc.num_gt, Interpolation::k101);
        const ClassMetric* cm = find_class(r, c);
        REQUIRE(cm != nullptr);
        CHECK(std::abs(cm->per_threshold[t] - ap) <= 1e-12);
        sum += ap;
        ++cells;
      }
    }
    CHECK(std::abs(r.mean - (cells ? sum / cells : 0.0)) <= 1e-12);
  }
}

TEST_CASE("detection_ap on a 20-box scene matches a naive greedy double loop") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const auto frames = random_box_frames(rng, 10, 10, 1, 1, false, true);
    const auto& fr = frames[0];
    const auto r = detection_ap(frames, default_distance_thresholds(), taxonomy());
    std::vector<std::size_t> order(fr.predictions.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return fr.predictions[a].confidence > fr.predictions[b].confidence; });
    double sum = 0.0;
    for (double thr : default_distance_thresholds()) {
      std::vector<bool> used(fr.ground_truth.size(), false), tp;
      for (std::size_t i : order) {
        int best = -1;
        double best_d = 0.0;
        for (std::size_t g = 0; g < fr.ground_truth.size(); ++g) {
          const double d = distance(fr.predictions[i].box.center(), fr.ground_truth[g].box.center());
          if (!used[g] && d <= thr && (best < 0 || d < best_d)) {
            best = static_cast<int>(g);
            best_d = d;
          }
        }
        if (best >= 0) used[best] = true;
        tp.push_back(best >= 0);
      }
      sum += oracle_ap(tp, fr.ground_truth.size(), Interpolation::k101);
    }
    CHECK(std::abs(r.mean - sum / 3.0) <= 1e-12);
  }
}

TEST_CASE("action_map examples") {
  const ActionTaxonomy actions;
  std::vector<EvalFrame> frames(1);
  for (int a = 0; a < static_cast<int>(actions.size()); ++a) {
    InstanceAnnotation g;
    g.semantic_class = 1;
    g.box.x = 3.0 * a;
    g.action = a;
    frames[0].ground_truth.push_back(g);
    PredictedInstance p;
    p.semantic_class = 1;
    p.box = g.box;
    p.action = a;
    p.confidence = 0.5 + 0.01 * a;
    frames[0].predictions.push_back(p);
  }
  auto r = action_map(frames, default_distance_thresholds(), actions);
  CHECK(r.classes.size() == actions.size());
  CHECK(r.summary.at("mAP") == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.summary.at("mRecall") == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.summary.at("mPrecision") == doctest::Approx(1.0).epsilon(1e-12));

  for (auto& p : frames[0].predictions) p.action = (*p.action + 1) % static_cast<int>(actions.size());
  r = action_map(frames, default_distance_thresholds(), actions);
  CHECK(r.summary.at("mAP") == 0.0);
  CHECK(r.summary.at("mRecall") == 0.0);
}

TEST_CASE("action_map on a 3-class set matches a naive double-loop oracle") {
  const ActionTaxonomy actions;
  std::mt19937_64 rng(51);
  const auto& thresholds = default_distance_thresholds();
  for (int trial = 0; trial < 50; ++trial) {
    const auto frames = random_box_frames(rng, 4, 5, 2, 3, true, trial % 2 == 0);
    const auto r = action_map(frames, thresholds, actions);
    double ap_sum = 0.0, rec_sum = 0.0, prec_sum = 0.0;
    int cells = 0;
    for (int c = 0; c < 3; ++c) {
      std::size_t num_gt = 0;
      for (const auto& fr : frames) {
        for (const auto& g : fr.ground_truth) num_gt += g.action == c;
      }
      if (num_gt == 0) continue;
      for (double thr : thresholds) {
        // Naive: order all class-c predictions, then scan all gts per prediction.
        const auto order = eval_order(frames, [c](const PredictedInstance& p) { return p.action == c; });
        std::vector<std::vector<bool>> used(frames.size());
        for (std::size_t f = 0; f < frames.size(); ++f) used[f].assign(frames[f].ground_truth.size(), false);
        std::vector<bool> tp;
        for (auto [f, i] : order) {
          int best = -1;
          double best_d = 0.0;
          for (std::size_t g = 0; g < frames[f].ground_truth.size(); ++g) {
            const auto& gt = frames[f].ground_truth[g];
            if (used[f][g] || gt.action != c) continue;
            const double d = distance(frames[f].predictions[i].box.center(), gt.box.center());
            if (d <= thr && (best < 0 || d < best_d)) {
              best = static_cast<int>(g);
              best_d = d;
            }
          }
          if (best >= 0) used[f][best] = true;
          tp.push_back(best >= 0);
        }
        const double hits = static_cast<double>(std::count(tp.begin(), tp.end(), true));
        ap_sum += oracle_ap(tp, num_gt, Interpolation::k101);
        rec_sum += hits / static_cast<double>(num_gt);
        prec_sum += tp.empty() ? 0.0 : hits / static_cast<double>(tp.size());
        ++cells;
      }
    }
    REQUIRE(cells > 0);
    CHECK(std::abs(r.summary.at("mAP") - ap_sum / cells) <= 1e-12);
    CHECK(std::abs(r.summary.at("mRecall") - rec_sum / cells) <= 1e-12);
    CHECK(std::abs(r.summary.at("mPrecision") - prec_sum / cells) <= 1e-12);
  }
}

TEST_CASE("action_accuracy") {
  const ActionTaxonomy actions;
  const std::vector<int> gt{0, 0, 1, 4, 4, 4};
  auto r = action_accuracy(gt, gt, actions);
  CHECK(r.mean == 1.0);
  CHECK(r.classes.size() == 3);  // absent classes excluded

  const std::vector<int> pred{0, 1, 1, 4, 0, 0};
  r = action_accuracy(pred, gt, actions);
  CHECK(r.mean == doctest::Approx((0.5 + 1.0 + 1.0 / 3.0) / 3.0).epsilon(1e-12));

  const std::vector<int> shorter{0};
  CHECK_THROWS_AS(action_accuracy(shorter, gt, actions), std::invalid_argument);

  std::mt19937_64 rng(61);
  std::vector<int> mc_gt(10000), mc_pred(10000);
  for (int i = 0; i < 10000; ++i) {
    mc_gt[i] = static_cast<int>(rng() % 2);
    mc_pred[i] = static_cast<int>(rng() % 2);
  }
  CHECK(std::abs(action_accuracy(mc_pred, mc_gt, actions).mean - 0.5) <= 0.02);
}

TEST_CASE("AP properties: threshold monotonicity, duplicates, order invariance") {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    auto frames = random_instance_frames(rng, 6, 1, true);
    const double loose = instance_ap(frames, 0.25, taxonomy()).mean;
    const double strict = instance_ap(frames, 0.5, taxonomy()).mean;
    CHECK(strict <= loose + 1e-12);

    auto boxes = random_box_frames(rng, 3, 3, 1, 2, false, true);
    const std::vector<double> t1{0.25}, t2{0.5}, t3{1.0};
    const double d1 = detection_ap(boxes, t1, taxonomy()).mean;
    const double d2 = detection_ap(boxes, t2, taxonomy()).mean;
    const double d3 = detection_ap(boxes, t3, taxonomy()).mean;
    CHECK(d1 <= d2 + 1e-12);
    CHECK(d2 <= d3 + 1e-12);

    // Order invariance with distinct confidences.
    auto shuffled = frames;
    std::shuffle(shuffled[0].predictions.begin(), shuffled[0].predictions.end(), rng);
    CHECK(instance_ap(shuffled, 0.5, taxonomy()).mean == instance_ap(frames, 0.5, taxonomy()).mean);
    auto shuffled_boxes = boxes;
    std::shuffle(shuffled_boxes[0].predictions.begin(), shuffled_boxes[0].predictions.end(), rng);
    CHECK(detection_ap(shuffled_boxes, default_distance_thresholds(), taxonomy()).mean ==
          detection_ap(boxes, default_distance_thresholds(), taxonomy()).mean);
  }

  // A duplicate of a correct prediction (same confidence, later in input) never raises AP.
  std::mt19937_64 rng2(72);
  for (int trial = 0; trial < 200; ++trial) {
    auto frames = random_instance_frames(rng2, 6, 1, true);
    auto& fr = frames[0];
    if (fr.ground_truth.empty()) continue;
    PredictedInstance exact;
    exact.semantic_class = fr.ground_truth[0].semantic_class;
    exact.indices = fr.ground_truth[0].indices;
    exact.confidence = std::uniform_real_distribution<double>(0.0, 1.0)(rng2);
    fr.predictions.push_back(exact);
    const double before = instance_ap(frames, 0.5, taxonomy()).mean;
    fr.predictions.push_back(exact);
    CHECK(instance_ap(frames, 0.5, taxonomy()).mean <= before + 1e-12);
  }
}

TEST_CASE("text table is aligned") {
  const std::vector<int> gt{1, 1, 2, 3}, pred{1, 2, 2, 3};
  const auto table = to_text_table(semantic_miou(pred, gt, taxonomy()));
  const auto first_nl = table.find('\n');
  const auto second_nl = table.find('\n', first_nl + 1);
  CHECK(first_nl == second_nl - first_nl - 1);
  CHECK(table.find("person") != std::string::npos);
  CHECK(table.find("100.0") != std::string::npos);
}
