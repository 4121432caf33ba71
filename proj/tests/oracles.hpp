#pragma once

// Brute-force references shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "hcp/metrics.hpp"

namespace hcp::oracles {

using metrics::ClassMetric;
using metrics::EvalFrame;
using metrics::Interpolation;
using metrics::MetricReport;

// ---- Oracles -------------------------------------------------------------

// Flattened candidate pair scores for one class: score[p][g] present when the
// pair passes the threshold. Predictions are given in evaluation order.
struct PairTable {
  std::vector<std::vector<std::optional<double>>> score;
  std::size_t num_gt = 0;
};

// Enumerates every partial one-to-one assignment of predictions to ground
// truth and keeps the ones a confidence-ordered greedy matcher could produce.
inline std::vector<bool> enumerate_greedy_assignment(const PairTable& table) {
  const std::size_t p_count = table.score.size();
  std::vector<int> assign(p_count, -1);
  std::vector<std::vector<int>> consistent;
  std::vector<bool> used(table.num_gt, false);
  std::function<void(std::size_t)> rec = [&](std::size_t p) {
    if (p == p_count) {
      // Check greedy consistency.
      std::vector<bool> taken(table.num_gt, false);
      for (std::size_t q = 0; q < p_count; ++q) {
        int best = -1;
        double best_score = 0.0;
        for (std::size_t g = 0; g < table.num_gt; ++g) {
          if (taken[g] || !table.score[q][g]) continue;
          if (best < 0 || *table.score[q][g] > best_score) {
            best = static_cast<int>(g);
            best_score = *table.score[q][g];
          }
        }
        if (assign[q] != best) return;
        if (best >= 0) taken[best] = true;
      }
      consistent.push_back(assign);
      return;
    }
    assign[p] = -1;
    rec(p + 1);
    for (std::size_t g = 0; g < table.num_gt; ++g) {
      if (used[g] || !table.score[p][g]) continue;
      used[g] = true;
      assign[p] = static_cast<int>(g);
      rec(p + 1);
      used[g] = false;
      assign[p] = -1;
    }
  };
  rec(0);
  if (consistent.size() != 1) throw std::logic_error("greedy assignment is not unique");
  std::vector<bool> tp(p_count);
  for (std::size_t q = 0; q < p_count; ++q) tp[q] = consistent[0][q] >= 0;
  return tp;
}

// Quadratic reference AP: precision at recall point r is the maximum
// precision over all prefixes reaching recall >= r.
inline double oracle_ap(const std::vector<bool>& tp, std::size_t num_gt, Interpolation interp) {
  if (num_gt == 0) return 0.0;
  std::vector<double> rec, prec;
  double hits = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    hits += tp[i] ? 1.0 : 0.0;
    rec.push_back(hits / static_cast<double>(num_gt));
    prec.push_back(hits / static_cast<double>(i + 1));
  }
  if (interp == Interpolation::kRaw) {
    double area = 0.0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
      if (tp[i]) area += prec[i] / static_cast<double>(num_gt);
    }
    return area;
  }
  const int steps = interp == Interpolation::k101 ? 100 : 40;
  double sum = 0.0;
  for (int s = 0; s <= steps; ++s) {
    const double r = static_cast<double>(s) / steps;
    double best = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (rec[i] + 1e-12 >= r) best = std::max(best, prec[i]);
    }
    sum += best;
  }
  return sum / (steps + 1);
}

inline double oracle_set_iou(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::set<std::size_t> sa(a.begin(), a.end()), sb(b.begin(), b.end()), su = sa;
  su.insert(sb.begin(), sb.end());
  std::size_t inter = 0;
  for (std::size_t x : sa) inter += sb.count(x);
  return su.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(su.size());
}

// Prediction order: descending confidence, ties by (frame, index).
inline std::vector<std::pair<std::size_t, std::size_t>> eval_order(const std::vector<EvalFrame>& frames,
                                                            const std::function<bool(const PredictedInstance&)>& in) {
  std::vector<std::pair<std::size_t, std::size_t>> order;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < frames[f].predictions.size(); ++i) {
      if (in(frames[f].predictions[i])) order.emplace_back(f, i);
    }
  }
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    const double ca = frames[a.first].predictions[a.second].confidence;
    const double cb = frames[b.first].predictions[b.second].confidence;
    if (ca != cb) return ca > cb;
    return a < b;
  });
  return order;
}

struct OracleClass {
  std::vector<bool> tp;
  std::size_t num_gt = 0;
};

using PairScore = std::function<std::optional<double>(const PredictedInstance&, const InstanceAnnotation&)>;

inline OracleClass oracle_class(const std::vector<EvalFrame>& frames, const std::function<bool(const PredictedInstance&)>& pin,
                         const std::function<bool(const InstanceAnnotation&)>& gin, const PairScore& score) {
  const auto order = eval_order(frames, pin);
  std::vector<std::pair<std::size_t, std::size_t>> gts;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t g = 0; g < frames[f].ground_truth.size(); ++g) {
      if (gin(frames[f].ground_truth[g])) gts.emplace_back(f, g);
    }
  }
  PairTable table;
  table.num_gt = gts.size();
  for (auto [f, i] : order) {
    std::vector<std::optional<double>> row;
    for (auto [gf, g] : gts) {
      row.push_back(gf == f ? score(frames[f].predictions[i], frames[gf].ground_truth[g]) : std::nullopt);
    }
    table.score.push_back(std::move(row));
  }
  return {enumerate_greedy_assignment(table), gts.size()};
}

// ---- Random fixtures ----------------------------------------------------

inline std::vector<std::size_t> random_subset(std::mt19937_64& rng, std::size_t universe, std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> all(universe);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  all.resize(n);
  return all;
}

// Ground truth plus predictions that perturb them, share points, or are random.
inline std::vector<EvalFrame> random_instance_frames(std::mt19937_64& rng, std::size_t max_objects, std::size_t frames_n,
                                              bool distinct_confidence) {
  std::vector<EvalFrame> frames(frames_n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (EvalFrame& fr : frames) {
    const std::size_t n_gt = std::uniform_int_distribution<std::size_t>(0, max_objects / 2)(rng);
    const std::size_t n_pred = std::uniform_int_distribution<std::size_t>(0, max_objects - n_gt)(rng);
    std::vector<std::size_t> pool(60);
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t g = 0; g < n_gt; ++g) {
      InstanceAnnotation a;
      a.id = static_cast<int>(g);
      a.semantic_class = 1 + static_cast<int>(rng() % 2);
      a.indices.assign(pool.begin() + static_cast<long>(g * 12), pool.begin() + static_cast<long>(g * 12 + 12));
      fr.ground_truth.push_back(a);
    }
    for (std::size_t p = 0; p < n_pred; ++p) {
      PredictedInstance pi;
      pi.semantic_class = 1 + static_cast<int>(rng() % 2);
      if (n_gt > 0 && u(rng) < 0.8) {
        const auto& base = fr.ground_truth[rng() % n_gt].indices;
        // Keep a random fraction and add a few extra points.
        for (std::size_t idx : base) {
          if (u(rng) < 0.75) pi.indices.push_back(idx);
        }
        const auto extra = random_subset(rng, 60, 0, 6);
        pi.indices.insert(pi.indices.end(), extra.begin(), extra.end());
        std::sort(pi.indices.begin(), pi.indices.end());
        pi.indices.erase(std::unique(pi.indices.begin(), pi.indices.end()), pi.indices.end());
      } else {
        pi.indices = random_subset(rng, 60, 1, 14);
      }
      pi.confidence = distinct_confidence ? u(rng) : static_cast<double>(rng() % 3) / 2.0;
      fr.predictions.push_back(pi);
    }
  }
  return frames;
}

inline std::vector<EvalFrame> random_box_frames(std::mt19937_64& rng, std::size_t n_gt, std::size_t n_pred, std::size_t frames_n,
                                         int classes, bool with_actions, bool distinct_confidence) {
  std::vector<EvalFrame> frames(frames_n);
  std::uniform_real_distribution<double> pos(-2.0, 2.0), jitter(-0.6, 0.6), u(0.0, 1.0);
  for (EvalFrame& fr : frames) {
    for (std::size_t g = 0; g < n_gt; ++g) {
      InstanceAnnotation a;
      a.id = static_cast<int>(g);
      a.semantic_class = 1 + static_cast<int>(rng() % static_cast<unsigned>(classes));
      a.box.x = pos(rng);
      a.box.y = pos(rng);
      a.box.z = 0.5 * pos(rng);
      if (with_actions) a.action = static_cast<int>(rng() % static_cast<unsigned>(classes));
      fr.ground_truth.push_back(a);
    }
    for (std::size_t p = 0; p < n_pred; ++p) {
      PredictedInstance pi;
      pi.semantic_class = 1 + static_cast<int>(rng() % static_cast<unsigned>(classes));
      if (n_gt > 0 && u(rng) < 0.8) {
        const Box7& b = fr.ground_truth[rng() % n_gt].box;
        pi.box = b;
        pi.box.x += jitter(rng);
        pi.box.y += jitter(rng);
        pi.box.z += 0.5 * jitter(rng);
      } else {
        pi.box.x = pos(rng);
        pi.box.y = pos(rng);
      }
      if (with_actions) pi.action = static_cast<int>(rng() % static_cast<unsigned>(classes));
      pi.confidence = distinct_confidence ? u(rng) : static_cast<double>(rng() % 4) / 3.0;
      fr.predictions.push_back(pi);
    }
  }
  return frames;
}

inline PairScore iou_score(double thr) {
  return [thr](const PredictedInstance& p, const InstanceAnnotation& g) -> std::optional<double> {
    const double iou = oracle_set_iou(p.indices, g.indices);
    if (iou >= thr && iou > 0.0) return iou;
    return std::nullopt;
  };
}

inline PairScore distance_score(double thr) {
  return [thr](const PredictedInstance& p, const InstanceAnnotation& g) -> std::optional<double> {
    const double d = std::sqrt(std::pow(p.box.x - g.box.x, 2) + std::pow(p.box.y - g.box.y, 2) +
                               std::pow(p.box.z - g.box.z, 2));
    if (d <= thr) return -d;
    return std::nullopt;
  };
}

inline const ClassMetric* find_class(const MetricReport& r, int index) {
  for (const auto& c : r.classes) {
    if (c.index == index) return &c;
  }
  return nullptr;
}

inline std::vector<std::pair<double, std::size_t>> brute_sorted(std::span<const Vec3> pts, const Vec3& q) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < pts.size(); ++i) all.emplace_back(distance(pts[i], q), i);
  std::sort(all.begin(), all.end());
  return all;
}

// Partition as a set of sorted member lists, independent of id numbering.
inline std::set<std::vector<std::size_t>> partition_of(const std::vector<int>& ids) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= 0) groups[ids[i]].push_back(i);
  }
  std::set<std::vector<std::size_t>> out;
  for (auto& [id, members] : groups) out.insert(members);
  return out;
}

inline std::vector<int> union_find_oracle(std::span<const Vec3> pts, double radius, std::size_t min_points) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (distance(pts[i], pts[j]) <= radius) parent[find(i)] = find(j);
  std::map<std::size_t, std::size_t> sizes;
  for (std::size_t i = 0; i < n; ++i) ++sizes[find(i)];
  std::vector<int> ids(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = find(i);
    if (sizes[root] >= min_points) ids[i] = static_cast<int>(root);
  }
  return ids;
}

inline double min_pairwise(std::span<const Vec3> pts, std::span<const std::size_t> idx) {
  double best = INFINITY;
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b) best = std::min(best, distance(pts[idx[a]], pts[idx[b]]));
  return best;
}

// Greedy farthest point sampling from `seed`, ties to the lower index.
inline std::vector<std::size_t> fps_oracle(std::span<const Vec3> pts, std::size_t count, std::size_t seed) {
  std::vector<std::size_t> chosen{seed};
  while (chosen.size() < count) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double d = INFINITY;
      for (std::size_t c : chosen) d = std::min(d, distance(pts[i], pts[c]));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

// Mean IoU over classes 1..C-1 from a confusion matrix; gt 0 is ignored.
inline double miou_oracle(const std::vector<int>& pred, const std::vector<int>& gt, int c) {
  std::vector<std::vector<int>> conf(c, std::vector<int>(c, 0));
  for (std::size_t i = 0; i < gt.size(); ++i) {
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
  return count ? sum / count : 0.0;
}

}  // namespace hcp::oracles
