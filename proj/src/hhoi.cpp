#include "hcp/hhoi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hcp/error.hpp"
#include "hcp/point_ops.hpp"

namespace hcp::seg {

namespace {

constexpr double kLogFloor = 1e-12;

std::vector<std::size_t> argsort_desc(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

Var weighted_total(Tape& tape, Var x, Matrix weights) {
  return tensor::sum(tensor::hadamard(x, tape.constant(std::move(weights))));
}

}  // namespace

void HHOIConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("hhoi: tau must lie in (0, 1)");
  if (tokens == 0) throw ConfigError("hhoi: tokens (M) must be >= 1");
  if (feature_dim == 0 || head_hidden == 0 || refine_dim == 0) {
    throw ConfigError("hhoi: layer widths must be positive");
  }
  if (num_classes < 3) throw ConfigError("hhoi: need unlabeled, person and at least one more class");
  if (!(group_radius > 0.0)) throw ConfigError("hhoi: group_radius must be positive");
  if (!(score_threshold >= 0.0 && score_threshold < 1.0)) {
    throw ConfigError("hhoi: score_threshold must lie in [0, 1)");
  }
  if (min_cluster == 0) throw ConfigError("hhoi: min_cluster must be >= 1");
  if (!(match_iou > 0.0 && match_iou <= 1.0)) throw ConfigError("hhoi: match_iou must lie in (0, 1]");
}

Var person_confidence(Tape& tape, Var point_features, const nn::Mlp& mlp) {
  return tensor::softmax_rows(mlp(tape, point_features));
}

TokenSelection sample_person_tokens(const Matrix& confidence, int person_class, double tau,
                                    std::size_t m) {
  if (m == 0) throw std::invalid_argument("sample_person_tokens: M must be >= 1");
  if (confidence.rows() == 0) throw std::invalid_argument("sample_person_tokens: no points");
  if (person_class < 0 || static_cast<std::size_t>(person_class) >= confidence.cols()) {
    throw std::invalid_argument("sample_person_tokens: person class out of range");
  }
  std::vector<double> person(confidence.rows());
  for (std::size_t i = 0; i < person.size(); ++i) person[i] = confidence(i, static_cast<std::size_t>(person_class));
  const std::vector<std::size_t> order = argsort_desc(person);

  TokenSelection sel;
  for (std::size_t i : order) {
    if (person[i] > tau) ++sel.candidates;
  }
  std::size_t take = std::min(sel.candidates, m);
  if (sel.candidates == 0) {
    sel.fallback = true;
    take = std::min(order.size(), m);
  }
  sel.indices.assign(order.begin(), order.begin() + static_cast<long>(take));
  sel.indices.resize(m, order.front());
  return sel;
}

GuidedAttention GuidedAttention::create(ParameterStore& store, const std::string& name,
                                        std::size_t dim, std::mt19937_64& rng) {
  GuidedAttention g;
  g.query = nn::Linear::create(store, name + ".query", dim, dim, rng);
  g.key = nn::Linear::create(store, name + ".key", dim, dim, rng);
  g.value = nn::Linear::create(store, name + ".value", dim, dim, rng);
  g.ffn = nn::FeedForward::create(store, name + ".ffn", dim, rng);
  g.norm = nn::LayerNorm::create(store, name + ".norm", dim, rng);
  return g;
}

Var GuidedAttention::operator()(Tape& tape, Var tokens) const {
  Var q = query(tape, tokens);
  Var k = key(tape, tokens);
  Var v = value(tape, tokens);
  Var f = nn::attention(q, k, v, tokens.cols());
  return norm(tape, tensor::add(f, ffn(tape, f)));
}

Var object_weighting(Var point_features, Var guided) {
  if (point_features.cols() != guided.cols()) {
    throw std::invalid_argument("object_weighting: feature widths differ");
  }
  Var w = tensor::softmax_rows(tensor::matmul_transposed(point_features, guided));
  return tensor::add(point_features, tensor::matmul(w, guided));
}

SemanticOffset predict_semantic_offset(Tape& tape, Var weighted, const nn::Mlp& semantic,
                                       const nn::Mlp& offset) {
  return {tensor::softmax_rows(semantic(tape, weighted)), offset(tape, weighted)};
}

std::vector<Proposal> group_instances(std::span<const Vec3> positions, const Matrix& scores,
                                      const Matrix& offsets, std::span<const int> thing_classes,
                                      const HHOIConfig& cfg) {
  if (scores.rows() != positions.size() || offsets.rows() != positions.size() || offsets.cols() != 3) {
    throw std::invalid_argument("group_instances: shape mismatch");
  }
  std::vector<Proposal> out;
  for (int c : thing_classes) {
    const auto col = static_cast<std::size_t>(c);
    if (col >= scores.cols()) throw std::invalid_argument("group_instances: class out of range");
    std::vector<std::size_t> members;
    std::vector<Vec3> shifted;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (scores(i, col) > cfg.score_threshold) {
        members.push_back(i);
        shifted.push_back(positions[i] + Vec3{offsets(i, 0), offsets(i, 1), offsets(i, 2)});
      }
    }
    if (members.empty()) continue;
    const geom::ClusterAssignment clusters = geom::radius_cluster(shifted, cfg.group_radius, cfg.min_cluster);
    std::vector<Proposal> local(static_cast<std::size_t>(clusters.count));
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (clusters.ids[j] >= 0) local[static_cast<std::size_t>(clusters.ids[j])].indices.push_back(members[j]);
    }
    for (Proposal& p : local) {
      p.semantic_class = c;
      out.push_back(std::move(p));
    }
  }
  return out;
}

RefineHead RefineHead::create(ParameterStore& store, const std::string& name, const HHOIConfig& cfg,
                              std::mt19937_64& rng) {
  RefineHead h;
  h.encode = nn::Linear::create(store, name + ".encode", cfg.feature_dim + 3, cfg.refine_dim, rng);
  h.classify = nn::Mlp::create(store, name + ".classify", {cfg.refine_dim, cfg.head_hidden, cfg.num_classes}, rng);
  h.mask = nn::Mlp::create(store, name + ".mask", {2 * cfg.refine_dim, cfg.head_hidden, 1}, rng);
  h.score = nn::Mlp::create(store, name + ".score", {cfg.refine_dim, cfg.head_hidden, 1}, rng);
  return h;
}

RefineOutput refine_proposals(Tape& tape, std::span<const Proposal> proposals, Var weighted,
                              std::span<const Vec3> positions, const RefineHead& head) {
  RefineOutput out;
  out.count = proposals.size();
  out.mask_offsets.push_back(0);
  if (proposals.empty()) return out;

  std::vector<std::size_t> rows;
  std::vector<std::size_t> owner;
  for (std::size_t k = 0; k < proposals.size(); ++k) {
    if (proposals[k].indices.empty()) throw std::invalid_argument("refine_proposals: empty proposal");
    for (std::size_t idx : proposals[k].indices) {
      if (idx >= positions.size()) throw std::invalid_argument("refine_proposals: index out of range");
      rows.push_back(idx);
      owner.push_back(k);
    }
    out.mask_offsets.push_back(rows.size());
  }
  // Positions relative to each proposal's centroid.
  Matrix rel(rows.size(), 3);
  for (std::size_t k = 0; k < proposals.size(); ++k) {
    Vec3 c;
    for (std::size_t idx : proposals[k].indices) c = c + positions[idx];
    c = c * (1.0 / static_cast<double>(proposals[k].indices.size()));
    for (std::size_t r = out.mask_offsets[k]; r < out.mask_offsets[k + 1]; ++r) {
      const Vec3 d = positions[rows[r]] - c;
      rel(r, 0) = d.x;
      rel(r, 1) = d.y;
      rel(r, 2) = d.z;
    }
  }
  const Var parts[2] = {tensor::gather_rows(weighted, rows), tape.constant(std::move(rel))};
  Var h = tensor::relu(head.encode(tape, tensor::concat_cols(parts)));
  Var pooled = tensor::segment_max(h, out.mask_offsets);
  out.class_scores = tensor::softmax_rows(head.classify(tape, pooled));
  out.ious = tensor::sigmoid(head.score(tape, pooled));
  const Var mask_in[2] = {h, tensor::gather_rows(pooled, owner)};
  out.masks = tensor::sigmoid(head.mask(tape, tensor::concat_cols(mask_in)));
  return out;
}

HHOIHead::HHOIHead(const HHOIConfig& cfg, ParameterStore& store, std::mt19937_64& rng,
                   const std::string& name)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.feature_dim;
  semantic_ = nn::Mlp::create(store, name + ".semantic", {d, cfg_.head_hidden, cfg_.num_classes}, rng);
  offset_ = nn::Mlp::create(store, name + ".offset", {d, cfg_.head_hidden, 3}, rng);
  guided_ = GuidedAttention::create(store, name + ".guided", d, rng);
  refine_ = RefineHead::create(store, name + ".refine", cfg_, rng);
}

HHOIForward HHOIHead::forward(Tape& tape, Var point_features, std::span<const Vec3> positions,
                              int person_class, std::span<const int> thing_classes,
                              const TokenSelection* fixed_tokens,
                              const std::vector<Proposal>* fixed_proposals) const {
  if (point_features.cols() != cfg_.feature_dim || point_features.rows() != positions.size()) {
    throw std::invalid_argument("hhoi: point features do not match positions / feature_dim");
  }
  HHOIForward out;
  out.confidence = person_confidence(tape, point_features, semantic_);
  out.tokens = fixed_tokens ? *fixed_tokens
                            : sample_person_tokens(out.confidence.value(), person_class, cfg_.tau, cfg_.tokens);
  Var sampled = tensor::gather_rows(point_features, out.tokens.indices);
  out.guided = guided_(tape, sampled);
  out.weighted = object_weighting(point_features, out.guided);
  out.semantic_offset = predict_semantic_offset(tape, out.weighted, semantic_, offset_);
  out.proposals = fixed_proposals ? *fixed_proposals
                                  : group_instances(positions, out.semantic_offset.scores.value(),
                                                    out.semantic_offset.offsets.value(), thing_classes, cfg_);
  out.refine = refine_proposals(tape, out.proposals, out.weighted, positions, refine_);
  return out;
}

SegTargets make_targets(const SceneFrame& frame) {
  SegTargets t;
  const std::size_t n = frame.cloud.size();
  if (frame.labels.size() != n) throw std::invalid_argument("make_targets: labels length != point count");
  t.labels = frame.labels;
  t.instance_of.assign(n, -1);
  for (std::size_t k = 0; k < frame.instances.size(); ++k) {
    const InstanceAnnotation& inst = frame.instances[k];
    std::vector<std::size_t> members = inst.indices;
    std::sort(members.begin(), members.end());
    Vec3 c;
    for (std::size_t idx : members) {
      if (idx >= n) throw std::invalid_argument("make_targets: instance index out of range");
      t.instance_of[idx] = static_cast<int>(k);
      c = c + frame.cloud.position(idx);
    }
    if (!members.empty()) c = c * (1.0 / static_cast<double>(members.size()));
    t.instance_class.push_back(inst.semantic_class);
    t.members.push_back(std::move(members));
    t.centroids.push_back(c);
  }
  return t;
}

std::vector<double> class_weights_from_labels(std::span<const SceneFrame> frames, std::size_t num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  double total = 0.0;
  for (const SceneFrame& f : frames) {
    for (int label : f.labels) {
      if (label > 0 && static_cast<std::size_t>(label) < num_classes) {
        counts[static_cast<std::size_t>(label)] += 1.0;
        total += 1.0;
      }
    }
  }
  std::vector<double> weights(num_classes, 1.0);
  weights[0] = 0.0;
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 1; c < num_classes; ++c) {
    if (counts[c] > 0.0) {
      weights[c] = total / counts[c];
      sum += weights[c];
      ++present;
    }
  }
  if (present == 0) return weights;
  const double mean = sum / static_cast<double>(present);
  for (std::size_t c = 1; c < num_classes; ++c) {
    if (counts[c] > 0.0) weights[c] /= mean;
  }
  return weights;
}

double index_iou(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<ProposalMatch> match_proposals(std::span<const Proposal> proposals,
                                           const SegTargets& targets, double min_iou) {
  std::vector<ProposalMatch> out(proposals.size());
  for (std::size_t k = 0; k < proposals.size(); ++k) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < targets.members.size(); ++g) {
      const double iou = index_iou(proposals[k].indices, targets.members[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    out[k].iou = best_iou;
    if (best >= 0 && best_iou >= min_iou) out[k].instance = best;
  }
  return out;
}

SegLoss segmentation_loss(Tape& tape, const SemanticOffset& so, std::span<const Proposal> proposals,
                          const RefineOutput& refine, std::span<const Vec3> positions,
                          const SegTargets& targets, std::span<const double> class_weights,
                          const HHOIConfig& cfg) {
  const Matrix& s = so.scores.value();
  const std::size_t n = s.rows();
  const std::size_t num_classes = s.cols();
  if (targets.labels.size() != n || positions.size() != n || so.offsets.rows() != n) {
    throw std::invalid_argument("segmentation_loss: predictions and ground truth differ in size");
  }
  if (class_weights.size() != num_classes) {
    throw std::invalid_argument("segmentation_loss: one class weight per class required");
  }
  if (refine.count != proposals.size()) {
    throw std::invalid_argument("segmentation_loss: refine output does not match proposals");
  }
  SegLoss loss;

  // Weighted CE over labelled points, averaged over their count.
  {
    std::vector<std::size_t> picks(n, 0);
    Matrix w(n, 1);
    std::size_t valid = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int label = targets.labels[i];
      if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
        throw std::invalid_argument("segmentation_loss: label out of range");
      }
      if (label == kUnlabeled) continue;
      picks[i] = static_cast<std::size_t>(label);
      w(i, 0) = class_weights[picks[i]];
      ++valid;
    }
    if (valid > 0) {
      for (double& v : w.values()) v /= -static_cast<double>(valid);
      loss.semantic = weighted_total(tape, tensor::pick(tensor::log_clamped(so.scores, kLogFloor), picks), std::move(w));
    } else {
      loss.semantic = tape.constant(Matrix(1, 1));
    }
  }

  // L1 offset to the instance centroid over instance points.
  {
    Matrix target(n, 3);
    Matrix w(n, 3);
    std::size_t inside = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int k = targets.instance_of[i];
      if (k < 0) continue;
      const Vec3 d = targets.centroids[static_cast<std::size_t>(k)] - positions[i];
      target(i, 0) = d.x;
      target(i, 1) = d.y;
      target(i, 2) = d.z;
      for (std::size_t j = 0; j < 3; ++j) w(i, j) = 1.0;
      ++inside;
    }
    if (inside > 0) {
      for (double& v : w.values()) v /= static_cast<double>(inside);
      Var diff = tensor::abs(tensor::sub(so.offsets, tape.constant(std::move(target))));
      loss.offset = weighted_total(tape, diff, std::move(w));
    } else {
      loss.offset = tape.constant(Matrix(1, 1));
    }
  }

  loss.matches = match_proposals(proposals, targets, cfg.match_iou);
  const std::size_t k_count = proposals.size();
  std::size_t matched = 0;
  for (const ProposalMatch& m : loss.matches) matched += m.instance >= 0 ? 1 : 0;

  // Class CE over all proposals; unmatched ones target class 0.
  if (k_count > 0) {
    std::vector<std::size_t> picks(k_count, 0);
    for (std::size_t k = 0; k < k_count; ++k) {
      const int g = loss.matches[k].instance;
      if (g >= 0) picks[k] = static_cast<std::size_t>(targets.instance_class[static_cast<std::size_t>(g)]);
    }
    loss.cls = weighted_total(tape, tensor::pick(tensor::log_clamped(refine.class_scores, kLogFloor), picks),
                              Matrix(k_count, 1, -1.0 / static_cast<double>(k_count)));
  } else {
    loss.cls = tape.constant(Matrix(1, 1));
  }

  // Mean BCE per matched mask, averaged over matched proposals; the IoU target
  // uses the binarized predicted mask.
  if (matched > 0) {
    const Matrix& masks = refine.masks.value();
    const std::size_t rows = masks.rows();
    Matrix pos_w(rows, 1);
    Matrix neg_w(rows, 1);
    Matrix score_w(k_count, 1);
    Matrix score_target(k_count, 1);
    for (std::size_t k = 0; k < k_count; ++k) {
      const int g = loss.matches[k].instance;
      if (g < 0) continue;
      const auto& gt = targets.members[static_cast<std::size_t>(g)];
      const std::size_t begin = refine.mask_offsets[k];
      const std::size_t len = refine.mask_offsets[k + 1] - begin;
      const double scale = -1.0 / (static_cast<double>(len) * static_cast<double>(matched));
      std::vector<std::size_t> kept;
      for (std::size_t r = 0; r < len; ++r) {
        const std::size_t idx = proposals[k].indices[r];
        const bool inside = std::binary_search(gt.begin(), gt.end(), idx);
        if (inside) {
          pos_w(begin + r, 0) = scale;
        } else {
          neg_w(begin + r, 0) = scale;
        }
        if (masks(begin + r, 0) > cfg.mask_threshold) kept.push_back(idx);
      }
      score_w(k, 0) = 1.0 / static_cast<double>(matched);
      score_target(k, 0) = index_iou(kept, gt);
    }
    Var log_p = tensor::log_clamped(refine.masks, kLogFloor);
    Var log_q = tensor::log_clamped(tensor::sub(tape.constant(Matrix(rows, 1, 1.0)), refine.masks), kLogFloor);
    loss.mask = tensor::add(weighted_total(tape, log_p, std::move(pos_w)),
                            weighted_total(tape, log_q, std::move(neg_w)));
    Var err = tensor::abs(tensor::sub(refine.ious, tape.constant(std::move(score_target))));
    loss.mask_score = weighted_total(tape, err, std::move(score_w));
  } else {
    loss.mask = tape.constant(Matrix(1, 1));
    loss.mask_score = tape.constant(Matrix(1, 1));
  }

  loss.total = tensor::add(tensor::add(tensor::add(loss.semantic, loss.offset), tensor::add(loss.cls, loss.mask)),
                           loss.mask_score);
  loss.terms = {loss.semantic.scalar(), loss.offset.scalar(), loss.cls.scalar(),
                loss.mask.scalar(),     loss.mask_score.scalar(), loss.total.scalar()};
  return loss;
}

FramePrediction to_prediction(const HHOIForward& out, const std::string& frame_id,
                              const HHOIConfig& cfg) {
  FramePrediction pred;
  pred.frame_id = frame_id;
  const Matrix& s = out.semantic_offset.scores.value();
  pred.labels.resize(s.rows());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    std::size_t best = 1;
    for (std::size_t c = 2; c < s.cols(); ++c) {
      if (s(i, c) > s(i, best)) best = c;
    }
    pred.labels[i] = static_cast<int>(best);
  }
  if (out.refine.count == 0) return pred;
  const Matrix& cls = out.refine.class_scores.value();
  const Matrix& masks = out.refine.masks.value();
  const Matrix& ious = out.refine.ious.value();
  for (std::size_t k = 0; k < out.proposals.size(); ++k) {
    const Proposal& p = out.proposals[k];
    PredictedInstance inst;
    inst.semantic_class = p.semantic_class;
    for (std::size_t r = 0; r < p.indices.size(); ++r) {
      if (masks(out.refine.mask_offsets[k] + r, 0) > cfg.mask_threshold) inst.indices.push_back(p.indices[r]);
    }
    if (inst.indices.empty()) continue;
    inst.confidence = cls(k, static_cast<std::size_t>(p.semantic_class)) * ious(k, 0);
    pred.instances.push_back(std::move(inst));
  }
  return pred;
}

}  // namespace hcp::seg
