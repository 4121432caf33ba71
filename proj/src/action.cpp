#include "hcp/action.hpp"

#include <algorithm>
#include <stdexcept>

#include "hcp/error.hpp"

namespace hcp::action {

void ActionConfig::validate() const {
  if (branches == 0) throw ConfigError("action: branches (R) must be >= 1");
  if (points == 0) throw ConfigError("action: points (n) must be >= 1");
  const std::size_t total_halvings = branches + serial;
  if (total_halvings >= 8 * sizeof(std::size_t) || (points >> total_halvings) == 0 ||
      (points & ((std::size_t{1} << total_halvings) - 1)) != 0) {
    throw ConfigError("action: points (n) must be a multiple of 2^(R+L)");
  }
  if (!(grow_length >= 0.0) || !(grow_width >= 0.0)) throw ConfigError("action: box growth must be >= 0");
  if (base_width == 0 || embed_dim == 0 || classifier_hidden == 0) {
    throw ConfigError("action: layer widths must be positive");
  }
  if (!(base_radius > 0.0)) throw ConfigError("action: base_radius must be positive");
  if (max_group == 0) throw ConfigError("action: max_group must be >= 1");
  if (num_classes < 2) throw ConfigError("action: need at least two classes");
}

std::size_t ActionConfig::fused_width() const {
  std::size_t total = 0;
  for (std::size_t r = 1; r <= branches; ++r) total += branch_width(r + serial);
  return total;
}

std::vector<PersonCrop> build_crops(const PointCloud& cloud, std::span<const Box7> boxes,
                                    const ActionConfig& cfg) {
  std::vector<PersonCrop> crops(boxes.size());
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    PersonCrop& crop = crops[b];
    crop.box = boxes[b];
    crop.source = geom::crop_by_box(cloud, boxes[b], cfg.grow_length, cfg.grow_width);
    if (crop.source.empty()) continue;
    crop.empty = false;
    const geom::NormalizedPoints norm = geom::normalize_instance(cloud.subset(crop.source));
    crop.transform = norm.transform;
    const auto picks = geom::farthest_point_sample(norm.positions, cfg.points,
                                                   backbone::canonical_seed(norm.positions));
    crop.points = Matrix(cfg.points, 4);
    for (std::size_t i = 0; i < picks.size(); ++i) {
      const Vec3& p = norm.positions[picks[i]];
      crop.points(i, 0) = p.x;
      crop.points(i, 1) = p.y;
      crop.points(i, 2) = p.z;
      crop.points(i, 3) = norm.reflectance[picks[i]];
    }
  }
  // Neighbors: nearest other non-empty crops by box center.
  std::vector<std::size_t> live;
  std::vector<Vec3> centers;
  for (std::size_t b = 0; b < crops.size(); ++b) {
    if (crops[b].empty) continue;
    live.push_back(b);
    centers.push_back(crops[b].box.center());
  }
  if (cfg.neighbors == 0) return crops;
  for (std::size_t j = 0; j < live.size(); ++j) {
    PersonCrop& crop = crops[live[j]];
    const geom::Neighbors nb = geom::knn(centers, centers[j], cfg.neighbors + 1);
    for (std::size_t t = 0; t < nb.indices.size() && crop.neighbors.size() < cfg.neighbors; ++t) {
      if (nb.indices[t] == j) continue;
      crop.neighbors.push_back(live[nb.indices[t]]);
      crop.distances.push_back(nb.distances[t]);
    }
  }
  return crops;
}

Hpfe::Hpfe(const ActionConfig& cfg, ParameterStore& store, std::mt19937_64& rng, const std::string& name)
    : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t r = 1; r <= cfg_.branches; ++r) {
    std::vector<nn::Mlp> stages;
    std::size_t in = 4;
    for (std::size_t s = 0; s <= cfg_.serial; ++s) {
      const std::size_t out = cfg_.branch_width(r + s);
      stages.push_back(nn::Mlp::create(store, name + ".b" + std::to_string(r) + ".s" + std::to_string(s),
                                       {3 + in, out}, rng, /*activate_last=*/true));
      in = out;
    }
    stages_.push_back(std::move(stages));
  }
}

HpfePlan Hpfe::plan(const Matrix& crop_points) const {
  if (crop_points.rows() != cfg_.points || crop_points.cols() != 4) {
    throw std::invalid_argument("hpfe: crop must be n x 4");
  }
  std::vector<Vec3> positions(crop_points.rows());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    positions[i] = {crop_points(i, 0), crop_points(i, 1), crop_points(i, 2)};
  }
  HpfePlan plan;
  for (std::size_t r = 1; r <= cfg_.branches; ++r) {
    std::vector<backbone::AbstractionPlan> stages;
    const std::vector<Vec3>* current = &positions;
    std::size_t count = cfg_.branch_points(r);
    double radius = cfg_.branch_radius(r);
    for (std::size_t s = 0; s <= cfg_.serial; ++s) {
      stages.push_back(backbone::plan_abstraction(*current, count, radius, cfg_.max_group,
                                                  backbone::canonical_seed(*current)));
      current = &stages.back().center_positions;
      count /= 2;
      radius *= 2.0;
    }
    plan.branches.push_back(std::move(stages));
  }
  plan.token_positions = plan.branches.back().back().center_positions;
  for (std::size_t b = 0; b + 1 < plan.branches.size(); ++b) {
    plan.resample.push_back(
        backbone::plan_propagation(plan.branches[b].back().center_positions, plan.token_positions));
  }
  return plan;
}

HpfeOutput Hpfe::forward(Tape& tape, const Matrix& crop_points, const HpfePlan& plan) const {
  if (plan.branches.size() != stages_.size()) throw std::invalid_argument("hpfe: plan/branch mismatch");
  HpfeOutput out;
  Var input = tape.constant(crop_points);
  std::vector<Var> resampled;
  for (std::size_t b = 0; b < stages_.size(); ++b) {
    Var x = input;
    for (std::size_t s = 0; s < stages_[b].size(); ++s) {
      x = backbone::set_abstraction(tape, x, plan.branches[b][s], stages_[b][s]);
      if (s == 0) out.entries.push_back(x);
    }
    out.finals.push_back(x);
    // The coarsest branch already sits on the token positions.
    if (b + 1 < stages_.size()) {
      resampled.push_back(tensor::sparse_mix(x, plan.resample[b].indices, plan.resample[b].weights));
    } else {
      resampled.push_back(x);
    }
  }
  out.tokens = tensor::concat_cols(resampled);
  out.fused = tensor::max_rows(out.tokens);
  return out;
}

Enfi::Enfi(const ActionConfig& cfg, ParameterStore& store, std::mt19937_64& rng, const std::string& name)
    : embed_(cfg.embed_dim) {
  const std::size_t e = embed_;
  project_ = nn::Linear::create(store, name + ".project", cfg.fused_width(), e, rng);
  self_q_ = nn::Linear::create(store, name + ".self.query", e, e, rng);
  self_k_ = nn::Linear::create(store, name + ".self.key", e, e, rng);
  self_v_ = nn::Linear::create(store, name + ".self.value", e, e, rng);
  self_norm_ = nn::LayerNorm::create(store, name + ".self.norm", e, rng);
  cross_q_ = nn::Linear::create(store, name + ".cross.query", e, e, rng);
  cross_k_ = nn::Linear::create(store, name + ".cross.key", e, e, rng);
  cross_v_ = nn::Linear::create(store, name + ".cross.value", e, e, rng);
  distance_ = nn::Linear::create(store, name + ".cross.distance", 1, e, rng);
}

Var Enfi::ego(Tape& tape, Var ego_tokens) const {
  Var x = project_(tape, ego_tokens);
  Var a = nn::attention(self_q_(tape, x), self_k_(tape, x), self_v_(tape, x), embed_);
  return tensor::max_rows(self_norm_(tape, tensor::add(x, a)));
}

Var Enfi::operator()(Tape& tape, Var ego_tokens, Var neighbor_fused, std::span<const double> distances) const {
  if (neighbor_fused.rows() != distances.size()) {
    throw std::invalid_argument("enfi: one distance per neighbor required");
  }
  Var f_ego = ego(tape, ego_tokens);
  Matrix d(distances.size(), 1);
  for (std::size_t i = 0; i < distances.size(); ++i) d(i, 0) = distances[i];
  Var neigh = project_(tape, neighbor_fused);
  Var k = tensor::add(cross_k_(tape, neigh), distance_(tape, tape.constant(std::move(d))));
  Var cross = nn::attention(cross_q_(tape, f_ego), k, cross_v_(tape, neigh), embed_);
  const Var parts[2] = {f_ego, cross};
  return tensor::concat_cols(parts);
}

Var Enfi::without_neighbors(Tape& tape, Var ego_tokens) const {
  const Var parts[2] = {ego(tape, ego_tokens), tape.constant(Matrix(1, embed_))};
  return tensor::concat_cols(parts);
}

Var classify_action(Tape& tape, Var interaction_feature, const nn::Mlp& classifier) {
  return tensor::softmax_rows(classifier(tape, interaction_feature));
}

ActionModel::ActionModel(const ActionConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  hpfe_ = Hpfe(cfg_, store_, rng);
  enfi_ = Enfi(cfg_, store_, rng);
  classifier_ = nn::Mlp::create(store_, "classifier",
                                {enfi_.output_width(), cfg_.classifier_hidden, cfg_.num_classes}, rng);
}

PreparedActionFrame prepare_action_frame(const PointCloud& cloud, std::span<const Box7> boxes,
                                         const ActionModel& model) {
  PreparedActionFrame out;
  out.crops = build_crops(cloud, boxes, model.config());
  out.plans.resize(out.crops.size());
  for (std::size_t b = 0; b < out.crops.size(); ++b) {
    if (!out.crops[b].empty) out.plans[b] = model.hpfe().plan(out.crops[b].points);
  }
  return out;
}

std::vector<Var> forward_scores(Tape& tape, const PreparedActionFrame& frame, const ActionModel& model) {
  const std::size_t count = frame.crops.size();
  std::vector<HpfeOutput> features(count);
  for (std::size_t b = 0; b < count; ++b) {
    if (!frame.crops[b].empty) features[b] = model.hpfe().forward(tape, frame.crops[b].points, frame.plans[b]);
  }
  std::vector<Var> scores(count);
  for (std::size_t b = 0; b < count; ++b) {
    const PersonCrop& crop = frame.crops[b];
    if (crop.empty) continue;
    Var interaction;
    if (crop.neighbors.empty()) {
      interaction = model.enfi().without_neighbors(tape, features[b].tokens);
    } else {
      std::vector<Var> rows;
      for (std::size_t j : crop.neighbors) rows.push_back(features[j].fused);
      interaction = model.enfi()(tape, features[b].tokens, tensor::concat_rows(rows), crop.distances);
    }
    scores[b] = classify_action(tape, interaction, model.classifier());
  }
  return scores;
}

std::vector<ActionResult> action_pipeline(const PointCloud& cloud, std::span<const Box7> boxes,
                                          const ActionModel& model) {
  const PreparedActionFrame frame = prepare_action_frame(cloud, boxes, model);
  Tape tape;
  const std::vector<Var> scores = forward_scores(tape, frame, model);
  const std::size_t c = model.config().num_classes;
  std::vector<ActionResult> out(boxes.size());
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    out[b].box = boxes[b];
    if (!scores[b].valid()) {
      out[b].empty = true;
      out[b].scores.assign(c, 1.0 / static_cast<double>(c));
      continue;
    }
    const auto row = scores[b].value().row(0);
    out[b].scores.assign(row.begin(), row.end());
  }
  return out;
}

}  // namespace hcp::action
