#include "hcp/backbone.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>

#include "hcp/error.hpp"
#include "hcp/point_ops.hpp"

namespace hcp::backbone {

AbstractionPlan plan_abstraction(std::span<const Vec3> positions, std::size_t sample_count,
                                 double radius, std::size_t max_group, std::size_t seed_index) {
  if (positions.empty()) throw std::invalid_argument("set_abstraction: empty input");
  AbstractionPlan plan;
  plan.centers = geom::farthest_point_sample(positions, sample_count, seed_index);
  const geom::NeighborList groups = geom::ball_query(positions, plan.centers, radius, max_group);
  plan.offsets.push_back(0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const Vec3 c = positions[plan.centers[g]];
    plan.center_positions.push_back(c);
    for (std::size_t idx : groups[g].indices) plan.members.push_back(idx);
    plan.offsets.push_back(plan.members.size());
  }
  plan.relative = Matrix(plan.members.size(), 3);
  for (std::size_t g = 0; g + 1 < plan.offsets.size(); ++g) {
    const Vec3 c = plan.center_positions[g];
    for (std::size_t m = plan.offsets[g]; m < plan.offsets[g + 1]; ++m) {
      const Vec3 d = positions[plan.members[m]] - c;
      plan.relative(m, 0) = d.x;
      plan.relative(m, 1) = d.y;
      plan.relative(m, 2) = d.z;
    }
  }
  return plan;
}

PropagationPlan plan_propagation(std::span<const Vec3> coarse, std::span<const Vec3> fine) {
  if (coarse.empty()) throw std::invalid_argument("feature_propagation: empty coarse set");
  PropagationPlan plan;
  plan.neighbors = std::min<std::size_t>(3, coarse.size());
  plan.weights = Matrix(fine.size(), plan.neighbors);
  plan.indices.reserve(fine.size() * plan.neighbors);
  // Brute force is faster than a grid for the coarse set sizes used here.
  std::vector<std::pair<double, std::size_t>> ranked(coarse.size());
  for (std::size_t i = 0; i < fine.size(); ++i) {
    for (std::size_t j = 0; j < coarse.size(); ++j) ranked[j] = {distance(fine[i], coarse[j]), j};
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<long>(plan.neighbors), ranked.end());
    double total = 0.0;
    for (std::size_t j = 0; j < plan.neighbors; ++j) {
      const double w = 1.0 / (ranked[j].first + 1e-8);
      plan.weights(i, j) = w;
      total += w;
      plan.indices.push_back(ranked[j].second);
    }
    for (std::size_t j = 0; j < plan.neighbors; ++j) plan.weights(i, j) /= total;
  }
  return plan;
}

Var set_abstraction(Tape& tape, Var features, const AbstractionPlan& plan, const nn::Mlp& mlp) {
  Var grouped = tensor::gather_rows(features, plan.members);
  Var rel = tape.constant(plan.relative);
  const Var parts[2] = {rel, grouped};
  Var x = mlp(tape, tensor::concat_cols(parts));
  return tensor::segment_max(x, plan.offsets);
}

Var feature_propagation(Tape& tape, Var coarse_features, const PropagationPlan& plan,
                        std::optional<Var> skip, const nn::Mlp& mlp) {
  Var x = tensor::sparse_mix(coarse_features, plan.indices, plan.weights);
  if (skip) {
    const Var parts[2] = {x, *skip};
    x = tensor::concat_cols(parts);
  }
  if (mlp.layers.empty()) return x;
  return mlp(tape, x);
}

std::size_t canonical_seed(std::span<const Vec3> positions) {
  if (positions.empty()) throw std::invalid_argument("canonical_seed: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < positions.size(); ++i) {
    const Vec3& a = positions[i];
    const Vec3& b = positions[best];
    if (std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z)) best = i;
  }
  return best;
}

void BackboneConfig::validate() const {
  if (output_dim == 0) throw ConfigError("backbone: output_dim must be > 0");
  if (levels.empty()) throw ConfigError("backbone: at least one abstraction level required");
  if (propagation.size() != levels.size()) {
    throw ConfigError("backbone: need one propagation MLP per abstraction level");
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i].mlp.empty()) throw ConfigError("backbone: empty abstraction MLP");
    if (levels[i].sample_divisor == 0 || levels[i].max_group == 0) {
      throw ConfigError("backbone: sample divisor and max group must be >= 1");
    }
    if (!(levels[i].radius > 0.0)) throw ConfigError("backbone: radius must be positive");
    if (i > 0 && !(levels[i].radius > levels[i - 1].radius)) {
      throw ConfigError("backbone: radii must be strictly increasing");
    }
  }
  for (const auto& p : propagation) {
    if (p.empty()) throw ConfigError("backbone: empty propagation MLP");
  }
}

Matrix point_input_features(const PointCloud& cloud) {
  Matrix m(cloud.size(), kPointInputDim);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    m(i, 0) = cloud[i].z;
    m(i, 1) = cloud[i].r;
  }
  return m;
}

Backbone::Backbone(const BackboneConfig& cfg, ParameterStore& store, std::mt19937_64& rng,
                   const std::string& name)
    : cfg_(cfg) {
  cfg_.validate();
  std::vector<std::size_t> widths{kPointInputDim};
  for (std::size_t l = 0; l < cfg_.levels.size(); ++l) {
    std::vector<std::size_t> dims{3 + widths.back()};
    dims.insert(dims.end(), cfg_.levels[l].mlp.begin(), cfg_.levels[l].mlp.end());
    abstraction_mlps_.push_back(
        nn::Mlp::create(store, name + ".sa" + std::to_string(l), dims, rng, /*activate_last=*/true));
    widths.push_back(cfg_.levels[l].mlp.back());
  }
  // propagation[p] runs from level L-p to level L-p-1
  std::size_t carried = widths.back();
  for (std::size_t p = 0; p < cfg_.propagation.size(); ++p) {
    const std::size_t target_level = cfg_.levels.size() - 1 - p;
    std::vector<std::size_t> dims{carried + widths[target_level]};
    dims.insert(dims.end(), cfg_.propagation[p].begin(), cfg_.propagation[p].end());
    propagation_mlps_.push_back(
        nn::Mlp::create(store, name + ".fp" + std::to_string(p), dims, rng, /*activate_last=*/true));
    carried = cfg_.propagation[p].back();
  }
  head_ = nn::Linear::create(store, name + ".head", carried, cfg_.output_dim, rng);
}

BackbonePlan Backbone::plan(std::span<const Vec3> positions) const {
  if (positions.empty()) throw std::invalid_argument("backbone: empty cloud");
  BackbonePlan plan;
  const std::size_t n = positions.size();
  plan.level_positions.emplace_back(positions.begin(), positions.end());
  for (const AbstractionLevel& level : cfg_.levels) {
    const std::vector<Vec3>& current = plan.level_positions.back();
    const std::size_t samples = std::max<std::size_t>(1, n / level.sample_divisor);
    AbstractionPlan ap = plan_abstraction(current, samples, level.radius, level.max_group,
                                          canonical_seed(current));
    plan.level_positions.push_back(ap.center_positions);
    plan.abstractions.push_back(std::move(ap));
  }
  for (std::size_t l = 0; l < cfg_.levels.size(); ++l) {
    plan.propagations.push_back(plan_propagation(plan.level_positions[l + 1], plan.level_positions[l]));
  }
  return plan;
}

Var Backbone::forward(Tape& tape, Var input_features, const BackbonePlan& plan) const {
  if (input_features.rows() != plan.level_positions[0].size()) {
    throw std::invalid_argument("backbone: feature rows != point count");
  }
  std::vector<Var> level_features{input_features};
  for (std::size_t l = 0; l < cfg_.levels.size(); ++l) {
    level_features.push_back(
        set_abstraction(tape, level_features.back(), plan.abstractions[l], abstraction_mlps_[l]));
  }
  Var carried = level_features.back();
  for (std::size_t p = 0; p < propagation_mlps_.size(); ++p) {
    const std::size_t target_level = cfg_.levels.size() - 1 - p;
    carried = feature_propagation(tape, carried, plan.propagations[target_level],
                                  level_features[target_level], propagation_mlps_[p]);
  }
  return head_(tape, carried);
}

Matrix Backbone::extract(const PointCloud& cloud) const {
  const auto positions = cloud.positions();
  const BackbonePlan p = plan(positions);
  Tape tape;
  return forward(tape, tape.constant(point_input_features(cloud)), p).value();
}

}  // namespace hcp::backbone
