#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hcp/core.hpp"
#include "hcp/nn.hpp"

namespace hcp::backbone {

using nn::Matrix;
using nn::ParameterStore;
using nn::Tape;
using nn::Var;

// Precomputed sampling/grouping for one set abstraction. Depends only on geometry,
// so it is computed once per point set and reused across training steps.
struct AbstractionPlan {
  std::vector<std::size_t> centers;        // indices into the input set
  std::vector<Vec3> center_positions;
  std::vector<std::size_t> members;        // flattened group members
  std::vector<std::size_t> offsets;        // group g = members[offsets[g], offsets[g+1])
  Matrix relative;                         // members.size() x 3, member - center
};

AbstractionPlan plan_abstraction(std::span<const Vec3> positions, std::size_t sample_count,
                                 double radius, std::size_t max_group, std::size_t seed_index);

// Inverse-distance weights over the 3 (or fewer) nearest coarse points.
struct PropagationPlan {
  std::size_t neighbors = 0;                // per fine point
  std::vector<std::size_t> indices;         // fine_count x neighbors
  Matrix weights;                           // fine_count x neighbors, rows sum to 1
};

PropagationPlan plan_propagation(std::span<const Vec3> coarse, std::span<const Vec3> fine);

// Groups (relative position ++ feature) rows, runs the shared MLP and max-pools
// each group. Output has one row per sampled center.
Var set_abstraction(Tape& tape, Var features, const AbstractionPlan& plan, const nn::Mlp& mlp);

// Interpolates coarse features onto the fine set, optionally concatenates a
// skip feature, then applies the MLP (which may be empty).
Var feature_propagation(Tape& tape, Var coarse_features, const PropagationPlan& plan,
                        std::optional<Var> skip, const nn::Mlp& mlp);

// Lexicographically smallest position (ties to lower index); keeps sampling
// independent of input order.
std::size_t canonical_seed(std::span<const Vec3> positions);

struct AbstractionLevel {
  std::size_t sample_divisor = 4;  // samples = max(1, N / divisor)
  double radius = 0.4;
  std::size_t max_group = 16;
  std::vector<std::size_t> mlp{32, 32};
};

struct BackboneConfig {
  std::size_t output_dim = 32;
  std::vector<AbstractionLevel> levels{{4, 0.4, 16, {32, 32}}, {16, 0.8, 16, {64, 64}}};
  // One entry per level, applied coarse to fine.
  std::vector<std::vector<std::size_t>> propagation{{64}, {32}};

  void validate() const;
};

struct BackbonePlan {
  std::vector<std::vector<Vec3>> level_positions;  // [0] = input points
  std::vector<AbstractionPlan> abstractions;
  std::vector<PropagationPlan> propagations;        // [l] maps level l+1 -> level l
};

// Per-point input channels fed to the backbone: height and reflectance.
inline constexpr std::size_t kPointInputDim = 2;
Matrix point_input_features(const PointCloud& cloud);

class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, ParameterStore& store, std::mt19937_64& rng,
           const std::string& name = "backbone");

  const BackboneConfig& config() const { return cfg_; }
  BackbonePlan plan(std::span<const Vec3> positions) const;
  // N x output_dim, row i belongs to input point i.
  Var forward(Tape& tape, Var input_features, const BackbonePlan& plan) const;
  Matrix extract(const PointCloud& cloud) const;

 private:
  BackboneConfig cfg_;
  std::vector<nn::Mlp> abstraction_mlps_;
  std::vector<nn::Mlp> propagation_mlps_;
  nn::Linear head_;
};

}  // namespace hcp::backbone
