#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hcp/backbone.hpp"
#include "hcp/core.hpp"
#include "hcp/nn.hpp"
#include "hcp/point_ops.hpp"

namespace hcp::action {

using nn::Matrix;
using nn::ParameterStore;
using nn::Tape;
using nn::Var;

struct ActionConfig {
  double grow_length = 0.2;   // Δh, meters added to the box length
  double grow_width = 0.2;    // Δw, meters added to the box width
  std::size_t neighbors = 3;  // k
  std::size_t points = 512;   // n
  std::size_t branches = 5;   // R
  std::size_t serial = 2;     // L
  std::size_t base_width = 32;
  double base_radius = 0.05;  // branch r samples with base_radius * (r + 1)
  std::size_t max_group = 16;
  std::size_t embed_dim = 64;
  std::size_t classifier_hidden = 64;
  std::size_t num_classes = ActionTaxonomy::kCount;

  void validate() const;
  std::size_t branch_points(std::size_t r) const { return points >> r; }
  std::size_t branch_width(std::size_t r) const { return base_width << r; }
  double branch_radius(std::size_t r) const { return base_radius * static_cast<double>(r + 1); }
  std::size_t token_count() const { return points >> (branches + serial); }
  // Width of F_HF: concatenated final widths of every branch.
  std::size_t fused_width() const;
};

// Input of the recognizer for one detector box.
struct PersonCrop {
  bool empty = true;                   // box captured no points
  Box7 box;
  std::vector<std::size_t> source;     // cropped point indices in the frame
  Matrix points;                       // n x 4: normalized x, y, z and reflectance
  geom::Normalization transform;
  std::vector<std::size_t> neighbors;  // indices of other crops, nearest first
  std::vector<double> distances;       // box-center distances, ascending
};

std::vector<PersonCrop> build_crops(const PointCloud& cloud, std::span<const Box7> boxes,
                                    const ActionConfig& cfg);

struct HpfePlan {
  // branches[r][s]: stage s of branch r (s = 0 is the branch entry).
  std::vector<std::vector<backbone::AbstractionPlan>> branches;
  std::vector<Vec3> token_positions;
  // Resampling of each branch's final set onto the token positions.
  std::vector<backbone::PropagationPlan> resample;
};

struct HpfeOutput {
  std::vector<Var> entries;  // per branch, (n / 2^r) x (width * 2^r)
  std::vector<Var> finals;   // per branch, after the serial abstractions
  Var tokens;                // token_count x fused_width
  Var fused;                 // F_HF, 1 x fused_width
};

class Hpfe {
 public:
  Hpfe() = default;
  Hpfe(const ActionConfig& cfg, ParameterStore& store, std::mt19937_64& rng, const std::string& name = "hpfe");

  HpfePlan plan(const Matrix& crop_points) const;
  HpfeOutput forward(Tape& tape, const Matrix& crop_points, const HpfePlan& plan) const;

 private:
  ActionConfig cfg_;
  std::vector<std::vector<nn::Mlp>> stages_;  // [branch][stage]
};

// F_IE = F_ego ++ CrossAttention(Q_ego, K_neigh + enc(d), V_neigh).
class Enfi {
 public:
  Enfi() = default;
  Enfi(const ActionConfig& cfg, ParameterStore& store, std::mt19937_64& rng, const std::string& name = "enfi");

  std::size_t output_width() const { return 2 * embed_; }
  // Ego feature from the HPFE token sequence: projection, self-attention with
  // residual and layer norm, then max-pool.
  Var ego(Tape& tape, Var ego_tokens) const;
  // neighbor_fused: k x fused_width; distances: k entries.
  Var operator()(Tape& tape, Var ego_tokens, Var neighbor_fused, std::span<const double> distances) const;
  // Degenerate k = 0 path: cross term is zeros.
  Var without_neighbors(Tape& tape, Var ego_tokens) const;

 private:
  std::size_t embed_ = 0;
  nn::Linear project_;
  nn::Linear self_q_, self_k_, self_v_;
  nn::LayerNorm self_norm_;
  nn::Linear cross_q_, cross_k_, cross_v_;
  nn::Linear distance_;
};

// Two-layer MLP + softmax over the action classes.
Var classify_action(Tape& tape, Var interaction_feature, const nn::Mlp& classifier);

class ActionModel {
 public:
  ActionModel(const ActionConfig& cfg, std::uint64_t seed);
  ActionModel(const ActionModel&) = delete;
  ActionModel& operator=(const ActionModel&) = delete;

  const ActionConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const Hpfe& hpfe() const { return hpfe_; }
  const Enfi& enfi() const { return enfi_; }
  const nn::Mlp& classifier() const { return classifier_; }

 private:
  ActionConfig cfg_;
  ParameterStore store_;
  Hpfe hpfe_;
  Enfi enfi_;
  nn::Mlp classifier_;
};

// Crops plus their cached HPFE plans for one frame.
struct PreparedActionFrame {
  std::vector<PersonCrop> crops;
  std::vector<HpfePlan> plans;  // empty plan for empty crops
};

PreparedActionFrame prepare_action_frame(const PointCloud& cloud, std::span<const Box7> boxes,
                                         const ActionModel& model);

// Per-crop class probabilities (1 x C) for every non-empty crop; empty crops
// get an invalid Var. HPFE runs once per crop and is shared by ego and
// neighbor roles.
std::vector<Var> forward_scores(Tape& tape, const PreparedActionFrame& frame, const ActionModel& model);

struct ActionResult {
  Box7 box;
  std::vector<double> scores;  // uniform marker for empty crops
  bool empty = false;
};

std::vector<ActionResult> action_pipeline(const PointCloud& cloud, std::span<const Box7> boxes,
                                          const ActionModel& model);

}  // namespace hcp::action
