#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hcp/core.hpp"
#include "hcp/nn.hpp"

namespace hcp::seg {

using nn::Matrix;
using nn::ParameterStore;
using nn::Tape;
using nn::Var;

struct HHOIConfig {
  double tau = 0.8;                 // person-confidence threshold for token sampling
  std::size_t tokens = 256;         // M
  std::size_t feature_dim = 32;     // D, must equal the backbone output width
  std::size_t num_classes = 21;     // C, including index 0
  std::size_t head_hidden = 32;
  std::size_t refine_dim = 32;
  double group_radius = 0.3;        // meters, over offset-shifted points
  double score_threshold = 0.2;     // soft grouping threshold on S
  std::size_t min_cluster = 5;
  double mask_threshold = 0.5;
  double match_iou = 0.5;

  void validate() const;
};

struct TokenSelection {
  std::vector<std::size_t> indices;  // exactly M entries
  std::size_t candidates = 0;        // points above tau
  bool fallback = false;             // no point cleared tau
};

// Y = softmax(MLP(F_p)).
Var person_confidence(Tape& tape, Var point_features, const nn::Mlp& mlp);

// Points with person confidence > tau, most confident first (ties to lower
// index), truncated or padded to M by repeating the most confident pick.
TokenSelection sample_person_tokens(const Matrix& confidence, int person_class, double tau,
                                    std::size_t m);

// F_g = LN(f + FFN(f)), f = attention(F_s Wq, F_s Wk, F_s Wv).
struct GuidedAttention {
  nn::Linear query;
  nn::Linear key;
  nn::Linear value;
  nn::FeedForward ffn;
  nn::LayerNorm norm;

  static GuidedAttention create(ParameterStore& store, const std::string& name, std::size_t dim,
                                std::mt19937_64& rng);
  Var operator()(Tape& tape, Var tokens) const;
};

// F_p + softmax_over_tokens(F_p F_g^T) F_g.
Var object_weighting(Var point_features, Var guided);

struct SemanticOffset {
  Var scores;   // S, N x C, rows sum to 1
  Var offsets;  // O, N x 3, meters
};

SemanticOffset predict_semantic_offset(Tape& tape, Var weighted, const nn::Mlp& semantic,
                                       const nn::Mlp& offset);

struct Proposal {
  int semantic_class = kUnlabeled;
  std::vector<std::size_t> indices;  // ascending

  bool operator==(const Proposal&) const = default;
};

// Per thing class: points scoring above the threshold are shifted by their
// offsets and radius-clustered.
std::vector<Proposal> group_instances(std::span<const Vec3> positions, const Matrix& scores,
                                      const Matrix& offsets, std::span<const int> thing_classes,
                                      const HHOIConfig& cfg);

struct RefineHead {
  nn::Linear encode;  // (D + 3) -> refine_dim, ReLU
  nn::Mlp classify;   // refine_dim -> hidden -> C
  nn::Mlp mask;       // 2 refine_dim -> hidden -> 1
  nn::Mlp score;      // refine_dim -> hidden -> 1

  static RefineHead create(ParameterStore& store, const std::string& name, const HHOIConfig& cfg,
                           std::mt19937_64& rng);
};

struct RefineOutput {
  std::size_t count = 0;                  // K
  Var class_scores;                       // K x C
  Var masks;                              // sum(n_k) x 1, sigmoid
  std::vector<std::size_t> mask_offsets;  // K + 1 entries into masks
  Var ious;                               // K x 1, sigmoid
};

RefineOutput refine_proposals(Tape& tape, std::span<const Proposal> proposals, Var weighted,
                              std::span<const Vec3> positions, const RefineHead& head);

struct HHOIForward {
  Var confidence;   // Y
  TokenSelection tokens;
  Var guided;       // F_g
  Var weighted;
  SemanticOffset semantic_offset;
  std::vector<Proposal> proposals;
  RefineOutput refine;
};

class HHOIHead {
 public:
  HHOIHead(const HHOIConfig& cfg, ParameterStore& store, std::mt19937_64& rng,
           const std::string& name = "hhoi");

  const HHOIConfig& config() const { return cfg_; }
  // Fixed tokens or proposals bypass the data-dependent selection steps.
  HHOIForward forward(Tape& tape, Var point_features, std::span<const Vec3> positions,
                      int person_class, std::span<const int> thing_classes,
                      const TokenSelection* fixed_tokens = nullptr,
                      const std::vector<Proposal>* fixed_proposals = nullptr) const;

  const nn::Mlp& semantic_mlp() const { return semantic_; }
  const nn::Mlp& offset_mlp() const { return offset_; }
  const GuidedAttention& guided_attention() const { return guided_; }
  const RefineHead& refine_head() const { return refine_; }

 private:
  HHOIConfig cfg_;
  // Shared by Y and S.
  nn::Mlp semantic_;
  nn::Mlp offset_;
  GuidedAttention guided_;
  RefineHead refine_;
};

// Ground truth laid out for the loss.
struct SegTargets {
  std::vector<int> labels;                       // per point
  std::vector<int> instance_of;                  // per point, -1 outside instances
  std::vector<int> instance_class;               // per instance
  std::vector<std::vector<std::size_t>> members; // per instance, ascending
  std::vector<Vec3> centroids;                   // per instance
};

SegTargets make_targets(const SceneFrame& frame);

// Inverse label frequency over classes 1..C-1, scaled to mean 1 over the
// classes that occur; index 0 gets weight 0.
std::vector<double> class_weights_from_labels(std::span<const SceneFrame> frames, std::size_t num_classes);

struct ProposalMatch {
  int instance = -1;  // best ground-truth instance, -1 if IoU < threshold
  double iou = 0.0;
};

double index_iou(std::span<const std::size_t> a, std::span<const std::size_t> b);
std::vector<ProposalMatch> match_proposals(std::span<const Proposal> proposals,
                                           const SegTargets& targets, double min_iou);

struct LossTerms {
  double semantic = 0.0;
  double offset = 0.0;
  double cls = 0.0;
  double mask = 0.0;
  double mask_score = 0.0;
  double total = 0.0;
};

struct SegLoss {
  Var total;
  Var semantic;
  Var offset;
  Var cls;
  Var mask;
  Var mask_score;
  LossTerms terms;
  std::vector<ProposalMatch> matches;
};

SegLoss segmentation_loss(Tape& tape, const SemanticOffset& so, std::span<const Proposal> proposals,
                          const RefineOutput& refine, std::span<const Vec3> positions,
                          const SegTargets& targets, std::span<const double> class_weights,
                          const HHOIConfig& cfg);

// Per-point class = argmax over classes 1..C-1; instances = proposal points
// with mask > threshold, confidence = c_k[class] * iou_k.
FramePrediction to_prediction(const HHOIForward& out, const std::string& frame_id,
                              const HHOIConfig& cfg);

}  // namespace hcp::seg
