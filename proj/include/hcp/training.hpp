#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hcp/action.hpp"
#include "hcp/backbone.hpp"
#include "hcp/core.hpp"
#include "hcp/hhoi.hpp"

namespace hcp::train {

using nn::Matrix;
using nn::ParameterStore;
using nn::Tape;
using nn::Var;

struct TrainOptions {
  std::size_t steps = 300;
  double learning_rate = 0.01;  // Adam
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  // Called after the update of every step that is a multiple of checkpoint_every.
  std::function<void(std::size_t step, const ParameterStore& store)> on_checkpoint;
};

// ---- Segmentation ------------------------------------------------------

struct SegModelConfig {
  std::vector<std::string> things{"person", "box", "cart"};
  backbone::BackboneConfig backbone;
  seg::HHOIConfig hhoi;  // feature_dim and num_classes are overwritten from the backbone and taxonomy
  std::uint64_t seed = 0;

  SemanticTaxonomy taxonomy() const { return SemanticTaxonomy::with_things(things); }
  // Copy with the derived fields filled in.
  SegModelConfig resolved() const;
};

class SegModel {
 public:
  explicit SegModel(const SegModelConfig& cfg);
  SegModel(const SegModel&) = delete;
  SegModel& operator=(const SegModel&) = delete;

  const SegModelConfig& config() const { return cfg_; }
  const SemanticTaxonomy& taxonomy() const { return taxonomy_; }
  const std::vector<int>& thing_classes() const { return things_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const backbone::Backbone& backbone() const { return backbone_; }
  const seg::HHOIHead& head() const { return head_; }

 private:
  SegModelConfig cfg_;
  SemanticTaxonomy taxonomy_;
  std::vector<int> things_;
  ParameterStore store_;
  backbone::Backbone backbone_;
  seg::HHOIHead head_;
};

// Geometry-only work cached across steps.
struct PreparedSegFrame {
  std::string frame_id;
  std::vector<Vec3> positions;
  Matrix input;
  backbone::BackbonePlan plan;
  seg::SegTargets targets;
};

PreparedSegFrame prepare_seg_frame(const SegModel& model, const SceneFrame& frame);

seg::HHOIForward forward_seg(Tape& tape, const SegModel& model, const PreparedSegFrame& frame);

struct SegStepLog {
  std::size_t step = 0;       // 0 = before the first update
  seg::LossTerms terms;       // mean over frames
  std::size_t proposals = 0;  // total over frames
};

// Full-batch Adam: every step averages the loss over all frames. Returns one
// entry per step plus a final entry evaluated after the last update.
std::vector<SegStepLog> train_segmentation(SegModel& model, std::span<const SceneFrame> frames,
                                           const TrainOptions& options,
                                           const std::function<void(const SegStepLog&)>& on_step = {});

// Labels, masked instances and an axis-aligned box per instance.
FramePrediction segment_frame(const SegModel& model, const SceneFrame& frame);

// ---- Action recognition ------------------------------------------------

struct ActionExample {
  action::PreparedActionFrame frame;
  std::vector<int> labels;  // per crop, -1 when unlabeled or empty
};

// Person boxes from the annotations (ground-truth box protocol).
std::vector<Box7> person_boxes(const SceneFrame& frame, const SemanticTaxonomy& taxonomy);
std::vector<int> person_actions(const SceneFrame& frame, const SemanticTaxonomy& taxonomy);

ActionExample prepare_action_example(const action::ActionModel& model, const SceneFrame& frame,
                                     const SemanticTaxonomy& taxonomy);

struct ActionStepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // training accuracy of the forward pass of this step
};

// Mean cross-entropy over every labelled crop, full batch, Adam.
std::vector<ActionStepLog> train_action(action::ActionModel& model, std::span<const ActionExample> examples,
                                        const TrainOptions& options,
                                        const std::function<void(const ActionStepLog&)>& on_step = {});

// Argmax class per crop; -1 for empty crops.
std::vector<int> predict_actions(const action::ActionModel& model, const ActionExample& example);

// Action predictions for the given boxes as person instances.
FramePrediction recognize_frame(const action::ActionModel& model, const SceneFrame& frame,
                                std::span<const Box7> boxes, int person_class);

// Axis-aligned box around the given points.
Box7 fit_axis_box(const PointCloud& cloud, std::span<const std::size_t> indices);

}  // namespace hcp::train
