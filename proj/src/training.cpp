#include "hcp/training.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include "hcp/error.hpp"

namespace hcp::train {

namespace {

constexpr double kLogFloor = 1e-12;

// Parameters the batch never touched (e.g. the refine head before any
// proposal exists) get a zero gradient so the optimizer treats them uniformly.
void fill_missing_grads(ParameterStore& store) {
  for (nn::Parameter* p : store.all()) {
    if (p->grad.empty() || !p->grad.same_shape(p->value)) p->grad = Matrix(p->value.rows(), p->value.cols());
  }
}

void maybe_checkpoint(const TrainOptions& options, std::size_t step, const ParameterStore& store) {
  if (options.checkpoint_every == 0 || !options.on_checkpoint) return;
  if (step % options.checkpoint_every == 0 || step == options.steps) options.on_checkpoint(step, store);
}

void accumulate(seg::LossTerms& into, const seg::LossTerms& t, double w) {
  into.semantic += w * t.semantic;
  into.offset += w * t.offset;
  into.cls += w * t.cls;
  into.mask += w * t.mask;
  into.mask_score += w * t.mask_score;
  into.total += w * t.total;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

SegModelConfig SegModelConfig::resolved() const {
  SegModelConfig out = *this;
  out.hhoi.feature_dim = backbone.output_dim;
  out.hhoi.num_classes = taxonomy().size();
  return out;
}

SegModel::SegModel(const SegModelConfig& cfg)
    : cfg_(cfg.resolved()),
      taxonomy_(cfg_.taxonomy()),
      things_(taxonomy_.thing_classes()),
      backbone_([&] {
        cfg_.backbone.validate();
        cfg_.hhoi.validate();
        std::mt19937_64 rng(cfg_.seed);
        return backbone::Backbone(cfg_.backbone, store_, rng);
      }()),
      head_([&] {
        std::mt19937_64 rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
        return seg::HHOIHead(cfg_.hhoi, store_, rng);
      }()) {}

PreparedSegFrame prepare_seg_frame(const SegModel& model, const SceneFrame& frame) {
  PreparedSegFrame out;
  out.frame_id = frame.frame_id;
  out.positions = frame.cloud.positions();
  out.input = backbone::point_input_features(frame.cloud);
  out.plan = model.backbone().plan(out.positions);
  out.targets = seg::make_targets(frame);
  return out;
}

seg::HHOIForward forward_seg(Tape& tape, const SegModel& model, const PreparedSegFrame& frame) {
  const Var features = model.backbone().forward(tape, tape.constant(frame.input), frame.plan);
  return model.head().forward(tape, features, frame.positions, model.taxonomy().person(), model.thing_classes());
}

std::vector<SegStepLog> train_segmentation(SegModel& model, std::span<const SceneFrame> frames,
                                           const TrainOptions& options,
                                           const std::function<void(const SegStepLog&)>& on_step) {
  if (frames.empty()) throw ConfigError("train_segmentation: no training frames");
  std::vector<PreparedSegFrame> prepared;
  prepared.reserve(frames.size());
  for (const SceneFrame& f : frames) prepared.push_back(prepare_seg_frame(model, f));
  const std::vector<double> weights = seg::class_weights_from_labels(frames, model.taxonomy().size());
  const double scale = 1.0 / static_cast<double>(frames.size());

  nn::Adam adam(model.store().all(), options.learning_rate);
  std::vector<SegStepLog> log;
  for (std::size_t step = 0; step <= options.steps; ++step) {
    const bool update = step < options.steps;
    SegStepLog entry;
    entry.step = step;
    model.store().zero_grad();
    for (const PreparedSegFrame& f : prepared) {
      Tape tape;
      const seg::HHOIForward out = forward_seg(tape, model, f);
      const seg::SegLoss loss = seg::segmentation_loss(tape, out.semantic_offset, out.proposals, out.refine,
                                                       f.positions, f.targets, weights, model.config().hhoi);
      accumulate(entry.terms, loss.terms, scale);
      entry.proposals += out.proposals.size();
      if (update) tape.backward(tensor::scale(loss.total, scale));
    }
    log.push_back(entry);
    if (on_step) on_step(entry);
    if (!update) break;
    fill_missing_grads(model.store());
    adam.step();
    maybe_checkpoint(options, step + 1, model.store());
  }
  return log;
}

Box7 fit_axis_box(const PointCloud& cloud, std::span<const std::size_t> indices) {
  if (indices.empty()) return {};
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi = lo * -1.0;
  for (std::size_t i : indices) {
    const Vec3 p = cloud.position(i);
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  constexpr double kMinSize = 1e-3;
  Box7 b;
  b.x = 0.5 * (lo.x + hi.x);
  b.y = 0.5 * (lo.y + hi.y);
  b.z = 0.5 * (lo.z + hi.z);
  b.l = std::max(hi.x - lo.x, kMinSize);
  b.w = std::max(hi.y - lo.y, kMinSize);
  b.h = std::max(hi.z - lo.z, kMinSize);
  b.yaw = 0.0;
  return b;
}

FramePrediction segment_frame(const SegModel& model, const SceneFrame& frame) {
  const PreparedSegFrame prepared = prepare_seg_frame(model, frame);
  Tape tape;
  const seg::HHOIForward out = forward_seg(tape, model, prepared);
  FramePrediction pred = seg::to_prediction(out, frame.frame_id, model.config().hhoi);
  for (PredictedInstance& inst : pred.instances) inst.box = fit_axis_box(frame.cloud, inst.indices);
  return pred;
}

std::vector<Box7> person_boxes(const SceneFrame& frame, const SemanticTaxonomy& taxonomy) {
  std::vector<Box7> boxes;
  for (const InstanceAnnotation& inst : frame.instances) {
    if (inst.semantic_class == taxonomy.person()) boxes.push_back(inst.box);
  }
  return boxes;
}

std::vector<int> person_actions(const SceneFrame& frame, const SemanticTaxonomy& taxonomy) {
  std::vector<int> actions;
  for (const InstanceAnnotation& inst : frame.instances) {
    if (inst.semantic_class == taxonomy.person()) actions.push_back(inst.action.value_or(-1));
  }
  return actions;
}

ActionExample prepare_action_example(const action::ActionModel& model, const SceneFrame& frame,
                                     const SemanticTaxonomy& taxonomy) {
  const std::vector<Box7> boxes = person_boxes(frame, taxonomy);
  ActionExample ex;
  ex.frame = action::prepare_action_frame(frame.cloud, boxes, model);
  ex.labels = person_actions(frame, taxonomy);
  for (std::size_t i = 0; i < ex.labels.size(); ++i) {
    if (ex.frame.crops[i].empty) ex.labels[i] = -1;
  }
  return ex;
}

std::vector<ActionStepLog> train_action(action::ActionModel& model, std::span<const ActionExample> examples,
                                        const TrainOptions& options,
                                        const std::function<void(const ActionStepLog&)>& on_step) {
  std::size_t labelled = 0;
  for (const ActionExample& ex : examples) {
    for (int l : ex.labels) labelled += l >= 0;
  }
  if (labelled == 0) throw ConfigError("train_action: no labelled person crops");
  const double scale = 1.0 / static_cast<double>(labelled);

  nn::Adam adam(model.store().all(), options.learning_rate);
  std::vector<ActionStepLog> log;
  for (std::size_t step = 0; step <= options.steps; ++step) {
    const bool update = step < options.steps;
    ActionStepLog entry;
    entry.step = step;
    std::size_t correct = 0;
    model.store().zero_grad();
    for (const ActionExample& ex : examples) {
      Tape tape;
      const std::vector<Var> scores = action::forward_scores(tape, ex.frame, model);
      Var loss;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (ex.labels[i] < 0 || !scores[i].valid()) continue;
        const std::size_t label = static_cast<std::size_t>(ex.labels[i]);
        const Var nll = tensor::scale(tensor::log_clamped(tensor::pick(scores[i], std::vector<std::size_t>{label}), kLogFloor), -scale);
        loss = loss.valid() ? tensor::add(loss, nll) : nll;
        correct += argmax(scores[i].value().row(0)) == label;
      }
      if (!loss.valid()) continue;
      entry.loss += loss.scalar();
      if (update) tape.backward(loss);
    }
    entry.accuracy = static_cast<double>(correct) * scale;
    log.push_back(entry);
    if (on_step) on_step(entry);
    if (!update) break;
    fill_missing_grads(model.store());
    adam.step();
    maybe_checkpoint(options, step + 1, model.store());
  }
  return log;
}

std::vector<int> predict_actions(const action::ActionModel& model, const ActionExample& example) {
  Tape tape;
  const std::vector<Var> scores = action::forward_scores(tape, example.frame, model);
  std::vector<int> out(scores.size(), -1);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].valid()) out[i] = static_cast<int>(argmax(scores[i].value().row(0)));
  }
  return out;
}

FramePrediction recognize_frame(const action::ActionModel& model, const SceneFrame& frame,
                                std::span<const Box7> boxes, int person_class) {
  FramePrediction pred;
  pred.frame_id = frame.frame_id;
  for (const action::ActionResult& r : action::action_pipeline(frame.cloud, boxes, model)) {
    if (r.empty) continue;
    PredictedInstance inst;
    inst.semantic_class = person_class;
    inst.box = r.box;
    const std::size_t best = argmax(r.scores);
    inst.action = static_cast<int>(best);
    inst.action_scores = r.scores;
    inst.confidence = r.scores[best];
    pred.instances.push_back(std::move(inst));
  }
  return pred;
}

}  // namespace hcp::train
