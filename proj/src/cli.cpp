#include "hcp/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <iostream>
#include <limits>
#include <thread>

#include <CLI11.hpp>

#include "hcp/error.hpp"
#include "hcp/gradcheck_suite.hpp"
#include "hcp/io_formats.hpp"
#include "hcp/nn.hpp"
#include "hcp/training.hpp"

namespace hcp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class GradcheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::int64_t seed = -1;
  std::size_t jobs = 1;
};

struct Options {
  Common common;
  std::size_t frames = 0;
  std::string preset;
  std::string data;
  std::string model;
  std::string pred;
  std::string boxes;
  std::size_t steps = 0;
};

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path make_run_dir(const Common& common, const std::string& subcommand) {
  fs::path dir;
  if (!common.out.empty()) {
    dir = common.out;
  } else {
    const fs::path base = fs::path("runs") / (timestamp() + "-" + subcommand);
    dir = base;
    for (int i = 2; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(IoErrorCode::kOpenFailed, "cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

run::RunConfig effective_config(const Options& o) {
  std::vector<std::string> overrides = o.common.overrides;
  if (o.common.seed >= 0) overrides.push_back("seed=" + std::to_string(o.common.seed));
  if (o.frames > 0) overrides.push_back("frames=" + std::to_string(o.frames));
  if (!o.preset.empty()) overrides.insert(overrides.begin(), "synth.preset=\"" + o.preset + "\"");
  return run::load_config(o.common.config, overrides);
}

void echo_config(const run::RunConfig& cfg, const fs::path& dir) {
  io::write_text(dir / "config.json", run::to_json(cfg).dump(2) + "\n");
  std::printf("config: tau=%g k=%zu grow_length=%g grow_width=%g seed=%llu\n", cfg.hhoi.tau, cfg.action.neighbors,
              cfg.action.grow_length, cfg.action.grow_width, static_cast<unsigned long long>(cfg.seed));
}

fs::path require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("--") + what + " is required");
  if (!fs::is_directory(path)) throw IoError(IoErrorCode::kOpenFailed, std::string(what) + " directory not found: " + path);
  return path;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be written
// to per-index slots so the output does not depend on scheduling.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += jobs) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<FramePrediction> load_predictions(const fs::path& dir, std::span<const SceneFrame> frames) {
  std::vector<FramePrediction> out;
  for (const SceneFrame& f : frames) out.push_back(io::read_predictions(io::prediction_path(dir, f.frame_id), f.cloud.size()));
  return out;
}

void write_reports(const fs::path& dir, const std::vector<metrics::MetricReport>& reports) {
  io::write_text(dir / "report.json", io::encode_reports(reports));
  std::string text;
  for (const auto& r : reports) text += metrics::to_text_table(r) + "\n";
  io::write_text(dir / "report.txt", text);
  std::fputs(text.c_str(), stdout);
}

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu.hcpk", step);
  return buf;
}

train::TrainOptions train_options(const run::TrainSettings& s, std::size_t steps_override, const fs::path& dir) {
  train::TrainOptions opt;
  opt.steps = steps_override > 0 ? steps_override : s.steps;
  opt.learning_rate = s.learning_rate;
  opt.checkpoint_every = s.checkpoint_every;
  if (opt.checkpoint_every > 0) {
    fs::create_directories(dir / "checkpoints");
    opt.on_checkpoint = [dir](std::size_t step, const nn::ParameterStore& store) {
      nn::save_checkpoint((dir / "checkpoints" / checkpoint_name(step)).string(), store);
    };
  }
  return opt;
}

std::string g17(double v) { return format("%.17g", v); }

int cmd_synth(const Options& o) {
  const run::RunConfig cfg = effective_config(o);
  const fs::path dir = make_run_dir(o.common, "synth");
  echo_config(cfg, dir);
  const synth::Split split = synth::generate_split(cfg.synth_config(), cfg.frames);
  for (const auto& [name, part] : {std::pair{"train", &split.train}, std::pair{"test", &split.test}}) {
    const fs::path sub = dir / name;
    fs::create_directories(sub);
    for (const auto& scene : *part) {
      io::save_scene(sub, scene.frame);
      io::write_text(io::manifest_path(sub, scene.frame.frame_id), io::encode_manifest(scene.manifest));
    }
  }
  std::printf("wrote %zu train and %zu test frames to %s\n", split.train.size(), split.test.size(), dir.c_str());
  return kOk;
}

int cmd_train_seg(const Options& o) {
  const run::RunConfig cfg = effective_config(o);
  const std::vector<SceneFrame> frames = load_frames(require_dir(o.data, "data"), cfg.taxonomy());
  if (frames.empty()) throw ConfigError("no frames in " + o.data);
  const fs::path dir = make_run_dir(o.common, "train-seg");
  echo_config(cfg, dir);
  train::SegModel model(cfg.seg_model());
  std::string csv = "step,total,semantic,offset,class,mask,mask_score,proposals\n";
  const auto log = train::train_segmentation(model, frames, train_options(cfg.train_seg, o.steps, dir),
                                             [&](const train::SegStepLog& e) {
                                               const auto& t = e.terms;
                                               csv += std::to_string(e.step) + "," + g17(t.total) + "," + g17(t.semantic) +
                                                      "," + g17(t.offset) + "," + g17(t.cls) + "," + g17(t.mask) + "," +
                                                      g17(t.mask_score) + "," + std::to_string(e.proposals) + "\n";
                                               if (e.step % 10 == 0) {
                                                 std::printf("step %zu loss %.4f\n", e.step, t.total);
                                                 std::fflush(stdout);
                                               }
                                             });
  io::write_text(dir / "loss.csv", csv);
  nn::save_checkpoint((dir / "model.hcpk").string(), model.store());
  std::printf("final loss %.4f (initial %.4f); model saved to %s\n", log.back().terms.total, log.front().terms.total,
              (dir / "model.hcpk").c_str());
  return kOk;
}

int cmd_train_action(const Options& o) {
  const run::RunConfig cfg = effective_config(o);
  const std::vector<SceneFrame> frames = load_frames(require_dir(o.data, "data"), cfg.taxonomy());
  const fs::path dir = make_run_dir(o.common, "train-action");
  echo_config(cfg, dir);
  action::ActionModel model(cfg.action, cfg.seed);
  std::vector<train::ActionExample> examples;
  for (const SceneFrame& f : frames) examples.push_back(train::prepare_action_example(model, f, cfg.taxonomy()));
  std::string csv = "step,loss,accuracy\n";
  const auto log = train::train_action(model, examples, train_options(cfg.train_action, o.steps, dir),
                                       [&](const train::ActionStepLog& e) {
                                         csv += std::to_string(e.step) + "," + g17(e.loss) + "," + g17(e.accuracy) + "\n";
                                         if (e.step % 10 == 0) {
                                           std::printf("step %zu loss %.4f accuracy %.3f\n", e.step, e.loss, e.accuracy);
                                           std::fflush(stdout);
                                         }
                                       });
  io::write_text(dir / "loss.csv", csv);
  nn::save_checkpoint((dir / "model.hcpk").string(), model.store());
  std::printf("final loss %.4f (initial %.4f); model saved to %s\n", log.back().loss, log.front().loss,
              (dir / "model.hcpk").c_str());
  return kOk;
}

void write_predictions(const fs::path& dir, std::span<const SceneFrame> frames,
                       std::span<const FramePrediction> predictions) {
  const fs::path sub = dir / "predictions";
  fs::create_directories(sub);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    io::write_predictions(io::prediction_path(sub, frames[i].frame_id), predictions[i], frames[i].cloud.size());
  }
  std::printf("wrote %zu prediction files to %s\n", frames.size(), sub.c_str());
}

int cmd_segment(const Options& o) {
  const run::RunConfig cfg = effective_config(o);
  const std::vector<SceneFrame> frames = load_frames(require_dir(o.data, "data"), cfg.taxonomy());
  if (o.model.empty()) throw ConfigError("--model is required");
  train::SegModel model(cfg.seg_model());
  nn::load_checkpoint(o.model, model.store());
  const fs::path dir = make_run_dir(o.common, "segment");
  echo_config(cfg, dir);
  std::vector<FramePrediction> predictions(frames.size());
  parallel_for(frames.size(), o.common.jobs, [&](std::size_t i) { predictions[i] = train::segment_frame(model, frames[i]); });
  write_predictions(dir, frames, predictions);
  return kOk;
}

int cmd_recognize(const Options& o) {
  const run::RunConfig cfg = effective_config(o);
  const std::vector<SceneFrame> frames = load_frames(require_dir(o.data, "data"), cfg.taxonomy());
  if (o.model.empty()) throw ConfigError("--model is required");
  action::ActionModel model(cfg.action, cfg.seed);
  nn::load_checkpoint(o.model, model.store());
  const SemanticTaxonomy taxonomy = cfg.taxonomy();
  std::vector<std::vector<Box7>> boxes(frames.size());
  if (o.boxes.empty()) {
    for (std::size_t i = 0; i < frames.size(); ++i) boxes[i] = train::person_boxes(frames[i], taxonomy);
  } else {
    const fs::path box_dir = require_dir(o.boxes, "boxes");
    const auto detected = load_predictions(box_dir, frames);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      for (const auto& inst : detected[i].instances) {
        if (inst.semantic_class == taxonomy.person() && inst.box.valid()) boxes[i].push_back(inst.box);
      }
    }
  }
  const fs::path dir = make_run_dir(o.common, "recognize");
  echo_config(cfg, dir);
  std::vector<FramePrediction> predictions(frames.size());
  parallel_for(frames.size(), o.common.jobs, [&](std::size_t i) {
    predictions[i] = train::recognize_frame(model, frames[i], boxes[i], taxonomy.person());
  });
  write_predictions(dir, frames, predictions);
  return kOk;
}

using Evaluator = std::vector<metrics::MetricReport> (*)(std::span<const SceneFrame>, std::span<const FramePrediction>,
                                                         const run::RunConfig&);

int cmd_eval(const Options& o, const char* name, Evaluator evaluate) {
  const run::RunConfig cfg = effective_config(o);
  const std::vector<SceneFrame> frames = load_frames(require_dir(o.data, "data"), cfg.taxonomy());
  const auto predictions = load_predictions(require_dir(o.pred, "pred"), frames);
  const fs::path dir = make_run_dir(o.common, name);
  echo_config(cfg, dir);
  write_reports(dir, evaluate(frames, predictions, cfg));
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  const run::RunConfig cfg = effective_config(o);
  const fs::path dir = make_run_dir(o.common, "gradcheck");
  echo_config(cfg, dir);
  std::string text;
  std::size_t failed = 0, total = 0;
  const auto start = std::chrono::steady_clock::now();
  gradcheck::run_suite({}, [&](const gradcheck::Result& r) {
    char line[256];
    std::snprintf(line, sizeof line, "%s %-32s entries %4zu max_rel_err %.3e\n", r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.entries_checked, r.max_rel_error);
    text += line;
    std::fputs(line, stdout);
    std::fflush(stdout);
    failed += !r.passed;
    ++total;
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  text += std::to_string(total - failed) + "/" + std::to_string(total) + " checks passed\n";
  io::write_text(dir / "gradcheck.txt", text);
  std::printf("%zu/%zu checks passed in %.1f s\n", total - failed, total, seconds);
  if (failed > 0) throw GradcheckFailure(std::to_string(failed) + " gradient checks failed");
  return kOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file");
  sub->add_option("--set", c.overrides, "Override a config value: section.key=value (repeatable)");
  sub->add_option("--out", c.out, "Run directory (default: runs/<timestamp>-<subcommand>)");
  sub->add_option("--seed", c.seed, "Seed for generation and model initialization");
  sub->add_option("--jobs", c.jobs, "Frame-level worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

std::vector<SceneFrame> load_frames(const fs::path& dir, const SemanticTaxonomy& taxonomy) {
  std::vector<SceneFrame> frames;
  for (const std::string& id : io::list_frames(dir)) frames.push_back(io::load_scene(dir, id, taxonomy));
  return frames;
}

std::vector<metrics::MetricReport> evaluate_segmentation(std::span<const SceneFrame> frames,
                                                         std::span<const FramePrediction> predictions,
                                                         const run::RunConfig& cfg) {
  if (frames.size() != predictions.size()) throw std::invalid_argument("evaluate_segmentation: frame count mismatch");
  const SemanticTaxonomy taxonomy = cfg.taxonomy();
  std::vector<int> pred, gt;
  std::vector<metrics::EvalFrame> eval;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (predictions[i].labels.size() != frames[i].labels.size()) {
      throw IoError(IoErrorCode::kSchemaMismatch, "prediction labels do not cover frame " + frames[i].frame_id);
    }
    pred.insert(pred.end(), predictions[i].labels.begin(), predictions[i].labels.end());
    gt.insert(gt.end(), frames[i].labels.begin(), frames[i].labels.end());
    eval.push_back({predictions[i].instances, frames[i].instances});
  }
  std::vector<metrics::MetricReport> reports{metrics::semantic_miou(pred, gt, taxonomy)};
  for (double t : cfg.eval.iou_thresholds) reports.push_back(metrics::instance_ap(eval, t, taxonomy, cfg.eval.interpolation));
  return reports;
}

std::vector<metrics::MetricReport> evaluate_detection(std::span<const SceneFrame> frames,
                                                      std::span<const FramePrediction> predictions,
                                                      const run::RunConfig& cfg) {
  if (frames.size() != predictions.size()) throw std::invalid_argument("evaluate_detection: frame count mismatch");
  std::vector<metrics::EvalFrame> eval;
  for (std::size_t i = 0; i < frames.size(); ++i) eval.push_back({predictions[i].instances, frames[i].instances});
  return {metrics::detection_ap(eval, cfg.eval.distance_thresholds, cfg.taxonomy(), cfg.eval.interpolation)};
}

ActionPairs pair_actions(std::span<const SceneFrame> frames, std::span<const FramePrediction> predictions,
                         double radius) {
  ActionPairs pairs;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    for (const InstanceAnnotation& gt : frames[i].instances) {
      if (!gt.action) continue;
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (const PredictedInstance& p : predictions[i].instances) {
        if (!p.action) continue;
        const double d = distance(p.box.center(), gt.box.center());
        if (d <= radius && d < best_d) {
          best_d = d;
          best = *p.action;
        }
      }
      pairs.predicted.push_back(best);
      pairs.truth.push_back(*gt.action);
    }
  }
  return pairs;
}

std::vector<metrics::MetricReport> evaluate_actions(std::span<const SceneFrame> frames,
                                                    std::span<const FramePrediction> predictions,
                                                    const run::RunConfig& cfg) {
  if (frames.size() != predictions.size()) throw std::invalid_argument("evaluate_actions: frame count mismatch");
  const ActionTaxonomy actions;
  std::vector<metrics::EvalFrame> eval;
  for (std::size_t i = 0; i < frames.size(); ++i) eval.push_back({predictions[i].instances, frames[i].instances});
  const ActionPairs pairs = pair_actions(frames, predictions, cfg.eval.action_match_distance);
  return {metrics::action_map(eval, cfg.eval.distance_thresholds, actions, cfg.eval.interpolation),
          metrics::action_accuracy(pairs.predicted, pairs.truth, actions)};
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Human-centric LiDAR point cloud toolkit: synthesis, training, inference and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate a seeded train/test split");
  add_common(synth, o.common);
  synth->add_option("--frames", o.frames, "Number of frames (80/20 split)");
  synth->add_option("--preset", o.preset, "Generator preset: segmentation, separable-actions, context-actions");

  auto* train_seg = app.add_subcommand("train-seg", "Full-batch segmentation training");
  add_common(train_seg, o.common);
  train_seg->add_option("--data", o.data, "Directory of training frames")->required();
  train_seg->add_option("--steps", o.steps, "Override the configured step count");

  auto* train_action = app.add_subcommand("train-action", "Full-batch action recognition training");
  add_common(train_action, o.common);
  train_action->add_option("--data", o.data, "Directory of training frames")->required();
  train_action->add_option("--steps", o.steps, "Override the configured step count");

  auto* segment = app.add_subcommand("segment", "Segmentation inference over a frame directory");
  add_common(segment, o.common);
  segment->add_option("--data", o.data, "Directory of frames")->required();
  segment->add_option("--model", o.model, "Segmentation checkpoint")->required();

  auto* recognize = app.add_subcommand("recognize", "Action recognition over a frame directory");
  add_common(recognize, o.common);
  recognize->add_option("--data", o.data, "Directory of frames")->required();
  recognize->add_option("--model", o.model, "Action checkpoint")->required();
  recognize->add_option("--boxes", o.boxes, "Prediction directory supplying person boxes (default: annotated boxes)");

  std::vector<CLI::App*> evals;
  const std::pair<const char*, const char*> eval_commands[] = {
      {"eval-seg", "Semantic mIoU and instance AP of segmentation predictions"},
      {"eval-det", "Center-distance detection AP of predicted boxes"},
      {"eval-action", "Action mAP, mRecall, mPrecision and accuracy"},
  };
  for (const auto& [name, description] : eval_commands) {
    auto* e = app.add_subcommand(name, description);
    add_common(e, o.common);
    e->add_option("--data", o.data, "Directory of annotated frames")->required();
    e->add_option("--pred", o.pred, "Directory of prediction files")->required();
    evals.push_back(e);
  }

  auto* grad = app.add_subcommand("gradcheck", "Run every registered finite-difference check");
  add_common(grad, o.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (train_seg->parsed()) return cmd_train_seg(o);
    if (train_action->parsed()) return cmd_train_action(o);
    if (segment->parsed()) return cmd_segment(o);
    if (recognize->parsed()) return cmd_recognize(o);
    if (evals[0]->parsed()) return cmd_eval(o, "eval-seg", evaluate_segmentation);
    if (evals[1]->parsed()) return cmd_eval(o, "eval-det", evaluate_detection);
    if (evals[2]->parsed()) return cmd_eval(o, "eval-action", evaluate_actions);
    if (grad->parsed()) return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIoError;
  } catch (const GradcheckFailure& e) {
    std::fprintf(stderr, "gradcheck: %s\n", e.what());
    return kGradcheckFailed;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace hcp::cli
