#include "hcp/gradcheck_suite.hpp"

#include <algorithm>
#include <memory>
#include <random>
#include <stdexcept>

#include "hcp/action.hpp"
#include "hcp/backbone.hpp"
#include "hcp/hhoi.hpp"
#include "hcp/nn.hpp"

namespace hcp::gradcheck {

namespace {

using tensor::Matrix;
using Rng = std::mt19937_64;

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = u(rng);
  return m;
}

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

Parameter input(const std::string& name, Matrix value) {
  Parameter p;
  p.name = name;
  p.grad = Matrix(value.rows(), value.cols());
  p.value = std::move(value);
  return p;
}

// Moves parameters off zero so no ReLU input sits exactly on its kink.
void jitter(const tensor::ParameterStore& store, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (Parameter* p : store.all()) {
    for (double& v : p->value.values()) v += u(rng);
  }
}

std::vector<Parameter*> with_inputs(const tensor::ParameterStore& store, std::initializer_list<Parameter*> extra) {
  std::vector<Parameter*> out(store.all().begin(), store.all().end());
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

Var weighted_sum(Tape& tape, Var x, const Matrix& w) { return tensor::sum(tensor::hadamard(x, tape.constant(w))); }

std::vector<Vec3> random_positions(std::size_t n, Rng& rng, double extent) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vec3> out(n);
  for (Vec3& p : out) p = {u(rng), u(rng), u(rng)};
  return out;
}

Options with_entries(Options o, std::uint64_t seed, std::size_t entries) {
  o.seed = seed;
  if (o.max_entries == 0) o.max_entries = entries;
  return o;
}

Result mlp_block(std::uint64_t seed, const Options& o) {
  Rng rng(seed);
  const std::size_t in = dim(rng, 2, 5), hidden = dim(rng, 3, 6), out = dim(rng, 2, 4), rows = dim(rng, 2, 6);
  tensor::ParameterStore store;
  const nn::Mlp mlp = nn::Mlp::create(store, "mlp", {in, hidden, out}, rng);
  jitter(store, rng);
  Parameter x = input("x", random_matrix(rows, in, rng));
  const Matrix w = random_matrix(rows, out, rng);
  return check("mlp", with_inputs(store, {&x}), [&](Tape& t) { return weighted_sum(t, mlp(t, t.param(x)), w); },
               with_entries(o, seed, 0));
}

Result softmax_block(std::uint64_t seed, const Options& o) {
  Rng rng(seed);
  const std::size_t rows = dim(rng, 1, 5), cols = dim(rng, 2, 6);
  Parameter x = input("x", random_matrix(rows, cols, rng, -2.0, 2.0));
  const Matrix w = random_matrix(rows, cols, rng);
  Parameter* params[] = {&x};
  return check("softmax", params, [&](Tape& t) { return weighted_sum(t, tensor::softmax_rows(t.param(x)), w); },
               with_entries(o, seed, 0));
}

Result layer_norm_block(std::uint64_t seed, const Options& o) {
  Rng rng(seed);
  const std::size_t rows = dim(rng, 1, 5), cols = dim(rng, 2, 6);
  tensor::ParameterStore store;
  const nn::LayerNorm norm = nn::LayerNorm::create(store, "ln", cols, rng);
  jitter(store, rng);
  Parameter x = input("x", random_matrix(rows, cols, rng, -2.0, 2.0));
  const Matrix w = random_matrix(rows, cols, rng);
  return check("layer_norm", with_inputs(store, {&x}),
               [&](Tape& t) { return weighted_sum(t, norm(t, t.param(x)), w); }, with_entries(o, seed, 0));
}

Result attention_block(std::uint64_t seed, const Options& o) {
  Rng rng(seed);
  const std::size_t nq = dim(rng, 1, 4), nk = dim(rng, 1, 5), dk = dim(rng, 2, 6), dv = dim(rng, 2, 5);
  Parameter q = input("q", random_matrix(nq, dk, rng));
  Parameter k = input("k", random_matrix(nk, dk, rng));
  Parameter v = input("v", random_matrix(nk, dv, rng));
  const Matrix w = random_matrix(nq, dv, rng);
  Parameter* params[] = {&q, &k, &v};
  return check("attention", params,
               [&](Tape& t) { return weighted_sum(t, nn::attention(t.param(q), t.param(k), t.param(v), dk), w); },
               with_entries(o, seed, 0));
}

Result ffn_block(std::uint64_t seed, const Options& o) {
  Rng rng(seed);
  const std::size_t d = dim(rng, 2, 5), rows = dim(rng, 1, 4);
  tensor::ParameterStore store;
  const nn::FeedForward ffn = nn::FeedForward::create(store, "ffn", d, rng);
  jitter(store, rng);
  Parameter x = input("x", random_matrix(rows, d, rng));
  const Matrix w = random_matrix(rows, d, rng);
  return check("ffn", with_inputs(store, {&x}), [&](Tape& t) { return weighted_sum(t, ffn(t, t.param(x)), w); },
               with_entries(o, seed, 0));
}

Result set_abstraction_block(std::uint64_t seed, const Options& o) {
  Rng rng(seed);
  const std::size_t n = dim(rng, 12, 30), centers = dim(rng, 3, 6), c = dim(rng, 1, 3), out = dim(rng, 2, 5);
  tensor::ParameterStore store;
  const nn::Mlp mlp = nn::Mlp::create(store, "sa", {3 + c, dim(rng, 3, 6), out}, rng, true);
  jitter(store, rng);
  const auto positions = random_positions(n, rng, 0.5);
  const auto plan = backbone::plan_abstraction(positions, centers, 0.4, 8, 0);
  Parameter x = input("x", random_matrix(n, c, rng));
  const Matrix w = random_matrix(centers, out, rng);
  return check("set_abstraction", with_inputs(store, {&x}),
               [&](Tape& t) { return weighted_sum(t, backbone::set_abstraction(t, t.param(x), plan, mlp), w); },
               with_entries(o, seed, 0));
}

Result feature_propagation_block(std::uint64_t seed, const Options& o) {
  Rng rng(seed);
  const std::size_t nc = dim(rng, 3, 6), nf = dim(rng, 6, 12), cc = dim(rng, 2, 4), cs = dim(rng, 1, 3),
                    out = dim(rng, 2, 4);
  tensor::ParameterStore store;
  const nn::Mlp mlp = nn::Mlp::create(store, "fp", {cc + cs, out}, rng, true);
  jitter(store, rng);
  const auto coarse = random_positions(nc, rng, 1.0);
  const auto fine = random_positions(nf, rng, 1.0);
  const auto plan = backbone::plan_propagation(coarse, fine);
  Parameter xc = input("coarse", random_matrix(nc, cc, rng));
  Parameter xs = input("skip", random_matrix(nf, cs, rng));
  const Matrix w = random_matrix(nf, out, rng);
  return check("feature_propagation", with_inputs(store, {&xc, &xs}),
               [&](Tape& t) {
                 return weighted_sum(t, backbone::feature_propagation(t, t.param(xc), plan, t.param(xs), mlp), w);
               },
               with_entries(o, seed, 0));
}

// Three blobs (two of class 1, one of class 2), ground (class 3) and one
// unlabeled point, with features standing in for backbone output.
struct ToyHead {
  SceneFrame frame;
  std::vector<Vec3> positions;
  seg::SegTargets targets;
  seg::HHOIConfig cfg;
  tensor::ParameterStore store;
  std::unique_ptr<seg::HHOIHead> head;
  Parameter features;
  seg::TokenSelection tokens;
  std::vector<seg::Proposal> proposals;
  std::vector<double> weights;
  std::vector<int> things{1, 2};
};

std::unique_ptr<ToyHead> toy_head(std::uint64_t seed) {
  auto toy = std::make_unique<ToyHead>();
  Rng rng(seed);
  const std::size_t per_blob = dim(rng, 6, 9);
  std::normal_distribution<double> spread(0.0, 0.12);
  const Vec3 centers[3] = {{0, 0, 0.9}, {3, 0, 0.9}, {1.5, 2, 0.4}};
  const int classes[3] = {1, 1, 2};
  std::vector<Point> pts;
  auto push = [&](const Vec3& p, float r, int label) {
    pts.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z), r});
    toy->frame.labels.push_back(label);
  };
  for (int b = 0; b < 3; ++b) {
    InstanceAnnotation inst;
    inst.id = b + 1;
    inst.semantic_class = classes[b];
    for (std::size_t i = 0; i < per_blob; ++i) {
      inst.indices.push_back(pts.size());
      push(centers[b] + Vec3{spread(rng), spread(rng), spread(rng)}, 0.5f, classes[b]);
    }
    toy->frame.instances.push_back(inst);
  }
  std::uniform_real_distribution<double> ground(-1.0, 4.0);
  for (std::size_t i = 0; i < per_blob; ++i) push({ground(rng), ground(rng), 0.0}, 0.1f, 3);
  push({5.0, 5.0, 0.0}, 0.0f, 0);
  toy->frame.cloud = PointCloud(std::move(pts));
  toy->positions = toy->frame.cloud.positions();
  toy->targets = seg::make_targets(toy->frame);

  toy->cfg.feature_dim = dim(rng, 4, 6);
  toy->cfg.num_classes = 4;
  toy->cfg.head_hidden = dim(rng, 4, 6);
  toy->cfg.refine_dim = dim(rng, 3, 5);
  toy->cfg.tokens = dim(rng, 4, 8);
  toy->cfg.tau = 0.3;
  toy->head = std::make_unique<seg::HHOIHead>(toy->cfg, toy->store, rng);
  jitter(toy->store, rng);
  toy->features = input("features", random_matrix(toy->positions.size(), toy->cfg.feature_dim, rng));
  toy->weights = seg::class_weights_from_labels(std::span(&toy->frame, 1), toy->cfg.num_classes);
  {
    Tape tape;
    toy->tokens = toy->head->forward(tape, tape.constant(toy->features.value), toy->positions, 1, toy->things).tokens;
  }
  // Imperfect proposals: each instance minus one member, the last one plus a
  // foreign point, so every mask target has both labels.
  for (std::size_t k = 0; k < toy->targets.members.size(); ++k) {
    auto m = toy->targets.members[k];
    m.pop_back();
    if (k + 1 == toy->targets.members.size()) {
      m.push_back(toy->targets.members[0].back());
      std::sort(m.begin(), m.end());
    }
    toy->proposals.push_back({toy->targets.instance_class[k], m});
  }
  return toy;
}

seg::SegLoss toy_loss(Tape& t, ToyHead& toy) {
  const auto out = toy.head->forward(t, t.param(toy.features), toy.positions, 1, toy.things,
                                     &toy.tokens, &toy.proposals);
  return seg::segmentation_loss(t, out.semantic_offset, out.proposals, out.refine, toy.positions, toy.targets,
                                toy.weights, toy.cfg);
}

Result hhoi_head_block(std::uint64_t seed, const Options& o) {
  auto toy = toy_head(seed);
  Rng rng(seed + 100);
  const std::size_t n = toy->positions.size(), c = toy->cfg.num_classes;
  const Matrix ws = random_matrix(n, c, rng), wo = random_matrix(n, 3, rng);
  const Matrix wy = random_matrix(n, c, rng), ww = random_matrix(n, toy->cfg.feature_dim, rng);
  return check("hhoi_head", with_inputs(toy->store, {&toy->features}),
               [&](Tape& t) {
                 const auto out = toy->head->forward(t, t.param(toy->features), toy->positions, 1, toy->things,
                                                     &toy->tokens, &toy->proposals);
                 Var total = tensor::add(weighted_sum(t, out.semantic_offset.scores, ws),
                                         weighted_sum(t, out.semantic_offset.offsets, wo));
                 total = tensor::add(total, weighted_sum(t, out.confidence, wy));
                 total = tensor::add(total, weighted_sum(t, out.weighted, ww));
                 total = tensor::add(total, tensor::sum(out.refine.class_scores));
                 total = tensor::add(total, tensor::sum(out.refine.masks));
                 return tensor::add(total, tensor::sum(out.refine.ious));
               },
               with_entries(o, seed, 6));
}

Result loss_term_block(const std::string& name, Var seg::SegLoss::*term, std::uint64_t seed, const Options& o) {
  auto toy = toy_head(seed);
  return check(name, with_inputs(toy->store, {&toy->features}),
               [&](Tape& t) { return toy_loss(t, *toy).*term; }, with_entries(o, seed, 6));
}

action::ActionConfig tiny_action_config(Rng& rng) {
  action::ActionConfig cfg;
  cfg.points = 32;
  cfg.branches = dim(rng, 1, 2);
  cfg.serial = 1;
  cfg.base_width = dim(rng, 3, 4);
  cfg.max_group = 6;
  cfg.embed_dim = dim(rng, 4, 6);
  cfg.classifier_hidden = dim(rng, 4, 6);
  return cfg;
}

Result hpfe_block(std::uint64_t seed, const Options& o) {
  Rng rng(seed);
  const action::ActionConfig cfg = tiny_action_config(rng);
  tensor::ParameterStore store;
  const action::Hpfe hpfe(cfg, store, rng);
  jitter(store, rng);
  const Matrix crop = random_matrix(cfg.points, 4, rng);
  const auto plan = hpfe.plan(crop);
  const Matrix w = random_matrix(plan.token_positions.size(), cfg.fused_width(), rng);
  const Matrix wf = random_matrix(1, cfg.fused_width(), rng);
  return check("hpfe", store.all(),
               [&](Tape& t) {
                 const auto out = hpfe.forward(t, crop, plan);
                 return tensor::add(weighted_sum(t, out.tokens, w), weighted_sum(t, out.fused, wf));
               },
               with_entries(o, seed, 6));
}

Result enfi_block(std::uint64_t seed, const Options& o) {
  Rng rng(seed);
  const action::ActionConfig cfg = tiny_action_config(rng);
  tensor::ParameterStore store;
  const action::Enfi enfi(cfg, store, rng);
  jitter(store, rng);
  const std::size_t width = cfg.fused_width(), k = dim(rng, 1, 3);
  Parameter tokens = input("tokens", random_matrix(dim(rng, 2, 4), width, rng));
  Parameter neighbors = input("neighbors", random_matrix(k, width, rng));
  std::vector<double> distances;
  std::uniform_real_distribution<double> d(0.3, 3.0);
  for (std::size_t i = 0; i < k; ++i) distances.push_back(d(rng));
  std::sort(distances.begin(), distances.end());
  const Matrix w = random_matrix(1, enfi.output_width(), rng);
  return check("enfi", with_inputs(store, {&tokens, &neighbors}),
               [&](Tape& t) { return weighted_sum(t, enfi(t, t.param(tokens), t.param(neighbors), distances), w); },
               with_entries(o, seed, 0));
}

Result classifier_block(std::uint64_t seed, const Options& o) {
  Rng rng(seed);
  const std::size_t in = dim(rng, 4, 8), hidden = dim(rng, 3, 6);
  tensor::ParameterStore store;
  const nn::Mlp mlp = nn::Mlp::create(store, "cls", {in, hidden, ActionTaxonomy::kCount}, rng);
  jitter(store, rng);
  Parameter x = input("x", random_matrix(1, in, rng));
  const Matrix w = random_matrix(1, ActionTaxonomy::kCount, rng);
  return check("classifier", with_inputs(store, {&x}),
               [&](Tape& t) { return weighted_sum(t, action::classify_action(t, t.param(x), mlp), w); },
               with_entries(o, seed, 0));
}

using BlockFn = std::function<Result(std::uint64_t, const Options&)>;

const std::vector<std::pair<std::string, BlockFn>>& registry() {
  static const std::vector<std::pair<std::string, BlockFn>> blocks = {
      {"mlp", mlp_block},
      {"softmax", softmax_block},
      {"layer_norm", layer_norm_block},
      {"attention", attention_block},
      {"ffn", ffn_block},
      {"set_abstraction", set_abstraction_block},
      {"feature_propagation", feature_propagation_block},
      {"hhoi_head", hhoi_head_block},
      {"hpfe", hpfe_block},
      {"enfi", enfi_block},
      {"classifier", classifier_block},
      {"loss_semantic", [](std::uint64_t s, const Options& o) { return loss_term_block("loss_semantic", &seg::SegLoss::semantic, s, o); }},
      {"loss_offset", [](std::uint64_t s, const Options& o) { return loss_term_block("loss_offset", &seg::SegLoss::offset, s, o); }},
      {"loss_class", [](std::uint64_t s, const Options& o) { return loss_term_block("loss_class", &seg::SegLoss::cls, s, o); }},
      {"loss_mask", [](std::uint64_t s, const Options& o) { return loss_term_block("loss_mask", &seg::SegLoss::mask, s, o); }},
      {"loss_mask_score", [](std::uint64_t s, const Options& o) { return loss_term_block("loss_mask_score", &seg::SegLoss::mask_score, s, o); }},
  };
  return blocks;
}

}  // namespace

std::vector<std::string> suite_blocks() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

Result run_block(const std::string& block, std::uint64_t seed, const Options& options) {
  for (const auto& [name, fn] : registry()) {
    if (name != block) continue;
    Result r = fn(seed, options);
    r.name = name + "/seed=" + std::to_string(seed);
    return r;
  }
  throw std::invalid_argument("unknown gradient check block: " + block);
}

std::vector<Result> run_suite(const Options& options, const std::function<void(const Result&)>& on_result) {
  std::vector<Result> results;
  for (const auto& [name, fn] : registry()) {
    for (std::uint64_t seed : kSuiteSeeds) {
      results.push_back(run_block(name, seed, options));
      if (on_result) on_result(results.back());
    }
  }
  return results;
}

}  // namespace hcp::gradcheck
