#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "hcp/backbone.hpp"
#include "hcp/gradcheck.hpp"
#include "hcp/hhoi.hpp"
#include "test_util.hpp"

using namespace hcp;
using seg::HHOIConfig;
using seg::Proposal;
using tensor::Matrix;
using tensor::Parameter;
using tensor::Tape;
using tensor::Var;
using hcp::testing::make_param;
using hcp::testing::random_matrix;
using hcp::testing::random_positions;

namespace {

std::vector<Parameter*> params_of(const nn::ParameterStore& store) {
  return {store.all().begin(), store.all().end()};
}

Var weighted_sum(Tape& tape, Var x, const Matrix& w) {
  return tensor::sum(tensor::hadamard(x, tape.constant(w)));
}

void zero_all(const nn::ParameterStore& store) {
  for (Parameter* p : store.all()) p->value.fill(0.0);
}

// Two blobs of one class plus one blob of a second class, with ground around.
struct ToyScene {
  std::vector<Vec3> positions;
  SceneFrame frame;
};

ToyScene toy_scene(std::mt19937_64& rng, std::size_t per_blob = 12) {
  ToyScene s;
  std::normal_distribution<double> jitter(0.0, 0.12);
  const Vec3 centers[3] = {{0, 0, 0.9}, {3, 0, 0.9}, {1.5, 2, 0.4}};
  const int classes[3] = {1, 1, 2};
  std::vector<Point> pts;
  for (int b = 0; b < 3; ++b) {
    InstanceAnnotation inst;
    inst.id = b + 1;
    inst.semantic_class = classes[b];
    if (classes[b] == 1) inst.action = 0;
    for (std::size_t i = 0; i < per_blob; ++i) {
      const Vec3 p = centers[b] + Vec3{jitter(rng), jitter(rng), jitter(rng)};
      inst.indices.push_back(pts.size());
      pts.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z), 0.5f});
      s.frame.labels.push_back(classes[b]);
    }
    s.frame.instances.push_back(inst);
  }
  std::uniform_real_distribution<double> u(-1.0, 4.0);
  for (std::size_t i = 0; i < per_blob; ++i) {
    pts.push_back({static_cast<float>(u(rng)), static_cast<float>(u(rng)), 0.0f, 0.1f});
    s.frame.labels.push_back(3);
  }
  // a couple of unlabeled points
  pts.push_back({5.0f, 5.0f, 0.0f, 0.0f});
  s.frame.labels.push_back(0);
  s.frame.cloud = PointCloud(pts);
  s.positions = s.frame.cloud.positions();
  return s;
}

HHOIConfig small_config() {
  HHOIConfig cfg;
  cfg.feature_dim = 6;
  cfg.num_classes = 4;  // unlabeled, person, object, ground
  cfg.head_hidden = 5;
  cfg.refine_dim = 4;
  cfg.tokens = 8;
  cfg.tau = 0.3;
  return cfg;
}

double naive_iou(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::set<std::size_t> sa(a.begin(), a.end()), sb(b.begin(), b.end()), uni = sa;
  uni.insert(sb.begin(), sb.end());
  std::size_t inter = 0;
  for (auto x : sa) inter += sb.count(x);
  return uni.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni.size());
}

}  // namespace

TEST_CASE("person confidence") {
  std::mt19937_64 rng(1);
  nn::ParameterStore store;
  nn::Mlp mlp = nn::Mlp::create(store, "sem", {6, 5, 4}, rng);
  {
    Tape tape;
    Var y = seg::person_confidence(tape, tape.constant(random_matrix(7, 6, rng, -3, 3)), mlp);
    for (std::size_t i = 0; i < 7; ++i) {
      double total = 0.0;
      for (double v : y.value().row(i)) total += v;
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 r(seed);
    nn::ParameterStore s;
    nn::Mlp m = nn::Mlp::create(s, "sem", {6, 5, 4}, r);
    Parameter x = make_param("x", random_matrix(5, 6, r));
    const Matrix w = random_matrix(5, 4, r);
    auto params = params_of(s);
    params.push_back(&x);
    auto res = gradcheck::check("person_confidence", params,
                                [&](Tape& t) { return weighted_sum(t, seg::person_confidence(t, t.param(x), m), w); },
                                {.tolerance = 1e-5});
    CHECK(res.passed);
  }
  zero_all(store);
  Tape tape;
  Var y = seg::person_confidence(tape, tape.constant(random_matrix(3, 6, rng)), mlp);
  for (double v : y.value().values()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("person token sampling") {
  const std::size_t n = 400;
  Matrix conf(n, 3);
  // person confidence descending with index among the first 300, below tau after
  for (std::size_t i = 0; i < n; ++i) conf(i, 1) = i < 300 ? 0.99 - 0.0005 * static_cast<double>(i) : 0.1;
  auto sel = seg::sample_person_tokens(conf, 1, 0.8, 256);
  CHECK(sel.indices.size() == 256);
  CHECK(sel.candidates == 300);
  CHECK_FALSE(sel.fallback);
  for (std::size_t j = 0; j < 256; ++j) CHECK(sel.indices[j] == j);

  Matrix none(n, 3);
  for (std::size_t i = 0; i < n; ++i) none(i, 1) = 0.001 * static_cast<double>(i % 50);
  sel = seg::sample_person_tokens(none, 1, 0.8, 256);
  CHECK(sel.fallback);
  CHECK(sel.candidates == 0);
  CHECK(sel.indices.size() == 256);
  CHECK(sel.indices.front() == 49);  // highest, lowest index among ties
  for (std::size_t j = 1; j < 256; ++j) CHECK(none(sel.indices[j], 1) <= none(sel.indices[j - 1], 1));

  Matrix few(n, 3);
  for (std::size_t i = 0; i < 10; ++i) few(50 + i * 7, 1) = 0.81 + 0.01 * static_cast<double>(i);
  sel = seg::sample_person_tokens(few, 1, 0.8, 256);
  CHECK_FALSE(sel.fallback);
  CHECK(sel.candidates == 10);
  REQUIRE(sel.indices.size() == 256);
  std::set<std::size_t> first10(sel.indices.begin(), sel.indices.begin() + 10);
  CHECK(first10.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(first10.count(50 + i * 7) == 1);
  for (std::size_t j = 10; j < 256; ++j) CHECK(sel.indices[j] == 50 + 9 * 7);
}

TEST_CASE("human guided feature") {
  std::mt19937_64 rng(4);
  nn::ParameterStore store;
  auto block = seg::GuidedAttention::create(store, "g", 6, rng);
  {
    Tape tape;
    Var out = block(tape, tape.constant(random_matrix(1, 6, rng)));
    CHECK(out.rows() == 1);
    CHECK(out.value().all_finite());
  }
  {
    Matrix same(4, 6);
    const Matrix row = random_matrix(1, 6, rng);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 6; ++j) same(i, j) = row(0, j);
    Tape tape;
    Var out = block(tape, tape.constant(same));
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 0; j < 6; ++j) CHECK(out.value()(i, j) == out.value()(0, j));
  }
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    std::mt19937_64 r(seed);
    nn::ParameterStore s;
    auto g = seg::GuidedAttention::create(s, "g", 5, r);
    Parameter x = make_param("x", random_matrix(4, 5, r));
    const Matrix w = random_matrix(4, 5, r);
    auto params = params_of(s);
    params.push_back(&x);
    auto res = gradcheck::check("human_guided_feature", params,
                                [&](Tape& t) { return weighted_sum(t, g(t, t.param(x)), w); });
    CHECK(res.passed);
  }
}

TEST_CASE("object weighting") {
  std::mt19937_64 rng(8);
  const Matrix fp = random_matrix(5, 4, rng);
  {
    Matrix fg(3, 4);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) fg(i, j) = 0.1 * static_cast<double>(j) - 0.2;
    Tape tape;
    Var out = seg::object_weighting(tape.constant(fp), tape.constant(fg));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out.value()(i, j) - fp(i, j) - fg(0, j)) <= 1e-12);
  }
  {
    const Matrix fg = random_matrix(1, 4, rng);
    Tape tape;
    Var out = seg::object_weighting(tape.constant(fp), tape.constant(fg));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out.value()(i, j) - fp(i, j) - fg(0, j)) <= 1e-12);
  }
  {
    // all-person case: N = M, F_s = F_p
    Tape tape;
    Var w = tensor::softmax_rows(tensor::matmul_transposed(tape.constant(fp), tape.constant(fp)));
    CHECK(w.rows() == 5);
    CHECK(w.cols() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      double total = 0.0;
      for (double v : w.value().row(i)) total += v;
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
  for (std::uint64_t seed : {9u, 10u, 11u}) {
    std::mt19937_64 r(seed);
    Parameter p = make_param("fp", random_matrix(6, 4, r));
    Parameter g = make_param("fg", random_matrix(3, 4, r));
    const Matrix w = random_matrix(6, 4, r);
    Parameter* params[] = {&p, &g};
    auto res = gradcheck::check("object_weighting", params, [&](Tape& t) {
      return weighted_sum(t, seg::object_weighting(t.param(p), t.param(g)), w);
    });
    CHECK(res.passed);
  }
}

TEST_CASE("semantic and offset heads") {
  std::mt19937_64 rng(12);
  for (std::uint64_t seed : {12u, 13u, 14u}) {
    std::mt19937_64 r(seed);
    nn::ParameterStore s;
    nn::Mlp sem = nn::Mlp::create(s, "sem", {4, 5, 3}, r);
    nn::Mlp off = nn::Mlp::create(s, "off", {4, 5, 3}, r);
    Parameter x = make_param("x", random_matrix(5, 4, r));
    const Matrix ws = random_matrix(5, 3, r), wo = random_matrix(5, 3, r);
    auto params = params_of(s);
    params.push_back(&x);
    auto res = gradcheck::check("semantic_offset", params, [&](Tape& t) {
      auto so = seg::predict_semantic_offset(t, t.param(x), sem, off);
      return tensor::add(weighted_sum(t, so.scores, ws), weighted_sum(t, so.offsets, wo));
    }, {.tolerance = 1e-5});
    CHECK(res.passed);
    Tape tape;
    auto so = seg::predict_semantic_offset(tape, tape.constant(random_matrix(6, 4, r, -5, 5)), sem, off);
    for (std::size_t i = 0; i < 6; ++i) {
      double total = 0.0;
      for (double v : so.scores.value().row(i)) total += v;
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
    zero_all(s);
    Tape t2;
    so = seg::predict_semantic_offset(t2, t2.constant(random_matrix(6, 4, r)), sem, off);
    for (double v : so.scores.value().values()) CHECK(v == doctest::Approx(1.0 / 3.0));
    for (double v : so.offsets.value().values()) CHECK(v == 0.0);
  }
}

TEST_CASE("grouping with oracle offsets recovers instances") {
  std::mt19937_64 rng(15);
  ToyScene scene = toy_scene(rng);
  const auto targets = seg::make_targets(scene.frame);
  const std::size_t n = scene.positions.size();
  Matrix s(n, 4), o(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    s(i, static_cast<std::size_t>(scene.frame.labels[i])) = 1.0;
    const int k = targets.instance_of[i];
    if (k >= 0) {
      const Vec3 d = targets.centroids[static_cast<std::size_t>(k)] - scene.positions[i];
      o(i, 0) = d.x;
      o(i, 1) = d.y;
      o(i, 2) = d.z;
    }
  }
  const int things[] = {1, 2};
  HHOIConfig cfg = small_config();
  auto props = seg::group_instances(scene.positions, s, o, things, cfg);
  REQUIRE(props.size() == 3);
  std::set<std::vector<std::size_t>> got, want;
  for (auto& p : props) got.insert(p.indices);
  for (auto& m : targets.members) want.insert(m);
  CHECK(got == want);

  Matrix low(n, 4, 0.1);
  CHECK(seg::group_instances(scene.positions, low, o, things, cfg).empty());

  // one tight blob, zero offsets
  std::vector<Vec3> blob;
  for (int i = 0; i < 8; ++i) blob.push_back({0.01 * i, 0.0, 0.0});
  Matrix bs(8, 4);
  for (std::size_t i = 0; i < 8; ++i) bs(i, 1) = 1.0;
  auto one = seg::group_instances(blob, bs, Matrix(8, 3), things, cfg);
  REQUIRE(one.size() == 1);
  CHECK(one[0].indices.size() == 8);
  CHECK(one[0].semantic_class == 1);
}

TEST_CASE("refine proposals") {
  std::mt19937_64 rng(16);
  HHOIConfig cfg = small_config();
  const auto pts = random_positions(10, rng);
  {
    nn::ParameterStore store;
    auto head = seg::RefineHead::create(store, "r", cfg, rng);
    zero_all(store);
    const std::vector<Proposal> props{{1, {0, 2, 4}}, {2, {7}}};
    Tape tape;
    auto out = seg::refine_proposals(tape, props, tape.constant(random_matrix(10, 6, rng)), pts, head);
    CHECK(out.count == 2);
    for (double v : out.class_scores.value().values()) CHECK(v == doctest::Approx(0.25));
    for (double v : out.masks.value().values()) CHECK(v == 0.5);
    for (double v : out.ious.value().values()) CHECK(v == 0.5);
    CHECK(out.mask_offsets[2] - out.mask_offsets[1] == 1);

    const std::vector<Proposal> empty;
    CHECK(seg::refine_proposals(tape, empty, tape.constant(Matrix(10, 6)), pts, head).count == 0);
  }
  for (std::uint64_t seed : {17u, 18u, 19u}) {
    std::mt19937_64 r(seed);
    nn::ParameterStore s;
    auto head = seg::RefineHead::create(s, "r", cfg, r);
    Parameter x = make_param("x", random_matrix(10, 6, r));
    const std::vector<Proposal> props{{1, {0, 1, 5, 9}}, {2, {2, 3}}, {1, {4}}};
    const Matrix wc = random_matrix(3, 4, r), wm = random_matrix(7, 1, r), wi = random_matrix(3, 1, r);
    auto params = params_of(s);
    params.push_back(&x);
    auto res = gradcheck::check("refine", params, [&](Tape& t) {
      auto out = seg::refine_proposals(t, props, t.param(x), pts, head);
      return tensor::add(tensor::add(weighted_sum(t, out.class_scores, wc), weighted_sum(t, out.masks, wm)),
                         weighted_sum(t, out.ious, wi));
    });
    CHECK(res.passed);
  }
}

TEST_CASE("segmentation loss special cases") {
  std::mt19937_64 rng(20);
  ToyScene scene = toy_scene(rng);
  const auto targets = seg::make_targets(scene.frame);
  const std::size_t n = scene.positions.size();
  HHOIConfig cfg = small_config();
  const std::vector<double> weights{0.0, 1.0, 1.0, 1.0};

  // perfect outputs
  Matrix s(n, 4), o(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    s(i, static_cast<std::size_t>(scene.frame.labels[i])) = 1.0;
    const int k = targets.instance_of[i];
    if (k >= 0) {
      const Vec3 d = targets.centroids[static_cast<std::size_t>(k)] - scene.positions[i];
      o(i, 0) = d.x;
      o(i, 1) = d.y;
      o(i, 2) = d.z;
    }
  }
  std::vector<Proposal> props;
  for (std::size_t k = 0; k < targets.members.size(); ++k) props.push_back({targets.instance_class[k], targets.members[k]});
  std::size_t rows = 0;
  for (auto& p : props) rows += p.indices.size();
  Matrix cls(props.size(), 4);
  for (std::size_t k = 0; k < props.size(); ++k) cls(k, static_cast<std::size_t>(props[k].semantic_class)) = 1.0;

  Tape tape;
  seg::SemanticOffset so{tape.constant(s), tape.constant(o)};
  seg::RefineOutput ref;
  ref.count = props.size();
  ref.class_scores = tape.constant(cls);
  ref.masks = tape.constant(Matrix(rows, 1, 1.0));
  ref.ious = tape.constant(Matrix(props.size(), 1, 1.0));
  ref.mask_offsets = {0};
  for (auto& p : props) ref.mask_offsets.push_back(ref.mask_offsets.back() + p.indices.size());
  auto loss = seg::segmentation_loss(tape, so, props, ref, scene.positions, targets, weights, cfg);
  CHECK(std::abs(loss.terms.total) <= 1e-6);

  // uniform scores over C = 2
  Tape t2;
  SceneFrame two;
  two.cloud = PointCloud(std::vector<Point>(5));
  two.labels.assign(5, 1);
  const auto t_two = seg::make_targets(two);
  HHOIConfig c2 = cfg;
  seg::SemanticOffset uni{t2.constant(Matrix(5, 2, 0.5)), t2.constant(Matrix(5, 3))};
  seg::RefineOutput none;
  none.mask_offsets = {0};
  const std::vector<double> w2{0.0, 1.0};
  const std::vector<Vec3> pos5(5);
  auto l2 = seg::segmentation_loss(t2, uni, {}, none, pos5, t_two, w2, c2);
  CHECK(l2.terms.semantic == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(l2.terms.offset == 0.0);
  CHECK(l2.terms.total == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("segmentation loss matches a naive oracle") {
  for (std::uint64_t seed : {21u, 22u, 23u, 24u}) {
    std::mt19937_64 rng(seed);
    ToyScene scene = toy_scene(rng);
    const auto targets = seg::make_targets(scene.frame);
    const std::size_t n = scene.positions.size();
    HHOIConfig cfg = small_config();
    std::uniform_real_distribution<double> u(0.5, 2.0);
    const std::vector<double> weights{0.0, u(rng), u(rng), u(rng)};

    // proposals: one exact, one perturbed, one poor, one spanning two instances
    std::vector<Proposal> props;
    props.push_back({1, targets.members[0]});
    {
      auto m = targets.members[1];
      m.erase(m.begin());
      m.push_back(targets.members[2][0]);
      std::sort(m.begin(), m.end());
      props.push_back({1, m});
    }
    props.push_back({2, {targets.members[2][0], targets.members[2][1], targets.members[0][3]}});
    {
      auto m = targets.members[0];
      m.insert(m.end(), targets.members[1].begin(), targets.members[1].end());
      std::sort(m.begin(), m.end());
      props.push_back({1, m});
    }
    std::size_t rows = 0;
    for (auto& p : props) rows += p.indices.size();

    Matrix s = random_matrix(n, 4, rng, 0.05, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      double t = 0;
      for (double v : s.row(i)) t += v;
      for (double& v : s.row(i)) v /= t;
    }
    const Matrix o = random_matrix(n, 3, rng);
    Matrix cls = random_matrix(props.size(), 4, rng, 0.05, 1.0);
    for (std::size_t i = 0; i < cls.rows(); ++i) {
      double t = 0;
      for (double v : cls.row(i)) t += v;
      for (double& v : cls.row(i)) v /= t;
    }
    const Matrix masks = random_matrix(rows, 1, rng, 0.02, 0.98);
    const Matrix ious = random_matrix(props.size(), 1, rng, 0.0, 1.0);

    Tape tape;
    seg::SemanticOffset so{tape.constant(s), tape.constant(o)};
    seg::RefineOutput ref;
    ref.count = props.size();
    ref.class_scores = tape.constant(cls);
    ref.masks = tape.constant(masks);
    ref.ious = tape.constant(ious);
    ref.mask_offsets = {0};
    for (auto& p : props) ref.mask_offsets.push_back(ref.mask_offsets.back() + p.indices.size());
    auto loss = seg::segmentation_loss(tape, so, props, ref, scene.positions, targets, weights, cfg);

    // semantic
    double sem = 0.0;
    int valid = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int l = scene.frame.labels[i];
      if (l == 0) continue;
      sem += -weights[static_cast<std::size_t>(l)] * std::log(s(i, static_cast<std::size_t>(l)));
      ++valid;
    }
    sem /= valid;
    // offset
    double off = 0.0;
    int inside = 0;
    for (std::size_t k = 0; k < scene.frame.instances.size(); ++k) {
      const auto& idx = scene.frame.instances[k].indices;
      Vec3 c;
      for (auto i : idx) c = c + scene.positions[i];
      c = c * (1.0 / static_cast<double>(idx.size()));
      for (auto i : idx) {
        const Vec3 d = c - scene.positions[i];
        off += std::abs(o(i, 0) - d.x) + std::abs(o(i, 1) - d.y) + std::abs(o(i, 2) - d.z);
        ++inside;
      }
    }
    off /= inside;
    // matching, class, mask, score
    double cl = 0.0, mk = 0.0, sc = 0.0;
    int matched = 0;
    std::size_t row = 0;
    for (std::size_t k = 0; k < props.size(); ++k) {
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t g = 0; g < scene.frame.instances.size(); ++g) {
        const double iou = naive_iou(props[k].indices, scene.frame.instances[g].indices);
        if (iou > best_iou) {
          best_iou = iou;
          best = static_cast<int>(g);
        }
      }
      const bool pos = best >= 0 && best_iou >= 0.5;
      const int target = pos ? scene.frame.instances[static_cast<std::size_t>(best)].semantic_class : 0;
      cl += -std::log(cls(k, static_cast<std::size_t>(target)));
      if (pos) {
        ++matched;
        const auto& gt = scene.frame.instances[static_cast<std::size_t>(best)].indices;
        const std::set<std::size_t> gts(gt.begin(), gt.end());
        double bce = 0.0;
        std::vector<std::size_t> kept;
        for (std::size_t r = 0; r < props[k].indices.size(); ++r) {
          const double p = masks(row + r, 0);
          const double t = gts.count(props[k].indices[r]) ? 1.0 : 0.0;
          bce += -(t * std::log(p) + (1 - t) * std::log(1 - p));
          if (p > 0.5) kept.push_back(props[k].indices[r]);
        }
        mk += bce / static_cast<double>(props[k].indices.size());
        sc += std::abs(ious(k, 0) - naive_iou(kept, gt));
      }
      row += props[k].indices.size();
    }
    cl /= static_cast<double>(props.size());
    REQUIRE(matched > 0);
    mk /= matched;
    sc /= matched;

    CHECK(std::abs(loss.terms.semantic - sem) <= 1e-10);
    CHECK(std::abs(loss.terms.offset - off) <= 1e-10);
    CHECK(std::abs(loss.terms.cls - cl) <= 1e-10);
    CHECK(std::abs(loss.terms.mask - mk) <= 1e-10);
    CHECK(std::abs(loss.terms.mask_score - sc) <= 1e-10);
    CHECK(std::abs(loss.terms.total - (sem + off + cl + mk + sc)) <= 1e-10);
  }
}

TEST_CASE("end-to-end gradient through head and backbone with fixed proposals") {
  std::mt19937_64 rng(30);
  ToyScene scene = toy_scene(rng, 12);
  const auto targets = seg::make_targets(scene.frame);
  HHOIConfig cfg = small_config();
  nn::ParameterStore store;
  backbone::BackboneConfig bcfg;
  bcfg.output_dim = cfg.feature_dim;
  bcfg.levels = {{4, 0.5, 8, {6}}, {16, 1.0, 8, {6}}};
  bcfg.propagation = {{6}, {6}};
  backbone::Backbone net(bcfg, store, rng);
  seg::HHOIHead head(cfg, store, rng);
  // Zero biases on an all-zero input row would put a ReLU exactly on its kink.
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (Parameter* p : store.all())
    for (double& v : p->value.values()) v += jitter(rng);
  const auto plan = net.plan(scene.positions);
  const Matrix input = backbone::point_input_features(scene.frame.cloud);
  const int things[] = {1, 2};
  const std::vector<double> weights = seg::class_weights_from_labels(std::span(&scene.frame, 1), 4);

  seg::TokenSelection tokens;
  std::vector<Proposal> props;
  {
    Tape tape;
    auto out = head.forward(tape, net.forward(tape, tape.constant(input), plan), scene.positions, 1, things);
    tokens = out.tokens;
  }
  for (std::size_t k = 0; k < targets.members.size(); ++k) {
    auto m = targets.members[k];
    m.pop_back();
    props.push_back({targets.instance_class[k], m});
  }
  auto res = gradcheck::check("hhoi_end_to_end", store.all(), [&](Tape& t) {
    auto out = head.forward(t, net.forward(t, t.constant(input), plan), scene.positions, 1, things, &tokens, &props);
    return seg::segmentation_loss(t, out.semantic_offset, out.proposals, out.refine, scene.positions, targets,
                                  weights, cfg).total;
  }, {.max_entries = 4, .seed = 3});
  INFO(res.worst_parameter, " ", res.worst_entry, " ", res.worst_analytic, " ", res.worst_numeric);
  CHECK(res.passed);
  CHECK(res.entries_checked > 50);
}
