#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "hcp/error.hpp"
#include "hcp/scene_synth.hpp"

using namespace hcp;
using namespace hcp::synth;

namespace {

SynthConfig seeded(const std::string& name, std::uint64_t seed) {
  SynthConfig cfg = *preset(name);
  cfg.seed = seed;
  return cfg;
}

std::size_t person_count(const SceneFrame& f, const SemanticTaxonomy& t) {
  std::size_t n = 0;
  for (const auto& inst : f.instances) n += inst.semantic_class == t.person();
  return n;
}

}  // namespace

TEST_CASE("fixed seed gives identical frames") {
  for (const auto& name : preset_names()) {
    const auto a = generate_scene(seeded(name, 7));
    const auto b = generate_scene(seeded(name, 7));
    CHECK(a.frame == b.frame);
    CHECK(a.manifest == b.manifest);
    const auto c = generate_scene(seeded(name, 8));
    CHECK_FALSE(a.frame == c.frame);
  }
}

TEST_CASE("generated frames pass validation and match their manifests") {
  for (const auto& name : preset_names()) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const SynthConfig cfg = seeded(name, seed);
      const auto scene = generate_scene(cfg);
      const auto tax = cfg.taxonomy();
      const auto issues = validate_frame(scene.frame, tax);
      CHECK_MESSAGE(issues.empty(), name << " seed " << seed << ": " << (issues.empty() ? "" : issues[0]));
      CHECK(semantic_label_histogram(scene.frame, tax) == scene.manifest.class_points);
      std::size_t hist_total = 0;
      for (auto v : scene.manifest.class_points) hist_total += v;
      CHECK(hist_total == scene.frame.cloud.size());
      REQUIRE(scene.manifest.instances.size() == scene.frame.instances.size());
      for (std::size_t i = 0; i < scene.frame.instances.size(); ++i) {
        const auto& inst = scene.frame.instances[i];
        CHECK(inst.indices.size() >= cfg.min_instance_points);
        CHECK(inst.indices.size() == scene.manifest.instances[i].points);
        if (inst.semantic_class == tax.person()) {
          REQUIRE(inst.action.has_value());
          CHECK(cfg.action_mixture[static_cast<std::size_t>(*inst.action)] > 0.0);
        } else {
          // Objects sit within 1 m of the person they were placed with.
          REQUIRE(scene.manifest.instances[i].owner.has_value());
          CHECK(scene.manifest.instances[i].owner_distance <= 1.0);
        }
      }
    }
  }
}

TEST_CASE("person count range is honored") {
  SynthConfig cfg = seeded("segmentation", 3);
  cfg.min_persons = cfg.max_persons = 3;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    CHECK(person_count(generate_scene(cfg).frame, cfg.taxonomy()) == 3);
  }
}

TEST_CASE("point density falls off with range") {
  SynthConfig cfg = seeded("segmentation", 0);
  cfg.min_persons = cfg.max_persons = 1;
  cfg.objects.clear();
  cfg.action_mixture.assign(ActionTaxonomy::kCount, 0.0);
  cfg.action_mixture[static_cast<std::size_t>(ActionTaxonomy().index_of("Standing"))] = 1.0;
  double near_sum = 0.0, far_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    cfg.seed = seed;
    cfg.min_range = cfg.extent = 5.0;
    near_sum += static_cast<double>(generate_scene(cfg).frame.instances.at(0).indices.size());
    cfg.min_range = cfg.extent = 20.0;
    far_sum += static_cast<double>(generate_scene(cfg).frame.instances.at(0).indices.size());
  }
  CHECK(far_sum / 50.0 < near_sum / 50.0);
}

TEST_CASE("sector dropout removes points") {
  SynthConfig cfg = seeded("segmentation", 0);
  cfg.min_persons = cfg.max_persons = 1;
  cfg.objects.clear();
  std::size_t kept = 0, full = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    cfg.dropout = 0.0;
    full += generate_scene(cfg).frame.instances.at(0).indices.size();
    cfg.dropout = 1.0;
    kept += generate_scene(cfg).frame.instances.at(0).indices.size();
  }
  CHECK(kept < full);
}

TEST_CASE("action families differ in crop aspect ratio") {
  const ActionTaxonomy actions;
  std::map<int, std::pair<double, int>> ratio;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto scene = generate_scene(seeded("separable-actions", seed));
    for (const auto& inst : scene.frame.instances) {
      if (!inst.action) continue;
      auto& r = ratio[*inst.action];
      r.first += inst.box.h / std::max(inst.box.w, inst.box.l);
      r.second += 1;
    }
  }
  auto mean = [&](const char* n) {
    const auto& r = ratio.at(actions.index_of(n));
    return r.first / r.second;
  };
  CHECK(mean("Sit") < mean("Standing"));
  CHECK(mean("Bend-Over") < mean("Standing"));
  CHECK(ratio.size() == 4);
}

TEST_CASE("context frames pair Hum-Inter persons and isolate the rest") {
  const ActionTaxonomy actions;
  const int inter = actions.index_of("Hum-Inter");
  int pair_frames = 0, solo_frames = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const SynthConfig cfg = seeded("context-actions", seed);
    const auto scene = generate_scene(cfg);
    std::vector<const InstanceAnnotation*> persons;
    for (const auto& inst : scene.frame.instances) persons.push_back(&inst);
    (scene.manifest.interaction_frame ? pair_frames : solo_frames)++;
    for (const auto* p : persons) {
      double nearest = 1e9;
      for (const auto* q : persons) {
        if (p != q) nearest = std::min(nearest, std::hypot(p->box.x - q->box.x, p->box.y - q->box.y));
      }
      if (*p->action == inter) {
        CHECK(scene.manifest.interaction_frame);
        CHECK(nearest < 1.6);
      } else {
        CHECK(nearest > 2.0);
      }
    }
  }
  CHECK(pair_frames > 0);
  CHECK(solo_frames > 0);
}

TEST_CASE("split sizes, seeds and manifest totals") {
  const SynthConfig cfg = seeded("segmentation", 5);
  const Split split = generate_split(cfg, 10);
  CHECK(split.train.size() == 8);
  CHECK(split.test.size() == 2);
  std::set<std::uint64_t> seeds;
  for (const auto* part : {&split.train, &split.test}) {
    for (const auto& s : *part) seeds.insert(s.manifest.seed);
  }
  CHECK(seeds.size() == 10);

  std::vector<std::size_t> from_manifests(cfg.taxonomy().size(), 0), from_frames(cfg.taxonomy().size(), 0);
  for (const auto* part : {&split.train, &split.test}) {
    for (const auto& s : *part) {
      for (std::size_t c = 0; c < from_manifests.size(); ++c) from_manifests[c] += s.manifest.class_instances[c];
      for (const auto& inst : s.frame.instances) ++from_frames[static_cast<std::size_t>(inst.semantic_class)];
    }
  }
  CHECK(from_manifests == from_frames);

  CHECK_THROWS_AS(require_disjoint_seeds({1, 2, 3}, {4, 3}), ConfigError);
  CHECK_NOTHROW(require_disjoint_seeds({1, 2}, {3}));
  CHECK_THROWS_AS(generate_split(cfg, 1), ConfigError);
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  cfg.objects = {{"box", 0.7}, {"cart", 0.5}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.extent = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.objects = {{"chair", 0.1}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.things = {"box"};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_FALSE(preset("unknown").has_value());
}

TEST_CASE("segmentation preset point budget") {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    total += static_cast<double>(generate_scene(seeded("segmentation", seed)).frame.cloud.size());
  }
  MESSAGE("mean points per segmentation frame: " << total / 20.0);
  CHECK(total / 20.0 > 1000.0);
  CHECK(total / 20.0 < 3500.0);
}
