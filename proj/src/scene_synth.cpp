#include "hcp/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>

#include "hcp/error.hpp"

namespace hcp::synth {

namespace {

constexpr double kPi = std::numbers::pi;

// Rotation about the local y axis; positive pitch leans +z toward +x.
Vec3 pitch_rotate(const Vec3& v, double pitch) {
  const double c = std::cos(pitch), s = std::sin(pitch);
  return {v.x * c + v.z * s, v.y, -v.x * s + v.z * c};
}

Vec3 yaw_rotate(const Vec3& v, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {v.x * c - v.y * s, v.x * s + v.y * c, v.z};
}

double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

// Surface primitives in an entity's local frame (x forward, y left, z up).
struct Ellipsoid {
  Vec3 center;
  Vec3 radii;
  double pitch = 0.0;
};

struct Cuboid {
  Vec3 center;
  Vec3 size;  // along x, y, z
};

struct Surface {
  Vec3 point;
  Vec3 normal;
};

double ellipsoid_area(const Vec3& r) {
  // Knud Thomsen approximation.
  const double p = 1.6075;
  const double ab = std::pow(r.x * r.y, p), ac = std::pow(r.x * r.z, p), bc = std::pow(r.y * r.z, p);
  return 4.0 * kPi * std::pow((ab + ac + bc) / 3.0, 1.0 / p);
}

double cuboid_area(const Vec3& s) { return 2.0 * (s.x * s.y + s.x * s.z + s.y * s.z); }

Surface sample_ellipsoid(const Ellipsoid& e, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 u;
  double len = 0.0;
  while (len < 1e-9) {
    u = {n(rng), n(rng), n(rng)};
    len = std::sqrt(dot(u, u));
  }
  u = u * (1.0 / len);
  const Vec3 local{u.x * e.radii.x, u.y * e.radii.y, u.z * e.radii.z};
  const Vec3 normal{u.x / e.radii.x, u.y / e.radii.y, u.z / e.radii.z};
  return {e.center + pitch_rotate(local, e.pitch), pitch_rotate(normal, e.pitch)};
}

Surface sample_cuboid(const Cuboid& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const double axy = c.size.x * c.size.y, axz = c.size.x * c.size.z, ayz = c.size.y * c.size.z;
  std::uniform_real_distribution<double> pick(0.0, axy + axz + ayz);
  const double f = pick(rng);
  const double side = rng() % 2 == 0 ? 0.5 : -0.5;
  Vec3 p{u(rng) * c.size.x, u(rng) * c.size.y, u(rng) * c.size.z};
  Vec3 normal;
  if (f < axy) {
    p.z = side * c.size.z;
    normal = {0, 0, side};
  } else if (f < axy + axz) {
    p.y = side * c.size.y;
    normal = {0, side, 0};
  } else {
    p.x = side * c.size.x;
    normal = {side, 0, 0};
  }
  return {c.center + p, normal};
}

struct Shape {
  std::vector<Ellipsoid> ellipsoids;
  std::vector<Cuboid> cuboids;

  double area() const {
    double a = 0.0;
    for (const auto& e : ellipsoids) a += ellipsoid_area(e.radii);
    for (const auto& c : cuboids) a += cuboid_area(c.size);
    return a;
  }
};

// Person body per action: legs, torso, head, then optional limb clusters.
struct Pose {
  std::string name;
  Shape shape;
};

Pose standing_pose() {
  return {"standing",
          {{{{0, 0, 0.45}, {0.12, 0.19, 0.45}},
            {{0, 0, 1.2}, {0.12, 0.2, 0.3}},
            {{0, 0, 1.62}, {0.1, 0.09, 0.12}}},
           {}}};
}

Pose lift_shift(Pose p, double dz) {
  for (auto& e : p.shape.ellipsoids) e.center.z += dz;
  return p;
}

Pose pose_for(const std::string& action) {
  Pose p = standing_pose();
  auto& e = p.shape.ellipsoids;
  if (action == "Lift") {
    p.name = "crouch";
    e[0] = {{0, 0, 0.3}, {0.2, 0.19, 0.3}};
    e[1] = {{0.15, 0, 0.78}, {0.12, 0.2, 0.3}, 0.8};
    e[2] = {{0.38, 0, 1.05}, {0.1, 0.09, 0.12}};
    e.push_back({{0.4, 0, 0.45}, {0.06, 0.2, 0.18}});
  } else if (action == "Carry") {
    p.name = "carry";
    e.push_back({{0.25, 0, 1.05}, {0.12, 0.2, 0.06}});
  } else if (action == "Move") {
    p.name = "walk";
    e[0] = {{0, 0, 0.45}, {0.28, 0.16, 0.45}};
    e[1].pitch = 0.15;
    e[2].center.x = 0.08;
    e.push_back({{0, 0, 1.05}, {0.22, 0.26, 0.1}});
  } else if (action == "Pull_Push") {
    p.name = "push";
    e[0] = {{-0.1, 0, 0.45}, {0.25, 0.18, 0.45}};
    e[1] = {{0.05, 0, 1.15}, {0.12, 0.2, 0.3}, 0.35};
    e[2].center = {0.2, 0, 1.53};
    e.push_back({{0.38, 0, 1.05}, {0.25, 0.2, 0.05}});
  } else if (action == "Sit") {
    p.name = "sit";
    e[0] = {{0.18, 0, 0.42}, {0.28, 0.19, 0.12}};
    e[1] = {{0, 0, 0.82}, {0.12, 0.2, 0.3}, -0.1};
    e[2].center = {-0.02, 0, 1.24};
    e.push_back({{0.42, 0, 0.2}, {0.07, 0.15, 0.2}});
  } else if (action == "Scooter-BalanceBike") {
    p = lift_shift(p, 0.12);
    p.name = "ride";
  } else if (action == "Hum-Inter") {
    p.name = "reach";
    e.push_back({{0.35, -0.12, 1.25}, {0.28, 0.06, 0.06}});
  } else if (action == "Fitness") {
    p.name = "arms-up";
    e.push_back({{0, 0, 1.95}, {0.07, 0.25, 0.25}});
  } else if (action == "Entertain") {
    p.name = "phone";
    e[2] = {{0.05, 0, 1.6}, {0.1, 0.09, 0.12}, 0.4};
    e.push_back({{0.2, 0, 1.3}, {0.1, 0.16, 0.07}});
  } else if (action == "Sports") {
    p.name = "jump";
    e[0].pitch = 0.3;
    e.push_back({{0, 0, 1.4}, {0.07, 0.6, 0.07}});
    p = lift_shift(p, 0.35);
  } else if (action == "Bend-Over") {
    p.name = "bend";
    e[1] = {{0.22, 0, 1.05}, {0.12, 0.2, 0.3}, 1.2};
    e[2].center = {0.5, 0, 1.0};
    e.push_back({{0.4, 0, 0.7}, {0.06, 0.2, 0.2}});
  }
  return p;
}

Shape object_shape(const std::string& name, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  Shape s;
  if (name == "box") {
    const double size = 0.42 * jitter(rng);
    s.cuboids.push_back({{0, 0, size * 0.5}, {size, size * jitter(rng), size * 0.9}});
  } else if (name == "cart") {
    s.cuboids.push_back({{0, 0, 0.62}, {0.8, 0.5, 0.35}});
    s.cuboids.push_back({{0, 0, 0.12}, {0.8, 0.5, 0.04}});
    s.cuboids.push_back({{-0.42, 0, 1.0}, {0.05, 0.5, 0.05}});
  } else if (name == "scooter") {
    s.cuboids.push_back({{0, 0, 0.08}, {0.7, 0.15, 0.05}});
    s.cuboids.push_back({{0.33, 0, 0.55}, {0.04, 0.04, 0.9}});
    s.cuboids.push_back({{0.33, 0, 1.0}, {0.04, 0.4, 0.04}});
  } else {
    const double size = 0.6 * jitter(rng);
    s.cuboids.push_back({{0, 0, size * 0.5}, {size, size, size}});
  }
  return s;
}

double object_radius(const Shape& s) {
  double r = 0.0;
  for (const auto& c : s.cuboids) {
    r = std::max(r, std::hypot(c.center.x, c.center.y) + 0.5 * std::hypot(c.size.x, c.size.y));
  }
  return r;
}

struct Reflectance {
  double mean;
  double spread;
};

Reflectance reflectance_of(const std::string& name) {
  if (name == "person") return {0.35, 0.08};
  if (name == "box") return {0.6, 0.08};
  if (name == "cart") return {0.8, 0.06};
  if (name == "ground") return {0.15, 0.05};
  return {0.55, 0.08};
}

// An entity placed in the scene: a shape posed at (x, y) with heading yaw.
struct Entity {
  std::string class_name;
  Shape shape;
  Vec3 origin;
  double yaw = 0.0;
  std::optional<int> action;
  std::string pose;
};

struct Group {
  std::vector<Entity> entities;
  Vec3 center;
  double radius = 0.0;
};

std::size_t stochastic_round(double x, std::mt19937_64& rng) {
  const double fl = std::floor(x);
  const double frac = x - fl;
  return static_cast<std::size_t>(fl) + (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < frac ? 1 : 0);
}

// Draws visible surface points until the 1/range^2 point budget is met.
std::vector<Vec3> sample_entity(const Entity& ent, const SynthConfig& cfg, std::mt19937_64& rng) {
  const double range = std::max(0.5, std::hypot(ent.origin.x, ent.origin.y));
  const double falloff = (cfg.reference_range / range) * (cfg.reference_range / range);
  // About half of a closed surface faces the sensor.
  const double expected = 0.5 * ent.shape.area() * cfg.density * falloff;
  const std::size_t target = std::max(cfg.min_instance_points, stochastic_round(expected, rng));
  std::vector<double> weights;
  for (const auto& e : ent.shape.ellipsoids) weights.push_back(ellipsoid_area(e.radii));
  for (const auto& c : ent.shape.cuboids) weights.push_back(cuboid_area(c.size));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> noise(0.0, 0.01);
  const Vec3 sensor{0.0, 0.0, cfg.sensor_height};
  std::vector<Vec3> out;
  out.reserve(target);
  const std::size_t ne = ent.shape.ellipsoids.size();
  for (std::size_t attempt = 0; out.size() < target && attempt < 200 * target; ++attempt) {
    const std::size_t k = pick(rng);
    const Surface s = k < ne ? sample_ellipsoid(ent.shape.ellipsoids[k], rng)
                             : sample_cuboid(ent.shape.cuboids[k - ne], rng);
    const Vec3 world = ent.origin + yaw_rotate(s.point, ent.yaw);
    const Vec3 normal = yaw_rotate(s.normal, ent.yaw);
    if (dot(normal, sensor - world) <= 0.0) continue;
    out.push_back(world + Vec3{noise(rng), noise(rng), noise(rng)});
  }
  return out;
}

void apply_dropout(std::vector<Vec3>& pts, const Vec3& center, const SynthConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) >= cfg.dropout) return;
  const double start = -kPi + 2.0 * kPi * u(rng);
  std::vector<Vec3> kept;
  for (const Vec3& p : pts) {
    double rel = std::atan2(p.y - center.y, p.x - center.x) - start;
    rel = std::fmod(rel + 4.0 * kPi, 2.0 * kPi);
    if (rel >= cfg.dropout_sector) kept.push_back(p);
  }
  if (kept.size() >= cfg.min_instance_points) pts = std::move(kept);
}

// Tight box in the entity heading frame.
Box7 fit_box(const std::vector<Vec3>& pts, const Vec3& origin, double yaw) {
  Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
  for (const Vec3& p : pts) {
    const Vec3 local = yaw_rotate(p - origin, -yaw);
    lo = {std::min(lo.x, local.x), std::min(lo.y, local.y), std::min(lo.z, local.z)};
    hi = {std::max(hi.x, local.x), std::max(hi.y, local.y), std::max(hi.z, local.z)};
  }
  const Vec3 mid_local{0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), 0.5 * (lo.z + hi.z)};
  const Vec3 mid = origin + yaw_rotate(mid_local, yaw);
  Box7 box;
  box.x = mid.x;
  box.y = mid.y;
  box.z = mid.z;
  box.l = std::max(0.05, hi.x - lo.x);
  box.w = std::max(0.05, hi.y - lo.y);
  box.h = std::max(0.05, hi.z - lo.z);
  box.yaw = normalize_yaw(yaw);
  return box;
}

bool has_thing(const SynthConfig& cfg, const std::string& name) {
  return std::find(cfg.things.begin(), cfg.things.end(), name) != cfg.things.end();
}

// Person plus the object its action implies or a randomly spawned one.
Group make_person_group(const SynthConfig& cfg, int action, const std::string& pose_action, std::mt19937_64& rng) {
  const ActionTaxonomy actions;
  const std::string name = actions.name(action);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double scale = std::uniform_real_distribution<double>(0.92, 1.06)(rng);
  Pose pose = pose_for(pose_action);
  for (auto& e : pose.shape.ellipsoids) {
    e.center = e.center * scale;
    e.radii = e.radii * scale;
  }
  Group g;
  g.entities.push_back({"person", pose.shape, {}, 0.0, action, pose.name});
  g.radius = 0.5;

  std::optional<std::string> obj;
  Vec3 offset;
  if (name == "Lift" && has_thing(cfg, "box")) {
    obj = "box";
    offset = {0.65, 0, 0};
  } else if (name == "Carry" && has_thing(cfg, "box")) {
    obj = "box";
    offset = {0.45, 0, 0.85};
  } else if (name == "Pull_Push" && has_thing(cfg, "cart")) {
    obj = "cart";
    offset = {0.95, 0, 0};
  } else if (name == "Scooter-BalanceBike" && has_thing(cfg, "scooter")) {
    obj = "scooter";
    offset = {0.0, 0, 0};
  } else {
    double draw = u(rng), acc = 0.0;
    for (const ObjectSpawn& s : cfg.objects) {
      acc += s.probability;
      if (draw < acc) {
        obj = s.name;
        const double angle = 2.0 * kPi * u(rng);
        const double dist = 0.75 + 0.2 * u(rng);
        offset = {dist * std::cos(angle), dist * std::sin(angle), 0};
        break;
      }
    }
  }
  if (obj) {
    Shape shape = object_shape(*obj, rng);
    if (*obj == "box" && offset.z > 0) {
      // Carried box is smaller and held at chest height.
      for (auto& c : shape.cuboids) {
        c.size = c.size * 0.7;
        c.center = c.center * 0.7;
      }
    }
    g.entities.push_back({*obj, shape, offset, 0.0, std::nullopt, ""});
    g.radius = std::max(g.radius, std::hypot(offset.x, offset.y) + object_radius(shape));
  }
  return g;
}

void pose_group(Group& g, const Vec3& center, double yaw) {
  g.center = center;
  for (Entity& e : g.entities) {
    const Vec3 local = e.origin;
    e.origin = center + yaw_rotate(local, yaw);
    e.yaw = e.yaw + yaw;
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (std::find(things.begin(), things.end(), "person") == things.end()) {
    throw ConfigError("synth: things must include person");
  }
  if (std::set<std::string>(things.begin(), things.end()).size() != things.size()) {
    throw ConfigError("synth: duplicate thing class");
  }
  if (min_persons > max_persons) throw ConfigError("synth: min_persons > max_persons");
  double total = 0.0;
  for (const ObjectSpawn& s : objects) {
    if (!(s.probability >= 0.0 && s.probability <= 1.0)) throw ConfigError("synth: spawn probability outside [0,1]");
    if (s.name == "person" || !has_thing(*this, s.name)) {
      throw ConfigError("synth: spawn class '" + s.name + "' is not a non-person thing class");
    }
    total += s.probability;
  }
  if (total > 1.0 + 1e-12) throw ConfigError("synth: spawn probabilities sum above 1");
  if (action_mixture.size() != ActionTaxonomy::kCount) throw ConfigError("synth: action_mixture needs 12 weights");
  double wsum = 0.0;
  for (double w : action_mixture) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("synth: action weights must be finite and >= 0");
    wsum += w;
  }
  if (!(wsum > 0.0)) throw ConfigError("synth: action_mixture sums to zero");
  if (pair_frame_probability > 0.0) {
    const auto inter = static_cast<std::size_t>(ActionTaxonomy().index_of("Hum-Inter"));
    if (!(action_mixture[inter] > 0.0) || !(wsum - action_mixture[inter] > 0.0)) {
      throw ConfigError("synth: interaction frames need Hum-Inter and at least one other action in the mixture");
    }
  }
  if (!(extent > 0.0) || !(min_range > 0.0) || min_range > extent) {
    throw ConfigError("synth: need 0 < min_range <= extent");
  }
  if (!(density > 0.0) || !(reference_range > 0.0) || !(ground_density >= 0.0)) {
    throw ConfigError("synth: densities must be positive");
  }
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConfigError("synth: dropout outside [0,1]");
  if (!(dropout_sector > 0.0 && dropout_sector < 2.0 * kPi)) throw ConfigError("synth: dropout_sector outside (0, 2pi)");
  if (!(pair_frame_probability >= 0.0 && pair_frame_probability <= 1.0)) {
    throw ConfigError("synth: pair_frame_probability outside [0,1]");
  }
  if (!(pair_distance > 0.0) || !(min_separation >= 0.0)) throw ConfigError("synth: distances must be positive");
  if (min_instance_points == 0) throw ConfigError("synth: min_instance_points must be >= 1");
}

SemanticTaxonomy SynthConfig::taxonomy() const { return SemanticTaxonomy::with_things(things); }

std::optional<SynthConfig> preset(const std::string& name) {
  SynthConfig cfg;
  const ActionTaxonomy actions;
  auto only = [&](std::initializer_list<const char*> names) {
    std::vector<double> w(ActionTaxonomy::kCount, 0.0);
    for (const char* n : names) w[static_cast<std::size_t>(actions.index_of(n))] = 1.0;
    return w;
  };
  if (name == "segmentation") return cfg;
  if (name == "separable-actions") {
    cfg.things = {"person"};
    cfg.objects.clear();
    cfg.action_mixture = only({"Standing", "Sit", "Bend-Over", "Sports"});
    cfg.min_persons = 3;
    cfg.max_persons = 4;
    cfg.min_range = 3.0;
    cfg.extent = 8.0;
    cfg.ground_density = 1.0;
    return cfg;
  }
  if (name == "context-actions") {
    cfg.things = {"person"};
    cfg.objects.clear();
    cfg.action_mixture = only({"Standing", "Hum-Inter"});
    cfg.min_persons = 4;
    cfg.max_persons = 4;
    cfg.min_range = 3.0;
    cfg.extent = 9.0;
    cfg.ground_density = 1.0;
    cfg.min_separation = 2.5;
    cfg.pair_frame_probability = 0.5;
    return cfg;
  }
  return std::nullopt;
}

std::vector<std::string> preset_names() { return {"segmentation", "separable-actions", "context-actions"}; }

GeneratedScene generate_scene(const SynthConfig& cfg, const std::string& frame_id) {
  cfg.validate();
  const SemanticTaxonomy taxonomy = cfg.taxonomy();
  const ActionTaxonomy actions;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  GeneratedScene out;
  out.manifest.seed = cfg.seed;
  out.manifest.frame_id = frame_id.empty() ? "frame_" + std::to_string(cfg.seed) : frame_id;
  out.frame.frame_id = out.manifest.frame_id;

  const std::size_t persons =
      std::uniform_int_distribution<std::size_t>(cfg.min_persons, cfg.max_persons)(rng);
  const bool pairs = persons >= 2 && u(rng) < cfg.pair_frame_probability;
  out.manifest.interaction_frame = pairs;

  std::vector<Group> groups;
  if (pairs) {
    const int inter = actions.index_of("Hum-Inter");
    for (std::size_t p = 0; p < persons / 2; ++p) {
      Group a = make_person_group(cfg, inter, "Standing", rng);
      Group b = make_person_group(cfg, inter, "Hum-Inter", rng);
      // a faces +x; b stands pair_distance ahead and faces back.
      Group pair;
      pair.entities = a.entities;
      for (Entity e : b.entities) {
        e.origin = Vec3{cfg.pair_distance, 0, 0} + yaw_rotate(e.origin, kPi);
        e.yaw += kPi;
        pair.entities.push_back(e);
      }
      for (Entity& e : pair.entities) e.origin = e.origin - Vec3{0.5 * cfg.pair_distance, 0, 0};
      pair.radius = 0.5 * cfg.pair_distance + std::max(a.radius, b.radius);
      groups.push_back(std::move(pair));
    }
    if (persons % 2 == 1) {
      const int standing = actions.index_of("Standing");
      groups.push_back(make_person_group(cfg, standing, "Standing", rng));
    }
  } else {
    std::vector<double> weights = cfg.action_mixture;
    // Hum-Inter implies a partner, so it is reserved for interaction frames.
    if (cfg.pair_frame_probability > 0.0) weights[static_cast<std::size_t>(actions.index_of("Hum-Inter"))] = 0.0;
    std::discrete_distribution<int> draw(weights.begin(), weights.end());
    for (std::size_t p = 0; p < persons; ++p) {
      const int action = draw(rng);
      groups.push_back(make_person_group(cfg, action, actions.name(action), rng));
    }
  }

  // Place groups without overlap.
  std::vector<Group> placed;
  for (Group& g : groups) {
    for (int attempt = 0; attempt < 500; ++attempt) {
      const double r = cfg.min_range + (cfg.extent - cfg.min_range) * u(rng);
      const double theta = 2.0 * kPi * u(rng);
      const Vec3 c{r * std::cos(theta), r * std::sin(theta), 0.0};
      bool ok = true;
      for (const Group& q : placed) {
        const double gap = std::hypot(c.x - q.center.x, c.y - q.center.y);
        if (gap < std::max(cfg.min_separation, g.radius + q.radius + 0.2)) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      pose_group(g, c, 2.0 * kPi * u(rng) - kPi);
      placed.push_back(std::move(g));
      break;
    }
  }

  std::vector<Point> points;
  std::vector<int> labels;
  auto push = [&](const Vec3& p, int label, const Reflectance& refl) {
    std::normal_distribution<double> rn(refl.mean, refl.spread);
    const double r = std::clamp(rn(rng), 0.0, 1.0);
    points.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z), static_cast<float>(r)});
    labels.push_back(label);
  };

  int next_id = 0;
  for (const Group& g : placed) {
    int owner = -1;
    Vec3 owner_origin;
    for (const Entity& e : g.entities) {
      std::vector<Vec3> pts = sample_entity(e, cfg, rng);
      apply_dropout(pts, e.origin, cfg, rng);
      const int cls = taxonomy.index_of(e.class_name);
      InstanceAnnotation inst;
      inst.id = next_id++;
      inst.semantic_class = cls;
      inst.action = e.action;
      inst.track_id = inst.id;
      inst.box = fit_box(pts, e.origin, e.yaw);
      const Reflectance refl = reflectance_of(e.class_name);
      for (const Vec3& p : pts) {
        inst.indices.push_back(points.size());
        push(p, cls, refl);
      }
      InstanceManifest m;
      m.id = inst.id;
      m.semantic_class = cls;
      m.action = e.action;
      m.pose = e.pose;
      m.points = pts.size();
      m.range = std::hypot(e.origin.x, e.origin.y);
      if (e.class_name == "person") {
        owner = m.id;
        owner_origin = e.origin;
      } else if (owner >= 0) {
        m.owner = owner;
        m.owner_distance = std::hypot(e.origin.x - owner_origin.x, e.origin.y - owner_origin.y);
      }
      out.manifest.instances.push_back(m);
      out.frame.instances.push_back(std::move(inst));
    }
  }

  // Ground: area density falls with 1/r^2, so radius is log-uniform.
  const double r_lo = 1.0, r_hi = cfg.extent + 2.0;
  const std::size_t ground_count = stochastic_round(
      cfg.ground_density * 2.0 * kPi * cfg.reference_range * cfg.reference_range * std::log(r_hi / r_lo), rng);
  const int ground = taxonomy.index_of("ground");
  std::normal_distribution<double> zn(0.0, 0.01);
  for (std::size_t i = 0; i < ground_count; ++i) {
    const double r = r_lo * std::exp(std::log(r_hi / r_lo) * u(rng));
    const double theta = 2.0 * kPi * u(rng);
    push({r * std::cos(theta), r * std::sin(theta), zn(rng)}, ground, reflectance_of("ground"));
  }

  out.frame.cloud = PointCloud(std::move(points));
  out.frame.labels = std::move(labels);
  out.manifest.class_points.assign(taxonomy.size(), 0);
  out.manifest.class_instances.assign(taxonomy.size(), 0);
  for (int l : out.frame.labels) ++out.manifest.class_points[static_cast<std::size_t>(l)];
  for (const auto& inst : out.frame.instances) ++out.manifest.class_instances[static_cast<std::size_t>(inst.semantic_class)];
  return out;
}

std::vector<std::uint64_t> frame_seeds(std::uint64_t base_seed, std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) {
    // splitmix64 of base + i
    std::uint64_t z = base_seed + 0x9E3779B97F4A7C15ULL * (i + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    seeds[i] = z ^ (z >> 31);
  }
  return seeds;
}

void require_disjoint_seeds(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  const std::set<std::uint64_t> sa(a.begin(), a.end());
  for (std::uint64_t s : b) {
    if (sa.count(s)) throw ConfigError("synth: seed " + std::to_string(s) + " appears in both splits");
  }
}

Split generate_split(const SynthConfig& cfg, std::size_t frame_count) {
  if (frame_count < 2) throw ConfigError("synth: a split needs at least 2 frames");
  cfg.validate();
  const std::vector<std::uint64_t> seeds = frame_seeds(cfg.seed, frame_count);
  const std::size_t test_count =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(frame_count))));
  const std::size_t train_count = frame_count - test_count;
  const std::vector<std::uint64_t> train_seeds(seeds.begin(), seeds.begin() + static_cast<long>(train_count));
  const std::vector<std::uint64_t> test_seeds(seeds.begin() + static_cast<long>(train_count), seeds.end());
  require_disjoint_seeds(train_seeds, test_seeds);
  Split split;
  for (std::size_t i = 0; i < frame_count; ++i) {
    SynthConfig frame_cfg = cfg;
    frame_cfg.seed = seeds[i];
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%04zu", i < train_count ? "train" : "test", i < train_count ? i : i - train_count);
    auto scene = generate_scene(frame_cfg, id);
    (i < train_count ? split.train : split.test).push_back(std::move(scene));
  }
  return split;
}

}  // namespace hcp::synth
