#include "hcp/point_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace hcp::geom {

namespace {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

double auto_cell_size(std::span<const Vec3> positions) {
  if (positions.empty()) return 1.0;
  Vec3 lo = positions[0];
  Vec3 hi = positions[0];
  for (const Vec3& p : positions) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
  const double cell = extent / std::cbrt(static_cast<double>(positions.size()));
  return cell > 1e-9 ? cell : 1.0;
}

bool closer(const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
  return a.first < b.first || (a.first == b.first && a.second < b.second);
}

}  // namespace

// --- VoxelGrid ---------------------------------------------------------------

VoxelGrid::VoxelGrid(std::span<const Vec3> positions, double cell_size)
    : positions_(positions), cell_(cell_size) {
  if (!(cell_size > 0.0)) throw std::invalid_argument("VoxelGrid: cell size must be positive");
  bool first = true;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Cell c = cell_of(positions[i]);
    cells_[key(c.x, c.y, c.z)].push_back(i);
    if (first) {
      lo_ = hi_ = c;
      first = false;
    } else {
      lo_ = {std::min(lo_.x, c.x), std::min(lo_.y, c.y), std::min(lo_.z, c.z)};
      hi_ = {std::max(hi_.x, c.x), std::max(hi_.y, c.y), std::max(hi_.z, c.z)};
    }
  }
}

VoxelGrid::Cell VoxelGrid::cell_of(const Vec3& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x / cell_)),
          static_cast<std::int64_t>(std::floor(p.y / cell_)),
          static_cast<std::int64_t>(std::floor(p.z / cell_))};
}

std::uint64_t VoxelGrid::key(std::int64_t x, std::int64_t y, std::int64_t z) {
  constexpr std::int64_t kOffset = 1 << 20;
  constexpr std::uint64_t kMask = (1u << 21) - 1;
  return ((static_cast<std::uint64_t>(x + kOffset) & kMask) << 42) |
         ((static_cast<std::uint64_t>(y + kOffset) & kMask) << 21) |
         (static_cast<std::uint64_t>(z + kOffset) & kMask);
}

template <typename Fn>
void VoxelGrid::visit_cell(std::int64_t x, std::int64_t y, std::int64_t z, Fn&& fn) const {
  if (x < lo_.x || x > hi_.x || y < lo_.y || y > hi_.y || z < lo_.z || z > hi_.z) return;
  auto it = cells_.find(key(x, y, z));
  if (it == cells_.end()) return;
  for (std::size_t idx : it->second) fn(idx);
}

void VoxelGrid::radius_search(const Vec3& query, double radius, std::vector<std::size_t>& out) const {
  out.clear();
  if (positions_.empty()) return;
  const double r2 = radius * radius;
  const Cell lo = cell_of({query.x - radius, query.y - radius, query.z - radius});
  const Cell hi = cell_of({query.x + radius, query.y + radius, query.z + radius});
  for (std::int64_t x = std::max(lo.x, lo_.x); x <= std::min(hi.x, hi_.x); ++x) {
    for (std::int64_t y = std::max(lo.y, lo_.y); y <= std::min(hi.y, hi_.y); ++y) {
      for (std::int64_t z = std::max(lo.z, lo_.z); z <= std::min(hi.z, hi_.z); ++z) {
        visit_cell(x, y, z, [&](std::size_t idx) {
          if (squared_distance(positions_[idx], query) <= r2) out.push_back(idx);
        });
      }
    }
  }
}

Neighbors VoxelGrid::nearest(const Vec3& query, std::size_t k) const {
  Neighbors result;
  if (k == 0 || positions_.empty()) return result;
  const Cell q = cell_of(query);
  const std::int64_t max_ring =
      std::max({std::abs(q.x - lo_.x), std::abs(q.x - hi_.x), std::abs(q.y - lo_.y),
                std::abs(q.y - hi_.y), std::abs(q.z - lo_.z), std::abs(q.z - hi_.z)});
  std::vector<std::pair<double, std::size_t>> found;
  auto take = [&](std::size_t idx) { found.emplace_back(distance(positions_[idx], query), idx); };
  for (std::int64_t ring = 0; ring <= max_ring; ++ring) {
    for (std::int64_t x = q.x - ring; x <= q.x + ring; ++x) {
      for (std::int64_t y = q.y - ring; y <= q.y + ring; ++y) {
        const bool x_or_y_edge = std::abs(x - q.x) == ring || std::abs(y - q.y) == ring;
        if (x_or_y_edge) {
          for (std::int64_t z = q.z - ring; z <= q.z + ring; ++z) visit_cell(x, y, z, take);
        } else {
          visit_cell(x, y, q.z - ring, take);
          if (ring > 0) visit_cell(x, y, q.z + ring, take);
        }
      }
    }
    if (found.size() >= k) {
      std::nth_element(found.begin(), found.begin() + static_cast<long>(k - 1), found.end(), closer);
      // Unvisited rings lie at least ring * cell away from the query.
      if (found[k - 1].first < static_cast<double>(ring) * cell_) break;
    }
  }
  std::sort(found.begin(), found.end(), closer);
  if (found.size() > k) found.resize(k);
  for (const auto& [d, i] : found) {
    result.indices.push_back(i);
    result.distances.push_back(d);
  }
  return result;
}

// --- sampling and queries ----------------------------------------------------------

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> positions,
                                               std::size_t target_count, std::size_t seed_index) {
  const std::size_t n = positions.size();
  if (n == 0) throw std::invalid_argument("farthest_point_sample: empty cloud");
  if (target_count == 0) throw std::invalid_argument("farthest_point_sample: target_count must be >= 1");
  if (seed_index >= n) throw std::out_of_range("farthest_point_sample: seed index out of range");
  const std::size_t distinct = std::min(target_count, n);
  std::vector<std::size_t> chosen;
  chosen.reserve(target_count);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::size_t current = seed_index;
  for (std::size_t step = 0; step < distinct; ++step) {
    chosen.push_back(current);
    min_d2[current] = -1.0;
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (min_d2[i] < 0.0) continue;
      min_d2[i] = std::min(min_d2[i], squared_distance(positions[i], positions[current]));
      if (min_d2[i] > best_d) {
        best_d = min_d2[i];
        best = i;
      }
    }
    if (best == n) break;
    current = best;
  }
  for (std::size_t i = 0; chosen.size() < target_count; ++i) chosen.push_back(chosen[i]);
  return chosen;
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t target_count,
                                               std::size_t seed_index) {
  const auto positions = cloud.positions();
  return farthest_point_sample(positions, target_count, seed_index);
}

NeighborList ball_query(std::span<const Vec3> positions, std::span<const std::size_t> centers,
                        double radius, std::size_t max_samples) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball_query: radius must be positive");
  NeighborList out;
  out.reserve(centers.size());
  if (centers.empty()) return out;
  const VoxelGrid grid(positions, radius);
  std::vector<std::size_t> hits;
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t c : centers) {
    if (c >= positions.size()) throw std::out_of_range("ball_query: invalid center index");
    grid.radius_search(positions[c], radius, hits);
    ranked.clear();
    for (std::size_t i : hits) ranked.emplace_back(distance(positions[i], positions[c]), i);
    std::sort(ranked.begin(), ranked.end(), closer);
    if (ranked.size() > max_samples) ranked.resize(max_samples);
    Neighbors nb;
    if (ranked.empty()) {
      nb.indices.push_back(c);
      nb.distances.push_back(0.0);
    }
    for (const auto& [d, i] : ranked) {
      nb.indices.push_back(i);
      nb.distances.push_back(d);
    }
    out.push_back(std::move(nb));
  }
  return out;
}

NeighborList ball_query(const PointCloud& cloud, std::span<const std::size_t> centers,
                        double radius, std::size_t max_samples) {
  const auto positions = cloud.positions();
  return ball_query(positions, centers, radius, max_samples);
}

Neighbors knn(std::span<const Vec3> positions, const Vec3& query, std::size_t k) {
  if (k == 0) throw std::invalid_argument("knn: k must be >= 1");
  const VoxelGrid grid(positions, auto_cell_size(positions));
  return grid.nearest(query, k);
}

Neighbors knn(const PointCloud& cloud, const Vec3& query, std::size_t k) {
  const auto positions = cloud.positions();
  return knn(positions, query, k);
}

bool box_contains(const Box7& box, const Vec3& p, double dh, double dw) {
  const double dx = p.x - box.x;
  const double dy = p.y - box.y;
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  // rotate by -yaw into the box frame
  const double local_x = c * dx + s * dy;
  const double local_y = -s * dx + c * dy;
  const double local_z = p.z - box.z;
  return std::abs(local_x) <= 0.5 * (box.l + dh) && std::abs(local_y) <= 0.5 * (box.w + dw) &&
         std::abs(local_z) <= 0.5 * box.h;
}

std::vector<std::size_t> crop_by_box(const PointCloud& cloud, const Box7& box, double dh, double dw) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (box_contains(box, cloud.position(i), dh, dw)) out.push_back(i);
  }
  return out;
}

NormalizedPoints normalize_instance(std::span<const Vec3> positions, std::span<const double> reflectance) {
  if (positions.empty()) throw std::invalid_argument("normalize_instance: empty point set");
  NormalizedPoints out;
  Vec3 c;
  for (const Vec3& p : positions) c = c + p;
  c = c * (1.0 / static_cast<double>(positions.size()));
  double scale = 0.0;
  for (const Vec3& p : positions) {
    const Vec3 d = p - c;
    scale = std::max({scale, std::abs(d.x), std::abs(d.y), std::abs(d.z)});
  }
  if (!(scale > 1e-12)) scale = 1.0;
  out.transform = {c, scale};
  out.positions.reserve(positions.size());
  for (const Vec3& p : positions) out.positions.push_back(out.transform.apply(p));
  out.reflectance.assign(reflectance.begin(), reflectance.end());
  return out;
}

NormalizedPoints normalize_instance(const PointCloud& points) {
  std::vector<double> refl;
  refl.reserve(points.size());
  for (const Point& p : points.points()) refl.push_back(p.r);
  const auto positions = points.positions();
  return normalize_instance(positions, refl);
}

ClusterAssignment radius_cluster(std::span<const Vec3> positions, double radius,
                                 std::size_t min_points) {
  if (!(radius > 0.0)) throw std::invalid_argument("radius_cluster: radius must be positive");
  const std::size_t n = positions.size();
  ClusterAssignment out;
  out.ids.assign(n, -1);
  if (n == 0) return out;
  DisjointSet sets(n);
  const VoxelGrid grid(positions, radius);
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < n; ++i) {
    grid.radius_search(positions[i], radius, hits);
    for (std::size_t j : hits) {
      if (j > i) sets.unite(i, j);
    }
  }
  std::vector<std::size_t> root_size(n, 0);
  for (std::size_t i = 0; i < n; ++i) ++root_size[sets.find(i)];
  std::vector<int> root_id(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = sets.find(i);
    if (root_size[r] < std::max<std::size_t>(min_points, 1)) continue;
    if (root_id[r] < 0) root_id[r] = out.count++;
    out.ids[i] = root_id[r];
  }
  return out;
}

}  // namespace hcp::geom
