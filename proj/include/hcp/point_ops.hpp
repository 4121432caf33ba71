#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hcp/core.hpp"

namespace hcp::geom {

// Neighbors of one query, sorted by (distance, index).
struct Neighbors {
  std::vector<std::size_t> indices;
  std::vector<double> distances;  // meters
};

using NeighborList = std::vector<Neighbors>;

struct ClusterAssignment {
  std::vector<int> ids;  // -1 = noise
  int count = 0;
};

// Uniform hash grid over a fixed position set.
class VoxelGrid {
 public:
  VoxelGrid(std::span<const Vec3> positions, double cell_size);

  double cell_size() const { return cell_; }
  // Indices with distance <= radius (closed ball), in no particular order.
  void radius_search(const Vec3& query, double radius, std::vector<std::size_t>& out) const;
  // k nearest, ties broken by lower index.
  Neighbors nearest(const Vec3& query, std::size_t k) const;

 private:
  struct Cell {
    std::int64_t x, y, z;
  };
  Cell cell_of(const Vec3& p) const;
  static std::uint64_t key(std::int64_t x, std::int64_t y, std::int64_t z);
  template <typename Fn>
  void visit_cell(std::int64_t x, std::int64_t y, std::int64_t z, Fn&& fn) const;

  std::span<const Vec3> positions_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
  Cell lo_{0, 0, 0};
  Cell hi_{0, 0, 0};
};

// First index is seed_index; every next index maximizes the minimum distance to
// the chosen set (ties to the lower index). When target_count exceeds N the
// full ordering repeats cyclically.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> positions,
                                               std::size_t target_count, std::size_t seed_index);
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t target_count,
                                               std::size_t seed_index);

// Up to max_samples neighbors within radius of each center, nearest first.
NeighborList ball_query(std::span<const Vec3> positions, std::span<const std::size_t> centers,
                        double radius, std::size_t max_samples);
NeighborList ball_query(const PointCloud& cloud, std::span<const std::size_t> centers,
                        double radius, std::size_t max_samples);

Neighbors knn(std::span<const Vec3> positions, const Vec3& query, std::size_t k);
Neighbors knn(const PointCloud& cloud, const Vec3& query, std::size_t k);

// Closed containment test against a box whose length grows by dh and width by dw.
bool box_contains(const Box7& box, const Vec3& p, double dh = 0.0, double dw = 0.0);
std::vector<std::size_t> crop_by_box(const PointCloud& cloud, const Box7& box, double dh, double dw);

struct Normalization {
  Vec3 centroid;
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - centroid) * (1.0 / scale); }
  Vec3 invert(const Vec3& p) const { return p * scale + centroid; }
};

struct NormalizedPoints {
  std::vector<Vec3> positions;
  std::vector<double> reflectance;
  Normalization transform;
};

// Centroid to origin, then divide by the largest absolute coordinate.
NormalizedPoints normalize_instance(const PointCloud& points);
NormalizedPoints normalize_instance(std::span<const Vec3> positions, std::span<const double> reflectance);

// Connected components under "distance <= radius"; components smaller than
// min_points become noise. Ids are numbered by each cluster's lowest index.
ClusterAssignment radius_cluster(std::span<const Vec3> positions, double radius,
                                 std::size_t min_points);

}  // namespace hcp::geom
