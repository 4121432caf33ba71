#pragma once

#include <random>
#include <vector>

#include "hcp/core.hpp"
#include "hcp/tensor.hpp"

namespace hcp::testing {

inline tensor::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                    double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  tensor::Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

inline tensor::Parameter make_param(const std::string& name, tensor::Matrix value) {
  tensor::Parameter p;
  p.name = name;
  p.grad = tensor::Matrix(value.rows(), value.cols());
  p.value = std::move(value);
  return p;
}

inline std::vector<Vec3> random_positions(std::size_t n, std::mt19937_64& rng, double extent = 1.0) {
  std::uniform_real_distribution<double> dist(-extent, extent);
  std::vector<Vec3> out(n);
  for (Vec3& p : out) p = {dist(rng), dist(rng), dist(rng)};
  return out;
}

inline PointCloud cloud_from(const std::vector<Vec3>& positions, float reflectance = 0.5f) {
  std::vector<Point> pts;
  for (const Vec3& p : positions) {
    pts.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z), reflectance});
  }
  return PointCloud(std::move(pts));
}

}  // namespace hcp::testing
