#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include <Eigen/Core>

#include "mvcount/geometry.hpp"
#include "mvcount/map2d.hpp"
#include "mvcount/rng.hpp"

namespace mvcount::testing {

// 250 mm cells keep every coordinate below exactly representable in binary.
inline SceneConfig small_scene(int width, int height) {
  return SceneConfig{1750.0, 0.0, 0.0, 250.0, width, height};
}

/// Camera at z = 0 looking up along +z whose image lattice coincides with the ground
/// grid at h_avg: pixel (i, j) sees cell (i, j) exactly.
inline CameraModel identity_camera(const SceneConfig& scene, std::string id = "cam1") {
  CameraModel cam;
  cam.id = std::move(id);
  cam.fx = cam.fy = scene.h_avg / scene.cell_size;
  cam.cx = cam.cy = 0.0;
  cam.R = Eigen::Matrix3d::Identity();
  cam.T = Eigen::Vector3d(-scene.origin_x, -scene.origin_y, 0.0);
  cam.width = scene.grid_width;
  cam.height = scene.grid_height;
  return cam;
}

/// Camera straight above the grid centre looking down; image x follows +x, image y follows -y.
inline CameraModel overhead_camera(const SceneConfig& scene, double height, double focal, int width, int height_px,
                                   std::string id = "top") {
  CameraModel cam;
  cam.id = std::move(id);
  cam.fx = cam.fy = focal;
  cam.cx = 0.5 * (width - 1);
  cam.cy = 0.5 * (height_px - 1);
  cam.R = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
  const Eigen::Vector2d centre = scene.cell_center(0.5 * (scene.grid_width - 1), 0.5 * (scene.grid_height - 1));
  cam.T = -cam.R * Eigen::Vector3d(centre.x(), centre.y(), height);
  cam.width = width;
  cam.height = height_px;
  return cam;
}

// Oblique look_at camera on a random bearing around the grid centre.
inline CameraModel random_oblique_camera(const SceneConfig& scene, CounterRng& rng, std::string id = "cam1",
                                         int width = 64, int height = 48) {
  const Eigen::Vector2d centre = scene.cell_center(0.5 * (scene.grid_width - 1), 0.5 * (scene.grid_height - 1));
  const double extent = scene.cell_size * std::max(scene.grid_width, scene.grid_height);
  const double bearing = rng.uniform(0.0, 2.0 * 3.14159265358979);
  const double radius = extent * rng.uniform(0.8, 1.4);
  const Eigen::Vector3d eye(centre.x() + radius * std::cos(bearing), centre.y() + radius * std::sin(bearing),
                            rng.uniform(4000.0, 8000.0));
  return CameraModel::look_at(std::move(id), eye, Eigen::Vector3d(centre.x(), centre.y(), 0.0),
                              rng.uniform(0.7, 1.1) * width, width, height);
}

inline Map2D random_map(int width, int height, int channels, GridTag tag, CounterRng& rng, double lo = -1.0,
                        double hi = 1.0) {
  Map2D m(width, height, channels, std::move(tag));
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline double dot(const Map2D& a, const Map2D& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

// Fresh, empty scratch directory under the system temp dir. The pid keeps
// concurrently running test processes out of each other's way.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir =
      std::filesystem::temp_directory_path() / ("mvcount_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mvcount::testing
