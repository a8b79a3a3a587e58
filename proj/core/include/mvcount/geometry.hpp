#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mvcount/map2d.hpp"

namespace mvcount {

/// Rectified pinhole camera. Extrinsics map world to camera: X_cam = R * X_world + T (mm).
///
/// Pixel coordinates have their origin at the top-left, x to the right, y downward,
/// and integer values at pixel centres; the image covers [-0.5, w-0.5] x [-0.5, h-0.5].
struct CameraModel {
  std::string id;
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d T = Eigen::Vector3d::Zero();
  int width = 1;
  int height = 1;

  // Throws if R is not a rotation, focal lengths are non-positive, or the size is empty.
  void validate() const;

  // Camera centre O = -R^T T in world coordinates.
  Eigen::Vector3d center() const { return -R.transpose() * T; }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return R * world + T; }

  // Pinhole projection; nullopt when the point is not strictly in front of the camera.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& world) const;
  bool contains_pixel(const Eigen::Vector2d& pixel) const;

  // Camera at `eye` looking at `target` with world +z as up; image centred on the axis.
  static CameraModel look_at(std::string id, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                             double focal, int width, int height);
};

/// Average-height plane height plus the ground raster shared by all views.
/// Cell (i, j) is centred on world (origin_x + i*cell_size, origin_y + j*cell_size).
struct SceneConfig {
  double h_avg = 1750.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 100.0;
  int grid_width = 1;
  int grid_height = 1;

  void validate() const;
  Eigen::Vector2d cell_center(double i, double j) const {
    return {origin_x + i * cell_size, origin_y + j * cell_size};
  }
  Eigen::Vector2d world_to_cell(double x, double y) const {
    return {(x - origin_x) / cell_size, (y - origin_y) / cell_size};
  }
  bool contains_cell(const Eigen::Vector2d& cell) const {
    return cell.x() >= -0.5 && cell.x() <= grid_width - 0.5 && cell.y() >= -0.5 && cell.y() <= grid_height - 0.5;
  }
};

// Raster geometry of a camera image subsampled by `stride` (sizes round up).
struct ImageRaster {
  int width = 0;
  int height = 0;
  int stride = 1;
};
ImageRaster image_raster(const CameraModel& camera, int stride);
inline Eigen::Vector2d raster_to_pixel(const Eigen::Vector2d& cell, int stride) {
  const double off = 0.5 * (stride - 1);
  return {stride * cell.x() + off, stride * cell.y() + off};
}
inline Eigen::Vector2d pixel_to_raster(const Eigen::Vector2d& pixel, int stride) {
  const double off = 0.5 * (stride - 1);
  return {(pixel.x() - off) / stride, (pixel.y() - off) / stride};
}

enum class FieldDirection {
  GroundToImage,  // lives on the ground grid, points into an image raster
  ImageToGround,  // lives on an image raster, points into the ground grid
  Resize,         // between two rasters of the same kind (pyramid resampling)
};

/// Per-target-cell continuous source coordinates (in source cells) plus validity.
struct CorrespondenceField {
  FieldDirection direction = FieldDirection::GroundToImage;
  GridTag source_tag;
  GridTag target_tag;
  int source_width = 0;
  int source_height = 0;
  int target_width = 0;
  int target_height = 0;
  std::vector<Eigen::Vector2d> coords;  // row-major over the target raster
  std::vector<std::uint8_t> valid;

  std::size_t target_cells() const { return static_cast<std::size_t>(target_width) * target_height; }
  bool is_valid(int y, int x) const { return valid[static_cast<std::size_t>(y) * target_width + x] != 0; }
  const Eigen::Vector2d& coord(int y, int x) const { return coords[static_cast<std::size_t>(y) * target_width + x]; }
  std::size_t valid_count() const;
};

// Back-projects a pixel onto z = h_avg. nullopt when the ray is parallel to the plane
// or meets it behind the camera.
std::optional<Eigen::Vector3d> project_pixel_to_ground(const CameraModel& camera, const SceneConfig& scene,
                                                       const Eigen::Vector2d& pixel);

// `image_stride` selects the image raster (1 = full resolution).
CorrespondenceField build_correspondence(const CameraModel& camera, const SceneConfig& scene,
                                         FieldDirection direction, int image_stride = 1);

// Pixel-centre-aligned resize between two rasters; coordinates are clamped to the
// source so borders replicate.
CorrespondenceField resize_field(const GridTag& source_tag, int source_width, int source_height,
                                 const GridTag& target_tag, int target_width, int target_height);

inline constexpr double kInvalidDistance = -1.0;

// Camera distance to the average-height point behind every raster cell (mm). Cells whose
// ray misses the plane hold kInvalidDistance and are masked invalid.
Map2D distance_map(const CameraModel& camera, const SceneConfig& scene, int image_stride = 1);

// Clockwise angle in degrees, [0, 360), from (0, 1) to the planar direction camera->point.
double view_ray_angle(const Eigen::Vector3d& camera_center, double x, double y);

// view_ray_angle over the ground grid; cells within one cell_size of the camera's
// ground footprint are masked invalid.
Map2D view_ray_angle_map(const CameraModel& camera, const SceneConfig& scene);

}  // namespace mvcount
