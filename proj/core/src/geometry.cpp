#include "mvcount/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "mvcount/error.hpp"

namespace mvcount {

void CameraModel::validate() const {
  require(fx > 0.0 && fy > 0.0, "camera " + id + ": focal lengths must be positive");
  require(width >= 1 && height >= 1, "camera " + id + ": empty image size");
  const Eigen::Matrix3d gram = R.transpose() * R - Eigen::Matrix3d::Identity();
  require(gram.cwiseAbs().maxCoeff() < 1e-9, "camera " + id + ": rotation is not orthonormal");
  require(std::abs(R.determinant() - 1.0) < 1e-9, "camera " + id + ": rotation determinant is not 1");
  require(T.allFinite(), "camera " + id + ": non-finite translation");
}

std::optional<Eigen::Vector2d> CameraModel::project(const Eigen::Vector3d& world) const {
  const Eigen::Vector3d c = to_camera(world);
  if (!(c.z() > 0.0)) return std::nullopt;
  return Eigen::Vector2d(fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy);
}

bool CameraModel::contains_pixel(const Eigen::Vector2d& pixel) const {
  return pixel.x() >= -0.5 && pixel.x() <= width - 0.5 && pixel.y() >= -0.5 && pixel.y() <= height - 0.5;
}

CameraModel CameraModel::look_at(std::string id, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                 double focal, int width, int height) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d up(0.0, 0.0, 1.0);
  const Eigen::Vector3d right = forward.cross(up).normalized();
  require(right.allFinite() && right.norm() > 0.5, "look_at: viewing direction is vertical");
  const Eigen::Vector3d down = forward.cross(right);
  CameraModel cam;
  cam.id = std::move(id);
  cam.fx = cam.fy = focal;
  cam.cx = 0.5 * (width - 1);
  cam.cy = 0.5 * (height - 1);
  cam.R.row(0) = right.transpose();
  cam.R.row(1) = down.transpose();
  cam.R.row(2) = forward.transpose();
  cam.T = -cam.R * eye;
  cam.width = width;
  cam.height = height;
  return cam;
}

void SceneConfig::validate() const {
  require(h_avg > 0.0, "scene: h_avg must be positive");
  require(cell_size > 0.0, "scene: cell_size must be positive");
  require(grid_width >= 1 && grid_height >= 1, "scene: grid must be at least 1x1");
}

ImageRaster image_raster(const CameraModel& camera, int stride) {
  require(stride >= 1, "image_raster: stride must be >= 1");
  return {(camera.width + stride - 1) / stride, (camera.height + stride - 1) / stride, stride};
}

std::size_t CorrespondenceField::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

std::optional<Eigen::Vector3d> project_pixel_to_ground(const CameraModel& camera, const SceneConfig& scene,
                                                       const Eigen::Vector2d& pixel) {
  const Eigen::Vector3d ray_cam((pixel.x() - camera.cx) / camera.fx, (pixel.y() - camera.cy) / camera.fy, 1.0);
  const Eigen::Vector3d ray = camera.R.transpose() * ray_cam;
  const Eigen::Vector3d origin = camera.center();
  if (std::abs(ray.z()) < 1e-15) return std::nullopt;
  const double t = (scene.h_avg - origin.z()) / ray.z();
  if (!(t > 0.0)) return std::nullopt;
  Eigen::Vector3d hit = origin + t * ray;
  hit.z() = scene.h_avg;
  return hit;
}

CorrespondenceField build_correspondence(const CameraModel& camera, const SceneConfig& scene,
                                         FieldDirection direction, int image_stride) {
  camera.validate();
  scene.validate();
  const ImageRaster raster = image_raster(camera, image_stride);
  CorrespondenceField field;
  field.direction = direction;
  if (direction == FieldDirection::GroundToImage) {
    field.source_tag = GridTag::image(camera.id, image_stride);
    field.target_tag = GridTag::ground();
    field.source_width = raster.width;
    field.source_height = raster.height;
    field.target_width = scene.grid_width;
    field.target_height = scene.grid_height;
  } else if (direction == FieldDirection::ImageToGround) {
    field.source_tag = GridTag::ground();
    field.target_tag = GridTag::image(camera.id, image_stride);
    field.source_width = scene.grid_width;
    field.source_height = scene.grid_height;
    field.target_width = raster.width;
    field.target_height = raster.height;
  } else {
    throw Error("build_correspondence: use resize_field for raster resizing");
  }
  field.coords.assign(field.target_cells(), Eigen::Vector2d::Zero());
  field.valid.assign(field.target_cells(), 0);

  for (int y = 0; y < field.target_height; ++y) {
    for (int x = 0; x < field.target_width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * field.target_width + x;
      if (direction == FieldDirection::GroundToImage) {
        const Eigen::Vector2d w = scene.cell_center(x, y);
        const auto pixel = camera.project(Eigen::Vector3d(w.x(), w.y(), scene.h_avg));
        if (!pixel || !camera.contains_pixel(*pixel)) continue;
        field.coords[idx] = pixel_to_raster(*pixel, image_stride);
        field.valid[idx] = 1;
      } else {
        const auto hit = project_pixel_to_ground(camera, scene, raster_to_pixel({x, y}, image_stride));
        if (!hit) continue;
        const Eigen::Vector2d cell = scene.world_to_cell(hit->x(), hit->y());
        if (!scene.contains_cell(cell)) continue;
        field.coords[idx] = cell;
        field.valid[idx] = 1;
      }
    }
  }
  return field;
}

CorrespondenceField resize_field(const GridTag& source_tag, int source_width, int source_height,
                                 const GridTag& target_tag, int target_width, int target_height) {
  require(source_width >= 1 && source_height >= 1 && target_width >= 1 && target_height >= 1,
          "resize_field: empty raster");
  CorrespondenceField field;
  field.direction = FieldDirection::Resize;
  field.source_tag = source_tag;
  field.target_tag = target_tag;
  field.source_width = source_width;
  field.source_height = source_height;
  field.target_width = target_width;
  field.target_height = target_height;
  field.coords.resize(field.target_cells());
  field.valid.assign(field.target_cells(), 1);
  const double sx = static_cast<double>(source_width) / target_width;
  const double sy = static_cast<double>(source_height) / target_height;
  for (int y = 0; y < target_height; ++y) {
    const double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, source_height - 1.0);
    for (int x = 0; x < target_width; ++x) {
      const double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, source_width - 1.0);
      field.coords[static_cast<std::size_t>(y) * target_width + x] = {u, v};
    }
  }
  return field;
}

Map2D distance_map(const CameraModel& camera, const SceneConfig& scene, int image_stride) {
  camera.validate();
  const ImageRaster raster = image_raster(camera, image_stride);
  Map2D map(raster.width, raster.height, 1, GridTag::image(camera.id, image_stride));
  for (int y = 0; y < raster.height; ++y) {
    for (int x = 0; x < raster.width; ++x) {
      const auto hit = project_pixel_to_ground(camera, scene, raster_to_pixel({x, y}, image_stride));
      if (!hit) {
        map.at(y, x) = kInvalidDistance;
        map.set_valid(y, x, false);
        continue;
      }
      map.at(y, x) = camera.to_camera(*hit).norm();
    }
  }
  return map;
}

double view_ray_angle(const Eigen::Vector3d& camera_center, double x, double y) {
  const double dx = x - camera_center.x();
  const double dy = y - camera_center.y();
  double deg = std::atan2(dx, dy) * 180.0 / std::numbers::pi;
  if (deg < 0.0) deg += 360.0;
  if (deg >= 360.0) deg -= 360.0;
  return deg;
}

Map2D view_ray_angle_map(const CameraModel& camera, const SceneConfig& scene) {
  camera.validate();
  scene.validate();
  const Eigen::Vector3d origin = camera.center();
  Map2D map(scene.grid_width, scene.grid_height, 1, GridTag::ground());
  for (int y = 0; y < scene.grid_height; ++y) {
    for (int x = 0; x < scene.grid_width; ++x) {
      const Eigen::Vector2d w = scene.cell_center(x, y);
      if (std::hypot(w.x() - origin.x(), w.y() - origin.y()) < scene.cell_size) {
        map.set_valid(y, x, false);
        continue;
      }
      map.at(y, x) = view_ray_angle(origin, w.x(), w.y());
    }
  }
  return map;
}

}  // namespace mvcount
