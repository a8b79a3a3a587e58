#include "mvcount/dataset.hpp"

#include "mvcount/error.hpp"

namespace mvcount {

int Dataset::camera_index(const std::string& id) const {
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    if (cameras[i].id == id) return static_cast<int>(i);
  }
  throw Error("dataset: unknown camera " + id);
}

Map2D view_ground_truth(const Frame& frame, const CameraModel& camera, int camera_index, int stride,
                        double sigma_px) {
  const ImageRaster raster = image_raster(camera, stride);
  std::vector<Eigen::Vector2d> centers;
  for (const auto& person : frame.annotations.people) {
    if (camera_index >= static_cast<int>(person.heads.size())) continue;
    const auto& head = person.heads[camera_index];
    if (head) centers.push_back(pixel_to_raster(*head, stride));
  }
  return render_density(centers, sigma_px / stride, raster.width, raster.height, GridTag::image(camera.id, stride))
      .map;
}

Map2D scene_ground_truth(const AnnotationSet& annotations, const SceneConfig& scene, double sigma_cells) {
  std::vector<Eigen::Vector2d> centers;
  centers.reserve(annotations.people.size());
  for (const auto& person : annotations.people) {
    centers.push_back(scene.world_to_cell(person.world.x(), person.world.y()));
  }
  return render_density(centers, sigma_cells, scene.grid_width, scene.grid_height, GridTag::ground()).map;
}

}  // namespace mvcount
