#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "mvcount/dataset.hpp"
#include "mvcount/geometry.hpp"

namespace mvcount {

/// Synthetic multi-view scene parameters. Cameras sit on a ring around the grid centre,
/// at increasing distances so people appear at different scales across views.
struct SimConfig {
  int n_cameras = 3;
  int image_width = 256;
  int image_height = 192;
  double focal = 192.0;  // pixels, shared by all cameras
  SceneConfig scene{1750.0, 125.0, 125.0, 250.0, 40, 40};
  int frames = 100;
  double train_fraction = 0.6;
  int people_min = 5;
  int people_max = 20;
  double person_width = 500.0;  // mm
  double scene_sigma = 3.0;     // ground cells
  double view_sigma = 3.0;      // pixels
  double ring_radius = 9000.0;  // mm, nearest camera's distance from the grid centre
  double ring_step = 2500.0;    // mm added per further camera
  double camera_height = 6000.0;
  int occluders = 0;            // opaque image-space rectangles per camera
  double background = 0.15;
  double noise = 0.03;

  void validate() const;

  // Same geometry at 64x48, small enough to train on in seconds.
  static SimConfig toy();
};

struct ImageRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;  // exclusive
  int y1 = 0;
  double intensity = 0.5;
};

struct SimScene {
  SimConfig config;
  std::uint64_t seed = 0;
  Dataset dataset;
  std::vector<std::vector<ImageRect>> occluders;  // per camera
};

// Deterministic in (config, seed). Throws if the cameras cannot jointly see the
// placement region of the grid.
SimScene generate(const SimConfig& config, std::uint64_t seed);

struct OracleCounts {
  std::vector<int> scene;                   // per frame
  std::vector<std::vector<int>> per_camera;  // [frame][camera]; occluded people included
};

OracleCounts oracle_counts(const Dataset& dataset);

// Ellipse a person occupies in a view (weak perspective at the person's centre depth).
struct PersonBlob {
  Eigen::Vector2d center;  // projection of (x, y, h_avg / 2)
  double half_width = 0.0;
  double half_height = 0.0;
  double depth = 0.0;      // distance from the camera centre
};
std::optional<PersonBlob> person_blob(const CameraModel& camera, const SceneConfig& scene,
                                      const Eigen::Vector2d& world, double person_width);

}  // namespace mvcount
