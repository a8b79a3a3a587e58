#pragma once

#include <vector>

#include "mvcount/density.hpp"
#include "mvcount/geometry.hpp"
#include "mvcount/map2d.hpp"

namespace mvcount {

/// One synchronised multi-view frame.
struct Frame {
  std::vector<Map2D> images;  // per camera, full resolution, values in [0, 1]
  AnnotationSet annotations;
  Map2D scene_gt;             // ground grid, integrates to the person count
};

struct Dataset {
  SceneConfig scene;
  std::vector<CameraModel> cameras;
  std::vector<Frame> frames;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
  double scene_sigma = 3.0;  // ground cells
  double view_sigma = 3.0;   // full-resolution pixels

  int camera_index(const std::string& id) const;
};

// View-level density from visible head pixels on the camera's stride-s raster,
// Gaussian std `sigma_px` given in full-resolution pixels.
Map2D view_ground_truth(const Frame& frame, const CameraModel& camera, int camera_index, int stride,
                        double sigma_px);

// Scene-level density from ground positions.
Map2D scene_ground_truth(const AnnotationSet& annotations, const SceneConfig& scene, double sigma_cells);

}  // namespace mvcount
