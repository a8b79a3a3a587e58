#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mvcount/geometry.hpp"
#include "mvcount/map2d.hpp"

namespace mvcount {

/// One annotated person: ground position plus an optional head pixel per camera.
struct PersonAnnotation {
  Eigen::Vector2d world = Eigen::Vector2d::Zero();
  std::vector<std::optional<Eigen::Vector2d>> heads;  // indexed like the camera list
};

struct AnnotationSet {
  std::vector<PersonAnnotation> people;
};

struct RenderedDensity {
  Map2D map;
  int clipped_points = 0;  // points whose kernel support leaves the raster
};

// Sum of unit-mass isotropic Gaussians (std `sigma` cells) centred at `centers`, given in
// raster cell coordinates. Kernels are truncated at 4 sigma and renormalised over their
// full support, so clipped points keep only their in-raster mass.
RenderedDensity render_density(std::span<const Eigen::Vector2d> centers, double sigma, int width, int height,
                               GridTag tag);

/// Per-ground-cell weights restoring unit Gaussian mass after image-to-ground projection.
struct NormalizationMap {
  std::string camera;
  Map2D weights;  // ground grid; invalid cells hold 0
};

// For every ground cell seen by the camera: render one Gaussian (std `sigma` raster cells)
// at the cell's image correspondent, project it, and store sum(before) / sum(after).
// Cells whose projected sum is below 1e-8 are masked invalid.
NormalizationMap normalization_map(const CameraModel& camera, const SceneConfig& scene, double sigma,
                                   int image_stride = 1);

// Element-wise product of a projected ground map with the weights.
Map2D apply_normalization(const Map2D& projected, const NormalizationMap& norm);

/// W_i = 1/t over a camera's raster, t = number of cameras whose image contains the
/// pixel's average-height point. Pixels whose ray misses the plane hold 0 (masked invalid).
struct ViewWeightMap {
  std::string camera;
  Map2D weights;
};

std::vector<ViewWeightMap> view_weight_maps(std::span<const CameraModel> cameras, const SceneConfig& scene,
                                            int image_stride = 1);

// Scene count sum_i sum_px W_i * D_i.
double dmap_weighted_count(std::span<const Map2D> view_densities, std::span<const ViewWeightMap> weights);

struct ErrorMetrics {
  double mae = 0.0;
  double nae = 0.0;
};

// Mean absolute error and mean relative absolute error. Throws on empty or unequal
// inputs, and on any zero truth when `with_nae` is set.
ErrorMetrics mae_nae(std::span<const double> predictions, std::span<const double> truths, bool with_nae = true);

// True when the camera sees the cell's average-height point.
Map2D camera_region_mask(const CameraModel& camera, const SceneConfig& scene);

// Sum of a ground map over the cells inside the camera's field of view (no occlusion test).
double camera_region_count(const Map2D& scene_density, const CameraModel& camera, const SceneConfig& scene);

}  // namespace mvcount
