#pragma once

#include <span>
#include <vector>

#include "mvcount/geometry.hpp"
#include "mvcount/map2d.hpp"

namespace mvcount {

/// Image pyramid with `zoom` > 1 the downsampling ratio between neighbouring levels.
/// zoom = 2 is the classic half-size-per-level pyramid.
struct PyramidConfig {
  int n_scales = 3;
  double zoom = 2.0;
  int ref_scale = 1;
  double ref_distance = 1.0;  // mm

  void validate() const;
};

// Lowest camera id's centre-pixel distance, the shared reference d_r.
double reference_distance(std::span<const CameraModel> cameras, const SceneConfig& scene);

int downsampled_size(int size, double factor);

// Area-averaging downsample by `factor` (output size floor(size / factor)).
Map2D downsample_area(const Map2D& map, double factor);

// Clamped-border bilinear resize; linear in the input, see resize_field().
Map2D upsample_bilinear(const Map2D& map, int width, int height);

// Level i is the map area-downsampled by zoom^i and bilinearly resized back.
// Throws if the smallest level would be below 4x4.
std::vector<Map2D> build_pyramid(const Map2D& map, const PyramidConfig& config);

/// Per-pixel scale selection. `masks[i]` is M_i; discrete masks are 0/1 indicators with
/// `index` holding S directly.
struct ScaleMasks {
  bool discrete = true;
  std::vector<Map2D> masks;
  Map2D index;  // discrete only
  // Soft masks only: dM_i/db and dM_i/dk.
  std::vector<Map2D> dmask_db;
  std::vector<Map2D> dmask_dk;
};

// S = clamp(S_r - floor(log_z(d / d_r)), 0, n-1). Invalid distances select S_r and are masked.
ScaleMasks fixed_scale_map(const Map2D& distance, const PyramidConfig& config);

struct LearnableScaleParams {
  double b = 1.0;
  double k = -1.0;
};

// S = b + k log_z(d / d_r); M_i = softmax_i(-(S - i)^2). Invalid distances use S = b.
ScaleMasks learnable_scale_map(const Map2D& distance, const LearnableScaleParams& params,
                               const PyramidConfig& config);

// F = sum_i M_i (x) F_i with masks broadcast across channels.
Map2D merge_scales(std::span<const Map2D> pyramid, const ScaleMasks& masks);

struct MergeGradients {
  std::vector<Map2D> levels;  // dL/dF_i
  double db = 0.0;            // soft masks only
  double dk = 0.0;
};

MergeGradients merge_scales_backward(const Map2D& upstream, std::span<const Map2D> pyramid,
                                     const ScaleMasks& masks);

}  // namespace mvcount
