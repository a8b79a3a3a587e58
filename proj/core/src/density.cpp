#include "mvcount/density.hpp"

#include <cmath>

#include "mvcount/error.hpp"
#include "mvcount/sampler.hpp"

namespace mvcount {

namespace {

// Visits every lattice cell within 4 sigma of `center` with its normalised kernel weight
// (normalised over the full support, in or out of the raster). Returns true when part of
// the support falls outside the raster.
template <typename Fn>
bool for_each_kernel_cell(const Eigen::Vector2d& center, double sigma, int width, int height, Fn&& fn) {
  const double radius = 4.0 * sigma;
  const int x_lo = static_cast<int>(std::ceil(center.x() - radius));
  const int x_hi = static_cast<int>(std::floor(center.x() + radius));
  const int y_lo = static_cast<int>(std::ceil(center.y() - radius));
  const int y_hi = static_cast<int>(std::floor(center.y() + radius));
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  double total = 0.0;
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double d2 = (x - center.x()) * (x - center.x()) + (y - center.y()) * (y - center.y());
      if (d2 <= radius * radius) total += std::exp(-d2 * inv_two_var);
    }
  }
  bool clipped = false;
  if (total <= 0.0) return true;
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double d2 = (x - center.x()) * (x - center.x()) + (y - center.y()) * (y - center.y());
      if (d2 > radius * radius) continue;
      if (x < 0 || y < 0 || x >= width || y >= height) {
        clipped = true;
        continue;
      }
      fn(x, y, std::exp(-d2 * inv_two_var) / total);
    }
  }
  return clipped;
}

}  // namespace

RenderedDensity render_density(std::span<const Eigen::Vector2d> centers, double sigma, int width, int height,
                               GridTag tag) {
  require(sigma > 0.0, "render_density: sigma must be positive");
  RenderedDensity result{Map2D(width, height, 1, std::move(tag)), 0};
  for (const auto& c : centers) {
    const bool clipped = for_each_kernel_cell(c, sigma, width, height, [&](int x, int y, double w) {
      result.map.at(y, x) += w;
    });
    if (clipped) ++result.clipped_points;
  }
  return result;
}

NormalizationMap normalization_map(const CameraModel& camera, const SceneConfig& scene, double sigma,
                                   int image_stride) {
  require(sigma > 0.0, "normalization_map: sigma must be positive");
  const CorrespondenceField field = build_correspondence(camera, scene, FieldDirection::GroundToImage, image_stride);
  // Projected mass of any image map D is <D, A^T 1>, so one adjoint pass gives every cell's
  // denominator once its Gaussian is rendered.
  const Map2D ones(scene.grid_width, scene.grid_height, 1, GridTag::ground(), 1.0);
  const Map2D column_mass = sample_adjoint(ones, field);

  NormalizationMap norm{camera.id, Map2D(scene.grid_width, scene.grid_height, 1, GridTag::ground())};
  for (int y = 0; y < scene.grid_height; ++y) {
    for (int x = 0; x < scene.grid_width; ++x) {
      if (!field.is_valid(y, x)) {
        norm.weights.set_valid(y, x, false);
        continue;
      }
      double before = 0.0;
      double after = 0.0;
      for_each_kernel_cell(field.coord(y, x), sigma, field.source_width, field.source_height,
                           [&](int u, int v, double w) {
                             before += w;
                             after += w * column_mass.at(v, u);
                           });
      if (after < 1e-8) {
        norm.weights.set_valid(y, x, false);
        continue;
      }
      norm.weights.at(y, x) = before / after;
    }
  }
  return norm;
}

Map2D apply_normalization(const Map2D& projected, const NormalizationMap& norm) {
  require(projected.tag().is_ground(), "apply_normalization: expects a ground-grid map");
  require(projected.width() == norm.weights.width() && projected.height() == norm.weights.height(),
          "apply_normalization: size mismatch");
  Map2D out = projected;
  const auto w = norm.weights.channel(0);
  for (int c = 0; c < out.channels(); ++c) {
    auto ch = out.channel(c);
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] *= w[i];
  }
  for (std::size_t i = 0; i < out.cells(); ++i) out.mask()[i] = projected.mask()[i] && norm.weights.mask()[i];
  return out;
}

std::vector<ViewWeightMap> view_weight_maps(std::span<const CameraModel> cameras, const SceneConfig& scene,
                                            int image_stride) {
  require(!cameras.empty(), "view_weight_maps: needs at least one camera");
  std::vector<ViewWeightMap> maps;
  for (const auto& cam : cameras) {
    const ImageRaster raster = image_raster(cam, image_stride);
    ViewWeightMap wm{cam.id, Map2D(raster.width, raster.height, 1, GridTag::image(cam.id, image_stride))};
    for (int y = 0; y < raster.height; ++y) {
      for (int x = 0; x < raster.width; ++x) {
        const auto hit = project_pixel_to_ground(cam, scene, raster_to_pixel({x, y}, image_stride));
        if (!hit) {
          wm.weights.set_valid(y, x, false);
          continue;
        }
        int seen = 0;
        for (const auto& other : cameras) {
          const auto p = other.project(*hit);
          if (p && other.contains_pixel(*p)) ++seen;
        }
        wm.weights.at(y, x) = 1.0 / std::max(seen, 1);
      }
    }
    maps.push_back(std::move(wm));
  }
  return maps;
}

double dmap_weighted_count(std::span<const Map2D> view_densities, std::span<const ViewWeightMap> weights) {
  require(view_densities.size() == weights.size(), "dmap_weighted_count: list length mismatch");
  double count = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const Map2D& d = view_densities[i];
    const Map2D& w = weights[i].weights;
    require(d.width() == w.width() && d.height() == w.height() && d.channels() == 1,
            "dmap_weighted_count: shape mismatch for camera " + weights[i].camera);
    const auto dv = d.channel(0);
    const auto wv = w.channel(0);
    for (std::size_t k = 0; k < dv.size(); ++k) count += wv[k] * dv[k];
  }
  return count;
}

ErrorMetrics mae_nae(std::span<const double> predictions, std::span<const double> truths, bool with_nae) {
  require(!predictions.empty(), "mae_nae: empty input");
  require(predictions.size() == truths.size(), "mae_nae: length mismatch");
  ErrorMetrics m;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const double err = std::abs(predictions[i] - truths[i]);
    m.mae += err;
    if (with_nae) {
      require(truths[i] != 0.0, "mae_nae: zero truth at index " + std::to_string(i));
      m.nae += err / truths[i];
    }
  }
  m.mae /= static_cast<double>(truths.size());
  m.nae /= static_cast<double>(truths.size());
  return m;
}

Map2D camera_region_mask(const CameraModel& camera, const SceneConfig& scene) {
  const CorrespondenceField field = build_correspondence(camera, scene, FieldDirection::GroundToImage, 1);
  Map2D mask(scene.grid_width, scene.grid_height, 1, GridTag::ground());
  for (std::size_t i = 0; i < field.target_cells(); ++i) mask.values()[i] = field.valid[i] ? 1.0 : 0.0;
  return mask;
}

double camera_region_count(const Map2D& scene_density, const CameraModel& camera, const SceneConfig& scene) {
  require(scene_density.tag().is_ground() && scene_density.width() == scene.grid_width &&
              scene_density.height() == scene.grid_height,
          "camera_region_count: expects a ground-grid map");
  const Map2D region = camera_region_mask(camera, scene);
  double total = 0.0;
  for (int c = 0; c < scene_density.channels(); ++c) {
    const auto v = scene_density.channel(c);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (region.values()[i] != 0.0) total += v[i];
    }
  }
  return total;
}

}  // namespace mvcount
