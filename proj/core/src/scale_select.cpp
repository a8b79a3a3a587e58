#include "mvcount/scale_select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvcount/error.hpp"
#include "mvcount/sampler.hpp"

namespace mvcount {

void PyramidConfig::validate() const {
  require(n_scales >= 1, "pyramid: n_scales must be >= 1");
  require(zoom > 1.0, "pyramid: zoom must be > 1 (downsampling ratio between levels)");
  require(ref_scale >= 0 && ref_scale < n_scales, "pyramid: ref_scale out of range");
  require(ref_distance > 0.0, "pyramid: ref_distance must be positive");
}

double reference_distance(std::span<const CameraModel> cameras, const SceneConfig& scene) {
  require(!cameras.empty(), "reference_distance: no cameras");
  const auto first = std::min_element(cameras.begin(), cameras.end(),
                                      [](const CameraModel& a, const CameraModel& b) { return a.id < b.id; });
  const Eigen::Vector2d centre(0.5 * (first->width - 1), 0.5 * (first->height - 1));
  const auto hit = project_pixel_to_ground(*first, scene, centre);
  require(hit.has_value(), "reference_distance: centre pixel of camera " + first->id + " misses the plane");
  return first->to_camera(*hit).norm();
}

int downsampled_size(int size, double factor) {
  return std::max(1, static_cast<int>(std::floor(size / factor + 1e-9)));
}

namespace {

struct Tap {
  int source;
  double weight;
};

// 1D area-overlap weights of each output cell over source cells [i, i+1).
std::vector<std::vector<Tap>> area_taps(int source_size, int target_size) {
  const double ratio = static_cast<double>(source_size) / target_size;
  std::vector<std::vector<Tap>> taps(target_size);
  for (int j = 0; j < target_size; ++j) {
    const double lo = j * ratio;
    const double hi = (j + 1) * ratio;
    for (int i = static_cast<int>(std::floor(lo)); i < source_size && i < hi; ++i) {
      const double w = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (w > 1e-12) taps[j].push_back({i, w});
    }
  }
  return taps;
}

}  // namespace

Map2D downsample_area(const Map2D& map, double factor) {
  require(factor >= 1.0, "downsample_area: factor must be >= 1");
  if (factor == 1.0) return map;
  const int ow = downsampled_size(map.width(), factor);
  const int oh = downsampled_size(map.height(), factor);
  const auto tx = area_taps(map.width(), ow);
  const auto ty = area_taps(map.height(), oh);
  Map2D out(ow, oh, map.channels(), map.tag());
  for (int c = 0; c < map.channels(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        // Mean written as ref + weighted mean of deviations: constants reproduce exactly.
        const double ref = map.at(c, ty[y][0].source, tx[x][0].source);
        double acc = 0.0;
        double wsum = 0.0;
        for (const auto& a : ty[y]) {
          for (const auto& b : tx[x]) {
            const double w = a.weight * b.weight;
            acc += w * (map.at(c, a.source, b.source) - ref);
            wsum += w;
          }
        }
        out.at(c, y, x) = ref + acc / wsum;
      }
    }
  }
  return out;
}

Map2D upsample_bilinear(const Map2D& map, int width, int height) {
  const auto field = resize_field(map.tag(), map.width(), map.height(), map.tag(), width, height);
  return sample(map, field);
}

std::vector<Map2D> build_pyramid(const Map2D& map, const PyramidConfig& config) {
  require(config.n_scales >= 1 && config.zoom > 1.0, "build_pyramid: invalid pyramid config");
  const double smallest = std::pow(config.zoom, config.n_scales - 1);
  require(downsampled_size(map.width(), smallest) >= 4 && downsampled_size(map.height(), smallest) >= 4,
          "build_pyramid: map too small for " + std::to_string(config.n_scales) + " scales");
  std::vector<Map2D> levels;
  levels.push_back(map);
  for (int i = 1; i < config.n_scales; ++i) {
    const Map2D small = downsample_area(map, std::pow(config.zoom, i));
    levels.push_back(upsample_bilinear(small, map.width(), map.height()));
  }
  return levels;
}

ScaleMasks fixed_scale_map(const Map2D& distance, const PyramidConfig& config) {
  config.validate();
  ScaleMasks out;
  out.discrete = true;
  out.index = Map2D(distance.width(), distance.height(), 1, distance.tag());
  for (int i = 0; i < config.n_scales; ++i) out.masks.emplace_back(distance.width(), distance.height(), 1, distance.tag());
  const double log_z = std::log(config.zoom);
  for (int y = 0; y < distance.height(); ++y) {
    for (int x = 0; x < distance.width(); ++x) {
      int s = config.ref_scale;
      const bool ok = distance.valid(y, x) && distance.at(y, x) > 0.0;
      if (ok) {
        const double level = std::log(distance.at(y, x) / config.ref_distance) / log_z;
        s = std::clamp(config.ref_scale - static_cast<int>(std::floor(level)), 0, config.n_scales - 1);
      }
      out.index.at(y, x) = s;
      out.masks[s].at(y, x) = 1.0;
      if (!ok) {
        out.index.set_valid(y, x, false);
        for (auto& m : out.masks) m.set_valid(y, x, false);
      }
    }
  }
  return out;
}

ScaleMasks learnable_scale_map(const Map2D& distance, const LearnableScaleParams& params,
                               const PyramidConfig& config) {
  config.validate();
  const int n = config.n_scales;
  ScaleMasks out;
  out.discrete = false;
  for (int i = 0; i < n; ++i) {
    out.masks.emplace_back(distance.width(), distance.height(), 1, distance.tag());
    out.dmask_db.emplace_back(distance.width(), distance.height(), 1, distance.tag());
    out.dmask_dk.emplace_back(distance.width(), distance.height(), 1, distance.tag());
  }
  const double log_z = std::log(config.zoom);
  std::vector<double> logits(n);
  std::vector<double> m(n);
  for (int y = 0; y < distance.height(); ++y) {
    for (int x = 0; x < distance.width(); ++x) {
      const bool ok = distance.valid(y, x) && distance.at(y, x) > 0.0;
      const double level = ok ? std::log(distance.at(y, x) / config.ref_distance) / log_z : 0.0;
      const double s = params.b + params.k * level;
      double peak = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) {
        logits[i] = -(s - i) * (s - i);
        peak = std::max(peak, logits[i]);
      }
      double z = 0.0;
      for (int i = 0; i < n; ++i) {
        m[i] = std::exp(logits[i] - peak);
        z += m[i];
      }
      double mean_slope = 0.0;
      for (int i = 0; i < n; ++i) {
        m[i] /= z;
        mean_slope += m[i] * (-2.0 * (s - i));
      }
      for (int i = 0; i < n; ++i) {
        out.masks[i].at(y, x) = m[i];
        if (!ok) out.masks[i].set_valid(y, x, false);
        const double dm_ds = m[i] * (-2.0 * (s - i) - mean_slope);
        out.dmask_db[i].at(y, x) = dm_ds;
        out.dmask_dk[i].at(y, x) = dm_ds * level;
      }
    }
  }
  return out;
}

namespace {

void check_merge_inputs(std::span<const Map2D> pyramid, const ScaleMasks& masks) {
  require(!pyramid.empty(), "merge_scales: empty pyramid");
  require(pyramid.size() == masks.masks.size(), "merge_scales: pyramid length does not match mask count");
  for (std::size_t i = 0; i < pyramid.size(); ++i) {
    require(pyramid[i].same_shape(pyramid[0]), "merge_scales: pyramid levels differ in shape");
    require(masks.masks[i].width() == pyramid[0].width() && masks.masks[i].height() == pyramid[0].height(),
            "merge_scales: mask size does not match the pyramid");
  }
}

}  // namespace

Map2D merge_scales(std::span<const Map2D> pyramid, const ScaleMasks& masks) {
  check_merge_inputs(pyramid, masks);
  Map2D out(pyramid[0].width(), pyramid[0].height(), pyramid[0].channels(), pyramid[0].tag());
  const std::size_t cells = out.cells();
  for (std::size_t i = 0; i < pyramid.size(); ++i) {
    const auto m = masks.masks[i].channel(0);
    for (int c = 0; c < out.channels(); ++c) {
      const auto f = pyramid[i].channel(c);
      auto dst = out.channel(c);
      for (std::size_t k = 0; k < cells; ++k) dst[k] += m[k] * f[k];
    }
  }
  return out;
}

MergeGradients merge_scales_backward(const Map2D& upstream, std::span<const Map2D> pyramid,
                                     const ScaleMasks& masks) {
  check_merge_inputs(pyramid, masks);
  require(upstream.same_shape(pyramid[0]), "merge_scales_backward: upstream shape mismatch");
  MergeGradients g;
  const std::size_t cells = upstream.cells();
  for (std::size_t i = 0; i < pyramid.size(); ++i) {
    const auto m = masks.masks[i].channel(0);
    Map2D level(upstream.width(), upstream.height(), upstream.channels(), pyramid[i].tag());
    std::vector<double> dmask(masks.discrete ? 0 : cells, 0.0);
    for (int c = 0; c < upstream.channels(); ++c) {
      const auto up = upstream.channel(c);
      const auto f = pyramid[i].channel(c);
      auto dst = level.channel(c);
      for (std::size_t k = 0; k < cells; ++k) {
        dst[k] = m[k] * up[k];
        if (!masks.discrete) dmask[k] += up[k] * f[k];
      }
    }
    if (!masks.discrete) {
      const auto db = masks.dmask_db[i].channel(0);
      const auto dk = masks.dmask_dk[i].channel(0);
      for (std::size_t k = 0; k < cells; ++k) {
        g.db += dmask[k] * db[k];
        g.dk += dmask[k] * dk[k];
      }
    }
    g.levels.push_back(std::move(level));
  }
  return g;
}

}  // namespace mvcount
