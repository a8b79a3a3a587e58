#include "mvcount/scenesim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvcount/error.hpp"
#include "mvcount/rng.hpp"

namespace mvcount {

namespace {

// RNG stream ids; each consumer owns one so draws never shift between consumers.
constexpr std::uint64_t kStreamOccluders = 2;
constexpr std::uint64_t kStreamPeople = 0x100;
constexpr std::uint64_t kStreamNoise = 0x10000;

struct Region {
  double x0, y0, x1, y1;  // world mm, inclusive
};

Region placement_region(const SimConfig& cfg) {
  const SceneConfig& s = cfg.scene;
  const double margin = 4.0 * cfg.scene_sigma;
  const Eigen::Vector2d lo = s.cell_center(margin, margin);
  const Eigen::Vector2d hi = s.cell_center(s.grid_width - 1 - margin, s.grid_height - 1 - margin);
  return {lo.x(), lo.y(), hi.x(), hi.y()};
}

bool head_in_image(const CameraModel& cam, const SceneConfig& scene, const Eigen::Vector2d& world) {
  const auto px = cam.project(Eigen::Vector3d(world.x(), world.y(), scene.h_avg));
  return px && cam.contains_pixel(*px);
}

std::vector<CameraModel> ring_cameras(const SimConfig& cfg) {
  const SceneConfig& s = cfg.scene;
  const Eigen::Vector2d centre = s.cell_center(0.5 * (s.grid_width - 1), 0.5 * (s.grid_height - 1));
  std::vector<CameraModel> cams;
  for (int k = 0; k < cfg.n_cameras; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / cfg.n_cameras + 0.25 * std::numbers::pi;
    const double radius = cfg.ring_radius + k * cfg.ring_step;
    const Eigen::Vector3d eye(centre.x() + radius * std::cos(angle), centre.y() + radius * std::sin(angle),
                              cfg.camera_height);
    cams.push_back(CameraModel::look_at("cam" + std::to_string(k + 1), eye, Eigen::Vector3d(centre.x(), centre.y(), 0.0),
                                        cfg.focal, cfg.image_width, cfg.image_height));
  }
  return cams;
}

void check_coverage(const SimConfig& cfg, std::span<const CameraModel> cams) {
  const Region r = placement_region(cfg);
  constexpr int kSamples = 9;
  for (int i = 0; i < kSamples; ++i) {
    for (int j = 0; j < kSamples; ++j) {
      const Eigen::Vector2d p(r.x0 + (r.x1 - r.x0) * i / (kSamples - 1), r.y0 + (r.y1 - r.y0) * j / (kSamples - 1));
      const bool seen = std::any_of(cams.begin(), cams.end(),
                                    [&](const CameraModel& c) { return head_in_image(c, cfg.scene, p); });
      require(seen, "scenesim: cameras cannot see placement point (" + std::to_string(p.x()) + ", " +
                        std::to_string(p.y()) + ") mm");
    }
  }
}

void fill_rect(Map2D& image, const ImageRect& r) {
  for (int y = std::max(0, r.y0); y < std::min(image.height(), r.y1); ++y) {
    for (int x = std::max(0, r.x0); x < std::min(image.width(), r.x1); ++x) image.at(y, x) = r.intensity;
  }
}

}  // namespace

SimConfig SimConfig::toy() {
  SimConfig c;
  c.image_width = 64;
  c.image_height = 48;
  c.focal = 48.0;
  return c;
}

void SimConfig::validate() const {
  require(n_cameras >= 2 && n_cameras <= 5, "scenesim: 2 to 5 cameras supported");
  require(image_width >= 8 && image_height >= 8, "scenesim: images must be at least 8x8");
  require(focal > 0.0, "scenesim: focal must be positive");
  scene.validate();
  require(frames >= 1, "scenesim: need at least one frame");
  require(train_fraction >= 0.0 && train_fraction <= 1.0, "scenesim: train_fraction must be in [0, 1]");
  require(people_min >= 0 && people_max >= people_min, "scenesim: bad person count range");
  require(person_width > 0.0, "scenesim: person_width must be positive");
  require(scene_sigma > 0.0 && view_sigma > 0.0, "scenesim: sigmas must be positive");
  require(ring_radius > 0.0 && ring_step >= 0.0 && camera_height > scene.h_avg,
          "scenesim: cameras must sit above the average-height plane");
  require(occluders >= 0, "scenesim: occluders must be >= 0");
  const Region r = placement_region(*this);
  require(r.x1 >= r.x0 && r.y1 >= r.y0, "scenesim: grid too small for the 4-sigma border");
}

std::optional<PersonBlob> person_blob(const CameraModel& camera, const SceneConfig& scene,
                                      const Eigen::Vector2d& world, double person_width) {
  const Eigen::Vector3d mid(world.x(), world.y(), 0.5 * scene.h_avg);
  const auto px = camera.project(mid);
  if (!px) return std::nullopt;
  PersonBlob blob;
  blob.center = *px;
  blob.depth = (mid - camera.center()).norm();
  blob.half_height = camera.fy * 0.5 * scene.h_avg / blob.depth;
  blob.half_width = camera.fx * 0.5 * person_width / blob.depth;
  return blob;
}

SimScene generate(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  SimScene out;
  out.config = config;
  out.seed = seed;
  Dataset& ds = out.dataset;
  ds.scene = config.scene;
  ds.cameras = ring_cameras(config);
  ds.scene_sigma = config.scene_sigma;
  ds.view_sigma = config.view_sigma;
  check_coverage(config, ds.cameras);

  {
    CounterRng rng(seed, kStreamOccluders);
    out.occluders.resize(ds.cameras.size());
    for (auto& rects : out.occluders) {
      for (int k = 0; k < config.occluders; ++k) {
        ImageRect r;
        const int w = rng.uniform_int(config.image_width / 8, config.image_width / 4);
        const int h = rng.uniform_int(config.image_height / 6, config.image_height / 3);
        r.x0 = rng.uniform_int(0, config.image_width - w);
        r.y0 = rng.uniform_int(config.image_height / 3, config.image_height - h);
        r.x1 = r.x0 + w;
        r.y1 = r.y0 + h;
        r.intensity = rng.uniform(0.3, 0.45);
        rects.push_back(r);
      }
    }
  }

  const Region region = placement_region(config);
  const double min_gap = 0.8 * config.person_width;
  for (int f = 0; f < config.frames; ++f) {
    CounterRng rng(seed, kStreamPeople + f);
    const int n_people = rng.uniform_int(config.people_min, config.people_max);
    Frame frame;
    std::vector<double> intensity;
    for (int attempt = 0; static_cast<int>(frame.annotations.people.size()) < n_people; ++attempt) {
      require(attempt < 1000 * (n_people + 1), "scenesim: cannot place " + std::to_string(n_people) + " people");
      const Eigen::Vector2d p(rng.uniform(region.x0, region.x1), rng.uniform(region.y0, region.y1));
      const bool crowded = std::any_of(frame.annotations.people.begin(), frame.annotations.people.end(),
                                       [&](const PersonAnnotation& q) { return (q.world - p).norm() < min_gap; });
      if (crowded) continue;
      const bool seen = std::any_of(ds.cameras.begin(), ds.cameras.end(),
                                    [&](const CameraModel& c) { return head_in_image(c, ds.scene, p); });
      if (!seen) continue;
      PersonAnnotation person;
      person.world = p;
      for (const auto& cam : ds.cameras) {
        const auto head = cam.project(Eigen::Vector3d(p.x(), p.y(), ds.scene.h_avg));
        if (head && cam.contains_pixel(*head)) {
          person.heads.emplace_back(*head);
        } else {
          person.heads.emplace_back(std::nullopt);
        }
      }
      frame.annotations.people.push_back(std::move(person));
      intensity.push_back(rng.uniform(0.7, 1.0));
    }

    for (std::size_t c = 0; c < ds.cameras.size(); ++c) {
      const CameraModel& cam = ds.cameras[c];
      CounterRng noise(seed, kStreamNoise + static_cast<std::uint64_t>(f) * 8 + c);
      Map2D image(cam.width, cam.height, 1, GridTag::image(cam.id), config.background);
      struct Drawn {
        PersonBlob blob;
        double intensity;
      };
      std::vector<Drawn> drawn;
      for (std::size_t k = 0; k < frame.annotations.people.size(); ++k) {
        if (auto blob = person_blob(cam, ds.scene, frame.annotations.people[k].world, config.person_width)) {
          drawn.push_back({*blob, intensity[k]});
        }
      }
      // Painter's algorithm: far people first so nearer ones cover them.
      std::stable_sort(drawn.begin(), drawn.end(),
                       [](const Drawn& a, const Drawn& b) { return a.blob.depth > b.blob.depth; });
      for (const auto& d : drawn) {
        const PersonBlob& b = d.blob;
        const int x0 = std::max(0, static_cast<int>(std::floor(b.center.x() - b.half_width)));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(b.center.x() + b.half_width)));
        const int y0 = std::max(0, static_cast<int>(std::floor(b.center.y() - b.half_height)));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(b.center.y() + b.half_height)));
        for (int y = y0; y <= y1; ++y) {
          for (int x = x0; x <= x1; ++x) {
            const double u = (x - b.center.x()) / b.half_width;
            const double v = (y - b.center.y()) / b.half_height;
            if (u * u + v * v <= 1.0) image.at(y, x) = d.intensity;
          }
        }
      }
      for (const auto& r : out.occluders[c]) fill_rect(image, r);
      for (double& v : image.values()) v = std::clamp(v + noise.normal(0.0, config.noise), 0.0, 1.0);
      frame.images.push_back(std::move(image));
    }
    frame.scene_gt = scene_ground_truth(frame.annotations, ds.scene, ds.scene_sigma);
    ds.frames.push_back(std::move(frame));
  }

  const int n_train = static_cast<int>(std::floor(config.train_fraction * config.frames + 1e-9));
  for (int f = 0; f < config.frames; ++f) (f < n_train ? ds.train_indices : ds.test_indices).push_back(f);
  return out;
}

OracleCounts oracle_counts(const Dataset& dataset) {
  OracleCounts out;
  for (const auto& frame : dataset.frames) {
    out.scene.push_back(static_cast<int>(frame.annotations.people.size()));
    std::vector<int> per_camera(dataset.cameras.size(), 0);
    for (const auto& p : frame.annotations.people) {
      for (std::size_t c = 0; c < dataset.cameras.size(); ++c) {
        // Occluded people count too: only the frustum decides.
        if (head_in_image(dataset.cameras[c], dataset.scene, p.world)) ++per_camera[c];
      }
    }
    out.per_camera.push_back(std::move(per_camera));
  }
  return out;
}

}  // namespace mvcount
