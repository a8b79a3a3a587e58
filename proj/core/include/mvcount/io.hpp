#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mvcount/dataset.hpp"
#include "mvcount/geometry.hpp"

namespace mvcount {

// Calibration text: '#' comments, one camera per line:
//   <id> fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz width height
std::vector<CameraModel> read_calibration(std::istream& in);
void write_calibration(std::span<const CameraModel> cameras, std::ostream& out);

// scene.txt: "key value" lines. Scene keys are required; dataset keys are optional.
struct SceneFile {
  SceneConfig scene;
  int frames = 0;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
  double scene_sigma = 3.0;
  double view_sigma = 3.0;
  std::uint64_t seed = 0;
};
SceneFile read_scene_file(std::istream& in);
void write_scene_file(const SceneFile& file, std::ostream& out);

// One person per line: "x y" (mm), then per camera "id u v" or "id -".
AnnotationSet read_annotations(std::istream& in, std::span<const CameraModel> cameras);
void write_annotations(const AnnotationSet& annotations, std::span<const CameraModel> cameras, std::ostream& out);

// Directory layout: calib.txt, scene.txt, frames/NNNN_<cam>.mv2d, annot/NNNN.txt,
// gt/NNNN_scene.mv2d, gt/NNNN_<cam>.mv2d (full-resolution view density, informational).
void write_dataset(const Dataset& dataset, std::uint64_t seed, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

std::string frame_stem(int index);  // zero-padded "NNNN"

}  // namespace mvcount
