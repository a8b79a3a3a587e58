#include "mvcount/io.hpp"

#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "mvcount/error.hpp"

namespace mvcount {

namespace {

// Next non-empty line with '#' comments stripped; false at end of input.
bool next_line(std::istream& in, std::string& line, int& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
  }
  return false;
}

std::string at_line(int line_no) { return " (line " + std::to_string(line_no) + ")"; }

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read " + path.string());
  return in;
}

}  // namespace

std::vector<CameraModel> read_calibration(std::istream& in) {
  std::vector<CameraModel> cameras;
  std::string line;
  int line_no = 0;
  while (next_line(in, line, line_no)) {
    std::istringstream ss(line);
    CameraModel cam;
    ss >> cam.id >> cam.fx >> cam.fy >> cam.cx >> cam.cy;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) ss >> cam.R(r, c);
    }
    ss >> cam.T.x() >> cam.T.y() >> cam.T.z() >> cam.width >> cam.height;
    require(static_cast<bool>(ss), "calibration: expected 19 fields" + at_line(line_no));
    std::string extra;
    require(!(ss >> extra), "calibration: trailing field '" + extra + "'" + at_line(line_no));
    for (const auto& other : cameras) {
      require(other.id != cam.id, "calibration: duplicate camera id " + cam.id + at_line(line_no));
    }
    try {
      cam.validate();
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + at_line(line_no));
    }
    cameras.push_back(std::move(cam));
  }
  require(!cameras.empty(), "calibration: no cameras");
  return cameras;
}

void write_calibration(std::span<const CameraModel> cameras, std::ostream& out) {
  const auto precision = out.precision(17);
  out << "# id fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz width height\n";
  for (const auto& cam : cameras) {
    out << cam.id << ' ' << cam.fx << ' ' << cam.fy << ' ' << cam.cx << ' ' << cam.cy;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << ' ' << cam.R(r, c);
    }
    out << ' ' << cam.T.x() << ' ' << cam.T.y() << ' ' << cam.T.z() << ' ' << cam.width << ' ' << cam.height << '\n';
  }
  out.precision(precision);
}

SceneFile read_scene_file(std::istream& in) {
  SceneFile file;
  std::string line;
  int line_no = 0;
  bool seen[6] = {};
  while (next_line(in, line, line_no)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    auto read_list = [&](std::vector<int>& dst) {
      int v = 0;
      while (ss >> v) dst.push_back(v);
      ss.clear(std::ios::eofbit);
    };
    if (key == "h_avg") {
      ss >> file.scene.h_avg;
      seen[0] = true;
    } else if (key == "origin_x") {
      ss >> file.scene.origin_x;
      seen[1] = true;
    } else if (key == "origin_y") {
      ss >> file.scene.origin_y;
      seen[2] = true;
    } else if (key == "cell_size") {
      ss >> file.scene.cell_size;
      seen[3] = true;
    } else if (key == "grid_width") {
      ss >> file.scene.grid_width;
      seen[4] = true;
    } else if (key == "grid_height") {
      ss >> file.scene.grid_height;
      seen[5] = true;
    } else if (key == "frames") {
      ss >> file.frames;
    } else if (key == "train") {
      read_list(file.train_indices);
    } else if (key == "test") {
      read_list(file.test_indices);
    } else if (key == "scene_sigma") {
      ss >> file.scene_sigma;
    } else if (key == "view_sigma") {
      ss >> file.view_sigma;
    } else if (key == "seed") {
      ss >> file.seed;
    } else {
      throw Error("scene file: unknown key '" + key + "'" + at_line(line_no));
    }
    require(!ss.fail(), "scene file: bad value for '" + key + "'" + at_line(line_no));
  }
  static const char* kRequired[6] = {"h_avg", "origin_x", "origin_y", "cell_size", "grid_width", "grid_height"};
  for (int i = 0; i < 6; ++i) require(seen[i], std::string("scene file: missing key ") + kRequired[i]);
  file.scene.validate();
  return file;
}

void write_scene_file(const SceneFile& file, std::ostream& out) {
  const auto precision = out.precision(17);
  out << "h_avg " << file.scene.h_avg << '\n'
      << "origin_x " << file.scene.origin_x << '\n'
      << "origin_y " << file.scene.origin_y << '\n'
      << "cell_size " << file.scene.cell_size << '\n'
      << "grid_width " << file.scene.grid_width << '\n'
      << "grid_height " << file.scene.grid_height << '\n'
      << "frames " << file.frames << '\n';
  out << "train";
  for (int i : file.train_indices) out << ' ' << i;
  out << "\ntest";
  for (int i : file.test_indices) out << ' ' << i;
  out << "\nscene_sigma " << file.scene_sigma << '\n'
      << "view_sigma " << file.view_sigma << '\n'
      << "seed " << file.seed << '\n';
  out.precision(precision);
}

AnnotationSet read_annotations(std::istream& in, std::span<const CameraModel> cameras) {
  AnnotationSet set;
  std::string line;
  int line_no = 0;
  while (next_line(in, line, line_no)) {
    std::istringstream ss(line);
    PersonAnnotation person;
    ss >> person.world.x() >> person.world.y();
    require(static_cast<bool>(ss), "annotations: expected ground position" + at_line(line_no));
    person.heads.assign(cameras.size(), std::nullopt);
    std::string id;
    while (ss >> id) {
      std::size_t idx = cameras.size();
      for (std::size_t i = 0; i < cameras.size(); ++i) {
        if (cameras[i].id == id) idx = i;
      }
      require(idx < cameras.size(), "annotations: unknown camera " + id + at_line(line_no));
      std::string u;
      require(static_cast<bool>(ss >> u), "annotations: missing head for " + id + at_line(line_no));
      if (u == "-") continue;
      double v = 0.0;
      require(static_cast<bool>(ss >> v), "annotations: missing head v for " + id + at_line(line_no));
      try {
        person.heads[idx] = Eigen::Vector2d(std::stod(u), v);
      } catch (const std::exception&) {
        throw Error("annotations: bad head u '" + u + "'" + at_line(line_no));
      }
    }
    set.people.push_back(std::move(person));
  }
  return set;
}

void write_annotations(const AnnotationSet& annotations, std::span<const CameraModel> cameras, std::ostream& out) {
  const auto precision = out.precision(17);
  out << "# x y then per camera: id u v (or id - when not visible)\n";
  for (const auto& p : annotations.people) {
    out << p.world.x() << ' ' << p.world.y();
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      out << ' ' << cameras[i].id;
      if (i < p.heads.size() && p.heads[i]) {
        out << ' ' << p.heads[i]->x() << ' ' << p.heads[i]->y();
      } else {
        out << " -";
      }
    }
    out << '\n';
  }
  out.precision(precision);
}

std::string frame_stem(int index) {
  std::ostringstream ss;
  ss << std::setw(4) << std::setfill('0') << index;
  return ss.str();
}

void write_dataset(const Dataset& dataset, std::uint64_t seed, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "annot");
  fs::create_directories(dir / "gt");
  {
    auto out = open_out(dir / "calib.txt");
    write_calibration(dataset.cameras, out);
  }
  {
    SceneFile file{dataset.scene, static_cast<int>(dataset.frames.size()), dataset.train_indices,
                   dataset.test_indices, dataset.scene_sigma, dataset.view_sigma, seed};
    auto out = open_out(dir / "scene.txt");
    write_scene_file(file, out);
  }
  for (std::size_t f = 0; f < dataset.frames.size(); ++f) {
    const Frame& frame = dataset.frames[f];
    const std::string stem = frame_stem(static_cast<int>(f));
    for (std::size_t c = 0; c < dataset.cameras.size(); ++c) {
      save_mv2d(frame.images[c], dir / "frames" / (stem + "_" + dataset.cameras[c].id + ".mv2d"));
    }
    auto out = open_out(dir / "annot" / (stem + ".txt"));
    write_annotations(frame.annotations, dataset.cameras, out);
    save_mv2d(frame.scene_gt, dir / "gt" / (stem + "_scene.mv2d"));
    for (std::size_t c = 0; c < dataset.cameras.size(); ++c) {
      const Map2D view = view_ground_truth(frame, dataset.cameras[c], static_cast<int>(c), 1, dataset.view_sigma);
      save_mv2d(view, dir / "gt" / (stem + "_" + dataset.cameras[c].id + ".mv2d"));
    }
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset dataset;
  {
    auto in = open_in(dir / "calib.txt");
    dataset.cameras = read_calibration(in);
  }
  SceneFile file;
  {
    auto in = open_in(dir / "scene.txt");
    file = read_scene_file(in);
  }
  dataset.scene = file.scene;
  dataset.train_indices = file.train_indices;
  dataset.test_indices = file.test_indices;
  dataset.scene_sigma = file.scene_sigma;
  dataset.view_sigma = file.view_sigma;
  for (int f = 0; f < file.frames; ++f) {
    Frame frame;
    const std::string stem = frame_stem(f);
    for (const auto& cam : dataset.cameras) {
      Map2D image = load_mv2d(dir / "frames" / (stem + "_" + cam.id + ".mv2d"));
      require(image.width() == cam.width && image.height() == cam.height,
              "dataset: frame " + stem + " of camera " + cam.id + " does not match the calibration size");
      image.set_tag(GridTag::image(cam.id));
      frame.images.push_back(std::move(image));
    }
    {
      auto in = open_in(dir / "annot" / (stem + ".txt"));
      frame.annotations = read_annotations(in, dataset.cameras);
    }
    const auto gt_path = dir / "gt" / (stem + "_scene.mv2d");
    if (std::filesystem::exists(gt_path)) {
      frame.scene_gt = load_mv2d(gt_path);
    } else {
      frame.scene_gt = scene_ground_truth(frame.annotations, dataset.scene, dataset.scene_sigma);
    }
    dataset.frames.push_back(std::move(frame));
  }
  for (int i : dataset.train_indices) require(i >= 0 && i < file.frames, "dataset: train index out of range");
  for (int i : dataset.test_indices) require(i >= 0 && i < file.frames, "dataset: test index out of range");
  return dataset;
}

}  // namespace mvcount
