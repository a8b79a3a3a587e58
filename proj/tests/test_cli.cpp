#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "mvcount/io.hpp"
#include "mvcount/map2d.hpp"
#include "mvcount_cli/cli.hpp"

namespace mvcount {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mvcount");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// "key=value" lines of the tool's output.
std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = testing::scratch_dir("cli");
    const Result r = run_cli({"gen", "--out", (root_ / "demo").string(), "--frames", "2", "--seed", "5"});
    ASSERT_EQ(r.code, 0) << r.err;
    const Result t = run_cli({"gen", "--out", (root_ / "toy").string(), "--preset", "toy", "--frames", "5",
                              "--people-min", "3", "--people-max", "6", "--seed", "6"});
    ASSERT_EQ(t.code, 0) << t.err;
  }
  static fs::path root_;
};
fs::path Cli::root_;

TEST_F(Cli, GenWritesTheDatasetLayout) {
  const fs::path demo = root_ / "demo";
  EXPECT_TRUE(fs::exists(demo / "calib.txt"));
  EXPECT_TRUE(fs::exists(demo / "scene.txt"));
  EXPECT_TRUE(fs::exists(demo / "frames" / "0001_cam3.mv2d"));
  EXPECT_TRUE(fs::exists(demo / "annot" / "0000.txt"));
  const Dataset d = load_dataset(demo);
  EXPECT_EQ(d.cameras[0].width, 256);
  const Dataset t = load_dataset(root_ / "toy");
  EXPECT_EQ(t.cameras[0].width, 64);
  EXPECT_EQ(t.frames.size(), 5u);
  for (const auto& f : t.frames) {
    EXPECT_GE(f.annotations.people.size(), 3u);
    EXPECT_LE(f.annotations.people.size(), 6u);
  }
}

TEST_F(Cli, ProjectNormalizePreservesMass) {
  const Dataset d = load_dataset(root_ / "demo");
  // A Gaussian on the head-plane projection of a point near the grid centre.
  const Eigen::Vector2d g = d.scene.cell_center(20, 20);
  const auto px = d.cameras[0].project(Eigen::Vector3d(g.x(), g.y(), d.scene.h_avg));
  ASSERT_TRUE(px);
  const Result r = run_cli({"project", "--scene", (root_ / "demo").string(), "--camera", "cam1", "--gaussian",
                            std::to_string(px->x()), std::to_string(px->y()), "--normalize", "--out",
                            (root_ / "proj.mv2d").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = key_values(r.out);
  const double pre = std::stod(kv.at("pre_sum"));
  const double post = std::stod(kv.at("post_sum"));
  EXPECT_NEAR(pre, 1.0, 1e-6);
  EXPECT_NEAR(post, pre, 0.02 * pre);
  const Map2D ground = load_mv2d(root_ / "proj.mv2d");
  EXPECT_EQ(ground.width(), d.scene.grid_width);
  EXPECT_NEAR(ground.sum(), post, 1e-4);
}

TEST_F(Cli, ProjectFrameGroundTruth) {
  const Result r = run_cli({"project", "--scene", (root_ / "toy").string(), "--frame", "1", "--stride", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = key_values(r.out);
  EXPECT_EQ(kv.at("camera"), "cam1");
  EXPECT_TRUE(kv.count("projected_sum"));
  EXPECT_FALSE(kv.count("post_sum"));
}

TEST_F(Cli, ScaleMasksPartitionUnity) {
  const fs::path out = root_ / "masks";
  const Result r =
      run_cli({"masks", "--scene", (root_ / "demo").string(), "--out", out.string(), "--type", "scale", "--stride", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("cam2 scale masks=3"), std::string::npos);
  EXPECT_FALSE(fs::exists(out / "distance_cam1.mv2d"));
  for (const std::string cam : {"cam1", "cam2", "cam3"}) {
    std::vector<Map2D> masks;
    for (int i = 0; i < 3; ++i) masks.push_back(load_mv2d(out / ("scale_" + cam + "_" + std::to_string(i) + ".mv2d")));
    for (int y = 0; y < masks[0].height(); ++y) {
      for (int x = 0; x < masks[0].width(); ++x) {
        if (!masks[0].valid(y, x)) continue;
        double s = 0.0;
        for (const auto& m : masks) {
          EXPECT_TRUE(m.at(y, x) == 0.0 || m.at(y, x) == 1.0);
          s += m.at(y, x);
        }
        ASSERT_EQ(s, 1.0) << cam << " " << x << "," << y;
      }
    }
    EXPECT_TRUE(fs::exists(out / ("scale_" + cam + "_index.pgm")));
  }
}

TEST_F(Cli, AllMasks) {
  const fs::path out = root_ / "all_masks";
  const Result r = run_cli({"masks", "--scene", (root_ / "toy").string(), "--out", out.string(), "--q", "90"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "distance_cam1.pgm"));
  EXPECT_TRUE(fs::exists(out / "rotation_cam3_quantized.mv2d"));
  const Map2D q = load_mv2d(out / "rotation_cam3_quantized.mv2d");
  for (int y = 0; y < q.height(); ++y) {
    for (int x = 0; x < q.width(); ++x) {
      if (q.valid(y, x)) {
        EXPECT_EQ(std::fmod(q.at(y, x), 90.0), 0.0);
      }
    }
  }
  EXPECT_NE(r.out.find("ref_distance="), std::string::npos);
}

TEST_F(Cli, TrainEvalRender) {
  const fs::path scene = root_ / "toy";
  const fs::path model = root_ / "model";
  Result r = run_cli({"train", "--scene", scene.string(), "--variant", "late", "--out", model.string(), "--iters", "4",
                      "--lr", "0.001"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("trained late for 4 steps"), std::string::npos);
  EXPECT_TRUE(fs::exists(model / "stage1.mvnp"));
  EXPECT_TRUE(fs::exists(model / "model.mvnp"));
  EXPECT_TRUE(fs::exists(model / "loss.tsv"));

  r = run_cli({"eval", "--scene", scene.string(), "--model", model.string(), "--out", (root_ / "report.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("method\tscene\tcam1", 0), 0u);
  const auto kv = key_values(r.out);
  EXPECT_EQ(kv.at("method"), "late");
  EXPECT_EQ(kv.at("frames"), "2");
  std::ifstream report(root_ / "report.txt");
  std::stringstream saved;
  saved << report.rdbuf();
  EXPECT_EQ(saved.str(), r.out);

  const fs::path renders = root_ / "render";
  r = run_cli({"render", "--scene", scene.string(), "--model", model.string(), "--out", renders.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(renders / "0003_pred.pgm"));
  EXPECT_TRUE(fs::exists(renders / "0004_gt.pgm"));
  const Map2D pred = load_mv2d(renders / "0004_scene.mv2d");

  // Rendered predictions can be scored again without the model.
  r = run_cli({"eval", "--scene", scene.string(), "--predictions", renders.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(key_values(r.out).at("mae.scene").substr(0, 4), kv.at("mae.scene").substr(0, 4));
  EXPECT_EQ(pred.width(), 40);
}

TEST_F(Cli, DmapTrainAndEval) {
  const fs::path scene = root_ / "toy";
  const fs::path model = root_ / "dmap";
  Result r = run_cli({"train", "--scene", scene.string(), "--variant", "dmap", "--out", model.string(), "--iters", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"eval", "--scene", scene.string(), "--model", model.string(), "--split", "all"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(key_values(r.out).at("method"), "dmap");
  EXPECT_EQ(key_values(r.out).at("frames"), "5");
  r = run_cli({"render", "--scene", scene.string(), "--model", model.string(), "--out", (root_ / "nope").string()});
  EXPECT_NE(r.code, 0);
}

TEST_F(Cli, BadInputsFail) {
  EXPECT_NE(run_cli({}).code, 0);
  EXPECT_NE(run_cli({"frobnicate"}).code, 0);
  EXPECT_NE(run_cli({"gen"}).code, 0);  // --out is required
  EXPECT_NE(run_cli({"gen", "--out", (root_ / "x").string(), "--cameras", "9"}).code, 0);
  EXPECT_NE(run_cli({"gen", "--out", (root_ / "x").string(), "--preset", "huge"}).code, 0);
  EXPECT_NE(run_cli({"masks", "--scene", (root_ / "toy").string(), "--out", (root_ / "m").string(), "--type", "x"}).code,
            0);
  EXPECT_NE(run_cli({"project", "--scene", (root_ / "missing").string()}).code, 0);
  EXPECT_NE(run_cli({"train", "--scene", (root_ / "toy").string(), "--out", (root_ / "t").string(), "--variant",
                     "bogus"})
                .code,
            0);
  const Result r = run_cli({"eval", "--scene", (root_ / "toy").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

}  // namespace
}  // namespace mvcount
