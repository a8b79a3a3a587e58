#include "mvcount_cli/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "mvcount/density.hpp"
#include "mvcount/error.hpp"
#include "mvcount/io.hpp"
#include "mvcount/net.hpp"
#include "mvcount/pipelines.hpp"
#include "mvcount/rotation_select.hpp"
#include "mvcount/sampler.hpp"
#include "mvcount/scale_select.hpp"
#include "mvcount/scenesim.hpp"

namespace mvcount::cli {

namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kDefaultSeed = 2024;

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%#.6g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trimmed(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

/// Flags shared by several subcommands; unset optionals fall back to the config file,
/// then to the built-in defaults.
struct Options {
  std::string scene;
  std::string pipeline;
  std::string variant;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> iters;
  std::optional<double> lr;
  std::optional<double> q;
  std::optional<int> scales;
  std::optional<double> zoom;
  std::optional<double> clip;

  // gen
  std::string preset = "demo";
  int frames = 100;
  int cameras = 3;
  int occluders = 0;
  int people_min = 5;
  int people_max = 20;

  // masks
  std::string mask_type = "all";
  int stride = 1;

  // project
  std::string camera;
  std::vector<double> gaussian;
  std::string map;
  std::optional<int> frame;
  std::optional<double> sigma;
  bool normalize = false;

  // eval / render
  std::string model;
  std::string predictions;
  std::string split = "test";
};

PipelineConfig effective_config(const Options& o) {
  PipelineConfig c;
  if (!o.pipeline.empty()) c = load_pipeline_config(o.pipeline, c);
  if (!o.variant.empty() && o.variant != "dmap") c.variant = parse_variant(o.variant);
  if (o.seed) c.seed = *o.seed;
  if (o.iters) {
    c.schedule.stage1_iters = *o.iters / 2;
    c.schedule.stage2_iters = *o.iters / 4;
    c.schedule.finetune_iters = *o.iters - c.schedule.stage1_iters - c.schedule.stage2_iters;
  }
  if (o.lr) {
    c.schedule.lr_stage1 = *o.lr;
    c.schedule.lr_stage2_start = *o.lr;
    c.schedule.lr_stage2_end = *o.lr / 2;
    c.schedule.lr_finetune = *o.lr / 2;
  }
  if (o.q) c.rotation.q = *o.q;
  if (o.scales) c.pyramid.n_scales = *o.scales;
  if (o.zoom) c.pyramid.zoom = *o.zoom;
  if (o.clip) c.schedule.clip_norm = *o.clip;
  c.validate();
  return c;
}

std::vector<int> split_indices(const Dataset& ds, const std::string& split) {
  if (split == "test") return ds.test_indices;
  if (split == "train") return ds.train_indices;
  require(split == "all", "unknown split '" + split + "' (expected test, train or all)");
  std::vector<int> all(ds.frames.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return all;
}

int cmd_gen(const Options& o, std::ostream& out) {
  SimConfig sc = o.preset == "toy" ? SimConfig::toy() : SimConfig{};
  sc.frames = o.frames;
  sc.n_cameras = o.cameras;
  sc.occluders = o.occluders;
  sc.people_min = o.people_min;
  sc.people_max = o.people_max;
  const std::uint64_t seed = o.seed.value_or(kDefaultSeed);
  const SimScene sim = generate(sc, seed);
  write_dataset(sim.dataset, seed, o.out);
  std::size_t people = 0;
  for (const auto& f : sim.dataset.frames) people += f.annotations.people.size();
  out << "wrote " << sim.dataset.frames.size() << " frames (" << sim.dataset.train_indices.size() << " train, "
      << sim.dataset.test_indices.size() << " test, " << people << " people) to " << o.out << '\n';
  return 0;
}

int cmd_masks(const Options& o, std::ostream& out) {
  const Dataset ds = load_dataset(o.scene);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  const bool all = o.mask_type == "all";
  require(all || o.mask_type == "distance" || o.mask_type == "scale" || o.mask_type == "rotation",
          "unknown mask type '" + o.mask_type + "' (expected distance, scale, rotation or all)");
  PyramidConfig pyramid;
  pyramid.n_scales = o.scales.value_or(pyramid.n_scales);
  pyramid.zoom = o.zoom.value_or(pyramid.zoom);
  pyramid.ref_scale = std::min(pyramid.ref_scale, pyramid.n_scales - 1);
  pyramid.ref_distance = reference_distance(ds.cameras, ds.scene);
  pyramid.validate();
  const double q = o.q.value_or(RotationConfig{}.q);
  out << "ref_distance=" << fmt6(pyramid.ref_distance) << '\n';
  for (const auto& cam : ds.cameras) {
    const Map2D distance = distance_map(cam, ds.scene, o.stride);
    if (all || o.mask_type == "distance") {
      save_mv2d(distance, dir / ("distance_" + cam.id + ".mv2d"));
      save_pgm(distance, dir / ("distance_" + cam.id + ".pgm"));
      out << cam.id << " distance valid=" << distance.valid_count() << '\n';
    }
    if (all || o.mask_type == "scale") {
      const ScaleMasks masks = fixed_scale_map(distance, pyramid);
      for (std::size_t i = 0; i < masks.masks.size(); ++i) {
        const std::string stem = "scale_" + cam.id + "_" + std::to_string(i);
        save_mv2d(masks.masks[i], dir / (stem + ".mv2d"));
        save_pgm(masks.masks[i], dir / (stem + ".pgm"));
      }
      save_pgm(masks.index, dir / ("scale_" + cam.id + "_index.pgm"));
      out << cam.id << " scale masks=" << masks.masks.size() << '\n';
    }
    if (all || o.mask_type == "rotation") {
      const Map2D angles = view_ray_angle_map(cam, ds.scene);
      const RotationMasks rot = quantize_angle_map(angles, q);
      save_mv2d(angles, dir / ("rotation_" + cam.id + "_raw.mv2d"));
      save_pgm(angles, dir / ("rotation_" + cam.id + "_raw.pgm"));
      save_mv2d(rot.quantized, dir / ("rotation_" + cam.id + "_quantized.mv2d"));
      save_pgm(rot.quantized, dir / ("rotation_" + cam.id + "_quantized.pgm"));
      for (std::size_t i = 0; i < rot.masks.size(); ++i) {
        save_mv2d(rot.masks[i], dir / ("rotation_" + cam.id + "_" + std::to_string(i) + ".mv2d"));
      }
      out << cam.id << " rotation angles=" << rot.angles.size() << '\n';
    }
  }
  return 0;
}

int cmd_project(const Options& o, std::ostream& out) {
  const Dataset ds = load_dataset(o.scene);
  const std::string id = o.camera.empty() ? ds.cameras.front().id : o.camera;
  const int ci = ds.camera_index(id);
  const CameraModel& cam = ds.cameras[ci];
  const double sigma_px = o.sigma.value_or(ds.view_sigma);
  Map2D view;
  if (!o.gaussian.empty()) {
    require(o.gaussian.size() == 2, "--gaussian expects two values: u v");
    const ImageRaster raster = image_raster(cam, o.stride);
    const Eigen::Vector2d centre = pixel_to_raster({o.gaussian[0], o.gaussian[1]}, o.stride);
    view = render_density(std::span(&centre, 1), sigma_px / o.stride, raster.width, raster.height,
                          GridTag::image(cam.id, o.stride))
               .map;
  } else if (!o.map.empty()) {
    view = load_mv2d(o.map);
    const ImageRaster raster = image_raster(cam, o.stride);
    require(view.width() == raster.width && view.height() == raster.height,
            "--map size does not match camera " + cam.id + " at stride " + std::to_string(o.stride));
    view.set_tag(GridTag::image(cam.id, o.stride));
  } else {
    const int f = o.frame.value_or(0);
    require(f >= 0 && f < static_cast<int>(ds.frames.size()), "--frame out of range");
    view = view_ground_truth(ds.frames[f], cam, ci, o.stride, sigma_px);
  }
  const CorrespondenceField field = build_correspondence(cam, ds.scene, FieldDirection::GroundToImage, o.stride);
  Map2D ground = sample(view, field);
  out << "camera=" << cam.id << '\n' << "pre_sum=" << fmt6(view.sum()) << '\n';
  out << "projected_sum=" << fmt6(ground.sum()) << '\n';
  if (o.normalize) {
    ground = apply_normalization(ground, normalization_map(cam, ds.scene, sigma_px / o.stride, o.stride));
    out << "post_sum=" << fmt6(ground.sum()) << '\n';
  }
  if (!o.out.empty()) {
    save_mv2d(ground, o.out);
    out << "wrote " << o.out << '\n';
  }
  return 0;
}

void write_loss_trace(const std::vector<LossRecord>& trace, const fs::path& path) {
  std::ostringstream ss;
  ss << "stage\tstep\tloss\n";
  for (const auto& r : trace) ss << r.stage << '\t' << r.step << '\t' << fmt6(r.loss) << '\n';
  write_text(path, ss.str());
}

int cmd_train(const Options& o, std::ostream& out) {
  const Dataset ds = load_dataset(o.scene);
  const PipelineConfig config = effective_config(o);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  std::ostringstream cfg;
  write_pipeline_config(config, cfg);
  write_text(dir / "pipeline.txt", cfg.str());
  const auto& sch = config.schedule;
  if (o.variant == "dmap") {
    DmapBaseline baseline(config, ds.cameras, ds.scene);
    const int iters = sch.stage1_iters + sch.stage2_iters + sch.finetune_iters;
    const auto trace = baseline.train(ds, ds.train_indices, iters, sch.lr_stage1, sch.clip_norm);
    net::save_parameters(baseline.params(), dir / "model.mvnp");
    write_loss_trace(trace, dir / "loss.tsv");
    write_text(dir / "method.txt", "dmap\n");
    out << "trained dmap for " << trace.size() << " steps\n";
    return 0;
  }
  FusionPipeline pipeline(config, ds.cameras, ds.scene);
  const auto trace = train_two_stage(pipeline, ds, ds.train_indices, sch, [&](int stage) {
    net::save_parameters(pipeline.params(), dir / ("stage" + std::to_string(stage) + ".mvnp"));
  });
  net::save_parameters(pipeline.params(), dir / "model.mvnp");
  write_loss_trace(trace, dir / "loss.tsv");
  write_text(dir / "method.txt", to_string(config.variant) + "\n");
  out << "trained " << to_string(config.variant) << " for " << trace.size() << " steps";
  if (!trace.empty()) out << ", final loss " << fmt6(trace.back().loss);
  out << '\n';
  return 0;
}

/// A trained model directory: either a fusion pipeline or the Dmap baseline.
struct LoadedModel {
  std::unique_ptr<FusionPipeline> pipeline;
  std::unique_ptr<DmapBaseline> baseline;
};

LoadedModel load_model(const fs::path& dir, const Dataset& ds) {
  const PipelineConfig config = load_pipeline_config(dir / "pipeline.txt");
  const std::string method = trimmed(read_text(dir / "method.txt"));
  const net::Parameters saved = net::load_parameters(dir / "model.mvnp");
  LoadedModel m;
  if (method == "dmap") {
    m.baseline = std::make_unique<DmapBaseline>(config, ds.cameras, ds.scene);
    net::copy_parameters(saved, m.baseline->params());
  } else {
    m.pipeline = std::make_unique<FusionPipeline>(config, ds.cameras, ds.scene);
    net::copy_parameters(saved, m.pipeline->params());
  }
  return m;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const Dataset ds = load_dataset(o.scene);
  const std::vector<int> indices = split_indices(ds, o.split);
  EvaluationReport report;
  if (!o.predictions.empty()) {
    const fs::path dir = o.predictions;
    report = evaluate_counts("predictions", ds, indices, [&](const Frame& frame) {
      const auto index = static_cast<int>(&frame - ds.frames.data());
      const Map2D scene = load_mv2d(dir / (frame_stem(index) + "_scene.mv2d"));
      require(scene.width() == ds.scene.grid_width && scene.height() == ds.scene.grid_height,
              "prediction " + frame_stem(index) + " does not match the ground grid");
      CountPrediction p;
      p.scene = scene.sum();
      for (const auto& cam : ds.cameras) p.per_camera.push_back(camera_region_count(scene, cam, ds.scene));
      return p;
    });
  } else {
    require(!o.model.empty(), "eval needs --model DIR or --predictions DIR");
    const LoadedModel m = load_model(o.model, ds);
    report = m.pipeline ? evaluate(*m.pipeline, ds, indices) : evaluate(*m.baseline, ds, indices);
  }
  const std::string text = report.to_text();
  out << text;
  if (!o.out.empty()) write_text(o.out, text);
  return 0;
}

int cmd_render(const Options& o, std::ostream& out) {
  const Dataset ds = load_dataset(o.scene);
  require(!o.model.empty(), "render needs --model DIR");
  const LoadedModel m = load_model(o.model, ds);
  require(m.pipeline != nullptr, "render needs a fusion model (the dmap baseline has no scene map)");
  std::vector<int> frames;
  if (o.frame) {
    frames.push_back(*o.frame);
  } else {
    frames = split_indices(ds, o.split);
  }
  const fs::path dir = o.out;
  fs::create_directories(dir);
  for (int f : frames) {
    require(f >= 0 && f < static_cast<int>(ds.frames.size()), "--frame out of range");
    const std::string stem = frame_stem(f);
    const Map2D pred = m.pipeline->run(ds.frames[f].images);
    save_mv2d(pred, dir / (stem + "_scene.mv2d"));
    save_pgm(pred, dir / (stem + "_pred.pgm"));
    save_pgm(ds.frames[f].scene_gt, dir / (stem + "_gt.pgm"));
    out << stem << " predicted=" << fmt6(pred.sum()) << " truth=" << fmt6(ds.frames[f].scene_gt.sum()) << '\n';
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-view crowd counting on a ground-plane density map"};
  app.require_subcommand(1);
  app.footer(
      "Settings resolve as: command-line flag, then the --pipeline config file, then built-in defaults.\n"
      "--iters N splits as N/2 stage-1, N/4 stage-2 and the rest fine-tuning steps; --lr X sets the\n"
      "stage-1 rate X and halves it for the second half of stage 2 and for fine-tuning.");
  Options o;

  auto add_scene = [&](CLI::App* sub) { sub->add_option("--scene", o.scene, "Scene directory")->required(); };
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", o.seed, "Random seed"); };

  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic multi-view scene");
  gen->add_option("--out", o.out, "Output scene directory")->required();
  add_seed(gen);
  gen->add_option("--preset", o.preset, "demo (256x192 views) or toy (64x48 views)")
      ->check(CLI::IsMember({"demo", "toy"}));
  gen->add_option("--frames", o.frames, "Frame count")->check(CLI::PositiveNumber);
  gen->add_option("--cameras", o.cameras, "Camera count (2-5)")->check(CLI::Range(2, 5));
  gen->add_option("--occluders", o.occluders, "Opaque rectangles per camera")->check(CLI::NonNegativeNumber);
  gen->add_option("--people-min", o.people_min, "Fewest people per frame");
  gen->add_option("--people-max", o.people_max, "Most people per frame");

  CLI::App* masks = app.add_subcommand("masks", "Export distance, scale and rotation selection masks");
  add_scene(masks);
  masks->add_option("--out", o.out, "Output directory")->required();
  masks->add_option("--type", o.mask_type, "distance, scale, rotation or all");
  masks->add_option("--scales", o.scales, "Pyramid levels");
  masks->add_option("--zoom", o.zoom, "Downsampling ratio between levels (> 1)");
  masks->add_option("--q", o.q, "Rotation quantisation step in degrees");
  masks->add_option("--stride", o.stride, "Image raster stride for distance and scale maps")
      ->check(CLI::PositiveNumber);

  CLI::App* project = app.add_subcommand("project", "Project a view map to the ground plane and report sums");
  add_scene(project);
  project->add_option("--camera", o.camera, "Camera id (default: first camera)");
  project->add_option("--gaussian", o.gaussian, "Render one Gaussian at pixel U V")->expected(2);
  project->add_option("--map", o.map, "MV2D view map on the camera's stride raster");
  project->add_option("--frame", o.frame, "Use this frame's view ground truth (default 0)");
  project->add_option("--stride", o.stride, "View raster stride")->check(CLI::PositiveNumber);
  project->add_option("--sigma", o.sigma, "Gaussian std in full-resolution pixels");
  project->add_flag("--normalize", o.normalize, "Apply projection normalization");
  project->add_option("--out", o.out, "Write the projected ground map (MV2D)");

  CLI::App* train = app.add_subcommand("train", "Train a fusion pipeline or the dmap baseline");
  add_scene(train);
  train->add_option("--pipeline", o.pipeline, "Pipeline config file");
  train->add_option("--variant", o.variant, "late, naive, mvms, mvmsr or dmap")
      ->check(CLI::IsMember({"late", "naive", "mvms", "mvmsr", "dmap"}));
  add_seed(train);
  train->add_option("--out", o.out, "Model directory")->required();
  train->add_option("--iters", o.iters, "Total training steps")->check(CLI::NonNegativeNumber);
  train->add_option("--lr", o.lr, "Base learning rate");
  train->add_option("--clip", o.clip, "Gradient-norm cap (0 = off)");
  train->add_option("--q", o.q, "Rotation quantisation step in degrees");
  train->add_option("--scales", o.scales, "Pyramid levels");
  train->add_option("--zoom", o.zoom, "Downsampling ratio between levels (> 1)");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate scene and per-camera MAE/NAE");
  add_scene(eval);
  eval->add_option("--model", o.model, "Model directory written by train");
  eval->add_option("--predictions", o.predictions, "Directory of NNNN_scene.mv2d predictions");
  eval->add_option("--split", o.split, "test, train or all");
  eval->add_option("--out", o.out, "Also write the report to this file");

  CLI::App* render = app.add_subcommand("render", "Write predicted and ground-truth scene heatmaps");
  add_scene(render);
  render->add_option("--model", o.model, "Model directory written by train")->required();
  render->add_option("--out", o.out, "Output directory")->required();
  render->add_option("--frame", o.frame, "Single frame index (default: the split)");
  render->add_option("--split", o.split, "test, train or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    if (gen->parsed()) return cmd_gen(o, out);
    if (masks->parsed()) return cmd_masks(o, out);
    if (project->parsed()) return cmd_project(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (render->parsed()) return cmd_render(o, out);
  } catch (const std::exception& e) {
    err << "mvcount: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace mvcount::cli
