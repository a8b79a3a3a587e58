#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mvcount/dataset.hpp"
#include "mvcount/density.hpp"
#include "mvcount/geometry.hpp"
#include "mvcount/net.hpp"
#include "mvcount/rotation_select.hpp"
#include "mvcount/scale_select.hpp"

namespace mvcount {

enum class Variant { Late, NaiveEarly, Mvms, Mvmsr };

std::string to_string(Variant variant);
Variant parse_variant(const std::string& text);  // late | naive | mvms | mvmsr

struct TrainSchedule {
  int stage1_iters = 0;
  int stage2_iters = 0;
  int finetune_iters = 0;
  double lr_stage1 = 1e-4;
  double lr_stage2_start = 1e-4;
  double lr_stage2_end = 5e-5;  // reached at the midpoint of stage 2
  double lr_finetune = 5e-5;
  double clip_norm = 0.0;  // global gradient-norm cap per step, 0 = off
};

struct PipelineConfig {
  Variant variant = Variant::Mvms;
  std::vector<std::string> cameras;  // empty = every camera of the scene
  double width_scale = 1.0;          // multiplies Table-style channel widths
  PyramidConfig pyramid{3, 2.0, 1, 0.0};  // ref_distance <= 0 means "derive from cameras"
  bool learnable_scale = true;
  RotationConfig rotation;
  int rotation_layers = 3;
  int rotation_channels = 0;  // 0 = same as the backbone features
  int aux_width1 = 32;
  int aux_width2 = 32;
  double view_sigma = 3.0;    // full-resolution pixels
  double scene_sigma = 3.0;   // ground cells
  double density_scale = 1.0;  // training targets are GT * density_scale
  bool shared_backbone = true;
  TrainSchedule schedule;
  std::uint64_t seed = 1;

  void validate() const;
};

// "key = value" lines, '#' comments. Unknown keys are an error.
PipelineConfig parse_pipeline_config(std::istream& in, PipelineConfig base = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base = {});
void write_pipeline_config(const PipelineConfig& config, std::ostream& out);

/// Per-view backbone: `front` yields features (the first four convs), `tail` turns them
/// into a view density. Any pair of specs with 1-channel input works.
struct BackboneSpec {
  net::ConvNetSpec front;
  net::ConvNetSpec tail;
  int feature_stride = 2;
  int density_stride = 4;
};

int scaled_width(int width, double scale);
BackboneSpec fcn7_backbone(const std::string& name, double width_scale, std::uint64_t seed);
net::ConvNetSpec fusion_head(const std::string& name, int in_channels, double width_scale, std::uint64_t seed);

class FusionPipeline {
 public:
  struct Pass;

  FusionPipeline(PipelineConfig config, std::vector<CameraModel> cameras, SceneConfig scene);
  ~FusionPipeline();
  FusionPipeline(FusionPipeline&&) noexcept;
  FusionPipeline& operator=(FusionPipeline&&) noexcept;

  const PipelineConfig& config() const { return config_; }
  const std::vector<CameraModel>& cameras() const { return cameras_; }
  const SceneConfig& scene() const { return scene_; }
  net::Parameters& params() { return params_; }
  const net::Parameters& params() const { return params_; }

  const BackboneSpec& backbone(int view) const;
  const net::ConvNetSpec& head() const { return head_; }
  const net::ConvNetSpec* aux() const;
  // Raster stride of the auxiliary view predictions (late: density, early: features).
  int view_output_stride() const;
  const PyramidConfig& pyramid() const { return pyramid_; }
  const NormalizationMap& normalization(int view) const;
  const RotationMasks& rotation_masks(int view) const;
  LearnableScaleParams scale_params() const;

  // Scene density in count units.
  Map2D run(std::span<const Map2D> frames) const;

  struct Outputs {
    Map2D scene;               // scaled units
    std::vector<Map2D> views;  // auxiliary view densities (scaled), when requested
  };
  Outputs forward(std::span<const Map2D> frames, bool with_views, Pass* pass = nullptr) const;
  void backward(const Pass& pass, const Map2D& d_scene, std::span<const Map2D> d_views);

  // Squared-error loss of one frame (scene, plus view losses when `with_aux`).
  double loss(const Frame& frame, bool with_aux) const;
  // Same loss; gradients are accumulated into params().
  double accumulate_gradient(const Frame& frame, bool with_aux);

  Map2D scaled_scene_target(const Frame& frame) const;
  Map2D scaled_view_target(const Frame& frame, int view) const;

 private:
  void select_frames(std::span<const Map2D> frames, std::vector<const Map2D*>& out) const;

  PipelineConfig config_;
  std::vector<CameraModel> cameras_;
  std::vector<int> camera_slots_;  // index of each pipeline view in the frame's camera list
  SceneConfig scene_;
  PyramidConfig pyramid_;
  std::vector<BackboneSpec> backbones_;  // one per view (identical names when shared)
  net::ConvNetSpec head_;
  std::unique_ptr<net::ConvNetSpec> aux_;
  RotationLayerShape rotation_shape_;
  std::vector<RotationLayerShape> rotation_shapes_;
  net::Parameters params_;
  std::vector<CorrespondenceField> projections_;  // ground <- view raster
  std::vector<NormalizationMap> normalizations_;
  std::vector<Map2D> distances_;                  // feature raster
  std::vector<ScaleMasks> fixed_masks_;
  std::vector<RotationMasks> rotation_masks_;
  std::vector<std::vector<CorrespondenceField>> level_resize_;  // per view, per level
};

/// Intermediate values of one forward pass, consumed by FusionPipeline::backward.
struct FusionPipeline::Pass {
  struct View {
    std::vector<net::ForwardCache> front;  // one per pyramid level (one level without MVMS)
    std::vector<Map2D> levels;             // level features on the level-0 raster (MVMS)
    ScaleMasks masks;                      // masks used for the merge (MVMS)
    net::ForwardCache tail;                // late fusion only
    net::ForwardCache aux;                 // early fusion with views requested
    std::vector<RotationLayerCache> rotation;
    std::vector<Map2D> rotation_out;       // pre-activation output of each rotation layer
  };
  std::vector<View> views;
  net::ForwardCache head;
  bool with_views = false;
};

struct LossRecord {
  int stage = 0;  // 1, 2, or 3 (end-to-end fine-tuning)
  int step = 0;
  double loss = 0.0;
};

// Stage 1: scene + auxiliary view losses, everything trainable. Stage 2: scene loss,
// backbones frozen, learning rate stepping from start to end at the midpoint. Stage 3:
// end-to-end fine-tuning on the scene loss. Samples cycle through a seeded shuffle.
// Throws on a non-finite loss, naming the step.
std::vector<LossRecord> train_two_stage(FusionPipeline& pipeline, const Dataset& dataset,
                                        std::span<const int> train_indices, const TrainSchedule& schedule,
                                        const std::function<void(int stage)>& on_stage_end = {});

/// Single-view density baseline fused into a count with W_i = 1/t weights.
class DmapBaseline {
 public:
  DmapBaseline(PipelineConfig config, std::vector<CameraModel> cameras, SceneConfig scene);

  net::Parameters& params() { return params_; }
  const net::Parameters& params() const { return params_; }
  const PipelineConfig& config() const { return config_; }

  // View densities in count units on the backbone's density raster.
  std::vector<Map2D> view_densities(std::span<const Map2D> frames) const;
  double count(std::span<const Map2D> frames) const;

  std::vector<LossRecord> train(const Dataset& dataset, std::span<const int> train_indices, int iters, double lr,
                                double clip_norm = 0.0);

 private:
  PipelineConfig config_;
  std::vector<CameraModel> cameras_;
  std::vector<int> camera_slots_;
  SceneConfig scene_;
  BackboneSpec backbone_;
  net::Parameters params_;
  std::vector<ViewWeightMap> weights_;
};

struct CountPrediction {
  double scene = 0.0;
  std::vector<double> per_camera;
};

/// Scene and per-camera-region MAE/NAE over a frame set.
struct EvaluationReport {
  std::string method;
  std::vector<std::string> columns;  // "scene", then camera ids
  std::vector<ErrorMetrics> metrics;
  std::vector<bool> has_nae;  // false when some truth in the column is zero
  int frames = 0;

  std::string to_text() const;
};

EvaluationReport evaluate_counts(const std::string& method, const Dataset& dataset, std::span<const int> indices,
                                 const std::function<CountPrediction(const Frame&)>& predict);
EvaluationReport evaluate(const FusionPipeline& pipeline, const Dataset& dataset, std::span<const int> indices);
EvaluationReport evaluate(const DmapBaseline& baseline, const Dataset& dataset, std::span<const int> indices);

}  // namespace mvcount
