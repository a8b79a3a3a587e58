#include "mvcount/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mvcount/error.hpp"
#include "mvcount/rng.hpp"
#include "mvcount/sampler.hpp"

namespace mvcount {

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::Late:
      return "late";
    case Variant::NaiveEarly:
      return "naive";
    case Variant::Mvms:
      return "mvms";
    case Variant::Mvmsr:
      return "mvmsr";
  }
  return "unknown";
}

Variant parse_variant(const std::string& text) {
  if (text == "late") return Variant::Late;
  if (text == "naive" || text == "naive_early") return Variant::NaiveEarly;
  if (text == "mvms") return Variant::Mvms;
  if (text == "mvmsr") return Variant::Mvmsr;
  throw Error("unknown variant '" + text + "' (expected late, naive, mvms or mvmsr)");
}

void PipelineConfig::validate() const {
  require(width_scale > 0.0, "pipeline: width_scale must be positive");
  require(pyramid.n_scales >= 1 && pyramid.zoom > 1.0, "pipeline: pyramid needs n_scales >= 1 and zoom > 1");
  require(pyramid.ref_scale >= 0 && pyramid.ref_scale < pyramid.n_scales, "pipeline: ref_scale out of range");
  if (variant == Variant::Mvmsr) {
    rotation.validate();
    require(rotation_layers >= 1, "pipeline: mvmsr needs at least one rotation layer");
    require(rotation_channels >= 0, "pipeline: rotation_channels must be >= 0");
  }
  require(aux_width1 >= 1 && aux_width2 >= 1, "pipeline: auxiliary widths must be >= 1");
  require(view_sigma > 0.0 && scene_sigma > 0.0, "pipeline: sigmas must be positive");
  require(density_scale > 0.0, "pipeline: density_scale must be positive");
  require(schedule.stage1_iters >= 0 && schedule.stage2_iters >= 0 && schedule.finetune_iters >= 0,
          "pipeline: iteration counts must be >= 0");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("pipeline config: '" + key + "' expects true or false, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  std::istringstream ss(v);
  T out{};
  ss >> out;
  require(ss && ss.peek() == std::char_traits<char>::eof(), "pipeline config: bad value '" + v + "' for " + key);
  return out;
}

}  // namespace

PipelineConfig parse_pipeline_config(std::istream& in, PipelineConfig c) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "pipeline config: expected 'key = value' on line " + std::to_string(line_no));
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    auto d = [&] { return parse_number<double>(v, key); };
    auto i = [&] { return parse_number<int>(v, key); };
    if (key == "variant") {
      c.variant = parse_variant(v);
    } else if (key == "cameras") {
      c.cameras.clear();
      std::istringstream ss(v);
      std::string id;
      while (std::getline(ss, id, ',')) {
        id = trim(id);
        if (!id.empty()) c.cameras.push_back(id);
      }
    } else if (key == "width_scale") {
      c.width_scale = d();
    } else if (key == "n_scales") {
      c.pyramid.n_scales = i();
    } else if (key == "zoom") {
      c.pyramid.zoom = d();
    } else if (key == "ref_scale") {
      c.pyramid.ref_scale = i();
    } else if (key == "ref_distance") {
      c.pyramid.ref_distance = d();
    } else if (key == "learnable_scale") {
      c.learnable_scale = parse_bool(v, key);
    } else if (key == "kernel_height") {
      c.rotation.kernel_height = i();
    } else if (key == "kernel_width") {
      c.rotation.kernel_width = i();
    } else if (key == "q") {
      c.rotation.q = d();
    } else if (key == "rotation_layers") {
      c.rotation_layers = i();
    } else if (key == "rotation_channels") {
      c.rotation_channels = i();
    } else if (key == "aux_width1") {
      c.aux_width1 = i();
    } else if (key == "aux_width2") {
      c.aux_width2 = i();
    } else if (key == "view_sigma") {
      c.view_sigma = d();
    } else if (key == "scene_sigma") {
      c.scene_sigma = d();
    } else if (key == "density_scale") {
      c.density_scale = d();
    } else if (key == "shared_backbone") {
      c.shared_backbone = parse_bool(v, key);
    } else if (key == "stage1_iters") {
      c.schedule.stage1_iters = i();
    } else if (key == "stage2_iters") {
      c.schedule.stage2_iters = i();
    } else if (key == "finetune_iters") {
      c.schedule.finetune_iters = i();
    } else if (key == "lr_stage1") {
      c.schedule.lr_stage1 = d();
    } else if (key == "lr_stage2_start") {
      c.schedule.lr_stage2_start = d();
    } else if (key == "lr_stage2_end") {
      c.schedule.lr_stage2_end = d();
    } else if (key == "lr_finetune") {
      c.schedule.lr_finetune = d();
    } else if (key == "clip_norm") {
      c.schedule.clip_norm = d();
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(v, key);
    } else {
      throw Error("pipeline config: unknown key '" + key + "' on line " + std::to_string(line_no));
    }
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read pipeline config " + path.string());
  return parse_pipeline_config(in, std::move(base));
}

void write_pipeline_config(const PipelineConfig& c, std::ostream& out) {
  const auto precision = out.precision(17);
  out << "variant = " << to_string(c.variant) << '\n';
  out << "cameras = ";
  for (std::size_t k = 0; k < c.cameras.size(); ++k) out << (k ? "," : "") << c.cameras[k];
  out << '\n'
      << "width_scale = " << c.width_scale << '\n'
      << "n_scales = " << c.pyramid.n_scales << '\n'
      << "zoom = " << c.pyramid.zoom << '\n'
      << "ref_scale = " << c.pyramid.ref_scale << '\n'
      << "ref_distance = " << c.pyramid.ref_distance << '\n'
      << "learnable_scale = " << (c.learnable_scale ? "true" : "false") << '\n'
      << "kernel_height = " << c.rotation.kernel_height << '\n'
      << "kernel_width = " << c.rotation.kernel_width << '\n'
      << "q = " << c.rotation.q << '\n'
      << "rotation_layers = " << c.rotation_layers << '\n'
      << "rotation_channels = " << c.rotation_channels << '\n'
      << "aux_width1 = " << c.aux_width1 << '\n'
      << "aux_width2 = " << c.aux_width2 << '\n'
      << "view_sigma = " << c.view_sigma << '\n'
      << "scene_sigma = " << c.scene_sigma << '\n'
      << "density_scale = " << c.density_scale << '\n'
      << "shared_backbone = " << (c.shared_backbone ? "true" : "false") << '\n'
      << "stage1_iters = " << c.schedule.stage1_iters << '\n'
      << "stage2_iters = " << c.schedule.stage2_iters << '\n'
      << "finetune_iters = " << c.schedule.finetune_iters << '\n'
      << "lr_stage1 = " << c.schedule.lr_stage1 << '\n'
      << "lr_stage2_start = " << c.schedule.lr_stage2_start << '\n'
      << "lr_stage2_end = " << c.schedule.lr_stage2_end << '\n'
      << "lr_finetune = " << c.schedule.lr_finetune << '\n'
      << "clip_norm = " << c.schedule.clip_norm << '\n'
      << "seed = " << c.seed << '\n';
  out.precision(precision);
}

int scaled_width(int width, double scale) {
  return std::max(1, static_cast<int>(std::lround(width * scale)));
}

BackboneSpec fcn7_backbone(const std::string& name, double width_scale, std::uint64_t seed) {
  using net::LayerDesc;
  const int c1 = scaled_width(16, width_scale);
  const int c3 = scaled_width(32, width_scale);
  const int c5 = scaled_width(64, width_scale);
  BackboneSpec b;
  b.front.name = name;
  b.front.seed = seed;
  b.front.layers = {LayerDesc::conv("conv1", c1, 1, 5, 5),  LayerDesc::relu(), LayerDesc::conv("conv2", c1, c1, 5, 5),
                    LayerDesc::relu(),                      LayerDesc::maxpool(),
                    LayerDesc::conv("conv3", c3, c1, 5, 5), LayerDesc::relu(), LayerDesc::conv("conv4", c3, c3, 5, 5),
                    LayerDesc::relu()};
  b.tail.name = name;
  b.tail.seed = seed;
  b.tail.layers = {LayerDesc::maxpool(),
                   LayerDesc::conv("conv5", c5, c3, 5, 5), LayerDesc::relu(),
                   LayerDesc::conv("conv6", c3, c5, 5, 5), LayerDesc::relu(),
                   LayerDesc::conv("conv7", 1, c3, 5, 5)};
  return b;
}

net::ConvNetSpec fusion_head(const std::string& name, int in_channels, double width_scale, std::uint64_t seed) {
  using net::LayerDesc;
  const int c1 = scaled_width(64, width_scale);
  const int c2 = scaled_width(32, width_scale);
  net::ConvNetSpec head;
  head.name = name;
  head.seed = seed;
  head.layers = {LayerDesc::concat(),
                 LayerDesc::conv("conv1", c1, in_channels, 5, 5), LayerDesc::relu(),
                 LayerDesc::conv("conv2", c2, c1, 5, 5),          LayerDesc::relu(),
                 LayerDesc::conv("conv3", 1, c2, 5, 5)};
  return head;
}

namespace {

bool is_early(Variant v) { return v != Variant::Late; }
bool is_multiscale(Variant v) { return v == Variant::Mvms || v == Variant::Mvmsr; }

std::vector<int> select_cameras(const std::vector<std::string>& wanted, const std::vector<CameraModel>& all) {
  std::vector<int> slots;
  if (wanted.empty()) {
    for (std::size_t i = 0; i < all.size(); ++i) slots.push_back(static_cast<int>(i));
    return slots;
  }
  for (const auto& id : wanted) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const CameraModel& c) { return c.id == id; });
    require(it != all.end(), "pipeline: camera " + id + " is not in the calibration");
    slots.push_back(static_cast<int>(it - all.begin()));
  }
  return slots;
}

std::uint64_t text_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void init_if_missing(const net::ConvNetSpec& spec, net::Parameters& params) {
  const auto first = std::find_if(spec.layers.begin(), spec.layers.end(),
                                  [](const net::LayerDesc& l) { return l.kind == net::LayerDesc::Kind::Conv; });
  if (first != spec.layers.end() && !params.contains(spec.param_name(*first))) net::init_parameters(spec, params);
}

// Image re-tagged as the camera's full-resolution raster after a size check.
Map2D camera_image(const Map2D& frame, const CameraModel& cam) {
  require(frame.channels() == 1, "pipeline: frames must be single-channel");
  require(frame.width() == cam.width && frame.height() == cam.height,
          "pipeline: frame size does not match camera " + cam.id);
  require(frame.tag().camera.empty() || frame.tag().camera == cam.id,
          "pipeline: frame from camera " + frame.tag().camera + " given for " + cam.id);
  Map2D out = frame;
  out.set_tag(GridTag::image(cam.id));
  return out;
}

Map2D scaled(Map2D map, double factor) {
  for (double& v : map.values()) v *= factor;
  return map;
}

Map2D relu(Map2D map) {
  for (double& v : map.values()) v = std::max(v, 0.0);
  return map;
}

void relu_backward(const Map2D& pre, Map2D& grad) {
  for (std::size_t k = 0; k < grad.size(); ++k) {
    if (pre.values()[k] <= 0.0) grad.values()[k] = 0.0;
  }
}

void multiply_cells(Map2D& map, const Map2D& weights) {
  const auto w = weights.channel(0);
  for (int c = 0; c < map.channels(); ++c) {
    auto v = map.channel(c);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] *= w[k];
  }
}

void add_into(Map2D& dst, const Map2D& src) {
  require(dst.same_shape(src), "pipeline: gradient shape mismatch");
  for (std::size_t k = 0; k < dst.size(); ++k) dst.values()[k] += src.values()[k];
}

std::string rotation_param(int layer) { return "rotation/layer" + std::to_string(layer + 1); }

}  // namespace

FusionPipeline::FusionPipeline(PipelineConfig config, std::vector<CameraModel> cameras, SceneConfig scene)
    : config_(std::move(config)), scene_(scene) {
  config_.validate();
  scene_.validate();
  camera_slots_ = select_cameras(config_.cameras, cameras);
  for (int slot : camera_slots_) {
    cameras[slot].validate();
    cameras_.push_back(cameras[slot]);
  }
  const Variant v = config_.variant;
  const double w = config_.width_scale;

  pyramid_ = config_.pyramid;
  if (pyramid_.ref_distance <= 0.0) pyramid_.ref_distance = reference_distance(cameras_, scene_);
  if (!is_multiscale(v)) pyramid_.n_scales = 1;
  pyramid_.ref_scale = std::min(pyramid_.ref_scale, pyramid_.n_scales - 1);

  for (const auto& cam : cameras_) {
    const std::string name = config_.shared_backbone ? "backbone" : "backbone_" + cam.id;
    const std::uint64_t seed = config_.shared_backbone ? config_.seed : config_.seed ^ text_hash(cam.id);
    backbones_.push_back(fcn7_backbone(name, w, seed));
    init_if_missing(backbones_.back().front, params_);
    if (v == Variant::Late) init_if_missing(backbones_.back().tail, params_);
  }
  const int features = backbones_.front().front.output_channels();

  if (is_early(v)) {
    using net::LayerDesc;
    aux_ = std::make_unique<net::ConvNetSpec>();
    aux_->name = "aux";
    aux_->seed = config_.seed;
    const int a1 = scaled_width(config_.aux_width1, w);
    const int a2 = scaled_width(config_.aux_width2, w);
    aux_->layers = {LayerDesc::conv("conv1", a1, features, 5, 5), LayerDesc::relu(),
                    LayerDesc::conv("conv2", a2, a1, 5, 5),       LayerDesc::relu(),
                    LayerDesc::conv("conv3", 1, a2, 5, 5)};
    net::init_parameters(*aux_, params_);
  }

  const int stride = v == Variant::Late ? 4 : 2;
  for (const auto& cam : cameras_) {
    projections_.push_back(build_correspondence(cam, scene_, FieldDirection::GroundToImage, stride));
    if (v == Variant::Late) normalizations_.push_back(normalization_map(cam, scene_, config_.view_sigma / 4.0, 4));
  }

  if (is_multiscale(v)) {
    for (const auto& cam : cameras_) {
      distances_.push_back(distance_map(cam, scene_, 2));
      if (!config_.learnable_scale) fixed_masks_.push_back(fixed_scale_map(distances_.back(), pyramid_));
      const ImageRaster base = image_raster(cam, 2);
      std::vector<CorrespondenceField> resize;
      for (int l = 0; l < pyramid_.n_scales; ++l) {
        const double factor = std::pow(pyramid_.zoom, l);
        const int iw = downsampled_size(cam.width, factor);
        const int ih = downsampled_size(cam.height, factor);
        require(iw >= 2 && ih >= 2, "pipeline: image of camera " + cam.id + " too small for " +
                                        std::to_string(pyramid_.n_scales) + " pyramid levels");
        resize.push_back(resize_field(GridTag::image(cam.id, 2, l), (iw + 1) / 2, (ih + 1) / 2,
                                      GridTag::image(cam.id, 2, 0), base.width, base.height));
      }
      level_resize_.push_back(std::move(resize));
    }
    if (config_.learnable_scale) {
      params_.add("scale/b", {1}, {pyramid_.ref_scale + 0.5});
      params_.add("scale/k", {1}, {-1.0});
    }
  }

  int per_view = v == Variant::Late ? 1 : features;
  if (v == Variant::Mvmsr) {
    const int rc = config_.rotation_channels > 0 ? config_.rotation_channels : features;
    for (int l = 0; l < config_.rotation_layers; ++l) {
      RotationLayerShape shape{rc, l == 0 ? features : rc, config_.rotation.kernel_height,
                               config_.rotation.kernel_width};
      rotation_shapes_.push_back(shape);
      const int area = shape.kernel_height * shape.kernel_width;
      const double limit = std::sqrt(6.0 / static_cast<double>((shape.in_channels + shape.out_channels) * area));
      CounterRng rng(config_.seed, text_hash(rotation_param(l)));
      std::vector<double> values(shape.weight_count());
      for (double& x : values) x = rng.uniform(-limit, limit);
      params_.add(rotation_param(l), {shape.out_channels, shape.in_channels, shape.kernel_height, shape.kernel_width},
                  std::move(values));
    }
    rotation_shape_ = rotation_shapes_.front();
    for (const auto& cam : cameras_) {
      rotation_masks_.push_back(quantize_angle_map(view_ray_angle_map(cam, scene_), config_.rotation.q));
    }
    per_view = rc;
  }

  head_ = fusion_head("fusion", per_view * static_cast<int>(cameras_.size()), w, config_.seed);
  net::init_parameters(head_, params_);
}

FusionPipeline::~FusionPipeline() = default;
FusionPipeline::FusionPipeline(FusionPipeline&&) noexcept = default;
FusionPipeline& FusionPipeline::operator=(FusionPipeline&&) noexcept = default;

const BackboneSpec& FusionPipeline::backbone(int view) const { return backbones_.at(view); }
const net::ConvNetSpec* FusionPipeline::aux() const { return aux_.get(); }
int FusionPipeline::view_output_stride() const { return config_.variant == Variant::Late ? 4 : 2; }

const NormalizationMap& FusionPipeline::normalization(int view) const {
  require(config_.variant == Variant::Late, "pipeline: normalization maps exist only for late fusion");
  return normalizations_.at(view);
}

const RotationMasks& FusionPipeline::rotation_masks(int view) const {
  require(config_.variant == Variant::Mvmsr, "pipeline: rotation masks exist only for mvmsr");
  return rotation_masks_.at(view);
}

LearnableScaleParams FusionPipeline::scale_params() const {
  require(is_multiscale(config_.variant) && config_.learnable_scale, "pipeline: no learnable scale parameters");
  return {params_.weight("scale/b").values[0], params_.weight("scale/k").values[0]};
}

void FusionPipeline::select_frames(std::span<const Map2D> frames, std::vector<const Map2D*>& out) const {
  out.clear();
  for (std::size_t v = 0; v < cameras_.size(); ++v) {
    require(camera_slots_[v] < static_cast<int>(frames.size()),
            "pipeline: no frame for camera " + cameras_[v].id + " (got " + std::to_string(frames.size()) + ")");
    out.push_back(&frames[camera_slots_[v]]);
  }
}

FusionPipeline::Outputs FusionPipeline::forward(std::span<const Map2D> frames, bool with_views, Pass* pass) const {
  std::vector<const Map2D*> inputs;
  select_frames(frames, inputs);
  const Variant variant = config_.variant;
  Outputs out;
  std::vector<Map2D> projected;
  if (pass) {
    pass->views.assign(cameras_.size(), {});
    pass->with_views = with_views;
  }
  for (std::size_t v = 0; v < cameras_.size(); ++v) {
    const CameraModel& cam = cameras_[v];
    const BackboneSpec& bb = backbones_[v];
    Pass::View* pv = pass ? &pass->views[v] : nullptr;
    const Map2D image = camera_image(*inputs[v], cam);
    Map2D view_map;  // the per-view map that gets projected
    if (variant == Variant::Late) {
      net::ForwardCache front_cache;
      const Map2D feats = net::forward(bb.front, params_, std::span(&image, 1), pv ? &front_cache : nullptr);
      view_map = net::forward(bb.tail, params_, std::span(&feats, 1), pv ? &pv->tail : nullptr);
      if (pv) pv->front.push_back(std::move(front_cache));
      if (with_views) out.views.push_back(view_map);
    } else if (variant == Variant::NaiveEarly) {
      net::ForwardCache front_cache;
      view_map = net::forward(bb.front, params_, std::span(&image, 1), pv ? &front_cache : nullptr);
      if (pv) pv->front.push_back(std::move(front_cache));
    } else {
      std::vector<Map2D> levels;
      for (int l = 0; l < pyramid_.n_scales; ++l) {
        Map2D level_image = l == 0 ? image : downsample_area(image, std::pow(pyramid_.zoom, l));
        level_image.set_tag(GridTag::image(cam.id, 1, l));
        net::ForwardCache cache;
        Map2D feats = net::forward(bb.front, params_, std::span(&level_image, 1), pv ? &cache : nullptr);
        if (l > 0) feats = sample(feats, level_resize_[v][l]);
        levels.push_back(std::move(feats));
        if (pv) pv->front.push_back(std::move(cache));
      }
      ScaleMasks masks = config_.learnable_scale ? learnable_scale_map(distances_[v], scale_params(), pyramid_)
                                                 : fixed_masks_[v];
      view_map = merge_scales(levels, masks);
      if (pv) {
        pv->levels = std::move(levels);
        pv->masks = std::move(masks);
      }
    }
    if (is_early(variant) && with_views) {
      out.views.push_back(net::forward(*aux_, params_, std::span(&view_map, 1), pv ? &pv->aux : nullptr));
    }

    Map2D ground = sample(view_map, projections_[v]);
    if (variant == Variant::Late) {
      ground = apply_normalization(ground, normalizations_[v]);
    } else if (variant == Variant::Mvmsr) {
      for (std::size_t l = 0; l < rotation_shapes_.size(); ++l) {
        const auto& w = params_.weight(rotation_param(static_cast<int>(l))).values;
        RotationLayerCache* rc = nullptr;
        if (pv) {
          pv->rotation.emplace_back();
          rc = &pv->rotation.back();
        }
        Map2D pre = rotation_select_forward(ground, w, rotation_shapes_[l], rotation_masks_[v], rc);
        ground = relu(pre);
        if (pv) pv->rotation_out.push_back(std::move(pre));
      }
    }
    projected.push_back(std::move(ground));
  }
  out.scene = net::forward(head_, params_, projected, pass ? &pass->head : nullptr);
  return out;
}

void FusionPipeline::backward(const Pass& pass, const Map2D& d_scene, std::span<const Map2D> d_views) {
  require(pass.views.size() == cameras_.size(), "pipeline backward: pass does not match the pipeline");
  require(d_views.empty() || (pass.with_views && d_views.size() == cameras_.size()),
          "pipeline backward: view gradients need a forward pass with views");
  const Variant variant = config_.variant;
  const std::vector<Map2D> d_projected = net::backward(pass.head, d_scene, params_);
  for (std::size_t v = 0; v < cameras_.size(); ++v) {
    const Pass::View& pv = pass.views[v];
    const BackboneSpec& bb = backbones_[v];
    Map2D d_ground = d_projected[v];
    if (variant == Variant::Late) {
      multiply_cells(d_ground, normalizations_[v].weights);
    } else if (variant == Variant::Mvmsr) {
      for (std::size_t l = rotation_shapes_.size(); l-- > 0;) {
        relu_backward(pv.rotation_out[l], d_ground);
        auto& dw = params_.grad(rotation_param(static_cast<int>(l))).values;
        d_ground = rotation_select_backward(pv.rotation[l], d_ground, dw);
      }
    }
    Map2D d_view = sample_adjoint(d_ground, projections_[v]);
    if (is_early(variant) && !d_views.empty()) {
      add_into(d_view, net::backward(pv.aux, d_views[v], params_).front());
    }
    const bool backbone_frozen = params_.is_frozen(bb.front.param_name(bb.front.layers.front()));
    if (variant == Variant::Late) {
      if (!d_views.empty()) add_into(d_view, d_views[v]);
      if (backbone_frozen) continue;
      const Map2D d_feats = net::backward(pv.tail, d_view, params_).front();
      net::backward(pv.front.front(), d_feats, params_);
    } else if (variant == Variant::NaiveEarly) {
      if (backbone_frozen) continue;
      net::backward(pv.front.front(), d_view, params_);
    } else {
      const MergeGradients g = merge_scales_backward(d_view, pv.levels, pv.masks);
      if (config_.learnable_scale) {
        params_.grad("scale/b").values[0] += g.db;
        params_.grad("scale/k").values[0] += g.dk;
      }
      if (backbone_frozen) continue;
      for (int l = 0; l < pyramid_.n_scales; ++l) {
        const Map2D d_level = l == 0 ? g.levels[0] : sample_adjoint(g.levels[l], level_resize_[v][l]);
        net::backward(pv.front[l], d_level, params_);
      }
    }
  }
}

Map2D FusionPipeline::run(std::span<const Map2D> frames) const {
  return scaled(forward(frames, false).scene, 1.0 / config_.density_scale);
}

Map2D FusionPipeline::scaled_scene_target(const Frame& frame) const {
  return scaled(scene_ground_truth(frame.annotations, scene_, config_.scene_sigma), config_.density_scale);
}

Map2D FusionPipeline::scaled_view_target(const Frame& frame, int view) const {
  return scaled(view_ground_truth(frame, cameras_.at(view), camera_slots_.at(view), view_output_stride(),
                                  config_.view_sigma),
                config_.density_scale);
}

double FusionPipeline::loss(const Frame& frame, bool with_aux) const {
  const Outputs out = forward(frame.images, with_aux);
  double total = net::squared_error(out.scene, scaled_scene_target(frame));
  for (std::size_t v = 0; v < out.views.size(); ++v) {
    total += net::squared_error(out.views[v], scaled_view_target(frame, static_cast<int>(v)));
  }
  return total;
}

double FusionPipeline::accumulate_gradient(const Frame& frame, bool with_aux) {
  Pass pass;
  const Outputs out = forward(frame.images, with_aux, &pass);
  Map2D d_scene;
  double total = net::squared_error(out.scene, scaled_scene_target(frame), &d_scene);
  std::vector<Map2D> d_views(out.views.size());
  for (std::size_t v = 0; v < out.views.size(); ++v) {
    total += net::squared_error(out.views[v], scaled_view_target(frame, static_cast<int>(v)), &d_views[v]);
  }
  backward(pass, d_scene, d_views);
  return total;
}

namespace {

class SampleCycle {
 public:
  SampleCycle(std::span<const int> indices, std::uint64_t seed, std::uint64_t stream)
      : order_(indices.begin(), indices.end()), rng_(seed, stream) {
    require(!order_.empty(), "training: no training frames");
    shuffle();
  }

  int next() {
    if (pos_ == order_.size()) {
      shuffle();
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order_[i - 1], order_[j]);
    }
  }

  std::vector<int> order_;
  CounterRng rng_;
  std::size_t pos_ = 0;
};

constexpr std::uint64_t kStreamTrainOrder = 0x7261696EULL;

}  // namespace

std::vector<LossRecord> train_two_stage(FusionPipeline& pipeline, const Dataset& dataset,
                                        std::span<const int> train_indices, const TrainSchedule& schedule,
                                        const std::function<void(int stage)>& on_stage_end) {
  std::vector<LossRecord> trace;
  const int total = schedule.stage1_iters + schedule.stage2_iters + schedule.finetune_iters;
  if (total == 0) return trace;
  SampleCycle cycle(train_indices, pipeline.config().seed, kStreamTrainOrder);
  net::Parameters& params = pipeline.params();
  params.zero_grad();
  auto step = [&](int stage, int k, bool with_aux, double lr) {
    const int index = cycle.next();
    require(index >= 0 && index < static_cast<int>(dataset.frames.size()), "training: frame index out of range");
    const double loss = pipeline.accumulate_gradient(dataset.frames[index], with_aux);
    if (!std::isfinite(loss)) {
      throw Error("training: non-finite loss at stage " + std::to_string(stage) + " step " + std::to_string(k));
    }
    net::clip_gradients(params, schedule.clip_norm);
    net::sgd_step(params, lr);
    trace.push_back({stage, k, loss});
  };
  for (int k = 0; k < schedule.stage1_iters; ++k) step(1, k, true, schedule.lr_stage1);
  if (on_stage_end && schedule.stage1_iters > 0) on_stage_end(1);
  params.set_frozen("backbone", true);
  for (int k = 0; k < schedule.stage2_iters; ++k) {
    const double lr = 2 * k < schedule.stage2_iters ? schedule.lr_stage2_start : schedule.lr_stage2_end;
    step(2, k, false, lr);
  }
  params.set_frozen("backbone", false);
  if (on_stage_end && schedule.stage2_iters > 0) on_stage_end(2);
  for (int k = 0; k < schedule.finetune_iters; ++k) step(3, k, false, schedule.lr_finetune);
  if (on_stage_end && schedule.finetune_iters > 0) on_stage_end(3);
  return trace;
}

DmapBaseline::DmapBaseline(PipelineConfig config, std::vector<CameraModel> cameras, SceneConfig scene)
    : config_(std::move(config)), scene_(scene) {
  config_.validate();
  scene_.validate();
  camera_slots_ = select_cameras(config_.cameras, cameras);
  for (int slot : camera_slots_) {
    cameras[slot].validate();
    cameras_.push_back(cameras[slot]);
  }
  backbone_ = fcn7_backbone("dmap", config_.width_scale, config_.seed);
  net::init_parameters(backbone_.front, params_);
  net::init_parameters(backbone_.tail, params_);
  weights_ = view_weight_maps(cameras_, scene_, backbone_.density_stride);
}

namespace {

Map2D dmap_forward(const BackboneSpec& bb, const net::Parameters& params, const Map2D& image,
                   net::ForwardCache* front, net::ForwardCache* tail) {
  const Map2D feats = net::forward(bb.front, params, std::span(&image, 1), front);
  return net::forward(bb.tail, params, std::span(&feats, 1), tail);
}

}  // namespace

std::vector<Map2D> DmapBaseline::view_densities(std::span<const Map2D> frames) const {
  std::vector<Map2D> out;
  for (std::size_t v = 0; v < cameras_.size(); ++v) {
    require(camera_slots_[v] < static_cast<int>(frames.size()), "dmap: no frame for camera " + cameras_[v].id);
    const Map2D image = camera_image(frames[camera_slots_[v]], cameras_[v]);
    out.push_back(scaled(dmap_forward(backbone_, params_, image, nullptr, nullptr), 1.0 / config_.density_scale));
  }
  return out;
}

double DmapBaseline::count(std::span<const Map2D> frames) const {
  return dmap_weighted_count(view_densities(frames), weights_);
}

std::vector<LossRecord> DmapBaseline::train(const Dataset& dataset, std::span<const int> train_indices, int iters,
                                            double lr, double clip_norm) {
  std::vector<LossRecord> trace;
  if (iters <= 0) return trace;
  SampleCycle cycle(train_indices, config_.seed, kStreamTrainOrder + 1);
  params_.zero_grad();
  for (int k = 0; k < iters; ++k) {
    const Frame& frame = dataset.frames.at(cycle.next());
    double loss = 0.0;
    for (std::size_t v = 0; v < cameras_.size(); ++v) {
      const Map2D image = camera_image(frame.images.at(camera_slots_[v]), cameras_[v]);
      net::ForwardCache front;
      net::ForwardCache tail;
      const Map2D pred = dmap_forward(backbone_, params_, image, &front, &tail);
      const Map2D target = scaled(
          view_ground_truth(frame, cameras_[v], camera_slots_[v], backbone_.density_stride, config_.view_sigma),
          config_.density_scale);
      Map2D grad;
      loss += net::squared_error(pred, target, &grad);
      const Map2D d_feats = net::backward(tail, grad, params_).front();
      net::backward(front, d_feats, params_);
    }
    if (!std::isfinite(loss)) throw Error("dmap training: non-finite loss at step " + std::to_string(k));
    net::clip_gradients(params_, clip_norm);
    net::sgd_step(params_, lr);
    trace.push_back({1, k, loss});
  }
  return trace;
}

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%#.6g", v);
  return buf;
}

}  // namespace

std::string EvaluationReport::to_text() const {
  std::ostringstream out;
  out << "method";
  for (const auto& c : columns) out << '\t' << c;
  out << "\nMAE";
  for (const auto& m : metrics) out << '\t' << fmt6(m.mae);
  out << "\nNAE";
  for (std::size_t i = 0; i < metrics.size(); ++i) out << '\t' << (has_nae[i] ? fmt6(metrics[i].nae) : "n/a");
  out << "\n\n";
  out << "method=" << method << '\n' << "frames=" << frames << '\n';
  for (std::size_t i = 0; i < columns.size(); ++i) {
    out << "mae." << columns[i] << '=' << fmt6(metrics[i].mae) << '\n';
    out << "nae." << columns[i] << '=' << (has_nae[i] ? fmt6(metrics[i].nae) : "n/a") << '\n';
  }
  return out.str();
}

EvaluationReport evaluate_counts(const std::string& method, const Dataset& dataset, std::span<const int> indices,
                                 const std::function<CountPrediction(const Frame&)>& predict) {
  require(!indices.empty(), "evaluate: no frames to evaluate");
  const std::size_t n_cams = dataset.cameras.size();
  std::vector<std::vector<double>> pred(n_cams + 1);
  std::vector<std::vector<double>> truth(n_cams + 1);
  for (int index : indices) {
    require(index >= 0 && index < static_cast<int>(dataset.frames.size()), "evaluate: frame index out of range");
    const Frame& frame = dataset.frames[index];
    const CountPrediction p = predict(frame);
    require(p.per_camera.size() == n_cams, "evaluate: prediction has the wrong number of camera counts");
    pred[0].push_back(p.scene);
    truth[0].push_back(frame.scene_gt.sum());
    for (std::size_t c = 0; c < n_cams; ++c) {
      pred[c + 1].push_back(p.per_camera[c]);
      truth[c + 1].push_back(camera_region_count(frame.scene_gt, dataset.cameras[c], dataset.scene));
    }
  }
  EvaluationReport report;
  report.method = method;
  report.frames = static_cast<int>(indices.size());
  report.columns.push_back("scene");
  for (const auto& cam : dataset.cameras) report.columns.push_back(cam.id);
  for (std::size_t c = 0; c <= n_cams; ++c) {
    const bool nae = std::none_of(truth[c].begin(), truth[c].end(), [](double t) { return t == 0.0; });
    report.metrics.push_back(mae_nae(pred[c], truth[c], nae));
    report.has_nae.push_back(nae);
  }
  return report;
}

EvaluationReport evaluate(const FusionPipeline& pipeline, const Dataset& dataset, std::span<const int> indices) {
  return evaluate_counts(to_string(pipeline.config().variant), dataset, indices, [&](const Frame& frame) {
    const Map2D scene = pipeline.run(frame.images);
    CountPrediction p;
    p.scene = scene.sum();
    for (const auto& cam : dataset.cameras) p.per_camera.push_back(camera_region_count(scene, cam, dataset.scene));
    return p;
  });
}

EvaluationReport evaluate(const DmapBaseline& baseline, const Dataset& dataset, std::span<const int> indices) {
  return evaluate_counts("dmap", dataset, indices, [&](const Frame& frame) {
    const std::vector<Map2D> views = baseline.view_densities(frame.images);
    CountPrediction p;
    p.scene = baseline.count(frame.images);
    p.per_camera.assign(dataset.cameras.size(), 0.0);
    const auto& ids = baseline.config().cameras;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const std::string id = ids.empty() ? dataset.cameras[v].id : ids[v];
      p.per_camera[dataset.camera_index(id)] = views[v].sum();
    }
    return p;
  });
}

}  // namespace mvcount
