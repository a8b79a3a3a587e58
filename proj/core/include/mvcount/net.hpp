#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mvcount/map2d.hpp"
#include "mvcount/rng.hpp"

namespace mvcount::net {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Same-size zero-padded correlation patches: row (c*kh + ky)*kw + kx, one column per
// cell listed in `cells` (all cells when empty). Kernel dims must be odd.
void im2col(const Map2D& input, int kh, int kw, std::span<const int> cells, Eigen::MatrixXd& cols);
// Scatter-adds column gradients back onto an input-shaped gradient map.
void col2im(const Eigen::MatrixXd& cols, int kh, int kw, std::span<const int> cells, Map2D& grad);

// out[o] = sum_c,ky,kx w[o][c][ky][kx] * in[c][y+ky-kh/2][x+kx-kw/2], zero padded.
Map2D conv2d(const Map2D& input, std::span<const double> weights, int out_channels, int kh, int kw);

struct LayerDesc {
  enum class Kind { Conv, MaxPool, Relu, Concat };
  Kind kind = Kind::Relu;
  std::string name;
  int out_channels = 0;
  int in_channels = 0;
  int kernel_height = 0;
  int kernel_width = 0;

  static LayerDesc conv(std::string name, int out_ch, int in_ch, int kh, int kw) {
    return {Kind::Conv, std::move(name), out_ch, in_ch, kh, kw};
  }
  static LayerDesc maxpool() { return {Kind::MaxPool, "pool", 0, 0, 2, 2}; }
  static LayerDesc relu() { return {Kind::Relu, "relu"}; }
  static LayerDesc concat() { return {Kind::Concat, "concat"}; }
};

/// Sequential network description. Conv weights live in Parameters under "<name>/<layer>".
struct ConvNetSpec {
  std::string name;
  std::vector<LayerDesc> layers;
  std::uint64_t seed = 0;

  void validate() const;
  int input_channels() const;   // of the first conv
  int output_channels() const;  // of the last conv
  std::string param_name(const LayerDesc& layer) const { return name + "/" + layer.name; }
};

struct Tensor {
  std::vector<int> dims;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

/// Named weights with matching gradients. Ordered by name for deterministic iteration.
class Parameters {
 public:
  void add(const std::string& name, std::vector<int> dims, std::vector<double> values);
  bool contains(const std::string& name) const { return weights_.count(name) != 0; }
  Tensor& weight(const std::string& name);
  const Tensor& weight(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const Tensor& grad(const std::string& name) const;
  std::vector<std::string> names() const;

  void zero_grad();
  // Names starting with `prefix` are skipped by sgd_step while frozen.
  void set_frozen(const std::string& prefix, bool frozen);
  bool is_frozen(const std::string& name) const;

  std::uint64_t version() const { return version_; }
  std::uint64_t steps() const { return steps_; }
  void bump_version() { ++version_; }
  void count_step() { ++steps_; ++version_; }

  // FNV-1a over the raw bytes of tensors whose name starts with `prefix`.
  std::uint64_t checksum(const std::string& prefix = "") const;
  std::size_t parameter_count() const;

 private:
  std::map<std::string, Tensor> weights_;
  std::map<std::string, Tensor> grads_;
  std::vector<std::string> frozen_;
  std::uint64_t version_ = 0;
  std::uint64_t steps_ = 0;
};

// Adds Glorot-uniform conv weights (+-sqrt(6 / (fan_in + fan_out))) for every conv layer.
void init_parameters(const ConvNetSpec& spec, Parameters& params);

struct ForwardCache {
  const ConvNetSpec* spec = nullptr;
  std::uint64_t params_version = 0;
  std::vector<Map2D> inputs;                 // input to each layer
  std::vector<std::vector<int>> pool_argmax;  // per layer, flat source index per output
  std::vector<Eigen::MatrixXd> cols;          // per conv layer
  std::vector<int> concat_channels;           // channel split of a leading concat
};

// Runs the network. The first layer may be a concat over `inputs`; otherwise exactly one
// input is expected. Convs are same-size, pooling is 2x2 (ceil), tags follow the data.
Map2D forward(const ConvNetSpec& spec, const Parameters& params, std::span<const Map2D> inputs,
              ForwardCache* cache = nullptr);

// Accumulates weight gradients into `params` and returns one gradient per input.
// Throws if `params` changed since the cached forward pass.
std::vector<Map2D> backward(const ForwardCache& cache, const Map2D& upstream, Parameters& params);

// w <- w - lr * g on unfrozen tensors, then clears every gradient. Throws (naming the
// tensor) on a non-finite gradient.
void sgd_step(Parameters& params, double lr);

// Rescales all gradients so their global L2 norm is at most `max_norm`; returns the
// norm before clipping. max_norm <= 0 leaves the gradients untouched.
double clip_gradients(Parameters& params, double max_norm);

// Pixel-wise squared error sum((pred - target)^2); writes d/dpred when `grad` is given.
double squared_error(const Map2D& prediction, const Map2D& target, Map2D* grad = nullptr);

// Copies every tensor of `from` into the same-named tensor of `to`. Throws when the
// name sets or shapes differ.
void copy_parameters(const Parameters& from, Parameters& to);

// "MVNP" checkpoint: per tensor u32 name length, name, u32 rank, u32 dims, f64 values.
void save_parameters(const Parameters& params, const std::filesystem::path& path);
Parameters load_parameters(const std::filesystem::path& path);

}  // namespace mvcount::net
