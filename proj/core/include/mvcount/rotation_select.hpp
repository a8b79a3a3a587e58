#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mvcount/map2d.hpp"

namespace mvcount {

// Square size ceil(sqrt(2) * max(k1, k2)), bumped to the next odd number.
int rotation_padded_size(int kernel_height, int kernel_width);

/// Tall k1 x k2 kernels rotated in steps of `q` degrees.
struct RotationConfig {
  int kernel_height = 5;
  int kernel_width = 3;
  double q = 45.0;

  void validate() const;
  int padded_size() const { return rotation_padded_size(kernel_height, kernel_width); }
};

/// Quantised view-ray angles over the ground grid and their indicator masks.
struct RotationMasks {
  double q = 360.0;
  Map2D quantized;             // degrees; invalid cells masked
  std::vector<double> angles;  // distinct quantised angles present, ascending
  std::vector<int> bin;        // per cell index into `angles`, -1 when invalid
  std::vector<Map2D> masks;    // 1(r = angles[i])

  // Cells assigned to angle i, row-major indices.
  std::vector<int> cells_of(int i) const;
};

// Rounds each valid angle to the nearest multiple of q (mod 360).
RotationMasks quantize_angle_map(const Map2D& angle_map, double q);

/// Small row-major 2D weight array. Row index follows the ground grid's +y.
struct Kernel2D {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double sum() const;
};

// Zero-pads an odd-sized kernel, centred, into a size x size square.
Kernel2D pad_kernel(const Kernel2D& kernel, int size);

/// Linear operator taking a padded kernel to its copy rotated clockwise (x right, y up)
/// by `degrees` about the centre, with bilinear interpolation and zero outside.
class KernelRotation {
 public:
  KernelRotation(int size, double degrees);

  int size() const { return size_; }
  double degrees() const { return degrees_; }
  void apply(std::span<const double> padded, std::span<double> rotated) const;
  // Accumulates the transpose: padded_grad += R^T rotated_grad.
  void accumulate_adjoint(std::span<const double> rotated_grad, std::span<double> padded_grad) const;

 private:
  struct Tap {
    int target;
    int source;
    double weight;
  };
  int size_;
  double degrees_;
  std::vector<Tap> taps_;
};

// Pads `kernel` to its rotation square and rotates it by `degrees`.
Kernel2D rotate_kernel(const Kernel2D& kernel, double degrees);

/// C_out x C_in bank of k1 x k2 kernels, weights laid out [o][c][ky][kx].
struct RotationLayerShape {
  int out_channels = 1;
  int in_channels = 1;
  int kernel_height = 5;
  int kernel_width = 3;

  int padded_size() const { return rotation_padded_size(kernel_height, kernel_width); }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel_height * kernel_width;
  }
};

struct RotationLayerCache {
  RotationLayerShape shape;
  Map2D input;
  const RotationMasks* masks = nullptr;
  std::vector<Eigen::MatrixXd> banks;  // per angle: C_out x (C_in * P * P)
  std::vector<Eigen::MatrixXd> cols;   // per angle: (C_in * P * P) x cells
  std::vector<std::vector<int>> cells;
};

// F = sum_i 1(r = r_i) (x) (features * rotate(kernel, r_i)), same-size zero-padded
// correlation evaluated only where each mask is on. Cells without a valid angle are 0.
Map2D rotation_select_forward(const Map2D& features, std::span<const double> weights, const RotationLayerShape& shape,
                              const RotationMasks& masks, RotationLayerCache* cache = nullptr);

// Gradients for the forward call recorded in `cache`; d_weights is accumulated into.
Map2D rotation_select_backward(const RotationLayerCache& cache, const Map2D& upstream, std::span<double> d_weights);

}  // namespace mvcount
