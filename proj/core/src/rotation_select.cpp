#include "mvcount/rotation_select.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvcount/error.hpp"
#include "mvcount/net.hpp"

namespace mvcount {

int rotation_padded_size(int kernel_height, int kernel_width) {
  require(kernel_height >= 1 && kernel_width >= 1, "rotation: kernel dims must be >= 1");
  const int k = std::max(kernel_height, kernel_width);
  int p = static_cast<int>(std::ceil(std::numbers::sqrt2 * k - 1e-12));
  if (p % 2 == 0) ++p;
  return p;
}

void RotationConfig::validate() const {
  require(kernel_height >= 1 && kernel_width >= 1, "rotation: kernel dims must be >= 1");
  require(kernel_height % 2 == 1 && kernel_width % 2 == 1, "rotation: kernel dims must be odd to centre in the pad");
  require(q > 0.0 && q <= 360.0, "rotation: q must be in (0, 360]");
}

std::vector<int> RotationMasks::cells_of(int i) const {
  std::vector<int> cells;
  for (std::size_t k = 0; k < bin.size(); ++k) {
    if (bin[k] == i) cells.push_back(static_cast<int>(k));
  }
  return cells;
}

RotationMasks quantize_angle_map(const Map2D& angle_map, double q) {
  require(q > 0.0 && q <= 360.0, "quantize_angle_map: q must be in (0, 360]");
  require(angle_map.channels() == 1, "quantize_angle_map: expected a single-channel angle map");
  RotationMasks out;
  out.q = q;
  out.quantized = Map2D(angle_map.width(), angle_map.height(), 1, angle_map.tag());
  out.bin.assign(angle_map.cells(), -1);
  std::vector<double> per_cell(angle_map.cells(), 0.0);
  for (int y = 0; y < angle_map.height(); ++y) {
    for (int x = 0; x < angle_map.width(); ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * angle_map.width() + x;
      if (!angle_map.valid(y, x)) {
        out.quantized.set_valid(y, x, false);
        continue;
      }
      double r = std::fmod(std::round(angle_map.at(y, x) / q) * q, 360.0);
      if (r < 0.0) r += 360.0;
      if (r >= 360.0 - 1e-9) r = 0.0;
      per_cell[k] = r;
      out.quantized.at(y, x) = r;
      out.angles.push_back(r);
    }
  }
  std::sort(out.angles.begin(), out.angles.end());
  out.angles.erase(std::unique(out.angles.begin(), out.angles.end()), out.angles.end());
  for (std::size_t i = 0; i < out.angles.size(); ++i) {
    out.masks.emplace_back(angle_map.width(), angle_map.height(), 1, angle_map.tag());
  }
  for (int y = 0; y < angle_map.height(); ++y) {
    for (int x = 0; x < angle_map.width(); ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * angle_map.width() + x;
      if (!angle_map.valid(y, x)) {
        for (auto& m : out.masks) m.set_valid(y, x, false);
        continue;
      }
      const auto it = std::lower_bound(out.angles.begin(), out.angles.end(), per_cell[k]);
      const int i = static_cast<int>(it - out.angles.begin());
      out.bin[k] = i;
      out.masks[i].at(y, x) = 1.0;
    }
  }
  return out;
}

double Kernel2D::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

Kernel2D pad_kernel(const Kernel2D& kernel, int size) {
  require(kernel.height % 2 == 1 && kernel.width % 2 == 1, "pad_kernel: kernel dims must be odd");
  require(size >= kernel.height && size >= kernel.width && size % 2 == 1, "pad_kernel: bad pad size");
  Kernel2D out{size, size, std::vector<double>(static_cast<std::size_t>(size) * size, 0.0)};
  const int oy = (size - kernel.height) / 2;
  const int ox = (size - kernel.width) / 2;
  for (int y = 0; y < kernel.height; ++y) {
    for (int x = 0; x < kernel.width; ++x) out.at(y + oy, x + ox) = kernel.at(y, x);
  }
  return out;
}

namespace {

bool is_zero_angle(double degrees) {
  const double r = std::fmod(degrees, 360.0);
  return std::abs(r) < 1e-12 || std::abs(std::abs(r) - 360.0) < 1e-12;
}

// sin/cos that are exact on multiples of 90 degrees.
void exact_sincos(double degrees, double& s, double& c) {
  double r = std::fmod(degrees, 360.0);
  if (r < 0.0) r += 360.0;
  const double quarter = r / 90.0;
  const double nearest = std::round(quarter);
  if (std::abs(quarter - nearest) < 1e-12) {
    static constexpr double kSin[4] = {0.0, 1.0, 0.0, -1.0};
    static constexpr double kCos[4] = {1.0, 0.0, -1.0, 0.0};
    const int q = static_cast<int>(nearest) % 4;
    s = kSin[q];
    c = kCos[q];
    return;
  }
  const double rad = r * std::numbers::pi / 180.0;
  s = std::sin(rad);
  c = std::cos(rad);
}

}  // namespace

KernelRotation::KernelRotation(int size, double degrees) : size_(size), degrees_(degrees) {
  require(size >= 1 && size % 2 == 1, "KernelRotation: size must be odd");
  double s = 0.0;
  double c = 1.0;
  exact_sincos(degrees, s, c);
  const double centre = 0.5 * (size - 1);
  for (int ty = 0; ty < size; ++ty) {
    for (int tx = 0; tx < size; ++tx) {
      // Clockwise rotation (x right, y up): output p reads the source at R_ccw(theta) p.
      const double px = tx - centre;
      const double py = ty - centre;
      const double sx = px * c - py * s + centre;
      const double sy = px * s + py * c + centre;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      const int target = ty * size + tx;
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int k = 0; k < 4; ++k) {
        if (w[k] == 0.0 || xs[k] < 0 || ys[k] < 0 || xs[k] >= size || ys[k] >= size) continue;
        taps_.push_back({target, ys[k] * size + xs[k], w[k]});
      }
    }
  }
}

void KernelRotation::apply(std::span<const double> padded, std::span<double> rotated) const {
  const std::size_t n = static_cast<std::size_t>(size_) * size_;
  require(padded.size() == n && rotated.size() == n, "KernelRotation::apply: size mismatch");
  std::fill(rotated.begin(), rotated.end(), 0.0);
  if (is_zero_angle(degrees_)) {
    std::copy(padded.begin(), padded.end(), rotated.begin());
    return;
  }
  for (const auto& t : taps_) rotated[t.target] += t.weight * padded[t.source];
}

void KernelRotation::accumulate_adjoint(std::span<const double> rotated_grad, std::span<double> padded_grad) const {
  const std::size_t n = static_cast<std::size_t>(size_) * size_;
  require(rotated_grad.size() == n && padded_grad.size() == n, "KernelRotation::adjoint: size mismatch");
  if (is_zero_angle(degrees_)) {
    for (std::size_t k = 0; k < n; ++k) padded_grad[k] += rotated_grad[k];
    return;
  }
  for (const auto& t : taps_) padded_grad[t.source] += t.weight * rotated_grad[t.target];
}

Kernel2D rotate_kernel(const Kernel2D& kernel, double degrees) {
  const int p = rotation_padded_size(kernel.height, kernel.width);
  const Kernel2D padded = pad_kernel(kernel, p);
  Kernel2D out{p, p, std::vector<double>(padded.values.size(), 0.0)};
  KernelRotation(p, degrees).apply(padded.values, out.values);
  return out;
}

namespace {

struct AngleGeometry {
  bool unrotated;  // 0 degrees: use the k1 x k2 kernel directly
  int kh;
  int kw;
};

AngleGeometry angle_geometry(const RotationLayerShape& shape, double degrees) {
  if (is_zero_angle(degrees)) return {true, shape.kernel_height, shape.kernel_width};
  const int p = shape.padded_size();
  return {false, p, p};
}

// C_out x (C_in * kh * kw) weights of every kernel rotated by `degrees`.
net::RowMatrix rotated_bank(std::span<const double> weights, const RotationLayerShape& shape, double degrees) {
  const AngleGeometry g = angle_geometry(shape, degrees);
  const int k1 = shape.kernel_height;
  const int k2 = shape.kernel_width;
  const std::size_t kernel_size = static_cast<std::size_t>(k1) * k2;
  if (g.unrotated) {
    return Eigen::Map<const net::RowMatrix>(weights.data(), shape.out_channels,
                                            static_cast<Eigen::Index>(shape.in_channels * kernel_size));
  }
  const int p = g.kh;
  const std::size_t pp = static_cast<std::size_t>(p) * p;
  const KernelRotation rot(p, degrees);
  net::RowMatrix bank(shape.out_channels, static_cast<Eigen::Index>(shape.in_channels * pp));
  Kernel2D kernel{k1, k2, std::vector<double>(kernel_size)};
  for (int o = 0; o < shape.out_channels; ++o) {
    for (int c = 0; c < shape.in_channels; ++c) {
      const std::size_t offset = (static_cast<std::size_t>(o) * shape.in_channels + c) * kernel_size;
      std::copy_n(weights.begin() + static_cast<std::ptrdiff_t>(offset), kernel_size, kernel.values.begin());
      const Kernel2D padded = pad_kernel(kernel, p);
      rot.apply(padded.values, std::span<double>(bank.row(o).data() + c * pp, pp));
    }
  }
  return bank;
}

}  // namespace

Map2D rotation_select_forward(const Map2D& features, std::span<const double> weights, const RotationLayerShape& shape,
                              const RotationMasks& masks, RotationLayerCache* cache) {
  require(features.channels() == shape.in_channels, "rotation_select: feature channels do not match the layer");
  require(weights.size() == shape.weight_count(), "rotation_select: weight count mismatch");
  require(shape.kernel_height % 2 == 1 && shape.kernel_width % 2 == 1, "rotation_select: kernel dims must be odd");
  require(masks.bin.size() == features.cells() && masks.quantized.width() == features.width(),
          "rotation_select: masks do not match the feature grid");
  Map2D out(features.width(), features.height(), shape.out_channels, features.tag());
  out.mask() = masks.quantized.mask();
  if (cache) {
    cache->shape = shape;
    cache->input = features;
    cache->masks = &masks;
    cache->banks.clear();
    cache->cols.clear();
    cache->cells.clear();
  }
  const std::size_t n_cells = features.cells();
  for (std::size_t i = 0; i < masks.angles.size(); ++i) {
    std::vector<int> cells = masks.cells_of(static_cast<int>(i));
    const bool all_cells = cells.size() == n_cells;
    if (cells.empty()) continue;
    const AngleGeometry g = angle_geometry(shape, masks.angles[i]);
    const net::RowMatrix bank = rotated_bank(weights, shape, masks.angles[i]);
    Eigen::MatrixXd cols;
    // An empty cell list means every cell, matching net::conv2d column for column.
    if (all_cells) cells.clear();
    net::im2col(features, g.kh, g.kw, cells, cols);
    const net::RowMatrix result = bank * cols;
    for (int o = 0; o < shape.out_channels; ++o) {
      auto dst = out.channel(o);
      if (all_cells) {
        for (std::size_t k = 0; k < n_cells; ++k) dst[k] = result(o, static_cast<Eigen::Index>(k));
      } else {
        for (std::size_t j = 0; j < cells.size(); ++j) dst[cells[j]] = result(o, static_cast<Eigen::Index>(j));
      }
    }
    if (cache) {
      cache->banks.emplace_back(bank);
      cache->cols.push_back(std::move(cols));
      cache->cells.push_back(std::move(cells));
    }
  }
  return out;
}

Map2D rotation_select_backward(const RotationLayerCache& cache, const Map2D& upstream, std::span<double> d_weights) {
  const RotationLayerShape& shape = cache.shape;
  require(cache.masks != nullptr, "rotation_select_backward: empty cache");
  require(upstream.channels() == shape.out_channels && upstream.width() == cache.input.width() &&
              upstream.height() == cache.input.height(),
          "rotation_select_backward: upstream shape mismatch");
  require(d_weights.size() == shape.weight_count(), "rotation_select_backward: weight gradient size mismatch");
  const RotationMasks& masks = *cache.masks;
  Map2D d_features(cache.input.width(), cache.input.height(), shape.in_channels, cache.input.tag());
  const std::size_t n_cells = cache.input.cells();
  const int k1 = shape.kernel_height;
  const int k2 = shape.kernel_width;
  const std::size_t kernel_size = static_cast<std::size_t>(k1) * k2;
  std::size_t slot = 0;
  for (std::size_t i = 0; i < masks.angles.size(); ++i) {
    const std::vector<int> bin_cells = masks.cells_of(static_cast<int>(i));
    if (bin_cells.empty()) continue;
    require(slot < cache.banks.size(), "rotation_select_backward: cache does not match masks");
    const std::vector<int>& cells = cache.cells[slot];
    const Eigen::MatrixXd& bank = cache.banks[slot];
    const Eigen::MatrixXd& cols = cache.cols[slot];
    ++slot;
    const std::size_t n = cells.empty() ? n_cells : cells.size();
    Eigen::MatrixXd dy(shape.out_channels, static_cast<Eigen::Index>(n));
    for (int o = 0; o < shape.out_channels; ++o) {
      const auto up = upstream.channel(o);
      for (std::size_t j = 0; j < n; ++j) dy(o, static_cast<Eigen::Index>(j)) = up[cells.empty() ? j : cells[j]];
    }
    const Eigen::MatrixXd d_bank = dy * cols.transpose();
    const Eigen::MatrixXd d_cols = bank.transpose() * dy;
    const AngleGeometry g = angle_geometry(shape, masks.angles[i]);
    net::col2im(d_cols, g.kh, g.kw, cells, d_features);
    if (g.unrotated) {
      for (int o = 0; o < shape.out_channels; ++o) {
        for (Eigen::Index k = 0; k < d_bank.cols(); ++k) {
          d_weights[static_cast<std::size_t>(o) * d_bank.cols() + k] += d_bank(o, k);
        }
      }
      continue;
    }
    const int p = g.kh;
    const std::size_t pp = static_cast<std::size_t>(p) * p;
    const KernelRotation rot(p, masks.angles[i]);
    const int oy = (p - k1) / 2;
    const int ox = (p - k2) / 2;
    std::vector<double> rotated_grad(pp);
    std::vector<double> padded_grad(pp);
    for (int o = 0; o < shape.out_channels; ++o) {
      for (int c = 0; c < shape.in_channels; ++c) {
        for (std::size_t k = 0; k < pp; ++k) rotated_grad[k] = d_bank(o, static_cast<Eigen::Index>(c * pp + k));
        std::fill(padded_grad.begin(), padded_grad.end(), 0.0);
        rot.accumulate_adjoint(rotated_grad, padded_grad);
        const std::size_t offset = (static_cast<std::size_t>(o) * shape.in_channels + c) * kernel_size;
        for (int y = 0; y < k1; ++y) {
          for (int x = 0; x < k2; ++x) {
            d_weights[offset + static_cast<std::size_t>(y) * k2 + x] += padded_grad[(y + oy) * p + x + ox];
          }
        }
      }
    }
  }
  return d_features;
}

}  // namespace mvcount
