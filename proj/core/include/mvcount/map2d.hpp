#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mvcount {

enum class GridKind : std::uint8_t { Image, Ground };

/// Identifies which raster a map lives on.
///
/// Image rasters belong to one camera and may be subsampled: `stride` original pixels
/// per cell, and `level` counts image-pyramid downsamplings applied before that.
/// Cell k of a stride-s raster is centred on original pixel s*k + (s-1)/2.
struct GridTag {
  GridKind kind = GridKind::Ground;
  std::string camera;
  int stride = 1;
  int level = 0;

  static GridTag ground() { return {}; }
  static GridTag image(std::string camera, int stride = 1, int level = 0) {
    return {GridKind::Image, std::move(camera), stride, level};
  }
  bool is_ground() const { return kind == GridKind::Ground; }
  std::string describe() const;

  bool operator==(const GridTag&) const = default;
};

/// Multi-channel raster with a per-cell validity mask.
///
/// Values are stored channel-major, then row-major: index = (c * height + y) * width + x.
/// The validity mask is shared by all channels.
class Map2D {
 public:
  Map2D() = default;
  Map2D(int width, int height, int channels, GridTag tag, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t cells() const { return static_cast<std::size_t>(width_) * height_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  const GridTag& tag() const { return tag_; }
  void set_tag(GridTag tag) { tag_ = std::move(tag); }

  double& at(int c, int y, int x) { return values_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return values_[index(c, y, x)]; }
  double& at(int y, int x) { return values_[index(0, y, x)]; }
  double at(int y, int x) const { return values_[index(0, y, x)]; }

  std::span<double> channel(int c) { return {values_.data() + c * cells(), cells()}; }
  std::span<const double> channel(int c) const { return {values_.data() + c * cells(), cells()}; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool valid(int y, int x) const { return valid_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set_valid(int y, int x, bool v) { valid_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  std::vector<std::uint8_t>& mask() { return valid_; }
  const std::vector<std::uint8_t>& mask() const { return valid_; }
  std::size_t valid_count() const;

  double sum() const;
  double channel_sum(int c) const;
  bool same_shape(const Map2D& other) const {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }

  // Single-channel copy of channel c (mask and tag preserved).
  Map2D extract_channel(int c) const;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  GridTag tag_;
  std::vector<double> values_;
  std::vector<std::uint8_t> valid_;
};

// Channel-wise concatenation; all inputs must share size and tag.
Map2D concat_channels(std::span<const Map2D> maps);

// Binary "MV2D" format: 16-byte header (magic, u16 width, u16 height, u16 channels,
// u16 flags, 4 reserved bytes), little-endian f32 values, then an LSB-first validity
// bitmask padded to whole bytes. Flag bit 0 marks a ground-grid map.
inline constexpr std::uint16_t kMv2dFlagGround = 0x1;

void write_mv2d(const Map2D& map, std::ostream& out);
Map2D read_mv2d(std::istream& in);
void save_mv2d(const Map2D& map, const std::filesystem::path& path);
Map2D load_mv2d(const std::filesystem::path& path);

// 8-bit binary PGM of one channel, linearly stretched over the valid cells' range;
// invalid cells are written black. Ground maps are flipped so +y points up.
void save_pgm(const Map2D& map, const std::filesystem::path& path, int channel = 0);

}  // namespace mvcount
