#include "mvcount/map2d.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "mvcount/error.hpp"

namespace mvcount {

std::string GridTag::describe() const {
  if (is_ground()) return "ground";
  return "image(" + camera + ", stride " + std::to_string(stride) + ", level " + std::to_string(level) + ")";
}

Map2D::Map2D(int width, int height, int channels, GridTag tag, double fill)
    : width_(width), height_(height), channels_(channels), tag_(std::move(tag)) {
  require(width >= 0 && height >= 0 && channels >= 0, "Map2D: negative dimensions");
  values_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  valid_.assign(static_cast<std::size_t>(width) * height, 1);
}

std::size_t Map2D::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), std::uint8_t{1}));
}

double Map2D::sum() const {
  double s = 0.0;
  for (double v : values_) s += v;
  return s;
}

double Map2D::channel_sum(int c) const {
  double s = 0.0;
  for (double v : channel(c)) s += v;
  return s;
}

Map2D Map2D::extract_channel(int c) const {
  require(c >= 0 && c < channels_, "Map2D::extract_channel: channel out of range");
  Map2D out(width_, height_, 1, tag_);
  std::copy(channel(c).begin(), channel(c).end(), out.values_.begin());
  out.valid_ = valid_;
  return out;
}

Map2D concat_channels(std::span<const Map2D> maps) {
  require(!maps.empty(), "concat_channels: no inputs");
  int channels = 0;
  for (const auto& m : maps) {
    require(m.width() == maps[0].width() && m.height() == maps[0].height(), "concat_channels: size mismatch");
    require(m.tag() == maps[0].tag(), "concat_channels: grid tag mismatch");
    channels += m.channels();
  }
  Map2D out(maps[0].width(), maps[0].height(), channels, maps[0].tag());
  auto it = out.values().begin();
  for (const auto& m : maps) it = std::copy(m.values().begin(), m.values().end(), it);
  out.mask() = maps[0].mask();
  return out;
}

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'V', '2', 'D'};

void put_u16(std::ostream& out, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  out.write(bytes, 2);
}

std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put_f32(std::ostream& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                         static_cast<char>((bits >> 16) & 0xFF), static_cast<char>(bits >> 24)};
  out.write(bytes, 4);
}

}  // namespace

void write_mv2d(const Map2D& map, std::ostream& out) {
  constexpr int kMax = std::numeric_limits<std::uint16_t>::max();
  require(map.width() <= kMax && map.height() <= kMax && map.channels() <= kMax, "write_mv2d: map too large");
  out.write(kMagic.data(), 4);
  put_u16(out, static_cast<std::uint16_t>(map.width()));
  put_u16(out, static_cast<std::uint16_t>(map.height()));
  put_u16(out, static_cast<std::uint16_t>(map.channels()));
  put_u16(out, map.tag().is_ground() ? kMv2dFlagGround : 0);
  const char reserved[4] = {0, 0, 0, 0};
  out.write(reserved, 4);
  for (double v : map.values()) put_f32(out, static_cast<float>(v));
  std::vector<char> bits((map.cells() + 7) / 8, 0);
  for (std::size_t i = 0; i < map.cells(); ++i) {
    if (map.mask()[i]) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
  }
  out.write(bits.data(), static_cast<std::streamsize>(bits.size()));
  require(out.good(), "write_mv2d: write failed");
}

Map2D read_mv2d(std::istream& in) {
  unsigned char header[16];
  in.read(reinterpret_cast<char*>(header), 16);
  require(in.gcount() == 16, "read_mv2d: truncated header");
  require(std::memcmp(header, kMagic.data(), 4) == 0, "read_mv2d: bad magic");
  const int width = get_u16(header + 4);
  const int height = get_u16(header + 6);
  const int channels = get_u16(header + 8);
  const std::uint16_t flags = get_u16(header + 10);
  Map2D map(width, height, channels, (flags & kMv2dFlagGround) ? GridTag::ground() : GridTag::image(""));
  std::vector<unsigned char> raw(map.size() * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(static_cast<std::size_t>(in.gcount()) == raw.size(), "read_mv2d: truncated values");
  for (std::size_t i = 0; i < map.size(); ++i) {
    const unsigned char* p = raw.data() + 4 * i;
    const std::uint32_t bits = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    map.values()[i] = std::bit_cast<float>(bits);
  }
  std::vector<unsigned char> mask((map.cells() + 7) / 8);
  in.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
  require(static_cast<std::size_t>(in.gcount()) == mask.size(), "read_mv2d: truncated mask");
  for (std::size_t i = 0; i < map.cells(); ++i) map.mask()[i] = (mask[i / 8] >> (i % 8)) & 1;
  return map;
}

void save_mv2d(const Map2D& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.is_open(), "save_mv2d: cannot open " + path.string());
  write_mv2d(map, out);
}

Map2D load_mv2d(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.is_open(), "load_mv2d: cannot open " + path.string());
  return read_mv2d(in);
}

void save_pgm(const Map2D& map, const std::filesystem::path& path, int channel) {
  require(channel >= 0 && channel < map.channels(), "save_pgm: channel out of range");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      if (!map.valid(y, x)) continue;
      lo = std::min(lo, map.at(channel, y, x));
      hi = std::max(hi, map.at(channel, y, x));
    }
  }
  const double range = (hi > lo) ? hi - lo : 1.0;
  std::ofstream out(path, std::ios::binary);
  require(out.is_open(), "save_pgm: cannot open " + path.string());
  out << "P5\n" << map.width() << " " << map.height() << "\n255\n";
  for (int row = 0; row < map.height(); ++row) {
    const int y = map.tag().is_ground() ? map.height() - 1 - row : row;
    for (int x = 0; x < map.width(); ++x) {
      unsigned char v = 0;
      if (map.valid(y, x) && std::isfinite(lo)) {
        v = static_cast<unsigned char>(std::lround(255.0 * (map.at(channel, y, x) - lo) / range));
      }
      out.put(static_cast<char>(v));
    }
  }
}

}  // namespace mvcount
