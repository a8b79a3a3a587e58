#include "mvcount/sampler.hpp"

#include <cmath>

#include "mvcount/error.hpp"

namespace mvcount {

namespace {

void check_source(const Map2D& source, const CorrespondenceField& field) {
  require(source.tag() == field.source_tag,
          "sample: source grid " + source.tag().describe() + " does not match field source " +
              field.source_tag.describe());
  require(source.width() == field.source_width && source.height() == field.source_height,
          "sample: source size does not match the field");
}

struct Corner {
  int x0;
  int y0;
  double fx;
  double fy;
};

Corner corner_of(const Eigen::Vector2d& p) {
  const double fx0 = std::floor(p.x());
  const double fy0 = std::floor(p.y());
  return {static_cast<int>(fx0), static_cast<int>(fy0), p.x() - fx0, p.y() - fy0};
}

}  // namespace

Map2D sample(const Map2D& source, const CorrespondenceField& field) {
  check_source(source, field);
  const int sw = source.width();
  const int sh = source.height();
  Map2D out(field.target_width, field.target_height, source.channels(), field.target_tag);
  out.mask() = field.valid;
  for (int c = 0; c < source.channels(); ++c) {
    const auto src = source.channel(c);
    auto dst = out.channel(c);
    auto read = [&](int x, int y) -> double {
      if (x < 0 || y < 0 || x >= sw || y >= sh) return 0.0;
      return src[static_cast<std::size_t>(y) * sw + x];
    };
    for (std::size_t i = 0; i < field.target_cells(); ++i) {
      if (!field.valid[i]) continue;
      const Corner k = corner_of(field.coords[i]);
      const double a = read(k.x0, k.y0);
      const double top = (k.fx == 0.0) ? a : a + k.fx * (read(k.x0 + 1, k.y0) - a);
      if (k.fy == 0.0) {
        dst[i] = top;
        continue;
      }
      const double cl = read(k.x0, k.y0 + 1);
      const double bottom = (k.fx == 0.0) ? cl : cl + k.fx * (read(k.x0 + 1, k.y0 + 1) - cl);
      dst[i] = top + k.fy * (bottom - top);
    }
  }
  return out;
}

Map2D sample_adjoint(const Map2D& upstream, const CorrespondenceField& field) {
  require(upstream.tag() == field.target_tag, "sample_adjoint: upstream grid does not match field target");
  require(upstream.width() == field.target_width && upstream.height() == field.target_height,
          "sample_adjoint: upstream size does not match the field");
  const int sw = field.source_width;
  const int sh = field.source_height;
  Map2D out(sw, sh, upstream.channels(), field.source_tag);
  for (int c = 0; c < upstream.channels(); ++c) {
    const auto up = upstream.channel(c);
    auto dst = out.channel(c);
    auto add = [&](int x, int y, double v) {
      if (x < 0 || y < 0 || x >= sw || y >= sh) return;
      dst[static_cast<std::size_t>(y) * sw + x] += v;
    };
    for (std::size_t i = 0; i < field.target_cells(); ++i) {
      if (!field.valid[i]) continue;
      const double g = up[i];
      if (g == 0.0) continue;
      const Corner k = corner_of(field.coords[i]);
      const double gy0 = (k.fy == 0.0) ? g : g * (1.0 - k.fy);
      add(k.x0, k.y0, (k.fx == 0.0) ? gy0 : gy0 * (1.0 - k.fx));
      if (k.fx != 0.0) add(k.x0 + 1, k.y0, gy0 * k.fx);
      if (k.fy != 0.0) {
        const double gy1 = g * k.fy;
        add(k.x0, k.y0 + 1, (k.fx == 0.0) ? gy1 : gy1 * (1.0 - k.fx));
        if (k.fx != 0.0) add(k.x0 + 1, k.y0 + 1, gy1 * k.fx);
      }
    }
  }
  return out;
}

}  // namespace mvcount
