#include "mvcount/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mvcount/error.hpp"

namespace mvcount::net {

void im2col(const Map2D& input, int kh, int kw, std::span<const int> cells, Eigen::MatrixXd& cols) {
  require(kh % 2 == 1 && kw % 2 == 1, "im2col: kernel dims must be odd");
  const int w = input.width();
  const int h = input.height();
  const std::size_t n = cells.empty() ? input.cells() : cells.size();
  const int rows = input.channels() * kh * kw;
  cols.setZero(rows, static_cast<Eigen::Index>(n));
  const int ry = kh / 2;
  const int rx = kw / 2;
  for (std::size_t j = 0; j < n; ++j) {
    const int cell = cells.empty() ? static_cast<int>(j) : cells[j];
    const int y = cell / w;
    const int x = cell % w;
    double* col = cols.col(static_cast<Eigen::Index>(j)).data();
    for (int c = 0; c < input.channels(); ++c) {
      const auto src = input.channel(c);
      for (int ky = 0; ky < kh; ++ky) {
        const int sy = y + ky - ry;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int sx = x + kx - rx;
          if (sx < 0 || sx >= w) continue;
          col[(c * kh + ky) * kw + kx] = src[static_cast<std::size_t>(sy) * w + sx];
        }
      }
    }
  }
}

void col2im(const Eigen::MatrixXd& cols, int kh, int kw, std::span<const int> cells, Map2D& grad) {
  const int w = grad.width();
  const int h = grad.height();
  const std::size_t n = cells.empty() ? grad.cells() : cells.size();
  require(cols.rows() == grad.channels() * kh * kw && static_cast<std::size_t>(cols.cols()) == n,
          "col2im: column matrix does not match the gradient map");
  const int ry = kh / 2;
  const int rx = kw / 2;
  for (std::size_t j = 0; j < n; ++j) {
    const int cell = cells.empty() ? static_cast<int>(j) : cells[j];
    const int y = cell / w;
    const int x = cell % w;
    const double* col = cols.col(static_cast<Eigen::Index>(j)).data();
    for (int c = 0; c < grad.channels(); ++c) {
      auto dst = grad.channel(c);
      for (int ky = 0; ky < kh; ++ky) {
        const int sy = y + ky - ry;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int sx = x + kx - rx;
          if (sx < 0 || sx >= w) continue;
          dst[static_cast<std::size_t>(sy) * w + sx] += col[(c * kh + ky) * kw + kx];
        }
      }
    }
  }
}

Map2D conv2d(const Map2D& input, std::span<const double> weights, int out_channels, int kh, int kw) {
  const std::size_t k = static_cast<std::size_t>(input.channels()) * kh * kw;
  require(weights.size() == k * out_channels, "conv2d: weight count mismatch");
  Eigen::MatrixXd cols;
  im2col(input, kh, kw, {}, cols);
  const RowMatrix bank = Eigen::Map<const RowMatrix>(weights.data(), out_channels, static_cast<Eigen::Index>(k));
  const RowMatrix result = bank * cols;
  Map2D out(input.width(), input.height(), out_channels, input.tag());
  out.mask() = input.mask();
  std::copy(result.data(), result.data() + result.size(), out.values().begin());
  return out;
}

void ConvNetSpec::validate() const {
  require(!layers.empty(), "network " + name + ": no layers");
  int channels = -1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerDesc& l = layers[i];
    switch (l.kind) {
      case LayerDesc::Kind::Concat:
        require(i == 0, "network " + name + ": concat must be the first layer");
        break;
      case LayerDesc::Kind::Conv:
        require(l.out_channels > 0 && l.in_channels > 0, "network " + name + ": conv " + l.name + " has no channels");
        require(l.kernel_height % 2 == 1 && l.kernel_width % 2 == 1,
                "network " + name + ": conv " + l.name + " kernel dims must be odd");
        require(channels < 0 || channels == l.in_channels,
                "network " + name + ": conv " + l.name + " expects " + std::to_string(l.in_channels) +
                    " channels, gets " + std::to_string(channels));
        channels = l.out_channels;
        break;
      case LayerDesc::Kind::MaxPool:
      case LayerDesc::Kind::Relu:
        break;
    }
  }
  require(channels > 0, "network " + name + ": no conv layer");
}

int ConvNetSpec::input_channels() const {
  for (const auto& l : layers) {
    if (l.kind == LayerDesc::Kind::Conv) return l.in_channels;
  }
  return 0;
}

int ConvNetSpec::output_channels() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (it->kind == LayerDesc::Kind::Conv) return it->out_channels;
  }
  return 0;
}

void Parameters::add(const std::string& name, std::vector<int> dims, std::vector<double> values) {
  require(!contains(name), "parameters: duplicate tensor " + name);
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  require(n == values.size(), "parameters: dims of " + name + " do not match its value count");
  grads_[name] = Tensor{dims, std::vector<double>(values.size(), 0.0)};
  weights_[name] = Tensor{std::move(dims), std::move(values)};
  ++version_;
}

Tensor& Parameters::weight(const std::string& name) {
  const auto it = weights_.find(name);
  require(it != weights_.end(), "parameters: no tensor named " + name);
  return it->second;
}

const Tensor& Parameters::weight(const std::string& name) const {
  const auto it = weights_.find(name);
  require(it != weights_.end(), "parameters: no tensor named " + name);
  return it->second;
}

Tensor& Parameters::grad(const std::string& name) {
  const auto it = grads_.find(name);
  require(it != grads_.end(), "parameters: no gradient named " + name);
  return it->second;
}

const Tensor& Parameters::grad(const std::string& name) const {
  const auto it = grads_.find(name);
  require(it != grads_.end(), "parameters: no gradient named " + name);
  return it->second;
}

std::vector<std::string> Parameters::names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : weights_) out.push_back(name);
  return out;
}

void Parameters::zero_grad() {
  for (auto& [name, g] : grads_) std::fill(g.values.begin(), g.values.end(), 0.0);
}

void Parameters::set_frozen(const std::string& prefix, bool frozen) {
  const auto it = std::find(frozen_.begin(), frozen_.end(), prefix);
  if (frozen && it == frozen_.end()) frozen_.push_back(prefix);
  if (!frozen && it != frozen_.end()) frozen_.erase(it);
}

bool Parameters::is_frozen(const std::string& name) const {
  return std::any_of(frozen_.begin(), frozen_.end(),
                     [&](const std::string& p) { return name.compare(0, p.size(), p) == 0; });
}

std::uint64_t Parameters::checksum(const std::string& prefix) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : weights_) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    feed(name.data(), name.size());
    feed(t.values.data(), t.values.size() * sizeof(double));
  }
  return h;
}

std::size_t Parameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : weights_) n += t.size();
  return n;
}

namespace {

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void init_parameters(const ConvNetSpec& spec, Parameters& params) {
  spec.validate();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    if (l.kind != LayerDesc::Kind::Conv) continue;
    const int area = l.kernel_height * l.kernel_width;
    const double limit = std::sqrt(6.0 / static_cast<double>((l.in_channels + l.out_channels) * area));
    CounterRng rng(spec.seed, name_hash(spec.param_name(l)));
    std::vector<double> values(static_cast<std::size_t>(l.out_channels) * l.in_channels * area);
    for (double& v : values) v = rng.uniform(-limit, limit);
    params.add(spec.param_name(l), {l.out_channels, l.in_channels, l.kernel_height, l.kernel_width},
               std::move(values));
  }
}

namespace {

GridTag pooled_tag(const GridTag& tag) {
  GridTag out = tag;
  if (!out.is_ground()) out.stride *= 2;
  return out;
}

Map2D maxpool_forward(const Map2D& in, std::vector<int>* argmax) {
  const int ow = (in.width() + 1) / 2;
  const int oh = (in.height() + 1) / 2;
  Map2D out(ow, oh, in.channels(), pooled_tag(in.tag()));
  if (argmax) argmax->assign(out.size(), 0);
  for (int c = 0; c < in.channels(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        int best = -1;
        double best_v = 0.0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int sy = 2 * y + dy;
            const int sx = 2 * x + dx;
            if (sy >= in.height() || sx >= in.width()) continue;
            const double v = in.at(c, sy, sx);
            if (best < 0 || v > best_v) {
              best = (c * in.height() + sy) * in.width() + sx;
              best_v = v;
            }
          }
        }
        out.at(c, y, x) = best_v;
        if (argmax) (*argmax)[(static_cast<std::size_t>(c) * oh + y) * ow + x] = best;
      }
    }
  }
  return out;
}

}  // namespace

Map2D forward(const ConvNetSpec& spec, const Parameters& params, std::span<const Map2D> inputs, ForwardCache* cache) {
  require(!inputs.empty(), "network " + spec.name + ": no input");
  const bool concat_first = spec.layers.front().kind == LayerDesc::Kind::Concat;
  require(concat_first || inputs.size() == 1, "network " + spec.name + ": expected exactly one input");
  if (cache) {
    cache->spec = &spec;
    cache->params_version = params.version();
    cache->inputs.assign(spec.layers.size(), Map2D());
    cache->pool_argmax.assign(spec.layers.size(), {});
    cache->cols.assign(spec.layers.size(), Eigen::MatrixXd());
    cache->concat_channels.clear();
  }
  Map2D x = inputs.front();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    switch (l.kind) {
      case LayerDesc::Kind::Concat:
        if (cache) {
          for (const auto& in : inputs) cache->concat_channels.push_back(in.channels());
        }
        x = concat_channels(inputs);
        break;
      case LayerDesc::Kind::Conv: {
        require(x.channels() == l.in_channels, "network " + spec.name + ": layer " + l.name + " expects " +
                                                   std::to_string(l.in_channels) + " channels, got " +
                                                   std::to_string(x.channels()));
        const Tensor& w = params.weight(spec.param_name(l));
        Eigen::MatrixXd cols;
        im2col(x, l.kernel_height, l.kernel_width, {}, cols);
        const RowMatrix bank = Eigen::Map<const RowMatrix>(w.values.data(), l.out_channels, cols.rows());
        const RowMatrix result = bank * cols;
        Map2D out(x.width(), x.height(), l.out_channels, x.tag());
        out.mask() = x.mask();
        std::copy(result.data(), result.data() + result.size(), out.values().begin());
        if (cache) {
          cache->inputs[i] = std::move(x);
          cache->cols[i] = std::move(cols);
        }
        x = std::move(out);
        break;
      }
      case LayerDesc::Kind::Relu: {
        if (cache) cache->inputs[i] = x;
        for (double& v : x.values()) v = std::max(v, 0.0);
        break;
      }
      case LayerDesc::Kind::MaxPool: {
        Map2D out = maxpool_forward(x, cache ? &cache->pool_argmax[i] : nullptr);
        if (cache) cache->inputs[i] = std::move(x);
        x = std::move(out);
        break;
      }
    }
  }
  return x;
}

std::vector<Map2D> backward(const ForwardCache& cache, const Map2D& upstream, Parameters& params) {
  require(cache.spec != nullptr, "backward: empty cache");
  const ConvNetSpec& spec = *cache.spec;
  require(cache.params_version == params.version(),
          "backward: parameters of " + spec.name + " changed since the forward pass");
  Map2D g = upstream;
  for (std::size_t i = spec.layers.size(); i-- > 0;) {
    const LayerDesc& l = spec.layers[i];
    switch (l.kind) {
      case LayerDesc::Kind::Concat: {
        std::vector<Map2D> out;
        int c0 = 0;
        for (int channels : cache.concat_channels) {
          Map2D part(g.width(), g.height(), channels, g.tag());
          for (int c = 0; c < channels; ++c) {
            const auto src = g.channel(c0 + c);
            std::copy(src.begin(), src.end(), part.channel(c).begin());
          }
          c0 += channels;
          out.push_back(std::move(part));
        }
        return out;
      }
      case LayerDesc::Kind::Conv: {
        const Map2D& in = cache.inputs[i];
        const Eigen::MatrixXd& cols = cache.cols[i];
        require(g.channels() == l.out_channels && g.width() == in.width() && g.height() == in.height(),
                "backward: gradient shape mismatch at " + spec.param_name(l));
        const Eigen::Map<const RowMatrix> dy(g.values().data(), l.out_channels, static_cast<Eigen::Index>(in.cells()));
        const Tensor& w = params.weight(spec.param_name(l));
        const Eigen::Map<const RowMatrix> bank(w.values.data(), l.out_channels, cols.rows());
        Tensor& dw = params.grad(spec.param_name(l));
        Eigen::Map<RowMatrix> dbank(dw.values.data(), l.out_channels, cols.rows());
        dbank.noalias() += dy * cols.transpose();
        const Eigen::MatrixXd dcols = bank.transpose() * dy;
        Map2D dx(in.width(), in.height(), in.channels(), in.tag());
        dx.mask() = in.mask();
        col2im(dcols, l.kernel_height, l.kernel_width, {}, dx);
        g = std::move(dx);
        break;
      }
      case LayerDesc::Kind::Relu: {
        const Map2D& in = cache.inputs[i];
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (in.values()[k] <= 0.0) g.values()[k] = 0.0;
        }
        break;
      }
      case LayerDesc::Kind::MaxPool: {
        const Map2D& in = cache.inputs[i];
        Map2D dx(in.width(), in.height(), in.channels(), in.tag());
        dx.mask() = in.mask();
        const auto& argmax = cache.pool_argmax[i];
        for (std::size_t k = 0; k < g.size(); ++k) dx.values()[argmax[k]] += g.values()[k];
        g = std::move(dx);
        break;
      }
    }
  }
  std::vector<Map2D> out;
  out.push_back(std::move(g));
  return out;
}

void sgd_step(Parameters& params, double lr) {
  for (const auto& name : params.names()) {
    const Tensor& g = params.grad(name);
    for (double v : g.values) {
      require(std::isfinite(v), "sgd_step: non-finite gradient in " + name);
    }
  }
  for (const auto& name : params.names()) {
    if (params.is_frozen(name)) continue;
    Tensor& w = params.weight(name);
    const Tensor& g = params.grad(name);
    for (std::size_t k = 0; k < w.size(); ++k) w.values[k] -= lr * g.values[k];
  }
  params.zero_grad();
  params.count_step();
}

double clip_gradients(Parameters& params, double max_norm) {
  double sq = 0.0;
  for (const auto& name : params.names()) {
    if (params.is_frozen(name)) continue;
    for (double v : params.grad(name).values) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& name : params.names()) {
      for (double& v : params.grad(name).values) v *= f;
    }
  }
  return norm;
}

double squared_error(const Map2D& prediction, const Map2D& target, Map2D* grad) {
  require(prediction.same_shape(target), "squared_error: prediction and target shapes differ");
  if (grad) *grad = Map2D(prediction.width(), prediction.height(), prediction.channels(), prediction.tag());
  double loss = 0.0;
  for (std::size_t k = 0; k < prediction.size(); ++k) {
    const double d = prediction.values()[k] - target.values()[k];
    loss += d * d;
    if (grad) grad->values()[k] = 2.0 * d;
  }
  return loss;
}

namespace {

constexpr char kMagic[4] = {'M', 'V', 'N', 'P'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return true;
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  require(static_cast<bool>(in.read(reinterpret_cast<char*>(b), 8)), "checkpoint: truncated tensor values");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void copy_parameters(const Parameters& from, Parameters& to) {
  require(from.names() == to.names(), "copy_parameters: tensor names differ");
  for (const auto& name : from.names()) {
    const Tensor& src = from.weight(name);
    Tensor& dst = to.weight(name);
    require(src.dims == dst.dims, "copy_parameters: shape of " + name + " differs");
    dst.values = src.values;
  }
  to.bump_version();
}

void save_parameters(const Parameters& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "checkpoint: cannot write " + path.string());
  out.write(kMagic, 4);
  for (const auto& name : params.names()) {
    const Tensor& t = params.weight(name);
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (int d : t.dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values) put_f64(out, v);
  }
  require(static_cast<bool>(out), "checkpoint: write failed for " + path.string());
}

Parameters load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "checkpoint: cannot read " + path.string());
  char magic[4];
  require(in.read(magic, 4) && std::memcmp(magic, kMagic, 4) == 0, "checkpoint: bad magic in " + path.string());
  Parameters params;
  std::uint32_t name_len = 0;
  while (get_u32(in, name_len)) {
    require(name_len < 4096, "checkpoint: implausible tensor name length");
    std::string name(name_len, '\0');
    require(static_cast<bool>(in.read(name.data(), name_len)), "checkpoint: truncated tensor name");
    std::uint32_t rank = 0;
    require(get_u32(in, rank) && rank <= 8, "checkpoint: bad rank for " + name);
    std::vector<int> dims(rank);
    std::size_t n = 1;
    for (auto& d : dims) {
      std::uint32_t v = 0;
      require(get_u32(in, v), "checkpoint: truncated dims for " + name);
      d = static_cast<int>(v);
      n *= v;
    }
    std::vector<double> values(n);
    for (double& v : values) v = get_f64(in);
    params.add(name, std::move(dims), std::move(values));
  }
  return params;
}

}  // namespace mvcount::net
