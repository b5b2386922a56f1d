#include "radfuse/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace radfuse {

using nlohmann::json;

namespace {

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 1) throw Error("tensor extents must be >= 1");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
  if (t.shape() != shape)
    throw Error(std::string(what) + ": expected shape " + Tensor(shape).shape_string() + ", got " + t.shape_string());
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != product(shape_)) throw Error("tensor value count does not match shape " + shape_string());
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string s = "{";
  for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
  return s + "}";
}

Tensor volume_tensor(const Volume& v, double center, double scale) {
  if (!(scale > 0.0)) throw Error("volume_tensor: scale must be > 0");
  const Dims& d = v.dims();
  Tensor t({1, d.nz, d.ny, d.nx});
  // Volume and tensor are both x-fastest.
  const auto src = v.voxels();
  for (std::size_t i = 0; i < src.size(); ++i) t[i] = (src[i] - center) / scale;
  return t;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

DenseLayer::DenseLayer(int in, int out) : W({out, in}), b({out}) {}

Tensor dense_forward(const DenseLayer& L, const Tensor& x) {
  if (x.rank() != 1 || x.dim(0) != L.in())
    throw Error("dense: input " + x.shape_string() + " does not match in=" + std::to_string(L.in()));
  const int in = L.in(), out = L.out();
  Tensor y({out});
  for (int o = 0; o < out; ++o) {
    const double* w = L.W.data() + static_cast<std::size_t>(o) * in;
    double acc = L.b[o];
    for (int i = 0; i < in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
  return y;
}

Tensor dense_backward(const DenseLayer& L, const Tensor& x, const Tensor& dy, Tensor& dW, Tensor& db, bool need_dx) {
  const int in = L.in(), out = L.out();
  require_shape(x, {in}, "dense backward x");
  require_shape(dy, {out}, "dense backward dy");
  require_shape(dW, L.W.shape(), "dense backward dW");
  require_shape(db, L.b.shape(), "dense backward db");
  Tensor dx;
  if (need_dx) dx = Tensor({in});
  for (int o = 0; o < out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    db[o] += g;
    double* gw = dW.data() + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) gw[i] += g * x[i];
    if (need_dx) {
      const double* w = L.W.data() + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) dx[i] += g * w[i];
    }
  }
  return dx;
}

DenseGrads dense_backward(const DenseLayer& L, const Tensor& x, const Tensor& dy) {
  DenseGrads g{Tensor(), Tensor(L.W.shape()), Tensor(L.b.shape())};
  g.dx = dense_backward(L, x, dy, g.dW, g.db, true);
  return g;
}

// ---------------------------------------------------------------------------
// Conv3D
// ---------------------------------------------------------------------------

SamePadding same_padding(int n, int k, int stride) {
  if (n < 1 || k < 1 || stride < 1) throw Error("same_padding: extents and stride must be >= 1");
  SamePadding p;
  p.out = (n + stride - 1) / stride;
  const int total = std::max((p.out - 1) * stride + k - n, 0);
  p.before = total / 2;
  return p;
}

Conv3DLayer::Conv3DLayer(int in_ch, int out_ch, std::array<int, 3> k, int s)
    : W({out_ch, in_ch, k[0], k[1], k[2]}), b({out_ch}), stride(s) {
  for (int e : k)
    if (e % 2 == 0) throw Error("conv3d: kernel extents must be odd for same padding");
  if (s < 1) throw Error("conv3d: stride must be >= 1");
}

std::vector<int> Conv3DLayer::output_shape(const std::vector<int>& in) const {
  if (in.size() != 4 || in[0] != in_channels())
    throw Error("conv3d: input " + Tensor(in).shape_string() + " does not match in_ch=" +
                std::to_string(in_channels()));
  const auto k = kernel();
  return {out_channels(), same_padding(in[1], k[0], stride).out, same_padding(in[2], k[1], stride).out,
          same_padding(in[3], k[2], stride).out};
}

namespace {

// Output indices o with 0 <= o*s + d - before < n, as a half-open range.
struct Range {
  int lo, hi;
};

Range valid_range(int n, int out, int d, int before, int s) {
  const int lo_num = before - d;
  const int lo = lo_num <= 0 ? 0 : (lo_num + s - 1) / s;
  const int hi_num = n - 1 - d + before;
  const int hi = hi_num < 0 ? 0 : std::min(hi_num / s + 1, out);
  return {lo, std::max(lo, hi)};
}

struct ConvGeometry {
  int C, O, nz, ny, nx, oz, oy, ox, kz, ky, kx, s;
  SamePadding pz, py, px;

  ConvGeometry(const Conv3DLayer& L, const Tensor& x) {
    if (x.rank() != 4 || x.dim(0) != L.in_channels())
      throw Error("conv3d: input " + x.shape_string() + " does not match in_ch=" + std::to_string(L.in_channels()));
    C = L.in_channels();
    O = L.out_channels();
    nz = x.dim(1);
    ny = x.dim(2);
    nx = x.dim(3);
    const auto k = L.kernel();
    kz = k[0];
    ky = k[1];
    kx = k[2];
    s = L.stride;
    pz = same_padding(nz, kz, s);
    py = same_padding(ny, ky, s);
    px = same_padding(nx, kx, s);
    oz = pz.out;
    oy = py.out;
    ox = px.out;
  }
  std::size_t in_plane() const { return static_cast<std::size_t>(nz) * ny * nx; }
  std::size_t out_plane() const { return static_cast<std::size_t>(oz) * oy * ox; }
};

// Calls fn(out_row, in_row, x_range, in_start) for every (kernel tap, output row) pair.
template <typename Fn>
void for_each_tap_row(const ConvGeometry& g, int dz, int dy, int dx, Fn&& fn) {
  const Range rz = valid_range(g.nz, g.oz, dz, g.pz.before, g.s);
  const Range ry = valid_range(g.ny, g.oy, dy, g.py.before, g.s);
  const Range rx = valid_range(g.nx, g.ox, dx, g.px.before, g.s);
  if (rx.lo >= rx.hi) return;
  for (int z = rz.lo; z < rz.hi; ++z) {
    const int iz = z * g.s + dz - g.pz.before;
    for (int y = ry.lo; y < ry.hi; ++y) {
      const int iy = y * g.s + dy - g.py.before;
      const std::size_t out_row = (static_cast<std::size_t>(z) * g.oy + y) * g.ox;
      const std::size_t in_row = (static_cast<std::size_t>(iz) * g.ny + iy) * g.nx;
      const std::ptrdiff_t in_start = static_cast<std::ptrdiff_t>(rx.lo) * g.s + dx - g.px.before;
      fn(out_row, in_row, rx, in_start);
    }
  }
}

}  // namespace

Tensor conv3d_forward(const Conv3DLayer& L, const Tensor& x) {
  const ConvGeometry g(L, x);
  Tensor y({g.O, g.oz, g.oy, g.ox});
  const std::size_t op = g.out_plane(), ip = g.in_plane();
  for (int o = 0; o < g.O; ++o) std::fill(y.data() + o * op, y.data() + (o + 1) * op, L.b[o]);
  const double* W = L.W.data();
  for (int o = 0; o < g.O; ++o) {
    double* yo = y.data() + o * op;
    for (int c = 0; c < g.C; ++c) {
      const double* xc = x.data() + c * ip;
      for (int dz = 0; dz < g.kz; ++dz)
        for (int dy = 0; dy < g.ky; ++dy)
          for (int dx = 0; dx < g.kx; ++dx) {
            const double w = *W++;
            for_each_tap_row(g, dz, dy, dx, [&](std::size_t out_row, std::size_t in_row, Range rx, std::ptrdiff_t i0) {
              double* yr = yo + out_row;
              const double* xr = xc + in_row + i0;
              if (g.s == 1) {
                for (int k = 0, xo = rx.lo; xo < rx.hi; ++xo, ++k) yr[xo] += w * xr[k];
              } else {
                for (int k = 0, xo = rx.lo; xo < rx.hi; ++xo, k += g.s) yr[xo] += w * xr[k];
              }
            });
          }
    }
  }
  return y;
}

Tensor conv3d_backward(const Conv3DLayer& L, const Tensor& x, const Tensor& dy, Tensor& dW, Tensor& db, bool need_dx) {
  const ConvGeometry g(L, x);
  require_shape(dy, {g.O, g.oz, g.oy, g.ox}, "conv3d backward dy");
  require_shape(dW, L.W.shape(), "conv3d backward dW");
  require_shape(db, L.b.shape(), "conv3d backward db");
  const std::size_t op = g.out_plane(), ip = g.in_plane();
  Tensor dx;
  if (need_dx) dx = Tensor(x.shape());
  for (int o = 0; o < g.O; ++o) {
    const double* go = dy.data() + o * op;
    db[o] += std::accumulate(go, go + op, 0.0);
  }
  const double* W = L.W.data();
  double* gW = dW.data();
  for (int o = 0; o < g.O; ++o) {
    const double* go = dy.data() + o * op;
    for (int c = 0; c < g.C; ++c) {
      const double* xc = x.data() + c * ip;
      double* dxc = need_dx ? dx.data() + c * ip : nullptr;
      for (int dz = 0; dz < g.kz; ++dz)
        for (int ddy = 0; ddy < g.ky; ++ddy)
          for (int ddx = 0; ddx < g.kx; ++ddx) {
            const double w = *W++;
            double acc = 0.0;
            for_each_tap_row(g, dz, ddy, ddx, [&](std::size_t out_row, std::size_t in_row, Range rx, std::ptrdiff_t i0) {
              const double* gr = go + out_row;
              const double* xr = xc + in_row + i0;
              double* dxr = dxc ? dxc + in_row + i0 : nullptr;
              for (int k = 0, xo = rx.lo; xo < rx.hi; ++xo, k += g.s) {
                acc += gr[xo] * xr[k];
                if (dxr) dxr[k] += w * gr[xo];
              }
            });
            *gW++ += acc;
          }
    }
  }
  return dx;
}

Conv3DGrads conv3d_backward(const Conv3DLayer& L, const Tensor& x, const Tensor& dy) {
  Conv3DGrads g{Tensor(), Tensor(L.W.shape()), Tensor(L.b.shape())};
  g.dx = conv3d_backward(L, x, dy, g.dW, g.db, true);
  return g;
}

// ---------------------------------------------------------------------------
// Activations, pooling, loss
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  if (x.shape() != dy.shape()) throw Error("relu backward: shape mismatch");
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() < 2) throw Error("global_avg_pool: need a channel axis and at least one spatial axis");
  const int C = x.dim(0);
  const std::size_t per = x.size() / static_cast<std::size_t>(C);
  Tensor y({C});
  for (int c = 0; c < C; ++c) {
    const double* p = x.data() + c * per;
    y[c] = std::accumulate(p, p + per, 0.0) / static_cast<double>(per);
  }
  return y;
}

Tensor global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor& dy) {
  Tensor dx(in_shape);
  const int C = in_shape.at(0);
  require_shape(dy, {C}, "global_avg_pool backward dy");
  const std::size_t per = dx.size() / static_cast<std::size_t>(C);
  for (int c = 0; c < C; ++c) std::fill(dx.data() + c * per, dx.data() + (c + 1) * per, dy[c] / static_cast<double>(per));
  return dx;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  if (logits.empty()) throw Error("softmax: empty input");
  for (double v : logits)
    if (!std::isfinite(v)) throw Error("softmax: non-finite logit");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - m);
  for (auto& v : p) v /= sum;
  return p;
}

SoftmaxCE softmax_ce(const Tensor& logits, int label) {
  if (logits.rank() != 1) throw Error("softmax_ce: logits must be a vector");
  const int C = logits.dim(0);
  if (label < 0 || label >= C) throw Error("softmax_ce: label out of range");
  SoftmaxCE r;
  r.probs = Tensor({C}, softmax(logits.values()));
  // log p[label] via log-sum-exp keeps the loss finite when p underflows.
  const double m = *std::max_element(logits.values().begin(), logits.values().end());
  double sum = 0.0;
  for (double v : logits.values()) sum += std::exp(v - m);
  r.loss = -(logits[label] - m - std::log(sum));
  r.dlogits = r.probs;
  r.dlogits[label] -= 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Init and SGD
// ---------------------------------------------------------------------------

void he_uniform(Tensor& W, int fan_in, std::mt19937_64& rng) {
  if (fan_in < 1) throw Error("he_uniform: fan_in must be >= 1");
  const double limit = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& v : W.values()) v = u(rng);
}

void init_layer(DenseLayer& L, std::mt19937_64& rng) {
  he_uniform(L.W, L.in(), rng);
  L.b.fill(0.0);
}

void init_layer(Conv3DLayer& L, std::mt19937_64& rng) {
  const auto k = L.kernel();
  he_uniform(L.W, L.in_channels() * k[0] * k[1] * k[2], rng);
  L.b.fill(0.0);
}

void SGDConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw Error("sgd: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("sgd: momentum must be in [0, 1)");
  if (batch_size < 1) throw Error("sgd: batch_size must be >= 1");
  if (max_epochs < 1) throw Error("sgd: max_epochs must be >= 1");
  if (patience < 1) throw Error("sgd: patience must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw Error("sgd: val_fraction must be in [0, 1)");
}

void sgd_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, std::vector<Tensor>& velocity,
              const SGDConfig& cfg) {
  if (params.size() != grads.size()) throw Error("sgd: parameter and gradient counts differ");
  if (velocity.empty())
    for (const Tensor* p : params) velocity.emplace_back(p->shape());
  if (velocity.size() != params.size()) throw Error("sgd: velocity count differs");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    Tensor& v = velocity[k];
    if (p.shape() != g.shape() || p.shape() != v.shape()) throw Error("sgd: shape mismatch for parameter " + std::to_string(k));
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = cfg.momentum * v[i] - cfg.learning_rate * g[i];
      p[i] += v[i];
    }
  }
}

void ParamSet::add(std::string name, Tensor& value, Tensor& grad) {
  if (value.shape() != grad.shape()) throw Error("param '" + name + "': gradient shape differs");
  if (std::find(names.begin(), names.end(), name) != names.end()) throw Error("duplicate parameter '" + name + "'");
  names.push_back(std::move(name));
  values.push_back(&value);
  grads.push_back(&grad);
}

void ParamSet::zero_grad() {
  for (Tensor* g : grads) g->fill(0.0);
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const Tensor* v : values) n += v->size();
  return n;
}

// ---------------------------------------------------------------------------
// Gradcheck
// ---------------------------------------------------------------------------

GradcheckResult gradcheck(Tensor& param, const Tensor& analytic, const std::vector<std::size_t>& coords,
                          const std::function<ProbeValue()>& probe, double h, double floor) {
  if (param.shape() != analytic.shape()) throw Error("gradcheck: analytic gradient shape differs");
  GradcheckResult r;
  const std::uint64_t base = probe().pattern;
  for (std::size_t i : coords) {
    if (i >= param.size()) throw Error("gradcheck: coordinate out of range");
    const double orig = param[i];
    param[i] = orig + h;
    const ProbeValue plus = probe();
    param[i] = orig - h;
    const ProbeValue minus = probe();
    param[i] = orig;
    if (plus.pattern != base || minus.pattern != base) {
      ++r.skipped;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    r.max_rel_error = std::max(r.max_rel_error, rel);
    ++r.checked;
  }
  return r;
}

std::uint64_t relu_pattern(const Tensor& x, std::uint64_t seed) {
  std::uint64_t h = seed ^ 14695981039346656037ull;
  for (double v : x.values()) {
    h ^= v > 0.0 ? 0x9eu : 0x35u;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::string tensor_file(const std::string& name) {
  std::string f = name;
  for (char& c : f)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '.';
  return f + ".f64";
}

void write_f64(const std::filesystem::path& path, const Tensor& t) {
  std::vector<char> bytes(t.size() * 8);
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(t[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::memcpy(bytes.data() + i * 8, &bits, 8);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void read_f64(const std::filesystem::path& path, Tensor& t) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw Error("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(f.tellg());
  if (size != t.size() * 8) throw Error("checkpoint tensor " + path.filename().string() + ": payload size mismatch");
  f.seekg(0);
  std::vector<char> bytes(size);
  f.read(bytes.data(), static_cast<std::streamsize>(size));
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, bytes.data() + i * 8, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    t[i] = std::bit_cast<double>(bits);
  }
  if (!t.all_finite()) throw Error("checkpoint tensor " + path.filename().string() + " has non-finite values");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const std::string& header_json, const ParamSet& params) {
  json model;
  try {
    model = json::parse(header_json);
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint header: ") + e.what());
  }
  if (!model.is_object()) throw Error("checkpoint header must be a JSON object");
  std::filesystem::create_directories(dir);
  json j;
  j["format"] = "radfuse-checkpoint";
  j["version"] = 1;
  j["byte_order"] = "little";
  j["scalar_type"] = "float64";
  j["model"] = model;
  j["tensors"] = json::array();
  for (std::size_t k = 0; k < params.names.size(); ++k) {
    const Tensor& t = *params.values[k];
    const std::string file = tensor_file(params.names[k]);
    write_f64(dir / file, t);
    j["tensors"].push_back({{"name", params.names[k]}, {"shape", t.shape()}, {"file", file}});
  }
  std::ofstream f(dir / "checkpoint.json");
  if (!f) throw Error("cannot write " + (dir / "checkpoint.json").string());
  f << j.dump(2) << '\n';
}

std::string read_checkpoint_header(const std::filesystem::path& dir) {
  const json j = read_json(dir / "checkpoint.json");
  if (j.value("format", "") != "radfuse-checkpoint" || j.value("version", 0) != 1)
    throw Error("unsupported checkpoint format in " + dir.string());
  return j.at("model").dump();
}

std::string load_checkpoint(const std::filesystem::path& dir, ParamSet& params) {
  const json j = read_json(dir / "checkpoint.json");
  if (j.value("format", "") != "radfuse-checkpoint" || j.value("version", 0) != 1)
    throw Error("unsupported checkpoint format in " + dir.string());
  const auto& tensors = j.at("tensors");
  if (tensors.size() != params.names.size())
    throw Error("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                std::to_string(params.names.size()));
  for (const auto& t : tensors) {
    const auto name = t.at("name").get<std::string>();
    const auto it = std::find(params.names.begin(), params.names.end(), name);
    if (it == params.names.end()) throw Error("checkpoint tensor '" + name + "' is not a model parameter");
    Tensor& dst = *params.values[static_cast<std::size_t>(it - params.names.begin())];
    if (t.at("shape").get<std::vector<int>>() != dst.shape())
      throw Error("checkpoint tensor '" + name + "' has shape " + t.at("shape").dump() + ", model expects " +
                  dst.shape_string());
    read_f64(dir / t.at("file").get<std::string>(), dst);
  }
  return j.at("model").dump();
}

}  // namespace radfuse
