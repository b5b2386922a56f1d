#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "radfuse/volume.hpp"

namespace radfuse {

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v);
  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

/// Single-channel tensor {1, nz, ny, nx} from a volume: (v - center) / scale.
Tensor volume_tensor(const Volume& v, double center = 0.0, double scale = 1.0);

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct DenseLayer {
  Tensor W;  // {out, in}
  Tensor b;  // {out}

  DenseLayer() = default;
  DenseLayer(int in, int out);
  int in() const { return W.dim(1); }
  int out() const { return W.dim(0); }
};

Tensor dense_forward(const DenseLayer& layer, const Tensor& x);
/// Adds parameter gradients into dW, db and returns dx (skipped when need_dx is false).
Tensor dense_backward(const DenseLayer& layer, const Tensor& x, const Tensor& dy, Tensor& dW, Tensor& db,
                      bool need_dx = true);

struct DenseGrads {
  Tensor dx, dW, db;
};
DenseGrads dense_backward(const DenseLayer& layer, const Tensor& x, const Tensor& dy);

/// Output extent and leading pad of "same" padding: out = ceil(n / s).
struct SamePadding {
  int out = 0;
  int before = 0;
};
SamePadding same_padding(int n, int k, int stride);

struct Conv3DLayer {
  Tensor W;  // {out_ch, in_ch, kz, ky, kx}
  Tensor b;  // {out_ch}
  int stride = 1;

  Conv3DLayer() = default;
  /// Throws for even kernel extents.
  Conv3DLayer(int in_ch, int out_ch, std::array<int, 3> kernel_zyx, int stride);
  Conv3DLayer(int in_ch, int out_ch, int k, int stride) : Conv3DLayer(in_ch, out_ch, {k, k, k}, stride) {}
  int in_channels() const { return W.dim(1); }
  int out_channels() const { return W.dim(0); }
  std::array<int, 3> kernel() const { return {W.dim(2), W.dim(3), W.dim(4)}; }
  /// Output shape {out_ch, oz, oy, ox} for input {in_ch, nz, ny, nx}.
  std::vector<int> output_shape(const std::vector<int>& in) const;
};

/// x: {in_ch, nz, ny, nx}, zero "same" padding.
Tensor conv3d_forward(const Conv3DLayer& layer, const Tensor& x);
Tensor conv3d_backward(const Conv3DLayer& layer, const Tensor& x, const Tensor& dy, Tensor& dW, Tensor& db,
                       bool need_dx = true);

struct Conv3DGrads {
  Tensor dx, dW, db;
};
Conv3DGrads conv3d_backward(const Conv3DLayer& layer, const Tensor& x, const Tensor& dy);

Tensor relu(const Tensor& x);
/// dy where the forward input was > 0.
Tensor relu_backward(const Tensor& x, const Tensor& dy);

/// {C, ...} -> {C}: per-channel mean.
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor& dy);

struct SoftmaxCE {
  double loss = 0.0;
  Tensor probs;
  Tensor dlogits;
};
std::vector<double> softmax(const std::vector<double>& logits);
SoftmaxCE softmax_ce(const Tensor& logits, int label);

// ---------------------------------------------------------------------------
// Initialization and optimization
// ---------------------------------------------------------------------------

/// U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases are left at zero.
void he_uniform(Tensor& W, int fan_in, std::mt19937_64& rng);
void init_layer(DenseLayer& layer, std::mt19937_64& rng);
void init_layer(Conv3DLayer& layer, std::mt19937_64& rng);

struct SGDConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  int batch_size = 8;
  int max_epochs = 20;
  int patience = 5;
  /// Fraction of each class carved out of the training rows for early stopping.
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// v <- mu v - lr g; p <- p + v. Velocity tensors are created on first use.
void sgd_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, std::vector<Tensor>& velocity,
              const SGDConfig& cfg);

/// Named parameters with matching gradient buffers.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor*> values;
  std::vector<Tensor*> grads;

  void add(std::string name, Tensor& value, Tensor& grad);
  void zero_grad();
  std::size_t count() const;
  std::vector<const Tensor*> grad_views() const { return {grads.begin(), grads.end()}; }
};

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

struct GradcheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  /// Coordinates skipped because the +-h probe moved an activation across a ReLU kink.
  int skipped = 0;
};

/// Loss evaluation plus an activation-pattern signature.
struct ProbeValue {
  double loss = 0.0;
  std::uint64_t pattern = 0;
};

/// Central differences on `param` at `coords` against `analytic`:
/// rel = |a - n| / max(|a|, |n|, floor).
GradcheckResult gradcheck(Tensor& param, const Tensor& analytic, const std::vector<std::size_t>& coords,
                          const std::function<ProbeValue()>& probe, double h = 1e-4, double floor = 1e-6);

/// Order-sensitive hash of the sign pattern (x > 0) of a tensor, folded into `seed`.
std::uint64_t relu_pattern(const Tensor& x, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Directory with checkpoint.json plus one raw little-endian float64 file per tensor.
/// `header_json` must be a JSON object; it is stored under "model".
void save_checkpoint(const std::filesystem::path& dir, const std::string& header_json, const ParamSet& params);

/// Returns the stored "model" object; tensors are loaded into `params` by name with shape checks.
std::string load_checkpoint(const std::filesystem::path& dir, ParamSet& params);

/// Reads only the "model" object.
std::string read_checkpoint_header(const std::filesystem::path& dir);

}  // namespace radfuse
