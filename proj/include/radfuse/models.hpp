#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "radfuse/nn.hpp"

namespace radfuse {

struct EncoderConfig {
  int in_channels = 1;
  int base_channels = 8;
  int blocks = 3;
  /// Output width D; also the channel count of the last block.
  int embed_dim = 64;
  int kernel = 3;

  void validate() const;
  /// Output channels of the stem followed by each block.
  std::vector<int> channels() const;
};

struct ConvParam {
  Conv3DLayer layer;
  Tensor dW, db;
};

struct DenseParam {
  DenseLayer layer;
  Tensor dW, db;
};

/// Stride-2 stem, then residual blocks (stride-2 conv, conv, parameter-free shortcut), then global average pool.
class Encoder3D {
 public:
  struct Cache {
    Tensor x, stem_pre, stem_out;
    struct Block {
      Tensor in, u, v, z;
    };
    std::vector<Block> blocks;
    Tensor out;  // relu of the last block, before pooling
  };

  explicit Encoder3D(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  void init(std::mt19937_64& rng);
  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients from d(loss)/d(embedding).
  void backward(const Cache& cache, const Tensor& d_embed);
  void register_params(ParamSet& ps, const std::string& prefix);
  std::uint64_t pattern(const Cache& cache, std::uint64_t seed) const;

 private:
  struct Block {
    ConvParam conv1, conv2;
  };
  EncoderConfig cfg_;
  ConvParam stem_;
  std::vector<Block> blocks_;
};

/// Strided channel-padding shortcut of a residual block: samples the conv window centers.
Tensor shortcut_forward(const Tensor& x, int out_channels, int stride, int kernel);
Tensor shortcut_backward(const std::vector<int>& in_shape, const Tensor& dy, int stride, int kernel);

struct ModelInput {
  const Tensor* patch = nullptr;
  const Tensor* rf = nullptr;
};

/// Common interface of the trainable networks.
class Network {
 public:
  Network() = default;
  Network(const Network&) = delete;  // params_ points into the derived object
  Network& operator=(const Network&) = delete;
  virtual ~Network() = default;
  virtual std::string kind() const = 0;
  virtual void init(std::uint64_t seed) = 0;
  virtual Tensor logits(const ModelInput& in) const = 0;
  /// Forward + backward for one sample; adds into the gradient buffers and returns the loss.
  virtual double accumulate(const ModelInput& in, int label) = 0;
  /// Loss and ReLU sign pattern, for finite-difference probes.
  virtual ProbeValue probe(const ModelInput& in, int label) const = 0;
  /// Model description stored in checkpoint headers.
  virtual std::string header_json() const = 0;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::vector<double> predict_proba(const ModelInput& in) const;
  int predict(const ModelInput& in) const;

 protected:
  ParamSet params_;
};

struct FusionConfig {
  EncoderConfig encoder;
  int rf_dim = 1;
  int convert_dim = 512;
  int fusion_dim = 256;
  int classes = 4;

  void validate() const;
};

/// Deep and radiomics streams converted to convert_dim each, concatenated [RF, DF], fused, classified.
class FusionModel : public Network {
 public:
  struct Cache {
    Encoder3D::Cache enc;
    Tensor df, rf, r_pre, r, d_pre, d, x, f_pre, f, logits;
  };

  explicit FusionModel(const FusionConfig& cfg);
  std::string kind() const override { return "fusion"; }
  void init(std::uint64_t seed) override;
  Tensor logits(const ModelInput& in) const override;
  double accumulate(const ModelInput& in, int label) override;
  ProbeValue probe(const ModelInput& in, int label) const override;
  std::string header_json() const override;

  Tensor forward(const ModelInput& in, Cache& cache) const;
  const FusionConfig& config() const { return cfg_; }
  Encoder3D& encoder() { return encoder_; }
  DenseParam& conv_rf() { return conv_rf_; }
  DenseParam& conv_df() { return conv_df_; }
  DenseParam& fusion() { return fusion_; }
  DenseParam& classifier() { return classifier_; }

 private:
  FusionConfig cfg_;
  Encoder3D encoder_;
  DenseParam conv_rf_, conv_df_, fusion_, classifier_;
};

struct CnnConfig {
  EncoderConfig encoder;
  int classes = 4;
};

/// Encoder with a single dense head.
class CnnModel : public Network {
 public:
  struct Cache {
    Encoder3D::Cache enc;
    Tensor df, logits;
  };

  explicit CnnModel(const CnnConfig& cfg);
  std::string kind() const override { return "cnn"; }
  void init(std::uint64_t seed) override;
  Tensor logits(const ModelInput& in) const override;
  double accumulate(const ModelInput& in, int label) override;
  ProbeValue probe(const ModelInput& in, int label) const override;
  std::string header_json() const override;

  Tensor forward(const ModelInput& in, Cache& cache) const;
  const CnnConfig& config() const { return cfg_; }
  Encoder3D& encoder() { return encoder_; }
  DenseParam& head() { return head_; }

 private:
  CnnConfig cfg_;
  Encoder3D encoder_;
  DenseParam head_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Validation-loss early stopping: stop once more than `patience` epochs pass without improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);
  /// Records one epoch; returns true when it is a new best.
  bool update(double val_loss);
  bool should_stop() const { return since_best_ > patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_ = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  bool stopped_early = false;

  std::string to_json() const;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
  std::vector<std::vector<double>> probs;
};

Evaluation evaluate(const Network& net, const std::vector<ModelInput>& inputs, const std::vector<int>& labels,
                    const std::vector<int>& rows);

/// Splits `rows` into (train, val) by moving floor(fraction * count) rows of each class to val.
std::pair<std::vector<int>, std::vector<int>> carve_validation(const std::vector<int>& labels,
                                                               const std::vector<int>& rows, double fraction,
                                                               std::uint64_t seed);

/// One pass over shuffled `rows` in minibatches; returns the mean sample loss.
double train_epoch(Network& net, const std::vector<ModelInput>& inputs, const std::vector<int>& labels,
                   const std::vector<int>& rows, const SGDConfig& cfg, std::vector<Tensor>& velocity,
                   std::mt19937_64& rng);

/// Minibatch SGD with early stopping on the validation rows; the best-validation snapshot is restored.
TrainLog train_network(Network& net, const std::vector<ModelInput>& inputs, const std::vector<int>& labels,
                       const std::vector<int>& train_rows, const std::vector<int>& val_rows, const SGDConfig& cfg);

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Copies every parameter of `from` whose name starts with `prefix` into the same-named, same-shaped
/// parameter of `to`. Returns the number of tensors copied; throws on a shape mismatch or when none match.
int copy_params(const Network& from, Network& to, const std::string& prefix);

/// Checkpoint plus link.json recording the selection pipeline hash the model was trained against.
void save_network(const Network& net, const std::filesystem::path& dir, const std::string& pipeline_hash);
std::unique_ptr<Network> load_network(const std::filesystem::path& dir);
/// Pipeline hash from link.json.
std::string linked_pipeline_hash(const std::filesystem::path& dir);

}  // namespace radfuse
