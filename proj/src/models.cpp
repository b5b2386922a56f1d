#include "radfuse/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"
#include "radfuse/eval.hpp"

namespace radfuse {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (in_channels < 1) throw Error("encoder: in_channels must be >= 1");
  if (base_channels < 1) throw Error("encoder: base_channels must be >= 1");
  if (blocks < 1) throw Error("encoder: need at least one residual block");
  if (kernel < 1 || kernel % 2 == 0) throw Error("encoder: kernel must be odd");
  const auto ch = channels();
  for (std::size_t i = 1; i < ch.size(); ++i)
    if (ch[i] < ch[i - 1])
      throw Error("encoder: embed_dim " + std::to_string(embed_dim) + " is narrower than the preceding block (" +
                  std::to_string(ch[i - 1]) + " channels)");
}

std::vector<int> EncoderConfig::channels() const {
  std::vector<int> ch{base_channels};
  for (int b = 0; b < blocks; ++b) ch.push_back(b == blocks - 1 ? embed_dim : base_channels << (b + 1));
  return ch;
}

namespace {

ConvParam make_conv(int in, int out, int k, int stride) {
  ConvParam p{Conv3DLayer(in, out, k, stride), Tensor(), Tensor()};
  p.dW = Tensor(p.layer.W.shape());
  p.db = Tensor(p.layer.b.shape());
  return p;
}

DenseParam make_dense(int in, int out) {
  DenseParam p{DenseLayer(in, out), Tensor(), Tensor()};
  p.dW = Tensor(p.layer.W.shape());
  p.db = Tensor(p.layer.b.shape());
  return p;
}

void add_into(Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

json encoder_json(const EncoderConfig& c) {
  return {{"in_channels", c.in_channels}, {"base_channels", c.base_channels}, {"blocks", c.blocks},
          {"embed_dim", c.embed_dim},     {"kernel", c.kernel}};
}

EncoderConfig encoder_from(const json& j) {
  EncoderConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.kernel = j.at("kernel").get<int>();
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Shortcut
// ---------------------------------------------------------------------------

namespace {

// Input index of the conv window center for output index o along one axis.
struct CenterMap {
  int out, offset, stride;
};

CenterMap center_map(int n, int k, int stride) {
  const SamePadding p = same_padding(n, k, stride);
  return {p.out, (k - 1) / 2 - p.before, stride};
}

}  // namespace

Tensor shortcut_forward(const Tensor& x, int out_channels, int stride, int kernel) {
  if (x.rank() != 4) throw Error("shortcut: expected {C, z, y, x} input");
  const int C = x.dim(0), nz = x.dim(1), ny = x.dim(2), nx = x.dim(3);
  if (out_channels < C) throw Error("shortcut: cannot drop channels");
  const CenterMap mz = center_map(nz, kernel, stride), my = center_map(ny, kernel, stride),
                  mx = center_map(nx, kernel, stride);
  Tensor y({out_channels, mz.out, my.out, mx.out});
  std::size_t o = 0;
  for (int c = 0; c < C; ++c)
    for (int z = 0; z < mz.out; ++z)
      for (int yy = 0; yy < my.out; ++yy)
        for (int xx = 0; xx < mx.out; ++xx) {
          const int iz = z * stride + mz.offset, iy = yy * stride + my.offset, ix = xx * stride + mx.offset;
          y[o++] = x[((static_cast<std::size_t>(c) * nz + iz) * ny + iy) * nx + ix];
        }
  return y;
}

Tensor shortcut_backward(const std::vector<int>& in_shape, const Tensor& dy, int stride, int kernel) {
  Tensor dx(in_shape);
  const int C = in_shape[0], nz = in_shape[1], ny = in_shape[2], nx = in_shape[3];
  const CenterMap mz = center_map(nz, kernel, stride), my = center_map(ny, kernel, stride),
                  mx = center_map(nx, kernel, stride);
  std::size_t o = 0;
  for (int c = 0; c < C; ++c)
    for (int z = 0; z < mz.out; ++z)
      for (int yy = 0; yy < my.out; ++yy)
        for (int xx = 0; xx < mx.out; ++xx) {
          const int iz = z * stride + mz.offset, iy = yy * stride + my.offset, ix = xx * stride + mx.offset;
          dx[((static_cast<std::size_t>(c) * nz + iz) * ny + iy) * nx + ix] += dy[o++];
        }
  return dx;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

Encoder3D::Encoder3D(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto ch = cfg_.channels();
  stem_ = make_conv(cfg_.in_channels, ch[0], cfg_.kernel, 2);
  for (int b = 0; b < cfg_.blocks; ++b)
    blocks_.push_back({make_conv(ch[b], ch[b + 1], cfg_.kernel, 2), make_conv(ch[b + 1], ch[b + 1], cfg_.kernel, 1)});
}

void Encoder3D::init(std::mt19937_64& rng) {
  init_layer(stem_.layer, rng);
  for (auto& b : blocks_) {
    init_layer(b.conv1.layer, rng);
    init_layer(b.conv2.layer, rng);
  }
}

void Encoder3D::register_params(ParamSet& ps, const std::string& prefix) {
  ps.add(prefix + "stem/W", stem_.layer.W, stem_.dW);
  ps.add(prefix + "stem/b", stem_.layer.b, stem_.db);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + "block" + std::to_string(i + 1) + "/";
    ps.add(p + "conv1/W", blocks_[i].conv1.layer.W, blocks_[i].conv1.dW);
    ps.add(p + "conv1/b", blocks_[i].conv1.layer.b, blocks_[i].conv1.db);
    ps.add(p + "conv2/W", blocks_[i].conv2.layer.W, blocks_[i].conv2.dW);
    ps.add(p + "conv2/b", blocks_[i].conv2.layer.b, blocks_[i].conv2.db);
  }
}

Tensor Encoder3D::forward(const Tensor& x, Cache* cache) const {
  if (x.rank() != 4 || x.dim(0) != cfg_.in_channels)
    throw Error("encoder: input " + x.shape_string() + " does not have " + std::to_string(cfg_.in_channels) +
                " channel(s)");
  Tensor pre = conv3d_forward(stem_.layer, x);
  Tensor h = relu(pre);
  if (cache) {
    cache->x = x;
    cache->stem_pre = std::move(pre);
    cache->stem_out = h;
    cache->blocks.clear();
  }
  for (const auto& b : blocks_) {
    Tensor u = conv3d_forward(b.conv1.layer, h);
    Tensor v = relu(u);
    Tensor z = conv3d_forward(b.conv2.layer, v);
    add_into(z, shortcut_forward(h, b.conv2.layer.out_channels(), b.conv1.layer.stride, cfg_.kernel));
    Tensor out = relu(z);
    if (cache) cache->blocks.push_back({std::move(h), std::move(u), std::move(v), std::move(z)});
    h = std::move(out);
  }
  Tensor e = global_avg_pool(h);
  if (cache) cache->out = std::move(h);
  return e;
}

void Encoder3D::backward(const Cache& cache, const Tensor& d_embed) {
  Tensor dh = global_avg_pool_backward(cache.out.shape(), d_embed);
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    auto& b = blocks_[i];
    const auto& c = cache.blocks[i];
    const Tensor dz = relu_backward(c.z, dh);
    const Tensor dv = conv3d_backward(b.conv2.layer, c.v, dz, b.conv2.dW, b.conv2.db);
    const Tensor du = relu_backward(c.u, dv);
    dh = conv3d_backward(b.conv1.layer, c.in, du, b.conv1.dW, b.conv1.db);
    add_into(dh, shortcut_backward(c.in.shape(), dz, b.conv1.layer.stride, cfg_.kernel));
  }
  const Tensor dpre = relu_backward(cache.stem_pre, dh);
  conv3d_backward(stem_.layer, cache.x, dpre, stem_.dW, stem_.db, false);
}

std::uint64_t Encoder3D::pattern(const Cache& cache, std::uint64_t seed) const {
  std::uint64_t h = relu_pattern(cache.stem_pre, seed);
  for (const auto& b : cache.blocks) h = relu_pattern(b.z, relu_pattern(b.u, h));
  return h;
}

// ---------------------------------------------------------------------------
// Network base
// ---------------------------------------------------------------------------

std::vector<double> Network::predict_proba(const ModelInput& in) const { return softmax(logits(in).values()); }

int Network::predict(const ModelInput& in) const {
  const Tensor z = logits(in);
  return static_cast<int>(std::max_element(z.values().begin(), z.values().end()) - z.values().begin());
}

// ---------------------------------------------------------------------------
// Fusion model
// ---------------------------------------------------------------------------

void FusionConfig::validate() const {
  encoder.validate();
  if (rf_dim < 1) throw Error("fusion: rf_dim must be >= 1");
  if (convert_dim < 1 || fusion_dim < 1) throw Error("fusion: layer widths must be >= 1");
  if (classes < 2) throw Error("fusion: need at least 2 classes");
}

FusionModel::FusionModel(const FusionConfig& cfg) : cfg_(cfg), encoder_(cfg.encoder) {
  cfg_.validate();
  conv_rf_ = make_dense(cfg_.rf_dim, cfg_.convert_dim);
  conv_df_ = make_dense(cfg_.encoder.embed_dim, cfg_.convert_dim);
  fusion_ = make_dense(2 * cfg_.convert_dim, cfg_.fusion_dim);
  classifier_ = make_dense(cfg_.fusion_dim, cfg_.classes);
  encoder_.register_params(params_, "encoder/");
  params_.add("conv_rf/W", conv_rf_.layer.W, conv_rf_.dW);
  params_.add("conv_rf/b", conv_rf_.layer.b, conv_rf_.db);
  params_.add("conv_df/W", conv_df_.layer.W, conv_df_.dW);
  params_.add("conv_df/b", conv_df_.layer.b, conv_df_.db);
  params_.add("fusion/W", fusion_.layer.W, fusion_.dW);
  params_.add("fusion/b", fusion_.layer.b, fusion_.db);
  params_.add("classifier/W", classifier_.layer.W, classifier_.dW);
  params_.add("classifier/b", classifier_.layer.b, classifier_.db);
}

void FusionModel::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  encoder_.init(rng);
  init_layer(conv_rf_.layer, rng);
  init_layer(conv_df_.layer, rng);
  init_layer(fusion_.layer, rng);
  init_layer(classifier_.layer, rng);
}

Tensor FusionModel::forward(const ModelInput& in, Cache& c) const {
  if (!in.patch || !in.rf) throw Error("fusion: needs both a patch and an RF vector");
  if (in.rf->rank() != 1 || in.rf->dim(0) != cfg_.rf_dim)
    throw Error("fusion: RF width " + in.rf->shape_string() + " does not match rf_dim " + std::to_string(cfg_.rf_dim));
  c.df = encoder_.forward(*in.patch, &c.enc);
  c.rf = *in.rf;
  c.r_pre = dense_forward(conv_rf_.layer, c.rf);
  c.r = relu(c.r_pre);
  c.d_pre = dense_forward(conv_df_.layer, c.df);
  c.d = relu(c.d_pre);
  c.x = Tensor({2 * cfg_.convert_dim});
  std::copy(c.r.values().begin(), c.r.values().end(), c.x.values().begin());
  std::copy(c.d.values().begin(), c.d.values().end(), c.x.values().begin() + cfg_.convert_dim);
  c.f_pre = dense_forward(fusion_.layer, c.x);
  c.f = relu(c.f_pre);
  c.logits = dense_forward(classifier_.layer, c.f);
  return c.logits;
}

Tensor FusionModel::logits(const ModelInput& in) const {
  Cache c;
  return forward(in, c);
}

double FusionModel::accumulate(const ModelInput& in, int label) {
  Cache c;
  forward(in, c);
  const SoftmaxCE ce = softmax_ce(c.logits, label);
  const Tensor df = dense_backward(classifier_.layer, c.f, ce.dlogits, classifier_.dW, classifier_.db);
  const Tensor dx = dense_backward(fusion_.layer, c.x, relu_backward(c.f_pre, df), fusion_.dW, fusion_.db);
  Tensor dr({cfg_.convert_dim}), dd({cfg_.convert_dim});
  std::copy(dx.values().begin(), dx.values().begin() + cfg_.convert_dim, dr.values().begin());
  std::copy(dx.values().begin() + cfg_.convert_dim, dx.values().end(), dd.values().begin());
  dense_backward(conv_rf_.layer, c.rf, relu_backward(c.r_pre, dr), conv_rf_.dW, conv_rf_.db, false);
  const Tensor ddf = dense_backward(conv_df_.layer, c.df, relu_backward(c.d_pre, dd), conv_df_.dW, conv_df_.db);
  encoder_.backward(c.enc, ddf);
  return ce.loss;
}

ProbeValue FusionModel::probe(const ModelInput& in, int label) const {
  Cache c;
  forward(in, c);
  std::uint64_t h = encoder_.pattern(c.enc, 0);
  h = relu_pattern(c.f_pre, relu_pattern(c.d_pre, relu_pattern(c.r_pre, h)));
  return {softmax_ce(c.logits, label).loss, h};
}

std::string FusionModel::header_json() const {
  return json{{"kind", kind()},
              {"encoder", encoder_json(cfg_.encoder)},
              {"rf_dim", cfg_.rf_dim},
              {"convert_dim", cfg_.convert_dim},
              {"fusion_dim", cfg_.fusion_dim},
              {"classes", cfg_.classes}}
      .dump();
}

// ---------------------------------------------------------------------------
// CNN baseline
// ---------------------------------------------------------------------------

CnnModel::CnnModel(const CnnConfig& cfg) : cfg_(cfg), encoder_(cfg.encoder) {
  if (cfg_.classes < 2) throw Error("cnn: need at least 2 classes");
  head_ = make_dense(cfg_.encoder.embed_dim, cfg_.classes);
  encoder_.register_params(params_, "encoder/");
  params_.add("head/W", head_.layer.W, head_.dW);
  params_.add("head/b", head_.layer.b, head_.db);
}

void CnnModel::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  encoder_.init(rng);
  init_layer(head_.layer, rng);
}

Tensor CnnModel::forward(const ModelInput& in, Cache& c) const {
  if (!in.patch) throw Error("cnn: needs a patch");
  c.df = encoder_.forward(*in.patch, &c.enc);
  c.logits = dense_forward(head_.layer, c.df);
  return c.logits;
}

Tensor CnnModel::logits(const ModelInput& in) const {
  Cache c;
  return forward(in, c);
}

double CnnModel::accumulate(const ModelInput& in, int label) {
  Cache c;
  forward(in, c);
  const SoftmaxCE ce = softmax_ce(c.logits, label);
  encoder_.backward(c.enc, dense_backward(head_.layer, c.df, ce.dlogits, head_.dW, head_.db));
  return ce.loss;
}

ProbeValue CnnModel::probe(const ModelInput& in, int label) const {
  Cache c;
  forward(in, c);
  return {softmax_ce(c.logits, label).loss, encoder_.pattern(c.enc, 0)};
}

std::string CnnModel::header_json() const {
  return json{{"kind", kind()}, {"encoder", encoder_json(cfg_.encoder)}, {"classes", cfg_.classes}}.dump();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

EarlyStopper::EarlyStopper(int patience) : patience_(patience) {
  if (patience < 1) throw Error("early stopping: patience must be >= 1");
}

bool EarlyStopper::update(double val_loss) {
  ++epoch_;
  if (epoch_ == 1 || val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

std::string TrainLog::to_json() const {
  json j;
  j["best_epoch"] = best_epoch;
  j["stopped_early"] = stopped_early;
  j["epochs"] = json::array();
  for (const auto& e : epochs)
    j["epochs"].push_back(
        {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_accuracy", e.val_accuracy}});
  return j.dump(2);
}

Evaluation evaluate(const Network& net, const std::vector<ModelInput>& inputs, const std::vector<int>& labels,
                    const std::vector<int>& rows) {
  if (rows.empty()) throw Error("evaluate: no rows");
  Evaluation ev;
  int correct = 0;
  for (int r : rows) {
    const Tensor z = net.logits(inputs.at(static_cast<std::size_t>(r)));
    const SoftmaxCE ce = softmax_ce(z, labels.at(static_cast<std::size_t>(r)));
    ev.loss += ce.loss;
    const int pred = static_cast<int>(std::max_element(z.values().begin(), z.values().end()) - z.values().begin());
    ev.predictions.push_back(pred);
    ev.probs.push_back(ce.probs.values());
    correct += pred == labels[static_cast<std::size_t>(r)];
  }
  ev.loss /= static_cast<double>(rows.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  return ev;
}

std::pair<std::vector<int>, std::vector<int>> carve_validation(const std::vector<int>& labels,
                                                               const std::vector<int>& rows, double fraction,
                                                               std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error("validation fraction must be in [0, 1)");
  std::map<int, std::vector<int>> by_class;
  for (int r : rows) by_class[labels.at(static_cast<std::size_t>(r))].push_back(r);
  std::mt19937_64 rng(seed);
  std::vector<int> train, val;
  for (auto& [label, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_val = static_cast<std::size_t>(floor_count(fraction, members.size()));
    val.insert(val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

double train_epoch(Network& net, const std::vector<ModelInput>& inputs, const std::vector<int>& labels,
                   const std::vector<int>& rows, const SGDConfig& cfg, std::vector<Tensor>& velocity,
                   std::mt19937_64& rng) {
  if (rows.empty()) throw Error("train: empty training split");
  std::vector<int> order = rows;
  std::shuffle(order.begin(), order.end(), rng);
  ParamSet& ps = net.params();
  const auto grads = ps.grad_views();
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
    ps.zero_grad();
    for (std::size_t i = start; i < end; ++i) {
      const auto r = static_cast<std::size_t>(order[i]);
      const double loss = net.accumulate(inputs.at(r), labels.at(r));
      if (!std::isfinite(loss)) throw Error("train: loss became non-finite");
      total += loss;
    }
    const double scale = 1.0 / static_cast<double>(end - start);
    for (Tensor* g : ps.grads)
      for (auto& v : g->values()) v *= scale;
    sgd_step(ps.values, grads, velocity, cfg);
  }
  return total / static_cast<double>(order.size());
}

TrainLog train_network(Network& net, const std::vector<ModelInput>& inputs, const std::vector<int>& labels,
                       const std::vector<int>& train_rows, const std::vector<int>& val_rows, const SGDConfig& cfg) {
  cfg.validate();
  if (train_rows.empty()) throw Error("train: empty training split");
  if (val_rows.empty()) throw Error("train: empty validation split");
  if (inputs.size() != labels.size()) throw Error("train: input and label counts differ");
  std::mt19937_64 rng(cfg.seed);
  std::vector<Tensor> velocity;
  EarlyStopper stopper(cfg.patience);
  auto snapshot = [&] {
    std::vector<Tensor> s;
    for (const Tensor* t : net.params().values) s.push_back(*t);
    return s;
  };
  std::vector<Tensor> best = snapshot();
  TrainLog log;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = train_epoch(net, inputs, labels, train_rows, cfg, velocity, rng);
    const Evaluation ev = evaluate(net, inputs, labels, val_rows);
    e.val_loss = ev.loss;
    e.val_accuracy = ev.accuracy;
    log.epochs.push_back(e);
    if (stopper.update(ev.loss)) best = snapshot();
    if (stopper.should_stop()) {
      log.stopped_early = true;
      break;
    }
  }
  for (std::size_t k = 0; k < best.size(); ++k) *net.params().values[k] = best[k];
  log.best_epoch = stopper.best_epoch();
  return log;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

int copy_params(const Network& from, Network& to, const std::string& prefix) {
  int copied = 0;
  const ParamSet& src = from.params();
  ParamSet& dst = to.params();
  for (std::size_t i = 0; i < src.names.size(); ++i) {
    if (src.names[i].rfind(prefix, 0) != 0) continue;
    const auto it = std::find(dst.names.begin(), dst.names.end(), src.names[i]);
    if (it == dst.names.end()) throw Error("copy_params: target has no parameter " + src.names[i]);
    Tensor& t = *dst.values[static_cast<std::size_t>(it - dst.names.begin())];
    if (t.shape() != src.values[i]->shape())
      throw Error("copy_params: shape mismatch for " + src.names[i] + ": " + src.values[i]->shape_string() + " vs " +
                  t.shape_string());
    t = *src.values[i];
    ++copied;
  }
  if (copied == 0) throw Error("copy_params: no parameter starts with '" + prefix + "'");
  return copied;
}

void save_network(const Network& net, const std::filesystem::path& dir, const std::string& pipeline_hash) {
  save_checkpoint(dir, net.header_json(), net.params());
  json link{{"kind", net.kind()}, {"pipeline_hash", pipeline_hash}};
  std::ofstream f(dir / "link.json");
  if (!f) throw Error("cannot write " + (dir / "link.json").string());
  f << link.dump(2) << '\n';
}

std::unique_ptr<Network> load_network(const std::filesystem::path& dir) {
  json h;
  try {
    h = json::parse(read_checkpoint_header(dir));
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint header: ") + e.what());
  }
  std::unique_ptr<Network> net;
  try {
    const auto kind = h.at("kind").get<std::string>();
    if (kind == "fusion") {
      FusionConfig c;
      c.encoder = encoder_from(h.at("encoder"));
      c.rf_dim = h.at("rf_dim").get<int>();
      c.convert_dim = h.at("convert_dim").get<int>();
      c.fusion_dim = h.at("fusion_dim").get<int>();
      c.classes = h.at("classes").get<int>();
      net = std::make_unique<FusionModel>(c);
    } else if (kind == "cnn") {
      CnnConfig c;
      c.encoder = encoder_from(h.at("encoder"));
      c.classes = h.at("classes").get<int>();
      net = std::make_unique<CnnModel>(c);
    } else {
      throw Error("unknown model kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint header: ") + e.what());
  }
  load_checkpoint(dir, net->params());
  return net;
}

std::string linked_pipeline_hash(const std::filesystem::path& dir) {
  std::ifstream f(dir / "link.json");
  if (!f) throw Error("missing " + (dir / "link.json").string());
  try {
    return json::parse(f).at("pipeline_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(std::string("link.json: ") + e.what());
  }
}

}  // namespace radfuse
