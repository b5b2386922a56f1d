#include "radfuse/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"

namespace radfuse {

using nlohmann::ordered_json;

namespace {

template <class T>
struct is_vector : std::false_type {};
template <class T>
struct is_vector<std::vector<T>> : std::true_type {};
template <class T, std::size_t N>
struct is_vector<std::array<T, N>> : std::true_type {};

template <class T>
bool type_matches(const ordered_json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v.is_boolean();
  } else if constexpr (std::is_integral_v<T>) {
    return v.is_number_integer() && (std::is_signed_v<T> || v.get<std::int64_t>() >= 0);
  } else if constexpr (std::is_floating_point_v<T>) {
    return v.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v.is_string();
  } else {
    static_assert(is_vector<T>::value);
    if (!v.is_array()) return false;
    if constexpr (!std::is_same_v<T, std::vector<typename T::value_type>>)
      if (v.size() != std::tuple_size_v<T>) return false;
    for (const auto& e : v)
      if (!type_matches<typename T::value_type>(e)) return false;
    return true;
  }
}

template <class T>
const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_integral_v<T>) return std::is_signed_v<T> ? "an integer" : "a non-negative integer";
  else if constexpr (std::is_floating_point_v<T>) return "a number";
  else if constexpr (std::is_same_v<T, std::string>) return "a string";
  else if constexpr (std::is_same_v<T, std::vector<typename T::value_type>>) return "an array";
  else return "a fixed-length array";
}

/// Reads keys of one JSON object and rejects the ones nobody asked for.
class Reader {
 public:
  Reader(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("config: " + path_ + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!type_matches<T>(v)) throw Error("config: " + where(key) + " must be " + type_name<T>());
    out = v.get<T>();
  }

  Reader sub(const std::string& key) {
    seen_.insert(key);
    static const ordered_json empty = ordered_json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw Error("config: unknown key " + where(k));
  }

 private:
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const ordered_json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  if (schema_version != kConfigSchemaVersion)
    throw Error("config: schema_version " + std::to_string(schema_version) + " is not supported (expected " +
                std::to_string(kConfigSchemaVersion) + ")");
  for (int c : phantom.class_counts)
    if (c < 0) throw Error("config: phantom.class_counts must be >= 0");
  for (double f : phantom.solid_fractions)
    if (f < 0.0 || f > 1.0) throw Error("config: phantom.solid_fractions must lie in [0, 1]");
  phantom.spec.validate();
  if (!(radiomics.bin_width > 0.0)) throw Error("config: radiomics.bin_width must be > 0");
  for (double w : radiomics.extra_bin_widths)
    if (!(w > 0.0)) throw Error("config: radiomics.extra_bin_widths must be > 0");
  if (selection.variance_threshold < 0.0) throw Error("config: selection.variance_threshold must be >= 0");
  if (selection.k < 1) throw Error("config: selection.k must be >= 1");
  if (selection.folds < 2) throw Error("config: selection.folds must be >= 2");
  if (selection.grid_points < 1) throw Error("config: selection.grid_points must be >= 1");
  if (!(selection.grid_ratio > 0.0 && selection.grid_ratio < 1.0))
    throw Error("config: selection.grid_ratio must lie in (0, 1)");
  if (selection.fixed_lambda < 0.0) throw Error("config: selection.fixed_lambda must be >= 0");
  model.encoder.validate();
  if (model.convert_dim < 1 || model.fusion_dim < 1) throw Error("config: model widths must be >= 1");
  if (!(model.patch_scale > 0.0)) throw Error("config: model.patch_scale must be > 0");
  trainer.validate();
  if (fusion_learning_rate < 0.0) throw Error("config: trainer.fusion_learning_rate must be >= 0");
  svm.validate();
  if (svm.classes != kNumClasses) throw Error("config: svm.classes must be 4");
  if (!(eval.train_fraction > 0.0 && eval.train_fraction < 1.0))
    throw Error("config: eval.train_fraction must lie in (0, 1)");
  if (eval.seeds.empty()) throw Error("config: eval.seeds must not be empty");
}

std::string RunConfig::to_json() const {
  const PhantomSpec& s = phantom.spec;
  ordered_json j;
  j["schema_version"] = schema_version;
  j["phantom"] = {{"class_counts", phantom.class_counts},
                  {"solid_fractions", phantom.solid_fractions},
                  {"patch_size", s.patch_size},
                  {"spacing_mm", s.spacing_mm},
                  {"radius_min_mm", s.radius_min_mm},
                  {"radius_max_mm", s.radius_max_mm},
                  {"axis_jitter", s.axis_jitter},
                  {"center_jitter", s.center_jitter},
                  {"solid_jitter", s.solid_jitter},
                  {"texture_amplitude", s.texture_amplitude},
                  {"texture_period", s.texture_period},
                  {"noise_sigma", s.noise_sigma},
                  {"background_hu", s.background_hu},
                  {"ggo_hu", s.ggo_hu},
                  {"solid_hu", s.solid_hu}};
  j["radiomics"] = {{"bin_width", radiomics.bin_width},   {"extra_bin_widths", radiomics.extra_bin_widths},
                    {"shape", radiomics.shape},           {"first_order", radiomics.first_order},
                    {"glcm", radiomics.glcm},             {"glrlm", radiomics.glrlm},
                    {"wavelet", radiomics.wavelet}};
  j["selection"] = {{"variance_threshold", selection.variance_threshold},
                    {"k", selection.k},
                    {"folds", selection.folds},
                    {"grid_points", selection.grid_points},
                    {"grid_ratio", selection.grid_ratio},
                    {"fixed_lambda", selection.fixed_lambda}};
  j["model"] = {{"embed_dim", model.encoder.embed_dim},
                {"base_channels", model.encoder.base_channels},
                {"blocks", model.encoder.blocks},
                {"kernel", model.encoder.kernel},
                {"convert_dim", model.convert_dim},
                {"fusion_dim", model.fusion_dim},
                {"patch_center", model.patch_center},
                {"patch_scale", model.patch_scale},
                {"fusion_encoder_from_cnn", model.fusion_encoder_from_cnn}};
  j["trainer"] = {{"learning_rate", trainer.learning_rate},
                  {"momentum", trainer.momentum},
                  {"batch_size", trainer.batch_size},
                  {"max_epochs", trainer.max_epochs},
                  {"patience", trainer.patience},
                  {"val_fraction", trainer.val_fraction},
                  {"fusion_learning_rate", fusion_learning_rate}};
  j["svm"] = {{"C", svm.C}, {"iterations", svm.iterations}, {"eta0", svm.eta0}};
  j["eval"] = {{"train_fraction", eval.train_fraction}, {"stratified", eval.stratified}, {"seeds", eval.seeds}};
  j["paths"] = {{"dataset", paths.dataset}, {"work", paths.work}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw Error(std::string("config: not valid JSON: ") + e.what());
  }
  RunConfig c;
  Reader root(j, "");
  if (!j.is_object() || !j.contains("schema_version")) throw Error("config: schema_version is required");
  root.get("schema_version", c.schema_version);
  if (c.schema_version != kConfigSchemaVersion)
    throw Error("config: schema_version " + std::to_string(c.schema_version) + " is not supported");

  {
    Reader r = root.sub("phantom");
    PhantomSpec& s = c.phantom.spec;
    r.get("class_counts", c.phantom.class_counts);
    r.get("solid_fractions", c.phantom.solid_fractions);
    r.get("patch_size", s.patch_size);
    r.get("spacing_mm", s.spacing_mm);
    r.get("radius_min_mm", s.radius_min_mm);
    r.get("radius_max_mm", s.radius_max_mm);
    r.get("axis_jitter", s.axis_jitter);
    r.get("center_jitter", s.center_jitter);
    r.get("solid_jitter", s.solid_jitter);
    r.get("texture_amplitude", s.texture_amplitude);
    r.get("texture_period", s.texture_period);
    r.get("noise_sigma", s.noise_sigma);
    r.get("background_hu", s.background_hu);
    r.get("ggo_hu", s.ggo_hu);
    r.get("solid_hu", s.solid_hu);
    r.finish();
  }
  {
    Reader r = root.sub("radiomics");
    r.get("bin_width", c.radiomics.bin_width);
    r.get("extra_bin_widths", c.radiomics.extra_bin_widths);
    r.get("shape", c.radiomics.shape);
    r.get("first_order", c.radiomics.first_order);
    r.get("glcm", c.radiomics.glcm);
    r.get("glrlm", c.radiomics.glrlm);
    r.get("wavelet", c.radiomics.wavelet);
    r.finish();
  }
  {
    Reader r = root.sub("selection");
    r.get("variance_threshold", c.selection.variance_threshold);
    r.get("k", c.selection.k);
    r.get("folds", c.selection.folds);
    r.get("grid_points", c.selection.grid_points);
    r.get("grid_ratio", c.selection.grid_ratio);
    r.get("fixed_lambda", c.selection.fixed_lambda);
    r.finish();
  }
  {
    Reader r = root.sub("model");
    r.get("embed_dim", c.model.encoder.embed_dim);
    r.get("base_channels", c.model.encoder.base_channels);
    r.get("blocks", c.model.encoder.blocks);
    r.get("kernel", c.model.encoder.kernel);
    r.get("convert_dim", c.model.convert_dim);
    r.get("fusion_dim", c.model.fusion_dim);
    r.get("patch_center", c.model.patch_center);
    r.get("patch_scale", c.model.patch_scale);
    r.get("fusion_encoder_from_cnn", c.model.fusion_encoder_from_cnn);
    r.finish();
  }
  {
    Reader r = root.sub("trainer");
    r.get("learning_rate", c.trainer.learning_rate);
    r.get("momentum", c.trainer.momentum);
    r.get("batch_size", c.trainer.batch_size);
    r.get("max_epochs", c.trainer.max_epochs);
    r.get("patience", c.trainer.patience);
    r.get("val_fraction", c.trainer.val_fraction);
    r.get("fusion_learning_rate", c.fusion_learning_rate);
    r.finish();
  }
  {
    Reader r = root.sub("svm");
    r.get("C", c.svm.C);
    r.get("iterations", c.svm.iterations);
    r.get("eta0", c.svm.eta0);
    r.finish();
  }
  {
    Reader r = root.sub("eval");
    r.get("train_fraction", c.eval.train_fraction);
    r.get("stratified", c.eval.stratified);
    r.get("seeds", c.eval.seeds);
    r.finish();
  }
  {
    Reader r = root.sub("paths");
    r.get("dataset", c.paths.dataset);
    r.get("work", c.paths.work);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("config: cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

FusionConfig RunConfig::fusion_config(int rf_dim) const {
  FusionConfig f;
  f.encoder = model.encoder;
  f.rf_dim = rf_dim;
  f.convert_dim = model.convert_dim;
  f.fusion_dim = model.fusion_dim;
  f.classes = kNumClasses;
  return f;
}

SGDConfig RunConfig::fusion_trainer() const {
  SGDConfig s = trainer;
  if (fusion_learning_rate > 0.0) s.learning_rate = fusion_learning_rate;
  return s;
}

CnnConfig RunConfig::cnn_config() const { return {model.encoder, kNumClasses}; }

}  // namespace radfuse
