#include "radfuse/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

namespace radfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_dims(const Dims& d) {
  if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw Error("volume dims must all be >= 1");
}

void check_spacing(const Spacing& s) {
  if (!(s.x > 0.0) || !(s.y > 0.0) || !(s.z > 0.0) || !std::isfinite(s.x) || !std::isfinite(s.y) ||
      !std::isfinite(s.z))
    throw Error("volume spacing must be finite and > 0");
}

const char* scalar_name(ScalarType t) {
  switch (t) {
    case ScalarType::Float32: return "float32";
    case ScalarType::Float64: return "float64";
    case ScalarType::UInt8: return "uint8";
  }
  return "?";
}

ScalarType scalar_from_name(const std::string& s) {
  if (s == "float32") return ScalarType::Float32;
  if (s == "float64") return ScalarType::Float64;
  if (s == "uint8") return ScalarType::UInt8;
  throw Error("unsupported scalar type '" + s + "'");
}

std::size_t scalar_bytes(ScalarType t) {
  switch (t) {
    case ScalarType::Float32: return 4;
    case ScalarType::Float64: return 8;
    case ScalarType::UInt8: return 1;
  }
  return 0;
}

template <typename T>
void put_le(std::vector<char>& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

template <typename T>
T get_le(const char* p) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

fs::path strip_json(const fs::path& stem) {
  if (stem.extension() == ".json") return fs::path(stem).replace_extension();
  return stem;
}

fs::path with_suffix(const fs::path& stem, const char* suffix) {
  return fs::path(stem.string() + suffix);
}

void write_container(const fs::path& stem_in, const Dims& dims, const Spacing& spacing, ScalarType type,
                     const std::vector<char>& payload) {
  const fs::path stem = strip_json(stem_in);
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  json header = {
      {"dims", {dims.nx, dims.ny, dims.nz}},
      {"spacing", {spacing.x, spacing.y, spacing.z}},
      {"scalar_type", scalar_name(type)},
      {"byte_order", "little"},
      {"payload", with_suffix(stem, ".raw").filename().string()},
  };
  std::ofstream hs(with_suffix(stem, ".json"), std::ios::binary);
  if (!hs) throw Error("cannot write " + with_suffix(stem, ".json").string());
  hs << header.dump(2) << '\n';
  std::ofstream ps(with_suffix(stem, ".raw"), std::ios::binary);
  if (!ps) throw Error("cannot write " + with_suffix(stem, ".raw").string());
  ps.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

struct Container {
  Dims dims;
  Spacing spacing;
  ScalarType type;
  std::vector<char> payload;
};

Container read_container(const fs::path& stem_in) {
  const fs::path stem = strip_json(stem_in);
  const fs::path header_path = with_suffix(stem, ".json");
  std::ifstream hs(header_path);
  if (!hs) throw Error("missing volume header " + header_path.string());
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw Error("malformed volume header " + header_path.string() + ": " + e.what());
  }
  Container c;
  try {
    const auto& d = header.at("dims");
    const auto& s = header.at("spacing");
    if (d.size() != 3 || s.size() != 3) throw Error("dims/spacing must have three entries");
    c.dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
    c.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    c.type = scalar_from_name(header.at("scalar_type").get<std::string>());
    if (header.value("byte_order", std::string("little")) != "little")
      throw Error("only little-endian payloads are supported");
  } catch (const json::exception& e) {
    throw Error("malformed volume header " + header_path.string() + ": " + e.what());
  }
  check_dims(c.dims);
  check_spacing(c.spacing);

  fs::path payload_path = with_suffix(stem, ".raw");
  if (header.contains("payload")) payload_path = stem.parent_path() / header["payload"].get<std::string>();
  std::ifstream ps(payload_path, std::ios::binary);
  if (!ps) throw Error("missing volume payload " + payload_path.string());
  c.payload.assign(std::istreambuf_iterator<char>(ps), std::istreambuf_iterator<char>());
  const std::size_t expected = c.dims.count() * scalar_bytes(c.type);
  if (c.payload.size() != expected)
    throw Error("payload size mismatch in " + payload_path.string() + ": expected " + std::to_string(expected) +
                " bytes, found " + std::to_string(c.payload.size()));
  return c;
}

}  // namespace

Volume::Volume(Dims dims, Spacing spacing, double fill)
    : dims_(dims), spacing_(spacing), voxels_() {
  check_dims(dims);
  check_spacing(spacing);
  voxels_.assign(dims.count(), fill);
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<double> voxels)
    : dims_(dims), spacing_(spacing), voxels_(std::move(voxels)) {
  check_dims(dims);
  check_spacing(spacing);
  if (voxels_.size() != dims.count()) throw Error("voxel count does not match dims");
  for (double v : voxels_)
    if (!std::isfinite(v)) throw Error("volume contains non-finite values");
}

Mask::Mask(Dims dims, std::uint8_t fill) : dims_(dims), voxels_() {
  check_dims(dims);
  voxels_.assign(dims.count(), fill ? 1 : 0);
}

Mask::Mask(Dims dims, std::vector<std::uint8_t> voxels) : dims_(dims), voxels_(std::move(voxels)) {
  check_dims(dims);
  if (voxels_.size() != dims.count()) throw Error("mask voxel count does not match dims");
  for (auto& v : voxels_) {
    if (v > 1) throw Error("mask values must be 0 or 1");
  }
}

std::size_t Mask::foreground_count() const {
  return static_cast<std::size_t>(std::count(voxels_.begin(), voxels_.end(), std::uint8_t{1}));
}

std::string label_name(Label label) {
  switch (label) {
    case Label::AAH: return "AAH";
    case Label::AIS: return "AIS";
    case Label::MIA: return "MIA";
    case Label::IA: return "IA";
  }
  return "?";
}

Label label_from_int(int code) {
  if (code < 0 || code >= kNumClasses) throw Error("label code out of range: " + std::to_string(code));
  return static_cast<Label>(code);
}

Label label_from_name(const std::string& name) {
  for (int k = 0; k < kNumClasses; ++k)
    if (label_name(static_cast<Label>(k)) == name) return static_cast<Label>(k);
  throw Error("unknown label '" + name + "'");
}

void Dataset::validate() const {
  if (samples.empty()) throw Error("dataset is empty");
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) throw Error("duplicate sample id '" + s.id + "'");
    if (!(s.patch.dims() == s.mask.dims())) throw Error("patch/mask dims differ for sample '" + s.id + "'");
  }
}

std::array<int, kNumClasses> Dataset::histogram() const {
  std::array<int, kNumClasses> h{};
  for (const auto& s : samples) ++h[label_code(s.label)];
  return h;
}

void save_volume(const Volume& vol, const fs::path& stem, ScalarType type) {
  std::vector<char> payload;
  payload.reserve(vol.size() * scalar_bytes(type));
  for (double v : vol.voxels()) {
    switch (type) {
      case ScalarType::Float32: put_le(payload, static_cast<float>(v)); break;
      case ScalarType::Float64: put_le(payload, v); break;
      case ScalarType::UInt8: {
        if (v < 0.0 || v > 255.0 || v != std::floor(v)) throw Error("value not representable as uint8");
        put_le(payload, static_cast<std::uint8_t>(v));
        break;
      }
    }
  }
  write_container(stem, vol.dims(), vol.spacing(), type, payload);
}

Volume load_volume(const fs::path& stem) {
  Container c = read_container(stem);
  const std::size_t n = c.dims.count();
  std::vector<double> voxels(n);
  const std::size_t w = scalar_bytes(c.type);
  for (std::size_t i = 0; i < n; ++i) {
    const char* p = c.payload.data() + i * w;
    switch (c.type) {
      case ScalarType::Float32: voxels[i] = get_le<float>(p); break;
      case ScalarType::Float64: voxels[i] = get_le<double>(p); break;
      case ScalarType::UInt8: voxels[i] = get_le<std::uint8_t>(p); break;
    }
    if (!std::isfinite(voxels[i])) throw Error("non-finite voxel value in " + stem.string());
  }
  return Volume(c.dims, c.spacing, std::move(voxels));
}

void save_mask(const Mask& mask, const fs::path& stem) {
  std::vector<char> payload(mask.voxels().begin(), mask.voxels().end());
  write_container(stem, mask.dims(), Spacing{}, ScalarType::UInt8, payload);
}

Mask load_mask(const fs::path& stem) {
  Container c = read_container(stem);
  if (c.type != ScalarType::UInt8) throw Error("mask container must be uint8: " + stem.string());
  std::vector<std::uint8_t> voxels(c.payload.begin(), c.payload.end());
  return Mask(c.dims, std::move(voxels));
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir / "volumes");
  fs::create_directories(dir / "masks");
  json manifest = json::array();
  for (const auto& s : ds.samples) {
    const std::string vol_rel = "volumes/" + s.id;
    const std::string mask_rel = "masks/" + s.id;
    save_volume(s.patch, dir / vol_rel);
    save_mask(s.mask, dir / mask_rel);
    manifest.push_back({{"id", s.id},
                        {"label", label_code(s.label)},
                        {"volume_path", vol_rel + ".json"},
                        {"mask_path", mask_rel + ".json"}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("missing manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
  if (!manifest.is_array()) throw Error("manifest must be a JSON array");
  Dataset ds;
  for (const auto& e : manifest) {
    ManifestEntry entry;
    try {
      entry.id = e.at("id").get<std::string>();
      entry.label = label_from_int(e.at("label").get<int>());
      entry.volume_path = e.at("volume_path").get<std::string>();
      entry.mask_path = e.at("mask_path").get<std::string>();
    } catch (const json::exception& ex) {
      throw Error(std::string("malformed manifest entry: ") + ex.what());
    }
    NoduleSample s;
    s.id = entry.id;
    s.label = entry.label;
    s.patch = load_volume(dir / entry.volume_path);
    s.mask = load_mask(dir / entry.mask_path);
    ds.samples.push_back(std::move(s));
    ds.manifest.push_back(std::move(entry));
  }
  ds.validate();
  return ds;
}

Volume extract_patch(const Volume& vol, Index3 center, Index3 size, double fill) {
  if (size[0] < 1 || size[1] < 1 || size[2] < 1) throw Error("patch size components must be >= 1");
  Volume out(Dims{size[0], size[1], size[2]}, vol.spacing(), fill);
  const int x0 = center[0] - size[0] / 2;
  const int y0 = center[1] - size[1] / 2;
  const int z0 = center[2] - size[2] / 2;
  const Dims& d = vol.dims();
  for (int z = 0; z < size[2]; ++z)
    for (int y = 0; y < size[1]; ++y)
      for (int x = 0; x < size[0]; ++x) {
        const int sx = x0 + x, sy = y0 + y, sz = z0 + z;
        if (d.contains(sx, sy, sz)) out.at(x, y, z) = vol.at(sx, sy, sz);
      }
  return out;
}

}  // namespace radfuse
