#include "radfuse/features.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace radfuse {

void FeatureMatrix::validate() const {
  if (labels.size() != ids.size()) throw Error("feature matrix: label count differs from sample count");
  if (static_cast<std::size_t>(values.rows()) != ids.size() || static_cast<std::size_t>(values.cols()) != names.size())
    throw Error("feature matrix: value block is not rows x names");
  std::set<std::string> seen;
  for (const auto& n : names)
    if (!seen.insert(n).second) throw Error("feature matrix: duplicate feature name '" + n + "'");
  for (int l : labels)
    if (l < 0 || l >= kNumClasses) throw Error("feature matrix: label out of range");
  if (!values.allFinite()) throw Error("feature matrix: non-finite value");
}

FeatureMatrix FeatureMatrix::select_rows(const std::vector<int>& rows) const {
  FeatureMatrix out;
  out.names = names;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    if (r < 0 || static_cast<std::size_t>(r) >= ids.size()) throw Error("feature matrix: row index out of range");
    out.ids.push_back(ids[r]);
    out.labels.push_back(labels[r]);
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(r);
  }
  return out;
}

FeatureMatrix FeatureMatrix::select_cols(const std::vector<int>& cols) const {
  FeatureMatrix out;
  out.ids = ids;
  out.labels = labels;
  out.values.resize(values.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const int c = cols[j];
    if (c < 0 || static_cast<std::size_t>(c) >= names.size()) throw Error("feature matrix: column index out of range");
    out.names.push_back(names[c]);
    out.values.col(static_cast<Eigen::Index>(j)) = values.col(c);
  }
  return out;
}

FeatureMatrix extract_features(const Dataset& ds, const RadiomicsConfig& cfg) {
  if (ds.samples.empty()) throw Error("cannot extract features from an empty dataset");
  FeatureMatrix m;
  std::vector<FeatureVector> rows;
  rows.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    rows.push_back(extract_all(s, cfg));
    if (rows.back().names() != rows.front().names())
      throw Error("sample '" + s.id + "' produced a different feature set");
    m.ids.push_back(s.id);
    m.labels.push_back(label_code(s.label));
  }
  m.names = rows.front().names();
  m.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < m.names.size(); ++j)
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i].value(j);
  return m;
}

namespace {

void check_field(const std::string& s) {
  if (s.empty() || s.find_first_of(",\"\r\n") != std::string::npos)
    throw Error("csv field '" + s + "' is empty or contains a separator");
}

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw Error("csv line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

std::string to_csv(const FeatureMatrix& m) {
  m.validate();
  std::string out = "id,label";
  for (const auto& n : m.names) {
    check_field(n);
    out += ',' + n;
  }
  out += '\n';
  char buf[32];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    check_field(m.ids[i]);
    out += m.ids[i] + ',' + std::to_string(m.labels[i]);
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_csv(const FeatureMatrix& m, const std::filesystem::path& path) {
  const std::string text = to_csv(m);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

FeatureMatrix parse_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    start = nl + 1;
  }
  if (lines.empty()) throw Error("csv is empty");
  const auto header = split_line(lines[0]);
  if (header.size() < 2 || header[0] != "id" || header[1] != "label") throw Error("csv header must start with id,label");

  FeatureMatrix m;
  m.names.assign(header.begin() + 2, header.end());
  m.values.resize(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(m.names.size()));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_line(lines[i]);
    if (fields.size() != header.size())
      throw Error("csv line " + std::to_string(i + 1) + ": expected " + std::to_string(header.size()) + " fields");
    m.ids.push_back(fields[0]);
    const double label = parse_double(fields[1], i + 1);
    if (label != std::floor(label)) throw Error("csv line " + std::to_string(i + 1) + ": label is not an integer");
    m.labels.push_back(static_cast<int>(label));
    for (std::size_t j = 2; j < fields.size(); ++j)
      m.values(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 2)) = parse_double(fields[j], i + 1);
  }
  m.validate();
  return m;
}

FeatureMatrix read_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace radfuse
