#ifndef CTSURV_DATAIO_HPP
#define CTSURV_DATAIO_HPP

// Feature/outcome tables, voxel volumes, and cohort curation.
//
// Tables are UTF-8 CSV with a header row; an empty cell is a missing value
// and is stored as a quiet NaN (never as zero). Volumes use a JSON header
// plus a little-endian raw payload, x fastest, z = axial slice index.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "ctsurv/error.hpp"

namespace ctsurv {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

// ---------------------------------------------------------------------------
// CSV

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(std::move(cell));
  return out;
}

struct Document {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  }
};

inline Document read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  Document doc;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      doc.header = split_line(line);
      first = false;
      continue;
    }
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (cells.size() != doc.header.size()) {
      throw Error(Errc::parse, path.string() + ": row " + std::to_string(doc.rows.size() + 2) +
                                   " has " + std::to_string(cells.size()) + " cells, header has " +
                                   std::to_string(doc.header.size()));
    }
    doc.rows.push_back(std::move(cells));
  }
  if (first) throw Error(Errc::empty_table, path.string() + " has no header row");
  return doc;
}

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

}  // namespace csv

/// Shortest round-trip decimal representation; missing values become "".
inline std::string format_number(double v) {
  if (is_missing(v)) return {};
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Parses a full cell as a double. Blank (or whitespace-only) cells are
/// missing; anything else that does not parse is nullopt.
inline std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return kMissing;
  if (s == "NA" || s == "NaN" || s == "nan") return kMissing;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------------------
// Tables

struct TableSchema {
  std::string id_column = "id";
  std::string batch_column;  // empty: no batch labels
  std::vector<std::string> covariate_columns;
  std::vector<std::string> ignore_columns;
};

struct FeatureTable {
  std::vector<std::string> subject_ids;
  std::vector<std::string> feature_names;
  Eigen::MatrixXd values;           // subjects x features, NaN = missing
  std::vector<std::string> batch;   // empty or one label per subject
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;       // subjects x covariates

  std::size_t n_subjects() const { return subject_ids.size(); }
  std::size_t n_features() const { return feature_names.size(); }
  bool has_batch() const { return !batch.empty(); }

  std::size_t missing_count() const {
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < values.size(); ++i) n += is_missing(values.data()[i]);
    return n;
  }

  std::optional<std::size_t> feature_index(std::string_view name) const {
    auto it = std::find(feature_names.begin(), feature_names.end(), name);
    if (it == feature_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - feature_names.begin());
  }

  /// Checks the structural invariants; throws on violation.
  void validate() const {
    if (subject_ids.empty()) throw Error(Errc::empty_table, "feature table has no subjects");
    if (static_cast<std::size_t>(values.rows()) != subject_ids.size() ||
        static_cast<std::size_t>(values.cols()) != feature_names.size()) {
      throw Error(Errc::size_mismatch, "feature matrix shape does not match names");
    }
    if (!batch.empty() && batch.size() != subject_ids.size()) {
      throw Error(Errc::size_mismatch, "batch label count does not match subject count");
    }
    if (static_cast<std::size_t>(covariates.cols()) != covariate_names.size() ||
        (!covariate_names.empty() &&
         static_cast<std::size_t>(covariates.rows()) != subject_ids.size())) {
      throw Error(Errc::size_mismatch, "covariate matrix shape does not match names");
    }
    std::unordered_set<std::string> seen;
    for (const auto& id : subject_ids) {
      if (!seen.insert(id).second) throw Error(Errc::duplicate_id, "duplicate subject id " + id);
    }
    std::unordered_set<std::string> names;
    for (const auto& f : feature_names) {
      if (!names.insert(f).second) throw Error(Errc::duplicate_id, "duplicate feature " + f);
    }
  }

  FeatureTable select_rows(std::span<const std::size_t> rows) const {
    FeatureTable out;
    out.feature_names = feature_names;
    out.covariate_names = covariate_names;
    out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
    out.covariates.resize(covariate_names.empty() ? 0 : static_cast<Eigen::Index>(rows.size()),
                          covariates.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(rows[k]);
      out.subject_ids.push_back(subject_ids[rows[k]]);
      out.values.row(static_cast<Eigen::Index>(k)) = values.row(r);
      if (!covariate_names.empty()) out.covariates.row(static_cast<Eigen::Index>(k)) = covariates.row(r);
      if (has_batch()) out.batch.push_back(batch[rows[k]]);
    }
    return out;
  }

  FeatureTable select_features(std::span<const std::string> names) const {
    FeatureTable out;
    out.subject_ids = subject_ids;
    out.batch = batch;
    out.covariate_names = covariate_names;
    out.covariates = covariates;
    out.values.resize(values.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t k = 0; k < names.size(); ++k) {
      auto idx = feature_index(names[k]);
      if (!idx) throw Error(Errc::name_mismatch, "no feature named " + names[k]);
      out.values.col(static_cast<Eigen::Index>(k)) = values.col(static_cast<Eigen::Index>(*idx));
      out.feature_names.push_back(names[k]);
    }
    return out;
  }

  /// Row indices of the given ids, in the given order.
  std::vector<std::size_t> rows_of(std::span<const std::string> ids) const {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < subject_ids.size(); ++i) pos.emplace(subject_ids[i], i);
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      auto it = pos.find(id);
      if (it == pos.end()) throw Error(Errc::name_mismatch, "subject " + id + " not in table");
      out.push_back(it->second);
    }
    return out;
  }
};

struct OutcomeTable {
  std::vector<std::string> subject_ids;
  std::vector<double> time_months;
  std::vector<int> event;

  std::size_t size() const { return subject_ids.size(); }

  void validate() const {
    if (time_months.size() != subject_ids.size() || event.size() != subject_ids.size()) {
      throw Error(Errc::size_mismatch, "outcome columns have different lengths");
    }
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < subject_ids.size(); ++i) {
      if (!seen.insert(subject_ids[i]).second) {
        throw Error(Errc::duplicate_id, "duplicate subject id " + subject_ids[i]);
      }
      if (!(time_months[i] > 0.0) || !std::isfinite(time_months[i])) {
        throw Error(Errc::domain, "subject " + subject_ids[i] + ": time must be positive, got " +
                                      format_number(time_months[i]));
      }
      if (event[i] != 0 && event[i] != 1) {
        throw Error(Errc::domain, "subject " + subject_ids[i] + ": event must be 0 or 1");
      }
    }
  }

  OutcomeTable select(std::span<const std::size_t> rows) const {
    OutcomeTable out;
    for (auto r : rows) {
      out.subject_ids.push_back(subject_ids[r]);
      out.time_months.push_back(time_months[r]);
      out.event.push_back(event[r]);
    }
    return out;
  }

  std::vector<std::size_t> rows_of(std::span<const std::string> ids) const {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < subject_ids.size(); ++i) pos.emplace(subject_ids[i], i);
    std::vector<std::size_t> out;
    for (const auto& id : ids) {
      auto it = pos.find(id);
      if (it == pos.end()) throw Error(Errc::name_mismatch, "subject " + id + " has no outcome");
      out.push_back(it->second);
    }
    return out;
  }
};

inline FeatureTable load_feature_table(const std::filesystem::path& path,
                                       const TableSchema& schema = {}) {
  const auto doc = csv::read(path);
  if (doc.rows.empty()) throw Error(Errc::empty_table, path.string() + " has no data rows");
  const auto id_col = doc.column(schema.id_column);
  if (!id_col) throw Error(Errc::missing_column, "id column '" + schema.id_column + "' not found");
  std::optional<std::size_t> batch_col;
  if (!schema.batch_column.empty()) {
    batch_col = doc.column(schema.batch_column);
    if (!batch_col) throw Error(Errc::missing_column, "batch column '" + schema.batch_column + "' not found");
  }
  std::vector<std::size_t> cov_cols;
  for (const auto& c : schema.covariate_columns) {
    auto idx = doc.column(c);
    if (!idx) throw Error(Errc::missing_column, "covariate column '" + c + "' not found");
    cov_cols.push_back(*idx);
  }
  std::vector<std::size_t> feat_cols;
  FeatureTable t;
  for (std::size_t c = 0; c < doc.header.size(); ++c) {
    if (c == *id_col || (batch_col && c == *batch_col)) continue;
    if (std::find(cov_cols.begin(), cov_cols.end(), c) != cov_cols.end()) continue;
    if (std::find(schema.ignore_columns.begin(), schema.ignore_columns.end(), doc.header[c]) !=
        schema.ignore_columns.end()) {
      continue;
    }
    feat_cols.push_back(c);
    t.feature_names.push_back(doc.header[c]);
  }
  t.covariate_names = schema.covariate_columns;
  const auto n = static_cast<Eigen::Index>(doc.rows.size());
  t.values.resize(n, static_cast<Eigen::Index>(feat_cols.size()));
  t.covariates.resize(cov_cols.empty() ? 0 : n, static_cast<Eigen::Index>(cov_cols.size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = doc.rows[static_cast<std::size_t>(r)];
    t.subject_ids.push_back(row[*id_col]);
    if (batch_col) t.batch.push_back(row[*batch_col]);
    for (std::size_t k = 0; k < feat_cols.size(); ++k) {
      auto v = parse_number(row[feat_cols[k]]);
      if (!v) {
        throw Error(Errc::non_numeric, path.string() + ": non-numeric cell '" + row[feat_cols[k]] +
                                           "' in column " + doc.header[feat_cols[k]]);
      }
      t.values(r, static_cast<Eigen::Index>(k)) = *v;
    }
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      auto v = parse_number(row[cov_cols[k]]);
      if (!v) {
        throw Error(Errc::non_numeric, path.string() + ": non-numeric covariate cell '" +
                                           row[cov_cols[k]] + "'");
      }
      t.covariates(r, static_cast<Eigen::Index>(k)) = *v;
    }
  }
  t.validate();
  return t;
}

inline void save_feature_table(const FeatureTable& t, const std::filesystem::path& path,
                               std::string_view batch_column = "batch") {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << "id";
  if (t.has_batch()) out << ',' << csv::quote(std::string(batch_column));
  for (const auto& c : t.covariate_names) out << ',' << csv::quote(c);
  for (const auto& f : t.feature_names) out << ',' << csv::quote(f);
  out << '\n';
  for (std::size_t i = 0; i < t.n_subjects(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << csv::quote(t.subject_ids[i]);
    if (t.has_batch()) out << ',' << csv::quote(t.batch[i]);
    for (Eigen::Index c = 0; c < t.covariates.cols(); ++c) out << ',' << format_number(t.covariates(r, c));
    for (Eigen::Index c = 0; c < t.values.cols(); ++c) out << ',' << format_number(t.values(r, c));
    out << '\n';
  }
}

inline OutcomeTable load_outcomes(const std::filesystem::path& path) {
  const auto doc = csv::read(path);
  const auto id = doc.column("id");
  const auto time = doc.column("time_months");
  const auto event = doc.column("event");
  if (!id || !time || !event) {
    throw Error(Errc::missing_column, path.string() + " needs columns id, time_months, event");
  }
  if (doc.rows.empty()) throw Error(Errc::empty_table, path.string() + " has no data rows");
  OutcomeTable t;
  for (const auto& row : doc.rows) {
    auto tv = parse_number(row[*time]);
    auto ev = parse_number(row[*event]);
    if (!tv || !ev || is_missing(*tv) || is_missing(*ev)) {
      throw Error(Errc::non_numeric, "subject " + row[*id] + ": unreadable outcome");
    }
    if (*ev != 0.0 && *ev != 1.0) {
      throw Error(Errc::domain, "subject " + row[*id] + ": event must be 0 or 1, got " + row[*event]);
    }
    t.subject_ids.push_back(row[*id]);
    t.time_months.push_back(*tv);
    t.event.push_back(static_cast<int>(*ev));
  }
  t.validate();
  return t;
}

inline void save_outcomes(const OutcomeTable& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << "id,time_months,event\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << csv::quote(t.subject_ids[i]) << ',' << format_number(t.time_months[i]) << ','
        << t.event[i] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Volumes

enum class DType { i16, f32 };

inline std::string_view dtype_name(DType d) { return d == DType::i16 ? "i16" : "f32"; }

using Dims = std::array<std::size_t, 3>;
using Spacing = std::array<double, 3>;

/// HU volume. Voxel (x, y, z) lives at x + nx * (y + ny * z). `dtype` is the
/// on-disk element type; values are held as double, which represents both
/// i16 and f32 exactly.
struct Volume {
  Dims dims{0, 0, 0};
  Spacing spacing_mm{1.0, 1.0, 1.0};
  DType dtype = DType::f32;
  std::vector<double> voxels;

  Volume() = default;
  Volume(Dims d, Spacing s, double fill = 0.0, DType t = DType::f32)
      : dims(d), spacing_mm(s), dtype(t), voxels(d[0] * d[1] * d[2], fill) {}

  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return voxels[index(x, y, z)]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return voxels[index(x, y, z)]; }
};

struct Mask {
  Dims dims{0, 0, 0};
  Spacing spacing_mm{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> voxels;

  Mask() = default;
  Mask(Dims d, Spacing s, std::uint8_t fill = 0)
      : dims(d), spacing_mm(s), voxels(d[0] * d[1] * d[2], fill) {}

  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t z) { return voxels[index(x, y, z)]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const { return voxels[index(x, y, z)]; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(voxels.begin(), voxels.end(), std::uint8_t{1}));
  }
};

template <typename A, typename B>
bool grid_compatible(const A& a, const B& b) {
  if (a.dims != b.dims) return false;
  for (int k = 0; k < 3; ++k) {
    const double s = std::max(std::abs(a.spacing_mm[k]), std::abs(b.spacing_mm[k]));
    if (std::abs(a.spacing_mm[k] - b.spacing_mm[k]) > 1e-6 * s) return false;
  }
  return true;
}

template <typename A, typename B>
void require_grid_compatible(const A& a, const B& b) {
  if (!grid_compatible(a, b)) throw Error(Errc::grid_mismatch, "volume and mask grids differ");
}

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

inline void check_header(const Dims& dims, const Spacing& spacing) {
  for (int k = 0; k < 3; ++k) {
    if (dims[k] == 0) throw Error(Errc::domain, "volume dims must be positive");
    if (!(spacing[k] > 0.0) || !std::isfinite(spacing[k])) {
      throw Error(Errc::domain, "volume spacing must be positive");
    }
  }
}

}  // namespace detail

/// Writes `<path>` (JSON header) and `<path stem>.raw` next to it.
inline void save_volume(const Volume& v, const std::filesystem::path& path) {
  detail::check_header(v.dims, v.spacing_mm);
  if (v.voxels.size() != v.size()) throw Error(Errc::size_mismatch, "voxel count does not match dims");
  auto raw = path;
  raw.replace_extension(".raw");
  nlohmann::json header = {
      {"dims", {v.dims[0], v.dims[1], v.dims[2]}},
      {"spacing_mm", {v.spacing_mm[0], v.spacing_mm[1], v.spacing_mm[2]}},
      {"dtype", dtype_name(v.dtype)},
      {"data", raw.filename().string()},
  };
  std::ofstream out(raw, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + raw.string());
  if (v.dtype == DType::i16) {
    std::vector<std::int16_t> buf(v.voxels.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double x = v.voxels[i];
      if (x != std::round(x) || x < INT16_MIN || x > INT16_MAX) {
        throw Error(Errc::domain, "voxel value " + format_number(x) + " does not fit i16");
      }
      buf[i] = detail::to_little(static_cast<std::int16_t>(x));
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(std::int16_t)));
  } else {
    std::vector<float> buf(v.voxels.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = detail::to_little(static_cast<float>(v.voxels[i]));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  std::ofstream h(path);
  if (!h) throw Error(Errc::io, "cannot write " + path.string());
  h << header.dump(2) << '\n';
}

inline Volume load_volume(const std::filesystem::path& path) {
  std::ifstream h(path);
  if (!h) throw Error(Errc::io, "cannot open " + path.string());
  nlohmann::json header;
  try {
    h >> header;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse, path.string() + ": " + e.what());
  }
  Volume v;
  try {
    for (int k = 0; k < 3; ++k) {
      v.dims[k] = header.at("dims").at(k).get<std::size_t>();
      v.spacing_mm[k] = header.at("spacing_mm").at(k).get<double>();
    }
    const auto dtype = header.at("dtype").get<std::string>();
    if (dtype == "i16") v.dtype = DType::i16;
    else if (dtype == "f32") v.dtype = DType::f32;
    else throw Error(Errc::unsupported_dtype, "unsupported dtype '" + dtype + "'");
    detail::check_header(v.dims, v.spacing_mm);
    const auto raw = path.parent_path() / header.at("data").get<std::string>();
    std::ifstream in(raw, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open " + raw.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t elem = v.dtype == DType::i16 ? 2 : 4;
    if (bytes.size() != v.size() * elem) {
      throw Error(Errc::size_mismatch, "header declares " + std::to_string(v.size()) +
                                           " voxels, payload holds " +
                                           std::to_string(bytes.size() / elem));
    }
    v.voxels.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v.dtype == DType::i16) {
        std::int16_t x;
        std::memcpy(&x, bytes.data() + i * 2, 2);
        v.voxels[i] = detail::to_little(x);
      } else {
        float x;
        std::memcpy(&x, bytes.data() + i * 4, 4);
        v.voxels[i] = detail::to_little(x);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse, path.string() + ": " + e.what());
  }
  return v;
}

inline Mask to_mask(const Volume& v) {
  Mask m(v.dims, v.spacing_mm);
  for (std::size_t i = 0; i < v.size(); ++i) m.voxels[i] = v.voxels[i] != 0.0 ? 1 : 0;
  return m;
}

inline Volume to_volume(const Mask& m) {
  Volume v(m.dims, m.spacing_mm, 0.0, DType::i16);
  for (std::size_t i = 0; i < m.size(); ++i) v.voxels[i] = m.voxels[i];
  return v;
}

inline Mask load_mask(const std::filesystem::path& path) { return to_mask(load_volume(path)); }
inline void save_mask(const Mask& m, const std::filesystem::path& path) { save_volume(to_volume(m), path); }

// ---------------------------------------------------------------------------
// Cohort curation

struct AlignedCohort {
  FeatureTable features;
  OutcomeTable outcomes;
  std::vector<std::string> dropped_from_features;  // ids with no outcome
  std::vector<std::string> dropped_from_outcomes;  // ids with no features
};

/// Restricts both tables to the shared ids, in feature-table order.
inline AlignedCohort align_cohort(const FeatureTable& features, const OutcomeTable& outcomes) {
  std::unordered_map<std::string, std::size_t> outcome_pos;
  for (std::size_t i = 0; i < outcomes.size(); ++i) outcome_pos.emplace(outcomes.subject_ids[i], i);
  std::unordered_set<std::string> feature_ids(features.subject_ids.begin(), features.subject_ids.end());

  AlignedCohort out;
  std::vector<std::size_t> frows, orows;
  for (std::size_t i = 0; i < features.n_subjects(); ++i) {
    auto it = outcome_pos.find(features.subject_ids[i]);
    if (it == outcome_pos.end()) {
      out.dropped_from_features.push_back(features.subject_ids[i]);
    } else {
      frows.push_back(i);
      orows.push_back(it->second);
    }
  }
  for (const auto& id : outcomes.subject_ids) {
    if (!feature_ids.contains(id)) out.dropped_from_outcomes.push_back(id);
  }
  if (frows.empty()) throw Error(Errc::empty_intersection, "feature and outcome ids do not overlap");
  out.features = features.select_rows(frows);
  out.outcomes = outcomes.select(orows);
  return out;
}

struct SpacingStats {
  Spacing mean{0, 0, 0};
  Spacing sd{0, 0, 0};  // population SD
};

inline SpacingStats spacing_stats(std::span<const Spacing> train) {
  SpacingStats s;
  if (train.empty()) return s;
  const double n = static_cast<double>(train.size());
  for (int k = 0; k < 3; ++k) {
    double sum = 0.0;
    for (const auto& sp : train) sum += sp[k];
    s.mean[k] = sum / n;
    double ss = 0.0;
    for (const auto& sp : train) ss += (sp[k] - s.mean[k]) * (sp[k] - s.mean[k]);
    s.sd[k] = std::sqrt(ss / n);
  }
  return s;
}

struct SpacingFilterResult {
  std::vector<std::string> kept;
  std::vector<std::string> excluded;
  Spacing thresholds{0, 0, 0};
};

/// Excludes a subject when any axis spacing is strictly above mean + 2 SD.
inline SpacingFilterResult spacing_filter(std::span<const std::string> ids,
                                          std::span<const Spacing> spacings,
                                          const SpacingStats& reference) {
  if (ids.size() != spacings.size()) throw Error(Errc::length_mismatch, "ids and spacings differ in length");
  SpacingFilterResult r;
  for (int k = 0; k < 3; ++k) r.thresholds[k] = reference.mean[k] + 2.0 * reference.sd[k];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    bool exceed = false;
    for (int k = 0; k < 3; ++k) exceed = exceed || spacings[i][k] > r.thresholds[k];
    (exceed ? r.excluded : r.kept).push_back(ids[i]);
  }
  return r;
}

}  // namespace ctsurv

#endif  // CTSURV_DATAIO_HPP
