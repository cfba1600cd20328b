#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "mmae/dataset.hpp"
#include "mmae/error.hpp"
#include "mmae/linalg.hpp"
#include "mmae/random.hpp"

namespace mmae {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error while reading '" + path.string() + "'");
  return ss.str();
}

/// Writes to a sibling temporary file, then renames it over `path`.
inline void write_text_atomic(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw IoError("error while writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

// ---------------------------------------------------------------------------
// Numbers

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Full-string parse; nullopt when the text is not a finite number.
inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline bool is_missing_cell(std::string_view s) {
  return s.empty() || s == "NaN" || s == "nan" || s == "NAN";
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180 quoting, LF or CRLF line ends)

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable parse_csv(std::string_view text, const std::string& source = "<csv>") {
  std::vector<std::vector<std::string>> records;
  std::vector<std::size_t> record_lines;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t line = 1, record_line = 1;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) {
      records.push_back(std::move(record));
      record_lines.push_back(record_line);
    }
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started && field.empty()) {
      quoted = field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
      record_line = ++line;
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw SchemaError(source + ":" + std::to_string(record_line) + ": unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) end_record();
  if (records.empty()) throw SchemaError(source + ": missing header row");
  CsvTable t;
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size()) {
      throw SchemaError(source + ":" + std::to_string(record_lines[r]) + ": expected " +
                        std::to_string(t.header.size()) + " fields, found " + std::to_string(records[r].size()));
    }
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

inline CsvTable read_csv(const fs::path& path) { return parse_csv(read_text(path), path.string()); }

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string format_csv(const CsvTable& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out.push_back(',');
      out += csv_escape(fields[i]);
    }
    out.push_back('\n');
  };
  line(t.header);
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw ShapeError("format_csv: row width differs from header");
    line(r);
  }
  return out;
}

inline void write_csv(const fs::path& path, const CsvTable& t) { write_text_atomic(path, format_csv(t)); }

// ---------------------------------------------------------------------------
// Manifest

enum class ModalityKind { numeric, categorical_mixed };

inline std::string_view to_string(ModalityKind k) {
  return k == ModalityKind::numeric ? "numeric" : "categorical-mixed";
}

struct ModalitySource {
  std::string name;
  std::string file;
  ModalityKind kind = ModalityKind::numeric;
};

struct DatasetManifest {
  int format_version = 1;
  std::vector<ModalitySource> modalities;
  std::string labels_file = "labels.csv";
  std::string label_column = "label";

  void validate() const {
    if (format_version != 1) {
      throw SchemaError("unsupported manifest format_version " + std::to_string(format_version));
    }
    if (modalities.empty()) throw SchemaError("manifest lists no modalities");
    std::set<std::string> names;
    for (const auto& m : modalities) {
      if (m.name.empty()) throw SchemaError("manifest modality without a name");
      if (!names.insert(m.name).second) throw SchemaError("duplicate modality name '" + m.name + "'");
    }
  }
};

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["format_version"] = m.format_version;
  j["modalities"] = nlohmann::ordered_json::array();
  for (const auto& s : m.modalities) {
    j["modalities"].push_back({{"name", s.name}, {"file", s.file}, {"kind", std::string(to_string(s.kind))}});
  }
  j["labels_file"] = m.labels_file;
  j["label_column"] = m.label_column;
  return j;
}

inline DatasetManifest parse_manifest(std::string_view text, const std::string& source = "<manifest>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(source + ": invalid JSON: " + e.what());
  }
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    for (const auto& s : j.at("modalities")) {
      ModalitySource src;
      src.name = s.at("name").get<std::string>();
      src.file = s.at("file").get<std::string>();
      const auto kind = s.value("kind", std::string("numeric"));
      if (kind == "numeric") src.kind = ModalityKind::numeric;
      else if (kind == "categorical-mixed") src.kind = ModalityKind::categorical_mixed;
      else throw SchemaError(source + ": modality '" + src.name + "' has unknown kind '" + kind + "'");
      m.modalities.push_back(std::move(src));
    }
    m.labels_file = j.at("labels_file").get<std::string>();
    m.label_column = j.value("label_column", std::string("label"));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(source + ": " + e.what());
  }
  m.validate();
  return m;
}

inline DatasetManifest read_manifest(const fs::path& path) { return parse_manifest(read_text(path), path.string()); }

// ---------------------------------------------------------------------------
// Dataset loading and writing

/// Integer-valued label sets sort numerically; otherwise "normal" (or "0")
/// comes first and the rest sort lexicographically.
inline std::vector<std::string> order_label_names(const std::set<std::string>& raw) {
  std::vector<std::string> names(raw.begin(), raw.end());
  bool all_int = true;
  std::map<std::string, long long> as_int;
  for (const auto& s : names) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      all_int = false;
      break;
    }
    as_int[s] = v;
  }
  if (all_int) {
    std::sort(names.begin(), names.end(), [&](const auto& a, const auto& b) { return as_int[a] < as_int[b]; });
    return names;
  }
  for (const char* normal : {"normal", "0"}) {
    auto it = std::find(names.begin(), names.end(), normal);
    if (it != names.end()) {
      std::rotate(names.begin(), it, it + 1);
      break;
    }
  }
  return names;
}

/// Re-indexes labels onto `names`; every label must appear there.
inline MultiModalDataset remap_labels(MultiModalDataset ds, const std::vector<std::string>& names) {
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = static_cast<int>(i);
  for (auto& y : ds.labels) {
    const auto& name = ds.label_names.at(static_cast<std::size_t>(y));
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("label '" + name + "' is not one of the model's classes");
    y = it->second;
  }
  ds.label_names = names;
  return ds;
}

namespace detail {

inline Modality modality_from_csv(const CsvTable& t, const ModalitySource& src, const std::string& file) {
  Modality m;
  m.name = src.name;
  const std::size_t n = t.rows.size(), c = t.header.size();
  if (n == 0) throw ValidationError(file + ": no data rows");
  std::vector<bool> numeric(c, true);
  if (src.kind == ModalityKind::categorical_mixed) {
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t r = 0; r < n && numeric[j]; ++r)
        if (!is_missing_cell(t.rows[r][j]) && !parse_double(t.rows[r][j])) numeric[j] = false;
  }
  std::vector<std::size_t> num_cols;
  for (std::size_t j = 0; j < c; ++j) {
    if (numeric[j]) {
      num_cols.push_back(j);
      m.columns.push_back(t.header[j]);
    } else {
      CategoricalColumn col{t.header[j], {}};
      for (std::size_t r = 0; r < n; ++r) col.values.push_back(is_missing_cell(t.rows[r][j]) ? "" : t.rows[r][j]);
      m.categorical.push_back(std::move(col));
    }
  }
  if (!num_cols.empty()) {
    m.values = Matrix(n, num_cols.size());
    std::vector<std::uint8_t> missing(n * num_cols.size(), 0);
    bool any_missing = false;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < num_cols.size(); ++k) {
        const auto& cell = t.rows[r][num_cols[k]];
        if (is_missing_cell(cell)) {
          missing[r * num_cols.size() + k] = 1;
          any_missing = true;
          continue;
        }
        auto v = parse_double(cell);
        if (!v) {
          throw SchemaError(file + ":" + std::to_string(r + 2) + ":" + std::to_string(num_cols[k] + 1) +
                            ": cannot parse '" + cell + "' as a number (column '" + t.header[num_cols[k]] + "')");
        }
        m.values(r, k) = *v;
      }
    if (any_missing) m.missing = std::move(missing);
  }
  return m;
}

}  // namespace detail

/// Reads every file named by the manifest; relative paths resolve against
/// the manifest's directory.
inline MultiModalDataset load_dataset(const fs::path& manifest_path) {
  const auto manifest = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  MultiModalDataset ds;
  std::vector<std::string> files;
  for (const auto& src : manifest.modalities) {
    const auto file = (base / src.file).string();
    ds.modalities.push_back(detail::modality_from_csv(read_csv(file), src, file));
    files.push_back(file);
  }
  const auto labels_file = (base / manifest.labels_file).string();
  const auto lt = read_csv(labels_file);
  auto col = std::find(lt.header.begin(), lt.header.end(), manifest.label_column);
  if (col == lt.header.end()) {
    throw SchemaError(labels_file + ": no column named '" + manifest.label_column + "'");
  }
  const auto j = static_cast<std::size_t>(col - lt.header.begin());
  std::vector<std::string> raw;
  for (std::size_t r = 0; r < lt.rows.size(); ++r) {
    if (lt.rows[r][j].empty()) {
      throw SchemaError(labels_file + ":" + std::to_string(r + 2) + ":" + std::to_string(j + 1) + ": empty label");
    }
    raw.push_back(lt.rows[r][j]);
  }
  for (std::size_t i = 0; i < ds.modalities.size(); ++i) {
    const auto& ref = i == 0 ? labels_file : files[0];
    const auto ref_rows = i == 0 ? raw.size() : ds.modalities[0].rows();
    if (ds.modalities[i].rows() != ref_rows) {
      throw ValidationError("row-count mismatch: '" + files[i] + "' has " + std::to_string(ds.modalities[i].rows()) +
                            " rows but '" + ref + "' has " + std::to_string(ref_rows));
    }
  }
  ds.label_names = order_label_names(std::set<std::string>(raw.begin(), raw.end()));
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < ds.label_names.size(); ++i) index[ds.label_names[i]] = static_cast<int>(i);
  for (const auto& s : raw) ds.labels.push_back(index[s]);
  ds.validate();
  return ds;
}

/// Writes `<dir>/manifest.json`, one `<name>.csv` per modality (numeric
/// columns first, then categorical) and `labels.csv`.
inline fs::path write_dataset(const MultiModalDataset& ds, const fs::path& dir) {
  ds.validate();
  DatasetManifest manifest;
  for (const auto& m : ds.modalities) {
    CsvTable t;
    t.header = m.columns;
    for (const auto& c : m.categorical) t.header.push_back(c.name);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      std::vector<std::string> row;
      for (std::size_t c = 0; c < m.columns.size(); ++c)
        row.push_back(m.is_missing(r, c) ? "" : format_double(m.values(r, c)));
      for (const auto& c : m.categorical) row.push_back(c.values[r]);
      t.rows.push_back(std::move(row));
    }
    const auto file = m.name + ".csv";
    write_csv(dir / file, t);
    manifest.modalities.push_back(
        {m.name, file, m.categorical.empty() ? ModalityKind::numeric : ModalityKind::categorical_mixed});
  }
  CsvTable labels{{"label"}, {}};
  for (int y : ds.labels) labels.rows.push_back({ds.label_names.at(static_cast<std::size_t>(y))});
  write_csv(dir / manifest.labels_file, labels);
  const auto path = dir / "manifest.json";
  write_text_atomic(path, manifest_to_json(manifest).dump(2) + "\n");
  return path;
}

// ---------------------------------------------------------------------------
// Synthetic multi-modal generator

struct ModalityShape {
  std::string name;
  std::size_t dim = 1;
};

struct GeneratorSpec {
  std::vector<ModalityShape> modalities{{"network", 8}, {"resource", 6}, {"behavior", 4}};
  std::size_t n_samples = 2000;
  double contamination = 0.05;
  double magnitude = 6.0;  // anomaly shift in units of the feature's std
  std::size_t n_classes = 3;
  std::size_t latent_rank = 2;
  double noise = 0.3;
  std::uint64_t seed = 42;

  void validate() const {
    if (modalities.empty()) throw ValidationError("generator needs at least one modality");
    std::set<std::string> names;
    for (const auto& m : modalities) {
      if (m.dim < 1) throw ValidationError("modality '" + m.name + "' must have dim >= 1");
      if (m.name.empty() || !names.insert(m.name).second) {
        throw ValidationError("modality names must be nonempty and unique");
      }
    }
    if (n_samples < 1) throw ValidationError("samples must be >= 1");
    if (!(contamination >= 0.0 && contamination < 0.5)) throw ValidationError("contamination must lie in [0, 0.5)");
    if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) throw ValidationError("magnitude must be finite and >= 0");
    if (n_classes < 2) throw ValidationError("n_classes must be >= 2");
    if (latent_rank < 1) throw ValidationError("latent_rank must be >= 1");
    if (!(noise > 0.0) || !std::isfinite(noise)) throw ValidationError("noise must be finite and > 0");
  }
};

/// "name:dim,name:dim,..." or bare dims "8,6,4" (named m0, m1, ...).
inline std::vector<ModalityShape> parse_modality_spec(std::string_view spec) {
  std::vector<ModalityShape> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    auto end = spec.find(',', pos);
    if (end == std::string_view::npos) end = spec.size();
    auto item = spec.substr(pos, end - pos);
    auto colon = item.find(':');
    std::string name = colon == std::string_view::npos ? "m" + std::to_string(out.size())
                                                      : std::string(item.substr(0, colon));
    auto dim_text = colon == std::string_view::npos ? item : item.substr(colon + 1);
    long long dim = 0;
    auto res = std::from_chars(dim_text.data(), dim_text.data() + dim_text.size(), dim);
    if (res.ec != std::errc() || res.ptr != dim_text.data() + dim_text.size() || dim < 1) {
      throw ValidationError("invalid modality spec '" + std::string(item) + "' (expected name:dim with dim >= 1)");
    }
    out.push_back({name, static_cast<std::size_t>(dim)});
    pos = end + 1;
  }
  return out;
}

/// Normal rows: x_m = L_m z + noise * e with z ~ N(0, I_rank), loadings on
/// the first factor uniform in [0.6, 1.2] and on later factors in
/// [-0.5, 0.5].  round(n * contamination) anomalies shift a random nonempty
/// set of modalities by magnitude * sigma_j along a class pattern: class 1
/// positive, class 2 negative, class 3 alternating, later classes a seeded
/// random sign pattern.  Anomaly classes cycle through 1..n_classes-1.
inline MultiModalDataset generate_synthetic(const GeneratorSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_samples, q = spec.latent_rank, n_mod = spec.modalities.size();
  Rng load_rng = make_rng(spec.seed, "generator", 0);
  std::vector<Matrix> loadings;
  std::vector<std::vector<double>> sigma;
  for (const auto& shape : spec.modalities) {
    Matrix l(shape.dim, q);
    std::vector<double> s(shape.dim);
    for (std::size_t j = 0; j < shape.dim; ++j) {
      double var = spec.noise * spec.noise;
      for (std::size_t f = 0; f < q; ++f) {
        l(j, f) = f == 0 ? uniform(load_rng, 0.6, 1.2) : uniform(load_rng, -0.5, 0.5);
        var += l(j, f) * l(j, f);
      }
      s[j] = std::sqrt(var);
    }
    loadings.push_back(std::move(l));
    sigma.push_back(std::move(s));
  }

  MultiModalDataset ds;
  Rng sample_rng = make_rng(spec.seed, "generator", 1);
  Matrix z(n, q);
  for (double& v : z.data()) v = normal01(sample_rng);
  for (std::size_t m = 0; m < n_mod; ++m) {
    Modality mod;
    mod.name = spec.modalities[m].name;
    for (std::size_t j = 0; j < spec.modalities[m].dim; ++j) mod.columns.push_back(mod.name + "_" + std::to_string(j));
    mod.values = matmul_bt(z, loadings[m]);
    for (double& v : mod.values.data()) v += spec.noise * normal01(sample_rng);
    ds.modalities.push_back(std::move(mod));
  }

  for (std::size_t c = 0; c < spec.n_classes; ++c) ds.label_names.push_back(std::to_string(c));
  ds.labels.assign(n, 0);
  const auto n_anom = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.contamination));
  Rng anom_rng = make_rng(spec.seed, "generator", 2);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, anom_rng);
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_anom));
  std::sort(chosen.begin(), chosen.end());

  Rng pattern_rng = make_rng(spec.seed, "generator", 3);
  auto direction = [&](std::size_t cls, std::size_t j) -> double {
    if (cls == 1) return 1.0;
    if (cls == 2) return -1.0;
    if (cls == 3) return j % 2 == 0 ? 1.0 : -1.0;
    return uniform01(pattern_rng) < 0.5 ? -1.0 : 1.0;
  };
  std::vector<std::vector<std::vector<double>>> patterns(spec.n_classes);
  for (std::size_t cls = 1; cls < spec.n_classes; ++cls)
    for (std::size_t m = 0; m < n_mod; ++m) {
      std::vector<double> d;
      for (std::size_t j = 0; j < spec.modalities[m].dim; ++j) d.push_back(direction(cls, j));
      patterns[cls].push_back(std::move(d));
    }

  for (std::size_t a = 0; a < chosen.size(); ++a) {
    const std::size_t row = chosen[a];
    const std::size_t cls = 1 + a % (spec.n_classes - 1);
    ds.labels[row] = static_cast<int>(cls);
    std::vector<bool> hit(n_mod);
    bool any = false;
    for (std::size_t m = 0; m < n_mod; ++m) any |= hit[m] = uniform01(anom_rng) < 0.5;
    if (!any) hit[uniform_index(anom_rng, n_mod)] = true;
    for (std::size_t m = 0; m < n_mod; ++m) {
      if (!hit[m]) continue;
      for (std::size_t j = 0; j < spec.modalities[m].dim; ++j) {
        ds.modalities[m].values(row, j) += spec.magnitude * sigma[m][j] * patterns[cls][m][j];
      }
    }
  }
  ds.validate();
  return ds;
}

}  // namespace mmae
