#include "cablevae/tabular.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cablevae/error.hpp"
#include "cablevae/rng.hpp"

namespace cablevae {

// ---------------------------------------------------------------------------
// Schema

ColumnSpec ColumnSpec::continuous(std::string name, Transform transform) {
  return ColumnSpec{.name = std::move(name), .kind = ColumnKind::kContinuous, .transform = transform};
}

ColumnSpec ColumnSpec::categorical(std::string name, std::vector<std::string> categories) {
  return ColumnSpec{.name = std::move(name),
                    .kind = ColumnKind::kCategorical,
                    .transform = Transform::kNone,
                    .categories = std::move(categories)};
}

std::optional<std::size_t> ColumnSpec::category_index(const std::string& label) const {
  auto it = std::find(categories.begin(), categories.end(), label);
  if (it != categories.end()) return static_cast<std::size_t>(it - categories.begin());
  it = std::find(categories.begin(), categories.end(), kOtherLabel);
  if (it != categories.end()) return static_cast<std::size_t>(it - categories.begin());
  return std::nullopt;
}

void ColumnSpec::validate() const {
  if (name.empty()) throw DataError("column with empty name");
  if (kind == ColumnKind::kCategorical) {
    if (categories.size() < 2) {
      throw DataError("categorical column '" + name + "' needs at least 2 categories");
    }
    std::set<std::string> unique(categories.begin(), categories.end());
    if (unique.size() != categories.size()) {
      throw DataError("categorical column '" + name + "' has duplicate labels");
    }
    if (transform != Transform::kNone) {
      throw DataError("categorical column '" + name + "' cannot have a transform");
    }
  } else if (!categories.empty()) {
    throw DataError("continuous column '" + name + "' must not list categories");
  }
}

std::optional<std::size_t> Schema::find(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t Schema::index_of(const std::string& name) const {
  if (auto i = find(name)) return *i;
  throw DataError("unknown column '" + name + "'");
}

void Schema::validate() const {
  if (columns.empty()) throw DataError("schema has no columns");
  std::set<std::string> names;
  for (const auto& c : columns) {
    c.validate();
    if (!names.insert(c.name).second) throw DataError("duplicate column '" + c.name + "'");
  }
}

namespace {

const char* transform_name(Transform t) {
  switch (t) {
    case Transform::kNone: return "none";
    case Transform::kZScore: return "zscore";
    case Transform::kLog1pZScore: return "log1p_zscore";
  }
  return "none";
}

Transform parse_transform(const std::string& s) {
  if (s == "none") return Transform::kNone;
  if (s == "zscore") return Transform::kZScore;
  if (s == "log1p_zscore" || s == "log1p-then-zscore") return Transform::kLog1pZScore;
  throw ConfigError("unknown transform '" + s + "'");
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        current += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        current += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current += ch;
    }
  }
  fields.push_back(trim(current));
  return fields;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

nlohmann::json schema_to_json(const Schema& schema) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& c : schema.columns) {
    nlohmann::json col = {{"name", c.name},
                          {"kind", c.is_categorical() ? "categorical" : "continuous"}};
    if (c.is_categorical()) {
      col["categories"] = c.categories;
    } else {
      col["transform"] = transform_name(c.transform);
    }
    doc.push_back(std::move(col));
  }
  return doc;
}

Schema schema_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw ConfigError("schema must be a JSON list of columns");
  Schema schema;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& col = doc[i];
    const std::string where = "schema[" + std::to_string(i) + "]";
    try {
      ColumnSpec spec;
      spec.name = col.at("name").get<std::string>();
      const auto kind = col.at("kind").get<std::string>();
      if (kind == "continuous") {
        spec.kind = ColumnKind::kContinuous;
        spec.transform = parse_transform(col.value("transform", std::string("none")));
      } else if (kind == "categorical") {
        spec.kind = ColumnKind::kCategorical;
        spec.categories = col.at("categories").get<std::vector<std::string>>();
      } else {
        throw ConfigError(where + ".kind: unknown kind '" + kind + "'");
      }
      schema.columns.push_back(std::move(spec));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  try {
    schema.validate();
  } catch (const DataError& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  return schema;
}

Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file " + path);
  try {
    return schema_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void save_schema(const Schema& schema, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << schema_to_json(schema).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Dataset

TabularDataset::TabularDataset(Schema schema, std::size_t rows)
    : schema_(std::move(schema)),
      rows_(rows),
      cells_(rows * schema_.size(), 0.0),
      mask_(rows * schema_.size(), 0) {}

std::size_t TabularDataset::missing_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 0));
}

std::size_t TabularDataset::observed_count(std::size_t c) const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows_; ++r) n += observed(r, c) ? 1 : 0;
  return n;
}

bool TabularDataset::row_complete(std::size_t r) const {
  for (std::size_t c = 0; c < cols(); ++c) {
    if (!observed(r, c)) return false;
  }
  return true;
}

bool TabularDataset::row_complete(std::size_t r, const std::vector<std::size_t>& columns) const {
  for (std::size_t c : columns) {
    if (!observed(r, c)) return false;
  }
  return true;
}

TabularDataset TabularDataset::select_rows(const std::vector<std::size_t>& rows) const {
  TabularDataset out(schema_, rows.size());
  const std::size_t d = cols();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= rows_) throw DataError("row index out of range");
    std::copy_n(cells_.begin() + r * d, d, out.cells_.begin() + i * d);
    std::copy_n(mask_.begin() + r * d, d, out.mask_.begin() + i * d);
  }
  return out;
}

TabularDataset TabularDataset::concat(const TabularDataset& other) const {
  if (!(schema_ == other.schema_)) throw DataError("concat: schema mismatch");
  TabularDataset out = *this;
  out.rows_ += other.rows_;
  out.cells_.insert(out.cells_.end(), other.cells_.begin(), other.cells_.end());
  out.mask_.insert(out.mask_.end(), other.mask_.begin(), other.mask_.end());
  return out;
}

void TabularDataset::validate() const {
  if (cells_.size() != rows_ * cols() || mask_.size() != cells_.size()) {
    throw DataError("dataset storage does not match its shape");
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols(); ++c) {
      if (!observed(r, c)) continue;
      const double v = value(r, c);
      const auto& spec = schema_[c];
      if (!std::isfinite(v)) {
        throw DataError("row " + std::to_string(r) + " column '" + spec.name + "': non-finite value");
      }
      if (spec.is_categorical() &&
          (v < 0 || v != std::floor(v) || v >= static_cast<double>(spec.category_count()))) {
        throw DataError("row " + std::to_string(r) + " column '" + spec.name +
                        "': category index out of range");
      }
    }
  }
}

TabularDataset read_csv(std::istream& in, const Schema& schema) {
  schema.validate();
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV is empty; expected a header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_fields(line);
  if (header.size() != schema.size()) {
    throw DataError("header has " + std::to_string(header.size()) + " columns, schema has " +
                    std::to_string(schema.size()));
  }
  std::vector<std::size_t> column_of(header.size());
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < header.size(); ++i) {
    auto c = schema.find(header[i]);
    if (!c) throw DataError("header column '" + header[i] + "' is not in the schema");
    if (!seen.insert(*c).second) throw DataError("header repeats column '" + header[i] + "'");
    column_of[i] = *c;
  }

  std::vector<std::vector<std::string>> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(records.size() + 1) + " (line " +
                      std::to_string(line_no) + "): expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    }
    records.push_back(std::move(fields));
  }

  TabularDataset ds(schema, records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      const std::string& field = records[r][i];
      const std::size_t c = column_of[i];
      if (field.empty()) continue;
      const auto& spec = schema[c];
      const std::string where =
          "row " + std::to_string(r + 1) + " column '" + spec.name + "'";
      if (spec.is_categorical()) {
        auto idx = spec.category_index(field);
        if (!idx) throw DataError(where + ": unknown label '" + field + "'");
        ds.set(r, c, static_cast<double>(*idx));
      } else {
        double v = 0.0;
        const char* end = field.data() + field.size();
        auto [ptr, ec] = std::from_chars(field.data(), end, v);
        if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
          throw DataError(where + ": non-numeric value '" + field + "'");
        }
        ds.set(r, c, v);
      }
    }
  }
  return ds;
}

TabularDataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return read_csv(in, schema);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

void write_csv(std::ostream& out, const TabularDataset& dataset) {
  const auto& schema = dataset.schema();
  for (std::size_t c = 0; c < schema.size(); ++c) {
    out << (c ? "," : "") << quote_if_needed(schema[c].name);
  }
  out << "\n";
  for (std::size_t r = 0; r < dataset.rows(); ++r) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (c) out << ",";
      if (!dataset.observed(r, c)) continue;
      if (schema[c].is_categorical()) {
        out << quote_if_needed(schema[c].categories[dataset.category(r, c)]);
      } else {
        out << format_double(dataset.value(r, c));
      }
    }
    out << "\n";
  }
}

void save_csv(const TabularDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_csv(out, dataset);
}

// ---------------------------------------------------------------------------
// Preprocessing

Preprocessor::Preprocessor(Schema schema, std::vector<ColumnStats> stats)
    : schema_(std::move(schema)), stats_(std::move(stats)) {
  if (stats_.size() != schema_.size()) throw DataError("preprocessor stats do not match schema");
}

double Preprocessor::forward(std::size_t column, double raw) const {
  const auto& spec = schema_[column];
  const auto& s = stats_[column];
  switch (spec.transform) {
    case Transform::kNone: return raw;
    case Transform::kZScore: return (raw - s.mean) / s.stddev;
    case Transform::kLog1pZScore: return (std::log1p(raw) - s.mean) / s.stddev;
  }
  return raw;
}

double Preprocessor::inverse(std::size_t column, double standardized) const {
  const auto& spec = schema_[column];
  const auto& s = stats_[column];
  switch (spec.transform) {
    case Transform::kNone: return standardized;
    case Transform::kZScore: return standardized * s.stddev + s.mean;
    case Transform::kLog1pZScore: return std::expm1(standardized * s.stddev + s.mean);
  }
  return standardized;
}

Preprocessor fit_preprocessor(const TabularDataset& dataset) {
  const auto& schema = dataset.schema();
  std::vector<ColumnStats> stats(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& spec = schema[c];
    if (spec.is_categorical()) {
      std::vector<std::size_t> counts(spec.category_count(), 0);
      for (std::size_t r = 0; r < dataset.rows(); ++r) {
        if (dataset.observed(r, c)) ++counts[dataset.category(r, c)];
      }
      stats[c].modal_index = static_cast<std::size_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      continue;
    }
    std::vector<double> values;
    for (std::size_t r = 0; r < dataset.rows(); ++r) {
      if (!dataset.observed(r, c)) continue;
      double v = dataset.value(r, c);
      if (spec.transform == Transform::kLog1pZScore) {
        if (!(v > -1.0)) {
          throw DataError("column '" + spec.name + "': value " + format_double(v) +
                          " outside the log1p domain");
        }
        v = std::log1p(v);
      }
      values.push_back(v);
    }
    std::set<double> distinct(values.begin(), values.end());
    if (distinct.size() < 2) {
      throw DataError("column '" + spec.name + "' needs at least 2 distinct observed values");
    }
    if (spec.transform == Transform::kNone) continue;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    stats[c].mean = mean;
    stats[c].stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return Preprocessor(schema, std::move(stats));
}

namespace {

TabularDataset map_continuous(const TabularDataset& ds, const Preprocessor& pre, bool inverse) {
  if (!(ds.schema() == pre.schema())) throw DataError("dataset schema does not match the preprocessor");
  TabularDataset out = ds;
  for (std::size_t c = 0; c < ds.cols(); ++c) {
    if (ds.schema()[c].is_categorical()) continue;
    for (std::size_t r = 0; r < ds.rows(); ++r) {
      if (!ds.observed(r, c)) continue;
      out.set(r, c, inverse ? pre.inverse(c, ds.value(r, c)) : pre.forward(c, ds.value(r, c)));
    }
  }
  return out;
}

}  // namespace

TabularDataset transform(const TabularDataset& dataset, const Preprocessor& pre) {
  return map_continuous(dataset, pre, false);
}

TabularDataset inverse_transform(const TabularDataset& standardized, const Preprocessor& pre) {
  return map_continuous(standardized, pre, true);
}

nlohmann::json preprocessor_to_json(const Preprocessor& pre) {
  nlohmann::json cols = nlohmann::json::array();
  char buf[40];
  for (std::size_t c = 0; c < pre.schema().size(); ++c) {
    const auto& s = pre.stats(c);
    nlohmann::json entry = {{"name", pre.schema()[c].name}};
    if (pre.schema()[c].is_categorical()) {
      entry["modal_index"] = s.modal_index;
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", s.mean);
      entry["mean"] = buf;
      std::snprintf(buf, sizeof buf, "%.17g", s.stddev);
      entry["stddev"] = buf;
    }
    cols.push_back(std::move(entry));
  }
  return {{"schema", schema_to_json(pre.schema())}, {"columns", std::move(cols)}};
}

Preprocessor preprocessor_from_json(const nlohmann::json& doc) {
  try {
    Schema schema = schema_from_json(doc.at("schema"));
    const auto& cols = doc.at("columns");
    if (cols.size() != schema.size()) throw ConfigError("preprocessor column count mismatch");
    std::vector<ColumnStats> stats(schema.size());
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (schema[c].is_categorical()) {
        stats[c].modal_index = cols[c].at("modal_index").get<std::size_t>();
      } else {
        stats[c].mean = std::stod(cols[c].at("mean").get<std::string>());
        stats[c].stddev = std::stod(cols[c].at("stddev").get<std::string>());
        if (!(stats[c].stddev > 0.0)) throw ConfigError("non-positive stddev for '" + schema[c].name + "'");
      }
    }
    return Preprocessor(std::move(schema), std::move(stats));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("preprocessor: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("preprocessor: ") + e.what());
  }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t rows, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie strictly between 0 and 1");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows)));
  if (n_train == 0 || n_train >= rows) {
    throw DataError("split of " + std::to_string(rows) + " rows at fraction " +
                    format_double(train_fraction) + " leaves a partition empty");
  }
  std::vector<std::size_t> order(rows);
  for (std::size_t i = 0; i < rows; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {std::move(train), std::move(val)};
}

std::pair<TabularDataset, TabularDataset> split(const TabularDataset& dataset,
                                                double train_fraction, std::uint64_t seed) {
  auto [train, val] = split_indices(dataset.rows(), train_fraction, seed);
  return {dataset.select_rows(train), dataset.select_rows(val)};
}

}  // namespace cablevae
