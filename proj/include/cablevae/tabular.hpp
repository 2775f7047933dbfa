#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cablevae {

enum class ColumnKind { kContinuous, kCategorical };

/// Continuous-column transform applied before modelling.
/// kNone leaves values untouched; kZScore standardizes; kLog1pZScore
/// standardizes log(1 + x).
enum class Transform { kNone, kZScore, kLog1pZScore };

/// Label that absorbs unseen categories when present in a column's list.
inline constexpr const char* kOtherLabel = "OTHER";

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kContinuous;
  Transform transform = Transform::kNone;
  std::vector<std::string> categories;

  static ColumnSpec continuous(std::string name, Transform transform = Transform::kLog1pZScore);
  static ColumnSpec categorical(std::string name, std::vector<std::string> categories);

  bool is_categorical() const { return kind == ColumnKind::kCategorical; }
  std::size_t category_count() const { return categories.size(); }
  /// Index of `label`, falling back to OTHER when declared.
  std::optional<std::size_t> category_index(const std::string& label) const;
  /// Throws DataError on a violated invariant.
  void validate() const;

  friend bool operator==(const ColumnSpec&, const ColumnSpec&) = default;
};

struct Schema {
  std::vector<ColumnSpec> columns;

  std::size_t size() const { return columns.size(); }
  const ColumnSpec& operator[](std::size_t i) const { return columns[i]; }
  std::optional<std::size_t> find(const std::string& name) const;
  /// Like find() but throws DataError for unknown names.
  std::size_t index_of(const std::string& name) const;
  void validate() const;

  friend bool operator==(const Schema&, const Schema&) = default;
};

nlohmann::json schema_to_json(const Schema& schema);
Schema schema_from_json(const nlohmann::json& doc);
Schema load_schema(const std::string& path);
void save_schema(const Schema& schema, const std::string& path);

/// Rows of typed cells plus an observed mask. Continuous cells hold the value;
/// categorical cells hold the category index. Missing cells store 0 and are
/// never read.
class TabularDataset {
 public:
  TabularDataset() = default;
  TabularDataset(Schema schema, std::size_t rows);

  const Schema& schema() const { return schema_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return schema_.size(); }

  double value(std::size_t r, std::size_t c) const { return cells_[r * cols() + c]; }
  std::size_t category(std::size_t r, std::size_t c) const {
    return static_cast<std::size_t>(cells_[r * cols() + c]);
  }
  bool observed(std::size_t r, std::size_t c) const { return mask_[r * cols() + c] != 0; }

  void set(std::size_t r, std::size_t c, double value) {
    cells_[r * cols() + c] = value;
    mask_[r * cols() + c] = 1;
  }
  void set_missing(std::size_t r, std::size_t c) {
    cells_[r * cols() + c] = 0.0;
    mask_[r * cols() + c] = 0;
  }

  std::size_t missing_count() const;
  std::size_t observed_count(std::size_t c) const;
  bool row_complete(std::size_t r) const;
  bool row_complete(std::size_t r, const std::vector<std::size_t>& columns) const;

  TabularDataset select_rows(const std::vector<std::size_t>& rows) const;
  /// Rows of `other` appended after this dataset's rows. Schemas must match.
  TabularDataset concat(const TabularDataset& other) const;

  const std::vector<double>& cells() const { return cells_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }

  /// Throws DataError on a violated invariant.
  void validate() const;

  friend bool operator==(const TabularDataset&, const TabularDataset&) = default;

 private:
  Schema schema_;
  std::size_t rows_ = 0;
  std::vector<double> cells_;
  std::vector<std::uint8_t> mask_;
};

TabularDataset read_csv(std::istream& in, const Schema& schema);
TabularDataset load_csv(const std::string& path, const Schema& schema);
void write_csv(std::ostream& out, const TabularDataset& dataset);
void save_csv(const TabularDataset& dataset, const std::string& path);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Per-column statistics for the invertible continuous transform plus the
/// modal category of each categorical column.
struct ColumnStats {
  double mean = 0.0;
  double stddev = 1.0;
  std::size_t modal_index = 0;

  friend bool operator==(const ColumnStats&, const ColumnStats&) = default;
};

class Preprocessor {
 public:
  Preprocessor() = default;
  Preprocessor(Schema schema, std::vector<ColumnStats> stats);

  const Schema& schema() const { return schema_; }
  const ColumnStats& stats(std::size_t column) const { return stats_.at(column); }

  double forward(std::size_t column, double raw) const;
  double inverse(std::size_t column, double standardized) const;

  friend bool operator==(const Preprocessor&, const Preprocessor&) = default;

 private:
  Schema schema_;
  std::vector<ColumnStats> stats_;
};

/// Means and sample standard deviations (ddof = 1) over observed cells, on the
/// log1p scale for kLog1pZScore columns.
Preprocessor fit_preprocessor(const TabularDataset& dataset);
TabularDataset transform(const TabularDataset& dataset, const Preprocessor& pre);
TabularDataset inverse_transform(const TabularDataset& standardized, const Preprocessor& pre);

nlohmann::json preprocessor_to_json(const Preprocessor& pre);
Preprocessor preprocessor_from_json(const nlohmann::json& doc);

/// Seeded disjoint row partition; both parts are non-empty.
std::pair<TabularDataset, TabularDataset> split(const TabularDataset& dataset,
                                                double train_fraction, std::uint64_t seed);

/// Row indices of the (train, validation) partition produced by split().
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t rows, double train_fraction, std::uint64_t seed);

}  // namespace cablevae
