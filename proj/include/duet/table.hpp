#pragma once
// Feature tables, dataset ingestion and sequence application.
//
// The label vector y never lives inside a FeatureTable. It is returned next
// to the table by the loaders and only consumed by the evaluation harness.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "duet/expr.hpp"
#include "duet/rng.hpp"

namespace duet {

class DataError : public std::runtime_error {
 public:
  enum class Kind { io, schema, empty, degenerate };
  DataError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct FeatureDescription {
  std::string name;
  std::string description;
};

struct DatasetMeta {
  std::string task_description;
  std::string target_name;
  std::vector<FeatureDescription> features;  // in table column order

  const std::string* describe(std::string_view name) const {
    for (const auto& f : features) {
      if (f.name == name) return &f.description;
    }
    return nullptr;
  }
};

inline DatasetMeta meta_from_json(const nlohmann::json& j) {
  DatasetMeta meta;
  try {
    meta.task_description = j.value("task_description", "");
    meta.target_name = j.at("target").get<std::string>();
    if (j.contains("features")) {
      for (const auto& f : j.at("features")) {
        meta.features.push_back({f.at("name").get<std::string>(), f.value("description", "")});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataError::Kind::schema, std::string("invalid metadata: ") + e.what());
  }
  return meta;
}

inline nlohmann::json meta_to_json(const DatasetMeta& meta) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : meta.features) features.push_back({{"name", f.name}, {"description", f.description}});
  return {{"task_description", meta.task_description}, {"target", meta.target_name}, {"features", features}};
}

struct ColumnInfo {
  std::string name;
  std::optional<Expr> expr;       // empty for ORIGINAL columns
  std::optional<Expr> lineage;    // expr rewritten over original columns only
  std::string key;                // canonical key of the lineage, "fN" for originals
  double missing_fraction = 0.0;  // before imputation

  bool original() const { return !expr.has_value(); }
};

// Columnar numeric table. Immutable: every transformation returns a new table.
class FeatureTable {
 public:
  FeatureTable() = default;

  FeatureTable(std::vector<ColumnInfo> info, std::vector<std::vector<double>> columns)
      : info_(std::move(info)), columns_(std::move(columns)) {
    if (info_.size() != columns_.size()) throw DataError(DataError::Kind::schema, "column metadata mismatch");
    if (columns_.empty() || columns_.front().empty()) throw DataError(DataError::Kind::empty, "table is empty");
    std::unordered_set<std::string> names;
    bool seen_generated = false;
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      if (columns_[i].size() != columns_.front().size()) {
        throw DataError(DataError::Kind::schema, "columns differ in length");
      }
      if (!names.insert(info_[i].name).second) {
        throw DataError(DataError::Kind::schema, "duplicate column name '" + info_[i].name + "'");
      }
      if (info_[i].original()) {
        if (seen_generated) throw DataError(DataError::Kind::schema, "original columns must precede generated ones");
        info_[i].key = "f" + std::to_string(i + 1);
      } else {
        seen_generated = true;
      }
    }
  }

  // Convenience for tests and synthetic data: all columns original.
  static FeatureTable from_columns(std::vector<std::string> names, std::vector<std::vector<double>> columns) {
    std::vector<ColumnInfo> info;
    for (auto& n : names) info.push_back({std::move(n), std::nullopt, std::nullopt, "", 0.0});
    return {std::move(info), std::move(columns)};
  }

  std::size_t rows() const { return columns_.empty() ? 0 : columns_.front().size(); }
  std::size_t cols() const { return columns_.size(); }
  bool empty() const { return columns_.empty(); }

  const std::vector<double>& column(std::size_t i) const { return columns_.at(i); }
  const std::vector<std::vector<double>>& columns() const { return columns_; }
  const ColumnInfo& info(std::size_t i) const { return info_.at(i); }
  const std::vector<ColumnInfo>& infos() const { return info_; }
  const std::string& name(std::size_t i) const { return info_.at(i).name; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& c : info_) out.push_back(c.name);
    return out;
  }

  std::size_t original_count() const {
    return static_cast<std::size_t>(std::count_if(info_.begin(), info_.end(), [](const auto& c) { return c.original(); }));
  }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < info_.size(); ++i) {
      if (info_[i].name == name) return i;
    }
    return std::nullopt;
  }

  // Rewrites feature references to generated columns with those columns'
  // lineage, so the result only mentions original columns.
  Expr expand(const Expr& e) const {
    switch (e.kind()) {
      case Expr::Kind::feature: {
        const auto& c = info_.at(e.feature_index() - 1);
        return c.original() ? e : *c.lineage;
      }
      case Expr::Kind::unary:
        return Expr::unary(e.unary_op(), expand(e.child()));
      case Expr::Kind::binary:
        return Expr::binary(e.binary_op(), expand(e.left()), expand(e.right()));
    }
    return e;
  }

  EvalResult evaluate(const Expr& e) const { return duet::evaluate(e, columns_, rows()); }

  FeatureTable with_generated(const Expr& e, std::vector<double> values, double missing_fraction) const {
    if (values.size() != rows()) throw DataError(DataError::Kind::schema, "generated column has wrong length");
    FeatureTable out = *this;
    ColumnInfo c;
    c.name = render(e);
    c.expr = e;
    c.lineage = expand(e);
    c.key = canonical_key(*c.lineage);
    c.missing_fraction = missing_fraction;
    out.info_.push_back(std::move(c));
    out.columns_.push_back(std::move(values));
    for (std::size_t i = 0; i + 1 < out.info_.size(); ++i) {
      if (out.info_[i].name == out.info_.back().name) {
        throw DataError(DataError::Kind::schema, "duplicate column name '" + out.info_.back().name + "'");
      }
    }
    return out;
  }

  FeatureTable select_rows(std::span<const std::size_t> rows) const {
    FeatureTable out;
    out.info_ = info_;
    out.columns_.resize(columns_.size());
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      out.columns_[c].reserve(rows.size());
      for (auto r : rows) out.columns_[c].push_back(columns_[c].at(r));
    }
    return out;
  }

  friend bool operator==(const FeatureTable& a, const FeatureTable& b) {
    if (a.columns_ != b.columns_ || a.info_.size() != b.info_.size()) return false;
    for (std::size_t i = 0; i < a.info_.size(); ++i) {
      if (a.info_[i].name != b.info_[i].name || a.info_[i].key != b.info_[i].key) return false;
    }
    return true;
  }

 private:
  std::vector<ColumnInfo> info_;
  std::vector<std::vector<double>> columns_;
};

// ---------------------------------------------------------------------------
// CSV

namespace csv {

// RFC 4180: comma separated, optional double-quoted fields with "" escapes,
// CRLF or LF line ends. Empty trailing lines are ignored.
inline std::vector<std::vector<std::string>> parse(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t i = 0;
  auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    bool blank = row.size() == 1 && row.front().empty() && !field_started;
    if (!blank) rows.push_back(std::move(row));
    row.clear();
    field_started = false;
  };
  while (i < text.size()) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        quoted = false;
      } else {
        field += c;
      }
      ++i;
      continue;
    }
    if (c == '"') {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = true;
    } else if (c == '\n' || c == '\r') {
      end_row();
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
    } else {
      field += c;
      field_started = true;
    }
    ++i;
  }
  if (quoted) throw DataError(DataError::Kind::schema, "unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

inline std::string quote(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace csv

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline bool is_missing_cell(std::string_view cell) {
  static const std::unordered_set<std::string> tokens{"", "na", "n/a", "nan", "null", "none", "?"};
  std::string t = trim(cell);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return tokens.count(t) != 0;
}

inline std::optional<double> parse_number(std::string_view cell) {
  std::string t = trim(cell);
  if (t.empty()) return std::nullopt;
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline double median_of(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }), values.end());
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Replaces NaN entries with the median of the finite ones.
inline void impute_median(std::vector<double>& column) {
  double m = median_of(column);
  for (auto& v : column) {
    if (std::isnan(v)) v = m;
  }
}

struct LoadedDataset {
  FeatureTable table;
  std::vector<int> labels;              // class indices 0..K-1
  std::vector<std::string> class_names;  // index -> raw label text
  DatasetMeta meta;
};

// Parses CSV text plus metadata. The target column is removed from the table
// and returned as labels. Non-numeric feature columns are ordinal encoded by
// first appearance; missing cells are median imputed.
inline LoadedDataset load_csv_text(std::string_view csv_text, const DatasetMeta& meta_in) {
  auto rows = csv::parse(csv_text);
  if (rows.empty()) throw DataError(DataError::Kind::empty, "CSV has no header row");
  std::vector<std::string> header;
  for (const auto& h : rows.front()) header.push_back(trim(h));
  if (rows.size() < 2) throw DataError(DataError::Kind::empty, "CSV has no data rows");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size()) {
      throw DataError(DataError::Kind::schema, "row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                                                   " fields, header has " + std::to_string(header.size()));
    }
  }
  auto target_it = std::find(header.begin(), header.end(), meta_in.target_name);
  if (target_it == header.end()) {
    throw DataError(DataError::Kind::schema, "target column '" + meta_in.target_name + "' not found");
  }
  const std::size_t target = static_cast<std::size_t>(target_it - header.begin());
  for (const auto& f : meta_in.features) {
    if (std::find(header.begin(), header.end(), f.name) == header.end()) {
      throw DataError(DataError::Kind::schema, "metadata names unknown feature '" + f.name + "'");
    }
  }
  if (header.size() < 2) throw DataError(DataError::Kind::empty, "no feature columns besides the target");

  const std::size_t n = rows.size() - 1;
  LoadedDataset out;
  out.meta.task_description = meta_in.task_description;
  out.meta.target_name = meta_in.target_name;

  std::unordered_map<std::string, int> class_index;
  for (std::size_t r = 1; r <= n; ++r) {
    std::string raw = trim(rows[r][target]);
    if (is_missing_cell(raw)) throw DataError(DataError::Kind::schema, "missing target in row " + std::to_string(r));
    auto [it, inserted] = class_index.emplace(raw, static_cast<int>(out.class_names.size()));
    if (inserted) out.class_names.push_back(raw);
    out.labels.push_back(it->second);
  }

  std::vector<ColumnInfo> info;
  std::vector<std::vector<double>> columns;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == target) continue;
    bool numeric = true;
    std::size_t missing = 0;
    for (std::size_t r = 1; r <= n; ++r) {
      const auto& cell = rows[r][c];
      if (is_missing_cell(cell)) {
        ++missing;
      } else if (!parse_number(cell)) {
        numeric = false;
      }
    }
    std::vector<double> col(n, std::nan(""));
    std::unordered_map<std::string, double> codes;
    for (std::size_t r = 1; r <= n; ++r) {
      const auto& cell = rows[r][c];
      if (is_missing_cell(cell)) continue;
      if (numeric) {
        col[r - 1] = *parse_number(cell);
      } else {
        auto [it, _] = codes.emplace(trim(cell), static_cast<double>(codes.size()));
        col[r - 1] = it->second;
      }
    }
    impute_median(col);
    ColumnInfo ci;
    ci.name = header[c];
    ci.missing_fraction = static_cast<double>(missing) / static_cast<double>(n);
    info.push_back(std::move(ci));
    columns.push_back(std::move(col));
    const std::string* d = meta_in.describe(header[c]);
    out.meta.features.push_back({header[c], d ? *d : std::string()});
  }
  out.table = FeatureTable(std::move(info), std::move(columns));
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline DatasetMeta load_meta(const std::string& meta_path) {
  std::string text = read_file(meta_path);
  try {
    return meta_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(DataError::Kind::schema, "metadata is not valid JSON: " + std::string(e.what()));
  }
}

inline LoadedDataset load_csv(const std::string& data_path, const std::string& meta_path) {
  return load_csv_text(read_file(data_path), load_meta(meta_path));
}

// Labels, when given, are written as a trailing column named `target`.
struct LabelColumn {
  std::string name;
  const std::vector<int>* labels = nullptr;
  const std::vector<std::string>* class_names = nullptr;
};

inline std::string to_csv(const FeatureTable& table, const std::optional<LabelColumn>& labels = std::nullopt) {
  std::string out;
  for (std::size_t c = 0; c < table.cols(); ++c) {
    if (c) out += ',';
    out += csv::quote(table.name(c));
  }
  if (labels) out += ',' + csv::quote(labels->name);
  out += '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.cols(); ++c) {
      if (c) out += ',';
      out += csv::format_number(table.column(c)[r]);
    }
    if (labels) {
      int y = labels->labels->at(r);
      out += ',';
      out += labels->class_names ? csv::quote(labels->class_names->at(static_cast<std::size_t>(y))) : std::to_string(y);
    }
    out += '\n';
  }
  return out;
}

inline void write_text(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::io, "cannot write '" + path + "'");
  out << text;
}

// ---------------------------------------------------------------------------
// Applying a generated sequence

struct AcceptancePolicy {
  double max_nan_fraction = 0.10;
  double min_std = 1e-8;
  double budget_multiplier = 4.0;  // total columns <= multiplier * original columns
};

enum class RejectReason { out_of_range, too_many_nan, zero_variance, duplicate, over_budget };

inline constexpr std::string_view reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::out_of_range: return "out_of_range";
    case RejectReason::too_many_nan: return "too_many_nan";
    case RejectReason::zero_variance: return "zero_variance";
    case RejectReason::duplicate: return "duplicate";
    case RejectReason::over_budget: return "over_budget";
  }
  return "?";
}

struct Rejection {
  std::size_t position = 0;  // index into the applied sequence
  std::string expr;          // rendered expression
  RejectReason reason = RejectReason::out_of_range;
  std::string detail;
};

inline nlohmann::json to_json(const Rejection& r) {
  return {{"position", r.position}, {"expr", r.expr}, {"reason", reason_name(r.reason)}, {"detail", r.detail}};
}

inline std::string rejections_to_jsonl(const std::vector<Rejection>& rs) {
  std::string out;
  for (const auto& r : rs) out += to_json(r).dump() + "\n";
  return out;
}

struct ApplyResult {
  FeatureTable table;
  std::vector<std::size_t> accepted;  // positions in the sequence
  std::vector<Rejection> rejections;
};

inline std::size_t column_budget(const FeatureTable& table, const AcceptancePolicy& policy) {
  return static_cast<std::size_t>(std::floor(policy.budget_multiplier * static_cast<double>(table.original_count()) + 1e-9));
}

namespace detail {

inline double population_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace detail

// Evaluates each expression against the table as it grows; an expression may
// reference columns accepted earlier in the same sequence. Rejection reasons
// are checked in declaration order and only the first failing one is reported.
inline ApplyResult apply_sequence(const FeatureTable& table, const TransformSequence& seq,
                                  const AcceptancePolicy& policy = {}) {
  ApplyResult out{table, {}, {}};
  const std::size_t budget = column_budget(table, policy);
  for (std::size_t i = 0; i < seq.exprs.size(); ++i) {
    const Expr& e = seq.exprs[i];
    auto reject = [&](RejectReason reason, std::string detail) {
      out.rejections.push_back({i, render(e), reason, std::move(detail)});
    };
    const FeatureTable& cur = out.table;
    if (e.max_feature() > cur.cols()) {
      reject(RejectReason::out_of_range, "f" + std::to_string(e.max_feature()) + " exceeds " +
                                             std::to_string(cur.cols()) + " columns");
      continue;
    }
    EvalResult r = cur.evaluate(e);
    double nan_fraction = static_cast<double>(r.non_finite) / static_cast<double>(cur.rows());
    if (nan_fraction > policy.max_nan_fraction) {
      reject(RejectReason::too_many_nan, "NaN fraction " + std::to_string(nan_fraction));
      continue;
    }
    impute_median(r.values);
    if (detail::population_std(r.values) < policy.min_std) {
      reject(RejectReason::zero_variance, "constant column");
      continue;
    }
    std::string key = canonical_key(cur.expand(e));
    auto dup = std::find_if(cur.infos().begin(), cur.infos().end(), [&](const ColumnInfo& c) { return c.key == key; });
    if (dup != cur.infos().end()) {
      reject(RejectReason::duplicate, "same as column '" + dup->name + "'");
      continue;
    }
    if (cur.cols() + 1 > budget) {
      reject(RejectReason::over_budget, "budget of " + std::to_string(budget) + " columns reached");
      continue;
    }
    if (cur.find(render(e))) {
      reject(RejectReason::duplicate, "column name '" + render(e) + "' already present");
      continue;
    }
    out.table = cur.with_generated(e, std::move(r.values), nan_fraction);
    out.accepted.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stratified split

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

struct LabeledSplit {
  FeatureTable train_x;
  std::vector<int> train_y;
  FeatureTable test_x;
  std::vector<int> test_y;
  SplitIndices indices;
};

// Per class, rows are shuffled with SplitMix64(seed ^ class-salt) and the
// leading share goes to test. The test total is round(n * fraction); per-class
// quotas use largest remainders (ties to the lower class index) and each
// class keeps at least one training row.
inline SplitIndices split_indices(const std::vector<int>& labels, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("test_fraction must lie strictly between 0 and 1");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto& [cls, rows] : by_class) {
    if (rows.size() < 2) {
      throw DataError(DataError::Kind::degenerate, "class " + std::to_string(cls) + " has fewer than 2 rows");
    }
  }
  const double n = static_cast<double>(labels.size());
  const auto target_total = static_cast<std::size_t>(std::llround(n * test_fraction));
  struct Quota {
    int cls;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [cls, rows] : by_class) {
    double ideal = static_cast<double>(rows.size()) * test_fraction;
    auto take = static_cast<std::size_t>(std::floor(ideal));
    quotas.push_back({cls, take, ideal - std::floor(ideal)});
    assigned += take;
  }
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t k = 0; assigned < target_total && k < order.size(); ++k) {
    ++quotas[order[k]].take;
    ++assigned;
  }

  SplitIndices out;
  out.seed = seed;
  for (const auto& q : quotas) {
    auto rows = by_class[q.cls];
    SplitMix64 rng(seed ^ (0x5DEECE66DULL * static_cast<std::uint64_t>(q.cls + 1)));
    rng.shuffle(std::span<std::size_t>(rows));
    std::size_t take = std::min(q.take, rows.size() - 1);
    out.test.insert(out.test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
    out.train.insert(out.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline LabeledSplit apply_split(const FeatureTable& table, const std::vector<int>& labels, const SplitIndices& idx) {
  if (labels.size() != table.rows()) throw DataError(DataError::Kind::schema, "labels do not match table rows");
  LabeledSplit s;
  s.train_x = table.select_rows(idx.train);
  s.test_x = table.select_rows(idx.test);
  for (auto i : idx.train) s.train_y.push_back(labels[i]);
  for (auto i : idx.test) s.test_y.push_back(labels[i]);
  s.indices = idx;
  return s;
}

inline LabeledSplit split(const FeatureTable& table, const std::vector<int>& labels, double test_fraction,
                          std::uint64_t seed) {
  if (labels.size() != table.rows()) throw DataError(DataError::Kind::schema, "labels do not match table rows");
  return apply_split(table, labels, split_indices(labels, test_fraction, seed));
}

}  // namespace duet
