#pragma once

// Feature matrices in [0,1], label vectors, CSV ingestion, sign flips and the
// quadratic/linear terms (M = F'F, q = F't) consumed by the polytope solver.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ses/error.hpp"
#include "ses/io.hpp"

namespace ses {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x n table of soft feature responses, rows are samples. Immutable after
/// construction; every entry is finite and inside [0,1].
class FeatureMatrix {
 public:
  FeatureMatrix() = default;

  explicit FeatureMatrix(RowMatrix values, std::vector<std::string> names = {},
                         std::vector<std::string> sample_ids = {})
      : values_(std::move(values)), names_(std::move(names)), sample_ids_(std::move(sample_ids)) {
    if (values_.rows() < 1 || values_.cols() < 1)
      throw DimensionError("feature matrix needs at least one sample and one feature");
    if (names_.empty()) {
      names_.reserve(static_cast<std::size_t>(values_.cols()));
      for (Eigen::Index j = 0; j < values_.cols(); ++j) names_.push_back(std::to_string(j));
    }
    if (names_.size() != static_cast<std::size_t>(values_.cols()))
      throw DimensionError("feature name count " + std::to_string(names_.size()) +
                           " does not match feature count " + std::to_string(values_.cols()));
    std::set<std::string_view> seen;
    for (const auto& name : names_)
      if (!seen.insert(name).second) throw ParseError("duplicate feature name '" + name + "'");
    if (!sample_ids_.empty() && sample_ids_.size() != static_cast<std::size_t>(values_.rows()))
      throw DimensionError("sample id count does not match sample count");
    for (Eigen::Index i = 0; i < values_.rows(); ++i)
      for (Eigen::Index j = 0; j < values_.cols(); ++j) {
        const double v = values_(i, j);
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
          throw RangeError("feature value " + io::format_double(v) + " outside [0,1] at sample " +
                               std::to_string(i) + ", feature " + std::to_string(j),
                           static_cast<std::size_t>(i) + 1, static_cast<std::size_t>(j) + 1);
      }
  }

  std::size_t samples() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  std::size_t features() const noexcept { return static_cast<std::size_t>(values_.cols()); }
  double operator()(std::size_t i, std::size_t j) const {
    return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const RowMatrix& values() const noexcept { return values_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<std::string>& sample_ids() const noexcept { return sample_ids_; }
  bool has_sample_ids() const noexcept { return !sample_ids_.empty(); }

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * features(), features()};
  }

  /// Rows selected by index, in the given order.
  FeatureMatrix subset(std::span<const std::size_t> rows) const {
    RowMatrix out(static_cast<Eigen::Index>(rows.size()), values_.cols());
    std::vector<std::string> ids;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] >= samples()) throw DimensionError("row index out of range");
      out.row(static_cast<Eigen::Index>(r)) = values_.row(static_cast<Eigen::Index>(rows[r]));
      if (has_sample_ids()) ids.push_back(sample_ids_[rows[r]]);
    }
    return FeatureMatrix(std::move(out), names_, std::move(ids));
  }

 private:
  RowMatrix values_;
  std::vector<std::string> names_;
  std::vector<std::string> sample_ids_;
};

/// Binary supervision: positive samples carry target 1, negatives target 0.
class LabelVector {
 public:
  LabelVector() = default;
  explicit LabelVector(std::vector<std::uint8_t> positive) : positive_(std::move(positive)) {}

  static LabelVector one_vs_all(std::span<const std::string> classes, const std::string& positive) {
    std::vector<std::uint8_t> out(classes.size());
    for (std::size_t i = 0; i < classes.size(); ++i) out[i] = classes[i] == positive ? 1 : 0;
    return LabelVector(std::move(out));
  }

  std::size_t size() const noexcept { return positive_.size(); }
  bool positive(std::size_t i) const { return positive_.at(i) != 0; }
  double target(std::size_t i) const { return positive(i) ? 1.0 : 0.0; }
  std::size_t positives() const {
    return static_cast<std::size_t>(std::count(positive_.begin(), positive_.end(), 1));
  }
  std::size_t negatives() const { return size() - positives(); }

  Eigen::VectorXd targets() const {
    Eigen::VectorXd t(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < size(); ++i) t(static_cast<Eigen::Index>(i)) = target(i);
    return t;
  }

  LabelVector subset(std::span<const std::size_t> rows) const {
    std::vector<std::uint8_t> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(positive_.at(r));
    return LabelVector(std::move(out));
  }

 private:
  std::vector<std::uint8_t> positive_;
};

/// M = F'F and q = F't for one (possibly flipped) feature matrix.
struct QuadraticTerms {
  Eigen::MatrixXd M;
  Eigen::VectorXd q;
  std::size_t source_sample_count = 0;

  std::size_t features() const noexcept { return static_cast<std::size_t>(M.rows()); }
  bool has_linear_term() const { return q.size() > 0 && q.cwiseAbs().maxCoeff() > 0.0; }
};

/// Unflipped sufficient statistics of a sample pool: the Gram matrix, column
/// sums and sample count. Enough to derive the terms of any flipped view.
struct GramStatistics {
  Eigen::MatrixXd gram;
  Eigen::VectorXd column_sums;
  std::size_t samples = 0;
};

/// Streaming accumulation of F'F by row blocks. Each block contributes a
/// symmetric rank-update and blocks are summed in arrival order, so the result
/// depends only on the sequence of rows and the fixed block size.
class GramAccumulator {
 public:
  static constexpr Eigen::Index kBlockRows = 256;

  explicit GramAccumulator(std::size_t features)
      : lower_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(features),
                                     static_cast<Eigen::Index>(features))),
        sums_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(features))) {}

  void add_rows(const RowMatrix& rows) {
    if (rows.cols() != lower_.cols()) throw DimensionError("row block width mismatch");
    for (Eigen::Index start = 0; start < rows.rows(); start += kBlockRows) {
      const Eigen::Index count = std::min(kBlockRows, rows.rows() - start);
      const auto block = rows.middleRows(start, count);
      lower_.selfadjointView<Eigen::Lower>().rankUpdate(block.transpose());
      sums_ += block.colwise().sum().transpose();
    }
    samples_ += static_cast<std::size_t>(rows.rows());
  }

  void add(const FeatureMatrix& F) { add_rows(F.values()); }

  GramStatistics finish() const {
    GramStatistics out;
    out.gram = lower_.selfadjointView<Eigen::Lower>();
    out.column_sums = sums_;
    out.samples = samples_;
    return out;
  }

 private:
  Eigen::MatrixXd lower_;
  Eigen::VectorXd sums_;
  std::size_t samples_ = 0;
};

inline GramStatistics gram_statistics(const FeatureMatrix& F) {
  GramAccumulator acc(F.features());
  acc.add(F);
  return acc.finish();
}

/// F't for unflipped features.
inline Eigen::VectorXd label_moments(const FeatureMatrix& F, const LabelVector& t) {
  if (t.size() != F.samples())
    throw DimensionError("label count " + std::to_string(t.size()) + " does not match sample count " +
                         std::to_string(F.samples()));
  return F.values().transpose() * t.targets();
}

/// M = F'F, q = F't (zero when no labels are given).
inline QuadraticTerms build_terms(const FeatureMatrix& F, const std::optional<LabelVector>& t = std::nullopt) {
  QuadraticTerms terms;
  terms.M = gram_statistics(F).gram;
  terms.q = t ? label_moments(F, *t) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(F.features()));
  terms.source_sample_count = F.samples();
  return terms;
}

/// Terms of the matrix whose flagged columns are replaced by 1 - f, derived
/// from unflipped statistics without materializing the flipped copy:
///   (1-a)'(1-b) = N - sum(a) - sum(b) + a'b,  (1-a)'b = sum(b) - a'b,
///   (1-a)'t = P - a't  with P the number of positives.
inline QuadraticTerms flipped_terms(const GramStatistics& stats, const std::vector<bool>& flips,
                                    const std::optional<Eigen::VectorXd>& moments = std::nullopt,
                                    std::size_t positives = 0) {
  const auto n = stats.gram.rows();
  if (static_cast<Eigen::Index>(flips.size()) != n) throw DimensionError("flip count does not match feature count");
  const double N = static_cast<double>(stats.samples);
  QuadraticTerms terms;
  terms.M = stats.gram;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      const bool fa = flips[static_cast<std::size_t>(a)];
      const bool fb = flips[static_cast<std::size_t>(b)];
      const double g = stats.gram(a, b);
      if (fa && fb)
        terms.M(a, b) = N - stats.column_sums(a) - stats.column_sums(b) + g;
      else if (fa)
        terms.M(a, b) = stats.column_sums(b) - g;
      else if (fb)
        terms.M(a, b) = stats.column_sums(a) - g;
    }
  }
  if (moments) {
    if (moments->size() != n) throw DimensionError("moment vector length mismatch");
    terms.q = *moments;
    for (Eigen::Index j = 0; j < n; ++j)
      if (flips[static_cast<std::size_t>(j)]) terms.q(j) = static_cast<double>(positives) - (*moments)(j);
  } else {
    terms.q = Eigen::VectorXd::Zero(n);
  }
  terms.source_sample_count = stats.samples;
  return terms;
}

/// Column j becomes 1 - column j wherever `flips[j]` is set.
inline FeatureMatrix apply_flips(const FeatureMatrix& F, const std::vector<bool>& flips) {
  if (flips.size() != F.features())
    throw DimensionError("flip count " + std::to_string(flips.size()) + " does not match feature count " +
                         std::to_string(F.features()));
  RowMatrix out = F.values();
  for (std::size_t j = 0; j < flips.size(); ++j)
    if (flips[j]) out.col(static_cast<Eigen::Index>(j)) = (1.0 - out.col(static_cast<Eigen::Index>(j)).array()).matrix();
  return FeatureMatrix(std::move(out), F.names(), F.sample_ids());
}

/// Per-column (x - min) / (max - min); constant columns map to 0.5.
inline FeatureMatrix normalize_min_max(RowMatrix raw, std::vector<std::string> names = {},
                                       std::vector<std::string> sample_ids = {}) {
  if (!raw.allFinite()) throw InvalidArgument("normalization input contains non-finite values");
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    auto col = raw.col(j);
    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    if (hi > lo) {
      const double range = hi - lo;
      for (Eigen::Index i = 0; i < raw.rows(); ++i) col(i) = std::clamp((col(i) - lo) / range, 0.0, 1.0);
    } else {
      col.setConstant(0.5);
    }
  }
  return FeatureMatrix(std::move(raw), std::move(names), std::move(sample_ids));
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct FeatureCsvOptions {
  bool normalize = false;
};

/// Header row of feature names; an optional leading `sample_id` column; a
/// `class_name` column anywhere is skipped so a combined feature/label file
/// can be read as either.
inline FeatureMatrix parse_features_csv(std::string_view contents, const FeatureCsvOptions& options = {}) {
  const auto lines = io::split_lines(contents);
  std::size_t first = 0;
  while (first < lines.size() && io::trim(lines[first].text).empty()) ++first;
  if (first == lines.size()) throw ParseError("feature CSV is empty", 1, 0);

  const auto header = io::split_fields(lines[first].text);
  bool has_ids = !header.empty() && header.front() == "sample_id";
  std::vector<std::size_t> feature_cols;
  std::vector<std::string> names;
  std::set<std::string_view> seen;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if ((c == 0 && has_ids) || header[c] == "class_name") continue;
    if (header[c].empty()) throw ParseError("empty feature name in header", first + 1, c + 1);
    if (!seen.insert(header[c]).second)
      throw ParseError("duplicate feature name '" + std::string(header[c]) + "' in header", first + 1, c + 1);
    feature_cols.push_back(c);
    names.emplace_back(header[c]);
  }
  if (feature_cols.empty()) throw ParseError("feature CSV header names no feature columns", first + 1, 0);

  std::vector<std::vector<double>> rows;
  std::vector<std::string> ids;
  for (std::size_t l = first + 1; l < lines.size(); ++l) {
    if (io::trim(lines[l].text).empty()) continue;
    const auto fields = io::split_fields(lines[l].text);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()) +
                           " on line " + std::to_string(l + 1),
                       l + 1, 0);
    std::vector<double> row;
    row.reserve(feature_cols.size());
    for (auto c : feature_cols) {
      double v = 0.0;
      if (!io::parse_double(fields[c], v) || !std::isfinite(v))
        throw ParseError("cannot parse '" + std::string(fields[c]) + "' as a finite number at line " +
                             std::to_string(l + 1) + ", column " + std::to_string(c + 1),
                         l + 1, c + 1);
      if (!options.normalize && (v < 0.0 || v > 1.0))
        throw RangeError("value " + std::string(fields[c]) + " outside [0,1] at line " + std::to_string(l + 1) +
                             ", column " + std::to_string(c + 1) + " (use normalization for raw data)",
                         l + 1, c + 1);
      row.push_back(v);
    }
    if (has_ids) ids.emplace_back(fields[0]);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("feature CSV has a header but no samples", first + 1, 0);

  RowMatrix values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < names.size(); ++j)
      values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  if (options.normalize) return normalize_min_max(std::move(values), std::move(names), std::move(ids));
  return FeatureMatrix(std::move(values), std::move(names), std::move(ids));
}

inline FeatureMatrix load_features(const std::filesystem::path& path, const FeatureCsvOptions& options = {}) {
  return parse_features_csv(io::read_file(path), options);
}

/// Inverse of parse_features_csv: header, optional sample_id column,
/// shortest round-trip values.
inline std::string format_features_csv(const FeatureMatrix& F) {
  std::string out;
  if (F.has_sample_ids()) out += "sample_id,";
  for (std::size_t j = 0; j < F.features(); ++j) out += (j ? "," : "") + F.names()[j];
  out += "\n";
  for (std::size_t i = 0; i < F.samples(); ++i) {
    if (F.has_sample_ids()) out += F.sample_ids()[i] + ",";
    for (std::size_t j = 0; j < F.features(); ++j) out += (j ? "," : "") + io::format_double(F(i, j));
    out += "\n";
  }
  return out;
}

/// Per-sample class names as read from a label CSV.
struct ClassLabels {
  std::vector<std::string> sample_ids;
  std::vector<std::string> class_names;

  std::vector<std::string> distinct() const {
    std::set<std::string> s(class_names.begin(), class_names.end());
    return {s.begin(), s.end()};
  }
};

/// `sample_id,class_name` rows. A header row is recognized by a `class_name`
/// cell; with a header, extra columns (e.g. features) are ignored.
inline ClassLabels parse_labels_csv(std::string_view contents) {
  const auto lines = io::split_lines(contents);
  std::size_t first = 0;
  while (first < lines.size() && io::trim(lines[first].text).empty()) ++first;
  if (first == lines.size()) throw ParseError("label CSV is empty", 1, 0);

  std::size_t id_col = 0, class_col = 1, width = 2;
  std::size_t start = first;
  const auto header = io::split_fields(lines[first].text);
  auto class_it = std::find(header.begin(), header.end(), "class_name");
  if (class_it != header.end()) {
    class_col = static_cast<std::size_t>(class_it - header.begin());
    auto id_it = std::find(header.begin(), header.end(), "sample_id");
    if (id_it == header.end()) throw ParseError("label CSV header lacks a sample_id column", first + 1, 0);
    id_col = static_cast<std::size_t>(id_it - header.begin());
    width = header.size();
    start = first + 1;
  }

  ClassLabels out;
  for (std::size_t l = start; l < lines.size(); ++l) {
    if (io::trim(lines[l].text).empty()) continue;
    const auto fields = io::split_fields(lines[l].text);
    if (fields.size() != width)
      throw ParseError("expected " + std::to_string(width) + " fields on label line " + std::to_string(l + 1), l + 1, 0);
    if (fields[class_col].empty()) throw ParseError("empty class name", l + 1, class_col + 1);
    out.sample_ids.emplace_back(fields[id_col]);
    out.class_names.emplace_back(fields[class_col]);
  }
  if (out.class_names.empty()) throw ParseError("label CSV contains no rows", first + 1, 0);
  return out;
}

inline std::string format_labels_csv(const ClassLabels& labels) {
  std::string out = "sample_id,class_name\n";
  for (std::size_t i = 0; i < labels.class_names.size(); ++i)
    out += labels.sample_ids[i] + "," + labels.class_names[i] + "\n";
  return out;
}

inline ClassLabels load_labels(const std::filesystem::path& path) { return parse_labels_csv(io::read_file(path)); }

/// Class name per feature row: joined on sample_id when the feature file
/// carries ids, otherwise by row order.
inline std::vector<std::string> align_labels(const FeatureMatrix& F, const ClassLabels& labels) {
  std::vector<std::string> out;
  out.reserve(F.samples());
  if (F.has_sample_ids()) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < labels.sample_ids.size(); ++i)
      if (!index.emplace(labels.sample_ids[i], i).second)
        throw ParseError("duplicate sample_id '" + labels.sample_ids[i] + "' in labels", i + 1, 1);
    for (const auto& id : F.sample_ids()) {
      auto it = index.find(id);
      if (it == index.end()) throw DimensionError("no label for sample_id '" + id + "'");
      out.push_back(labels.class_names[it->second]);
    }
  } else {
    if (labels.class_names.size() != F.samples())
      throw DimensionError("label count " + std::to_string(labels.class_names.size()) +
                           " does not match sample count " + std::to_string(F.samples()));
    out = labels.class_names;
  }
  return out;
}

}  // namespace ses
