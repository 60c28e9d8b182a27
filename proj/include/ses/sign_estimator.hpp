#pragma once

// Feature sign estimation from a small labeled set, sign agreement statistics
// and the plain-text signs file.

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ses/error.hpp"
#include "ses/feature_store.hpp"
#include "ses/io.hpp"

namespace ses {

/// Margins E_P(f_j) - E_N(f_j) with their flip and tie flags.
struct FeatureSigns {
  static constexpr double kTieTolerance = 1e-12;

  std::vector<double> margins;
  std::vector<bool> flips;
  std::vector<bool> ties;
  std::size_t n_pos_used = 0;
  std::size_t n_neg_used = 0;

  std::size_t size() const noexcept { return margins.size(); }

  /// Flags derived from margins: ties never flip, negative margins do.
  static FeatureSigns from_margins(std::vector<double> margins, std::size_t n_pos, std::size_t n_neg) {
    FeatureSigns s;
    s.flips.resize(margins.size());
    s.ties.resize(margins.size());
    for (std::size_t j = 0; j < margins.size(); ++j) {
      s.ties[j] = std::abs(margins[j]) <= kTieTolerance;
      s.flips[j] = !s.ties[j] && margins[j] < 0.0;
    }
    s.margins = std::move(margins);
    s.n_pos_used = n_pos;
    s.n_neg_used = n_neg;
    return s;
  }

  bool all_ties() const {
    for (bool t : ties)
      if (!t) return false;
    return true;
  }
};

inline FeatureSigns estimate_signs(const FeatureMatrix& F, const LabelVector& y) {
  if (y.size() != F.samples())
    throw DimensionError("label count " + std::to_string(y.size()) + " does not match sample count " +
                         std::to_string(F.samples()));
  const std::size_t n_pos = y.positives();
  const std::size_t n_neg = y.negatives();
  if (n_pos == 0) throw InvalidArgument("sign estimation needs at least one positive sample");
  if (n_neg == 0) throw InvalidArgument("sign estimation needs at least one negative sample");

  const std::size_t n = F.features();
  std::vector<double> pos(n, 0.0), neg(n, 0.0);
  for (std::size_t i = 0; i < F.samples(); ++i) {
    auto row = F.row(i);
    auto& acc = y.positive(i) ? pos : neg;
    for (std::size_t j = 0; j < n; ++j) acc[j] += row[j];
  }
  std::vector<double> margins(n);
  for (std::size_t j = 0; j < n; ++j)
    margins[j] = pos[j] / static_cast<double>(n_pos) - neg[j] / static_cast<double>(n_neg);
  return FeatureSigns::from_margins(std::move(margins), n_pos, n_neg);
}

inline FeatureMatrix apply_flips(const FeatureMatrix& F, const FeatureSigns& signs) {
  return apply_flips(F, signs.flips);
}

/// Fraction of features whose flip flags coincide.
inline double sign_accuracy(const FeatureSigns& estimated, const FeatureSigns& reference) {
  if (estimated.size() != reference.size())
    throw DimensionError("sign vectors differ in length: " + std::to_string(estimated.size()) + " vs " +
                         std::to_string(reference.size()));
  if (estimated.size() == 0) return 1.0;
  std::size_t agree = 0;
  for (std::size_t j = 0; j < estimated.size(); ++j) agree += estimated.flips[j] == reference.flips[j] ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(estimated.size());
}

/// C x C agreement fractions between per-class sign sets; symmetric with unit
/// diagonal.
inline std::vector<std::vector<double>> sign_agreement_matrix(const std::vector<FeatureSigns>& per_class) {
  if (per_class.size() < 2) throw InvalidArgument("sign agreement needs at least two classes");
  const std::size_t C = per_class.size();
  std::vector<std::vector<double>> out(C, std::vector<double>(C, 1.0));
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = a + 1; b < C; ++b) out[a][b] = out[b][a] = sign_accuracy(per_class[a], per_class[b]);
  return out;
}

// ---------------------------------------------------------------------------
// Signs file: one `name,margin,flip,tie` line per feature. Files holding
// several classes start each block with a `class <name>` line.

struct NamedSigns {
  std::string class_name;
  FeatureSigns signs;
};

inline std::string format_signs(const std::vector<NamedSigns>& blocks, const std::vector<std::string>& feature_names) {
  std::string out;
  for (const auto& block : blocks) {
    if (block.signs.size() != feature_names.size()) throw DimensionError("signs do not match feature names");
    out += "class " + block.class_name + "\n";
    for (std::size_t j = 0; j < feature_names.size(); ++j) {
      out += feature_names[j];
      out += ',';
      out += io::format_double(block.signs.margins[j]);
      out += block.signs.flips[j] ? ",1" : ",0";
      out += block.signs.ties[j] ? ",1\n" : ",0\n";
    }
  }
  return out;
}

/// Inverse of format_signs. A file without `class` lines yields one block
/// named "positive". Returns feature names through `names_out` (taken from
/// the first block; later blocks must agree).
inline std::vector<NamedSigns> parse_signs(std::string_view contents, std::vector<std::string>* names_out = nullptr) {
  std::vector<NamedSigns> blocks;
  std::vector<std::string> names;
  std::vector<std::string> current_names;
  auto close_block = [&](std::size_t offset) {
    if (blocks.empty()) return;
    auto& s = blocks.back().signs;
    if (s.size() == 0) throw ParseError("class block '" + blocks.back().class_name + "' has no features", 0, 0, offset);
    if (names.empty())
      names = current_names;
    else if (current_names != names)
      throw ParseError("class block '" + blocks.back().class_name + "' lists different features", 0, 0, offset);
    current_names.clear();
  };
  const auto lines = io::split_lines(contents);
  for (std::size_t l = 0; l < lines.size(); ++l) {
    const auto text = io::trim(lines[l].text);
    if (text.empty() || text.front() == '#') continue;
    if (text.rfind("class ", 0) == 0) {
      close_block(lines[l].offset);
      blocks.push_back({std::string(io::trim(text.substr(6))), {}});
      continue;
    }
    if (blocks.empty()) blocks.push_back({"positive", {}});
    const auto fields = io::split_fields(text);
    double margin = 0.0;
    if (fields.size() != 4 || !io::parse_double(fields[1], margin) || !std::isfinite(margin) ||
        (fields[2] != "0" && fields[2] != "1") || (fields[3] != "0" && fields[3] != "1"))
      throw ParseError("malformed signs line " + std::to_string(l + 1) + ", expected name,margin,flip,tie", l + 1, 0,
                       lines[l].offset);
    auto& s = blocks.back().signs;
    current_names.emplace_back(fields[0]);
    s.margins.push_back(margin);
    s.flips.push_back(fields[2] == "1");
    s.ties.push_back(fields[3] == "1");
  }
  if (blocks.empty()) throw ParseError("signs file is empty", 0, 0, 0);
  close_block(contents.size());
  if (names_out) *names_out = names;
  return blocks;
}

}  // namespace ses
