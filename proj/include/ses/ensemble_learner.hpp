#pragma once

// Supervised and almost-unsupervised training of sparse equal-weight
// ensembles of signed features, one-vs-all multiclass wrapping, prediction
// and the line-oriented model file.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ses/error.hpp"
#include "ses/feature_store.hpp"
#include "ses/io.hpp"
#include "ses/parallel.hpp"
#include "ses/polytope_solver.hpp"
#include "ses/sign_estimator.hpp"

namespace ses {

enum class TrainingMode { Supervised, Unsupervised };

inline std::string_view to_string(TrainingMode mode) {
  return mode == TrainingMode::Supervised ? "supervised" : "unsupervised";
}

/// One binary component: the selected signed features and their weights.
struct EnsembleModel {
  std::string class_name = "positive";
  TrainingMode mode = TrainingMode::Supervised;
  std::size_t n_features = 0;
  std::size_t k = 1;
  std::vector<std::size_t> selected;  // strictly increasing
  std::vector<bool> flips;            // parallel to `selected`
  std::vector<double> weights;        // parallel to `selected`
  double theta = 0.5;
  bool degenerate = false;            // trained from signs that were all ties

  void validate() const {
    if (selected.empty()) throw InvalidArgument("model '" + class_name + "' selects no features");
    if (flips.size() != selected.size() || weights.size() != selected.size())
      throw DimensionError("model '" + class_name + "' has mismatched selection arrays");
    if (k < 1 || k > n_features) throw InvalidArgument("model '" + class_name + "' has k outside [1, n]");
    for (std::size_t i = 0; i < selected.size(); ++i) {
      if (selected[i] >= n_features) throw DimensionError("model '" + class_name + "' selects a feature beyond n");
      if (i > 0 && selected[i] <= selected[i - 1])
        throw InvalidArgument("model '" + class_name + "' selection is not strictly increasing");
    }
    // renormalizing after dropped interior mass can lift a weight past 1/k,
    // so only (0,1] is enforced here
    double sum = 0.0;
    for (double w : weights) {
      if (!(w > 0.0) || w > 1.0 + 1e-12) throw InvalidArgument("model '" + class_name + "' has a weight outside (0, 1]");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw InvalidArgument("model '" + class_name + "' weights do not sum to 1");
    if (!(theta > 0.0 && theta < 1.0)) throw InvalidArgument("model '" + class_name + "' threshold outside (0,1)");
  }

  /// Selection embedded as a dense length-n weight vector.
  Eigen::VectorXd dense_weights() const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_features));
    for (std::size_t i = 0; i < selected.size(); ++i) w(static_cast<Eigen::Index>(selected[i])) = weights[i];
    return w;
  }

  bool operator==(const EnsembleModel&) const = default;
};

struct MulticlassModel {
  std::vector<EnsembleModel> models;

  std::size_t n_features() const { return models.empty() ? 0 : models.front().n_features; }

  void validate() const {
    if (models.empty()) throw InvalidArgument("multiclass model has no components");
    std::set<std::string> names;
    for (const auto& m : models) {
      m.validate();
      if (m.n_features != models.front().n_features)
        throw DimensionError("multiclass components disagree on the feature count");
      if (!names.insert(m.class_name).second) throw InvalidArgument("duplicate class '" + m.class_name + "'");
    }
  }

  bool operator==(const MulticlassModel&) const = default;
};

// ---------------------------------------------------------------------------
// Selection and prediction

struct Selection {
  std::vector<std::size_t> indices;
  std::vector<double> weights;
};

/// Coordinates above 1/(2k) are selected and renormalized to sum 1. When
/// exactly k coordinates survive and all sit at 1/k (to 1e-9) the weights are
/// set to exactly 1/k.
inline Selection extract_selection(const WeightVector& w, std::size_t k) {
  if (!w.feasible(k)) throw InvalidArgument("selection requires a feasible weight vector");
  const double cap = 1.0 / static_cast<double>(k);
  const double threshold = 0.5 * cap;
  Selection out;
  double sum = 0.0;
  bool uniform = true;
  for (std::size_t j = 0; j < w.size(); ++j)
    if (w[j] > threshold) {
      out.indices.push_back(j);
      out.weights.push_back(w[j]);
      sum += w[j];
      uniform = uniform && std::abs(w[j] - cap) <= 1e-9;
    }
  if (out.indices.empty()) throw SolverError("no coordinate exceeds 1/(2k); the solve did not produce a selection");
  if (uniform && out.indices.size() == k) {
    std::fill(out.weights.begin(), out.weights.end(), cap);
  } else {
    for (double& v : out.weights) v /= sum;
  }
  return out;
}

/// The k largest positive coordinates (ties to the smaller index),
/// renormalized. Used only when a caller opts out of the empty-selection
/// error.
inline Selection extract_top_weights(const WeightVector& w, std::size_t k) {
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  Selection out;
  for (std::size_t t = 0; t < std::min(k, order.size()) && w[order[t]] > 0.0; ++t) out.indices.push_back(order[t]);
  if (out.indices.empty()) throw SolverError("weight vector has no positive coordinate");
  std::sort(out.indices.begin(), out.indices.end());
  double sum = 0.0;
  for (auto j : out.indices) sum += w[j];
  for (auto j : out.indices) out.weights.push_back(w[j] / sum);
  return out;
}

/// Weighted average of the selected signed features; flipped features
/// contribute 1 - f.
inline double predict_score(const EnsembleModel& model, std::span<const double> f) {
  if (f.size() != model.n_features)
    throw DimensionError("feature row has " + std::to_string(f.size()) + " entries, model expects " +
                         std::to_string(model.n_features));
  double score = 0.0;
  for (std::size_t i = 0; i < model.selected.size(); ++i) {
    const double v = f[model.selected[i]];
    if (!(v >= 0.0 && v <= 1.0))
      throw RangeError("feature " + std::to_string(model.selected[i]) + " value outside [0,1]", 0,
                       model.selected[i] + 1);
    score += model.weights[i] * (model.flips[i] ? 1.0 - v : v);
  }
  return score;
}

inline bool predict_binary(const EnsembleModel& model, std::span<const double> f) {
  return predict_score(model, f) >= model.theta;
}

/// Argmax of per-class scores; equal scores resolve to the lexicographically
/// smallest class name.
inline const std::string& predict_multiclass(const MulticlassModel& models, std::span<const double> f) {
  if (models.models.empty()) throw InvalidArgument("multiclass model has no components");
  const EnsembleModel* best = nullptr;
  double best_score = 0.0;
  for (const auto& m : models.models) {
    const double s = predict_score(m, f);
    if (!best || s > best_score || (s == best_score && m.class_name < best->class_name)) {
      best = &m;
      best_score = s;
    }
  }
  return best->class_name;
}

/// Fraction of rows whose predicted class matches `truth`.
inline double multiclass_accuracy(const MulticlassModel& models, const FeatureMatrix& F,
                                  std::span<const std::string> truth) {
  if (truth.size() != F.samples()) throw DimensionError("label count does not match sample count");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < F.samples(); ++i) hits += predict_multiclass(models, F.row(i)) == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(F.samples());
}

inline double binary_accuracy(const EnsembleModel& model, const FeatureMatrix& F, const LabelVector& y) {
  if (y.size() != F.samples()) throw DimensionError("label count does not match sample count");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < F.samples(); ++i) hits += predict_binary(model, F.row(i)) == y.positive(i) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(F.samples());
}

// ---------------------------------------------------------------------------
// Training

enum class InitPolicy { Uniform, RandomVertex };

struct TrainOptions {
  std::size_t k = 1;
  IpfpOptions solver;
  InitPolicy init = InitPolicy::Uniform;
  std::uint64_t seed = 0;   // random-vertex initialization only
  double theta = 0.5;
  bool calibrate_theta = false;
  bool fallback_selection = false;  // on an empty 1/(2k) selection keep the k largest weights
};

/// Threshold maximizing accuracy of `scores` against `y`; candidates are
/// midpoints between consecutive distinct scores plus 0.5. Ties prefer the
/// candidate closest to 0.5.
inline double calibrate_threshold(std::span<const double> scores, const LabelVector& y) {
  if (scores.size() != y.size()) throw DimensionError("score count does not match label count");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> candidates{0.5};
  for (std::size_t i = 1; i < sorted.size(); ++i) candidates.push_back(0.5 * (sorted[i - 1] + sorted[i]));
  double best = 0.5;
  std::size_t best_hits = 0;
  bool first = true;
  for (double c : candidates) {
    if (!(c > 0.0 && c < 1.0)) continue;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) hits += (scores[i] >= c) == y.positive(i) ? 1 : 0;
    if (first || hits > best_hits || (hits == best_hits && std::abs(c - 0.5) < std::abs(best - 0.5))) {
      best = c;
      best_hits = hits;
      first = false;
    }
  }
  return best;
}

namespace detail {

inline WeightVector start_point(std::size_t n, const TrainOptions& options) {
  if (options.init == InitPolicy::RandomVertex) {
    std::mt19937_64 rng(options.seed);
    return random_vertex(n, options.k, rng);
  }
  return default_start(n);
}

inline EnsembleModel model_from_solution(const WeightVector& w, const std::vector<bool>& flips,
                                         const TrainOptions& options, TrainingMode mode, std::string class_name) {
  Selection sel;
  try {
    sel = extract_selection(w, options.k);
  } catch (const SolverError&) {
    if (!options.fallback_selection) throw;
    sel = extract_top_weights(w, options.k);
  }
  EnsembleModel m;
  m.class_name = std::move(class_name);
  m.mode = mode;
  m.n_features = w.size();
  m.k = options.k;
  m.selected = std::move(sel.indices);
  m.weights = std::move(sel.weights);
  m.flips.reserve(m.selected.size());
  for (auto j : m.selected) m.flips.push_back(flips[j]);
  m.theta = options.theta;
  return m;
}

inline void check_budget(std::size_t k, std::size_t n) {
  if (k < 1 || k > n)
    throw InvalidArgument("budget k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
}

}  // namespace detail

/// Solves the supervised or unsupervised program on prepared (already
/// flipped) terms and wraps the selection. Both training modes go through
/// this single call.
inline SolveResult solve_terms(const QuadraticTerms& terms, TrainingMode mode, const TrainOptions& options) {
  const SolverProblem problem(terms, options.k,
                              mode == TrainingMode::Supervised ? Sense::ConvexMin : Sense::ConcaveMax);
  return ipfp_solve(problem, detail::start_point(terms.features(), options), options.solver);
}

inline void calibrate(EnsembleModel& model, const FeatureMatrix& F, const LabelVector& y) {
  std::vector<double> scores(F.samples());
  for (std::size_t i = 0; i < F.samples(); ++i) scores[i] = predict_score(model, F.row(i));
  model.theta = calibrate_threshold(scores, y);
}

/// Least-squares fit of flipped features to targets 1/0 over the capped
/// simplex. `trace_out` receives the solver trace when given.
inline EnsembleModel train_supervised(const FeatureMatrix& F, const LabelVector& y, const TrainOptions& options,
                                      SolveTrace* trace_out = nullptr, std::string class_name = "positive") {
  detail::check_budget(options.k, F.features());
  const auto signs = estimate_signs(F, y);
  const auto flipped = apply_flips(F, signs);
  const auto terms = build_terms(flipped, y);
  auto solved = solve_terms(terms, TrainingMode::Supervised, options);
  if (trace_out) *trace_out = solved.trace;
  auto model = detail::model_from_solution(solved.w, signs.flips, options, TrainingMode::Supervised,
                                           std::move(class_name));
  if (options.calibrate_theta) calibrate(model, F, y);
  return model;
}

/// Maximizes w'Mw over the flipped unlabeled pool; the only supervision is
/// the sign of each feature.
inline EnsembleModel train_unsupervised(const FeatureMatrix& pool, const FeatureSigns& signs,
                                        const TrainOptions& options, SolveTrace* trace_out = nullptr,
                                        std::string class_name = "positive") {
  detail::check_budget(options.k, pool.features());
  if (signs.size() != pool.features())
    throw DimensionError("sign count " + std::to_string(signs.size()) + " does not match feature count " +
                         std::to_string(pool.features()));
  const auto terms = build_terms(apply_flips(pool, signs));
  auto solved = solve_terms(terms, TrainingMode::Unsupervised, options);
  if (trace_out) *trace_out = solved.trace;
  auto model = detail::model_from_solution(solved.w, signs.flips, options, TrainingMode::Unsupervised,
                                           std::move(class_name));
  model.degenerate = signs.all_ties();
  return model;
}

/// Every feature at weight 1/n with flips from `signs`.
inline EnsembleModel average_baseline(const FeatureMatrix& F, const FeatureSigns& signs,
                                      std::string class_name = "positive") {
  if (signs.size() != F.features()) throw DimensionError("sign count does not match feature count");
  const std::size_t n = F.features();
  EnsembleModel m;
  m.class_name = std::move(class_name);
  m.n_features = n;
  m.k = n;
  m.selected.resize(n);
  std::iota(m.selected.begin(), m.selected.end(), std::size_t{0});
  m.flips = signs.flips;
  m.weights.assign(n, 1.0 / static_cast<double>(n));
  return m;
}

/// One-vs-all supervised training. The unflipped Gram statistics are shared
/// by all classes; each class derives its flipped terms algebraically.
inline MulticlassModel train_one_vs_all_supervised(const FeatureMatrix& F, std::span<const std::string> classes,
                                                   const TrainOptions& options,
                                                   std::size_t threads = default_thread_count()) {
  detail::check_budget(options.k, F.features());
  if (classes.size() != F.samples()) throw DimensionError("label count does not match sample count");
  std::set<std::string> distinct(classes.begin(), classes.end());
  if (distinct.size() < 2) throw InvalidArgument("one-vs-all training needs at least two classes");
  const std::vector<std::string> names(distinct.begin(), distinct.end());
  const auto stats = gram_statistics(F);

  MulticlassModel out;
  out.models.resize(names.size());
  parallel_for(names.size(), threads, [&](std::size_t c) {
    const auto y = LabelVector::one_vs_all(classes, names[c]);
    const auto signs = estimate_signs(F, y);
    const auto terms = flipped_terms(stats, signs.flips, label_moments(F, y), y.positives());
    auto solved = solve_terms(terms, TrainingMode::Supervised, options);
    auto model = detail::model_from_solution(solved.w, signs.flips, options, TrainingMode::Supervised, names[c]);
    if (options.calibrate_theta) calibrate(model, F, y);
    out.models[c] = std::move(model);
  });
  return out;
}

/// One-vs-all unsupervised training from per-class signs over a shared pool.
/// When `calibration` is given (the labeled sign-estimation set), thresholds
/// are calibrated on it if requested.
inline MulticlassModel train_one_vs_all_unsupervised(
    const FeatureMatrix& pool, const std::vector<NamedSigns>& signs, const TrainOptions& options,
    std::size_t threads = default_thread_count(),
    const std::optional<std::pair<const FeatureMatrix*, std::span<const std::string>>>& calibration = std::nullopt) {
  detail::check_budget(options.k, pool.features());
  if (signs.empty()) throw InvalidArgument("unsupervised training needs at least one class of signs");
  for (const auto& s : signs)
    if (s.signs.size() != pool.features())
      throw DimensionError("signs for class '" + s.class_name + "' do not match the feature count");
  const auto stats = gram_statistics(pool);

  MulticlassModel out;
  out.models.resize(signs.size());
  parallel_for(signs.size(), threads, [&](std::size_t c) {
    const auto terms = flipped_terms(stats, signs[c].signs.flips);
    auto solved = solve_terms(terms, TrainingMode::Unsupervised, options);
    auto model = detail::model_from_solution(solved.w, signs[c].signs.flips, options, TrainingMode::Unsupervised,
                                             signs[c].class_name);
    model.degenerate = signs[c].signs.all_ties();
    if (options.calibrate_theta && calibration)
      calibrate(model, *calibration->first, LabelVector::one_vs_all(calibration->second, signs[c].class_name));
    out.models[c] = std::move(model);
  });
  std::sort(out.models.begin(), out.models.end(),
            [](const EnsembleModel& a, const EnsembleModel& b) { return a.class_name < b.class_name; });
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Model file
//
//   version 1
//   class <name>
//   mode <supervised|unsupervised>
//   n <int>
//   k <int>
//   theta <float>
//   [degenerate 1]
//   selected <count>
//   feature <index> <weight> <flip>     (count lines)
//
// Multiclass files separate blocks with a `---` line.

inline constexpr int kModelVersion = 1;

inline std::string format_model(const MulticlassModel& model) {
  model.validate();
  std::string out;
  for (std::size_t b = 0; b < model.models.size(); ++b) {
    const auto& m = model.models[b];
    if (b > 0) out += "---\n";
    out += "version " + std::to_string(kModelVersion) + "\n";
    out += "class " + m.class_name + "\n";
    out += "mode " + std::string(to_string(m.mode)) + "\n";
    out += "n " + std::to_string(m.n_features) + "\n";
    out += "k " + std::to_string(m.k) + "\n";
    out += "theta " + io::format_double(m.theta) + "\n";
    if (m.degenerate) out += "degenerate 1\n";
    out += "selected " + std::to_string(m.selected.size()) + "\n";
    for (std::size_t i = 0; i < m.selected.size(); ++i)
      out += "feature " + std::to_string(m.selected[i]) + " " + io::format_double(m.weights[i]) +
             (m.flips[i] ? " 1\n" : " 0\n");
  }
  return out;
}

inline std::string format_model(const EnsembleModel& model) { return format_model(MulticlassModel{{model}}); }

inline MulticlassModel parse_model(std::string_view contents) {
  if (contents.empty()) throw ParseError("model file is empty", 0, 0, 0);
  if (contents.back() != '\n')
    throw ParseError("model file is truncated (no final newline) at byte " + std::to_string(contents.size()), 0, 0,
                     contents.size());
  const auto lines = io::split_lines(contents);
  MulticlassModel out;
  std::size_t l = 0;

  auto fail = [&](const std::string& what, std::size_t at) -> ParseError {
    const std::size_t offset = at < lines.size() ? lines[at].offset : contents.size();
    return ParseError(what + " at byte " + std::to_string(offset), at + 1, 0, offset);
  };
  auto expect = [&](std::string_view key) -> std::string_view {
    if (l >= lines.size()) throw fail("unexpected end of model file, expected '" + std::string(key) + "'", l);
    const auto text = io::trim(lines[l].text);
    if (text.size() <= key.size() || text.substr(0, key.size()) != key || text[key.size()] != ' ')
      throw fail("expected '" + std::string(key) + "'", l);
    ++l;
    return io::trim(text.substr(key.size() + 1));
  };
  auto expect_size = [&](std::string_view key) {
    std::size_t v = 0;
    const auto text = expect(key);
    if (!io::parse_size(text, v)) throw fail("malformed integer for '" + std::string(key) + "'", l - 1);
    return v;
  };

  while (true) {
    EnsembleModel m;
    const auto version = expect_size("version");
    if (version != static_cast<std::size_t>(kModelVersion))
      throw fail("unsupported model version " + std::to_string(version), l - 1);
    m.class_name = std::string(expect("class"));
    const auto mode = expect("mode");
    if (mode == "supervised")
      m.mode = TrainingMode::Supervised;
    else if (mode == "unsupervised")
      m.mode = TrainingMode::Unsupervised;
    else
      throw fail("unknown mode '" + std::string(mode) + "'", l - 1);
    m.n_features = expect_size("n");
    m.k = expect_size("k");
    if (!io::parse_double(expect("theta"), m.theta)) throw fail("malformed theta", l - 1);
    if (l < lines.size() && io::trim(lines[l].text).rfind("degenerate ", 0) == 0) {
      m.degenerate = expect("degenerate") == "1";
    }
    const auto count = expect_size("selected");
    for (std::size_t i = 0; i < count; ++i) {
      const auto fields = io::split_fields(expect("feature"), ' ');
      std::size_t idx = 0;
      double w = 0.0;
      if (fields.size() != 3 || !io::parse_size(fields[0], idx) || !io::parse_double(fields[1], w) ||
          (fields[2] != "0" && fields[2] != "1"))
        throw fail("malformed feature line", l - 1);
      m.selected.push_back(idx);
      m.weights.push_back(w);
      m.flips.push_back(fields[2] == "1");
    }
    try {
      m.validate();
    } catch (const Error& e) {
      throw fail(e.what(), l - 1);
    }
    out.models.push_back(std::move(m));
    while (l < lines.size() && io::trim(lines[l].text).empty()) ++l;
    if (l >= lines.size()) break;
    if (io::trim(lines[l].text) != "---") throw fail("expected '---' between model blocks", l);
    ++l;
  }
  try {
    out.validate();
  } catch (const Error& e) {
    throw ParseError(e.what(), 0, 0, contents.size());
  }
  return out;
}

inline void save_model(const std::filesystem::path& path, const MulticlassModel& model) {
  io::write_file_atomic(path, format_model(model));
}

inline void save_model(const std::filesystem::path& path, const EnsembleModel& model) {
  io::write_file_atomic(path, format_model(model));
}

inline MulticlassModel load_model(const std::filesystem::path& path) { return parse_model(io::read_file(path)); }

}  // namespace ses
