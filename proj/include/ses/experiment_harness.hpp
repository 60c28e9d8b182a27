#pragma once

// Synthetic signed-feature pools, randomized trials and CSV reports for the
// desk-scale studies: sensitivity to k, supervised vs unsupervised learning,
// selection frequency, error decay with pool size, sign estimation accuracy,
// convergence and runtime scaling.
//
// Trial i of an experiment with base seed s draws from
// std::mt19937_64(trial_seed(s, i)); trial_seed is a splitmix64 mix and is
// stable across releases. Trials run concurrently and write only their own
// slot, so reports do not depend on the thread count.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ses/ensemble_learner.hpp"
#include "ses/error.hpp"
#include "ses/feature_store.hpp"
#include "ses/io.hpp"
#include "ses/parallel.hpp"
#include "ses/polytope_solver.hpp"
#include "ses/sign_estimator.hpp"

namespace ses {

inline constexpr std::string_view kToolkitVersion = "1.0.0";

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t trial_seed(std::uint64_t base_seed, std::uint64_t trial_index) {
  return splitmix64(base_seed ^ splitmix64(trial_index + 0x5E5ull));
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::size_t n_classes = 2;
  std::size_t n_samples_per_class = 100;
  std::size_t informative_features_per_class = 5;
  std::size_t redundant_copies = 0;  // noisy duplicates per informative feature
  std::size_t noise_features = 5;
  double mu_p = 0.7;
  double mu_n = 0.3;
  double sigma_p = 0.2;
  double sigma_n = 0.2;
  double sign_noise_rate = 0.0;    // flip bits inverted in the returned hints
  double inverted_fraction = 0.0;  // informative columns stored as 1 - f
  std::uint64_t seed = 1;

  std::size_t features_per_class() const { return informative_features_per_class * (1 + redundant_copies); }
  std::size_t n_features() const { return n_classes * features_per_class() + noise_features; }
  std::size_t n_samples() const { return n_classes * n_samples_per_class; }

  void validate() const {
    if (n_classes < 2) throw InvalidArgument("synthetic data needs at least two classes");
    if (n_samples_per_class < 1) throw InvalidArgument("synthetic data needs samples in every class");
    if (n_features() < 1) throw InvalidArgument("synthetic data needs at least one feature");
    if (!(0.0 <= mu_n && mu_n < mu_p && mu_p <= 1.0)) throw InvalidArgument("means must satisfy 0 <= mu_n < mu_p <= 1");
    if (!(sigma_p >= 0.0 && sigma_n >= 0.0)) throw InvalidArgument("standard deviations must be non-negative");
    if (!(sign_noise_rate >= 0.0 && sign_noise_rate <= 1.0)) throw InvalidArgument("sign noise rate must lie in [0,1]");
    if (!(inverted_fraction >= 0.0 && inverted_fraction <= 1.0))
      throw InvalidArgument("inverted fraction must lie in [0,1]");
  }

  std::vector<std::pair<std::string, std::string>> describe() const {
    return {{"n_classes", std::to_string(n_classes)},
            {"n_samples_per_class", std::to_string(n_samples_per_class)},
            {"informative_features_per_class", std::to_string(informative_features_per_class)},
            {"redundant_copies", std::to_string(redundant_copies)},
            {"noise_features", std::to_string(noise_features)},
            {"mu_p", io::format_double(mu_p)},
            {"mu_n", io::format_double(mu_n)},
            {"sigma_p", io::format_double(sigma_p)},
            {"sigma_n", io::format_double(sigma_n)},
            {"sign_noise_rate", io::format_double(sign_noise_rate)},
            {"inverted_fraction", io::format_double(inverted_fraction)},
            {"seed", std::to_string(seed)}};
  }
};

/// Mean of clip(X, 0, 1) for X ~ N(mu, sigma^2).
inline double clipped_gaussian_mean(double mu, double sigma) {
  if (sigma <= 0.0) return std::clamp(mu, 0.0, 1.0);
  const double a = (0.0 - mu) / sigma;
  const double b = (1.0 - mu) / sigma;
  auto Phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  auto phi = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  return mu * (Phi(b) - Phi(a)) + sigma * (phi(a) - phi(b)) + (1.0 - Phi(b));
}

inline std::string class_label(std::size_t c) { return "c" + std::to_string(c); }

struct SyntheticData {
  SyntheticSpec spec;
  FeatureMatrix features;
  std::vector<std::string> classes;        // per sample
  std::vector<std::string> class_names;    // c0, c1, ... (lexicographic order of labels may differ)
  std::vector<std::size_t> class_index;    // per sample
  std::vector<std::size_t> feature_owner;  // owning class per feature, n_classes for noise
  std::vector<bool> inverted;              // stored as 1 - f
  std::vector<bool> redundant;             // noisy copy of another column
  std::vector<NamedSigns> truth_signs;     // analytic population signs per class
  std::vector<NamedSigns> sign_hints;      // truth with sign noise applied
  double empirical_mu_p = 0.0;  // mean of stored informative source columns on their own class
  double empirical_mu_n = 0.0;  // ... and on the other classes (inverted columns un-inverted)

  bool informative_for(std::size_t feature, std::size_t c) const { return feature_owner[feature] == c; }
  bool is_noise(std::size_t feature) const { return feature_owner[feature] == spec.n_classes; }
  LabelVector labels_for(std::size_t c) const { return LabelVector::one_vs_all(classes, class_names[c]); }

  std::vector<std::size_t> rows_of_class(std::size_t c) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < class_index.size(); ++i)
      if (class_index[i] == c) out.push_back(i);
    return out;
  }
};

/// Informative features of class c follow clipped N(mu_p, sigma_p^2) on class
/// c and clipped N(mu_n, sigma_n^2) elsewhere; redundant copies add clipped
/// N(0, 0.01) noise to their source column; noise features are U[0,1]. Sign
/// noise touches only the returned hints, never the data.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const std::size_t C = spec.n_classes;
  const std::size_t N = spec.n_samples();
  const std::size_t n = spec.n_features();
  const std::size_t per_class = spec.features_per_class();
  const std::size_t m = spec.informative_features_per_class;
  constexpr double kCopyNoiseSd = 0.1;  // variance 0.01

  SyntheticData data;
  data.spec = spec;
  for (std::size_t c = 0; c < C; ++c) data.class_names.push_back(class_label(c));
  data.class_index.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    data.class_index[i] = i % C;
    data.classes.push_back(data.class_names[i % C]);
  }
  data.feature_owner.assign(n, C);
  data.inverted.assign(n, false);
  data.redundant.assign(n, false);

  RowMatrix X(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(n));
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t base = c * per_class;
    for (std::size_t f = 0; f < m; ++f) {
      const std::size_t j = base + f;
      const bool inv = uniform(rng) < spec.inverted_fraction;
      data.feature_owner[j] = c;
      data.inverted[j] = inv;
      for (std::size_t i = 0; i < N; ++i) {
        const bool pos = data.class_index[i] == c;
        double v = pos ? spec.mu_p + spec.sigma_p * normal(rng) : spec.mu_n + spec.sigma_n * normal(rng);
        v = std::clamp(v, 0.0, 1.0);
        X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = inv ? 1.0 - v : v;
      }
      for (std::size_t r = 0; r < spec.redundant_copies; ++r) {
        const std::size_t jr = base + m + f * spec.redundant_copies + r;
        data.feature_owner[jr] = c;
        data.inverted[jr] = inv;
        data.redundant[jr] = true;
        for (std::size_t i = 0; i < N; ++i) {
          const double src = X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
          X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jr)) =
              std::clamp(src + kCopyNoiseSd * normal(rng), 0.0, 1.0);
        }
      }
    }
  }
  for (std::size_t j = C * per_class; j < n; ++j)
    for (std::size_t i = 0; i < N; ++i) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = uniform(rng);

  {
    double sp = 0.0, sn = 0.0;
    std::size_t np = 0, nn = 0;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t f = 0; f < m; ++f) {
        const auto j = static_cast<Eigen::Index>(c * per_class + f);
        for (std::size_t i = 0; i < N; ++i) {
          double v = X(static_cast<Eigen::Index>(i), j);
          if (data.inverted[static_cast<std::size_t>(j)]) v = 1.0 - v;
          if (data.class_index[i] == c) {
            sp += v;
            ++np;
          } else {
            sn += v;
            ++nn;
          }
        }
      }
    data.empirical_mu_p = np ? sp / static_cast<double>(np) : 0.0;
    data.empirical_mu_n = nn ? sn / static_cast<double>(nn) : 0.0;
  }

  std::vector<std::string> names(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (j >= C * per_class)
      names[j] = "noise" + std::to_string(j - C * per_class);
    else
      names[j] = "f" + std::to_string(j);
  }
  std::vector<std::string> ids(N);
  for (std::size_t i = 0; i < N; ++i) ids[i] = "s" + std::to_string(i);
  data.features = FeatureMatrix(std::move(X), std::move(names), std::move(ids));

  // population margins of the clipped generator
  const double mp = clipped_gaussian_mean(spec.mu_p, spec.sigma_p);
  const double mn = clipped_gaussian_mean(spec.mu_n, spec.sigma_n);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> margins(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t owner = data.feature_owner[j];
      if (owner == C) continue;
      double margin = owner == c ? mp - mn : (mn - mp) / static_cast<double>(C - 1);
      margins[j] = data.inverted[j] ? -margin : margin;
    }
    const std::size_t n_pos = spec.n_samples_per_class;
    data.truth_signs.push_back({data.class_names[c], FeatureSigns::from_margins(std::move(margins), n_pos, N - n_pos)});
  }

  const auto noisy = static_cast<std::size_t>(std::llround(spec.sign_noise_rate * static_cast<double>(n)));
  for (std::size_t c = 0; c < C; ++c) {
    NamedSigns hint = data.truth_signs[c];
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t t = 0; t < noisy; ++t) hint.signs.flips[idx[t]] = !hint.signs.flips[idx[t]];
    data.sign_hints.push_back(std::move(hint));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Reports

/// Per-run values of one point on one curve.
struct SeriesPoint {
  std::string curve;
  double x = 0.0;
  std::vector<double> values;

  double mean() const {
    if (values.empty()) return 0.0;
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }
  /// Sample standard deviation (n - 1 denominator); 0 for a single run.
  double stddev() const {
    if (values.size() < 2) return 0.0;
    const double mu = mean();
    double s = 0.0;
    for (double v : values) s += (v - mu) * (v - mu);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

/// One trained model in one trial.
struct RunRecord {
  std::string curve;
  double x = 0.0;
  std::size_t run = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double sign_accuracy = 0.0;
  std::size_t iterations = 0;
  double final_objective = 0.0;
  std::vector<std::size_t> selected;  // union over classes for multiclass models
};

struct TimingRecord {
  std::string label;
  double x = 0.0;
  std::size_t run = 0;
  double build_seconds = 0.0;
  double solve_seconds = 0.0;
};

struct TrialReport {
  std::string name;
  std::vector<std::pair<std::string, std::string>> parameters;
  std::deque<SeriesPoint> points;  // stable references across point_or_add
  std::vector<RunRecord> runs;
  std::vector<TimingRecord> timings;

  const SeriesPoint& point(const std::string& curve, double x) const {
    for (const auto& p : points)
      if (p.curve == curve && p.x == x) return p;
    throw InvalidArgument("report has no point " + curve + "@" + io::format_double(x));
  }
  SeriesPoint& point_or_add(const std::string& curve, double x) {
    for (auto& p : points)
      if (p.curve == curve && p.x == x) return p;
    points.push_back({curve, x, {}});
    return points.back();
  }
  std::vector<const SeriesPoint*> curve(const std::string& name) const {
    std::vector<const SeriesPoint*> out;
    for (const auto& p : points)
      if (p.curve == name) out.push_back(&p);
    return out;
  }
};

/// `curve,x,y,stddev,runs` with y the mean over runs.
inline std::string format_curves(const TrialReport& report) {
  std::string out = "curve,x,y,stddev,runs\n";
  for (const auto& p : report.points)
    out += p.curve + "," + io::format_double(p.x) + "," + io::format_double(p.mean()) + "," +
           io::format_double(p.stddev()) + "," + std::to_string(p.values.size()) + "\n";
  return out;
}

inline std::string format_runs(const TrialReport& report) {
  std::string out = "curve,x,run,seed,accuracy,sign_accuracy,iterations,final_objective,selected\n";
  for (const auto& r : report.runs) {
    std::string sel;
    for (std::size_t i = 0; i < r.selected.size(); ++i) sel += (i ? " " : "") + std::to_string(r.selected[i]);
    out += r.curve + "," + io::format_double(r.x) + "," + std::to_string(r.run) + "," + std::to_string(r.seed) + "," +
           io::format_double(r.accuracy) + "," + io::format_double(r.sign_accuracy) + "," +
           std::to_string(r.iterations) + "," + io::format_double(r.final_objective) + "," + sel + "\n";
  }
  return out;
}

inline std::string format_timings(const TrialReport& report) {
  std::string out = "label,x,run,build_seconds,solve_seconds\n";
  for (const auto& t : report.timings)
    out += t.label + "," + io::format_double(t.x) + "," + std::to_string(t.run) + "," +
           io::format_double(t.build_seconds) + "," + io::format_double(t.solve_seconds) + "\n";
  return out;
}

inline std::string format_manifest(const TrialReport& report) {
  std::string out = "toolkit ses " + std::string(kToolkitVersion) + "\n";
  out += "experiment " + report.name + "\n";
  for (const auto& [k, v] : report.parameters) out += k + " " + v + "\n";
  out += "files " + report.name + ".csv " + report.name + "_runs.csv";
  if (!report.timings.empty()) out += " " + report.name + "_timing.csv";
  out += "\n";
  return out;
}

/// Writes `<name>.csv`, `<name>_runs.csv`, `<name>_manifest.txt` and, when
/// timings were taken, `<name>_timing.csv` (wall-clock, not reproducible).
inline void write_report(const std::filesystem::path& dir, const TrialReport& report) {
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / (report.name + ".csv"), format_curves(report));
  io::write_file_atomic(dir / (report.name + "_runs.csv"), format_runs(report));
  io::write_file_atomic(dir / (report.name + "_manifest.txt"), format_manifest(report));
  if (!report.timings.empty()) io::write_file_atomic(dir / (report.name + "_timing.csv"), format_timings(report));
}

// ---------------------------------------------------------------------------
// Shared trial machinery

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// `count` rows of every class drawn without replacement; the remaining rows
/// of each class are returned shuffled in `rest`.
struct StratifiedSplit {
  std::vector<std::vector<std::size_t>> chosen;  // per class
  std::vector<std::vector<std::size_t>> rest;    // per class
};

template <class Rng>
StratifiedSplit stratified_split(const SyntheticData& data, std::size_t count, Rng& rng) {
  StratifiedSplit out;
  for (std::size_t c = 0; c < data.spec.n_classes; ++c) {
    auto rows = data.rows_of_class(c);
    if (rows.size() < count) throw InvalidArgument("class has fewer samples than requested");
    std::shuffle(rows.begin(), rows.end(), rng);
    out.chosen.emplace_back(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(count));
    out.rest.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(count), rows.end());
  }
  return out;
}

inline std::vector<std::size_t> flatten(const std::vector<std::vector<std::size_t>>& parts) {
  std::vector<std::size_t> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::string> labels_of(const SyntheticData& data, const std::vector<std::size_t>& rows) {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(data.classes[r]);
  return out;
}

inline std::vector<std::size_t> selected_union(const MulticlassModel& model) {
  std::set<std::size_t> s;
  for (const auto& m : model.models) s.insert(m.selected.begin(), m.selected.end());
  return {s.begin(), s.end()};
}

inline double mean_sign_accuracy(const std::vector<NamedSigns>& estimated, const std::vector<NamedSigns>& reference) {
  double s = 0.0;
  for (std::size_t c = 0; c < estimated.size(); ++c) s += sign_accuracy(estimated[c].signs, reference[c].signs);
  return s / static_cast<double>(estimated.size());
}

inline std::vector<NamedSigns> estimate_class_signs(const SyntheticData& data, const FeatureMatrix& F,
                                                    const std::vector<std::string>& labels) {
  std::vector<NamedSigns> out;
  for (const auto& name : data.class_names)
    out.push_back({name, estimate_signs(F, LabelVector::one_vs_all(labels, name))});
  return out;
}

inline void require_disjoint(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  if (!common.empty()) throw Error("internal error: test rows leaked into training rows");
}

/// Spec means next to the empirical means of trial 0 (clipping shifts them).
inline void append_means(std::vector<std::pair<std::string, std::string>>& params, const SyntheticSpec& spec) {
  SyntheticSpec s = spec;
  s.seed = trial_seed(spec.seed, 0);
  const auto data = generate_synthetic(s);
  params.push_back({"empirical_mu_p_trial0", io::format_double(data.empirical_mu_p)});
  params.push_back({"empirical_mu_n_trial0", io::format_double(data.empirical_mu_n)});
  params.push_back({"clipped_mu_p", io::format_double(clipped_gaussian_mean(spec.mu_p, spec.sigma_p))});
  params.push_back({"clipped_mu_n", io::format_double(clipped_gaussian_mean(spec.mu_n, spec.sigma_n))});
}

}  // namespace detail

struct HarnessOptions {
  std::size_t runs = 30;
  std::size_t threads = default_thread_count();
  IpfpOptions solver;
};

// ---------------------------------------------------------------------------
// Experiments

/// Multiclass test accuracy against k for supervised training on
/// `labeled_per_class` samples per class (rest is the test set), alongside the
/// average-of-all-signed-features baseline.
inline TrialReport sweep_k(const SyntheticSpec& spec, const std::vector<std::size_t>& k_values,
                           std::size_t labeled_per_class, const HarnessOptions& options = {}) {
  spec.validate();
  for (auto k : k_values)
    if (k < 1 || k > spec.n_features()) throw InvalidArgument("k values must lie in [1, n]");
  if (labeled_per_class < 1 || labeled_per_class >= spec.n_samples_per_class)
    throw InvalidArgument("labeled samples per class must leave a test set");

  struct Trial {
    std::vector<double> accuracy;
    std::vector<RunRecord> records;
    double baseline = 0.0;
  };
  std::vector<Trial> trials(options.runs);
  parallel_for(options.runs, options.threads, [&](std::size_t r) {
    SyntheticSpec s = spec;
    s.seed = trial_seed(spec.seed, r);
    const auto data = generate_synthetic(s);
    std::mt19937_64 rng(splitmix64(s.seed));
    const auto split = detail::stratified_split(data, labeled_per_class, rng);
    const auto train_rows = detail::flatten(split.chosen);
    const auto test_rows = detail::flatten(split.rest);
    detail::require_disjoint(train_rows, test_rows);
    const auto train = data.features.subset(train_rows);
    const auto test = data.features.subset(test_rows);
    const auto train_labels = detail::labels_of(data, train_rows);
    const auto test_labels = detail::labels_of(data, test_rows);
    const auto signs = detail::estimate_class_signs(data, train, train_labels);

    MulticlassModel baseline;
    for (const auto& ns : signs) baseline.models.push_back(average_baseline(train, ns.signs, ns.class_name));
    trials[r].baseline = multiclass_accuracy(baseline, test, test_labels);

    for (auto k : k_values) {
      TrainOptions to;
      to.k = k;
      to.solver = options.solver;
      to.fallback_selection = true;
      const auto model = train_one_vs_all_supervised(train, train_labels, to, 1);
      const double acc = multiclass_accuracy(model, test, test_labels);
      trials[r].accuracy.push_back(acc);
      RunRecord rec;
      rec.curve = "ours";
      rec.x = static_cast<double>(k);
      rec.run = r;
      rec.seed = s.seed;
      rec.accuracy = acc;
      rec.sign_accuracy = detail::mean_sign_accuracy(signs, data.truth_signs);
      rec.selected = detail::selected_union(model);
      trials[r].records.push_back(std::move(rec));
    }
  });

  TrialReport report;
  report.name = "sweep_k";
  report.parameters = spec.describe();
  report.parameters.push_back({"labeled_per_class", std::to_string(labeled_per_class)});
  report.parameters.push_back({"runs", std::to_string(options.runs)});
  detail::append_means(report.parameters, spec);
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    auto& p = report.point_or_add("ours", static_cast<double>(k_values[i]));
    for (const auto& t : trials) p.values.push_back(t.accuracy[i]);
  }
  auto& b = report.point_or_add("average_baseline", static_cast<double>(spec.n_features()));
  for (const auto& t : trials) b.values.push_back(t.baseline);
  for (auto& t : trials)
    for (auto& rec : t.records) report.runs.push_back(std::move(rec));
  return report;
}

struct CompareModesOptions {
  std::size_t k = 10;
  std::size_t pool_per_class = 200;  // size of S_A (and of S_B) per class
  bool use_sign_hints = false;       // take signs from the generator hints instead of estimating
  bool calibrate_theta = false;
};

/// Supervised training on the labeled budget against unsupervised training on
/// the labeled rows plus a fraction of the unlabeled half S_A; both tested on
/// the disjoint half S_B. The spec's n_samples_per_class is overridden to
/// max(budget) + 2 * pool_per_class.
inline TrialReport compare_modes(const SyntheticSpec& spec, const std::vector<std::size_t>& budgets,
                                 const std::vector<double>& pool_fractions, const CompareModesOptions& mode_options,
                                 const HarnessOptions& options = {}) {
  if (budgets.empty() || pool_fractions.empty()) throw InvalidArgument("budgets and pool fractions must be non-empty");
  for (auto b : budgets)
    if (b < 1) throw InvalidArgument("labeled budgets must be at least 1");
  for (double f : pool_fractions)
    if (!(f >= 0.0 && f <= 1.0)) throw InvalidArgument("pool fractions must lie in [0,1]");
  if (mode_options.pool_per_class < 1) throw InvalidArgument("pool too small to split into S_A and S_B");
  const std::size_t max_budget = *std::max_element(budgets.begin(), budgets.end());
  SyntheticSpec base = spec;
  base.n_samples_per_class = max_budget + 2 * mode_options.pool_per_class;
  base.validate();
  if (mode_options.k > base.n_features()) throw InvalidArgument("k exceeds the feature count");

  const std::size_t cells = budgets.size() * pool_fractions.size();
  struct Cell {
    double supervised = 0.0;
    double unsupervised = 0.0;
    double sign_accuracy = 0.0;
    std::vector<std::size_t> sup_selected, unsup_selected;
  };
  std::vector<std::vector<Cell>> trials(options.runs, std::vector<Cell>(cells));
  std::vector<std::uint64_t> seeds(options.runs);

  parallel_for(options.runs, options.threads, [&](std::size_t r) {
    SyntheticSpec s = base;
    s.seed = trial_seed(spec.seed, r);
    seeds[r] = s.seed;
    const auto data = generate_synthetic(s);
    std::mt19937_64 rng(splitmix64(s.seed));
    const auto split = detail::stratified_split(data, max_budget, rng);
    // S_A / S_B: halves of each class's remaining rows
    std::vector<std::vector<std::size_t>> pool_a(s.n_classes), pool_b(s.n_classes);
    for (std::size_t c = 0; c < s.n_classes; ++c) {
      const auto& rest = split.rest[c];
      pool_a[c].assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(mode_options.pool_per_class));
      pool_b[c].assign(rest.begin() + static_cast<std::ptrdiff_t>(mode_options.pool_per_class), rest.end());
    }
    const auto test_rows = detail::flatten(pool_b);
    const auto test = data.features.subset(test_rows);
    const auto test_labels = detail::labels_of(data, test_rows);

    TrainOptions to;
    to.k = mode_options.k;
    to.solver = options.solver;
    to.fallback_selection = true;
    to.calibrate_theta = mode_options.calibrate_theta;

    for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
      std::vector<std::vector<std::size_t>> labeled_parts(s.n_classes);
      for (std::size_t c = 0; c < s.n_classes; ++c)
        labeled_parts[c].assign(split.chosen[c].begin(),
                                split.chosen[c].begin() + static_cast<std::ptrdiff_t>(budgets[bi]));
      const auto labeled_rows = detail::flatten(labeled_parts);
      detail::require_disjoint(labeled_rows, test_rows);
      const auto labeled = data.features.subset(labeled_rows);
      const auto labeled_classes = detail::labels_of(data, labeled_rows);

      const auto estimated = detail::estimate_class_signs(data, labeled, labeled_classes);
      const auto& signs = mode_options.use_sign_hints ? data.sign_hints : estimated;
      const auto supervised = train_one_vs_all_supervised(labeled, labeled_classes, to, 1);
      const double sup_acc = multiclass_accuracy(supervised, test, test_labels);

      for (std::size_t fi = 0; fi < pool_fractions.size(); ++fi) {
        std::vector<std::size_t> pool_rows = labeled_rows;
        for (std::size_t c = 0; c < s.n_classes; ++c) {
          const auto take = static_cast<std::size_t>(
              std::floor(pool_fractions[fi] * static_cast<double>(pool_a[c].size()) + 1e-9));
          pool_rows.insert(pool_rows.end(), pool_a[c].begin(), pool_a[c].begin() + static_cast<std::ptrdiff_t>(take));
        }
        std::sort(pool_rows.begin(), pool_rows.end());
        detail::require_disjoint(pool_rows, test_rows);
        const auto pool = data.features.subset(pool_rows);
        const auto unsupervised = train_one_vs_all_unsupervised(
            pool, signs, to, 1,
            std::make_optional(std::make_pair(&labeled, std::span<const std::string>(labeled_classes))));
        auto& cell = trials[r][bi * pool_fractions.size() + fi];
        cell.supervised = sup_acc;
        cell.unsupervised = multiclass_accuracy(unsupervised, test, test_labels);
        cell.sign_accuracy = detail::mean_sign_accuracy(signs, data.truth_signs);
        cell.sup_selected = detail::selected_union(supervised);
        cell.unsup_selected = detail::selected_union(unsupervised);
      }
    }
  });

  TrialReport report;
  report.name = "compare_modes";
  report.parameters = base.describe();
  report.parameters.push_back({"k", std::to_string(mode_options.k)});
  report.parameters.push_back({"pool_per_class", std::to_string(mode_options.pool_per_class)});
  report.parameters.push_back({"sign_source", mode_options.use_sign_hints ? "hints" : "estimated"});
  report.parameters.push_back({"runs", std::to_string(options.runs)});
  detail::append_means(report.parameters, base);
  for (std::size_t bi = 0; bi < budgets.size(); ++bi)
    for (std::size_t fi = 0; fi < pool_fractions.size(); ++fi) {
      const std::string suffix = "_b" + std::to_string(budgets[bi]);
      const double x = pool_fractions[fi];
      auto& sup = report.point_or_add("supervised" + suffix, x);
      auto& uns = report.point_or_add("unsupervised" + suffix, x);
      auto& del = report.point_or_add("delta" + suffix, x);
      for (std::size_t r = 0; r < options.runs; ++r) {
        const auto& cell = trials[r][bi * pool_fractions.size() + fi];
        sup.values.push_back(cell.supervised);
        uns.values.push_back(cell.unsupervised);
        del.values.push_back(cell.unsupervised - cell.supervised);
      }
    }
  for (std::size_t r = 0; r < options.runs; ++r)
    for (std::size_t bi = 0; bi < budgets.size(); ++bi)
      for (std::size_t fi = 0; fi < pool_fractions.size(); ++fi) {
        const auto& cell = trials[r][bi * pool_fractions.size() + fi];
        const std::string suffix = "_b" + std::to_string(budgets[bi]);
        RunRecord sup{"supervised" + suffix, pool_fractions[fi], r, seeds[r], cell.supervised, cell.sign_accuracy,
                      0, 0.0, cell.sup_selected};
        RunRecord uns{"unsupervised" + suffix, pool_fractions[fi], r, seeds[r], cell.unsupervised,
                      cell.sign_accuracy, 0, 0.0, cell.unsup_selected};
        report.runs.push_back(std::move(sup));
        report.runs.push_back(std::move(uns));
      }
  return report;
}

/// Fraction of runs in which each feature is selected by supervised training
/// for class c0 on a freshly resampled labeled subset. The data pool is fixed
/// (spec.seed); only the labeled subsets vary. Points are sorted by
/// decreasing probability.
inline TrialReport selection_frequency(const SyntheticSpec& spec, std::size_t k, std::size_t labeled_per_class,
                                       const HarnessOptions& options = {}) {
  if (options.runs < 2) throw InvalidArgument("selection frequency needs at least two runs");
  const auto data = generate_synthetic(spec);
  if (k < 1 || k > data.features.features()) throw InvalidArgument("k must lie in [1, n]");
  if (labeled_per_class < 1 || labeled_per_class > spec.n_samples_per_class)
    throw InvalidArgument("labeled samples per class out of range");
  const std::size_t n = data.features.features();

  std::vector<std::vector<std::size_t>> picks(options.runs);
  std::vector<std::uint64_t> seeds(options.runs);
  parallel_for(options.runs, options.threads, [&](std::size_t r) {
    seeds[r] = trial_seed(spec.seed, r);
    std::mt19937_64 rng(seeds[r]);
    const auto split = detail::stratified_split(data, labeled_per_class, rng);
    const auto rows = detail::flatten(split.chosen);
    const auto F = data.features.subset(rows);
    const auto y = LabelVector::one_vs_all(detail::labels_of(data, rows), data.class_names[0]);
    TrainOptions to;
    to.k = k;
    to.solver = options.solver;
    to.fallback_selection = true;
    picks[r] = train_supervised(F, y, to).selected;
  });

  std::vector<double> counts(n, 0.0);
  for (const auto& p : picks)
    for (auto j : p) counts[j] += 1.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });

  TrialReport report;
  report.name = "selection_frequency";
  report.parameters = spec.describe();
  report.parameters.push_back({"k", std::to_string(k)});
  report.parameters.push_back({"labeled_per_class", std::to_string(labeled_per_class)});
  report.parameters.push_back({"runs", std::to_string(options.runs)});
  for (auto j : order) {
    auto& p = report.point_or_add("selection_frequency", static_cast<double>(j));
    for (const auto& pk : picks) p.values.push_back(std::binary_search(pk.begin(), pk.end(), j) ? 1.0 : 0.0);
  }
  for (std::size_t r = 0; r < options.runs; ++r) {
    RunRecord rec;
    rec.curve = "selection";
    rec.x = static_cast<double>(k);
    rec.run = r;
    rec.seed = seeds[r];
    rec.selected = picks[r];
    report.runs.push_back(std::move(rec));
  }
  return report;
}

/// Per-feature selection probabilities from a selection_frequency report,
/// indexed by feature.
inline std::vector<double> selection_probabilities(const TrialReport& report, std::size_t n_features) {
  std::vector<double> out(n_features, 0.0);
  for (const auto& p : report.curve("selection_frequency")) out[static_cast<std::size_t>(p->x)] = p->mean();
  return out;
}

struct ErrorDecayOptions {
  double mu_p = 0.6;
  double mu_n = 0.4;
  double sigma = 0.2;
  double theta = 0.5;
  std::size_t test_samples = 20000;  // half positive, half negative
  std::uint64_t seed = 1;
};

/// Misclassification of the uniform average of n independent signed features
/// at threshold theta, with the Chebyshev bound sigma^2 / (n (mu_p - theta)^2)
/// (the smaller of the two margins when they differ).
inline TrialReport error_decay_experiment(const std::vector<std::size_t>& n_values, const ErrorDecayOptions& decay,
                                          const HarnessOptions& options = {}) {
  if (!(decay.mu_n < decay.theta && decay.theta < decay.mu_p)) throw InvalidArgument("need mu_n < theta < mu_p");
  for (auto n : n_values)
    if (n < 1) throw InvalidArgument("feature counts must be positive");
  const double margin = std::min(decay.mu_p - decay.theta, decay.theta - decay.mu_n);
  const std::size_t runs = std::max<std::size_t>(options.runs, 1);

  std::vector<std::vector<double>> errors(runs, std::vector<double>(n_values.size()));
  parallel_for(runs, options.threads, [&](std::size_t r) {
    for (std::size_t ni = 0; ni < n_values.size(); ++ni) {
      std::mt19937_64 rng(trial_seed(decay.seed, r * 1000003 + n_values[ni]));
      std::normal_distribution<double> normal(0.0, 1.0);
      const std::size_t n = n_values[ni];
      std::size_t wrong = 0;
      for (std::size_t i = 0; i < decay.test_samples; ++i) {
        const bool positive = i % 2 == 0;
        const double mu = positive ? decay.mu_p : decay.mu_n;
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += std::clamp(mu + decay.sigma * normal(rng), 0.0, 1.0);
        const bool predicted = sum / static_cast<double>(n) >= decay.theta;
        wrong += predicted != positive ? 1 : 0;
      }
      errors[r][ni] = static_cast<double>(wrong) / static_cast<double>(decay.test_samples);
    }
  });

  TrialReport report;
  report.name = "error_decay";
  report.parameters = {{"mu_p", io::format_double(decay.mu_p)},     {"mu_n", io::format_double(decay.mu_n)},
                       {"sigma", io::format_double(decay.sigma)},   {"theta", io::format_double(decay.theta)},
                       {"test_samples", std::to_string(decay.test_samples)}, {"seed", std::to_string(decay.seed)},
                       {"runs", std::to_string(runs)}};
  for (std::size_t ni = 0; ni < n_values.size(); ++ni) {
    const double x = static_cast<double>(n_values[ni]);
    auto& e = report.point_or_add("empirical_error", x);
    for (std::size_t r = 0; r < runs; ++r) e.values.push_back(errors[r][ni]);
    report.point_or_add("chebyshev_bound", x)
        .values.push_back(decay.sigma * decay.sigma / (x * margin * margin));
  }
  return report;
}

/// Agreement of signs estimated from `budget` labeled samples per class with
/// reference signs estimated on a disjoint pool of `reference_per_class`
/// samples per class; also the class-by-class agreement matrix of the
/// reference signs.
inline TrialReport sign_study(const SyntheticSpec& spec, const std::vector<std::size_t>& budgets,
                              std::size_t reference_per_class, const HarnessOptions& options = {}) {
  if (budgets.empty()) throw InvalidArgument("budgets must be non-empty");
  const std::size_t max_budget = *std::max_element(budgets.begin(), budgets.end());
  SyntheticSpec base = spec;
  base.n_samples_per_class = max_budget + reference_per_class;
  base.validate();
  const std::size_t C = base.n_classes;

  std::vector<std::vector<double>> acc(options.runs, std::vector<double>(budgets.size()));
  std::vector<std::vector<std::vector<double>>> agreement(options.runs);
  parallel_for(options.runs, options.threads, [&](std::size_t r) {
    SyntheticSpec s = base;
    s.seed = trial_seed(spec.seed, r);
    const auto data = generate_synthetic(s);
    std::mt19937_64 rng(splitmix64(s.seed));
    const auto split = detail::stratified_split(data, max_budget, rng);
    const auto ref_rows = detail::flatten(split.rest);
    const auto reference =
        detail::estimate_class_signs(data, data.features.subset(ref_rows), detail::labels_of(data, ref_rows));
    for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
      std::vector<std::vector<std::size_t>> parts(C);
      for (std::size_t c = 0; c < C; ++c)
        parts[c].assign(split.chosen[c].begin(), split.chosen[c].begin() + static_cast<std::ptrdiff_t>(budgets[bi]));
      const auto rows = detail::flatten(parts);
      detail::require_disjoint(rows, ref_rows);
      const auto est = detail::estimate_class_signs(data, data.features.subset(rows), detail::labels_of(data, rows));
      acc[r][bi] = detail::mean_sign_accuracy(est, reference);
    }
    std::vector<FeatureSigns> per_class;
    for (const auto& ns : reference) per_class.push_back(ns.signs);
    agreement[r] = sign_agreement_matrix(per_class);
  });

  TrialReport report;
  report.name = "sign_study";
  report.parameters = base.describe();
  report.parameters.push_back({"reference_per_class", std::to_string(reference_per_class)});
  report.parameters.push_back({"runs", std::to_string(options.runs)});
  detail::append_means(report.parameters, base);
  for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
    auto& p = report.point_or_add("sign_accuracy", static_cast<double>(budgets[bi]));
    for (std::size_t r = 0; r < options.runs; ++r) p.values.push_back(acc[r][bi]);
  }
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = 0; b < C; ++b) {
      auto& p = report.point_or_add("agreement_" + class_label(a), static_cast<double>(b));
      for (std::size_t r = 0; r < options.runs; ++r) p.values.push_back(agreement[r][a][b]);
    }
  return report;
}

/// Relative distance (J_t - J_final) / |J_final| of the supervised objective
/// per iteration, over randomized binary problems built from `spec`.
inline TrialReport convergence_study(const SyntheticSpec& spec, std::size_t k, const HarnessOptions& options = {}) {
  spec.validate();
  if (k < 1 || k > spec.n_features()) throw InvalidArgument("k must lie in [1, n]");
  const std::size_t iters = options.solver.max_iters;
  std::vector<SolveTrace> traces(options.runs);
  std::vector<std::uint64_t> seeds(options.runs);
  parallel_for(options.runs, options.threads, [&](std::size_t r) {
    SyntheticSpec s = spec;
    s.seed = trial_seed(spec.seed, r);
    seeds[r] = s.seed;
    const auto data = generate_synthetic(s);
    TrainOptions to;
    to.k = k;
    to.solver = options.solver;
    to.fallback_selection = true;
    train_supervised(data.features, data.labels_for(0), to, &traces[r]);
  });
  TrialReport report;
  report.name = "convergence";
  report.parameters = spec.describe();
  report.parameters.push_back({"k", std::to_string(k)});
  report.parameters.push_back({"runs", std::to_string(options.runs)});
  for (std::size_t t = 0; t <= iters; ++t) {
    auto& p = report.point_or_add("relative_gap", static_cast<double>(t));
    for (const auto& tr : traces) {
      const double fin = tr.final_objective();
      p.values.push_back((tr.objective_at(t) - fin) / std::max(std::abs(fin), 1e-300));
    }
  }
  for (std::size_t r = 0; r < options.runs; ++r) {
    RunRecord rec;
    rec.curve = "trace";
    rec.x = static_cast<double>(k);
    rec.run = r;
    rec.seed = seeds[r];
    rec.iterations = traces[r].iterations_used;
    rec.final_objective = traces[r].final_objective();
    report.runs.push_back(std::move(rec));
  }
  return report;
}

struct RuntimeOptions {
  std::size_t repeats = 5;  // timings report the median over repeats
  std::uint64_t seed = 1;
  bool include_frank_wolfe = true;
};

/// Term-build and solver time against sample count at fixed n and k. The
/// solver runs a fixed number of iterations (tol = 0) so every N does the same
/// work. Deterministic outputs (iterations, objective) go to the curves; wall
/// clock goes to the timing records.
inline TrialReport runtime_scaling(const std::vector<std::size_t>& n_samples_values, std::size_t n_features,
                                   std::size_t k, const RuntimeOptions& runtime = {},
                                   const HarnessOptions& options = {}) {
  if (k < 1 || k > n_features) throw InvalidArgument("k must lie in [1, n]");
  TrialReport report;
  report.name = "runtime_scaling";
  report.parameters = {{"n_features", std::to_string(n_features)},
                       {"k", std::to_string(k)},
                       {"repeats", std::to_string(runtime.repeats)},
                       {"max_iters", std::to_string(options.solver.max_iters)},
                       {"seed", std::to_string(runtime.seed)}};
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  for (auto N : n_samples_values) {
    if (N < 2) throw InvalidArgument("sample counts must be at least 2");
    SyntheticSpec s;
    s.n_classes = 2;
    s.n_samples_per_class = N / 2;
    s.informative_features_per_class = std::max<std::size_t>(1, n_features / 10);
    s.redundant_copies = 0;
    s.noise_features = n_features - 2 * s.informative_features_per_class;
    s.seed = trial_seed(runtime.seed, N);
    const auto data = generate_synthetic(s);
    const auto y = data.labels_for(0);
    const auto signs = estimate_signs(data.features, y);
    const auto flipped = apply_flips(data.features, signs);

    std::vector<double> build, solve, fw_time;
    SolveResult solved;
    QuadraticTerms terms;
    IpfpOptions fixed = options.solver;
    fixed.tol = 0.0;
    for (std::size_t rep = 0; rep < std::max<std::size_t>(runtime.repeats, 1); ++rep) {
      auto t0 = detail::Clock::now();
      terms = build_terms(flipped, y);
      build.push_back(detail::seconds_since(t0));
      const SolverProblem problem(terms, k, Sense::ConvexMin);
      t0 = detail::Clock::now();
      solved = ipfp_solve(problem, fixed);
      solve.push_back(detail::seconds_since(t0));
      if (runtime.include_frank_wolfe) {
        t0 = detail::Clock::now();
        try {
          frank_wolfe_oracle(problem);
        } catch (const SolverError&) {
        }
        fw_time.push_back(detail::seconds_since(t0));
      }
    }
    const double x = static_cast<double>(data.features.samples());
    report.point_or_add("solver_iterations", x).values.push_back(static_cast<double>(solved.trace.iterations_used));
    report.point_or_add("final_objective", x).values.push_back(solved.trace.final_objective());
    report.timings.push_back({"ipfp", x, 0, median(build), median(solve)});
    if (runtime.include_frank_wolfe) report.timings.push_back({"frank_wolfe_oracle", x, 0, median(build), median(fw_time)});
  }
  return report;
}

}  // namespace ses
