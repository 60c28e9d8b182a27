#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "ses/experiment_harness.hpp"
#include "test_util.hpp"

using namespace ses;

namespace {

// E[clamp(X, 0, 1)] for X ~ N(mu, sigma^2) by Simpson's rule on the density
double clipped_mean_by_quadrature(double mu, double sigma) {
  const double lo = mu - 12 * sigma, hi = mu + 12 * sigma;
  const int steps = 200000;
  const double h = (hi - lo) / steps;
  auto f = [&](double x) {
    const double z = (x - mu) / sigma;
    return std::clamp(x, 0.0, 1.0) * std::exp(-0.5 * z * z) / (sigma * std::sqrt(2 * M_PI));
  };
  double s = f(lo) + f(hi);
  for (int i = 1; i < steps; ++i) s += f(lo + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_classes = 3;
  s.n_samples_per_class = 60;
  s.informative_features_per_class = 3;
  s.noise_features = 6;
  s.seed = 11;
  return s;
}

}  // namespace

TEST(Seeds, TrialSeedsDifferAndRepeat) {
  EXPECT_EQ(trial_seed(1, 0), trial_seed(1, 0));
  EXPECT_NE(trial_seed(1, 0), trial_seed(1, 1));
  EXPECT_NE(trial_seed(1, 0), trial_seed(2, 0));
  // splitmix64 reference output for input 0
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
}

TEST(Generator, ClippedMeanMatchesQuadrature) {
  for (auto [mu, sigma] : std::vector<std::pair<double, double>>{{0.7, 0.2}, {0.9, 0.2}, {0.1, 0.3}, {0.5, 0.05}})
    EXPECT_NEAR(clipped_gaussian_mean(mu, sigma), clipped_mean_by_quadrature(mu, sigma), 1e-8) << mu << " " << sigma;
  EXPECT_DOUBLE_EQ(clipped_gaussian_mean(0.6, 0.0), 0.6);
}

TEST(Generator, ZeroSigmaGivesConstants) {
  SyntheticSpec s;
  s.n_classes = 3;
  s.n_samples_per_class = 4;
  s.informative_features_per_class = 2;
  s.noise_features = 0;
  s.sigma_p = s.sigma_n = 0.0;
  s.mu_p = 0.8;
  s.mu_n = 0.1;
  const auto d = generate_synthetic(s);
  ASSERT_EQ(d.features.features(), 6u);
  for (std::size_t i = 0; i < d.features.samples(); ++i)
    for (std::size_t j = 0; j < 6; ++j)
      EXPECT_EQ(d.features(i, j), d.feature_owner[j] == d.class_index[i] ? 0.8 : 0.1);
}

TEST(Generator, ShapeNamesAndInterleaving) {
  auto s = small_spec();
  s.redundant_copies = 1;
  const auto d = generate_synthetic(s);
  EXPECT_EQ(d.features.samples(), 180u);
  EXPECT_EQ(d.features.features(), 3u * 6u + 6u);
  EXPECT_EQ(d.classes[0], "c0");
  EXPECT_EQ(d.classes[1], "c1");
  EXPECT_EQ(d.classes[3], "c0");
  std::size_t noise = 0, redundant = 0;
  for (std::size_t j = 0; j < d.features.features(); ++j) {
    noise += d.is_noise(j);
    redundant += d.redundant[j];
  }
  EXPECT_EQ(noise, 6u);
  EXPECT_EQ(redundant, 9u);
  EXPECT_EQ(d.rows_of_class(2).size(), 60u);
  EXPECT_TRUE(d.features.values().minCoeff() >= 0.0 && d.features.values().maxCoeff() <= 1.0);
}

TEST(Generator, SeedDeterminesData) {
  const auto a = generate_synthetic(small_spec());
  const auto b = generate_synthetic(small_spec());
  EXPECT_EQ(a.features.values(), b.features.values());
  auto s = small_spec();
  s.seed = 12;
  EXPECT_NE(a.features.values(), generate_synthetic(s).features.values());
}

TEST(Generator, EmpiricalMeansNearClippedMeansOver30Seeds) {
  SyntheticSpec s;
  s.n_samples_per_class = 200;
  const std::size_t seeds = 30;
  double pos = 0.0, neg = 0.0;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    s.seed = seed;
    const auto d = generate_synthetic(s);
    // feature 0 belongs to c0
    for (std::size_t i = 0; i < d.features.samples(); ++i) (d.class_index[i] == 0 ? pos : neg) += d.features(i, 0);
  }
  const double N = static_cast<double>(seeds * s.n_samples_per_class);
  const double tol = 3 * 0.2 / std::sqrt(N);
  EXPECT_NEAR(pos / N, clipped_gaussian_mean(0.7, 0.2), tol);
  EXPECT_NEAR(neg / N, clipped_gaussian_mean(0.3, 0.2), tol);
}

TEST(Generator, ReportedEmpiricalMeansMatchData) {
  auto s = small_spec();
  s.inverted_fraction = 0.5;
  const auto d = generate_synthetic(s);
  double sp = 0, sn = 0;
  std::size_t np = 0, nn = 0;
  for (std::size_t j = 0; j < d.features.features(); ++j) {
    if (d.is_noise(j) || d.redundant[j]) continue;
    for (std::size_t i = 0; i < d.features.samples(); ++i) {
      const double v = d.inverted[j] ? 1.0 - d.features(i, j) : d.features(i, j);
      if (d.feature_owner[j] == d.class_index[i]) {
        sp += v;
        ++np;
      } else {
        sn += v;
        ++nn;
      }
    }
  }
  EXPECT_NEAR(d.empirical_mu_p, sp / np, 1e-12);
  EXPECT_NEAR(d.empirical_mu_n, sn / nn, 1e-12);
}

TEST(Generator, HintsMatchFullPoolSignsWithoutNoise) {
  SyntheticSpec s;
  s.n_classes = 3;
  s.n_samples_per_class = 200;
  s.inverted_fraction = 0.3;
  s.seed = 4;
  const auto d = generate_synthetic(s);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto est = estimate_signs(d.features, d.labels_for(c));
    const auto& hint = d.sign_hints[c].signs;
    for (std::size_t j = 0; j < d.features.features(); ++j) {
      if (d.is_noise(j) || est.ties[j]) continue;
      EXPECT_EQ(est.flips[j], hint.flips[j]) << "class " << c << " feature " << j;
    }
  }
}

TEST(Generator, SignNoiseFlipsExactCount) {
  auto s = small_spec();
  s.sign_noise_rate = 0.25;
  const auto d = generate_synthetic(s);
  const std::size_t n = d.features.features();
  for (std::size_t c = 0; c < s.n_classes; ++c) {
    std::size_t diff = 0;
    for (std::size_t j = 0; j < n; ++j) diff += d.sign_hints[c].signs.flips[j] != d.truth_signs[c].signs.flips[j];
    EXPECT_EQ(diff, static_cast<std::size_t>(std::llround(0.25 * n)));
  }
}

TEST(Generator, RejectsBadSpecs) {
  auto s = small_spec();
  s.n_classes = 1;
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
  s = small_spec();
  s.sign_noise_rate = 1.5;
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
  s = small_spec();
  s.sigma_p = -0.1;
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
}

TEST(SweepK, FullKEqualsBaselinePerRun) {
  const auto s = small_spec();
  HarnessOptions o;
  o.runs = 10;
  const auto n = s.n_features();
  const auto r = sweep_k(s, {1, 3, n}, 5, o);
  const auto& ours = r.point("ours", static_cast<double>(n)).values;
  const auto& base = r.point("average_baseline", static_cast<double>(n)).values;
  ASSERT_EQ(ours.size(), 10u);
  for (std::size_t i = 0; i < ours.size(); ++i) EXPECT_NEAR(ours[i], base[i], 1e-12);
}

TEST(SweepK, InteriorMaximumWhenNoiseDominates) {
  SyntheticSpec s;
  s.n_classes = 3;
  s.n_samples_per_class = 100;
  s.informative_features_per_class = 3;
  s.noise_features = 30;
  s.mu_p = 0.65;
  s.mu_n = 0.35;
  s.seed = 3;
  HarnessOptions o;
  o.runs = 30;
  const std::vector<std::size_t> ks{1, 3, 6, 9, 20, 39};
  const auto r = sweep_k(s, ks, 10, o);
  std::vector<double> means;
  for (auto k : ks) means.push_back(r.point("ours", static_cast<double>(k)).mean());
  const double best = *std::max_element(means.begin(), means.end());
  EXPECT_GE(best, means.front());
  const double interior = *std::max_element(means.begin() + 1, means.end() - 1);
  EXPECT_GE(interior, means.front());
  EXPECT_GE(interior, means.back());
}

TEST(SweepK, RejectsBadArguments) {
  const auto s = small_spec();
  EXPECT_THROW(sweep_k(s, {0}, 5), InvalidArgument);
  EXPECT_THROW(sweep_k(s, {s.n_features() + 1}, 5), InvalidArgument);
  EXPECT_THROW(sweep_k(s, {2}, s.n_samples_per_class), InvalidArgument);
}

TEST(Harness, DisjointnessCheck) {
  EXPECT_NO_THROW(detail::require_disjoint({1, 3, 5}, {0, 2, 4}));
  EXPECT_THROW(detail::require_disjoint({1, 3, 5}, {0, 3}), Error);
}

TEST(Harness, StratifiedSplitIsDisjointAndBalanced) {
  const auto d = generate_synthetic(small_spec());
  std::mt19937_64 rng(5);
  const auto sp = detail::stratified_split(d, 7, rng);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(sp.chosen[c].size(), 7u);
    EXPECT_EQ(sp.rest[c].size(), 53u);
    for (auto i : sp.chosen[c]) EXPECT_EQ(d.class_index[i], c);
  }
  detail::require_disjoint(detail::flatten(sp.chosen), detail::flatten(sp.rest));
}

TEST(CompareModes, CurvesAndDeltas) {
  HarnessOptions o;
  o.runs = 6;
  CompareModesOptions m;
  m.k = 4;
  m.pool_per_class = 40;
  const auto r = compare_modes(small_spec(), {1, 5}, {0.0, 0.5, 1.0}, m, o);
  for (std::string b : {"_b1", "_b5"})
    for (double x : {0.0, 0.5, 1.0}) {
      const auto& sup = r.point("supervised" + b, x).values;
      const auto& uns = r.point("unsupervised" + b, x).values;
      const auto& del = r.point("delta" + b, x).values;
      ASSERT_EQ(sup.size(), 6u);
      for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_DOUBLE_EQ(del[i], uns[i] - sup[i]);
        EXPECT_GE(uns[i], 0.0);
        EXPECT_LE(uns[i], 1.0);
      }
      // the supervised model does not see the pool
      EXPECT_EQ(sup, r.point("supervised" + b, 0.0).values);
    }
  EXPECT_EQ(r.runs.size(), 6u * 2 * 3 * 2);
}

TEST(CompareModes, HintsWithoutNoiseMatchTruthSigns) {
  HarnessOptions o;
  o.runs = 3;
  CompareModesOptions m;
  m.k = 4;
  m.pool_per_class = 30;
  m.use_sign_hints = true;
  const auto r = compare_modes(small_spec(), {1}, {1.0}, m, o);
  for (const auto& rec : r.runs) EXPECT_DOUBLE_EQ(rec.sign_accuracy, 1.0);
}

TEST(Determinism, ThreadCountDoesNotChangeReports) {
  HarnessOptions one, four;
  one.runs = four.runs = 8;
  one.threads = 1;
  four.threads = 4;
  const auto a = sweep_k(small_spec(), {2, 5}, 5, one);
  const auto b = sweep_k(small_spec(), {2, 5}, 5, four);
  EXPECT_EQ(format_curves(a), format_curves(b));
  EXPECT_EQ(format_runs(a), format_runs(b));
  EXPECT_EQ(format_manifest(a), format_manifest(b));
  CompareModesOptions m;
  m.k = 3;
  m.pool_per_class = 20;
  EXPECT_EQ(format_runs(compare_modes(small_spec(), {1}, {0.5}, m, one)),
            format_runs(compare_modes(small_spec(), {1}, {0.5}, m, four)));
}

TEST(Determinism, RerunWritesIdenticalFiles) {
  testing_util::TempDir dir;
  HarnessOptions o;
  o.runs = 4;
  const auto r = sweep_k(small_spec(), {2}, 5, o);
  write_report(dir.path() / "a", r);
  write_report(dir.path() / "b", sweep_k(small_spec(), {2}, 5, o));
  for (std::string f : {"sweep_k.csv", "sweep_k_runs.csv", "sweep_k_manifest.txt"})
    EXPECT_EQ(slurp(dir.path() / "a" / f), slurp(dir.path() / "b" / f)) << f;
  EXPECT_FALSE(slurp(dir.path() / "a" / "sweep_k.csv").empty());
}

TEST(Reports, AggregatesRecomputeFromRunRecords) {
  HarnessOptions o;
  o.runs = 7;
  const auto r = sweep_k(small_spec(), {1, 4, 8}, 5, o);
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  std::istringstream runs(format_runs(r));
  std::string line;
  std::getline(runs, line);
  EXPECT_EQ(line, "curve,x,run,seed,accuracy,sign_accuracy,iterations,final_objective,selected");
  while (std::getline(runs, line)) {
    const auto cells = split_csv(line);
    groups[{cells[0], cells[1]}].push_back(std::stod(cells[4]));
  }
  std::istringstream curves(format_curves(r));
  std::getline(curves, line);
  EXPECT_EQ(line, "curve,x,y,stddev,runs");
  std::size_t checked = 0;
  while (std::getline(curves, line)) {
    const auto cells = split_csv(line);
    if (cells[0] != "ours") continue;
    const auto& v = groups.at({cells[0], cells[1]});
    double mean = 0;
    for (double x : v) mean += x;
    mean /= v.size();
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(std::stod(cells[2]), mean, 1e-12);
    EXPECT_NEAR(std::stod(cells[3]), std::sqrt(ss / (v.size() - 1)), 1e-12);
    EXPECT_EQ(std::stoul(cells[4]), v.size());
    ++checked;
  }
  EXPECT_EQ(checked, 3u);
}

TEST(Reports, ManifestListsParameters) {
  HarnessOptions o;
  o.runs = 2;
  const auto m = format_manifest(sweep_k(small_spec(), {2}, 5, o));
  EXPECT_EQ(m.rfind("toolkit ses ", 0), 0u);
  EXPECT_NE(m.find("empirical_mu_p_trial0"), std::string::npos);
  EXPECT_NE(m.find("clipped_mu_p"), std::string::npos);
  EXPECT_NE(m.find("runs"), std::string::npos);
}

TEST(SelectionFrequency, ZeroSigmaGivesZeroOrOne) {
  SyntheticSpec s;
  s.n_samples_per_class = 30;
  s.informative_features_per_class = 4;
  s.noise_features = 0;
  s.sigma_p = s.sigma_n = 0.0;
  HarnessOptions o;
  o.runs = 10;
  const auto r = selection_frequency(s, 3, 5, o);
  for (double p : selection_probabilities(r, s.n_features())) EXPECT_TRUE(p == 0.0 || p == 1.0) << p;
}

TEST(SelectionFrequency, InformativeFeaturesDominate) {
  SyntheticSpec s;
  s.n_samples_per_class = 100;
  s.informative_features_per_class = 5;
  s.noise_features = 10;
  s.mu_p = 0.8;
  s.mu_n = 0.2;
  s.sigma_p = s.sigma_n = 0.1;
  HarnessOptions o;
  o.runs = 30;
  // both classes' columns are informative for c0 versus the rest
  const auto r = selection_frequency(s, 10, 20, o);
  const auto p = selection_probabilities(r, s.n_features());
  const auto data = generate_synthetic(s);
  double total = 0.0, mean_count = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    total += p[j];
    if (data.is_noise(j))
      EXPECT_LE(p[j], 0.2) << j;
    else
      EXPECT_GE(p[j], 0.9) << j;
  }
  for (const auto& rec : r.runs) mean_count += static_cast<double>(rec.selected.size()) / r.runs.size();
  EXPECT_NEAR(total, mean_count, 1e-9);
  EXPECT_NEAR(total, 10.0, 0.5);
  // sorted by decreasing probability
  for (std::size_t i = 1; i < r.points.size(); ++i) EXPECT_GE(r.points[i - 1].mean(), r.points[i].mean());
}

TEST(ErrorDecay, BoundHoldsAndErrorFalls) {
  HarnessOptions o;
  o.runs = 1;
  const auto r = error_decay_experiment({1, 5, 10, 50, 100}, ErrorDecayOptions{}, o);
  for (double n : {1.0, 5.0, 10.0, 50.0, 100.0})
    EXPECT_LE(r.point("empirical_error", n).mean(), r.point("chebyshev_bound", n).mean()) << n;
  EXPECT_NEAR(r.point("chebyshev_bound", 10).mean(), 0.04 / (10 * 0.01), 1e-12);
  // single feature: P(clip(N(0.6, 0.2)) < 0.5) = Phi(-0.5)
  EXPECT_NEAR(r.point("empirical_error", 1).mean(), 0.5 * std::erfc(0.5 / std::sqrt(2.0)), 0.01);
  EXPECT_LT(r.point("empirical_error", 100).mean(), 0.005);
  EXPECT_LT(r.point("empirical_error", 100).mean(), r.point("empirical_error", 10).mean());
  EXPECT_THROW(error_decay_experiment({1}, ErrorDecayOptions{0.4, 0.6, 0.2, 0.5, 10, 1}), InvalidArgument);
}

TEST(SignStudy, AccuracyGrowsWithBudgetAndAgreementIsSymmetric) {
  HarnessOptions o;
  o.runs = 10;
  const auto r = sign_study(small_spec(), {1, 20}, 100, o);
  EXPECT_GT(r.point("sign_accuracy", 20).mean(), r.point("sign_accuracy", 1).mean());
  for (std::size_t a = 0; a < 3; ++a) {
    EXPECT_DOUBLE_EQ(r.point("agreement_" + class_label(a), a).mean(), 1.0);
    for (std::size_t b = 0; b < 3; ++b)
      EXPECT_EQ(r.point("agreement_" + class_label(a), b).values, r.point("agreement_" + class_label(b), a).values);
  }
}

TEST(Convergence, RelativeGapIsMonotoneAndEndsAtZero) {
  auto s = small_spec();
  s.noise_features = 30;
  HarnessOptions o;
  o.runs = 5;
  const auto r = convergence_study(s, 5, o);
  const auto c = r.curve("relative_gap");
  ASSERT_EQ(c.size(), o.solver.max_iters + 1);
  for (std::size_t run = 0; run < 5; ++run) {
    for (std::size_t t = 1; t < c.size(); ++t) EXPECT_LE(c[t]->values[run], c[t - 1]->values[run]);
    EXPECT_EQ(c.back()->values[run], 0.0);
    EXPECT_GE(c.front()->values[run], 0.0);
  }
}

TEST(RuntimeScaling, ReportsFixedWorkAndTimings) {
  HarnessOptions o;
  o.solver.max_iters = 10;
  const auto r = runtime_scaling({200, 400}, 30, 5, RuntimeOptions{1, 1, true}, o);
  ASSERT_EQ(r.timings.size(), 4u);
  EXPECT_EQ(r.timings[0].label, "ipfp");
  EXPECT_EQ(r.timings[1].label, "frank_wolfe_oracle");
  for (const auto& t : r.timings) {
    EXPECT_GE(t.build_seconds, 0.0);
    EXPECT_GE(t.solve_seconds, 0.0);
  }
  EXPECT_EQ(r.curve("solver_iterations").size(), 2u);
  // wall clock stays out of the curves file
  EXPECT_EQ(format_curves(r).find("seconds"), std::string::npos);
}
