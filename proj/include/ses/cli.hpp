#pragma once

// Command-line front end: signs, train, predict, eval, synth, bench, sweep.
// Exit codes: 0 success, 1 usage error, 2 data or validation error. Every
// output file is written to a temporary and renamed into place.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "ses/ensemble_learner.hpp"
#include "ses/error.hpp"
#include "ses/experiment_harness.hpp"
#include "ses/feature_store.hpp"
#include "ses/io.hpp"
#include "ses/sign_estimator.hpp"

namespace ses::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CliConfig {
  std::string command;
  std::string features, labels, signs_file, model, out, report_dir;
  std::string out_features, out_labels, out_signs;
  std::string mode = "supervised";
  std::string init = "uniform";
  std::string experiment = "k";
  std::size_t k = 10;
  std::size_t bench_k = 50;
  std::size_t max_iters = 100;
  double tol = 1e-9;
  std::uint64_t seed = 1;
  bool normalize = false;
  bool calibrate = false;
  bool sign_hints = false;
  std::size_t runs = 30;
  std::size_t threads = default_thread_count();
  SyntheticSpec spec;
  std::vector<std::size_t> k_values{1, 2, 5, 10, 20, 50};
  std::vector<std::size_t> budgets{1, 2, 5};
  std::vector<double> pool_fractions{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::size_t> n_values{1, 5, 10, 50, 100};
  std::vector<std::size_t> sizes{1000, 10000};
  std::size_t labeled_per_class = 10;
  std::size_t pool_per_class = 200;
  std::size_t reference_per_class = 500;
  std::size_t n_features = 500;
  std::size_t repeats = 5;
};

namespace detail {

inline void add_spec_flags(CLI::App& cmd, SyntheticSpec& s) {
  cmd.add_option("--classes", s.n_classes, "number of classes");
  cmd.add_option("--samples-per-class", s.n_samples_per_class, "samples generated per class");
  cmd.add_option("--informative", s.informative_features_per_class, "informative features per class");
  cmd.add_option("--redundant", s.redundant_copies, "noisy copies per informative feature");
  cmd.add_option("--noise-features", s.noise_features, "uniform noise features");
  cmd.add_option("--mu-p", s.mu_p, "mean of an informative feature on its class");
  cmd.add_option("--mu-n", s.mu_n, "mean of an informative feature elsewhere");
  cmd.add_option("--sigma-p", s.sigma_p, "standard deviation on the positive class");
  cmd.add_option("--sigma-n", s.sigma_n, "standard deviation on the negative classes");
  cmd.add_option("--sign-noise", s.sign_noise_rate, "fraction of hinted flip bits inverted");
  cmd.add_option("--inverted-fraction", s.inverted_fraction, "probability an informative column is stored as 1-f");
}

inline void add_solver_flags(CLI::App& cmd, CliConfig& c, std::size_t& k) {
  cmd.add_option("--k", k, "features per ensemble")->check(CLI::PositiveNumber);
  cmd.add_option("--max-iters", c.max_iters, "solver iteration cap");
  cmd.add_option("--tol", c.tol, "stop when the objective changes by less than this")->check(CLI::NonNegativeNumber);
  cmd.add_option("--init", c.init, "solver start point")->check(CLI::IsMember({"uniform", "random"}));
  cmd.add_option("--seed", c.seed, "random seed");
}

inline TrainOptions train_options(const CliConfig& c) {
  TrainOptions o;
  o.k = c.k;
  o.solver.max_iters = c.max_iters;
  o.solver.tol = c.tol;
  o.init = c.init == "random" ? InitPolicy::RandomVertex : InitPolicy::Uniform;
  o.seed = c.seed;
  o.calibrate_theta = c.calibrate;
  return o;
}

inline FeatureMatrix read_features(const CliConfig& c) {
  return load_features(c.features, FeatureCsvOptions{c.normalize});
}

inline std::vector<std::string> read_classes(const CliConfig& c, const FeatureMatrix& F) {
  return align_labels(F, load_labels(c.labels));
}

inline int cmd_signs(const CliConfig& c, std::ostream& out) {
  const auto F = read_features(c);
  const auto classes = read_classes(c, F);
  std::vector<std::string> names(classes.begin(), classes.end());
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  if (names.size() < 2) throw InvalidArgument("sign estimation needs at least two classes in the labels");
  std::vector<NamedSigns> blocks;
  for (const auto& name : names) blocks.push_back({name, estimate_signs(F, LabelVector::one_vs_all(classes, name))});
  io::write_file_atomic(c.out, format_signs(blocks, F.names()));
  out << "signs " << blocks.size() << " classes " << F.features() << " features\n";
  return kExitOk;
}

inline int cmd_train(const CliConfig& c, std::ostream& out) {
  if (c.mode == "unsupervised" && c.signs_file.empty())
    throw UsageError("--signs-file is required for --mode unsupervised");
  if (c.mode == "supervised" && c.labels.empty()) throw UsageError("--labels is required for --mode supervised");
  if (c.calibrate && c.labels.empty()) throw UsageError("--calibrate needs --labels");
  const auto F = read_features(c);
  const auto options = train_options(c);
  MulticlassModel model;
  if (c.mode == "supervised") {
    const auto classes = read_classes(c, F);
    model = train_one_vs_all_supervised(F, classes, options, c.threads);
  } else {
    std::vector<std::string> names;
    const auto signs = parse_signs(io::read_file(c.signs_file), &names);
    if (names != F.names()) throw DimensionError("signs file features do not match the feature file header");
    if (c.calibrate) {
      const auto classes = read_classes(c, F);
      model = train_one_vs_all_unsupervised(F, signs, options, c.threads,
                                            std::make_optional(std::make_pair(&F, std::span<const std::string>(classes))));
    } else {
      model = train_one_vs_all_unsupervised(F, signs, options, c.threads);
    }
  }
  save_model(c.out, model);
  out << "model " << model.models.size() << " classes k " << c.k << " mode " << c.mode << "\n";
  return kExitOk;
}

inline int cmd_predict(const CliConfig& c, std::ostream& out) {
  const auto model = load_model(c.model);
  const auto F = read_features(c);
  std::string text = "sample_id,prediction,score\n";
  for (std::size_t i = 0; i < F.samples(); ++i) {
    const std::string id = F.has_sample_ids() ? F.sample_ids()[i] : std::to_string(i);
    if (model.models.size() == 1) {
      const auto& m = model.models.front();
      text += id + "," + (predict_binary(m, F.row(i)) ? "1" : "0") + "," + io::format_double(predict_score(m, F.row(i))) +
              "\n";
    } else {
      const auto& winner = predict_multiclass(model, F.row(i));
      double best = 0.0;
      for (const auto& m : model.models)
        if (m.class_name == winner) best = predict_score(m, F.row(i));
      text += id + "," + winner + "," + io::format_double(best) + "\n";
    }
  }
  io::write_file_atomic(c.out, text);
  out << "predicted " << F.samples() << " samples\n";
  return kExitOk;
}

inline int cmd_eval(const CliConfig& c, std::ostream& out) {
  const auto model = load_model(c.model);
  const auto F = read_features(c);
  const auto classes = read_classes(c, F);
  double acc = 0.0;
  if (model.models.size() == 1)
    acc = binary_accuracy(model.models.front(), F, LabelVector::one_vs_all(classes, model.models.front().class_name));
  else
    acc = multiclass_accuracy(model, F, classes);
  out << "accuracy " << io::format_double(acc) << " n " << F.samples() << "\n";
  return kExitOk;
}

inline int cmd_synth(const CliConfig& c, std::ostream& out) {
  SyntheticSpec s = c.spec;
  s.seed = c.seed;
  const auto data = generate_synthetic(s);
  io::write_file_atomic(c.out_features, format_features_csv(data.features));
  io::write_file_atomic(c.out_labels, format_labels_csv({data.features.sample_ids(), data.classes}));
  if (!c.out_signs.empty()) io::write_file_atomic(c.out_signs, format_signs(data.sign_hints, data.features.names()));
  out << "synth " << data.features.samples() << " samples " << data.features.features() << " features\n";
  return kExitOk;
}

inline HarnessOptions harness_options(const CliConfig& c) {
  HarnessOptions h;
  h.runs = c.runs;
  h.threads = c.threads;
  h.solver.max_iters = c.max_iters;
  h.solver.tol = c.tol;
  return h;
}

inline int cmd_bench(const CliConfig& c, std::ostream& out) {
  RuntimeOptions r;
  r.repeats = c.repeats;
  r.seed = c.seed;
  const auto report = runtime_scaling(c.sizes, c.n_features, c.bench_k, r, harness_options(c));
  write_report(c.report_dir, report);
  for (const auto& t : report.timings)
    out << t.label << " N " << io::format_double(t.x) << " build " << io::format_double(t.build_seconds) << " solve "
        << io::format_double(t.solve_seconds) << "\n";
  return kExitOk;
}

inline int cmd_sweep(const CliConfig& c, std::ostream& out) {
  SyntheticSpec s = c.spec;
  s.seed = c.seed;
  const auto h = harness_options(c);
  TrialReport report;
  if (c.experiment == "k") {
    report = sweep_k(s, c.k_values, c.labeled_per_class, h);
  } else if (c.experiment == "modes") {
    CompareModesOptions m;
    m.k = c.k;
    m.pool_per_class = c.pool_per_class;
    m.use_sign_hints = c.sign_hints;
    m.calibrate_theta = c.calibrate;
    report = compare_modes(s, c.budgets, c.pool_fractions, m, h);
  } else if (c.experiment == "frequency") {
    report = selection_frequency(s, c.k, c.labeled_per_class, h);
  } else if (c.experiment == "decay") {
    ErrorDecayOptions d;
    d.mu_p = s.mu_p;
    d.mu_n = s.mu_n;
    d.sigma = s.sigma_p;
    d.seed = c.seed;
    report = error_decay_experiment(c.n_values, d, h);
  } else if (c.experiment == "signs") {
    report = sign_study(s, c.budgets, c.reference_per_class, h);
  } else {
    report = convergence_study(s, c.k, h);
  }
  write_report(c.report_dir, report);
  out << "report " << report.name << " points " << report.points.size() << "\n";
  return kExitOk;
}

}  // namespace detail

/// Runs one invocation; args excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CliConfig c;
  CLI::App app{"Sparse ensembles of signed features", "ses"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "help for every command");

  auto threads_flag = [&](CLI::App& cmd) {
    cmd.add_option("--threads", c.threads, "worker threads (SES_THREADS overrides)")->check(CLI::PositiveNumber);
  };

  auto* signs = app.add_subcommand("signs", "estimate feature signs per class from labeled data");
  signs->option_defaults()->always_capture_default();
  signs->add_option("--features", c.features, "feature CSV")->required();
  signs->add_option("--labels", c.labels, "label CSV")->required();
  signs->add_option("--out", c.out, "signs file to write")->required();
  signs->add_flag("--normalize", c.normalize, "min-max scale raw feature columns");

  auto* train = app.add_subcommand("train", "train one ensemble per class");
  train->option_defaults()->always_capture_default();
  train->add_option("--features", c.features, "feature CSV (the unlabeled pool in unsupervised mode)")->required();
  train->add_option("--labels", c.labels, "label CSV");
  train->add_option("--mode", c.mode, "training mode")->check(CLI::IsMember({"supervised", "unsupervised"}));
  train->add_option("--signs-file", c.signs_file, "signs file for unsupervised mode");
  train->add_option("--out", c.out, "model file to write")->required();
  train->add_flag("--normalize", c.normalize, "min-max scale raw feature columns");
  train->add_flag("--calibrate", c.calibrate, "calibrate thresholds on the labeled data");
  detail::add_solver_flags(*train, c, c.k);
  threads_flag(*train);

  auto* predict = app.add_subcommand("predict", "score samples with a model");
  predict->option_defaults()->always_capture_default();
  predict->add_option("--model", c.model, "model file")->required();
  predict->add_option("--features", c.features, "feature CSV")->required();
  predict->add_option("--out", c.out, "prediction CSV to write")->required();
  predict->add_flag("--normalize", c.normalize, "min-max scale raw feature columns");

  auto* eval = app.add_subcommand("eval", "print accuracy of a model on labeled data");
  eval->option_defaults()->always_capture_default();
  eval->add_option("--model", c.model, "model file")->required();
  eval->add_option("--features", c.features, "feature CSV")->required();
  eval->add_option("--labels", c.labels, "label CSV")->required();
  eval->add_flag("--normalize", c.normalize, "min-max scale raw feature columns");

  auto* synth = app.add_subcommand("synth", "generate a synthetic signed-feature data set");
  synth->option_defaults()->always_capture_default();
  synth->add_option("--out-features", c.out_features, "feature CSV to write")->required();
  synth->add_option("--out-labels", c.out_labels, "label CSV to write")->required();
  synth->add_option("--out-signs", c.out_signs, "sign hints to write");
  synth->add_option("--seed", c.seed, "random seed");
  detail::add_spec_flags(*synth, c.spec);

  auto* bench = app.add_subcommand("bench", "term-build and solver time against sample count");
  bench->option_defaults()->always_capture_default();
  bench->add_option("--report-dir", c.report_dir, "directory for report files")->required();
  bench->add_option("--sizes", c.sizes, "sample counts")->delimiter(',');
  bench->add_option("--n-features", c.n_features, "feature count");
  bench->add_option("--repeats", c.repeats, "timing repeats (median reported)");
  detail::add_solver_flags(*bench, c, c.bench_k);

  auto* sweep = app.add_subcommand("sweep", "run a randomized experiment and write its report");
  sweep->option_defaults()->always_capture_default();
  sweep->add_option("--experiment", c.experiment, "experiment to run")
      ->check(CLI::IsMember({"k", "modes", "frequency", "decay", "signs", "convergence"}));
  sweep->add_option("--report-dir", c.report_dir, "directory for report files")->required();
  sweep->add_option("--runs", c.runs, "randomized trials")->check(CLI::PositiveNumber);
  sweep->add_option("--k-values", c.k_values, "k values for the k sweep")->delimiter(',');
  sweep->add_option("--budgets", c.budgets, "labeled samples per class")->delimiter(',');
  sweep->add_option("--pool-fractions", c.pool_fractions, "fractions of the unlabeled half used")->delimiter(',');
  sweep->add_option("--n-values", c.n_values, "feature counts for the decay experiment")->delimiter(',');
  sweep->add_option("--labeled-per-class", c.labeled_per_class, "labeled samples per class");
  sweep->add_option("--pool-per-class", c.pool_per_class, "unlabeled and test samples per class");
  sweep->add_option("--reference-per-class", c.reference_per_class, "samples per class for reference signs");
  sweep->add_flag("--sign-hints", c.sign_hints, "use generator sign hints instead of estimated signs");
  sweep->add_flag("--calibrate", c.calibrate, "calibrate thresholds on the labeled data");
  detail::add_solver_flags(*sweep, c, c.k);
  detail::add_spec_flags(*sweep, c.spec);
  threads_flag(*sweep);
  threads_flag(*bench);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (const char* env = std::getenv("SES_THREADS")) {
    std::size_t t = 0;
    if (!io::parse_size(env, t) || t == 0) {
      err << "error: SES_THREADS must be a positive integer\n";
      return kExitUsage;
    }
    c.threads = t;
  }

  try {
    if (*signs) return detail::cmd_signs(c, out);
    if (*train) return detail::cmd_train(c, out);
    if (*predict) return detail::cmd_predict(c, out);
    if (*eval) return detail::cmd_eval(c, out);
    if (*synth) return detail::cmd_synth(c, out);
    if (*bench) return detail::cmd_bench(c, out);
    return detail::cmd_sweep(c, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace ses::cli
