#include <gtest/gtest.h>

#include <random>

#include "ses/experiment_harness.hpp"
#include "ses/sign_estimator.hpp"
#include "test_util.hpp"

using namespace ses;

namespace {

// two-pass means, written out independently of estimate_signs
std::vector<double> direct_margins(const FeatureMatrix& F, const LabelVector& y) {
  std::vector<double> out;
  for (std::size_t j = 0; j < F.features(); ++j) {
    double sp = 0, sn = 0;
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < F.samples(); ++i) {
      if (y.positive(i)) {
        sp += F(i, j);
        ++np;
      } else {
        sn += F(i, j);
        ++nn;
      }
    }
    out.push_back(sp / np - sn / nn);
  }
  return out;
}

}  // namespace

TEST(EstimateSigns, TwoSampleMeans) {
  RowMatrix X(2, 2);
  X << 0.9, 0.1, 0.1, 0.9;
  const auto s = estimate_signs(FeatureMatrix(X), LabelVector({1, 0}));
  EXPECT_NEAR(s.margins[0], 0.8, 1e-15);
  EXPECT_NEAR(s.margins[1], -0.8, 1e-15);
  EXPECT_EQ(s.flips, (std::vector<bool>{false, true}));
  EXPECT_EQ(s.n_pos_used, 1u);
  EXPECT_EQ(s.n_neg_used, 1u);
}

TEST(EstimateSigns, IdenticalFeatureIsTie) {
  RowMatrix X(2, 1);
  X << 0.4, 0.4;
  const auto s = estimate_signs(FeatureMatrix(X), LabelVector({1, 0}));
  EXPECT_TRUE(s.ties[0]);
  EXPECT_FALSE(s.flips[0]);
  EXPECT_TRUE(s.all_ties());
}

TEST(EstimateSigns, MissingClassIsAnError) {
  const auto F = testing_util::random_features(3, 2, 1);
  EXPECT_THROW(estimate_signs(F, LabelVector({1, 1, 1})), InvalidArgument);
  EXPECT_THROW(estimate_signs(F, LabelVector({0, 0, 0})), InvalidArgument);
  EXPECT_THROW(estimate_signs(F, LabelVector({0, 1})), DimensionError);
}

TEST(EstimateSigns, ClippedGaussianMarginMatchesDirectMeans) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 0.2);
  RowMatrix X(200, 1);
  std::vector<std::uint8_t> lab(200);
  for (int i = 0; i < 200; ++i) {
    lab[i] = i < 100;
    X(i, 0) = std::clamp((lab[i] ? 0.6 : 0.4) + g(rng), 0.0, 1.0);
  }
  const FeatureMatrix F(X);
  const LabelVector y(lab);
  const auto s = estimate_signs(F, y);
  EXPECT_NEAR(s.margins[0], 0.2, 0.1);
  EXPECT_FALSE(s.flips[0]);
  EXPECT_NEAR(s.margins[0], direct_margins(F, y)[0], 1e-12);
}

TEST(SignAccuracy, SelfAndComplement) {
  const auto a = FeatureSigns::from_margins({0.3, -0.2, 0.0, 0.5}, 1, 1);
  EXPECT_DOUBLE_EQ(sign_accuracy(a, a), 1.0);
  const auto b = FeatureSigns::from_margins({-0.3, 0.2, -0.1, -0.5}, 1, 1);
  // non-tie flips all inverted; the tie of `a` (no flip) meets a flip in `b`
  EXPECT_DOUBLE_EQ(sign_accuracy(FeatureSigns::from_margins({0.3, -0.2, 0.5}, 1, 1),
                                 FeatureSigns::from_margins({-0.3, 0.2, -0.5}, 1, 1)),
                   0.0);
  EXPECT_DOUBLE_EQ(sign_accuracy(a, b), 0.0);
  EXPECT_THROW(sign_accuracy(a, FeatureSigns::from_margins({0.1}, 1, 1)), DimensionError);
}

TEST(SignAccuracy, OneShotAgainstFullPoolInRange) {
  SyntheticSpec spec;
  spec.n_classes = 2;
  spec.n_samples_per_class = 100;
  spec.mu_p = 0.6;
  spec.mu_n = 0.4;
  spec.seed = 5;
  const auto data = generate_synthetic(spec);
  const auto y = data.labels_for(0);
  const auto full = estimate_signs(data.features, y);
  // first positive and first negative row
  std::vector<std::size_t> rows{0, 1};
  const auto one = estimate_signs(data.features.subset(rows), y.subset(rows));
  const double acc = sign_accuracy(one, full);
  EXPECT_GE(acc, 0.5);
  EXPECT_LE(acc, 1.0);
}

TEST(SignAgreement, IdenticalAndOpposed) {
  const auto a = FeatureSigns::from_margins({0.3, -0.2}, 1, 1);
  const auto b = FeatureSigns::from_margins({-0.3, 0.2}, 1, 1);
  const auto same = sign_agreement_matrix({a, a});
  EXPECT_EQ(same, (std::vector<std::vector<double>>{{1, 1}, {1, 1}}));
  const auto opp = sign_agreement_matrix({a, b});
  EXPECT_EQ(opp[0][1], 0.0);
  EXPECT_EQ(opp[1][0], 0.0);
  EXPECT_THROW(sign_agreement_matrix({a}), InvalidArgument);
  EXPECT_THROW(sign_agreement_matrix({a, FeatureSigns::from_margins({1}, 1, 1)}), DimensionError);
}

TEST(SignAgreement, ClassesSharingEightyPercentOfMeans) {
  // classes 1 and 2 share their generator mean on 80% of features; class 0 sits at 0.5
  const std::size_t n = 50, per = 200;
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> g(0.0, 0.1);
    std::bernoulli_distribution hi(0.5);
    std::vector<double> m1(n), m2(n);
    for (std::size_t j = 0; j < n; ++j) {
      m1[j] = hi(rng) ? 0.7 : 0.3;
      m2[j] = j < 40 ? m1[j] : 1.0 - m1[j];
    }
    RowMatrix X(3 * per, n);
    std::vector<std::string> cls;
    for (std::size_t i = 0; i < 3 * per; ++i) {
      const std::size_t c = i % 3;
      cls.push_back("k" + std::to_string(c));
      for (std::size_t j = 0; j < n; ++j) {
        const double mu = c == 0 ? 0.5 : (c == 1 ? m1[j] : m2[j]);
        X(i, j) = std::clamp(mu + g(rng), 0.0, 1.0);
      }
    }
    const FeatureMatrix F(X);
    std::vector<FeatureSigns> per_class;
    for (int c = 0; c < 3; ++c) per_class.push_back(estimate_signs(F, LabelVector::one_vs_all(cls, "k" + std::to_string(c))));
    const auto A = sign_agreement_matrix(per_class);
    EXPECT_EQ(A[1][2], A[2][1]);
    total += A[1][2];
  }
  EXPECT_NEAR(total / 30.0, 0.8, 0.1);
}

TEST(SignsFile, RoundTripSingleAndMulti) {
  const auto a = FeatureSigns::from_margins({0.25, -0.5, 0.0}, 2, 3);
  const auto b = FeatureSigns::from_margins({-0.125, 0.75, 1e-13}, 2, 3);
  const std::vector<std::string> names{"x", "y", "z"};
  const auto text = format_signs({{"cat", a}, {"dog", b}}, names);
  std::vector<std::string> got_names;
  const auto back = parse_signs(text, &got_names);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(got_names, names);
  EXPECT_EQ(back[0].class_name, "cat");
  EXPECT_EQ(back[1].signs.margins, b.margins);
  EXPECT_EQ(back[1].signs.flips, b.flips);
  EXPECT_EQ(back[1].signs.ties, b.ties);

  const auto single = parse_signs("# comment\nx,0.1,0,0\ny,-0.2,1,0\n");
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].class_name, "positive");
  EXPECT_EQ(single[0].signs.flips, (std::vector<bool>{false, true}));
}

TEST(SignsFile, MalformedLinesReportLocation) {
  try {
    parse_signs("x,0.1,0,0\ny,abc,1,0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 2u);
    EXPECT_EQ(e.offset(), 10u);
  }
  EXPECT_THROW(parse_signs(""), ParseError);
  EXPECT_THROW(parse_signs("class a\nx,0.1,0,0\nclass b\ny,0.1,0,0\n"), ParseError);
  EXPECT_THROW(parse_signs("x,0.1,2,0\n"), ParseError);
}
