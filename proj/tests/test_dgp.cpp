#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "gvim/dgp.hpp"
#include "gvim/learners/linear.hpp"

using namespace gvim;

namespace {

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(std::span<const double> v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size() - 1);
  return m;
}

}  // namespace

TEST(Friedman, Schema) {
  FriedmanDgpSpec spec;
  spec.n = 10;
  const auto d = gen_friedman(spec);
  EXPECT_EQ(d.num_features(), 5u + 45u + 4u);
  EXPECT_EQ(d.feature(0).name, "X1");
  EXPECT_EQ(d.feature(5).name, "X8");
  EXPECT_EQ(d.feature(49).name, "X52");
  EXPECT_EQ(d.feature(d.index_of("C1")).levels, 2);
  EXPECT_EQ(d.feature(d.index_of("C2")).levels, 3);
  spec.c1_prob = 1.0;
  EXPECT_THROW(gen_friedman(spec), ConfigError);
}

TEST(Friedman, MarginalMoments) {
  FriedmanDgpSpec spec;
  spec.n = 100'000;
  spec.seed = 1;
  spec.n_nuisance = 2;
  const auto d = gen_friedman(spec);
  const auto x1 = moments(d.column("X1"));
  EXPECT_NEAR(x1.mean, 0.0, 0.02);
  EXPECT_NEAR(x1.var, 0.996, 0.03);
  for (const char* name : {"X2", "X5", "X8", "X9"}) {
    const auto m = moments(d.column(name));
    EXPECT_NEAR(m.mean, 0.0, 0.02) << name;
    EXPECT_NEAR(m.var, 1.0, 0.03) << name;
  }
  const auto u = moments(d.column("U1"));
  EXPECT_NEAR(u.var, 1.0 / 3.0, 0.01);
  const auto c1 = moments(d.column("C1"));
  EXPECT_NEAR(c1.mean, 1.5, 0.01);
  const auto c2 = d.column("C2");
  std::array<int, 3> counts{};
  for (double c : c2) ++counts[static_cast<std::size_t>(c) - 1];
  for (int c : counts) EXPECT_NEAR(c / 1e5, 1.0 / 3.0, 0.01);

  const auto f = FriedmanTruth{}(d, d.all_rows());
  std::vector<double> resid(d.rows());
  for (std::size_t i = 0; i < resid.size(); ++i) resid[i] = d.response()[i] - f[i];
  const auto r = moments(resid);
  EXPECT_NEAR(r.mean, 0.0, 0.015);
  EXPECT_NEAR(r.var, 1.0, 0.03);
}

TEST(Friedman, ThreadAndBlockIndependence) {
  FriedmanDgpSpec spec;
  spec.n = 3 * kDgpBlockRows + 17;
  spec.seed = 2;
  spec.n_nuisance = 3;
  const auto a = gen_friedman(spec, 1);
  const auto b = gen_friedman(spec, 8);
  for (std::size_t j = 0; j < a.num_features(); ++j) {
    ASSERT_TRUE(std::ranges::equal(a.column(j), b.column(j))) << j;
  }
  ASSERT_TRUE(std::ranges::equal(a.response(), b.response()));
  // A shorter sample is a prefix of a longer one.
  FriedmanDgpSpec shorter = spec;
  shorter.n = 100;
  const auto c = gen_friedman(shorter);
  for (std::size_t i = 0; i < 100; ++i) ASSERT_EQ(c.response()[i], a.response()[i]);
}

TEST(Friedman, OracleTermsReproduceMean) {
  FriedmanDgpSpec spec;
  spec.n = 500;
  spec.seed = 3;
  spec.n_nuisance = 0;
  const auto d = gen_friedman(spec);
  const auto rows = d.all_rows();
  const LinearTermModel oracle{friedman_oracle_terms(), {0.0, 2.0, -4.0, 2.0, 2.0, 1.0, -2.0, 2.0, -1.0, 2.0}};
  const auto a = oracle.predict(d, rows);
  const auto b = FriedmanTruth{}(d, rows);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Overfit, MomentsAndCoefficients) {
  OverfitDgpSpec spec;
  spec.n = 200'000;
  spec.seed = 4;
  spec.n_nuisance = 5;
  const auto d = gen_overfit(spec);
  // Var(Y) = Var(X1 + 2 X1^2) + 4 + 25 = 1 + 8 + 4 + 25 = 38.
  EXPECT_NEAR(moments(d.response()).var, 38.0, 1.5);
  const auto m = fit_linear(d, d.all_rows(), overfit_quadratic_terms(5));
  EXPECT_NEAR(m.coefficients[1], 1.0, 0.05);
  EXPECT_NEAR(m.coefficients[2], 2.0, 0.05);
  EXPECT_NEAR(m.coefficients[3], 2.0, 0.05);
  for (std::size_t k = 4; k < m.coefficients.size(); ++k) EXPECT_NEAR(m.coefficients[k], 0.0, 0.05);
  EXPECT_THROW(
      [] {
        OverfitDgpSpec bad;
        bad.n_nuisance = 41;
        gen_overfit(bad);
      }(),
      ConfigError);
}

TEST(Overfit, CommonRandomNumbersAcrossNuisanceCounts) {
  OverfitDgpSpec a, b;
  a.seed = b.seed = 5;
  a.n_nuisance = 1;
  b.n_nuisance = 40;
  const auto da = gen_overfit(a), db = gen_overfit(b);
  EXPECT_TRUE(std::ranges::equal(da.response(), db.response()));
  EXPECT_TRUE(std::ranges::equal(da.column("X1"), db.column("X1")));
  EXPECT_TRUE(std::ranges::equal(da.column("Z1"), db.column("Z1")));
  EXPECT_EQ(db.num_features(), 42u);
}

TEST(Overfit, TrueImportanceByMonteCarlo) {
  OverfitDgpSpec spec;
  spec.n = 200'000;
  spec.seed = 6;
  spec.n_nuisance = 1;
  const auto d = gen_overfit(spec);
  const auto rows = d.all_rows();
  RngStream r(7, 0);
  EXPECT_NEAR(gvim_hat(OverfitTruth{}, d, rows, "X1", r), kOverfitTrueGvimX1, 0.5);
  EXPECT_NEAR(gvim_hat(OverfitTruth{}, d, rows, "X2", r), kOverfitTrueGvimX2, 0.3);
  EXPECT_EQ(gvim_hat(OverfitTruth{}, d, rows, "Z1", r), 0.0);
}

TEST(TrueGvim, AnalyticValues) {
  EXPECT_NEAR(*true_gvim_analytic("X1"), 7.968, 1e-12);
  EXPECT_NEAR(*true_gvim_analytic("X2"), std::numbers::pi * std::numbers::pi, 1e-12);
  EXPECT_NEAR(*true_gvim_analytic("X4"), 49.125, 1e-12);
  EXPECT_EQ(*true_gvim_analytic("X5"), 8.0);
  EXPECT_NEAR(*true_gvim_analytic("C2"), 28.0 / 9.0, 1e-12);
  EXPECT_NEAR(*true_gvim_analytic("U1"), 3.0972, 1e-4);
  EXPECT_EQ(*true_gvim_analytic("X30"), 0.0);
  EXPECT_FALSE(true_gvim_analytic("C1").has_value());
  EXPECT_FALSE(true_gvim_analytic("X53").has_value());
  // Si(pi) reference value.
  EXPECT_NEAR(detail::sine_integral(std::numbers::pi), 1.851937051982466, 1e-10);
}

TEST(TrueGvim, ShiftedNormalMoments) {
  // Binomial expansion with E[Z^2] = 1, E[Z^4] = 3, E[Z^6] = 15.
  EXPECT_NEAR(detail::shifted_normal_moment(2, 0.5), 1.25, 1e-12);
  EXPECT_NEAR(detail::shifted_normal_moment(3, 0.5), -(3 * 0.5 + 0.125), 1e-12);
  EXPECT_NEAR(detail::shifted_normal_moment(6, 0.5), 15 + 15 * 3 * 0.25 + 15 * 0.0625 + 0.015625, 1e-12);
}

TEST(TrueGvim, EmpiricalAgreesWithAnalytic) {
  FriedmanDgpSpec spec;
  spec.seed = 8;
  spec.n_nuisance = 2;
  const std::vector<std::string> features{"X1", "X2", "X4", "X5", "U1", "C2", "X8", "C1"};
  const auto t = true_gvim_empirical(spec, 100'000, features, 10);
  EXPECT_NEAR(t.e_orig_true, 1.0, 0.03);
  // Per-feature tolerances are several MC standard errors at this size.
  EXPECT_NEAR(t.at("X1"), 7.968, 0.2);
  EXPECT_NEAR(t.at("X2"), std::numbers::pi * std::numbers::pi, 0.4);
  EXPECT_NEAR(t.at("X4"), 49.125, 3.0);
  EXPECT_NEAR(t.at("X5"), 8.0, 0.2);
  EXPECT_NEAR(t.at("U1"), 3.0972, 0.08);
  EXPECT_NEAR(t.at("C2"), 28.0 / 9.0, 0.08);
  EXPECT_NEAR(t.at("X8"), 0.0, 1e-12);
  // C1 moves f by (2 - 4 X1) and a switch changes C1 with probability 1/2:
  // E[(2 - 4 X1)^2] / 2 = 2 (1 + 4 E[X1^2]) = 9.968.
  EXPECT_NEAR(t.at("C1"), 9.968, 0.25);
  EXPECT_THROW(true_gvim_empirical(spec, 100), ConfigError);
}

TEST(TrueGvim, TableUsesAnalyticWhereAvailable) {
  FriedmanDgpSpec spec;
  spec.seed = 9;
  spec.n_nuisance = 1;
  const auto t = true_gvim_table(spec, 10'000, {"X1", "C1"}, 2);
  EXPECT_EQ(t.entries[0].method, "analytic");
  EXPECT_EQ(t.entries[1].method, "empirical");
  EXPECT_EQ(t.e_orig_true, 1.0);
  EXPECT_THROW(t.at("zzz"), FeatureError);
}

TEST(TrueGvim, CsvRoundTrip) {
  TrueGvimTable t;
  t.entries = {{"X1", 7.968, "analytic"}, {"C1", 9.9812345678901234, "empirical"}};
  const auto dir = std::filesystem::path(GVIM_TEST_TMP) / "dgp";
  std::filesystem::create_directories(dir);
  write_true_gvim_csv(t, dir / "t.csv");
  const auto back = read_true_gvim_csv(dir / "t.csv");
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[1].value, t.entries[1].value);
  EXPECT_EQ(back.entries[1].method, "empirical");
  EXPECT_THROW(read_true_gvim_csv(dir / "missing.csv"), IoError);
}
