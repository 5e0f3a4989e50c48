#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_util.hpp"

using namespace powerlik;
using namespace testutil;

namespace {

ScenarioConfig cfg(Scenario s, std::size_t n, bool randomized, double psi, std::uint64_t seed) {
  ScenarioConfig c;
  c.scenario = s;
  c.n = n;
  c.randomized = randomized;
  c.psi = psi;
  c.seed = seed;
  return c;
}

double corr(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Asymptotic Kolmogorov tail probability P(K > lambda).
double kolmogorov_tail(double lambda) {
  if (lambda < 0.2) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) s += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(s, 0.0, 1.0);
}

double ks_one_sample_normal(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = normal_cdf(x[i]);
    d = std::max({d, (i + 1) / n - F, F - i / n});
  }
  return kolmogorov_tail((std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d);
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  const double ne = na * nb / (na + nb);
  return kolmogorov_tail((std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d);
}

}  // namespace

TEST(ScenarioA, ZMarginAtZeroC) {
  const auto d = gen_scenario_a(cfg(Scenario::A, 1000000, false, 0.0, 1));
  double s = 0;
  int n = 0;
  for (std::size_t i = 0; i < d.n(); ++i)
    if (std::abs(d.at(i, "C")) < 0.01) s += d.at(i, "Z"), ++n;
  // The window holds ~8000 rows, so its mean has SE ~0.011.
  EXPECT_NEAR(s / n, 0.2, 0.05);
  // Using every row after removing the linear C term pins the intercept.
  EXPECT_NEAR((d.column("Z") - 0.6 * d.column("C")).mean(), 0.2, 0.01);
}

TEST(ScenarioA, CopulaCorrelationGivenTreatment) {
  const auto d = gen_scenario_a(cfg(Scenario::A, 1000000, true, 0.0, 2));
  std::vector<double> sz[2], sy[2];
  for (std::size_t i = 0; i < d.n(); ++i) {
    const double c = d.at(i, "C"), t = d.at(i, "T");
    const int k = static_cast<int>(t);
    sz[k].push_back(d.at(i, "Z") - 0.2 - 0.6 * c);
    sy[k].push_back(d.at(i, "Y") - 0.6 - 0.2 * c - 1.1 * c * t);
  }
  EXPECT_NEAR(corr(sz[1], sy[1]), 2.0 * expit(3.5) - 1.0, 0.01);
  EXPECT_NEAR(2.0 * expit(3.5) - 1.0, 0.9414, 1e-4);
  EXPECT_NEAR(corr(sz[0], sy[0]), 2.0 * expit(1.0) - 1.0, 0.01);
}

TEST(ScenarioA, RandomizedTreatmentRate) {
  const auto d = gen_scenario_a(cfg(Scenario::A, 100000, true, 0.0, 3));
  EXPECT_NEAR(d.column("T").mean(), 0.5, 0.005);
}

TEST(ScenarioA, HiddenConfounderIsNotEmitted) {
  const auto c = cfg(Scenario::A, 20000, true, 2.0, 4);
  const auto d = gen_scenario_a(c);
  EXPECT_EQ(d.names(), (std::vector<std::string>{"C", "Z", "T", "Y"}));
  const auto u = audit_hidden_confounder(c);
  ASSERT_EQ(u.size(), d.n());
  // Y - mu_y(C, T) has mean psi * U plus zero-mean noise.
  double s1 = 0, s0 = 0, n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    const double c0 = d.at(i, "C"), t = d.at(i, "T");
    const double r = d.at(i, "Y") - 0.6 - 0.2 * c0 - 1.1 * c0 * t;
    (u[i] == 1.0 ? s1 : s0) += r;
    (u[i] == 1.0 ? n1 : n0) += 1;
  }
  EXPECT_NEAR(s1 / n1 - s0 / n0, 2.0, 0.1);
}

TEST(ScenarioA, SeededDeterminism) {
  const auto c = cfg(Scenario::A, 500, false, 0.5, 5);
  EXPECT_TRUE((gen_scenario_a(c).values().array() == gen_scenario_a(c).values().array()).all());
  auto b = cfg(Scenario::B, 500, true, 0.5, 5);
  EXPECT_TRUE((gen_scenario_b(b).values().array() == gen_scenario_b(b).values().array()).all());
}

TEST(ScenarioA, CausalMarginUnderRandomizationPassesKs) {
  const auto d = gen_scenario_a(cfg(Scenario::A, 100000, true, 0.0, 6));
  for (double t : {0.0, 1.0}) {
    std::vector<double> r;
    for (std::size_t i = 0; i < d.n(); ++i)
      if (d.at(i, "T") == t) {
        const double c = d.at(i, "C");
        r.push_back(d.at(i, "Y") - 0.6 - 0.2 * c - 1.1 * c * t);
      }
    EXPECT_GT(ks_one_sample_normal(r), 0.01) << "t = " << t;
  }
}

TEST(ScenarioA, ObservationalAndRandomizedShareOutcomeLawAtPsiZero) {
  // Conditional on (T, C, Z), Y - E[Y | T, C, Z] has the same law in both
  // designs; compare with a two-sample KS test per treatment arm.
  const auto o = gen_scenario_a(cfg(Scenario::A, 100000, false, 0.0, 7));
  const auto r = gen_scenario_a(cfg(Scenario::A, 100000, true, 0.0, 8));
  auto resid = [](const Dataset& d, double t) {
    const double rho = std::tanh(0.5 * (1.0 + 2.5 * t));
    std::vector<double> out;
    for (std::size_t i = 0; i < d.n(); ++i) {
      if (d.at(i, "T") != t) continue;
      const double c = d.at(i, "C");
      out.push_back(d.at(i, "Y") - 0.6 - 0.2 * c - 1.1 * c * t - rho * (d.at(i, "Z") - 0.2 - 0.6 * c));
    }
    return out;
  };
  for (double t : {0.0, 1.0}) EXPECT_GT(ks_two_sample(resid(o, t), resid(r, t)), 0.01) << "t = " << t;
}

TEST(ScenarioB, CopulaCorrelations) {
  const auto d = gen_scenario_b(cfg(Scenario::B, 1000000, true, 0.0, 9));
  static const double b0[6] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, b1[6] = {0.7, 0.8, 0.9, 1.0, 1.1, 1.2};
  std::vector<double> z1[2], z2[2], y[2];
  for (std::size_t i = 0; i < d.n(); ++i) {
    const double t = d.at(i, "T");
    const int k = static_cast<int>(t);
    const double c[6] = {1.0, d.at(i, "C1"), d.at(i, "C2"), d.at(i, "C3"), d.at(i, "C4"), d.at(i, "C5")};
    double mu = 0;
    for (int j = 0; j < 6; ++j) mu += c[j] * (b0[j] + t * b1[j]);
    z1[k].push_back(d.at(i, "Z1") - c[1]);
    z2[k].push_back(d.at(i, "Z2") - c[4]);
    y[k].push_back(d.at(i, "Y") - mu);
  }
  EXPECT_NEAR(corr(z1[1], y[1]), 0.76, 0.01);
  EXPECT_NEAR(corr(z1[0], y[0]), 0.46, 0.01);
  EXPECT_NEAR(corr(z2[1], y[1]), 0.76, 0.01);
  EXPECT_NEAR(corr(z1[0], z2[0]), std::tanh(0.5), 0.01);
}

TEST(ScenarioB, ArmDifferenceOfRegressionsRecoversEffectCoefficients) {
  const auto d = gen_scenario_b(cfg(Scenario::B, 1000000, true, 0.0, 10));
  const auto X = design_matrix(d, Formula::parse("1 + C1 + C2 + C3 + C4 + C5"));
  Eigen::VectorXd coef[2];
  for (int t = 0; t < 2; ++t) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < d.n(); ++i)
      if (d.at(i, "T") == t) rows.push_back(i);
    Eigen::MatrixXd Xt(rows.size(), 6);
    Eigen::VectorXd yt(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      Xt.row(k) = X.row(rows[k]);
      yt[k] = d.at(rows[k], "Y");
    }
    coef[t] = (Xt.transpose() * Xt).ldlt().solve(Xt.transpose() * yt);
  }
  const Eigen::VectorXd diff = coef[1] - coef[0];
  const double expect[6] = {0.7, 0.8, 0.9, 1.0, 1.1, 1.2};
  for (int j = 0; j < 6; ++j) EXPECT_NEAR(diff[j], expect[j], 0.02) << j;
}

TEST(NormalMeans, LocationShift) {
  const auto s = gen_normal_means(1000, 10000, 0.5, 1.0, 0.0, 2.0, 11);
  EXPECT_EQ(s.delta, 1.0);
  EXPECT_NEAR(s.o.mean(), 1.5, 3.0 * 2.0 / std::sqrt(10000.0));
  EXPECT_NEAR(s.e.mean(), 0.5, 3.0 * 2.0 / std::sqrt(1000.0));
  const auto z = gen_normal_means(10, 10, 0.5, 0.0, 0.0, 1.0, 12);
  EXPECT_EQ(z.delta, 0.0);
}

TEST(NormalMeans, ShiftScalesWithObservationalSize) {
  EXPECT_NEAR(normal_means_shift(2.0, 0.5, 10000), 0.02, 1e-15);
  EXPECT_THROW(gen_normal_means(1, 1, 0, 1, -1.0, 1, 1), ConfigError);
}

TEST(Semisynth, ExperimentalSizeRoundsDown) {
  const auto rct = gen_scenario_a(cfg(Scenario::A, 2811, true, 0.0, 13));
  SemisynthConfig sc;
  sc.n_treated = 500;
  const auto [d_e, d_o] = make_semisynthetic(rct, sc, 1);
  EXPECT_EQ(d_e.n(), 281u);
  std::size_t treated = 0;
  for (std::size_t i = 0; i < d_o.n(); ++i) treated += d_o.at(i, "T") == 1.0;
  EXPECT_EQ(treated, 500u);
  EXPECT_EQ(d_e.source(), Source::Experimental);
  EXPECT_EQ(d_o.source(), Source::Observational);
}

TEST(Semisynth, ControlsOutsideTheExperimentAllEnterObservational) {
  const auto rct = gen_scenario_a(cfg(Scenario::A, 3000, true, 0.0, 14));
  const auto [d_e, d_o] = make_semisynthetic(rct, {}, 2);
  std::size_t ctrl_all = 0, ctrl_e = 0, ctrl_o = 0;
  for (std::size_t i = 0; i < rct.n(); ++i) ctrl_all += rct.at(i, "T") == 0.0;
  for (std::size_t i = 0; i < d_e.n(); ++i) ctrl_e += d_e.at(i, "T") == 0.0;
  for (std::size_t i = 0; i < d_o.n(); ++i) ctrl_o += d_o.at(i, "T") == 0.0;
  EXPECT_EQ(ctrl_e + ctrl_o, ctrl_all);
}

TEST(Semisynth, InsufficientTreatedThrows) {
  const auto rct = gen_scenario_a(cfg(Scenario::A, 500, true, 0.0, 15));
  EXPECT_THROW(make_semisynthetic(rct, {}, 3), InsufficientTreated);
}

TEST(Semisynth, NoDownweightingLeavesNaiveContrastUnbiased) {
  SemisynthConfig sc;
  sc.downweight = 1.0;
  std::vector<double> shift;
  for (std::uint64_t r = 0; r < 200; ++r) {
    const auto rct = gen_scenario_a(cfg(Scenario::A, 5000, true, 0.0, derive_seed(16, {r})));
    const auto [d_e, d_o] = make_semisynthetic(rct, sc, derive_seed(17, {r}));
    shift.push_back(naive_difference(d_o) - naive_difference(rct));
  }
  const auto m = mse_decompose(shift, 0.0);
  const double mean = std::accumulate(shift.begin(), shift.end(), 0.0) / 200.0;
  EXPECT_LT(std::abs(mean), 3.0 * std::sqrt(m.variance / 199.0));
}

TEST(Semisynth, DownweightingInflatesNaiveContrast) {
  std::vector<double> shift;
  for (std::uint64_t r = 0; r < 200; ++r) {
    const auto rct = gen_scenario_a(cfg(Scenario::A, 5000, true, 0.0, derive_seed(18, {r})));
    const auto [d_e, d_o] = make_semisynthetic(rct, {}, derive_seed(19, {r}));
    shift.push_back(naive_difference(d_o) - naive_difference(rct));
  }
  const auto m = mse_decompose(shift, 0.0);
  const double mean = std::accumulate(shift.begin(), shift.end(), 0.0) / 200.0;
  EXPECT_GT(mean, 5.0 * std::sqrt(m.variance / 199.0));
}

TEST(Semisynth, ConfigValidation) {
  const auto rct = gen_scenario_a(cfg(Scenario::A, 5000, true, 0.0, 20));
  SemisynthConfig sc;
  sc.frac_exp = 1.0;
  EXPECT_THROW(make_semisynthetic(rct, sc, 1), ConfigError);
  sc = {};
  sc.downweight = 0.0;
  EXPECT_THROW(make_semisynthetic(rct, sc, 1), ConfigError);
}

TEST(SampleQuantile, MatchesLinearInterpolation) {
  EXPECT_DOUBLE_EQ(sample_quantile({4, 1, 3, 2}, 0.3), 1.9);
  EXPECT_DOUBLE_EQ(sample_quantile({5}, 0.7), 5.0);
}
