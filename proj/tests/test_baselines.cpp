#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "test_util.hpp"

using namespace powerlik;
using namespace testutil;

namespace {

StrataEstimates strata(Eigen::VectorXd est, Eigen::VectorXd var) {
  StrataEstimates s;
  s.k = static_cast<std::size_t>(est.size());
  s.estimates = std::move(est);
  s.variances = std::move(var);
  return s;
}

Dataset ctyz(const Eigen::MatrixXd& v, Source s = Source::Experimental) {
  return Dataset({"C", "Z", "T", "Y"}, {Role::EffectModifier, Role::Marginalized, Role::Treatment, Role::Outcome}, v, s);
}

Dataset scenario_a(std::size_t n, bool randomized, double psi, std::uint64_t seed) {
  ScenarioConfig c;
  c.n = n;
  c.randomized = randomized;
  c.psi = psi;
  c.seed = seed;
  return gen_scenario_a(c);
}

std::vector<double> stratum_mean_c(const Dataset& d, const StratificationScheme& s) {
  std::vector<double> sum(s.k(), 0.0), cnt(s.k(), 0.0);
  for (std::size_t i = 0; i < d.n(); ++i) {
    sum[s.assign(d, i)] += d.at(i, "C");
    cnt[s.assign(d, i)] += 1.0;
  }
  for (std::size_t k = 0; k < s.k(); ++k) sum[k] /= cnt[k];
  return sum;
}

}  // namespace

TEST(Stratification, DecilesProduceTenEqualStrata) {
  const auto d = scenario_a(10000, false, 0.0, 1);
  auto s = StratificationScheme::deciles("C");
  s.learn(d);
  std::vector<int> cnt(10, 0);
  for (auto k : s.assign_all(d)) ++cnt[k];
  for (int c : cnt) EXPECT_NEAR(c, 1000, 1);
  EXPECT_EQ(s.labels().size(), 10u);
}

TEST(Stratification, BinaryCrossQuintilesCoversTenStrata) {
  ScenarioConfig c;
  c.scenario = Scenario::B;
  c.n = 5000;
  const auto d = gen_scenario_b(c);
  auto s = StratificationScheme::binary_cross_quintiles("C5", "C1");
  s.learn(d);
  std::vector<int> cnt(10, 0);
  for (auto k : s.assign_all(d)) ++cnt[k];
  for (int k = 0; k < 10; ++k) EXPECT_GT(cnt[k], 300) << k;
}

TEST(Stratification, UnlearnedSchemeThrows) {
  const auto d = scenario_a(10, true, 0.0, 1);
  EXPECT_THROW(StratificationScheme::deciles("C").assign(d, 0), ConfigError);
}

TEST(Ipw, HandEvaluatedPairPerStratum) {
  Eigen::MatrixXd v(20, 4);
  for (int j = 0; j < 10; ++j) {
    v.row(2 * j) << j, 0, 1, 2;
    v.row(2 * j + 1) << j, 0, 0, 1;
  }
  const auto d = ctyz(v);
  auto s = StratificationScheme::deciles("C");
  s.learn(d);
  const auto r = ipw_strata(d, PropensityModel::known(0.5), s);
  for (int k = 0; k < 10; ++k) {
    EXPECT_NEAR(r.estimates[k], 1.0, 1e-15);
    EXPECT_EQ(r.counts[static_cast<std::size_t>(k)], 2u);
    // Contributions 4 and -2: sample variance 18, divided by n_k = 2.
    EXPECT_NEAR(r.variances[k], 9.0, 1e-12);
  }
}

TEST(Ipw, NullEffectWithinThreeStandardErrors) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> N01;
  std::bernoulli_distribution B(0.5);
  Eigen::MatrixXd v(10000, 4);
  for (int i = 0; i < 10000; ++i) v.row(i) << N01(rng), 0, B(rng) ? 1 : 0, N01(rng);
  const auto d = ctyz(v);
  auto s = StratificationScheme::deciles("C");
  s.learn(d);
  const auto r = ipw_strata(d, PropensityModel::known(0.5), s);
  for (int k = 0; k < 10; ++k) EXPECT_LT(std::abs(r.estimates[k]), 3.0 * std::sqrt(r.variances[k])) << k;
}

TEST(Ipw, ScenarioADecilesRecoverStratumEffects) {
  const auto d = scenario_a(100000, true, 0.0, 5);
  auto s = StratificationScheme::deciles("C");
  s.learn(d);
  const auto r = ipw_strata(d, PropensityModel::known(0.5), s);
  const auto mc = stratum_mean_c(d, s);
  for (int k = 0; k < 10; ++k)
    EXPECT_LT(std::abs(r.estimates[k] - 1.1 * mc[static_cast<std::size_t>(k)]), 3.0 * std::sqrt(r.variances[k])) << k;
}

TEST(Ipw, UnbiasedOverReplicatesWithKnownPropensity) {
  auto s = StratificationScheme::deciles("C");
  s.learn(scenario_a(100000, false, 0.0, 6));
  const int R = 2000;
  std::vector<Eigen::VectorXd> err;
  for (int r = 0; r < R; ++r) {
    const auto d = scenario_a(400, true, 0.0, derive_seed(6, {static_cast<std::uint64_t>(r)}));
    const auto est = ipw_strata(d, PropensityModel::known(0.5), s);
    const auto mc = stratum_mean_c(d, s);
    Eigen::VectorXd e(10);
    for (int k = 0; k < 10; ++k) e[k] = est.estimates[k] - 1.1 * mc[static_cast<std::size_t>(k)];
    err.push_back(e);
  }
  for (int k = 0; k < 10; ++k) {
    double m = 0, v = 0;
    for (const auto& e : err) m += e[k] / R;
    for (const auto& e : err) v += (e[k] - m) * (e[k] - m) / (R - 1);
    EXPECT_LT(std::abs(m), 3.0 * std::sqrt(v / R)) << k;
  }
}

TEST(Ipw, LogitPropensityAndClamping) {
  const auto d = scenario_a(5000, false, 0.0, 7);
  auto s = StratificationScheme::deciles("C");
  s.learn(d);
  std::size_t clamped = 99;
  const auto r = ipw_strata(d, PropensityModel::logit(Formula::parse("1 + C + Z + C:Z")), s, &clamped);
  EXPECT_EQ(r.k, 10u);
  EXPECT_LT(clamped, d.n());
  EXPECT_TRUE(r.variances.minCoeff() > 0.0);
}

TEST(Ipw, SparseStratumThrows) {
  Eigen::MatrixXd v(3, 4);
  v << 0, 0, 1, 1, 1, 0, 0, 1, 2, 0, 1, 1;
  const auto d = ctyz(v);
  auto s = StratificationScheme::deciles("C");
  s.learn(d);
  EXPECT_THROW(ipw_strata(d, PropensityModel::known(0.5), s), EmptyStratum);
}

TEST(GreenStrawderman, SmallDistanceReturnsObservational) {
  const auto e = strata(Eigen::VectorXd::Constant(10, 0.1), Eigen::VectorXd::Ones(10));
  const auto o = strata(Eigen::VectorXd::Zero(10), Eigen::VectorXd::Ones(10));
  for (auto v : {GsVariant::Delta1, GsVariant::Delta2}) EXPECT_LT((gs_shrink(e, o, v) - o.estimates).norm(), 1e-12);
}

TEST(GreenStrawderman, EqualInputsReturnCommonVector) {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(10, -1, 2);
  const auto e = strata(x, Eigen::VectorXd::Ones(10)), o = strata(x, Eigen::VectorXd::Ones(10));
  for (auto v : {GsVariant::Delta1, GsVariant::Delta2}) EXPECT_EQ(gs_shrink(e, o, v), x);
}

TEST(GreenStrawderman, HalfwayAtSixteen) {
  Eigen::VectorXd de = Eigen::VectorXd::Zero(10);
  de.head(4).setConstant(2.0);  // squared norm 16
  const auto e = strata(de, Eigen::VectorXd::Ones(10)), o = strata(Eigen::VectorXd::Zero(10), Eigen::VectorXd::Ones(10));
  EXPECT_LT((gs_shrink(e, o, GsVariant::Delta1) - 0.5 * de).norm(), 1e-12);
  // With identity covariance the matrix variant reduces to the scalar one.
  EXPECT_LT((gs_shrink(e, o, GsVariant::Delta2) - 0.5 * de).norm(), 1e-12);
}

TEST(GreenStrawderman, NeedsThreeStrata) {
  const auto e = strata(Eigen::Vector2d(1, 2), Eigen::Vector2d(1, 1));
  EXPECT_THROW(gs_shrink(e, e, GsVariant::Delta1), DimensionMismatch);
  const auto f = strata(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(1, 1, 1));
  EXPECT_THROW(gs_shrink(f, e, GsVariant::Delta1), DimensionMismatch);
}

TEST(Rosenman, SmallDistanceReturnsObservational) {
  const auto e = strata(Eigen::VectorXd::Constant(10, 0.9), Eigen::VectorXd::Ones(10));
  const auto o = strata(Eigen::VectorXd::Zero(10), Eigen::VectorXd::Ones(10));  // norm^2 8.1 <= 10
  EXPECT_LT((rosenman_shrink(e, o, RosenmanVariant::Kappa1) - o.estimates).norm(), 1e-12);
}

TEST(Rosenman, HalfwayAtTwenty) {
  Eigen::VectorXd de = Eigen::VectorXd::Zero(10);
  de.head(5).setConstant(2.0);  // squared norm 20
  const auto e = strata(de, Eigen::VectorXd::Ones(10)), o = strata(Eigen::VectorXd::Zero(10), Eigen::VectorXd::Ones(10));
  EXPECT_LT((rosenman_shrink(e, o, RosenmanVariant::Kappa1) - 0.5 * de).norm(), 1e-12);
  EXPECT_LT((rosenman_shrink(e, o, RosenmanVariant::Kappa2) - 0.5 * de).norm(), 1e-12);
}

TEST(Shrinkage, CommonFactorOutputsLieOnSegment) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> N01;
  for (int rep = 0; rep < 200; ++rep) {
    const Eigen::VectorXd te = Eigen::VectorXd::NullaryExpr(10, [&] { return 2.0 * N01(rng); });
    const Eigen::VectorXd to = Eigen::VectorXd::NullaryExpr(10, [&] { return N01(rng); });
    const Eigen::VectorXd var = Eigen::VectorXd::NullaryExpr(10, [&] { return 0.2 + std::abs(N01(rng)); });
    const auto e = strata(te, var), o = strata(to, var);
    for (const Eigen::VectorXd& out : {gs_shrink(e, o, GsVariant::Delta1), rosenman_shrink(e, o, RosenmanVariant::Kappa1)}) {
      // out = to + f (te - to) with a single f in [0, 1].
      const Eigen::VectorXd d = te - to;
      const double f = (out - to).dot(d) / d.squaredNorm();
      EXPECT_GE(f, -1e-12);
      EXPECT_LE(f, 1.0 + 1e-12);
      EXPECT_LT((out - (to + f * d)).norm(), 1e-10);
    }
  }
}

TEST(Shrinkage, EquivariantUnderStratumPermutation) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> N01;
  const Eigen::VectorXd te = Eigen::VectorXd::NullaryExpr(10, [&] { return 3.0 * N01(rng); });
  const Eigen::VectorXd to = Eigen::VectorXd::NullaryExpr(10, [&] { return N01(rng); });
  const Eigen::VectorXd var = Eigen::VectorXd::NullaryExpr(10, [&] { return 0.2 + std::abs(N01(rng)); });
  Eigen::PermutationMatrix<Eigen::Dynamic> P(10);
  P.setIdentity();
  std::shuffle(P.indices().data(), P.indices().data() + 10, rng);
  const auto e = strata(te, var), o = strata(to, var);
  const auto pe = strata(P * te, P * var), po = strata(P * to, P * var);
  for (auto v : {GsVariant::Delta1, GsVariant::Delta2})
    EXPECT_LT((P * gs_shrink(e, o, v) - gs_shrink(pe, po, v)).norm(), 1e-10);
  for (auto v : {RosenmanVariant::Kappa1, RosenmanVariant::Kappa2})
    EXPECT_LT((P * rosenman_shrink(e, o, v) - rosenman_shrink(pe, po, v)).norm(), 1e-10);
}

TEST(Rosenman, DominatesExperimentalUnderZeroBias) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> N01;
  const int K = 10, R = 2000;
  const Eigen::VectorXd truth = Eigen::VectorXd::LinSpaced(K, -1, 1);
  double risk_k = 0, risk_e = 0;
  for (int r = 0; r < R; ++r) {
    const Eigen::VectorXd te = truth + Eigen::VectorXd::NullaryExpr(K, [&] { return N01(rng); });
    const Eigen::VectorXd to = truth + Eigen::VectorXd::NullaryExpr(K, [&] { return 0.5 * N01(rng); });
    const auto out = rosenman_shrink(strata(te, Eigen::VectorXd::Ones(K)), strata(to, Eigen::VectorXd::Constant(K, 0.25)),
                                     RosenmanVariant::Kappa1);
    risk_k += (out - truth).squaredNorm() / R;
    risk_e += (te - truth).squaredNorm() / R;
  }
  EXPECT_LE(risk_k, risk_e);
}

TEST(Oberst, ZeroBiasWeight) {
  const auto r = oberst_combine(1.3, 4.0, 1.3, 1.0);
  EXPECT_NEAR(r.lambda, 0.8, 1e-15);
  EXPECT_NEAR(r.tau, 1.3, 1e-15);
}

TEST(Oberst, Limits) {
  const auto far = oberst_combine(0.0, 1.0, 1e8, 1.0);
  EXPECT_LT(far.lambda, 1e-15);
  EXPECT_NEAR(far.tau, 0.0, 1e-6);
  EXPECT_LT(oberst_combine(1.0, 1e-12, 2.0, 0.5).lambda, 1e-11);
  EXPECT_THROW(oberst_combine(1.0, 0.0, 2.0, 0.5), DomainError);
  EXPECT_THROW(oberst_combine(1.0, 1.0, 2.0, -0.5), DomainError);
}

TEST(Oberst, LambdaInUnitInterval) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(-5, 5);
  for (int i = 0; i < 1000; ++i) {
    const auto r = oberst_combine(U(rng), std::abs(U(rng)) + 1e-9, U(rng), std::abs(U(rng)));
    EXPECT_GE(r.lambda, 0.0);
    EXPECT_LE(r.lambda, 1.0);
  }
}

TEST(Kallus, UnconfoundedLargeSampleHasNoBiasCorrection) {
  const auto d_o = scenario_a(100000, false, 0.0, 13);
  const auto d_e = scenario_a(100000, true, 0.0, 14);
  auto s = StratificationScheme::deciles("C");
  s.learn(d_o);
  const auto r = kallus_grounding(d_o, d_e, s, KallusSpec::for_scenario(Scenario::A));
  EXPECT_LT(r.beta.norm(), 0.05) << r.beta.transpose();
}

TEST(Kallus, NullObservationalModelReducesToLeastSquares) {
  // Noiseless observational outcomes with no treatment effect give m1 = m0.
  std::mt19937_64 rng(15);
  std::normal_distribution<double> N01;
  Eigen::MatrixXd vo(200, 4);
  for (int i = 0; i < 200; ++i) {
    const double c = N01(rng), z = N01(rng);
    vo.row(i) << c, z, i % 2, 0.5 + c - 2 * z;
  }
  const auto d_e = scenario_a(300, true, 0.0, 16);
  const auto d_o = ctyz(vo, Source::Observational);
  auto s = StratificationScheme::deciles("C");
  s.learn(d_o);
  const auto r = kallus_grounding(d_o, d_e, s, KallusSpec::for_scenario(Scenario::A));
  Eigen::MatrixXd V(300, 3);
  Eigen::VectorXd q(300);
  for (int i = 0; i < 300; ++i) {
    V.row(i) << 1.0, d_e.at(i, "C"), d_e.at(i, "Z");
    q[i] = (d_e.at(i, "T") == 1.0 ? 2.0 : -2.0) * d_e.at(i, "Y");
  }
  const Eigen::VectorXd beta = (V.transpose() * V).ldlt().solve(V.transpose() * q);
  EXPECT_LT((r.beta - beta).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Kallus, StrataRecoverEffectsAtPsiZero) {
  const auto d_o = scenario_a(100000, false, 0.0, 17);
  const auto d_e = scenario_a(20000, true, 0.0, 18);
  auto s = StratificationScheme::deciles("C");
  s.learn(d_o);
  const auto r = kallus_grounding(d_o, d_e, s, KallusSpec::for_scenario(Scenario::A));
  const auto mc = stratum_mean_c(d_e, s);
  for (int k = 0; k < 10; ++k) EXPECT_NEAR(r.strata.estimates[k], 1.1 * mc[static_cast<std::size_t>(k)], 0.06) << k;
}

TEST(StrataAverage, CountWeighted) {
  EXPECT_NEAR(strata_average(Eigen::Vector3d(1, 2, 4), {1, 1, 2}), 11.0 / 4.0, 1e-15);
}
