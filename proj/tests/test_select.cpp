#include <gtest/gtest.h>

#include <algorithm>

#include "test_util.hpp"

using namespace powerlik;
using namespace testutil;

namespace {

struct Pair {
  Dataset d_e, d_o;
};

Pair make_pair(std::size_t n_e, std::size_t n_o, double psi, std::uint64_t seed) {
  ScenarioConfig c;
  c.psi = psi;
  c.n = n_e;
  c.randomized = true;
  c.seed = derive_seed(seed, {1});
  Pair p{gen_scenario_a(c), {}};
  c.n = n_o;
  c.randomized = false;
  c.seed = derive_seed(seed, {2});
  p.d_o = gen_scenario_a(c);
  return p;
}

const FrugalModelSpec kSpecE = default_spec(Scenario::A, Source::Experimental);
const FrugalModelSpec kSpecO = default_spec(Scenario::A, Source::Observational);

}  // namespace

TEST(EtaGrid, EvenlySpacedFromZeroToOne) {
  const auto g = eta_grid(20);
  ASSERT_EQ(g.size(), 21u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 1.0);
  EXPECT_DOUBLE_EQ(g[1], 0.05);
  EXPECT_THROW(eta_grid(0), ConfigError);
}

TEST(ArgmaxFirst, MonotoneGridPicksLastPoint) {
  EXPECT_EQ(argmax_first({1, 2, 3, 4}), 3u);
}

TEST(ArgmaxFirst, TiesGoToSmallestEta) {
  EXPECT_EQ(argmax_first({5, 5, 5}), 0u);
  EXPECT_EQ(argmax_first({1, 3, 2, 3}), 1u);
}

TEST(SelectEta, SelectedPointAttainsGridMaximum) {
  const auto p = make_pair(250, 2500, 0.5, 1);
  SelectOptions o;
  o.draws = 500;
  const auto s = select_eta(p.d_e, p.d_o, kSpecE, kSpecO, o);
  ASSERT_EQ(s.grid.size(), 21u);
  const auto it = std::find(s.grid.begin(), s.grid.end(), s.eta_star);
  ASSERT_NE(it, s.grid.end());
  const double best = s.elpd[static_cast<std::size_t>(it - s.grid.begin())];
  for (double e : s.elpd) EXPECT_LE(e, best);
  for (double d : s.d_waic) EXPECT_GE(d, 0.0);
}

TEST(SelectEta, RerunWithSameSeedIsIdentical) {
  const auto p = make_pair(150, 1000, 0.75, 2);
  SelectOptions o;
  o.draws = 300;
  o.seed = 17;
  const auto a = select_eta(p.d_e, p.d_o, kSpecE, kSpecO, o);
  const auto b = select_eta(p.d_e, p.d_o, kSpecE, kSpecO, o);
  EXPECT_EQ(a.eta_star, b.eta_star);
  EXPECT_EQ(a.elpd, b.elpd);
}

TEST(SelectEta, RefiningGridNeverLowersMaximum) {
  const auto p = make_pair(200, 2000, 0.5, 3);
  const auto fe = fit_frugal_mle(p.d_e, kSpecE), fo = fit_frugal_mle(p.d_o, kSpecO);
  SelectOptions o;
  o.draws = 400;
  for (std::size_t N : {2u, 5u, 10u}) {
    o.grid_size = N;
    const auto coarse = select_eta_from_fits(p.d_e, kSpecE, fe, fo, o);
    o.grid_size = 2 * N;
    const auto fine = select_eta_from_fits(p.d_e, kSpecE, fe, fo, o);
    EXPECT_GE(*std::max_element(fine.elpd.begin(), fine.elpd.end()),
              *std::max_element(coarse.elpd.begin(), coarse.elpd.end()));
    // Shared grid points reuse their draws.
    for (std::size_t i = 0; i <= N; ++i) EXPECT_EQ(coarse.elpd[i], fine.elpd[2 * i]);
  }
}

TEST(SelectEta, ErrorsNameTheFailingEta) {
  const auto p = make_pair(100, 500, 0.0, 4);
  const auto fe = fit_frugal_mle(p.d_e, kSpecE);
  auto fo = fit_frugal_mle(p.d_o, kSpecO);
  fo.fisher_theta = -100.0 * fe.fisher_theta;  // indefinite once eta > 0.01
  SelectOptions o;
  o.draws = 50;
  try {
    select_eta_from_fits(p.d_e, kSpecE, fe, fo, o);
    FAIL() << "expected NonPositiveDefinite";
  } catch (const NonPositiveDefinite& e) {
    EXPECT_NE(std::string(e.what()).find("eta = 0.05"), std::string::npos) << e.what();
  }
}

TEST(SelectEta, ExactLooMethodRuns) {
  const auto p = make_pair(25, 300, 0.0, 5);
  SelectOptions o;
  o.method = ElpdMethod::ExactLOO;
  o.grid_size = 4;
  o.draws = 100;
  const auto s = select_eta(p.d_e, p.d_o, kSpecE, kSpecO, o);
  EXPECT_EQ(s.method, ElpdMethod::ExactLOO);
  EXPECT_EQ(s.grid.size(), 5u);
  for (double d : s.d_waic) EXPECT_TRUE(std::isnan(d));
}

TEST(SelectEta, InvalidDatasetsAreRejected) {
  auto p = make_pair(50, 200, 0.0, 6);
  std::vector<std::size_t> treated;
  for (std::size_t i = 0; i < p.d_e.n(); ++i)
    if (p.d_e.at(i, "T") == 1.0) treated.push_back(i);
  EXPECT_THROW(select_eta(p.d_e.select_rows(treated), p.d_o, kSpecE, kSpecO, {}), InvalidDataset);
}

TEST(SelectEta, ConfoundingShiftsSelectionDownward) {
  // Same replicate seeds at psi = 0 and psi = 1; one-sided rank-sum test.
  const std::size_t R = 100;
  std::vector<double> e0, e1;
  SelectOptions o;
  o.draws = 1000;
  for (std::size_t r = 0; r < R; ++r) {
    o.seed = derive_seed(500, {r, 3});
    for (double psi : {0.0, 1.0}) {
      const auto p = make_pair(250, 2500, psi, derive_seed(500, {r}));
      (psi == 0.0 ? e0 : e1).push_back(select_eta(p.d_e, p.d_o, kSpecE, kSpecO, o).eta_star);
    }
  }
  // Mann-Whitney U with midranks and the tie-corrected normal approximation.
  std::vector<std::pair<double, int>> all;
  for (double v : e0) all.emplace_back(v, 0);
  for (double v : e1) all.emplace_back(v, 1);
  std::sort(all.begin(), all.end());
  double rank_sum0 = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second == 0) rank_sum0 += mid;
    i = j;
  }
  const double n0 = R, n1 = R, N = n0 + n1;
  const double U = rank_sum0 - n0 * (n0 + 1) / 2;
  const double sd = std::sqrt(n0 * n1 / 12.0 * ((N + 1) - tie_term / (N * (N - 1))));
  const double z = (U - n0 * n1 / 2) / sd;
  EXPECT_GT(z, 2.326) << "rank-sum z = " << z;
}
