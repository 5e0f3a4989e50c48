#pragma once

// Data-generating processes. Sampling follows the frugal order: C, the Z
// margins, T, then Y from its causal margin coupled to the Z normal scores
// through the Gaussian copula.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "powerlik/density.hpp"
#include "powerlik/errors.hpp"
#include "powerlik/model.hpp"
#include "powerlik/rng.hpp"

namespace powerlik {

enum class Scenario { A, B, NormalMeans };

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::A: return "A";
    case Scenario::B: return "B";
    case Scenario::NormalMeans: return "normal_means";
  }
  return "?";
}

inline Scenario parse_scenario(std::string_view s) {
  if (s == "A" || s == "a") return Scenario::A;
  if (s == "B" || s == "b") return Scenario::B;
  if (s == "normal_means" || s == "NormalMeans") return Scenario::NormalMeans;
  throw ConfigError("unknown scenario '" + std::string(s) + "'");
}

struct ScenarioConfig {
  Scenario scenario = Scenario::A;
  double psi = 0.0;
  std::size_t n = 250;
  bool randomized = false;
  std::uint64_t seed = 1;

  void validate() const {
    if (n < 1) throw ConfigError("scenario: n must be at least 1");
    if (!(psi >= 0.0)) throw ConfigError("scenario: psi must be nonnegative");
  }
};

namespace detail {

inline Dataset draw_scenario_a(const ScenarioConfig& cfg, std::vector<double>* hidden) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> N01(0.0, 1.0);
  std::uniform_real_distribution<double> U01(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(cfg.n);
  Eigen::MatrixXd v(n, 4);
  if (hidden) hidden->resize(cfg.n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = U01(rng) < 0.5 ? 1.0 : 0.0;
    const double c = N01(rng);
    const double ez = N01(rng);
    const double z = 0.2 + 0.6 * c + ez;
    const double pt = cfg.randomized ? 0.5 : expit(0.5 + 0.1 * c + 0.6 * z + 0.4 * c * z + cfg.psi * u);
    const double t = U01(rng) < pt ? 1.0 : 0.0;
    const double rho = correlation_link(1.0 + 2.5 * t);
    const double zy = rho * ez + std::sqrt(1.0 - rho * rho) * N01(rng);
    const double y = 0.6 + 0.2 * c + 1.1 * c * t + cfg.psi * u + zy;
    v.row(i) << c, z, t, y;
    if (hidden) (*hidden)[static_cast<std::size_t>(i)] = u;
  }
  return Dataset({"C", "Z", "T", "Y"}, {Role::EffectModifier, Role::Marginalized, Role::Treatment, Role::Outcome},
                 std::move(v), cfg.randomized ? Source::Experimental : Source::Observational);
}

inline Dataset draw_scenario_b(const ScenarioConfig& cfg, std::vector<double>* hidden) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> N01(0.0, 1.0);
  std::uniform_real_distribution<double> U01(0.0, 1.0);
  static const double b0[6] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  static const double b1[6] = {0.7, 0.8, 0.9, 1.0, 1.1, 1.2};
  const double r12 = correlation_link(1.0);
  const auto n = static_cast<Eigen::Index>(cfg.n);
  Eigen::MatrixXd v(n, 9);
  if (hidden) hidden->resize(cfg.n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = U01(rng) < 0.5 ? 1.0 : 0.0;
    double c[6] = {1.0, N01(rng), N01(rng), N01(rng), 0.0, 0.0};
    c[4] = U01(rng) < 0.5 ? 1.0 : 0.0;
    c[5] = U01(rng) < 0.5 ? 1.0 : 0.0;
    // (Z1, Z2) scores with correlation r12, drawn before T.
    const double e1 = N01(rng);
    const double e2 = r12 * e1 + std::sqrt(1.0 - r12 * r12) * N01(rng);
    const double z1 = c[1] + e1, z2 = c[4] + e2;
    const double pt = cfg.randomized
                          ? 0.5
                          : expit(0.5 + 0.1 * c[1] + 0.6 * z1 + 0.4 * c[5] * z1 + 0.1 * c[1] * z1 + cfg.psi * u);
    const double t = U01(rng) < pt ? 1.0 : 0.0;
    // Y score given the Z scores under the trivariate copula with equal
    // Y-Z correlations r: regression weight r / (1 + r12) on each Z score.
    const double r = correlation_link(1.0 + t);
    const double w = r / (1.0 + r12);
    const double cond_var = 1.0 - 2.0 * r * w;
    const double zy = w * (e1 + e2) + std::sqrt(cond_var) * N01(rng);
    double mu = cfg.psi * u;
    for (int j = 0; j < 6; ++j) mu += c[j] * (b0[j] + t * b1[j]);
    v.row(i) << c[1], c[2], c[3], c[4], c[5], z1, z2, t, mu + zy;
    if (hidden) (*hidden)[static_cast<std::size_t>(i)] = u;
  }
  return Dataset({"C1", "C2", "C3", "C4", "C5", "Z1", "Z2", "T", "Y"},
                 {Role::EffectModifier, Role::EffectModifier, Role::EffectModifier, Role::EffectModifier,
                  Role::EffectModifier, Role::Marginalized, Role::Marginalized, Role::Treatment, Role::Outcome},
                 std::move(v), cfg.randomized ? Source::Experimental : Source::Observational);
}

}  // namespace detail

inline Dataset gen_scenario_a(const ScenarioConfig& cfg) { return detail::draw_scenario_a(cfg, nullptr); }
inline Dataset gen_scenario_b(const ScenarioConfig& cfg) { return detail::draw_scenario_b(cfg, nullptr); }

inline Dataset generate(const ScenarioConfig& cfg) {
  switch (cfg.scenario) {
    case Scenario::A: return gen_scenario_a(cfg);
    case Scenario::B: return gen_scenario_b(cfg);
    case Scenario::NormalMeans: break;
  }
  throw ConfigError("generate: the normal-means scenario produces samples, not a dataset");
}

#ifdef POWERLIK_TEST_AUDIT
// Test builds only: the hidden confounder U behind a generated dataset.
inline std::vector<double> audit_hidden_confounder(const ScenarioConfig& cfg) {
  std::vector<double> u;
  if (cfg.scenario == Scenario::A) detail::draw_scenario_a(cfg, &u);
  else detail::draw_scenario_b(cfg, &u);
  return u;
}
#endif

// Default frugal specifications matching each scenario's generating process.
// The treatment model of the randomized arm is intercept-only.
inline FrugalModelSpec default_spec(Scenario s, Source source) {
  FrugalModelSpec spec;
  const bool exp = source == Source::Experimental;
  if (s == Scenario::A) {
    spec.past = {{"Z", Formula::parse("1 + C"), Family::GaussianIdentity},
                 {"T", Formula::parse(exp ? "1" : "1 + C + Z + C:Z"), Family::BernoulliLogit}};
    spec.causal = Formula::parse("1 + C + T + C:T");
    spec.copula.members = {"Z"};
  } else if (s == Scenario::B) {
    spec.past = {{"Z1", Formula::parse("1 + C1"), Family::GaussianIdentity},
                 {"Z2", Formula::parse("1 + C4"), Family::GaussianIdentity},
                 {"T", Formula::parse(exp ? "1" : "1 + C1 + Z1 + C5:Z1 + C1:Z1"), Family::BernoulliLogit}};
    spec.causal = Formula::parse("1 + C1 + C2 + C3 + C4 + C5 + T + C1:T + C2:T + C3:T + C4:T + C5:T");
    spec.copula.members = {"Z1", "Z2"};
  } else {
    throw ConfigError("default_spec: no frugal model for the normal-means scenario");
  }
  spec.copula.yz_link = Formula::parse("1 + T");
  spec.copula.zz_link = Formula::parse("1");
  return spec;
}

// Truth record written next to generated CSV files.
inline nlohmann::json scenario_truth(const ScenarioConfig& cfg) {
  nlohmann::json j;
  j["scenario"] = std::string(to_string(cfg.scenario));
  j["psi"] = cfg.psi;
  j["n"] = cfg.n;
  j["randomized"] = cfg.randomized;
  j["seed"] = cfg.seed;
  if (cfg.scenario == Scenario::A) {
    j["causal_formula"] = "1 + C + T + C:T";
    j["causal_coefficients"] = {{"(Intercept)", 0.6 + 0.5 * cfg.psi}, {"C", 0.2}, {"T", 0.0}, {"C:T", 1.1}};
    j["cate"] = {{"T", 0.0}, {"C:T", 1.1}};
    j["ate"] = 0.0;
    j["copula_yz"] = {{"(Intercept)", 1.0}, {"T", 2.5}};
  } else if (cfg.scenario == Scenario::B) {
    j["causal_formula"] = "1 + C1 + C2 + C3 + C4 + C5 + T + C1:T + C2:T + C3:T + C4:T + C5:T";
    j["causal_coefficients"] = {{"(Intercept)", 0.1 + 0.5 * cfg.psi}, {"C1", 0.2}, {"C2", 0.3}, {"C3", 0.4},
                                {"C4", 0.5}, {"C5", 0.6}, {"T", 0.7}, {"C1:T", 0.8}, {"C2:T", 0.9},
                                {"C3:T", 1.0}, {"C4:T", 1.1}, {"C5:T", 1.2}};
    j["cate"] = {{"T", 0.7}, {"C1:T", 0.8}, {"C2:T", 0.9}, {"C3:T", 1.0}, {"C4:T", 1.1}, {"C5:T", 1.2}};
    j["ate"] = 1.85;
    j["copula_yz"] = {{"(Intercept)", 1.0}, {"T", 1.0}};
    j["copula_zz"] = {{"(Intercept)", 1.0}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Normal means

struct NormalMeansSample {
  Eigen::VectorXd e;  // X_i ~ N(theta*, sigma^2)
  Eigen::VectorXd o;  // Y_i ~ N(theta* + delta, sigma^2)
  double delta = 0.0;
};

inline double normal_means_shift(double delta_star, double k, std::size_t n_o) {
  return delta_star / std::pow(static_cast<double>(n_o), k);
}

inline NormalMeansSample gen_normal_means(std::size_t n_e, std::size_t n_o, double theta_star, double delta_star,
                                          double k, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw ConfigError("normal means: sigma must be positive");
  if (!(k >= 0.0)) throw ConfigError("normal means: k must be nonnegative");
  Rng rng(seed);
  std::normal_distribution<double> N01(0.0, 1.0);
  NormalMeansSample s;
  s.delta = normal_means_shift(delta_star, k, n_o);
  s.e.resize(static_cast<Eigen::Index>(n_e));
  s.o.resize(static_cast<Eigen::Index>(n_o));
  for (auto& x : s.e) x = theta_star + sigma * N01(rng);
  for (auto& y : s.o) y = theta_star + s.delta + sigma * N01(rng);
  return s;
}

// Fresh draws from the experimental population, used to average the
// predictive log density when theta* is treated as unknown.
inline Eigen::VectorXd gen_calibration_sample(std::size_t n, double theta_star, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> N01(0.0, 1.0);
  Eigen::VectorXd z(static_cast<Eigen::Index>(n));
  for (auto& x : z) x = theta_star + sigma * N01(rng);
  return z;
}

// ---------------------------------------------------------------------------
// Semi-synthetic confounding

struct SemisynthConfig {
  double frac_exp = 0.1;
  std::size_t n_treated = 1000;
  double percentile = 30.0;
  double downweight = 0.1;

  void validate() const {
    if (!(frac_exp > 0.0 && frac_exp < 1.0)) throw ConfigError("semisynth: frac_exp must lie in (0, 1)");
    if (!(percentile > 0.0 && percentile < 100.0)) throw ConfigError("semisynth: percentile must lie in (0, 100)");
    if (!(downweight > 0.0 && downweight <= 1.0)) throw ConfigError("semisynth: downweight must lie in (0, 1]");
  }
};

// Linear-interpolation sample quantile (R type 7).
inline double sample_quantile(std::vector<double> x, double p) {
  if (x.empty()) throw DomainError("quantile of an empty sample");
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline std::pair<Dataset, Dataset> make_semisynthetic(const Dataset& rct, const SemisynthConfig& cfg,
                                                      std::uint64_t seed) {
  cfg.validate();
  require_valid(rct.with_source(Source::Experimental), "make_semisynthetic");
  Rng rng(seed);
  const std::size_t n = rct.n();
  const auto n_e = static_cast<std::size_t>(std::floor(cfg.frac_exp * static_cast<double>(n)));

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  // Partial Fisher-Yates with an explicit uniform draw keeps the result
  // independent of the standard library's shuffle.
  for (std::size_t i = 0; i < n_e; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(perm[i], perm[pick(rng)]);
  }
  std::vector<std::size_t> exp_rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_e));
  std::sort(exp_rows.begin(), exp_rows.end());
  std::vector<bool> in_exp(n, false);
  for (auto i : exp_rows) in_exp[i] = true;

  const auto t = rct.column(rct.treatment());
  const auto y = rct.column(rct.outcome());
  std::vector<std::size_t> controls, treated;
  for (std::size_t i = 0; i < n; ++i) {
    if (in_exp[i]) continue;
    (t[static_cast<Eigen::Index>(i)] == 1.0 ? treated : controls).push_back(i);
  }
  if (treated.size() < cfg.n_treated)
    throw InsufficientTreated("make_semisynthetic: " + std::to_string(treated.size()) +
                              " treated rows remain, " + std::to_string(cfg.n_treated) + " requested");

  std::vector<double> ty;
  ty.reserve(treated.size());
  for (auto i : treated) ty.push_back(y[static_cast<Eigen::Index>(i)]);
  const double cut = sample_quantile(ty, cfg.percentile / 100.0);

  // Weighted sampling without replacement: keep the n_treated smallest
  // exponential keys E_i / w_i.
  std::exponential_distribution<double> Exp1(1.0);
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(treated.size());
  for (auto i : treated) {
    const double w = y[static_cast<Eigen::Index>(i)] < cut ? cfg.downweight : 1.0;
    keys.emplace_back(Exp1(rng) / w, i);
  }
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(cfg.n_treated), keys.end());
  std::vector<std::size_t> obs_rows = controls;
  for (std::size_t k = 0; k < cfg.n_treated; ++k) obs_rows.push_back(keys[k].second);
  std::sort(obs_rows.begin(), obs_rows.end());

  return {rct.select_rows(exp_rows).with_source(Source::Experimental),
          rct.select_rows(obs_rows).with_source(Source::Observational)};
}

// Treated-minus-control mean difference.
inline double naive_difference(const Dataset& d) {
  const auto t = d.column(d.treatment());
  const auto y = d.column(d.outcome());
  double s1 = 0, s0 = 0;
  std::size_t n1 = 0, n0 = 0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (t[i] == 1.0) { s1 += y[i]; ++n1; }
    else { s0 += y[i]; ++n0; }
  }
  if (n1 == 0 || n0 == 0) throw EmptyStratum("naive_difference: an arm is empty");
  return s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0);
}

}  // namespace powerlik
