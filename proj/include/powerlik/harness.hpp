#pragma once

// Replicated simulation studies and their summaries.

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "powerlik/baselines.hpp"
#include "powerlik/elpd.hpp"
#include "powerlik/errors.hpp"
#include "powerlik/fit.hpp"
#include "powerlik/io.hpp"
#include "powerlik/model.hpp"
#include "powerlik/rng.hpp"
#include "powerlik/select.hpp"
#include "powerlik/synth.hpp"

namespace powerlik {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MseDecomposition {
  double mse = 0.0;
  double bias_sq = 0.0;
  double variance = 0.0;
};

inline MseDecomposition mse_decompose(std::span<const double> x, double truth) {
  if (x.empty()) throw DomainError("mse_decompose: no estimates");
  const double n = static_cast<double>(x.size());
  double mean = 0.0, mse = 0.0;
  for (double v : x) {
    mean += v;
    mse += (v - truth) * (v - truth);
  }
  mean /= n;
  mse /= n;
  const double b = (mean - truth) * (mean - truth);
  return {mse, b, mse - b};
}

// Runs f(i) for i in [0, n) on `threads` workers (0 = hardware concurrency).
// Each index is processed exactly once; callers write results by index.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Scenario studies

enum class Experiment { EtaCurve, MethodComparison, Consistency, Semisynth, Analyze };

inline Experiment parse_experiment(std::string_view s) {
  if (s == "eta_curve") return Experiment::EtaCurve;
  if (s == "method_comparison") return Experiment::MethodComparison;
  if (s == "consistency") return Experiment::Consistency;
  if (s == "semisynth") return Experiment::Semisynth;
  if (s == "analyze") return Experiment::Analyze;
  throw ConfigError("unknown experiment '" + std::string(s) + "'");
}

struct RunConfig {
  Experiment experiment = Experiment::EtaCurve;
  Scenario scenario = Scenario::A;
  std::vector<double> psi = {0.0};
  std::size_t n_e = 250;
  std::size_t n_o = 2500;
  std::size_t replicates = 500;
  SelectOptions select;
  std::uint64_t seed = 1;
  std::size_t threads = 0;
  double max_failure_rate = 0.05;
  bool baselines = false;  // run the comparator estimators
  std::optional<FrugalModelSpec> spec_e, spec_o;

  FrugalModelSpec experimental_spec() const { return spec_e ? *spec_e : default_spec(scenario, Source::Experimental); }
  FrugalModelSpec observational_spec() const { return spec_o ? *spec_o : default_spec(scenario, Source::Observational); }

  void validate() const {
    if (replicates < 1) throw ConfigError("run config: replicates must be at least 1");
    if (psi.empty()) throw ConfigError("run config: psi list is empty");
    if (scenario == Scenario::NormalMeans) throw ConfigError("run config: use the consistency sweep for normal means");
  }
};

// Method names used in comparison output.
namespace method {
inline const std::string power = "power";
inline const std::string experimental = "experimental";
inline const std::string pooled = "pooled";
inline const std::string ipw_e = "ipw_e";
inline const std::string ipw_o = "ipw_o";
inline const std::string gs1 = "gs_delta1";
inline const std::string gs2 = "gs_delta2";
inline const std::string rosen1 = "rosenman_kappa1";
inline const std::string rosen2 = "rosenman_kappa2";
inline const std::string kallus = "kallus";
inline const std::string oberst = "oberst";
}  // namespace method

struct ReplicateRecord {
  std::size_t index = 0;
  double psi = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;

  double eta_star = kNaN;
  std::vector<double> elpd;      // per grid point
  std::vector<double> ate_grid;  // ATE estimate at each grid point
  std::vector<double> cate_grid; // positive-subgroup CATE at each grid point
  double ate_truth = kNaN;
  double cate_truth = kNaN;
  Eigen::VectorXd strata_truth;
  std::map<std::string, double> ate;
  std::map<std::string, double> cate;
  std::map<std::string, Eigen::VectorXd> strata;
};

namespace detail {

inline StratificationScheme scenario_scheme(Scenario s) {
  return s == Scenario::B ? StratificationScheme::binary_cross_quintiles("C5", "C1")
                          : StratificationScheme::deciles("C");
}

inline std::string subgroup_column(Scenario s) { return s == Scenario::B ? "C1" : "C"; }

// True tau(c) of the generating process, applied row by row.
inline double true_cate(Scenario s, const Dataset& d, std::size_t i) {
  if (s == Scenario::A) return 1.1 * d.at(i, "C");
  return 0.7 + 0.8 * d.at(i, "C1") + 0.9 * d.at(i, "C2") + 1.0 * d.at(i, "C3") + 1.1 * d.at(i, "C4") +
         1.2 * d.at(i, "C5");
}

inline double mean_over(const Dataset& d, std::span<const std::size_t> rows, Scenario s) {
  double acc = 0.0;
  for (auto i : rows) acc += true_cate(s, d, i);
  return acc / static_cast<double>(rows.size());
}

}  // namespace detail

inline std::uint64_t replicate_seed(std::uint64_t master, std::size_t r) { return derive_seed(master, {r}); }

// One replicate: generate both datasets, fit, select eta, and score every
// requested estimator against in-sample truths on the experimental rows.
inline ReplicateRecord run_replicate(const RunConfig& cfg, double psi, std::size_t r) {
  ReplicateRecord rec;
  rec.index = r;
  rec.psi = psi;
  rec.seed = replicate_seed(cfg.seed, r);  // shared across psi
  const auto spec_e = cfg.experimental_spec();
  const auto spec_o = cfg.observational_spec();

  ScenarioConfig ce{cfg.scenario, psi, cfg.n_e, true, derive_seed(rec.seed, {1})};
  ScenarioConfig co{cfg.scenario, psi, cfg.n_o, false, derive_seed(rec.seed, {2})};
  const Dataset d_e = generate(ce);
  const Dataset d_o = generate(co);

  const FitResult fe = fit_frugal_mle(d_e, spec_e, cfg.select.fit);
  const FitResult fo = fit_frugal_mle(d_o, spec_o, cfg.select.fit);
  SelectOptions so = cfg.select;
  so.seed = derive_seed(rec.seed, {3});
  const EtaSelection sel = select_eta_from_fits(d_e, spec_e, fe, fo, so);
  rec.eta_star = sel.eta_star;
  rec.elpd = sel.elpd;

  const std::string& tcol = d_e.treatment();
  const auto sub_col = detail::subgroup_column(cfg.scenario);
  std::vector<std::size_t> all(d_e.n()), pos;
  for (std::size_t i = 0; i < d_e.n(); ++i) {
    all[i] = i;
    if (d_e.at(i, sub_col) > 0.0) pos.push_back(i);
  }
  if (pos.empty()) throw EmptyStratum("replicate: no experimental units with " + sub_col + " > 0");
  const Eigen::VectorXd g_ate = average_contrast(spec_e.causal, tcol, d_e, all);
  const Eigen::VectorXd g_pos = average_contrast(spec_e.causal, tcol, d_e, pos);
  rec.ate_truth = detail::mean_over(d_e, all, cfg.scenario);
  rec.cate_truth = detail::mean_over(d_e, pos, cfg.scenario);

  for (double eta : sel.grid) {
    const auto pc = combine_power(fe, fo, eta);
    rec.ate_grid.push_back(g_ate.dot(pc.theta_hat));
    rec.cate_grid.push_back(g_pos.dot(pc.theta_hat));
  }
  const auto pc_star = combine_power(fe, fo, sel.eta_star);
  const auto pc_one = combine_power(fe, fo, 1.0);
  rec.ate[method::power] = g_ate.dot(pc_star.theta_hat);
  rec.cate[method::power] = g_pos.dot(pc_star.theta_hat);
  rec.ate[method::experimental] = g_ate.dot(fe.params.theta);
  rec.cate[method::experimental] = g_pos.dot(fe.params.theta);
  rec.ate[method::pooled] = g_ate.dot(pc_one.theta_hat);
  rec.cate[method::pooled] = g_pos.dot(pc_one.theta_hat);

  if (!cfg.baselines) {
    rec.ok = true;
    return rec;
  }

  auto scheme = detail::scenario_scheme(cfg.scenario);
  scheme.learn(d_o);
  const auto strata_e = scheme.assign_all(d_e);
  const std::size_t K = scheme.k();
  std::vector<std::vector<std::size_t>> members(K);
  for (std::size_t i = 0; i < d_e.n(); ++i) members[strata_e[i]].push_back(i);
  rec.strata_truth.resize(static_cast<Eigen::Index>(K));
  Eigen::VectorXd s_pow(K), s_exp(K), s_pool(K);
  std::vector<std::size_t> counts(K);
  for (std::size_t k = 0; k < K; ++k) {
    if (members[k].empty()) throw EmptyStratum("replicate: empty experimental stratum " + std::to_string(k));
    const auto kk = static_cast<Eigen::Index>(k);
    rec.strata_truth[kk] = detail::mean_over(d_e, members[k], cfg.scenario);
    const Eigen::VectorXd g = average_contrast(spec_e.causal, tcol, d_e, members[k]);
    s_pow[kk] = g.dot(pc_star.theta_hat);
    s_exp[kk] = g.dot(fe.params.theta);
    s_pool[kk] = g.dot(pc_one.theta_hat);
    counts[k] = members[k].size();
  }
  rec.strata[method::power] = s_pow;
  rec.strata[method::experimental] = s_exp;
  rec.strata[method::pooled] = s_pool;

  const auto* t_comp = spec_o.component(d_o.treatment());
  const StrataEstimates ipw_e = ipw_strata(d_e, PropensityModel::known(0.5), scheme);
  const StrataEstimates ipw_o = ipw_strata(d_o, PropensityModel::logit(t_comp->formula), scheme);
  const auto add_strata_method = [&](const std::string& name, const Eigen::VectorXd& est) {
    rec.strata[name] = est;
    rec.ate[name] = strata_average(est, counts);
  };
  add_strata_method(method::ipw_e, ipw_e.estimates);
  add_strata_method(method::ipw_o, ipw_o.estimates);
  add_strata_method(method::gs1, gs_shrink(ipw_e, ipw_o, GsVariant::Delta1));
  add_strata_method(method::gs2, gs_shrink(ipw_e, ipw_o, GsVariant::Delta2));
  add_strata_method(method::rosen1, rosenman_shrink(ipw_e, ipw_o, RosenmanVariant::Kappa1));
  add_strata_method(method::rosen2, rosenman_shrink(ipw_e, ipw_o, RosenmanVariant::Kappa2));

  const KallusResult kal = kallus_grounding(d_o, d_e, scheme, KallusSpec::for_scenario(cfg.scenario));
  rec.strata[method::kallus] = kal.strata.estimates;
  rec.ate[method::kallus] = kal.ate;

  // Oberst: parametric ATE from each dataset, delta-method variances.
  const double tau_e = g_ate.dot(fe.params.theta), tau_o = g_ate.dot(fo.params.theta);
  const double var_e = g_ate.dot(fe.sandwich_theta * g_ate), var_o = g_ate.dot(fo.sandwich_theta * g_ate);
  rec.ate[method::oberst] = oberst_combine(tau_e, var_e, tau_o, var_o).tau;

  rec.ok = true;
  return rec;
}

struct CurveRow {
  double psi = 0.0;
  double eta = 0.0;
  std::string estimand;  // "ate" or "cate_pos"
  MseDecomposition mse;
  double mean_estimate = 0.0;
  double mean_elpd = 0.0;
};

struct ComparisonRow {
  std::string method;
  double psi = 0.0;
  std::string estimand;  // "ate", "cate_pos" or "cate_strata" (summed over strata)
  MseDecomposition mse;
  double mean_estimate = kNaN;
  double relative_mse = kNaN;
};

struct PsiSummary {
  double psi = 0.0;
  std::size_t replicates = 0;
  std::size_t failures = 0;
  double mean_eta = 0.0;
  double sd_eta = 0.0;
};

struct ReplicationResult {
  RunConfig config;
  std::vector<double> grid;
  std::vector<ReplicateRecord> records;
  std::vector<PsiSummary> summary;
  std::vector<CurveRow> curve;
  std::vector<ComparisonRow> comparison;

  const PsiSummary& at_psi(double psi) const {
    for (const auto& s : summary)
      if (s.psi == psi) return s;
    throw ConfigError("no summary for psi " + std::to_string(psi));
  }

  const ComparisonRow& row(const std::string& m, double psi, const std::string& estimand) const {
    for (const auto& r : comparison)
      if (r.method == m && r.psi == psi && r.estimand == estimand) return r;
    throw ConfigError("no comparison row for " + m + " / " + estimand);
  }

  const CurveRow& curve_at(double psi, double eta, const std::string& estimand) const {
    for (const auto& r : curve)
      if (r.psi == psi && r.eta == eta && r.estimand == estimand) return r;
    throw ConfigError("no curve row");
  }
};

namespace detail {

inline MseDecomposition decompose_errors(const std::vector<double>& err) { return mse_decompose(err, 0.0); }

inline void aggregate_psi(ReplicationResult& out, double psi, const std::vector<const ReplicateRecord*>& ok) {
  const auto& grid = out.grid;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (const char* est : {"ate", "cate_pos"}) {
      const bool ate = std::string(est) == "ate";
      std::vector<double> err;
      double mean_est = 0.0, mean_elpd = 0.0;
      for (const auto* r : ok) {
        const double e = ate ? r->ate_grid[g] : r->cate_grid[g];
        err.push_back(e - (ate ? r->ate_truth : r->cate_truth));
        mean_est += e;
        mean_elpd += r->elpd[g];
      }
      const double n = static_cast<double>(ok.size());
      out.curve.push_back({psi, grid[g], est, decompose_errors(err), mean_est / n, mean_elpd / n});
    }
  }

  std::vector<std::string> methods;
  for (const auto& [m, v] : ok.front()->ate) methods.push_back(m);
  std::map<std::pair<std::string, std::string>, ComparisonRow> rows;
  for (const auto& m : methods) {
    std::vector<double> err_ate, err_cate;
    double mean_ate = 0.0, mean_cate = 0.0;
    for (const auto* r : ok) {
      err_ate.push_back(r->ate.at(m) - r->ate_truth);
      mean_ate += r->ate.at(m);
      if (auto it = r->cate.find(m); it != r->cate.end()) {
        err_cate.push_back(it->second - r->cate_truth);
        mean_cate += it->second;
      }
    }
    const double n = static_cast<double>(ok.size());
    rows[{m, "ate"}] = {m, psi, "ate", decompose_errors(err_ate), mean_ate / n, kNaN};
    if (!err_cate.empty()) rows[{m, "cate_pos"}] = {m, psi, "cate_pos", decompose_errors(err_cate), mean_cate / n, kNaN};

    if (ok.front()->strata.count(m)) {
      const auto K = ok.front()->strata_truth.size();
      MseDecomposition total;
      for (Eigen::Index k = 0; k < K; ++k) {
        std::vector<double> err;
        for (const auto* r : ok) err.push_back(r->strata.at(m)[k] - r->strata_truth[k]);
        const auto d = decompose_errors(err);
        total.mse += d.mse;
        total.bias_sq += d.bias_sq;
        total.variance += d.variance;
      }
      rows[{m, "cate_strata"}] = {m, psi, "cate_strata", total, kNaN, kNaN};
    }
  }
  for (auto& [key, row] : rows) {
    const std::string ref = key.second == "cate_strata" ? method::ipw_e : method::experimental;
    if (auto it = rows.find({ref, key.second}); it != rows.end()) row.relative_mse = row.mse.mse / it->second.mse.mse;
    out.comparison.push_back(row);
  }
}

}  // namespace detail

inline ReplicationResult run_replications(const RunConfig& cfg) {
  cfg.validate();
  ReplicationResult out;
  out.config = cfg;
  out.grid = eta_grid(cfg.select.grid_size);
  const std::size_t R = cfg.replicates;
  out.records.resize(R * cfg.psi.size());
  parallel_for(out.records.size(), cfg.threads, [&](std::size_t job) {
    const std::size_t p = job / R, r = job % R;
    try {
      out.records[job] = run_replicate(cfg, cfg.psi[p], r);
    } catch (const Error& e) {
      auto& rec = out.records[job];
      rec.index = r;
      rec.psi = cfg.psi[p];
      rec.seed = replicate_seed(cfg.seed, r);
      rec.ok = false;
      rec.error = e.what();
    }
  });

  for (std::size_t p = 0; p < cfg.psi.size(); ++p) {
    std::vector<const ReplicateRecord*> ok;
    PsiSummary s;
    s.psi = cfg.psi[p];
    s.replicates = R;
    for (std::size_t r = 0; r < R; ++r) {
      const auto& rec = out.records[p * R + r];
      if (rec.ok) ok.push_back(&rec);
      else ++s.failures;
    }
    if (static_cast<double>(s.failures) > cfg.max_failure_rate * static_cast<double>(R))
      throw Error("run_replications: " + std::to_string(s.failures) + " of " + std::to_string(R) +
                  " replicates failed at psi = " + format_double(s.psi) + "; first error: " +
                  [&] {
                    for (std::size_t r = 0; r < R; ++r)
                      if (!out.records[p * R + r].ok) return out.records[p * R + r].error;
                    return std::string();
                  }());
    if (ok.empty()) continue;
    double m = 0.0, ss = 0.0;
    for (const auto* rec : ok) m += rec->eta_star;
    m /= static_cast<double>(ok.size());
    for (const auto* rec : ok) ss += (rec->eta_star - m) * (rec->eta_star - m);
    s.mean_eta = m;
    s.sd_eta = ok.size() > 1 ? std::sqrt(ss / static_cast<double>(ok.size() - 1)) : 0.0;
    out.summary.push_back(s);
    detail::aggregate_psi(out, s.psi, ok);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output tables

inline std::string curve_csv(const ReplicationResult& res) {
  std::string out = "psi,eta,estimand,mse,bias_sq,variance,mean_estimate,mean_elpd\n";
  for (const auto& r : res.curve)
    out += format_double(r.psi) + "," + format_double(r.eta) + "," + r.estimand + "," + format_double(r.mse.mse) + "," +
           format_double(r.mse.bias_sq) + "," + format_double(r.mse.variance) + "," + format_double(r.mean_estimate) +
           "," + format_double(r.mean_elpd) + "\n";
  return out;
}

inline std::string comparison_csv(const ReplicationResult& res) {
  std::string out = "method,psi,estimand,mse,bias_sq,variance,mean_estimate,relative_mse\n";
  for (const auto& r : res.comparison)
    out += r.method + "," + format_double(r.psi) + "," + r.estimand + "," + format_double(r.mse.mse) + "," +
           format_double(r.mse.bias_sq) + "," + format_double(r.mse.variance) + "," + format_double(r.mean_estimate) +
           "," + format_double(r.relative_mse) + "\n";
  return out;
}

inline std::string replicates_csv(const ReplicationResult& res) {
  std::string out = "psi,replicate,seed,ok,eta_star,ate_truth,ate_power,ate_experimental,cate_truth,cate_power,cate_experimental,error\n";
  for (const auto& r : res.records) {
    auto get = [](const std::map<std::string, double>& m, const std::string& k) {
      auto it = m.find(k);
      return it == m.end() ? kNaN : it->second;
    };
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out += format_double(r.psi) + "," + std::to_string(r.index) + "," + std::to_string(r.seed) + "," +
           (r.ok ? "1" : "0") + "," + format_double(r.eta_star) + "," + format_double(r.ate_truth) + "," +
           format_double(get(r.ate, method::power)) + "," + format_double(get(r.ate, method::experimental)) + "," +
           format_double(r.cate_truth) + "," + format_double(get(r.cate, method::power)) + "," +
           format_double(get(r.cate, method::experimental)) + "," + err + "\n";
  }
  return out;
}

inline Json summary_json(const ReplicationResult& res) {
  Json j;
  j["scenario"] = std::string(to_string(res.config.scenario));
  j["n_e"] = res.config.n_e;
  j["n_o"] = res.config.n_o;
  j["replicates"] = res.config.replicates;
  j["grid_size"] = res.config.select.grid_size;
  j["draws"] = res.config.select.draws;
  j["seed"] = res.config.seed;
  j["psi"] = Json::array();
  for (const auto& s : res.summary)
    j["psi"].push_back({{"psi", s.psi}, {"mean_eta", s.mean_eta}, {"sd_eta", s.sd_eta}, {"failures", s.failures}});
  return j;
}

// ---------------------------------------------------------------------------
// Normal-means consistency sweep

struct ConsistencyConfig {
  double k = 0.0;
  double delta_star = 1.0;
  double theta_star = 0.0;
  double sigma = 1.0;
  std::vector<std::pair<std::size_t, std::size_t>> sizes = {{100, 1000}, {400, 4000}, {1000, 10000}, {1600, 16000}};
  std::size_t replicates = 2000;
  std::uint64_t seed = 1;
  std::size_t grid_points = 1001;
  std::size_t threads = 0;

  void validate() const {
    if (sizes.empty()) throw ConfigError("consistency: no sizes");
    const double c = static_cast<double>(sizes.front().first) / static_cast<double>(sizes.front().second);
    for (const auto& [ne, no] : sizes) {
      if (ne == 0 || no == 0) throw ConfigError("consistency: sizes must be positive");
      if (std::abs(static_cast<double>(ne) / static_cast<double>(no) - c) > 1e-12)
        throw ConfigError("consistency: sizes must keep a fixed n_e / n_o ratio");
    }
    if (grid_points < 2) throw ConfigError("consistency: grid needs at least two points");
  }
};

// Maximizer of the normal-means ELPD over [0, 1]: dense grid, then Brent
// refinement inside the bracketing cells. Ties keep the smallest eta.
inline double maximize_normal_case_elpd(const NormalMeansInputs& in, const PredictiveTarget& target,
                                        std::size_t grid_points) {
  std::vector<double> vals(grid_points);
  for (std::size_t i = 0; i < grid_points; ++i)
    vals[i] = normal_case_elpd(static_cast<double>(i) / static_cast<double>(grid_points - 1), in, target);
  const std::size_t best = argmax_first(vals);
  const double h = 1.0 / static_cast<double>(grid_points - 1);
  const double lo = std::max(0.0, static_cast<double>(best) * h - h);
  const double hi = std::min(1.0, static_cast<double>(best) * h + h);
  const auto r = boost::math::tools::brent_find_minima(
      [&](double eta) { return -normal_case_elpd(eta, in, target); }, lo, hi, 52);
  return -r.second > vals[best] ? r.first : static_cast<double>(best) * h;
}

struct ConsistencyRow {
  std::size_t n_e = 0, n_o = 0;
  double mean_eta = 0.0;
  double mean_theta = 0.0;
  double mse_times_ne = 0.0;
  double frac_eta_high = 0.0;  // eta-hat >= 0.95
};

inline std::vector<ConsistencyRow> consistency_sweep(const ConsistencyConfig& cfg) {
  cfg.validate();
  std::vector<ConsistencyRow> out;
  const double s2 = cfg.sigma * cfg.sigma;
  for (std::size_t si = 0; si < cfg.sizes.size(); ++si) {
    const auto [ne, no] = cfg.sizes[si];
    std::vector<double> eta(cfg.replicates), theta(cfg.replicates);
    parallel_for(cfg.replicates, cfg.threads, [&](std::size_t r) {
      const std::uint64_t rs = derive_seed(cfg.seed, {si, r});
      const auto smp = gen_normal_means(ne, no, cfg.theta_star, cfg.delta_star, cfg.k, cfg.sigma, derive_seed(rs, {1}));
      const auto cal = gen_calibration_sample(ne, cfg.theta_star, cfg.sigma, derive_seed(rs, {2}));
      const NormalMeansInputs in{smp.e.mean(), smp.o.mean(), static_cast<double>(ne), static_cast<double>(no), s2};
      const auto target = PredictiveTarget::calibration({cal.data(), static_cast<std::size_t>(cal.size())});
      eta[r] = maximize_normal_case_elpd(in, target, cfg.grid_points);
      theta[r] = conjugate_normal_posterior_flat(in.xbar, in.ybar, in.n_e, in.n_o, s2, eta[r]).mean;
    });
    ConsistencyRow row;
    row.n_e = ne;
    row.n_o = no;
    const double R = static_cast<double>(cfg.replicates);
    double mse = 0.0;
    std::size_t high = 0;
    for (std::size_t r = 0; r < cfg.replicates; ++r) {
      row.mean_eta += eta[r] / R;
      row.mean_theta += theta[r] / R;
      mse += (theta[r] - cfg.theta_star) * (theta[r] - cfg.theta_star) / R;
      if (eta[r] >= 0.95) ++high;
    }
    row.mse_times_ne = mse * static_cast<double>(ne);
    row.frac_eta_high = static_cast<double>(high) / R;
    out.push_back(row);
  }
  return out;
}

inline std::string consistency_csv(const std::vector<ConsistencyRow>& rows) {
  std::string out = "n_e,n_o,mean_eta,mean_theta,mse_times_ne,frac_eta_ge_0.95\n";
  for (const auto& r : rows)
    out += std::to_string(r.n_e) + "," + std::to_string(r.n_o) + "," + format_double(r.mean_eta) + "," +
           format_double(r.mean_theta) + "," + format_double(r.mse_times_ne) + "," + format_double(r.frac_eta_high) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Semi-synthetic study

struct SemisynthStudyConfig {
  SemisynthConfig construct;
  std::size_t rct_n = 5000;        // size of the simulated randomized stand-in
  std::optional<Dataset> rct;      // user-supplied randomized data instead
  std::optional<double> truth;     // known ATE of `rct`; difference in means otherwise
  std::size_t replicates = 200;
  std::uint64_t seed = 1;
  SelectOptions select;
  std::optional<FrugalModelSpec> spec_e, spec_o;
  std::size_t threads = 0;
  double max_failure_rate = 0.05;
};

struct SemisynthRecord {
  bool ok = false;
  std::string error;
  double eta_star = kNaN;
  double ate_power = kNaN;
  double ate_experimental = kNaN;
  double truth = kNaN;
  double naive_shift = kNaN;  // naive d_o difference minus naive full-RCT difference
};

struct SemisynthSummary {
  std::vector<SemisynthRecord> records;
  std::size_t failures = 0;
  double mean_eta = 0.0;
  MseDecomposition power, experimental;
  double naive_shift_mean = 0.0;
  double naive_shift_se = 0.0;
};

inline SemisynthRecord run_semisynth_replicate(const SemisynthStudyConfig& cfg, std::size_t r) {
  SemisynthRecord rec;
  const std::uint64_t rs = derive_seed(cfg.seed, {r});
  const FrugalModelSpec spec_e = cfg.spec_e ? *cfg.spec_e : default_spec(Scenario::A, Source::Experimental);
  const FrugalModelSpec spec_o = cfg.spec_o ? *cfg.spec_o : default_spec(Scenario::A, Source::Observational);

  Dataset rct;
  if (cfg.rct) {
    rct = *cfg.rct;
  } else {
    rct = gen_scenario_a({Scenario::A, 0.0, cfg.rct_n, true, derive_seed(rs, {1})});
  }
  auto [d_e, d_o] = make_semisynthetic(rct, cfg.construct, derive_seed(rs, {2}));
  rec.naive_shift = naive_difference(d_o) - naive_difference(rct);

  const FitResult fe = fit_frugal_mle(d_e, spec_e, cfg.select.fit);
  const FitResult fo = fit_frugal_mle(d_o, spec_o, cfg.select.fit);
  SelectOptions so = cfg.select;
  so.seed = derive_seed(rs, {3});
  const auto sel = select_eta_from_fits(d_e, spec_e, fe, fo, so);
  const Eigen::VectorXd g = average_contrast(spec_e.causal, d_e.treatment(), d_e);
  rec.eta_star = sel.eta_star;
  rec.ate_power = g.dot(combine_power(fe, fo, sel.eta_star).theta_hat);
  rec.ate_experimental = g.dot(fe.params.theta);
  if (cfg.rct) {
    rec.truth = cfg.truth ? *cfg.truth : naive_difference(rct);
  } else {
    // Known effect tau(c) = 1.1 c, averaged over the experimental rows.
    double acc = 0.0;
    for (std::size_t i = 0; i < d_e.n(); ++i) acc += 1.1 * d_e.at(i, "C");
    rec.truth = acc / static_cast<double>(d_e.n());
  }
  rec.ok = true;
  return rec;
}

inline SemisynthSummary run_semisynth_study(const SemisynthStudyConfig& cfg) {
  if (cfg.replicates < 1) throw ConfigError("semisynth: replicates must be at least 1");
  SemisynthSummary out;
  out.records.resize(cfg.replicates);
  parallel_for(cfg.replicates, cfg.threads, [&](std::size_t r) {
    try {
      out.records[r] = run_semisynth_replicate(cfg, r);
    } catch (const Error& e) {
      out.records[r].ok = false;
      out.records[r].error = e.what();
    }
  });
  std::vector<double> ep, ee, shift, etas;
  for (const auto& rec : out.records) {
    if (!rec.ok) {
      ++out.failures;
      continue;
    }
    ep.push_back(rec.ate_power - rec.truth);
    ee.push_back(rec.ate_experimental - rec.truth);
    shift.push_back(rec.naive_shift);
    etas.push_back(rec.eta_star);
  }
  if (static_cast<double>(out.failures) > cfg.max_failure_rate * static_cast<double>(cfg.replicates))
    throw Error("semisynth: " + std::to_string(out.failures) + " replicates failed");
  const double n = static_cast<double>(ep.size());
  for (double e : etas) out.mean_eta += e / n;
  out.power = mse_decompose(ep, 0.0);
  out.experimental = mse_decompose(ee, 0.0);
  const auto sd = mse_decompose(shift, 0.0);
  for (double s : shift) out.naive_shift_mean += s / n;
  out.naive_shift_se = n > 1 ? std::sqrt(sd.variance * n / (n - 1.0) / n) : kNaN;
  return out;
}

}  // namespace powerlik
