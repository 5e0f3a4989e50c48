#pragma once

// Normal-approximation posterior draws and ELPD estimation (WAIC and exact
// refit LOO), plus the closed-form normal-means ELPD.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "powerlik/density.hpp"
#include "powerlik/errors.hpp"
#include "powerlik/fit.hpp"
#include "powerlik/model.hpp"
#include "powerlik/rng.hpp"

namespace powerlik {

struct PosteriorDraws {
  Eigen::MatrixXd draws;  // S x p
  double eta = 0.0;
  std::uint64_t seed = 0;
  std::shared_ptr<const ParamLayout> layout;

  Eigen::Index size() const { return draws.rows(); }
};

// theta = theta_hat + L^-T xi with fisher = L L^T, so cov = fisher^-1.
inline PosteriorDraws sample_posterior(const PowerCombination& pc, std::size_t S, std::uint64_t seed) {
  if (S < 1) throw DomainError("sample_posterior: need at least one draw");
  const auto p = pc.theta_hat.size();
  const Eigen::MatrixXd& P = pc.fisher_combined;
  if (P.rows() != p || P.cols() != p)
    throw DimensionMismatch("sample_posterior: Fisher information does not match theta");
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() != Eigen::Success) throw NonPositiveDefinite("sample_posterior: Fisher information is not positive definite");
  for (Eigen::Index i = 0; i < p; ++i)
    if (!(llt.matrixL()(i, i) > 0.0)) throw NonPositiveDefinite("sample_posterior: Fisher information is singular");

  Rng rng(seed);
  std::normal_distribution<double> N01(0.0, 1.0);
  Eigen::MatrixXd xi(p, static_cast<Eigen::Index>(S));
  for (Eigen::Index s = 0; s < xi.cols(); ++s)
    for (Eigen::Index j = 0; j < p; ++j) xi(j, s) = N01(rng);
  llt.matrixU().solveInPlace(xi);  // U = L^T

  PosteriorDraws out;
  out.draws = xi.transpose();
  out.draws.rowwise() += pc.theta_hat.transpose();
  if (!out.draws.allFinite()) throw NonFinite("sample_posterior: non-finite draw");
  out.eta = pc.eta;
  out.seed = seed;
  out.layout = pc.layout;
  return out;
}

// ---------------------------------------------------------------------------
// WAIC

enum class WaicForm {
  Summed,  // sum_i (lppd_i - var_i)
  Literal  // (1/n_e) sum_i lppd_i - sum_i var_i
};

struct WaicResult {
  double elpd = 0.0;
  double lppd = 0.0;    // summed
  double d_waic = 0.0;  // summed posterior variances
};

inline WaicResult waic_elpd(const PosteriorDraws& draws, const PredictiveEvaluator& eval,
                            WaicForm form = WaicForm::Summed) {
  const Eigen::Index S = draws.size();
  if (S < 2) throw DegenerateDraws("waic_elpd: need at least two draws for the variance term");
  const Eigen::Index n = eval.n();
  Eigen::VectorXd lp(n), run_max(n), run_sum(n), mean(n), m2(n);
  for (Eigen::Index s = 0; s < S; ++s) {
    eval.evaluate(draws.draws.row(s).transpose(), lp);
    if (s == 0) {
      run_max = lp;
      run_sum.setOnes();
      mean = lp;
      m2.setZero();
      continue;
    }
    const double k = static_cast<double>(s + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = lp[i];
      if (v > run_max[i]) {
        run_sum[i] = run_sum[i] * std::exp(run_max[i] - v) + 1.0;
        run_max[i] = v;
      } else {
        run_sum[i] += std::exp(v - run_max[i]);
      }
      const double delta = v - mean[i];
      mean[i] += delta / k;
      m2[i] += delta * (v - mean[i]);
    }
  }
  WaicResult r;
  const double logS = std::log(static_cast<double>(S));
  for (Eigen::Index i = 0; i < n; ++i) {
    r.lppd += run_max[i] + std::log(run_sum[i]) - logS;
    r.d_waic += m2[i] / static_cast<double>(S - 1);
  }
  if (!std::isfinite(r.lppd)) throw NonFinite("waic_elpd: predictive density is not finite");
  r.elpd = form == WaicForm::Summed ? r.lppd - r.d_waic : r.lppd / static_cast<double>(n) - r.d_waic;
  return r;
}

inline WaicResult waic_elpd(const PosteriorDraws& draws, const Dataset& d_e, const FrugalModelSpec& spec,
                            const NuisanceProfile& nuisance, WaicForm form = WaicForm::Summed) {
  const FrugalLikelihood lik(d_e, spec);
  const PredictiveEvaluator eval(lik, nuisance);
  return waic_elpd(draws, eval, form);
}

inline WaicResult waic_elpd(const PosteriorDraws& draws, const Dataset& d_e, const FrugalModelSpec& spec,
                            const Eigen::VectorXd& nuisance, WaicForm form = WaicForm::Summed) {
  return waic_elpd(draws, d_e, spec, NuisanceProfile::plug_in(nuisance), form);
}

// ---------------------------------------------------------------------------
// Exact leave-one-out

inline constexpr std::size_t kMaxLooRows = 2000;

// Log posterior-predictive density of each held-out row, for every eta in
// `grid`; result(g) = sum over folds. Folds refit only the experimental
// data; `fit_o` is shared and ignored when eta = 0.
//
// The theta posterior is refit per fold, but held-out rows are scored with
// the full-data nuisance profile, the same one WAIC uses. This is the
// leave-one-out target WAIC approximates; refitting the nuisance too would
// add a roughly eta-independent penalty of about one nat per nuisance
// parameter. `fit_e` is the full-data experimental fit; fitted here if null.
inline std::vector<double> exact_loo_elpd_grid(const Dataset& d_e, const FitResult* fit_o, const FrugalModelSpec& spec_e,
                                               std::span<const double> grid, std::size_t S, std::uint64_t seed,
                                               const FitOptions& fopt = {}, const FitResult* fit_e = nullptr) {
  if (d_e.n() > kMaxLooRows) throw DomainError("exact_loo_elpd: n_e exceeds the refit guard of 2000 rows");
  if (S < 1) throw DomainError("exact_loo_elpd: need at least one draw");
  const NuisanceProfile plug_in = NuisanceProfile::of(fit_e ? *fit_e : fit_frugal_mle(d_e, spec_e, fopt));
  std::vector<double> total(grid.size(), 0.0);
  for (std::size_t i = 0; i < d_e.n(); ++i) {
    try {
      const FitResult fe = fit_frugal_mle(d_e.without_row(i), spec_e, fopt);
      const std::size_t row[] = {i};
      const FrugalLikelihood held(d_e.select_rows(row), spec_e);
      const PredictiveEvaluator eval(held, plug_in);
      Eigen::VectorXd lp(1);
      for (std::size_t g = 0; g < grid.size(); ++g) {
        const double eta = grid[g];
        PowerCombination pc;
        if (eta == 0.0) {
          pc.eta = 0.0;
          pc.theta_hat = fe.params.theta;
          pc.fisher_combined = fe.fisher_theta;
          pc.nuisance_e = fe.params.nuisance;
          pc.layout = fe.params.layout;
        } else {
          if (!fit_o) throw DomainError("exact_loo_elpd: observational fit required for eta > 0");
          pc = combine_power(fe, *fit_o, eta);
        }
        const auto draws = sample_posterior(pc, S, derive_seed(eta_seed(seed, eta), {i}));
        double mx = -std::numeric_limits<double>::infinity(), acc = 0.0;
        std::vector<double> vals(S);
        for (std::size_t s = 0; s < S; ++s) {
          eval.evaluate(draws.draws.row(static_cast<Eigen::Index>(s)).transpose(), lp);
          vals[s] = lp[0];
          mx = std::max(mx, lp[0]);
        }
        for (double v : vals) acc += std::exp(v - mx);
        total[g] += mx + std::log(acc / static_cast<double>(S));
      }
    } catch (const Error& e) {
      throw Error("exact_loo_elpd: fold " + std::to_string(i) + ": " + e.what());
    }
  }
  return total;
}

inline double exact_loo_elpd(const Dataset& d_e, const Dataset& d_o, const FrugalModelSpec& spec_e,
                             const FrugalModelSpec& spec_o, double eta, std::size_t S, std::uint64_t seed) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("exact_loo_elpd: eta must lie in [0, 1]");
  const double grid[] = {eta};
  if (eta == 0.0) return exact_loo_elpd_grid(d_e, nullptr, spec_e, grid, S, seed).front();
  const FitResult fo = fit_frugal_mle(d_o, spec_o);
  return exact_loo_elpd_grid(d_e, &fo, spec_e, grid, S, seed).front();
}

// ---------------------------------------------------------------------------
// Normal means, flat prior

struct NormalMeansInputs {
  double xbar = 0.0, ybar = 0.0;
  double n_e = 1.0, n_o = 1.0;
  double sigma2 = 1.0;
};

// Expected squared distance from future draws to `center`: either exact
// under a known theta*, or averaged over a calibration sample (which enters
// only through its mean and second central moment).
struct PredictiveTarget {
  std::optional<double> theta_star;
  double cal_mean = 0.0;
  double cal_var = 0.0;  // divisor n

  static PredictiveTarget known(double theta_star) { return {theta_star, 0.0, 0.0}; }

  static PredictiveTarget calibration(std::span<const double> z) {
    if (z.empty()) throw DomainError("normal_case_elpd: empty calibration sample");
    double m = 0.0;
    for (double v : z) m += v;
    m /= static_cast<double>(z.size());
    double ss = 0.0;
    for (double v : z) ss += (v - m) * (v - m);
    return {std::nullopt, m, ss / static_cast<double>(z.size())};
  }

  double second_moment(double center, double sigma2) const {
    if (theta_star) return (*theta_star - center) * (*theta_star - center) + sigma2;
    return cal_var + (cal_mean - center) * (cal_mean - center);
  }

  double first_moment(double center) const { return (theta_star ? *theta_star : cal_mean) - center; }
};

inline double normal_case_elpd(double eta, const NormalMeansInputs& in, const PredictiveTarget& target) {
  const auto post = conjugate_normal_posterior_flat(in.xbar, in.ybar, in.n_e, in.n_o, in.sigma2, eta);
  const double v = in.sigma2 + post.variance;
  return -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(v) -
         target.second_moment(post.mean, in.sigma2) / (2.0 * v);
}

// d ELPD / d eta by the chain rule through the posterior mean and variance.
inline double normal_case_elpd_derivative(double eta, const NormalMeansInputs& in, const PredictiveTarget& target) {
  const auto post = conjugate_normal_posterior_flat(in.xbar, in.ybar, in.n_e, in.n_o, in.sigma2, eta);
  const double m = in.n_e + eta * in.n_o;
  const double dmean = in.n_e * in.n_o * (in.ybar - in.xbar) / (m * m);
  const double dvar = -in.n_o * in.sigma2 / (m * m);
  const double v = in.sigma2 + post.variance;
  const double q = target.second_moment(post.mean, in.sigma2);
  const double dq = -2.0 * target.first_moment(post.mean) * dmean;
  return -0.5 * dvar / v - dq / (2.0 * v) + q * dvar / (2.0 * v * v);
}

// KL(N(m1, v1) || N(m2, v2)).
inline double normal_kl(double m1, double v1, double m2, double v2) {
  return 0.5 * (std::log(v2 / v1) + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0);
}

// KL from the true predictive N(theta*, sigma^2) to the posterior predictive.
inline double normal_case_kl(double eta, const NormalMeansInputs& in, double theta_star) {
  const auto post = conjugate_normal_posterior_flat(in.xbar, in.ybar, in.n_e, in.n_o, in.sigma2, eta);
  return normal_kl(theta_star, in.sigma2, post.mean, in.sigma2 + post.variance);
}

}  // namespace powerlik
