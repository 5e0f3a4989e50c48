#pragma once

// Per-dataset maximum likelihood, sandwich covariances, the precision-weighted
// power combination and the conjugate normal-means posterior.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "powerlik/density.hpp"
#include "powerlik/errors.hpp"
#include "powerlik/glm.hpp"
#include "powerlik/model.hpp"
#include "powerlik/optim.hpp"

namespace powerlik {

struct FitOptions {
  double grad_tol = 1e-6;  // infinity norm of the mean log-likelihood gradient
  int max_iter = 500;
  int newton_polish = 3;
};

namespace detail {

// Coordinates optimized in stage 2: theta, copula links, and the margins of
// copula members (they enter the copula through their normal scores). The
// remaining past components separate from everything else in the likelihood
// and keep their GLM estimates.
inline std::vector<std::size_t> free_coordinates(const FrugalLikelihood& lik) {
  const auto& plan = lik.plan();
  const auto& spec = lik.spec();
  std::vector<bool> is_free(lik.size(), false);
  for (std::size_t i = 0; i < lik.layout()->theta_size(); ++i) is_free[i] = true;
  for (std::size_t k = 0; k < spec.past.size(); ++k) {
    const auto& m = spec.copula.members;
    if (std::find(m.begin(), m.end(), spec.past[k].target) == m.end()) continue;
    const auto& b = plan.components[k];
    for (std::size_t j = 0; j < b.n_coef + (b.has_sigma ? 1 : 0); ++j) is_free[b.offset + j] = true;
  }
  const auto& cb = plan.copula;
  for (auto o : cb.yz_offset)
    for (std::size_t j = 0; j < cb.yz_size; ++j) is_free[o + j] = true;
  for (auto o : cb.zz_offset)
    for (std::size_t j = 0; j < cb.zz_size; ++j) is_free[o + j] = true;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < is_free.size(); ++i)
    if (is_free[i]) out.push_back(i);
  return out;
}

inline Eigen::VectorXd initial_parameters(const FrugalLikelihood& lik) {
  Eigen::VectorXd full = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lik.size()));
  const auto& plan = lik.plan();
  for (std::size_t k = 0; k < lik.spec().past.size(); ++k) {
    const auto& b = plan.components[k];
    const GlmFit g = fit_glm(lik.past_design(k), lik.past_target(k), lik.spec().past[k].family);
    full.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.n_coef)) = g.coef;
    if (b.has_sigma) full[static_cast<Eigen::Index>(b.offset + b.n_coef)] = 0.5 * std::log(g.sigma2);
  }
  const GlmFit y = fit_gaussian(lik.causal_design(), lik.outcome());
  full.head(static_cast<Eigen::Index>(plan.causal_size)) = y.coef;
  full[static_cast<Eigen::Index>(plan.causal_size)] = 0.5 * std::log(y.sigma2);
  return full;
}

}  // namespace detail

inline FitResult fit_frugal_mle(const Dataset& d, const FrugalModelSpec& spec, const FitOptions& opt = {}) {
  require_valid(d, "fit_frugal_mle");
  const FrugalLikelihood lik(d, spec);
  const auto free = detail::free_coordinates(lik);
  const Eigen::VectorXd start = detail::initial_parameters(lik);
  const double n = static_cast<double>(d.n());

  auto embed = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd full = start;
    for (std::size_t j = 0; j < free.size(); ++j) full[static_cast<Eigen::Index>(free[j])] = v[static_cast<Eigen::Index>(j)];
    return full;
  };
  Eigen::VectorXd rows(lik.n());
  const Objective negmean = [&](const Eigen::VectorXd& v) {
    lik.row_logdensities(embed(v), rows);
    return -rows.sum() / n;
  };

  Eigen::VectorXd x0(static_cast<Eigen::Index>(free.size()));
  for (std::size_t j = 0; j < free.size(); ++j) x0[static_cast<Eigen::Index>(j)] = start[static_cast<Eigen::Index>(free[j])];

  OptimResult res = bfgs_minimize(negmean, x0, {opt.grad_tol, opt.max_iter});
  if (!res.converged) throw NoConvergence("fit_frugal_mle: no convergence after " + std::to_string(res.iterations) + " iterations");

  Eigen::MatrixXd H = numerical_hessian(negmean, res.x, res.f);
  for (int k = 0; k < opt.newton_polish; ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) break;
    const Eigen::VectorXd xn = res.x - llt.solve(res.grad);
    const double fn = negmean(xn);
    if (!(fn <= res.f)) break;
    const Eigen::VectorXd gn = numerical_gradient(negmean, xn);
    if (gn.lpNorm<Eigen::Infinity>() > res.grad.lpNorm<Eigen::Infinity>()) break;
    res.x = xn;
    res.f = fn;
    res.grad = gn;
    H = numerical_hessian(negmean, res.x, res.f);
  }

  // A = -Hessian of the summed log-likelihood over the free coordinates.
  const Eigen::MatrixXd A = n * H;
  Eigen::LLT<Eigen::MatrixXd> A_llt(A);
  if (A_llt.info() != Eigen::Success) throw SingularHessian("fit_frugal_mle: Hessian at the optimum is not negative definite");
  const auto q = static_cast<Eigen::Index>(free.size());
  const Eigen::MatrixXd A_inv = A_llt.solve(Eigen::MatrixXd::Identity(q, q));
  if (!A_inv.allFinite()) throw SingularHessian("fit_frugal_mle: Hessian is numerically singular");

  const Eigen::VectorXd full = embed(res.x);
  const Eigen::MatrixXd G = row_scores(lik, full, free);
  const Eigen::MatrixXd B = G.transpose() * G;

  // theta occupies the first coordinates of `free`.
  const auto pt = static_cast<Eigen::Index>(lik.layout()->theta_size());
  const Eigen::MatrixXd sandwich = A_inv * B * A_inv;
  const Eigen::MatrixXd cov_theta = A_inv.topLeftCorner(pt, pt);

  FitResult out;
  out.params = ParamVector::from_full(full, lik.layout());
  out.sandwich_theta = 0.5 * (sandwich.topLeftCorner(pt, pt) + sandwich.topLeftCorner(pt, pt).transpose());
  out.fisher_theta = cov_theta.ldlt().solve(Eigen::MatrixXd::Identity(pt, pt));
  out.fisher_theta = 0.5 * (out.fisher_theta + out.fisher_theta.transpose()).eval();
  // Nuisance coordinates outside `free` separate from theta: zero slope.
  const Eigen::Index qn = q - pt;
  out.nuisance_slope = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(lik.layout()->nuisance_size()), pt);
  if (qn > 0) {
    const Eigen::MatrixXd B = -A.bottomRightCorner(qn, qn).ldlt().solve(A.bottomLeftCorner(qn, pt));
    for (Eigen::Index j = 0; j < qn; ++j)
      out.nuisance_slope.row(static_cast<Eigen::Index>(free[static_cast<std::size_t>(pt + j)]) - pt) = B.row(j);
  }
  out.loglik = -res.f * n;
  out.n = d.n();
  out.converged = true;
  out.iterations = res.iterations;
  return out;
}

// ---------------------------------------------------------------------------
// Combination

// Solves (P_e + w P_o) theta = P_e theta_e + w P_o theta_o with P = inverse
// sandwich covariance (the precision of each dataset's theta-hat).
inline Eigen::VectorXd combine_precision_weighted(const Eigen::VectorXd& theta_e, const Eigen::MatrixXd& cov_e,
                                                  const Eigen::VectorXd& theta_o, const Eigen::MatrixXd& cov_o,
                                                  double w) {
  if (theta_e.size() != theta_o.size() || cov_e.rows() != theta_e.size() || cov_o.rows() != theta_o.size())
    throw DimensionMismatch("combine: theta blocks differ in size");
  if (w == 0.0) return theta_e;
  const auto p = theta_e.size();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(p, p);
  Eigen::LLT<Eigen::MatrixXd> le(cov_e), lo(cov_o);
  if (le.info() != Eigen::Success || lo.info() != Eigen::Success)
    throw SingularPrecision("combine: sandwich covariance is not positive definite");
  const Eigen::MatrixXd Pe = le.solve(I), Po = lo.solve(I);
  const Eigen::MatrixXd P = Pe + w * Po;
  Eigen::LLT<Eigen::MatrixXd> lp(P);
  if (lp.info() != Eigen::Success) throw SingularPrecision("combine: combined precision is singular");
  const Eigen::VectorXd out = lp.solve(Pe * theta_e + w * (Po * theta_o));
  if (!out.allFinite()) throw SingularPrecision("combine: combined precision is singular");
  return out;
}

inline PowerCombination combine_power(const FitResult& fit_e, const FitResult& fit_o, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("combine_power: eta must lie in [0, 1]");
  if (!fit_e.converged || !fit_o.converged) throw DomainError("combine_power: both fits must have converged");
  if (fit_e.params.layout->theta_names() != fit_o.params.layout->theta_names())
    throw DimensionMismatch("combine_power: theta layouts differ");
  PowerCombination pc;
  pc.eta = eta;
  pc.theta_hat = combine_precision_weighted(fit_e.params.theta, fit_e.sandwich_theta, fit_o.params.theta,
                                            fit_o.sandwich_theta, eta);
  pc.fisher_combined = eta == 0.0 ? fit_e.fisher_theta : (fit_e.fisher_theta + eta * fit_o.fisher_theta).eval();
  pc.nuisance_e = fit_e.params.nuisance;
  pc.layout = fit_e.params.layout;
  return pc;
}

// ---------------------------------------------------------------------------
// Conjugate normal means

struct ConjugatePosterior {
  double mean = 0.0;
  double variance = 0.0;
  double eta = 0.0;
};

inline ConjugatePosterior conjugate_normal_posterior(double xbar, double ybar, double n_e, double n_o, double sigma2,
                                                     double theta0, double sigma02, double eta) {
  if (!(sigma2 > 0.0) || !(sigma02 > 0.0)) throw DomainError("conjugate posterior: variances must be positive");
  if (!(eta >= 0.0) || !(n_e >= 0.0) || !(n_o >= 0.0) || !(n_e + eta * n_o > 0.0))
    throw DomainError("conjugate posterior: need n_e + eta n_o > 0");
  const double den = sigma2 + n_e * sigma02 + eta * n_o * sigma02;
  return {(sigma2 * theta0 + n_e * sigma02 * xbar + eta * n_o * sigma02 * ybar) / den, sigma2 * sigma02 / den, eta};
}

// Flat-prior limit.
inline ConjugatePosterior conjugate_normal_posterior_flat(double xbar, double ybar, double n_e, double n_o,
                                                          double sigma2, double eta) {
  if (!(sigma2 > 0.0)) throw DomainError("conjugate posterior: variance must be positive");
  if (!(eta >= 0.0) || !(n_e >= 0.0) || !(n_o >= 0.0) || !(n_e + eta * n_o > 0.0))
    throw DomainError("conjugate posterior: need n_e + eta n_o > 0");
  const double m = n_e + eta * n_o;
  return {(n_e * xbar + eta * n_o * ybar) / m, sigma2 / m, eta};
}

// ---------------------------------------------------------------------------
// Treatment effects under a causal margin that is linear in theta

// Row vector g over theta with tau(c) = g . theta, where tau(c) is the
// difference of the linear predictor at T = 1 and T = 0.
inline Eigen::VectorXd cate_contrast(const Formula& causal, const std::string& treatment,
                                     const std::unordered_map<std::string, double>& c) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(causal.size() + 1));
  for (std::size_t k = 0; k < causal.size(); ++k) {
    const auto& t = causal.terms()[k];
    if (!t.references(treatment)) continue;
    double v = 1.0;
    for (const auto& f : t.factors) {
      if (f == treatment) continue;
      auto it = c.find(f);
      if (it == c.end()) throw ConfigError("cate: no value supplied for '" + f + "'");
      v *= it->second;
    }
    g[static_cast<Eigen::Index>(k)] = v;
  }
  return g;
}

inline double estimate_cate(const ParamVector& theta, const Formula& causal, const std::string& treatment,
                            const std::unordered_map<std::string, double>& c) {
  if (theta.theta.size() != static_cast<Eigen::Index>(causal.size() + 1))
    throw DimensionMismatch("estimate_cate: theta does not match the causal formula");
  if (causal.find({treatment}) < 0) throw ConfigError("estimate_cate: causal formula lacks a treatment term");
  return cate_contrast(causal, treatment, c).dot(theta.theta);
}

// Average of the CATE contrast over the given rows of `d` (all rows if empty).
inline Eigen::VectorXd average_contrast(const Formula& causal, const std::string& treatment, const Dataset& d,
                                        std::span<const std::size_t> rows = {}) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(causal.size() + 1));
  std::unordered_map<std::string, double> c;
  const auto cols = causal.columns();
  auto add = [&](std::size_t i) {
    for (const auto& name : cols)
      if (name != treatment) c[name] = d.at(i, name);
    g += cate_contrast(causal, treatment, c);
  };
  if (rows.empty()) {
    for (std::size_t i = 0; i < d.n(); ++i) add(i);
    if (d.n() == 0) throw EmptyStratum("average_contrast: no rows");
    return g / static_cast<double>(d.n());
  }
  for (auto i : rows) add(i);
  return g / static_cast<double>(rows.size());
}

inline double estimate_ate(const ParamVector& theta, const Formula& causal, const std::string& treatment,
                           const Dataset& d_e) {
  return average_contrast(causal, treatment, d_e).dot(theta.theta);
}

}  // namespace powerlik
