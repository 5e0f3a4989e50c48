#pragma once

// Gaussian (identity) and Bernoulli (logit) GLMs for the past components.

#include <Eigen/Dense>

#include <cmath>

#include "powerlik/density.hpp"
#include "powerlik/errors.hpp"
#include "powerlik/model.hpp"

namespace powerlik {

inline constexpr double kVarianceFloor = 1e-12;

struct GlmFit {
  Eigen::VectorXd coef;
  Eigen::MatrixXd cov;  // inverse observed information
  double loglik = 0.0;
  double sigma2 = 1.0;  // residual variance MLE (gaussian only)
  int iterations = 0;
};

namespace detail {

inline void require_full_rank(const Eigen::MatrixXd& X, const char* what) {
  if (X.rows() < X.cols())
    throw RankDeficient(std::string(what) + ": fewer rows than columns");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < X.cols()) throw RankDeficient(std::string(what) + ": design matrix is rank deficient");
}

}  // namespace detail

inline GlmFit fit_gaussian(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  detail::require_full_rank(X, "gaussian glm");
  GlmFit out;
  const Eigen::MatrixXd xtx = X.transpose() * X;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
  out.coef = ldlt.solve(X.transpose() * y);
  // One refinement step keeps noiseless fits at round-off level.
  out.coef += ldlt.solve(X.transpose() * (y - X * out.coef));
  const double n = static_cast<double>(y.size());
  out.sigma2 = std::max((y - X * out.coef).squaredNorm() / n, kVarianceFloor);
  out.cov = out.sigma2 * ldlt.solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
  out.loglik = -n * kLogSqrt2Pi - 0.5 * n * std::log(out.sigma2) -
               (y - X * out.coef).squaredNorm() / (2.0 * out.sigma2);
  return out;
}

inline GlmFit fit_logit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int max_iter = 100,
                        double tol = 1e-8) {
  detail::require_full_rank(X, "logit glm");
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] != 0.0 && y[i] != 1.0) throw DomainError("logit glm: response must be 0/1");

  const auto p = X.cols();
  GlmFit out;
  out.coef = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd mu(y.size()), w(y.size());
  Eigen::MatrixXd H(p, p);
  for (int it = 0; it <= max_iter; ++it) {
    const Eigen::VectorXd eta = X * out.coef;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      mu[i] = expit(eta[i]);
      w[i] = mu[i] * (1.0 - mu[i]);
    }
    const Eigen::VectorXd grad = X.transpose() * (y - mu);
    H.noalias() = X.transpose() * w.asDiagonal() * X;
    out.iterations = it;
    if (grad.norm() < tol) {
      // Vanishing gradient with saturated fitted values means the data are
      // (quasi-)separated and the MLE is at infinity.
      if (eta.cwiseAbs().maxCoeff() > 30.0) throw NoConvergence("logit glm: data appear separated");
      out.loglik = 0.0;
      for (Eigen::Index i = 0; i < y.size(); ++i) out.loglik += y[i] * eta[i] - log1pexp(eta[i]);
      Eigen::LLT<Eigen::MatrixXd> llt(H);
      if (llt.info() != Eigen::Success) throw NoConvergence("logit glm: singular information at optimum");
      out.cov = llt.solve(Eigen::MatrixXd::Identity(p, p));
      return out;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    const Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) throw NoConvergence("logit glm: data appear separated");
    out.coef += step;
    if (out.coef.cwiseAbs().maxCoeff() > 1e3) throw NoConvergence("logit glm: coefficients diverging (separation)");
  }
  throw NoConvergence("logit glm: no convergence within iteration limit");
}

inline GlmFit fit_glm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family) {
  if (X.rows() != y.size()) throw DimensionMismatch("glm: X and y differ in rows");
  return family == Family::GaussianIdentity ? fit_gaussian(X, y) : fit_logit(X, y);
}

}  // namespace powerlik
