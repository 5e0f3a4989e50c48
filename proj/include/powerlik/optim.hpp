#pragma once

// BFGS with backtracking line search, and finite-difference derivatives.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>

namespace powerlik {

using Objective = std::function<double(const Eigen::VectorXd&)>;

inline double gradient_step(double x) { return 1e-6 * (1.0 + std::abs(x)); }
inline double hessian_step(double x) { return 1e-4 * (1.0 + std::abs(x)); }

inline Eigen::VectorXd numerical_gradient(const Objective& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd y = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = gradient_step(x[j]);
    y[j] = x[j] + h;
    const double hi = f(y);
    y[j] = x[j] - h;
    const double lo = f(y);
    y[j] = x[j];
    g[j] = (hi - lo) / (2.0 * h);
  }
  return g;
}

// Symmetric second-difference Hessian; `fx` is f(x).
inline Eigen::MatrixXd numerical_hessian(const Objective& f, const Eigen::VectorXd& x, double fx) {
  const Eigen::Index p = x.size();
  Eigen::MatrixXd H(p, p);
  Eigen::VectorXd h(p);
  for (Eigen::Index j = 0; j < p; ++j) h[j] = hessian_step(x[j]);
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 0; i < p; ++i) {
    y[i] = x[i] + h[i];
    const double fp = f(y);
    y[i] = x[i] - h[i];
    const double fm = f(y);
    y[i] = x[i];
    H(i, i) = (fp - 2.0 * fx + fm) / (h[i] * h[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      y[i] = x[i] + h[i]; y[j] = x[j] + h[j];
      const double fpp = f(y);
      y[j] = x[j] - h[j];
      const double fpm = f(y);
      y[i] = x[i] - h[i];
      const double fmm = f(y);
      y[j] = x[j] + h[j];
      const double fmp = f(y);
      y[i] = x[i]; y[j] = x[j];
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
    }
  }
  return H;
}

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
};

struct BfgsOptions {
  double grad_tol = 1e-6;  // on the infinity norm
  int max_iter = 500;
};

inline OptimResult bfgs_minimize(const Objective& f, Eigen::VectorXd x, const BfgsOptions& opt = {}) {
  const Eigen::Index p = x.size();
  auto safe = [&](const Eigen::VectorXd& v) {
    const double r = f(v);
    return std::isfinite(r) ? r : std::numeric_limits<double>::infinity();
  };

  OptimResult out;
  double fx = safe(x);
  Eigen::VectorXd g = numerical_gradient(safe, x);
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(p, p);
  bool scaled = false;

  for (int it = 0; it < opt.max_iter; ++it) {
    out.iterations = it;
    if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd d = -Hinv * g;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      Hinv.setIdentity();
      d = -g;
      slope = -g.squaredNorm();
    }

    double step = 1.0;
    Eigen::VectorXd xn;
    double fn = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      xn = x + step * d;
      fn = safe(xn);
      if (fn <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (Hinv.isIdentity()) break;  // no descent possible along -g
      Hinv.setIdentity();
      continue;
    }

    const Eigen::VectorXd gn = numerical_gradient(safe, xn);
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd yv = gn - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (!scaled) {
        Hinv *= sy / yv.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = Hinv * yv;
      Hinv += (rho * rho * yv.dot(Hy) + rho) * (s * s.transpose()) - rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    x = xn;
    fx = fn;
    g = gn;
    out.iterations = it + 1;
  }
  if (!out.converged && g.lpNorm<Eigen::Infinity>() < opt.grad_tol) out.converged = true;
  out.x = std::move(x);
  out.f = fx;
  out.grad = std::move(g);
  return out;
}

}  // namespace powerlik
