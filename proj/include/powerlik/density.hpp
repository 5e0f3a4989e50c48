#pragma once

// Frugal joint log-density
//
//   log p(z, t, y | c) = sum_k log p_k(past component k)
//                      + log p*(y | t, c; theta)
//                      + log c(u_Z, u_Y; R(t, c))
//
// where every margin entering the Gaussian copula is Gaussian, so the copula
// arguments are the standardized residuals (normal scores) of the members.
// The density of C is never modeled.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "powerlik/errors.hpp"
#include "powerlik/model.hpp"

namespace powerlik {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2 pi))
inline constexpr double kUniformClamp = 1e-12;

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: probability outside (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double normal_logpdf(double x, double mean, double sd) {
  const double s = (x - mean) / sd;
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * s * s;
}

inline double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// 2 expit(x) - 1, written as tanh(x / 2).
inline double correlation_link(double x) { return std::tanh(0.5 * x); }

// Largest normal score reachable after clamping a uniform to [1e-12, 1 - 1e-12].
inline double score_clamp() {
  static const double z = normal_quantile(1.0 - kUniformClamp);
  return z;
}

inline double clamp_score(double z) {
  const double m = score_clamp();
  return z > m ? m : (z < -m ? -m : z);
}

// ---------------------------------------------------------------------------
// Gaussian copula

class CorrelationMatrix {
 public:
  explicit CorrelationMatrix(Eigen::MatrixXd r, double tol = 1e-12) : r_(std::move(r)) {
    if (r_.rows() != r_.cols() || r_.rows() == 0)
      throw DimensionMismatch("correlation matrix must be square and non-empty");
    for (Eigen::Index i = 0; i < r_.rows(); ++i) {
      if (std::abs(r_(i, i) - 1.0) > tol) throw DomainError("correlation matrix needs a unit diagonal");
      for (Eigen::Index j = 0; j < i; ++j)
        if (std::abs(r_(i, j) - r_(j, i)) > tol) throw DomainError("correlation matrix is not symmetric");
    }
    llt_.compute(r_);
    if (llt_.info() != Eigen::Success) throw NonPositiveDefinite("correlation matrix is not positive definite");
    const auto& L = llt_.matrixL();
    log_det_ = 0.0;
    for (Eigen::Index i = 0; i < r_.rows(); ++i) {
      const double d = L(i, i);
      if (!(d > 0.0)) throw NonPositiveDefinite("correlation matrix is not positive definite");
      log_det_ += 2.0 * std::log(d);
    }
  }

  static CorrelationMatrix equicorrelation(Eigen::Index dim, double rho) {
    Eigen::MatrixXd r = Eigen::MatrixXd::Constant(dim, dim, rho);
    r.diagonal().setOnes();
    return CorrelationMatrix(std::move(r));
  }

  Eigen::Index dim() const { return r_.rows(); }
  const Eigen::MatrixXd& matrix() const { return r_; }
  double log_det() const { return log_det_; }

  // z^T (R^-1 - I) z
  double excess_quadratic(const Eigen::VectorXd& z) const {
    const Eigen::VectorXd w = llt_.matrixL().solve(z);
    return w.squaredNorm() - z.squaredNorm();
  }

 private:
  Eigen::MatrixXd r_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double log_det_ = 0.0;
};

// log c(u; R) evaluated from normal scores z_i = Phi^-1(u_i).
inline double gaussian_copula_logdensity_scores(const Eigen::VectorXd& z, const CorrelationMatrix& r) {
  if (z.size() != r.dim()) throw DimensionMismatch("copula: score vector and correlation matrix differ in size");
  return -0.5 * r.log_det() - 0.5 * r.excess_quadratic(z);
}

inline double gaussian_copula_logdensity(std::span<const double> u, const CorrelationMatrix& r) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(u.size()));
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!(u[i] > 0.0 && u[i] < 1.0)) throw DomainError("copula: argument outside (0, 1)");
    z[static_cast<Eigen::Index>(i)] = normal_quantile(std::clamp(u[i], kUniformClamp, 1.0 - kUniformClamp));
  }
  return gaussian_copula_logdensity_scores(z, r);
}

// ---------------------------------------------------------------------------
// Layout

namespace detail {

struct ComponentBlock {
  std::size_t offset = 0;  // into the full parameter vector
  std::size_t n_coef = 0;
  bool has_sigma = false;  // log sd stored right after the coefficients
};

struct CopulaBlocks {
  std::size_t members = 0;                 // number of Z members
  std::vector<std::size_t> yz_offset;      // per Z member (all equal when shared)
  std::vector<std::size_t> zz_offset;      // per Z pair (i < j, row-major)
  std::size_t yz_size = 0, zz_size = 0;
};

struct LayoutPlan {
  std::shared_ptr<const ParamLayout> layout;
  std::size_t causal_size = 0;  // coefficients; log sd follows at index causal_size
  std::vector<ComponentBlock> components;
  CopulaBlocks copula;
};

inline LayoutPlan plan_layout(const FrugalModelSpec& spec) {
  LayoutPlan plan;
  std::vector<std::string> names;
  for (const auto& t : spec.causal.terms()) names.push_back(causal_param_name(t));
  names.emplace_back(kCausalLogSigma);
  plan.causal_size = spec.causal.size();
  const std::size_t theta_size = names.size();

  for (const auto& comp : spec.past) {
    ComponentBlock b;
    b.offset = names.size();
    b.n_coef = comp.formula.size();
    b.has_sigma = comp.family == Family::GaussianIdentity;
    for (const auto& t : comp.formula.terms()) names.push_back("past:" + comp.target + ":" + t.name());
    if (b.has_sigma) names.push_back("past:" + comp.target + ":log_sigma");
    plan.components.push_back(b);
  }

  auto& cb = plan.copula;
  cb.members = spec.copula.members.size();
  cb.yz_size = spec.copula.yz_link.size();
  cb.zz_size = spec.copula.zz_link.size();
  if (cb.members > 0) {
    if (spec.copula.per_pair) {
      for (const auto& m : spec.copula.members) {
        cb.yz_offset.push_back(names.size());
        for (const auto& t : spec.copula.yz_link.terms()) names.push_back("copula:" + m + "~Y:" + t.name());
      }
      for (std::size_t i = 0; i < cb.members; ++i)
        for (std::size_t j = i + 1; j < cb.members; ++j) {
          cb.zz_offset.push_back(names.size());
          for (const auto& t : spec.copula.zz_link.terms())
            names.push_back("copula:" + spec.copula.members[i] + "~" + spec.copula.members[j] + ":" + t.name());
        }
    } else {
      const std::size_t yz = names.size();
      for (const auto& t : spec.copula.yz_link.terms()) names.push_back("copula:yz:" + t.name());
      cb.yz_offset.assign(cb.members, yz);
      if (cb.members > 1) {
        const std::size_t zz = names.size();
        for (const auto& t : spec.copula.zz_link.terms()) names.push_back("copula:zz:" + t.name());
        cb.zz_offset.assign(cb.members * (cb.members - 1) / 2, zz);
      }
    }
  }
  plan.layout = std::make_shared<const ParamLayout>(std::move(names), theta_size);
  return plan;
}

}  // namespace detail

inline std::shared_ptr<const ParamLayout> make_layout(const FrugalModelSpec& spec) {
  return detail::plan_layout(spec).layout;
}

// ---------------------------------------------------------------------------
// Likelihood evaluator bound to one dataset

class FrugalLikelihood {
 public:
  FrugalLikelihood(const Dataset& d, FrugalModelSpec spec) : spec_(std::move(spec)) {
    validate_spec(spec_, d);
    plan_ = detail::plan_layout(spec_);
    n_ = static_cast<Eigen::Index>(d.n());
    y_ = d.column(d.outcome());
    x_causal_ = design_matrix(d, spec_.causal);
    for (const auto& comp : spec_.past) {
      past_x_.push_back(design_matrix(d, comp.formula));
      past_target_.push_back(d.column(comp.target));
    }
    for (const auto& m : spec_.copula.members) {
      for (std::size_t k = 0; k < spec_.past.size(); ++k)
        if (spec_.past[k].target == m) member_component_.push_back(k);
    }
    if (!spec_.copula.members.empty()) {
      x_yz_ = design_matrix(d, spec_.copula.yz_link);
      x_zz_ = design_matrix(d, spec_.copula.zz_link);
    }
  }

  const FrugalModelSpec& spec() const { return spec_; }
  const std::shared_ptr<const ParamLayout>& layout() const { return plan_.layout; }
  const detail::LayoutPlan& plan() const { return plan_; }
  Eigen::Index n() const { return n_; }
  std::size_t size() const { return plan_.layout->size(); }
  const Eigen::MatrixXd& causal_design() const { return x_causal_; }
  const Eigen::VectorXd& outcome() const { return y_; }
  const Eigen::MatrixXd& past_design(std::size_t k) const { return past_x_[k]; }
  const Eigen::VectorXd& past_target(std::size_t k) const { return past_target_[k]; }

  // Per-row log p(z, t, y | c). Rows whose copula correlation matrix is not
  // positive definite get -inf.
  void row_logdensities(const Eigen::VectorXd& full, Eigen::Ref<Eigen::VectorXd> out) const {
    if (full.size() != static_cast<Eigen::Index>(size()))
      throw DimensionMismatch("likelihood: parameter vector does not match layout");
    const auto pc = static_cast<Eigen::Index>(plan_.causal_size);

    const double log_sigma_y = full[pc];
    const double sigma_y = std::exp(log_sigma_y);
    Eigen::ArrayXd s_y = (y_ - x_causal_ * full.head(pc)).array() / sigma_y;
    out = (-kLogSqrt2Pi - log_sigma_y - 0.5 * s_y.square()).matrix();

    const std::size_t m = spec_.copula.members.size();
    std::vector<Eigen::ArrayXd> member_scores(m);

    for (std::size_t k = 0; k < spec_.past.size(); ++k) {
      const auto& b = plan_.components[k];
      const auto coef = full.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.n_coef));
      Eigen::ArrayXd lin = (past_x_[k] * coef).array();
      if (b.has_sigma) {
        const double ls = full[static_cast<Eigen::Index>(b.offset + b.n_coef)];
        Eigen::ArrayXd s = (past_target_[k].array() - lin) / std::exp(ls);
        out.array() += -kLogSqrt2Pi - ls - 0.5 * s.square();
        for (std::size_t j = 0; j < m; ++j)
          if (member_component_[j] == k) member_scores[j] = std::move(s);
      } else {
        const auto& t = past_target_[k];
        for (Eigen::Index i = 0; i < n_; ++i) out[i] += t[i] * lin[i] - log1pexp(lin[i]);
      }
    }

    if (m == 0) return;
    add_copula(full, s_y, member_scores, out);
  }

  double loglik(const Eigen::VectorXd& full) const {
    Eigen::VectorXd rows(n_);
    row_logdensities(full, rows);
    return rows.sum();
  }

  // Correlation entries for one row: first the m Y-Z correlations, then the
  // Z-Z correlations in (i < j) row-major order.
  void row_correlations(const Eigen::VectorXd& full, Eigen::Index i, std::vector<double>& yz,
                        std::vector<double>& zz) const {
    const auto& cb = plan_.copula;
    yz.resize(cb.members);
    zz.resize(cb.zz_offset.size());
    for (std::size_t j = 0; j < cb.members; ++j)
      yz[j] = correlation_link(x_yz_.row(i).dot(
          full.segment(static_cast<Eigen::Index>(cb.yz_offset[j]), static_cast<Eigen::Index>(cb.yz_size))));
    for (std::size_t p = 0; p < cb.zz_offset.size(); ++p)
      zz[p] = correlation_link(x_zz_.row(i).dot(
          full.segment(static_cast<Eigen::Index>(cb.zz_offset[p]), static_cast<Eigen::Index>(cb.zz_size))));
  }

 private:
  void add_copula(const Eigen::VectorXd& full, const Eigen::ArrayXd& s_y,
                  const std::vector<Eigen::ArrayXd>& member_scores, Eigen::Ref<Eigen::VectorXd> out) const {
    const auto& cb = plan_.copula;
    const std::size_t m = cb.members;
    const auto shared_yz = full.segment(static_cast<Eigen::Index>(cb.yz_offset[0]), static_cast<Eigen::Index>(cb.yz_size));

    if (m == 1) {
      Eigen::ArrayXd rho = (x_yz_ * shared_yz).array().unaryExpr([](double v) { return correlation_link(v); });
      for (Eigen::Index i = 0; i < n_; ++i) {
        const double r = rho[i];
        const double one_m = 1.0 - r * r;
        if (!(one_m > 0.0)) {
          out[i] = -std::numeric_limits<double>::infinity();
          continue;
        }
        const double a = clamp_score(member_scores[0][i]);
        const double b = clamp_score(s_y[i]);
        out[i] += -0.5 * std::log(one_m) - (r * r * (a * a + b * b) - 2.0 * r * a * b) / (2.0 * one_m);
      }
      return;
    }

    const auto dim = static_cast<Eigen::Index>(m + 1);
    Eigen::MatrixXd R(dim, dim);
    Eigen::VectorXd z(dim);
    Eigen::LLT<Eigen::MatrixXd> llt(dim);
    std::vector<double> yz, zz;
    for (Eigen::Index i = 0; i < n_; ++i) {
      row_correlations(full, i, yz, zz);
      R.setIdentity();
      std::size_t p = 0;
      for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b, ++p) {
          R(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = zz[p];
          R(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = zz[p];
        }
        R(static_cast<Eigen::Index>(a), dim - 1) = yz[a];
        R(dim - 1, static_cast<Eigen::Index>(a)) = yz[a];
        z[static_cast<Eigen::Index>(a)] = clamp_score(member_scores[a][i]);
      }
      z[dim - 1] = clamp_score(s_y[i]);
      llt.compute(R);
      if (llt.info() != Eigen::Success) {
        out[i] = -std::numeric_limits<double>::infinity();
        continue;
      }
      double log_det = 0.0;
      for (Eigen::Index k = 0; k < dim; ++k) log_det += 2.0 * std::log(llt.matrixL()(k, k));
      const Eigen::VectorXd w = llt.matrixL().solve(z);
      out[i] += -0.5 * log_det - 0.5 * (w.squaredNorm() - z.squaredNorm());
    }
  }

  FrugalModelSpec spec_;
  detail::LayoutPlan plan_;
  Eigen::Index n_ = 0;
  Eigen::VectorXd y_;
  Eigen::MatrixXd x_causal_;
  std::vector<Eigen::MatrixXd> past_x_;
  std::vector<Eigen::VectorXd> past_target_;
  std::vector<std::size_t> member_component_;
  Eigen::MatrixXd x_yz_, x_zz_;
};

// Evaluates row log-densities for many theta draws with the nuisance block
// held fixed. Everything that depends only on the nuisance is cached, so a
// draw costs one matrix-vector product plus a few flops per row.
// Nuisance used when scoring a theta draw: nuisance + slope (theta - anchor).
// With the slope of the experimental fit this tracks the profile likelihood,
// so moving theta away from its MLE costs the marginal information of theta
// rather than the (larger) information with the nuisance frozen. An empty
// slope is the plain plug-in.
struct NuisanceProfile {
  Eigen::VectorXd nuisance;
  Eigen::VectorXd anchor;
  Eigen::MatrixXd slope;

  static NuisanceProfile plug_in(const Eigen::VectorXd& nuisance) { return {nuisance, {}, {}}; }
  static NuisanceProfile of(const FitResult& fit) {
    return {fit.params.nuisance, fit.params.theta, fit.nuisance_slope};
  }
  bool moves() const { return slope.size() > 0; }
};

class PredictiveEvaluator {
 public:
  PredictiveEvaluator(const FrugalLikelihood& lik, const NuisanceProfile& profile)
      : PredictiveEvaluator(lik, profile.nuisance) {
    if (!profile.moves()) return;
    const auto& layout = *lik.layout();
    if (profile.slope.rows() != static_cast<Eigen::Index>(layout.nuisance_size()) ||
        profile.slope.cols() != static_cast<Eigen::Index>(layout.theta_size()) ||
        profile.anchor.size() != profile.slope.cols())
      throw DimensionMismatch("predictive: nuisance profile does not match layout");
    lik_ = &lik;
    profile_ = profile;
    full_.resize(static_cast<Eigen::Index>(layout.size()));
  }

  PredictiveEvaluator(const FrugalLikelihood& lik, const Eigen::VectorXd& nuisance)
      : x_(lik.causal_design()), y_(lik.outcome()), causal_size_(lik.plan().causal_size) {
    const auto& layout = *lik.layout();
    if (nuisance.size() != static_cast<Eigen::Index>(layout.nuisance_size()))
      throw DimensionMismatch("predictive: nuisance vector does not match layout");
    const Eigen::Index n = lik.n();
    Eigen::VectorXd full(static_cast<Eigen::Index>(layout.size()));
    full.head(static_cast<Eigen::Index>(layout.theta_size())).setZero();
    full.tail(nuisance.size()) = nuisance;

    // Past terms: evaluate the full density at theta = 0 and strip the
    // Y-margin and copula parts, which are recomputed per draw.
    fixed_ = Eigen::VectorXd::Zero(n);
    const auto& spec = lik.spec();
    const auto& plan = lik.plan();
    std::vector<Eigen::ArrayXd> member_scores(spec.copula.members.size());
    for (std::size_t k = 0; k < spec.past.size(); ++k) {
      const auto& b = plan.components[k];
      const auto coef = full.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.n_coef));
      Eigen::ArrayXd lin = (lik.past_design(k) * coef).array();
      if (b.has_sigma) {
        const double ls = full[static_cast<Eigen::Index>(b.offset + b.n_coef)];
        Eigen::ArrayXd s = (lik.past_target(k).array() - lin) / std::exp(ls);
        fixed_.array() += -kLogSqrt2Pi - ls - 0.5 * s.square();
        for (std::size_t j = 0; j < spec.copula.members.size(); ++j)
          if (spec.copula.members[j] == spec.past[k].target) member_scores[j] = s;
      } else {
        const auto& t = lik.past_target(k);
        for (Eigen::Index i = 0; i < n; ++i) fixed_[i] += t[i] * lin[i] - log1pexp(lin[i]);
      }
    }

    const std::size_t m = spec.copula.members.size();
    a_ = Eigen::VectorXd::Zero(n);
    b_ = Eigen::VectorXd::Zero(n);
    if (m == 0) return;
    const auto dim = static_cast<Eigen::Index>(m + 1);
    Eigen::MatrixXd R(dim, dim);
    Eigen::VectorXd zz_scores(static_cast<Eigen::Index>(m));
    std::vector<double> yz, zz;
    for (Eigen::Index i = 0; i < n; ++i) {
      lik.row_correlations(full, i, yz, zz);
      R.setIdentity();
      std::size_t p = 0;
      for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b, ++p) {
          R(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = zz[p];
          R(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = zz[p];
        }
        R(static_cast<Eigen::Index>(a), dim - 1) = yz[a];
        R(dim - 1, static_cast<Eigen::Index>(a)) = yz[a];
        zz_scores[static_cast<Eigen::Index>(a)] = clamp_score(member_scores[a][i]);
      }
      Eigen::LLT<Eigen::MatrixXd> llt(R);
      bool ok = llt.info() == Eigen::Success;
      for (Eigen::Index k = 0; ok && k < dim; ++k) ok = llt.matrixL()(k, k) > 0.0;
      if (!ok || (m == 1 && !(1.0 - yz[0] * yz[0] > 0.0))) {
        fixed_[i] = -std::numeric_limits<double>::infinity();
        continue;
      }
      double log_det = 0.0;
      for (Eigen::Index k = 0; k < dim; ++k) log_det += 2.0 * std::log(llt.matrixL()(k, k));
      const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(dim, dim));
      const auto izz = inv.topLeftCorner(dim - 1, dim - 1);
      const auto izy = inv.col(dim - 1).head(dim - 1);
      a_[i] = inv(dim - 1, dim - 1) - 1.0;
      b_[i] = izy.dot(zz_scores);
      fixed_[i] += -0.5 * log_det - 0.5 * (zz_scores.dot(izz * zz_scores) - zz_scores.squaredNorm());
    }
  }

  Eigen::Index n() const { return y_.size(); }

  void evaluate(const Eigen::Ref<const Eigen::VectorXd>& theta, Eigen::Ref<Eigen::VectorXd> out) const {
    if (lik_) {
      const auto p = theta.size();
      full_.head(p) = theta;
      full_.tail(full_.size() - p) = profile_.nuisance + profile_.slope * (theta - profile_.anchor);
      lik_->row_logdensities(full_, out);
      return;
    }
    const auto pc = static_cast<Eigen::Index>(causal_size_);
    const double log_sigma = theta[pc];
    const double inv_sigma = std::exp(-log_sigma);
    mu_.noalias() = x_ * theta.head(pc);
    for (Eigen::Index i = 0; i < y_.size(); ++i) {
      const double s = (y_[i] - mu_[i]) * inv_sigma;
      const double z = clamp_score(s);
      out[i] = fixed_[i] - kLogSqrt2Pi - log_sigma - 0.5 * s * s - 0.5 * (a_[i] * z * z + 2.0 * b_[i] * z);
    }
  }

 private:
  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  std::size_t causal_size_;
  Eigen::VectorXd fixed_, a_, b_;
  mutable Eigen::VectorXd mu_;
  const FrugalLikelihood* lik_ = nullptr;
  NuisanceProfile profile_;
  mutable Eigen::VectorXd full_;
};

// ---------------------------------------------------------------------------
// Single-row API

inline double frugal_logdensity(const Dataset& d, std::size_t row, const ParamVector& params,
                                const FrugalModelSpec& spec) {
  const std::size_t rows[] = {row};
  FrugalLikelihood lik(d.select_rows(rows), spec);
  if (!(*lik.layout() == *params.layout)) throw DimensionMismatch("frugal_logdensity: layout mismatch");
  Eigen::VectorXd out(1);
  lik.row_logdensities(params.full(), out);
  if (std::isnan(out[0])) throw DomainError("frugal_logdensity: margin transform produced NaN");
  return out[0];
}

inline double score_step(double x) { return 1e-6 * (1.0 + std::abs(x)); }

// Per-row central-difference scores; column j of the result is the
// derivative with respect to parameter `coords[j]`.
inline Eigen::MatrixXd row_scores(const FrugalLikelihood& lik, const Eigen::VectorXd& full,
                                  std::span<const std::size_t> coords) {
  Eigen::MatrixXd g(lik.n(), static_cast<Eigen::Index>(coords.size()));
  Eigen::VectorXd hi(lik.n()), lo(lik.n());
  Eigen::VectorXd x = full;
  for (std::size_t j = 0; j < coords.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(coords[j]);
    const double h = score_step(full[c]);
    x[c] = full[c] + h;
    lik.row_logdensities(x, hi);
    x[c] = full[c] - h;
    lik.row_logdensities(x, lo);
    x[c] = full[c];
    if (!hi.allFinite() || !lo.allFinite()) throw NonFinite("score: perturbed log-density is not finite");
    g.col(static_cast<Eigen::Index>(j)) = (hi - lo) / (2.0 * h);
  }
  return g;
}

inline Eigen::VectorXd frugal_score(const Dataset& d, std::size_t row, const ParamVector& params,
                                    const FrugalModelSpec& spec) {
  const std::size_t rows[] = {row};
  FrugalLikelihood lik(d.select_rows(rows), spec);
  if (!(*lik.layout() == *params.layout)) throw DimensionMismatch("frugal_score: layout mismatch");
  std::vector<std::size_t> all(lik.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return row_scores(lik, params.full(), all).row(0).transpose();
}

}  // namespace powerlik
