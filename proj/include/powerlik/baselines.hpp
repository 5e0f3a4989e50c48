#pragma once

// Comparators: stratified IPW, Green-Strawderman and Rosenman shrinkage,
// Kallus experimental grounding, Oberst's linear combination.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "powerlik/density.hpp"
#include "powerlik/errors.hpp"
#include "powerlik/glm.hpp"
#include "powerlik/model.hpp"
#include "powerlik/synth.hpp"

namespace powerlik {

// ---------------------------------------------------------------------------
// Stratification

class StratificationScheme {
 public:
  enum class Kind { DecilesOfC, BinaryCrossQuintiles };

  static StratificationScheme deciles(std::string column) {
    StratificationScheme s;
    s.kind_ = Kind::DecilesOfC;
    s.cont_ = std::move(column);
    return s;
  }

  static StratificationScheme binary_cross_quintiles(std::string binary, std::string continuous) {
    StratificationScheme s;
    s.kind_ = Kind::BinaryCrossQuintiles;
    s.bin_ = std::move(binary);
    s.cont_ = std::move(continuous);
    return s;
  }

  Kind kind() const { return kind_; }
  std::size_t k() const { return 10; }
  bool fitted() const { return !cuts_.empty(); }
  const std::vector<double>& cutpoints() const { return cuts_; }

  // Cutpoints always come from the observational data.
  void learn(const Dataset& d_o) {
    std::vector<double> x(d_o.n());
    const auto c = d_o.column(cont_);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = c[static_cast<Eigen::Index>(i)];
    const int q = kind_ == Kind::DecilesOfC ? 10 : 5;
    cuts_.clear();
    for (int j = 1; j < q; ++j) cuts_.push_back(sample_quantile(x, static_cast<double>(j) / q));
  }

  std::size_t assign(const Dataset& d, std::size_t row) const {
    if (!fitted()) throw ConfigError("stratification: cutpoints not learned");
    const double v = d.at(row, cont_);
    const auto q = static_cast<std::size_t>(std::upper_bound(cuts_.begin(), cuts_.end(), v) - cuts_.begin());
    if (kind_ == Kind::DecilesOfC) return q;
    const double b = d.at(row, bin_);
    if (b != 0.0 && b != 1.0) throw DomainError("stratification: binary column '" + bin_ + "' is not 0/1");
    return 5 * static_cast<std::size_t>(b) + q;
  }

  std::vector<std::size_t> assign_all(const Dataset& d) const {
    std::vector<std::size_t> out(d.n());
    for (std::size_t i = 0; i < d.n(); ++i) out[i] = assign(d, i);
    return out;
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    if (kind_ == Kind::DecilesOfC) {
      for (int j = 1; j <= 10; ++j) out.push_back(cont_ + ":decile" + std::to_string(j));
    } else {
      for (int b = 0; b <= 1; ++b)
        for (int j = 1; j <= 5; ++j) out.push_back(bin_ + "=" + std::to_string(b) + ":" + cont_ + ":quintile" + std::to_string(j));
    }
    return out;
  }

 private:
  Kind kind_ = Kind::DecilesOfC;
  std::string bin_, cont_;
  std::vector<double> cuts_;
};

// ---------------------------------------------------------------------------
// IPW

struct PropensityModel {
  std::optional<double> constant;  // known design probability
  Formula formula;                 // logit model fit on the same data otherwise

  static PropensityModel known(double p) { return {p, {}}; }
  static PropensityModel logit(Formula f) { return {std::nullopt, std::move(f)}; }
};

inline constexpr double kPropensityFloor = 0.01;

inline StrataEstimates ipw_strata(const Dataset& d, const PropensityModel& pm, const StratificationScheme& scheme,
                                  std::size_t* clamped = nullptr) {
  require_valid(d.with_source(Source::Experimental), "ipw_strata");
  const auto n = static_cast<Eigen::Index>(d.n());
  Eigen::VectorXd e(n);
  if (pm.constant) {
    e.setConstant(*pm.constant);
  } else {
    const Eigen::MatrixXd X = design_matrix(d, pm.formula);
    const GlmFit g = fit_logit(X, d.column(d.treatment()));
    const Eigen::VectorXd lin = X * g.coef;
    for (Eigen::Index i = 0; i < n; ++i) e[i] = expit(lin[i]);
  }
  std::size_t n_clamped = 0;
  for (auto& p : e) {
    if (p < kPropensityFloor || p > 1.0 - kPropensityFloor) {
      p = std::clamp(p, kPropensityFloor, 1.0 - kPropensityFloor);
      ++n_clamped;
    }
  }
  if (clamped) *clamped = n_clamped;

  const auto t = d.column(d.treatment());
  const auto y = d.column(d.outcome());
  const std::size_t K = scheme.k();
  std::vector<std::vector<double>> contrib(K);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = t[i] * y[i] / e[i] - (1.0 - t[i]) * y[i] / (1.0 - e[i]);
    contrib[scheme.assign(d, static_cast<std::size_t>(i))].push_back(v);
  }
  StrataEstimates out;
  out.k = K;
  out.estimates.resize(static_cast<Eigen::Index>(K));
  out.variances.resize(static_cast<Eigen::Index>(K));
  out.labels = scheme.labels();
  for (std::size_t k = 0; k < K; ++k) {
    const auto& c = contrib[k];
    if (c.size() < 2) throw EmptyStratum("ipw_strata: stratum " + out.labels[k] + " has fewer than two units");
    const double nk = static_cast<double>(c.size());
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= nk;
    double ss = 0.0;
    for (double v : c) ss += (v - mean) * (v - mean);
    out.estimates[static_cast<Eigen::Index>(k)] = mean;
    out.variances[static_cast<Eigen::Index>(k)] = ss / (nk - 1.0) / nk;
    out.counts.push_back(c.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shrinkage

namespace detail {

inline void check_same_k(const StrataEstimates& a, const StrataEstimates& b) {
  if (a.estimates.size() != b.estimates.size() || a.variances.size() != a.estimates.size())
    throw DimensionMismatch("shrinkage: strata vectors differ in length");
}

// Positive part of a matrix: clamp the eigenvalues of its symmetric part at 0.
inline Eigen::MatrixXd matrix_positive_part(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline double positive_part(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace detail

enum class GsVariant { Delta1, Delta2 };
enum class RosenmanVariant { Kappa1, Kappa2 };

// Shrinks theta_e toward theta_o: theta_o + M (theta_e - theta_o).
inline Eigen::VectorXd gs_shrink(const StrataEstimates& theta_e, const StrataEstimates& theta_o, GsVariant variant) {
  detail::check_same_k(theta_e, theta_o);
  const auto K = theta_e.estimates.size();
  if (K < 3) throw DimensionMismatch("gs_shrink: need at least three strata");
  const double a = static_cast<double>(K) - 2.0;
  const Eigen::VectorXd diff = theta_e.estimates - theta_o.estimates;
  if (diff.isZero(0.0)) return theta_o.estimates;
  const Eigen::ArrayXd sig = theta_e.variances.array();
  if (variant == GsVariant::Delta1) {
    const double Q = (diff.array().square() / sig).sum();
    return theta_o.estimates + detail::positive_part(1.0 - a / Q) * diff;
  }
  const double Q2 = (diff.array().square() / sig.square()).sum();
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(K, K);
  M.diagonal().array() -= a / (sig * Q2);
  return theta_o.estimates + detail::matrix_positive_part(M) * diff;
}

inline Eigen::VectorXd rosenman_shrink(const StrataEstimates& theta_e, const StrataEstimates& theta_o,
                                       RosenmanVariant variant, const Eigen::VectorXd& D = {}) {
  detail::check_same_k(theta_e, theta_o);
  const auto K = theta_e.estimates.size();
  const Eigen::VectorXd w = D.size() == 0 ? Eigen::VectorXd::Ones(K) : D;
  if (w.size() != K) throw DimensionMismatch("rosenman_shrink: weight vector has the wrong length");
  const Eigen::VectorXd diff = theta_e.estimates - theta_o.estimates;
  if (diff.isZero(0.0)) return theta_o.estimates;
  const Eigen::ArrayXd sig = theta_e.variances.array();
  if (variant == RosenmanVariant::Kappa1) {
    const double tr = (sig * w.array()).sum();
    const double q = (diff.array().square() * w.array()).sum();
    return theta_o.estimates + detail::positive_part(1.0 - tr / q) * diff;
  }
  const double tr = (sig.square() * w.array()).sum();
  const double q = (diff.array().square() * sig.square() * w.array()).sum();
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(K, K);
  M.diagonal().array() -= tr * sig / q;
  return theta_o.estimates + detail::matrix_positive_part(M) * diff;
}

// ---------------------------------------------------------------------------
// Experimental grounding

struct KallusSpec {
  Formula outcome;  // m1, m0 on the observational arms
  Formula bias;     // linear bias correction on the randomized data

  static KallusSpec for_scenario(Scenario s) {
    if (s == Scenario::B) {
      const auto f = Formula::parse("1 + C1 + C2 + C3 + C4 + C5 + Z1 + Z2");
      return {f, f};
    }
    return {Formula::parse("1 + C + Z"), Formula::parse("1 + C + Z")};
  }
};

struct KallusResult {
  StrataEstimates strata;
  Eigen::VectorXd beta;
  double ate = 0.0;  // mean of the grounded CATE over experimental units
};

inline KallusResult kallus_grounding(const Dataset& d_o, const Dataset& d_e, const StratificationScheme& scheme,
                                     const KallusSpec& spec) {
  const auto t_o = d_o.column(d_o.treatment());
  std::vector<std::size_t> r1, r0;
  for (std::size_t i = 0; i < d_o.n(); ++i) (t_o[static_cast<Eigen::Index>(i)] == 1.0 ? r1 : r0).push_back(i);
  const Dataset o1 = d_o.select_rows(r1), o0 = d_o.select_rows(r0);
  const GlmFit m1 = fit_gaussian(design_matrix(o1, spec.outcome), o1.column(o1.outcome()));
  const GlmFit m0 = fit_gaussian(design_matrix(o0, spec.outcome), o0.column(o0.outcome()));

  const Eigen::MatrixXd Xe = design_matrix(d_e, spec.outcome);
  const Eigen::VectorXd omega = Xe * (m1.coef - m0.coef);
  const auto t = d_e.column(d_e.treatment());
  const auto y = d_e.column(d_e.outcome());
  Eigen::VectorXd target(omega.size());
  for (Eigen::Index i = 0; i < target.size(); ++i) target[i] = (t[i] == 1.0 ? 2.0 : -2.0) * y[i] - omega[i];
  const Eigen::MatrixXd V = design_matrix(d_e, spec.bias);
  const GlmFit b = fit_gaussian(V, target);
  const Eigen::VectorXd tau = omega + V * b.coef;

  KallusResult out;
  out.beta = b.coef;
  out.ate = tau.mean();
  const std::size_t K = scheme.k();
  std::vector<std::vector<double>> per(K);
  for (std::size_t i = 0; i < d_e.n(); ++i) per[scheme.assign(d_e, i)].push_back(tau[static_cast<Eigen::Index>(i)]);
  auto& s = out.strata;
  s.k = K;
  s.labels = scheme.labels();
  s.estimates.resize(static_cast<Eigen::Index>(K));
  s.variances.resize(static_cast<Eigen::Index>(K));
  for (std::size_t k = 0; k < K; ++k) {
    if (per[k].empty()) throw EmptyStratum("kallus_grounding: stratum " + s.labels[k] + " has no experimental units");
    const double nk = static_cast<double>(per[k].size());
    double mean = 0.0, ss = 0.0;
    for (double v : per[k]) mean += v;
    mean /= nk;
    for (double v : per[k]) ss += (v - mean) * (v - mean);
    s.estimates[static_cast<Eigen::Index>(k)] = mean;
    s.variances[static_cast<Eigen::Index>(k)] = per[k].size() > 1 ? ss / (nk - 1.0) / nk : 0.0;
    s.counts.push_back(per[k].size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oberst

struct OberstResult {
  double lambda = 0.0;
  double tau = 0.0;
};

inline OberstResult oberst_combine(double tau_e, double var_e, double tau_o, double var_o) {
  if (!(var_e > 0.0)) throw DomainError("oberst_combine: var_e must be positive");
  if (!(var_o >= 0.0)) throw DomainError("oberst_combine: var_o must be nonnegative");
  const double d = tau_e - tau_o;
  OberstResult r;
  r.lambda = var_e / (d * d + var_e + var_o);
  r.tau = r.lambda * tau_o + (1.0 - r.lambda) * tau_e;
  return r;
}

// Count-weighted mean of stratum estimates.
inline double strata_average(const Eigen::VectorXd& est, const std::vector<std::size_t>& counts) {
  if (static_cast<std::size_t>(est.size()) != counts.size()) throw DimensionMismatch("strata_average: size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    num += est[static_cast<Eigen::Index>(k)] * static_cast<double>(counts[k]);
    den += static_cast<double>(counts[k]);
  }
  return num / den;
}

}  // namespace powerlik
