#pragma once

// Shared domain types: role-tagged datasets, frugal model specifications,
// parameter containers and the result records passed between modules.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "powerlik/errors.hpp"
#include "powerlik/formula.hpp"

namespace powerlik {

enum class Role { EffectModifier, Marginalized, Treatment, Outcome };
enum class Source { Experimental, Observational };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::EffectModifier: return "effect_modifier";
    case Role::Marginalized: return "marginalized";
    case Role::Treatment: return "treatment";
    case Role::Outcome: return "outcome";
  }
  return "?";
}

inline std::string_view to_string(Source s) {
  return s == Source::Experimental ? "experimental" : "observational";
}

inline Role parse_role(std::string_view s) {
  if (s == "effect_modifier" || s == "C") return Role::EffectModifier;
  if (s == "marginalized" || s == "Z") return Role::Marginalized;
  if (s == "treatment" || s == "T") return Role::Treatment;
  if (s == "outcome" || s == "Y") return Role::Outcome;
  throw ConfigError("unknown column role '" + std::string(s) + "'");
}

// Column-major table of doubles with one role per column. Immutable once
// built; row subsets produce new datasets.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::string> names, std::vector<Role> roles, Eigen::MatrixXd values,
          Source source)
      : names_(std::move(names)), roles_(std::move(roles)), values_(std::move(values)),
        source_(source) {
    if (names_.size() != roles_.size() || static_cast<Eigen::Index>(names_.size()) != values_.cols())
      throw InvalidDataset("dataset: names, roles and value columns disagree in count");
    for (std::size_t j = 0; j < names_.size(); ++j) {
      if (!index_.emplace(names_[j], j).second)
        throw InvalidDataset("dataset: duplicate column '" + names_[j] + "'");
    }
  }

  std::size_t n() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t cols() const { return names_.size(); }
  Source source() const { return source_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Role>& roles() const { return roles_; }
  const Eigen::MatrixXd& values() const { return values_; }

  std::optional<std::size_t> index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool has(std::string_view name) const { return index(name).has_value(); }

  Role role(std::string_view name) const { return roles_[require(name)]; }

  Eigen::MatrixXd::ConstColXpr column(std::string_view name) const {
    return values_.col(static_cast<Eigen::Index>(require(name)));
  }

  double at(std::size_t row, std::string_view name) const {
    return values_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(require(name)));
  }

  std::vector<std::string> columns_with(Role r) const {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < names_.size(); ++j)
      if (roles_[j] == r) out.push_back(names_[j]);
    return out;
  }

  const std::string& treatment() const { return single(Role::Treatment, "treatment"); }
  const std::string& outcome() const { return single(Role::Outcome, "outcome"); }

  Dataset select_rows(std::span<const std::size_t> rows) const {
    Eigen::MatrixXd v(static_cast<Eigen::Index>(rows.size()), values_.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= n()) throw InvalidDataset("dataset: row index out of range");
      v.row(static_cast<Eigen::Index>(i)) = values_.row(static_cast<Eigen::Index>(rows[i]));
    }
    return Dataset(names_, roles_, std::move(v), source_);
  }

  Dataset without_row(std::size_t row) const {
    std::vector<std::size_t> keep;
    keep.reserve(n());
    for (std::size_t i = 0; i < n(); ++i)
      if (i != row) keep.push_back(i);
    return select_rows(keep);
  }

  Dataset with_source(Source s) const { return Dataset(names_, roles_, values_, s); }

  // Rows of `a` followed by rows of `b`; columns must match by name and role.
  static Dataset concat(const Dataset& a, const Dataset& b, Source source) {
    if (a.names_ != b.names_ || a.roles_ != b.roles_)
      throw InvalidDataset("dataset concat: column layouts differ");
    Eigen::MatrixXd v(a.values_.rows() + b.values_.rows(), a.values_.cols());
    v << a.values_, b.values_;
    return Dataset(a.names_, a.roles_, std::move(v), source);
  }

 private:
  std::size_t require(std::string_view name) const {
    auto i = index(name);
    if (!i) throw InvalidDataset("dataset: no column named '" + std::string(name) + "'");
    return *i;
  }

  const std::string& single(Role r, const char* what) const {
    const std::string* found = nullptr;
    for (std::size_t j = 0; j < names_.size(); ++j) {
      if (roles_[j] != r) continue;
      if (found) throw InvalidDataset(std::string("dataset: more than one ") + what + " column");
      found = &names_[j];
    }
    if (!found) throw InvalidDataset(std::string("dataset: no ") + what + " column");
    return *found;
  }

  std::vector<std::string> names_;
  std::vector<Role> roles_;
  Eigen::MatrixXd values_;
  Source source_ = Source::Experimental;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Violation {
  std::string column;  // empty when the rule concerns the whole table
  std::optional<std::size_t> row;
  std::string rule;

  std::string message() const {
    std::string out = rule;
    if (!column.empty()) out += " [column " + column + "]";
    if (row) out += " [row " + std::to_string(*row) + "]";
    return out;
  }
};

// Diagnostic check of the dataset invariants. Reports the first offending
// row per column and rule, not every row.
inline std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  if (d.n() == 0) out.push_back({"", std::nullopt, "empty: dataset has no rows"});

  const auto treat = d.columns_with(Role::Treatment);
  const auto outc = d.columns_with(Role::Outcome);
  if (treat.size() != 1)
    out.push_back({"", std::nullopt, "roles: expected exactly one treatment column, found " +
                                         std::to_string(treat.size())});
  if (outc.size() != 1)
    out.push_back({"", std::nullopt, "roles: expected exactly one outcome column, found " +
                                         std::to_string(outc.size())});

  const auto& v = d.values();
  for (std::size_t j = 0; j < d.cols(); ++j) {
    for (std::size_t i = 0; i < d.n(); ++i) {
      if (std::isnan(v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))) {
        out.push_back({d.names()[j], i, "missing value"});
        break;
      }
    }
  }

  if (treat.size() == 1) {
    auto t = d.column(treat.front());
    std::size_t treated = 0, control = 0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      if (t[i] == 1.0) ++treated;
      else if (t[i] == 0.0) ++control;
      else if (!std::isnan(t[i])) {
        out.push_back({treat.front(), static_cast<std::size_t>(i), "treatment not binary"});
        break;
      }
    }
    if (d.source() == Source::Experimental && d.n() > 0) {
      if (control == 0) out.push_back({treat.front(), std::nullopt, "positivity: no control units"});
      if (treated == 0) out.push_back({treat.front(), std::nullopt, "positivity: no treated units"});
    }
  }

  if (outc.size() == 1) {
    auto y = d.column(outc.front());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (std::isinf(y[i])) {
        out.push_back({outc.front(), static_cast<std::size_t>(i), "outcome not finite"});
        break;
      }
    }
  }
  return out;
}

// Non-fatal configuration notes (currently: no effect modifiers at all).
inline std::vector<std::string> dataset_warnings(const Dataset& d) {
  std::vector<std::string> out;
  if (d.columns_with(Role::EffectModifier).empty())
    out.emplace_back("degenerate configuration: no effect-modifier columns, only the ATE is estimable");
  return out;
}

inline void require_valid(const Dataset& d, std::string_view what) {
  auto v = validate_dataset(d);
  if (v.empty()) return;
  std::string msg = std::string(what) + ": invalid dataset:";
  for (const auto& x : v) msg += " " + x.message() + ";";
  throw InvalidDataset(msg);
}

inline Eigen::MatrixXd design_matrix(const Dataset& d, const Formula& f) {
  const auto n = static_cast<Eigen::Index>(d.n());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(f.size()));
  for (std::size_t k = 0; k < f.size(); ++k) {
    auto col = X.col(static_cast<Eigen::Index>(k));
    col.setOnes();
    for (const auto& name : f.terms()[k].factors) {
      if (!d.has(name)) throw ConfigError("formula references unknown column '" + name + "'");
      col.array() *= d.column(name).array();
    }
  }
  return X;
}

// ---------------------------------------------------------------------------
// Model specification

enum class Family { GaussianIdentity, BernoulliLogit };

inline Family parse_family(std::string_view s) {
  if (s == "gaussian" || s == "GaussianIdentity") return Family::GaussianIdentity;
  if (s == "bernoulli" || s == "binomial" || s == "BernoulliLogit") return Family::BernoulliLogit;
  throw ConfigError("unknown family '" + std::string(s) + "'");
}

inline std::string_view to_string(Family f) {
  return f == Family::GaussianIdentity ? "gaussian" : "bernoulli";
}

// One factor of the past distribution p(z, t | c).
struct ComponentSpec {
  std::string target;
  Formula formula;
  Family family = Family::GaussianIdentity;
};

// Gaussian copula over (Z members..., Y) given (T, C). Correlations follow
// rho = 2 expit(eta) - 1 with eta a linear predictor; Y-Z pairs use
// `yz_link`, Z-Z pairs use `zz_link`. With `per_pair` off, all pairs of one
// kind share a coefficient vector.
struct CopulaSpec {
  std::vector<std::string> members;
  Formula yz_link = Formula::parse("1 + T");
  Formula zz_link = Formula::parse("1");
  bool per_pair = false;
};

struct FrugalModelSpec {
  std::vector<ComponentSpec> past;
  Formula causal;
  CopulaSpec copula;

  const ComponentSpec* component(std::string_view target) const {
    for (const auto& c : past)
      if (c.target == target) return &c;
    return nullptr;
  }
};

// Throws ConfigError when `spec` cannot describe `d`.
inline void validate_spec(const FrugalModelSpec& spec, const Dataset& d) {
  const auto& tcol = d.treatment();
  const auto& ycol = d.outcome();
  auto is_c = [&](const std::string& name) {
    return d.has(name) && d.role(name) == Role::EffectModifier;
  };

  std::vector<std::string> declared;
  bool saw_t = false;
  for (const auto& comp : spec.past) {
    if (!d.has(comp.target)) throw ConfigError("past component targets unknown column '" + comp.target + "'");
    const Role r = d.role(comp.target);
    if (r != Role::Marginalized && r != Role::Treatment)
      throw ConfigError("past component '" + comp.target + "' must target a Z or T column");
    if (std::find(declared.begin(), declared.end(), comp.target) != declared.end())
      throw ConfigError("past component '" + comp.target + "' declared twice");
    if (r == Role::Treatment) {
      saw_t = true;
      if (comp.family != Family::BernoulliLogit)
        throw ConfigError("treatment component must use the bernoulli family");
    } else if (saw_t) {
      throw ConfigError("Z component '" + comp.target + "' declared after the treatment component");
    }
    for (const auto& col : comp.formula.columns()) {
      const bool earlier = std::find(declared.begin(), declared.end(), col) != declared.end();
      if (!is_c(col) && !earlier)
        throw ConfigError("past component '" + comp.target + "' references '" + col +
                          "', which is neither C nor an earlier component");
    }
    declared.push_back(comp.target);
  }
  for (const auto& z : d.columns_with(Role::Marginalized))
    if (!spec.component(z)) throw ConfigError("Z column '" + z + "' has no past component");
  if (!spec.component(tcol)) throw ConfigError("treatment column has no past component");

  if (spec.causal.empty()) throw ConfigError("causal formula is empty");
  for (const auto& col : spec.causal.columns())
    if (col != tcol && !is_c(col))
      throw ConfigError("causal formula may reference only C columns and the treatment, got '" + col + "'");
  if (spec.causal.find({tcol}) < 0) throw ConfigError("causal formula needs a treatment main effect");
  if (spec.causal.references(ycol)) throw ConfigError("causal formula references the outcome");

  for (const auto& m : spec.copula.members) {
    const auto* comp = spec.component(m);
    if (!comp || d.role(m) != Role::Marginalized || comp->family != Family::GaussianIdentity)
      throw ConfigError("copula member '" + m + "' must be a gaussian Z component");
  }
  for (const auto& col : spec.copula.yz_link.columns())
    if (col != tcol && !is_c(col))
      throw ConfigError("copula Y-Z link may reference only T and C, got '" + col + "'");
  for (const auto& col : spec.copula.zz_link.columns())
    if (!is_c(col))
      throw ConfigError("copula Z-Z link may reference only C columns, got '" + col + "'");
}

// ---------------------------------------------------------------------------
// Parameters

// Ordered names for the concatenated [theta; nuisance] vector.
class ParamLayout {
 public:
  ParamLayout(std::vector<std::string> names, std::size_t theta_size)
      : names_(std::move(names)), theta_size_(theta_size) {
    if (theta_size_ > names_.size()) throw ConfigError("layout: theta block larger than layout");
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (!index_.emplace(names_[i], i).second) throw ConfigError("layout: duplicate name " + names_[i]);
  }

  std::size_t size() const { return names_.size(); }
  std::size_t theta_size() const { return theta_size_; }
  std::size_t nuisance_size() const { return names_.size() - theta_size_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  std::optional<std::size_t> index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t require(std::string_view name) const {
    auto i = index(name);
    if (!i) throw ConfigError("layout: no parameter named '" + std::string(name) + "'");
    return *i;
  }

  std::vector<std::string> theta_names() const {
    return {names_.begin(), names_.begin() + static_cast<std::ptrdiff_t>(theta_size_)};
  }

  friend bool operator==(const ParamLayout& a, const ParamLayout& b) {
    return a.names_ == b.names_ && a.theta_size_ == b.theta_size_;
  }

 private:
  std::vector<std::string> names_;
  std::size_t theta_size_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::string causal_param_name(const Term& t) { return "causal:" + t.name(); }
inline constexpr std::string_view kCausalLogSigma = "causal:log_sigma";

// theta = causal-margin coefficients followed by the log residual sd;
// nuisance = past-model parameters then copula link coefficients.
struct ParamVector {
  Eigen::VectorXd theta;
  Eigen::VectorXd nuisance;
  std::shared_ptr<const ParamLayout> layout;

  Eigen::VectorXd full() const {
    Eigen::VectorXd v(theta.size() + nuisance.size());
    v << theta, nuisance;
    return v;
  }

  static ParamVector from_full(const Eigen::VectorXd& v, std::shared_ptr<const ParamLayout> layout) {
    const auto p = static_cast<Eigen::Index>(layout->theta_size());
    if (v.size() != static_cast<Eigen::Index>(layout->size()))
      throw DimensionMismatch("parameter vector does not match its layout");
    return {v.head(p), v.tail(v.size() - p), std::move(layout)};
  }

  double get(std::string_view name) const {
    const auto i = layout->require(name);
    return i < layout->theta_size() ? theta[static_cast<Eigen::Index>(i)]
                                    : nuisance[static_cast<Eigen::Index>(i - layout->theta_size())];
  }
};

struct FitResult {
  ParamVector params;
  Eigen::MatrixXd fisher_theta;    // information for theta, sum over rows
  // d nuisance-hat / d theta along the linearized profile likelihood
  // (nuisance_size x theta_size). Empty for fits built by hand.
  Eigen::MatrixXd nuisance_slope;
  Eigen::MatrixXd sandwich_theta;  // robust covariance of theta-hat
  double loglik = 0.0;
  std::size_t n = 0;
  bool converged = false;
  int iterations = 0;
};

struct PowerCombination {
  double eta = 0.0;
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd fisher_combined;
  Eigen::VectorXd nuisance_e;
  std::shared_ptr<const ParamLayout> layout;

  ParamVector params() const { return {theta_hat, nuisance_e, layout}; }
};

enum class ElpdMethod { WAIC, ExactLOO };

inline std::string_view to_string(ElpdMethod m) { return m == ElpdMethod::WAIC ? "waic" : "exact_loo"; }

struct EtaSelection {
  std::vector<double> grid;
  std::vector<double> elpd;
  std::vector<double> d_waic;  // NaN for ExactLOO
  double eta_star = 0.0;
  ElpdMethod method = ElpdMethod::WAIC;
};

struct StrataEstimates {
  std::size_t k = 0;
  Eigen::VectorXd estimates;
  Eigen::VectorXd variances;
  std::vector<std::string> labels;
  std::vector<std::size_t> counts;
};

}  // namespace powerlik
