#pragma once

// Grid search for the influence factor eta.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "powerlik/elpd.hpp"
#include "powerlik/errors.hpp"
#include "powerlik/fit.hpp"
#include "powerlik/model.hpp"
#include "powerlik/rng.hpp"

namespace powerlik {

struct SelectOptions {
  std::size_t grid_size = 20;  // N; the grid is i / N for i = 0..N
  std::size_t draws = 2000;    // S
  std::uint64_t seed = 1;
  ElpdMethod method = ElpdMethod::WAIC;
  WaicForm waic_form = WaicForm::Summed;
  FitOptions fit;
};

inline std::vector<double> eta_grid(std::size_t N) {
  if (N < 1) throw ConfigError("eta grid: N must be at least 1");
  std::vector<double> g(N + 1);
  for (std::size_t i = 0; i <= N; ++i) g[i] = static_cast<double>(i) / static_cast<double>(N);
  return g;
}

// Smallest grid index attaining the maximum: only a strict improvement moves it.
inline std::size_t argmax_first(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace detail {

template <class F>
auto annotate_eta(double eta, F&& f) {
  const std::string at = "eta = " + std::to_string(eta) + ": ";
  try {
    return f();
  } catch (const NonPositiveDefinite& e) {
    throw NonPositiveDefinite(at + e.what());
  } catch (const SingularPrecision& e) {
    throw SingularPrecision(at + e.what());
  } catch (const DegenerateDraws& e) {
    throw DegenerateDraws(at + e.what());
  } catch (const NonFinite& e) {
    throw NonFinite(at + e.what());
  }
}

}  // namespace detail

// Selection from already fitted datasets; `d_e` supplies the evaluation rows.
inline EtaSelection select_eta_from_fits(const Dataset& d_e, const FrugalModelSpec& spec_e, const FitResult& fit_e,
                                         const FitResult& fit_o, const SelectOptions& opt) {
  EtaSelection out;
  out.method = opt.method;
  out.grid = eta_grid(opt.grid_size);
  out.elpd.resize(out.grid.size());
  out.d_waic.assign(out.grid.size(), std::numeric_limits<double>::quiet_NaN());

  if (opt.method == ElpdMethod::WAIC) {
    if (opt.draws < 2) throw DegenerateDraws("select_eta: WAIC needs at least two draws");
    const FrugalLikelihood lik(d_e, spec_e);
    const PredictiveEvaluator eval(lik, NuisanceProfile::of(fit_e));
    for (std::size_t g = 0; g < out.grid.size(); ++g) {
      const double eta = out.grid[g];
      const auto w = detail::annotate_eta(eta, [&] {
        const auto pc = combine_power(fit_e, fit_o, eta);
        const auto draws = sample_posterior(pc, opt.draws, eta_seed(opt.seed, eta));
        return waic_elpd(draws, eval, opt.waic_form);
      });
      out.elpd[g] = w.elpd;
      out.d_waic[g] = w.d_waic;
    }
  } else {
    out.elpd = exact_loo_elpd_grid(d_e, &fit_o, spec_e, out.grid, opt.draws, opt.seed, opt.fit, &fit_e);
  }
  out.eta_star = out.grid[argmax_first(out.elpd)];
  return out;
}

inline EtaSelection select_eta(const Dataset& d_e, const Dataset& d_o, const FrugalModelSpec& spec_e,
                               const FrugalModelSpec& spec_o, const SelectOptions& opt) {
  require_valid(d_e, "select_eta (experimental)");
  require_valid(d_o, "select_eta (observational)");
  const FitResult fe = fit_frugal_mle(d_e, spec_e, opt.fit);
  const FitResult fo = fit_frugal_mle(d_o, spec_o, opt.fit);
  return select_eta_from_fits(d_e, spec_e, fe, fo, opt);
}

}  // namespace powerlik
