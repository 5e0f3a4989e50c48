// powerlik: command-line front end for simulation, eta selection,
// estimation and the replicated studies.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "powerlik/powerlik.hpp"

namespace fs = std::filesystem;
using namespace powerlik;

namespace {

struct Common {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
};

struct Loaded {
  Json cfg = Json::object();
  fs::path base = ".";  // relative paths in the config resolve against this
  std::uint64_t seed = 1;
};

Loaded load(const Common& c) {
  Loaded l;
  if (!c.config.empty()) {
    try {
      l.cfg = Json::parse(read_text(c.config));
    } catch (const Json::parse_error& e) {
      throw ConfigError("config '" + c.config + "': " + e.what());
    }
    l.base = fs::path(c.config).parent_path();
  }
  l.seed = c.seed ? *c.seed : l.cfg.value("seed", std::uint64_t{1});
  fs::create_directories(c.out);
  return l;
}

std::string resolve(const Loaded& l, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? p : (l.base / path).string();
}

std::string out_path(const Common& c, const std::string& name) { return (fs::path(c.out) / name).string(); }

std::map<std::string, Role> roles_from(const Loaded& l, const std::string& data_path) {
  if (l.cfg.contains("roles")) return parse_roles(l.cfg.at("roles"));
  // Fall back to the sidecar written by `simulate`.
  fs::path side = fs::path(data_path).replace_extension(".roles.json");
  return parse_roles(Json::parse(read_text(side.string())));
}

SelectOptions select_options(const Json& j, std::uint64_t seed) {
  SelectOptions o;
  o.grid_size = j.value("grid_size", std::size_t{20});
  o.draws = j.value("draws", std::size_t{2000});
  o.seed = seed;
  const auto m = j.value("elpd", std::string("waic"));
  if (m == "waic") o.method = ElpdMethod::WAIC;
  else if (m == "exact_loo") o.method = ElpdMethod::ExactLOO;
  else throw ConfigError("elpd must be 'waic' or 'exact_loo'");
  const auto f = j.value("waic_form", std::string("summed"));
  if (f == "summed") o.waic_form = WaicForm::Summed;
  else if (f == "literal") o.waic_form = WaicForm::Literal;
  else throw ConfigError("waic_form must be 'summed' or 'literal'");
  return o;
}

struct Pair {
  Dataset d_e, d_o;
  FrugalModelSpec spec_e, spec_o;
};

Pair load_pair(const Loaded& l) {
  const auto& j = l.cfg;
  if (!j.contains("experimental") || !j.contains("observational"))
    throw ConfigError("config needs 'experimental' and 'observational' CSV paths");
  const auto pe = resolve(l, j.at("experimental").get<std::string>());
  const auto po = resolve(l, j.at("observational").get<std::string>());
  Pair p{read_csv(pe, roles_from(l, pe), Source::Experimental), read_csv(po, roles_from(l, po), Source::Observational),
         {}, {}};
  const Scenario sc = parse_scenario(j.value("scenario", std::string("A")));
  p.spec_e = j.contains("spec_e") ? parse_spec(j.at("spec_e")) : default_spec(sc, Source::Experimental);
  p.spec_o = j.contains("spec_o") ? parse_spec(j.at("spec_o")) : default_spec(sc, Source::Observational);
  for (const auto& w : dataset_warnings(p.d_e)) std::cerr << "warning: " << w << "\n";
  return p;
}

Json selection_json(const EtaSelection& s) {
  Json j;
  j["method"] = std::string(to_string(s.method));
  j["eta_star"] = s.eta_star;
  j["grid"] = s.grid;
  j["elpd"] = s.elpd;
  Json dw = Json::array();
  for (double v : s.d_waic) dw.push_back(std::isnan(v) ? Json(nullptr) : Json(v));
  j["d_waic"] = dw;
  return j;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Common& c) {
  const auto l = load(c);
  const auto& j = l.cfg;
  ScenarioConfig sc;
  sc.scenario = parse_scenario(j.value("scenario", std::string("A")));
  sc.psi = j.value("psi", 0.0);
  if (sc.scenario == Scenario::NormalMeans) {
    const auto s = gen_normal_means(j.value("n_e", std::size_t{100}), j.value("n_o", std::size_t{1000}),
                                    j.value("theta_star", 0.0), j.value("delta_star", 1.0), j.value("k", 0.0),
                                    j.value("sigma", 1.0), l.seed);
    std::string e = "x\n", o = "y\n";
    for (double v : s.e) e += format_double(v) + "\n";
    for (double v : s.o) o += format_double(v) + "\n";
    write_text(out_path(c, "normal_means_e.csv"), e);
    write_text(out_path(c, "normal_means_o.csv"), o);
    write_text(out_path(c, "normal_means.truth.json"),
               Json{{"theta_star", j.value("theta_star", 0.0)}, {"delta", s.delta}, {"seed", l.seed}}.dump(2) + "\n");
    return 0;
  }
  auto emit = [&](const std::string& stem, std::size_t n, bool randomized, std::uint64_t seed) {
    sc.n = n;
    sc.randomized = randomized;
    sc.seed = seed;
    const Dataset d = generate(sc);
    write_text(out_path(c, stem + ".csv"), to_csv(d));
    write_text(out_path(c, stem + ".roles.json"), roles_json(d).dump(2) + "\n");
    write_text(out_path(c, stem + ".truth.json"), scenario_truth(sc).dump(2) + "\n");
  };
  if (j.contains("n_e") || j.contains("n_o")) {
    emit("experimental", j.value("n_e", std::size_t{250}), true, derive_seed(l.seed, {1}));
    emit("observational", j.value("n_o", std::size_t{2500}), false, derive_seed(l.seed, {2}));
  } else {
    emit("data", j.value("n", std::size_t{250}), j.value("randomized", false), l.seed);
  }
  return 0;
}

int cmd_select(const Common& c) {
  const auto l = load(c);
  const auto p = load_pair(l);
  const auto s = select_eta(p.d_e, p.d_o, p.spec_e, p.spec_o, select_options(l.cfg, l.seed));
  write_text(out_path(c, "eta_selection.json"), selection_json(s).dump(2) + "\n");
  std::cout << "eta_star " << format_double(s.eta_star) << "\n";
  return 0;
}

int cmd_estimate(const Common& c) {
  const auto l = load(c);
  const auto p = load_pair(l);
  const auto opt = select_options(l.cfg, l.seed);
  const FitResult fe = fit_frugal_mle(p.d_e, p.spec_e, opt.fit);
  const FitResult fo = fit_frugal_mle(p.d_o, p.spec_o, opt.fit);
  Json out;
  double eta = 0.0;
  if (l.cfg.contains("eta")) {
    eta = l.cfg.at("eta").get<double>();
  } else {
    const auto s = select_eta_from_fits(p.d_e, p.spec_e, fe, fo, opt);
    eta = s.eta_star;
    out["selection"] = selection_json(s);
  }
  const auto pc = combine_power(fe, fo, eta);
  const Eigen::MatrixXd cov = pc.fisher_combined.ldlt().solve(Eigen::MatrixXd::Identity(pc.theta_hat.size(), pc.theta_hat.size()));
  const auto& tcol = p.d_e.treatment();
  out["eta"] = eta;
  const auto names = pc.layout->theta_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    out["theta"][names[i]] = {{"estimate", pc.theta_hat[static_cast<Eigen::Index>(i)]},
                              {"posterior_sd", std::sqrt(cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)))}};
  const Eigen::VectorXd g = average_contrast(p.spec_e.causal, tcol, p.d_e);
  out["ate"] = {{"estimate", g.dot(pc.theta_hat)}, {"posterior_sd", std::sqrt(g.dot(cov * g))}};
  out["ate_experimental_only"] = {{"estimate", g.dot(fe.params.theta)},
                                  {"sandwich_sd", std::sqrt(g.dot(fe.sandwich_theta * g))}};
  if (l.cfg.contains("cate_points")) {
    out["cate"] = Json::array();
    for (const auto& pt : l.cfg.at("cate_points")) {
      std::unordered_map<std::string, double> cv;
      for (auto it = pt.begin(); it != pt.end(); ++it) cv[it.key()] = it.value().get<double>();
      const Eigen::VectorXd gc = cate_contrast(p.spec_e.causal, tcol, cv);
      out["cate"].push_back({{"at", pt}, {"estimate", gc.dot(pc.theta_hat)}, {"posterior_sd", std::sqrt(gc.dot(cov * gc))}});
    }
  }
  write_text(out_path(c, "estimate.json"), out.dump(2) + "\n");
  std::cout << "eta " << format_double(eta) << "  ate " << format_double(g.dot(pc.theta_hat)) << "\n";
  return 0;
}

int cmd_compare(const Common& c) {
  const auto l = load(c);
  const auto& j = l.cfg;
  RunConfig rc;
  rc.experiment = parse_experiment(j.value("experiment", std::string("method_comparison")));
  rc.scenario = parse_scenario(j.value("scenario", std::string("A")));
  rc.psi = j.value("psi", std::vector<double>{0.0, 0.75, 1.0});
  rc.n_e = j.value("n_e", std::size_t{250});
  rc.n_o = j.value("n_o", std::size_t{2500});
  rc.replicates = j.value("replicates", std::size_t{200});
  rc.select = select_options(j, l.seed);
  rc.seed = l.seed;
  rc.threads = j.value("threads", std::size_t{0});
  rc.baselines = j.value("baselines", rc.experiment == Experiment::MethodComparison);
  if (j.contains("spec_e")) rc.spec_e = parse_spec(j.at("spec_e"));
  if (j.contains("spec_o")) rc.spec_o = parse_spec(j.at("spec_o"));
  const auto res = run_replications(rc);
  write_text(out_path(c, "eta_curve.csv"), curve_csv(res));
  write_text(out_path(c, "compare.csv"), comparison_csv(res));
  write_text(out_path(c, "replicates.csv"), replicates_csv(res));
  write_text(out_path(c, "summary.json"), summary_json(res).dump(2) + "\n");
  for (const auto& s : res.summary)
    std::cout << "psi " << format_double(s.psi) << "  mean eta " << format_double(s.mean_eta) << "  failures "
              << s.failures << "\n";
  return 0;
}

int cmd_consistency(const Common& c) {
  const auto l = load(c);
  const auto& j = l.cfg;
  ConsistencyConfig cc;
  cc.k = j.value("k", 0.0);
  cc.delta_star = j.value("delta_star", 1.0);
  cc.theta_star = j.value("theta_star", 0.0);
  cc.sigma = j.value("sigma", 1.0);
  if (j.contains("sizes")) cc.sizes = j.at("sizes").get<std::vector<std::pair<std::size_t, std::size_t>>>();
  cc.replicates = j.value("replicates", std::size_t{2000});
  cc.grid_points = j.value("grid_points", std::size_t{1001});
  cc.threads = j.value("threads", std::size_t{0});
  cc.seed = l.seed;
  const auto rows = consistency_sweep(cc);
  write_text(out_path(c, "consistency.csv"), consistency_csv(rows));
  std::cout << consistency_csv(rows);
  return 0;
}

int cmd_semisynth(const Common& c) {
  const auto l = load(c);
  const auto& j = l.cfg;
  SemisynthStudyConfig sc;
  sc.construct.frac_exp = j.value("frac_exp", 0.1);
  sc.construct.n_treated = j.value("n_treated", std::size_t{1000});
  sc.construct.percentile = j.value("percentile", 30.0);
  sc.construct.downweight = j.value("downweight", 0.1);
  sc.rct_n = j.value("rct_n", std::size_t{5000});
  sc.replicates = j.value("replicates", std::size_t{0});
  sc.seed = l.seed;
  sc.select = select_options(j, l.seed);
  sc.threads = j.value("threads", std::size_t{0});
  if (j.contains("truth")) sc.truth = j.at("truth").get<double>();
  if (j.contains("spec_e")) sc.spec_e = parse_spec(j.at("spec_e"));
  if (j.contains("spec_o")) sc.spec_o = parse_spec(j.at("spec_o"));
  if (j.contains("rct")) {
    const auto path = resolve(l, j.at("rct").get<std::string>());
    sc.rct = read_csv(path, roles_from(l, path), Source::Experimental);
    if (!sc.spec_e || !sc.spec_o) throw ConfigError("semisynth: a user RCT needs 'spec_e' and 'spec_o'");
  }

  // One construction for inspection.
  const Dataset rct = sc.rct ? *sc.rct : gen_scenario_a({Scenario::A, 0.0, sc.rct_n, true, derive_seed(l.seed, {0})});
  const auto [d_e, d_o] = make_semisynthetic(rct, sc.construct, derive_seed(l.seed, {0, 1}));
  write_text(out_path(c, "semisynth_experimental.csv"), to_csv(d_e));
  write_text(out_path(c, "semisynth_observational.csv"), to_csv(d_o));
  write_text(out_path(c, "semisynth.roles.json"), roles_json(d_e).dump(2) + "\n");

  if (sc.replicates > 0) {
    const auto s = run_semisynth_study(sc);
    Json out{{"replicates", sc.replicates},
             {"failures", s.failures},
             {"mean_eta", s.mean_eta},
             {"mse_power", s.power.mse},
             {"mse_experimental", s.experimental.mse},
             {"naive_shift_mean", s.naive_shift_mean},
             {"naive_shift_se", s.naive_shift_se}};
    write_text(out_path(c, "semisynth_summary.json"), out.dump(2) + "\n");
    std::string csv = "replicate,ok,eta_star,ate_power,ate_experimental,truth,naive_shift\n";
    for (std::size_t r = 0; r < s.records.size(); ++r) {
      const auto& x = s.records[r];
      csv += std::to_string(r) + "," + (x.ok ? "1" : "0") + "," + format_double(x.eta_star) + "," +
             format_double(x.ate_power) + "," + format_double(x.ate_experimental) + "," + format_double(x.truth) + "," +
             format_double(x.naive_shift) + "\n";
    }
    write_text(out_path(c, "semisynth_replicates.csv"), csv);
    std::cout << "mean eta " << format_double(s.mean_eta) << "  mse power " << format_double(s.power.mse)
              << "  mse experimental " << format_double(s.experimental.mse) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Power-likelihood fusion of randomized and observational data"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const Common&);
  };
  const Sub subs[] = {
      {"simulate", "Generate a scenario dataset (CSV, role map and truth sidecar)", cmd_simulate},
      {"select-eta", "Select the influence factor eta for a pair of datasets", cmd_select},
      {"estimate", "Combined ATE/CATE estimates at the selected (or given) eta", cmd_estimate},
      {"compare", "Replicated eta-curve and method comparison study", cmd_compare},
      {"consistency", "Normal-means consistency sweep", cmd_consistency},
      {"semisynth", "Semi-synthetic confounding from a randomized dataset", cmd_semisynth},
  };
  std::vector<Common> opts(std::size(subs));
  std::vector<std::uint64_t> seeds(std::size(subs));
  std::vector<CLI::App*> apps;
  for (std::size_t i = 0; i < std::size(subs); ++i) {
    auto* s = app.add_subcommand(subs[i].name, subs[i].help);
    s->add_option("--config", opts[i].config, "JSON configuration file")->check(CLI::ExistingFile);
    s->add_option("--out", opts[i].out, "Output directory")->capture_default_str();
    s->add_option("--seed", seeds[i], "Master seed (overrides the config)");
    apps.push_back(s);
  }
  CLI11_PARSE(app, argc, argv);

  try {
    for (std::size_t i = 0; i < apps.size(); ++i) {
      if (!apps[i]->parsed()) continue;
      if (apps[i]->count("--seed")) opts[i].seed = seeds[i];
      return subs[i].run(opts[i]);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
