#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "qpeer/diagnostics.hpp"
#include "qpeer/errors.hpp"
#include "qpeer/estimate.hpp"
#include "qpeer/instruments.hpp"
#include "qpeer/keyplayer.hpp"
#include "qpeer/montecarlo.hpp"
#include "qpeer/network.hpp"
#include "qpeer/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::vector<double> parse_levels(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

qpeer::InstrumentMatrix::Kind parse_kind(const std::string& s) {
  if (s == "type1") return qpeer::InstrumentMatrix::Kind::type1;
  if (s == "type2") return qpeer::InstrumentMatrix::Kind::type2;
  if (s == "combined" || s == "both") return qpeer::InstrumentMatrix::Kind::combined;
  throw CLI::ValidationError("--instruments must be type1, type2 or combined");
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                    const std::vector<std::string>& outputs) {
  json j;
  j["tool"] = "qpeer";
  j["version"] = kVersion;
  j["command"] = command;
  j["generator"] = "mt19937_64 with library-pinned transforms";
  j["config"] = config;
  j["outputs"] = outputs;
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << '\n';
}

struct EstimateArgs {
  std::string edges, nodes, levels = "0,0.3333333333333333,0.6666666666666666,1";
  std::string instruments = "type1";
  std::string type1_levels;
  int max_distance = 3;
  bool exactly_k = false;
  bool lim = false;
  bool reduced_form = false;
};

qpeer::EstimateConfig make_config(const EstimateArgs& a) {
  qpeer::EstimateConfig cfg;
  cfg.levels = qpeer::QuantileSpec(parse_levels(a.levels));
  cfg.instruments = parse_kind(a.instruments);
  if (!a.type1_levels.empty()) cfg.type1_levels = qpeer::QuantileSpec(parse_levels(a.type1_levels));
  cfg.max_distance = a.max_distance;
  cfg.exactly_k = a.exactly_k;
  cfg.lim = a.lim;
  cfg.reduced_form_only = a.reduced_form;
  return cfg;
}

json config_json(const qpeer::EstimateConfig& cfg) {
  json j;
  j["levels"] = cfg.levels.levels;
  j["instruments"] = cfg.instruments == qpeer::InstrumentMatrix::Kind::type1
                         ? "type1"
                         : (cfg.instruments == qpeer::InstrumentMatrix::Kind::type2 ? "type2"
                                                                                    : "combined");
  j["type1_levels"] = cfg.type1_levels.levels;
  j["max_distance"] = cfg.max_distance;
  j["exactly_k"] = cfg.exactly_k;
  j["lim"] = cfg.lim;
  j["reduced_form_only"] = cfg.reduced_form_only;
  return j;
}

int run_simulate(const std::string& dgp_name, const std::string& config_path,
                 const std::string& out_dir, uint64_t seed, int subnets, int size) {
  qpeer::DgpSpec spec;
  if (!config_path.empty()) {
    spec = qpeer::DgpSpec::from_json_file(config_path);
  } else {
    if (dgp_name.empty()) throw CLI::ValidationError("provide --dgp or --config");
    spec = qpeer::DgpSpec::preset(dgp_name.at(0), seed);
  }
  if (seed != 0) spec.seed = seed;
  if (subnets > 0) spec.n_subnets = subnets;
  if (size > 0) spec.subnet_size = size;
  spec.validate();

  const qpeer::Simulated sim = qpeer::simulate_dataset(spec);
  fs::create_directories(out_dir);
  qpeer::write_edges_csv(sim.net, (fs::path(out_dir) / "network.csv").string());
  qpeer::write_nodes_csv(sim.net, sim.data, (fs::path(out_dir) / "nodes.csv").string());
  write_manifest(out_dir, "simulate", json::parse(spec.to_json()),
                 {"network.csv", "nodes.csv"});
  std::cout << "simulated " << sim.net.num_subnets() << " subnetworks ("
            << sim.net.total_agents() << " agents) into " << out_dir << '\n';
  return 0;
}

int run_estimate(const EstimateArgs& args, const std::string& out_dir) {
  auto [net, data] = qpeer::load_network(args.edges, args.nodes);
  const qpeer::EstimateConfig cfg = make_config(args);
  qpeer::ModelFit fit = qpeer::fit_model(net, data, cfg);

  double kp = -1.0, sargan_p = -1.0;
  if (!fit.gmm.reduced_form_only) {
    try {
      kp = qpeer::weak_instrument_rank(fit).statistic;
    } catch (const std::exception&) {
    }
    const qpeer::TestResult s = qpeer::sargan_overid(fit);
    if (s.defined) sargan_p = s.p_value;
  }

  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "result.json");
  out << qpeer::result_to_json(fit, kp, sargan_p) << '\n';
  write_manifest(out_dir, "estimate", config_json(cfg), {"result.json"});

  const qpeer::CoefView view = qpeer::coefficient_view(fit);
  for (size_t c = 0; c < view.names.size(); ++c) {
    std::cout << view.names[c] << " = " << view.values[c] << " (se " << view.ses[c] << ")\n";
  }
  return 0;
}

int run_test(const EstimateArgs& args, const std::string& levels_b, const std::string& which,
             const std::string& out_dir) {
  auto [net, data] = qpeer::load_network(args.edges, args.nodes);
  const qpeer::EstimateConfig cfg = make_config(args);
  const qpeer::Partition part = qpeer::classify(net);
  qpeer::ModelFit fit = qpeer::fit_model(net, data, cfg);

  std::vector<qpeer::TestResult> results;
  std::stringstream ss(which);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name == "encompassing") {
      qpeer::EstimateConfig cfg_b = cfg;
      cfg_b.levels = qpeer::QuantileSpec(parse_levels(levels_b));
      qpeer::ModelFit fit_b = qpeer::fit_model(net, data, cfg_b);
      // Both directions; the paper reports one per pair.
      qpeer::TestResult ab = qpeer::encompassing_test(fit, fit_b);
      ab.method = "encompassing_a_vs_b";
      qpeer::TestResult ba = qpeer::encompassing_test(fit_b, fit);
      ba.method = "encompassing_b_vs_a";
      results.push_back(ab);
      results.push_back(ba);
    } else if (name == "kp") {
      results.push_back(qpeer::weak_instrument_rank(fit));
    } else if (name == "cragg_donald") {
      results.push_back(qpeer::cragg_donald(fit));
    } else if (name == "sargan2") {
      results.push_back(
          qpeer::sargan_type2(fit, qpeer::build_type2(net, data, part, cfg.levels)));
    } else if (name == "wald2") {
      qpeer::EstimateConfig cfg2 = cfg;
      cfg2.instruments = qpeer::InstrumentMatrix::Kind::combined;
      qpeer::ModelFit fit2 = qpeer::fit_model(net, data, cfg2);
      results.push_back(qpeer::wald_type2(fit, fit2));
    } else if (name == "sargan") {
      results.push_back(qpeer::sargan_overid(fit));
    } else {
      throw CLI::ValidationError("unknown test: " + name);
    }
  }

  fs::create_directories(out_dir);
  qpeer::write_tests_csv(results, (fs::path(out_dir) / "tests.csv").string());
  json jc = config_json(cfg);
  jc["which"] = which;
  if (!levels_b.empty()) jc["levels_b"] = parse_levels(levels_b);
  write_manifest(out_dir, "test", jc, {"tests.csv"});
  for (const auto& t : results) {
    std::cout << t.method << ": stat " << t.statistic << ", df " << t.df << ", p "
              << t.p_value << (t.defined ? "" : " (undefined)") << '\n';
  }
  return 0;
}

int run_keyplayer(const EstimateArgs& args, bool compare_lim, int max_school_size, int threads,
                  const std::string& out_dir) {
  auto [net, data] = qpeer::load_network(args.edges, args.nodes);
  qpeer::EstimateConfig cfg = make_config(args);

  auto influences_for = [&](bool lim) {
    qpeer::EstimateConfig c = cfg;
    c.lim = lim;
    qpeer::ModelFit fit = qpeer::fit_model(net, data, c);
    const auto rec = qpeer::types_from_estimates(net, data, *fit.structural, c.levels, lim);
    qpeer::PeerModel model;
    if (lim) {
      model = qpeer::LimParams{fit.structural->lambda_tau[0], fit.structural->lambda2};
    } else {
      qpeer::PeerEffectParams p;
      p.levels = c.levels;
      p.lambda_tau = fit.structural->lambda_tau;
      p.lambda2 = fit.structural->lambda2;
      model = p;
    }
    return qpeer::influence_all(model, net, rec.types, rec.alpha_isolated, {}, max_school_size,
                                threads);
  };

  const auto inf_main = influences_for(cfg.lim);
  const qpeer::InfluenceReport rep_main = qpeer::rank_players(net, inf_main);

  fs::create_directories(out_dir);
  json jc = config_json(cfg);
  jc["max_school_size"] = max_school_size;
  if (compare_lim) {
    const auto inf_lim = influences_for(true);
    const qpeer::InfluenceReport rep_lim = qpeer::rank_players(net, inf_lim);
    qpeer::write_influence_csv(rep_main, &rep_lim,
                               (fs::path(out_dir) / "ranks.csv").string());
    const auto cmp = qpeer::compare_rankings(rep_main, rep_lim);
    jc["rank_correlation"] = cmp.correlation;
    std::cout << "rank correlation (vs lim): " << cmp.correlation << '\n';
  } else {
    qpeer::write_influence_csv(rep_main, nullptr, (fs::path(out_dir) / "ranks.csv").string());
  }
  write_manifest(out_dir, "keyplayer", jc, {"ranks.csv"});
  return 0;
}

int run_montecarlo(const std::string& dgp_name, const std::string& config_path,
                   int replications, uint64_t seed, int threads, const std::string& out_dir) {
  qpeer::DgpSpec dgp;
  if (!config_path.empty()) {
    dgp = qpeer::DgpSpec::from_json_file(config_path);
  } else {
    if (dgp_name.empty()) throw CLI::ValidationError("provide --dgp or --config");
    dgp = qpeer::DgpSpec::preset(dgp_name.at(0));
  }
  const qpeer::McConfig mc = qpeer::McConfig::standard(dgp, replications, seed, threads);
  const qpeer::McReport report = qpeer::run_montecarlo(mc);

  fs::create_directories(out_dir);
  qpeer::write_estimation_csv(report, (fs::path(out_dir) / "estimations.csv").string());
  qpeer::write_test_csv(report, (fs::path(out_dir) / "tests.csv").string());
  json jc = json::parse(dgp.to_json());
  jc["replications"] = replications;
  jc["mc_seed"] = seed;
  jc["threads"] = threads;
  jc["failures"] = report.failures;
  write_manifest(out_dir, "montecarlo", jc, {"estimations.csv", "tests.csv"});
  std::cout << "completed " << (report.replications - report.failures) << "/"
            << report.replications << " replications\n";
  for (const auto& m : report.failure_messages) std::cout << "failure: " << m << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantile peer-effect models: simulation, estimation, tests, key players"};
  app.require_subcommand(1);

  // simulate
  std::string dgp_name, config_path, out_dir = ".";
  uint64_t seed = 0;
  int subnets = 0, size = 0;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic network and outcomes");
  sim->add_option("--dgp", dgp_name, "DGP preset (A-F)");
  sim->add_option("--config", config_path, "DGP JSON configuration");
  sim->add_option("--out", out_dir, "Output directory");
  sim->add_option("--seed", seed, "Random seed");
  sim->add_option("--subnets", subnets, "Number of subnetworks");
  sim->add_option("--size", size, "Agents per subnetwork");

  // shared estimation arguments
  EstimateArgs eargs;
  auto add_estimate_options = [&](CLI::App* cmd) {
    cmd->add_option("--edges", eargs.edges, "Edge CSV (subnet,src,dst[,weight])")->required();
    cmd->add_option("--nodes", eargs.nodes, "Node CSV (subnet,id,y,x...)")->required();
    cmd->add_option("--levels", eargs.levels, "Estimation quantile levels, comma separated");
    cmd->add_option("--instruments", eargs.instruments, "type1 | type2 | combined");
    cmd->add_option("--type1-levels", eargs.type1_levels, "Type I instrument levels");
    cmd->add_option("--max-distance", eargs.max_distance, "Peer distance cap (1-3)");
    cmd->add_flag("--exactly-k", eargs.exactly_k, "Distance sets hold exactly-k peers");
  };

  auto* est = app.add_subcommand("estimate", "Two-stage estimation of the peer-effect model");
  add_estimate_options(est);
  est->add_flag("--lim", eargs.lim, "Estimate the linear-in-means model");
  est->add_flag("--reduced-form", eargs.reduced_form,
                "Allow estimation without isolated agents (reduced form only)");
  est->add_option("--out", out_dir, "Output directory");

  // test
  std::string which = "encompassing,kp,sargan2,wald2,sargan";
  std::string levels_b = "0,0.25,0.5,0.75,1";
  auto* tst = app.add_subcommand("test", "Specification tests");
  add_estimate_options(tst);
  tst->add_option("--which", which, "Comma list: encompassing,kp,cragg_donald,sargan2,wald2,sargan");
  tst->add_option("--levels-b", levels_b, "Alternative levels for the encompassing test");
  tst->add_option("--out", out_dir, "Output directory");

  // keyplayer
  std::string model = "quantile";
  std::string compare;
  int max_school_size = 0, threads = 1;
  auto* kp = app.add_subcommand("keyplayer", "Influence measures and rankings");
  add_estimate_options(kp);
  kp->add_option("--model", model, "quantile | lim");
  kp->add_option("--compare", compare, "Secondary model for rank comparison (lim)");
  kp->add_option("--max-school-size", max_school_size, "Skip larger subnetworks (0 = none)");
  kp->add_option("--threads", threads, "Parallel counterfactual workers");
  kp->add_option("--out", out_dir, "Output directory");

  // montecarlo
  int replications = 200;
  uint64_t mc_seed = 1;
  int mc_threads = 1;
  auto* mc = app.add_subcommand("montecarlo", "Replicated simulate/estimate/test pipeline");
  mc->add_option("--dgp", dgp_name, "DGP preset (A-F)");
  mc->add_option("--config", config_path, "DGP JSON configuration");
  mc->add_option("--replications", replications, "Replication count");
  mc->add_option("--seed", mc_seed, "Master seed");
  mc->add_option("--threads", mc_threads, "Worker threads");
  mc->add_option("--out", out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage or the error
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) return run_simulate(dgp_name, config_path, out_dir, seed, subnets, size);
    if (est->parsed()) return run_estimate(eargs, out_dir);
    if (tst->parsed()) return run_test(eargs, levels_b, which, out_dir);
    if (kp->parsed()) {
      eargs.lim = model == "lim";
      return run_keyplayer(eargs, compare == "lim", max_school_size, threads, out_dir);
    }
    if (mc->parsed()) {
      return run_montecarlo(dgp_name, config_path, replications, mc_seed, mc_threads, out_dir);
    }
  } catch (const qpeer::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
