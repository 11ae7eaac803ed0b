#include "qpeer/montecarlo.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "qpeer/rng.hpp"

namespace qpeer {

McConfig McConfig::standard(const DgpSpec& dgp, int replications, uint64_t seed, int threads) {
  McConfig mc;
  mc.dgp = dgp;
  mc.replications = replications;
  mc.seed = seed;
  mc.threads = threads;

  auto quantile_cfg = [](int k, InstrumentMatrix::Kind kind) {
    EstimateConfig cfg;
    cfg.levels = QuantileSpec::uniform(k);
    cfg.instruments = kind;
    return cfg;
  };
  mc.estimations.push_back({"q3_z1", quantile_cfg(3, InstrumentMatrix::Kind::type1)});
  mc.estimations.push_back({"q4_z1", quantile_cfg(4, InstrumentMatrix::Kind::type1)});
  mc.estimations.push_back({"q5_z1", quantile_cfg(5, InstrumentMatrix::Kind::type1)});
  mc.estimations.push_back({"q4_z12", quantile_cfg(4, InstrumentMatrix::Kind::combined)});
  EstimateConfig lim_cfg;
  lim_cfg.lim = true;
  mc.estimations.push_back({"lim_z1", lim_cfg});

  using K = McTestSpec::Kind;
  mc.tests.push_back({K::encompassing, "enc_3v4", "q3_z1", "q4_z1"});
  mc.tests.push_back({K::encompassing, "enc_4v5", "q4_z1", "q5_z1"});
  mc.tests.push_back({K::kp_rank, "kp_z1", "q4_z1", ""});
  mc.tests.push_back({K::kp_rank, "kp_z12", "q4_z12", ""});
  mc.tests.push_back({K::sargan_type2, "sargan_z2", "q4_z1", ""});
  mc.tests.push_back({K::wald_type2, "wald_z2", "q4_z1", "q4_z12"});
  mc.tests.push_back({K::sargan_overid, "sargan_overid", "q4_z1", ""});
  return mc;
}

namespace {

struct RepResult {
  bool ok = false;
  std::string error;
  std::vector<Eigen::VectorXd> coefs;  // per estimation spec
  std::vector<Eigen::VectorXd> ses;
  std::vector<TestResult> tests;  // per test spec
};

RepResult run_one(const McConfig& config, int rep) {
  RepResult out;
  try {
    DgpSpec dgp = config.dgp;
    dgp.seed = derive_seed(config.seed, static_cast<uint64_t>(rep));
    const Simulated sim = simulate_dataset(dgp);
    const Partition part = classify(sim.net);

    // Shared instrument blocks across estimation specs.
    std::map<std::string, InstrumentMatrix> cache;
    auto instruments_for = [&](const EstimateConfig& cfg) -> const InstrumentMatrix& {
      std::string key;
      switch (cfg.instruments) {
        case InstrumentMatrix::Kind::type1: key = "t1"; break;
        case InstrumentMatrix::Kind::type2: key = "t2_" + std::to_string(cfg.levels.size()); break;
        case InstrumentMatrix::Kind::combined:
          key = "c_" + std::to_string(cfg.levels.size());
          break;
      }
      auto it = cache.find(key);
      if (it != cache.end()) return it->second;
      InstrumentMatrix z;
      if (cfg.instruments == InstrumentMatrix::Kind::type1) {
        z = build_type1(sim.net, sim.data, part, cfg.type1_levels, cfg.max_distance,
                        cfg.exactly_k);
      } else if (cfg.instruments == InstrumentMatrix::Kind::type2) {
        z = build_type2(sim.net, sim.data, part, cfg.levels);
      } else {
        auto t1 = cache.find("t1");
        if (t1 == cache.end()) {
          t1 = cache
                   .emplace("t1", build_type1(sim.net, sim.data, part, cfg.type1_levels,
                                              cfg.max_distance, cfg.exactly_k))
                   .first;
        }
        z = combine(t1->second, build_type2(sim.net, sim.data, part, cfg.levels));
      }
      return cache.emplace(std::move(key), std::move(z)).first->second;
    };

    std::map<std::string, ModelFit> fits;
    for (const auto& spec : config.estimations) {
      ModelFit fit =
          fit_model(sim.net, sim.data, spec.config, part, instruments_for(spec.config));
      const CoefView view = coefficient_view(fit);
      out.coefs.push_back(view.values);
      out.ses.push_back(view.ses);
      fits.emplace(spec.name, std::move(fit));
    }

    for (const auto& t : config.tests) {
      const ModelFit& fa = fits.at(t.fit_a);
      switch (t.kind) {
        case McTestSpec::Kind::encompassing:
          out.tests.push_back(encompassing_test(fa, fits.at(t.fit_b)));
          break;
        case McTestSpec::Kind::kp_rank:
          out.tests.push_back(weak_instrument_rank(fa));
          break;
        case McTestSpec::Kind::sargan_type2:
          out.tests.push_back(
              sargan_type2(fa, build_type2(sim.net, sim.data, part, fa.config.levels)));
          break;
        case McTestSpec::Kind::wald_type2:
          out.tests.push_back(wald_type2(fa, fits.at(t.fit_b)));
          break;
        case McTestSpec::Kind::sargan_overid:
          out.tests.push_back(sargan_overid(fa));
          break;
      }
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

std::vector<std::string> coef_names_for(const McConfig& config, const McEstimationSpec& spec) {
  // Names are data-independent; derive them from a tiny synthetic fit proxy.
  std::vector<std::string> names;
  const int dt = spec.config.lim ? 1 : spec.config.levels.size();
  for (int t = 0; t < dt; ++t) {
    names.push_back(spec.config.lim ? "lambda" : "lambda_tau" + std::to_string(t + 1));
  }
  names.push_back("lambda2");
  for (int c = 0; c < config.dgp.beta1.size(); ++c) {
    names.push_back("beta1_" + std::to_string(c + 1));
  }
  for (int c = 0; c < config.dgp.beta2.size(); ++c) {
    names.push_back("beta2_" + std::to_string(c + 1));
  }
  return names;
}

}  // namespace

McReport run_montecarlo(const McConfig& config) {
  if (config.replications < 1) throw std::invalid_argument("replications must be >= 1");
  std::vector<RepResult> results(config.replications);
  const int threads = std::max(1, config.threads);
  if (threads == 1) {
    for (int r = 0; r < config.replications; ++r) results[r] = run_one(config, r);
  } else {
    std::atomic<int> next{0};
    auto worker = [&] {
      for (;;) {
        const int r = next.fetch_add(1);
        if (r >= config.replications) return;
        results[r] = run_one(config, r);
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  McReport rep;
  rep.replications = config.replications;
  for (const auto& r : results) {
    if (!r.ok) {
      ++rep.failures;
      if (rep.failure_messages.size() < 10) rep.failure_messages.push_back(r.error);
    }
  }

  for (size_t e = 0; e < config.estimations.size(); ++e) {
    McEstimationSummary sum;
    sum.name = config.estimations[e].name;
    sum.coef_names = coef_names_for(config, config.estimations[e]);
    const int q = static_cast<int>(sum.coef_names.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd mean_se = Eigen::VectorXd::Zero(q);
    int n = 0;
    for (const auto& r : results) {
      if (!r.ok) continue;
      mean += r.coefs[e];
      mean_se += r.ses[e];
      ++n;
    }
    sum.n_used = n;
    if (n > 0) {
      mean /= n;
      mean_se /= n;
    }
    Eigen::VectorXd ssq = Eigen::VectorXd::Zero(q);
    for (const auto& r : results) {
      if (!r.ok) continue;
      ssq += (r.coefs[e] - mean).cwiseAbs2();
    }
    sum.mean = mean;
    sum.mean_asymptotic_se = mean_se;
    sum.empirical_sd = n > 1 ? Eigen::VectorXd((ssq / (n - 1)).cwiseSqrt())
                             : Eigen::VectorXd::Zero(q);
    rep.estimations.push_back(std::move(sum));
  }

  for (size_t t = 0; t < config.tests.size(); ++t) {
    McTestSummary sum;
    sum.name = config.tests[t].name;
    double acc = 0.0, acc2 = 0.0;
    int n_def = 0, n = 0;
    int rej05 = 0, rej10 = 0;
    for (const auto& r : results) {
      if (!r.ok) continue;
      ++n;
      const TestResult& tr = r.tests[t];
      if (!tr.defined) continue;
      ++n_def;
      acc += tr.statistic;
      acc2 += tr.statistic * tr.statistic;
      if (tr.p_value < 0.05) ++rej05;
      if (tr.p_value < 0.10) ++rej10;
    }
    sum.n_used = n;
    sum.n_defined = n_def;
    if (n_def > 0) {
      sum.mean_stat = acc / n_def;
      const double var = acc2 / n_def - sum.mean_stat * sum.mean_stat;
      sum.sd_stat = var > 0.0 ? std::sqrt(var * n_def / std::max(1, n_def - 1)) : 0.0;
      sum.reject_05 = static_cast<double>(rej05) / n_def;
      sum.reject_10 = static_cast<double>(rej10) / n_def;
    }
    rep.tests.push_back(std::move(sum));
  }
  return rep;
}

void write_estimation_csv(const McReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(12);
  out << "estimation,coefficient,mean,empirical_sd,mean_asymptotic_se,n_used\n";
  for (const auto& e : report.estimations) {
    for (size_t c = 0; c < e.coef_names.size(); ++c) {
      out << e.name << ',' << e.coef_names[c] << ',' << e.mean[c] << ',' << e.empirical_sd[c]
          << ',' << e.mean_asymptotic_se[c] << ',' << e.n_used << '\n';
    }
  }
}

void write_test_csv(const McReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(12);
  out << "test,mean_statistic,sd_statistic,reject_05,reject_10,n_defined,n_used\n";
  for (const auto& t : report.tests) {
    out << t.name << ',' << t.mean_stat << ',' << t.sd_stat << ',' << t.reject_05 << ','
        << t.reject_10 << ',' << t.n_defined << ',' << t.n_used << '\n';
  }
}

}  // namespace qpeer
