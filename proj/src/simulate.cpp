#include "qpeer/simulate.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace qpeer {

namespace {

using nlohmann::json;

// Seed streams for the simulation stages.
constexpr uint64_t kNetworkStream = 0;
constexpr uint64_t kCovariateStream = 1;
constexpr uint64_t kErrorStream = 2;

Eigen::VectorXd to_vector(const json& j) {
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
  return v;
}

json from_vector(const Eigen::VectorXd& v) {
  json j = json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

}  // namespace

Eigen::VectorXd default_degree_law() {
  // Categorical law on {0..10} fit to P(0) = 0.22, mean 3.47, P(<=4) = 0.64;
  // masses for d >= 1 are proportional to exp(a d + b d^2).
  Eigen::VectorXd law(11);
  law << 0.2200000000, 0.0809225971, 0.1024918813, 0.1168050325, 0.1197804891, 0.1105256421,
      0.0917682498, 0.0685605493, 0.0460901972, 0.0278801612, 0.0151752003;
  return law / law.sum();
}

void DgpSpec::validate() const {
  if (n_subnets < 1 || subnet_size < 2) throw std::invalid_argument("invalid network dimensions");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  if (degree_law.size() < 1 || degree_law.minCoeff() < 0.0 ||
      std::abs(degree_law.sum() - 1.0) > 1e-8) {
    throw std::invalid_argument("degree law must be a probability vector");
  }
  if (degree_law.size() > subnet_size) {
    throw std::invalid_argument("maximum degree must be below the subnetwork size");
  }
  if (beta1.size() != beta2.size()) {
    throw std::invalid_argument("beta1 and beta2 must have equal length");
  }
  if (family == Family::quantile) {
    levels.validate();
    if (lambda_tau.size() != levels.size()) {
      throw std::invalid_argument("lambda_tau must match the level count");
    }
    if (!(lambda_tau.cwiseAbs().sum() < 1.0)) {
      throw std::invalid_argument("stability requires sum |lambda_tau| < 1");
    }
  } else {
    if (!(std::abs(lim_lambda) < 1.0)) throw std::invalid_argument("|lambda| < 1 required");
  }
  if (!(lambda2 >= 0.0 && lambda2 < 1.0)) throw std::invalid_argument("lambda2 in [0,1) required");
}

DgpSpec DgpSpec::preset(char name, uint64_t seed) {
  DgpSpec spec;
  spec.seed = seed;
  spec.degree_law = default_degree_law();
  spec.beta1 = Eigen::Vector2d(-0.5, 1.0);
  spec.beta2 = Eigen::Vector2d(-0.2, 0.6);
  spec.levels = QuantileSpec::uniform(4);
  spec.lambda2 = 0.2;
  Eigen::Vector4d lt;
  switch (name) {
    case 'A': lt << 0.0, 0.05, 0.2, 0.3; break;
    case 'B': lt << 0.3, 0.2, 0.05, 0.0; break;
    case 'C': lt << 0.0, 0.275, 0.275, 0.0; break;
    case 'D': lt << 0.275, 0.0, 0.0, 0.275; break;
    case 'E': lt << -0.05, 0.35, 0.15, 0.1; break;
    case 'F':
      spec.family = Family::lim;
      spec.lim_lambda = 0.55;
      spec.lambda2 = 0.0;
      spec.lambda_tau.resize(0);
      return spec;
    default: throw std::invalid_argument("unknown DGP preset");
  }
  spec.lambda_tau = lt;
  return spec;
}

DgpSpec DgpSpec::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j;
  in >> j;
  DgpSpec spec;
  if (j.contains("preset")) {
    spec = preset(j["preset"].get<std::string>().at(0), j.value("seed", 1ULL));
  } else {
    const std::string family = j.value("family", "quantile");
    spec.family = family == "lim" ? Family::lim : Family::quantile;
  }
  if (j.contains("n_subnets")) spec.n_subnets = j["n_subnets"].get<int>();
  if (j.contains("subnet_size")) spec.subnet_size = j["subnet_size"].get<int>();
  if (j.contains("degree_law")) spec.degree_law = to_vector(j["degree_law"]);
  if (spec.degree_law.size() == 0) spec.degree_law = default_degree_law();
  if (j.contains("beta1")) spec.beta1 = to_vector(j["beta1"]);
  if (j.contains("beta2")) spec.beta2 = to_vector(j["beta2"]);
  if (j.contains("intercept")) spec.intercept = j["intercept"].get<double>();
  if (j.contains("sigma")) spec.sigma = j["sigma"].get<double>();
  if (j.contains("levels")) spec.levels = QuantileSpec(j["levels"].get<std::vector<double>>());
  if (j.contains("lambda_tau")) spec.lambda_tau = to_vector(j["lambda_tau"]);
  if (j.contains("lambda")) spec.lim_lambda = j["lambda"].get<double>();
  if (j.contains("lambda2")) spec.lambda2 = j["lambda2"].get<double>();
  if (j.contains("seed")) spec.seed = j["seed"].get<uint64_t>();
  spec.validate();
  return spec;
}

std::string DgpSpec::to_json() const {
  json j;
  j["family"] = family == Family::lim ? "lim" : "quantile";
  j["n_subnets"] = n_subnets;
  j["subnet_size"] = subnet_size;
  j["degree_law"] = from_vector(degree_law);
  j["beta1"] = from_vector(beta1);
  j["beta2"] = from_vector(beta2);
  j["intercept"] = intercept;
  j["sigma"] = sigma;
  if (family == Family::quantile) {
    j["levels"] = levels.levels;
    j["lambda_tau"] = from_vector(lambda_tau);
  } else {
    j["lambda"] = lim_lambda;
  }
  j["lambda2"] = lambda2;
  j["seed"] = seed;
  return j.dump(2);
}

Network gen_network(const DgpSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, kNetworkStream));
  const int max_deg = static_cast<int>(spec.degree_law.size()) - 1;
  if (max_deg >= spec.subnet_size) {
    throw std::invalid_argument("degree law support exceeds subnetwork size");
  }
  // Inverse-CDF draw from the categorical law.
  Eigen::VectorXd cdf(spec.degree_law.size());
  double acc = 0.0;
  for (int d = 0; d <= max_deg; ++d) {
    acc += spec.degree_law[d];
    cdf[d] = acc;
  }
  Network net;
  net.subnets.reserve(spec.n_subnets);
  for (int s = 0; s < spec.n_subnets; ++s) {
    Subnetwork sub;
    sub.id = s;
    sub.n = spec.subnet_size;
    sub.adj.resize(sub.n);
    sub.orig_ids.resize(sub.n);
    for (int i = 0; i < sub.n; ++i) sub.orig_ids[i] = i;
    for (int i = 0; i < sub.n; ++i) {
      const double u = rng.uniform();
      int deg = 0;
      while (deg < max_deg && u > cdf[deg]) ++deg;
      auto peers = rng.sample_without_replacement(sub.n, deg, i);
      std::sort(peers.begin(), peers.end());
      for (int j : peers) sub.adj[i].emplace_back(j, 1.0);
    }
    net.subnets.push_back(std::move(sub));
  }
  net.finalize();
  return net;
}

Eigen::MatrixXd gen_covariates(const DgpSpec& spec, const Network& net) {
  Rng rng(derive_seed(spec.seed, kCovariateStream));
  const int n = net.total_agents();
  Eigen::MatrixXd x(n, 2);
  for (int g = 0; g < n; ++g) {
    x(g, 0) = rng.normal();
    x(g, 1) = static_cast<double>(rng.poisson(2.0));
  }
  return x;
}

Dataset simulate_outcomes(const DgpSpec& spec, const Network& net, const Eigen::MatrixXd& x,
                          AgentTypes* types_out) {
  spec.validate();
  if (static_cast<int>(x.cols()) != spec.beta1.size()) {
    throw std::invalid_argument("covariate and beta1 dimensions differ");
  }
  Rng rng(derive_seed(spec.seed, kErrorStream));
  const int n = net.total_agents();
  const Eigen::MatrixXd xbar = peer_average(net, x);

  AgentTypes types;
  types.alpha.resize(n);
  for (int s = 0; s < net.num_subnets(); ++s) {
    const auto& sub = net.subnets[s];
    for (int i = 0; i < sub.n; ++i) {
      const int g = net.global_index(s, i);
      const double eps =
          spec.error_sampler ? spec.error_sampler(rng) : rng.normal(0.0, spec.sigma);
      double a = spec.intercept + x.row(g).dot(spec.beta1) + eps;
      if (!sub.is_isolated(i)) a += xbar.row(g).dot(spec.beta2);
      types.alpha[g] = a;
    }
  }

  Eigen::VectorXd y;
  if (spec.family == DgpSpec::Family::quantile) {
    PeerEffectParams params;
    params.levels = spec.levels;
    params.lambda_tau = spec.lambda_tau;
    params.lambda2 = spec.lambda2;
    y = solve_equilibrium(params, net, types);
  } else {
    LimParams params{spec.lim_lambda, spec.lambda2};
    y = solve_lim_equilibrium(params, net, types);
  }

  Dataset data;
  data.y = std::move(y);
  data.x = x;
  data.xbar = xbar;
  data.x_names = {"x1", "x2"};
  if (static_cast<int>(data.x_names.size()) != data.d1()) {
    data.x_names.clear();
    for (int c = 0; c < data.d1(); ++c) data.x_names.push_back("x" + std::to_string(c + 1));
  }
  data.iso.resize(n);
  for (int s = 0; s < net.num_subnets(); ++s) {
    for (int i = 0; i < net.subnets[s].n; ++i) {
      data.iso[net.global_index(s, i)] = net.subnets[s].is_isolated(i) ? 1 : 0;
    }
  }
  if (types_out) *types_out = std::move(types);
  return data;
}

Simulated simulate_dataset(const DgpSpec& spec) {
  Simulated out;
  out.net = gen_network(spec);
  const Eigen::MatrixXd x = gen_covariates(spec, out.net);
  out.data = simulate_outcomes(spec, out.net, x, &out.types);
  return out;
}

}  // namespace qpeer
