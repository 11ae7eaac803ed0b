#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>

#include "qpeer/equilibrium.hpp"
#include "qpeer/network.hpp"
#include "qpeer/rng.hpp"

namespace qpeer {

// Synthetic data-generating process. The default degree law on {0..10} is
// calibrated to P(0) = 0.22, mean degree 3.47 and P(d <= 4) = 0.64.
struct DgpSpec {
  enum class Family { quantile, lim };

  Family family = Family::quantile;
  int n_subnets = 50;
  int subnet_size = 50;
  Eigen::VectorXd degree_law;  // probabilities on {0, ..., size-1}
  Eigen::VectorXd beta1;
  Eigen::VectorXd beta2;
  double intercept = 4.0;
  double sigma = 0.7;

  QuantileSpec levels;         // quantile family
  Eigen::VectorXd lambda_tau;  // quantile family
  double lim_lambda = 0.0;     // lim family
  double lambda2 = 0.0;

  uint64_t seed = 1;

  // Optional replacement for the Gaussian error draw.
  std::function<double(Rng&)> error_sampler;

  void validate() const;

  // Monte Carlo designs A-F: A-E are quantile DGPs on T = {0, 1/3, 2/3, 1}
  // with lambda2 = 0.2; F is a linear-in-means DGP with lambda = 0.55.
  static DgpSpec preset(char name, uint64_t seed = 1);

  static DgpSpec from_json_file(const std::string& path);
  std::string to_json() const;
};

Eigen::VectorXd default_degree_law();

// Draws each agent's out-degree from the law, then that many peers uniformly
// without replacement within the subnetwork. Binary weights.
Network gen_network(const DgpSpec& spec);

// x1 ~ N(0, 1), x2 ~ Poisson(2) per agent.
Eigen::MatrixXd gen_covariates(const DgpSpec& spec, const Network& net);

struct Simulated {
  Network net;
  Dataset data;
  AgentTypes types;
};

// alpha = intercept + x' beta1 + xbar' beta2 + eps (contextual term omitted
// for isolated agents); outcomes solve the game at the spec's parameters.
Dataset simulate_outcomes(const DgpSpec& spec, const Network& net, const Eigen::MatrixXd& x,
                          AgentTypes* types_out = nullptr);

// Deterministic simulate pipeline: network, covariates, outcomes, all derived
// from spec.seed.
Simulated simulate_dataset(const DgpSpec& spec);

}  // namespace qpeer
