#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>

#include "qpeer/errors.hpp"
#include "qpeer/network.hpp"
#include "qpeer/quantile.hpp"

namespace qpeer {

// Total peer effects per quantile level plus the total conformity share.
// The optional split carries (lambda_tau1, lambda_tau2), needed only when
// evaluating utilities; the best response depends on the totals alone.
struct PeerEffectParams {
  QuantileSpec levels;
  Eigen::VectorXd lambda_tau;
  double lambda2 = 0.0;
  std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> split;

  double sum_abs_lambda() const { return lambda_tau.cwiseAbs().sum(); }

  // for_solving additionally requires the stability condition sum |lambda_tau| < 1.
  void validate(bool for_solving) const;

  // Spillover/conformity utility weights implied by the split:
  // theta_tau,k = lambda_tau,k / (1 - lambda2). Requires the split.
  Eigen::VectorXd theta_tau1() const;
  Eigen::VectorXd theta_tau2() const;
};

struct AgentTypes {
  Eigen::VectorXd alpha;  // one entry per agent, global indexing
};

struct SolveOptions {
  double tol = 1e-10;  // sup-norm fixed point residual
  int max_iter = 1000;
  std::optional<Eigen::VectorXd> start;  // defaults to alpha
};

// Thrown when the iteration budget is exhausted; carries the last residual.
class SolveError : public NumericalError {
 public:
  SolveError(const std::string& msg, double residual)
      : NumericalError(msg), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_ = 0.0;
};

// Linear-quadratic utility of agent (s, i) playing y_i against y (others'
// entries are read from y). Isolated agents have only the private part.
// Requires the lambda split to recover the theta weights.
double utility(const PeerEffectParams& params, const Network& net, const AgentTypes& types,
               int s, int i, double y_i, const Eigen::VectorXd& y);

// BR_i = (1 - lambda2) alpha_i + sum_tau lambda_tau q_{tau,i}(y) for
// non-isolated agents; alpha_i for isolated agents.
Eigen::VectorXd best_response(const PeerEffectParams& params, const Network& net,
                              const AgentTypes& types, const Eigen::VectorXd& y);

// Unique Nash equilibrium by best-response iteration, started from alpha.
// Requires sum |lambda_tau| < 1; the fixed-point residual is re-verified
// before returning.
Eigen::VectorXd solve_equilibrium(const PeerEffectParams& params, const Network& net,
                                  const AgentTypes& types, const SolveOptions& opts = {});

// Linear-in-means counterpart: the peer quantile block is replaced by the
// g-weighted average peer outcome with a single total effect.
struct LimParams {
  double lambda = 0.0;
  double lambda2 = 0.0;
};

Eigen::VectorXd lim_best_response(const LimParams& params, const Network& net,
                                  const AgentTypes& types, const Eigen::VectorXd& y);

Eigen::VectorXd solve_lim_equilibrium(const LimParams& params, const Network& net,
                                      const AgentTypes& types, const SolveOptions& opts = {});

}  // namespace qpeer
