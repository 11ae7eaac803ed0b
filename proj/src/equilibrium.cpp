#include "qpeer/equilibrium.hpp"

#include <cmath>
#include <limits>

namespace qpeer {

void PeerEffectParams::validate(bool for_solving) const {
  levels.validate();
  if (lambda_tau.size() != levels.size()) {
    throw std::invalid_argument("lambda_tau size must match the number of levels");
  }
  if (!(lambda2 >= 0.0 && lambda2 < 1.0)) {
    throw std::invalid_argument("lambda2 must lie in [0, 1)");
  }
  if (split) {
    const auto& [l1, l2] = *split;
    if (l1.size() != lambda_tau.size() || l2.size() != lambda_tau.size()) {
      throw std::invalid_argument("split size must match lambda_tau");
    }
    for (int t = 0; t < lambda_tau.size(); ++t) {
      if (l2[t] < 0.0) throw std::invalid_argument("conformity components must be >= 0");
      if (std::abs(l1[t] + l2[t] - lambda_tau[t]) > 1e-12) {
        throw std::invalid_argument("split components must sum to lambda_tau");
      }
    }
    if (std::abs(l2.sum() - lambda2) > 1e-12) {
      throw std::invalid_argument("conformity components must sum to lambda2");
    }
  }
  if (for_solving && !(sum_abs_lambda() < 1.0)) {
    throw std::invalid_argument("stability requires sum |lambda_tau| < 1");
  }
}

Eigen::VectorXd PeerEffectParams::theta_tau1() const {
  if (!split) throw std::invalid_argument("theta decomposition requires the lambda split");
  return split->first / (1.0 - lambda2);
}

Eigen::VectorXd PeerEffectParams::theta_tau2() const {
  if (!split) throw std::invalid_argument("theta decomposition requires the lambda split");
  return split->second / (1.0 - lambda2);
}

double utility(const PeerEffectParams& params, const Network& net, const AgentTypes& types,
               int s, int i, double y_i, const Eigen::VectorXd& y) {
  const int g = net.global_index(s, i);
  const double alpha_i = types.alpha[g];
  const double private_part = alpha_i * y_i - 0.5 * y_i * y_i;
  if (net.subnets[s].is_isolated(i)) return private_part;

  const Eigen::VectorXd t1 = params.theta_tau1();
  const Eigen::VectorXd t2 = params.theta_tau2();
  for (int t = 0; t < t2.size(); ++t) {
    if (t2[t] < 0.0) throw std::invalid_argument("conformity weights must be >= 0");
  }
  double social = 0.0;
  for (int t = 0; t < params.levels.size(); ++t) {
    const double q = peer_quantile(net, y, s, i, params.levels.levels[t]);
    social += t1[t] * q * y_i - 0.5 * t2[t] * (y_i - q) * (y_i - q);
  }
  return private_part + social;
}

Eigen::VectorXd best_response(const PeerEffectParams& params, const Network& net,
                              const AgentTypes& types, const Eigen::VectorXd& y) {
  params.validate(false);
  const int dt = params.levels.size();
  Eigen::VectorXd br(y.size());
  for (int s = 0; s < net.num_subnets(); ++s) {
    const auto& sub = net.subnets[s];
    for (int i = 0; i < sub.n; ++i) {
      const int g = net.global_index(s, i);
      if (sub.is_isolated(i)) {
        br[g] = types.alpha[g];
        continue;
      }
      double social = 0.0;
      for (int t = 0; t < dt; ++t) {
        social += params.lambda_tau[t] * peer_quantile(net, y, s, i, params.levels.levels[t]);
      }
      br[g] = (1.0 - params.lambda2) * types.alpha[g] + social;
    }
  }
  return br;
}

namespace {

// Shared Picard iteration; br must be a contraction in the sup norm.
template <typename BrFn>
Eigen::VectorXd iterate_to_fixed_point(BrFn&& br, const Eigen::VectorXd& start,
                                       const SolveOptions& opts) {
  Eigen::VectorXd y = start;
  double residual = 0.0;
  for (int it = 0; it < opts.max_iter; ++it) {
    Eigen::VectorXd next = br(y);
    residual = (next - y).cwiseAbs().maxCoeff();
    y = std::move(next);
    if (residual <= opts.tol) {
      // Fixed point certificate on the returned iterate.
      const Eigen::VectorXd again = br(y);
      const double check = (again - y).cwiseAbs().maxCoeff();
      if (check <= opts.tol) return y;
      residual = check;
    }
  }
  throw SolveError("equilibrium iteration exceeded max_iter; residual " +
                       std::to_string(residual),
                   residual);
}

}  // namespace

namespace {

// Exact fixed point of the affine map implied by the ordering configuration
// at y: within a fixed configuration BR(y) = A y + b with A built from the
// two bracketing peers per (agent, level).
Eigen::VectorXd solve_configuration(const PeerEffectParams& params, const Network& net,
                                    const AgentTypes& types, const Eigen::VectorXd& y) {
  Eigen::VectorXd out(y.size());
  const int dt = params.levels.size();
  for (int s = 0; s < net.num_subnets(); ++s) {
    const auto& sub = net.subnets[s];
    const int off = net.global_index(s, 0);
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(sub.n, sub.n);
    Eigen::VectorXd b(sub.n);
    for (int i = 0; i < sub.n; ++i) {
      if (sub.is_isolated(i)) {
        b[i] = types.alpha[off + i];
        continue;
      }
      b[i] = (1.0 - params.lambda2) * types.alpha[off + i];
      for (int t = 0; t < dt; ++t) {
        const auto dec = quantile_decomposition(net, y, s, i, params.levels.levels[t]);
        a(i, dec.j1) -= params.lambda_tau[t] * (1.0 - dec.omega);
        if (dec.omega > 0.0) a(i, dec.j2) -= params.lambda_tau[t] * dec.omega;
      }
    }
    out.segment(off, sub.n) = a.partialPivLu().solve(b);
  }
  return out;
}

}  // namespace

Eigen::VectorXd solve_equilibrium(const PeerEffectParams& params, const Network& net,
                                  const AgentTypes& types, const SolveOptions& opts) {
  params.validate(true);
  if (types.alpha.size() != net.total_agents()) {
    throw std::invalid_argument("alpha size must match the agent count");
  }
  const auto br = [&](const Eigen::VectorXd& y) {
    return best_response(params, net, types, y);
  };
  Eigen::VectorXd y = opts.start ? *opts.start : types.alpha;
  double residual = 0.0;
  double window_best = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  int config_attempts = 0;
  for (int it = 0; it < opts.max_iter; ++it) {
    Eigen::VectorXd next = br(y);
    residual = (next - y).cwiseAbs().maxCoeff();
    y = std::move(next);
    if (residual <= opts.tol) {
      const Eigen::VectorXd again = br(y);
      const double check = (again - y).cwiseAbs().maxCoeff();
      if (check <= opts.tol) return y;
      residual = check;
    }
    // On binary networks the residual contracts every step. Weighted
    // networks can cycle across outcome-order boundaries; when the residual
    // stalls, solve the affine map of the current configuration exactly and
    // keep the result if it is self-consistent.
    if (residual < 0.5 * window_best) {
      window_best = residual;
      since_improvement = 0;
    } else if (++since_improvement >= 50 && config_attempts < 20) {
      ++config_attempts;
      since_improvement = 0;
      const Eigen::VectorXd candidate = solve_configuration(params, net, types, y);
      const double cand_res = (br(candidate) - candidate).cwiseAbs().maxCoeff();
      if (cand_res <= opts.tol) return candidate;
      if (cand_res < residual) y = candidate;
    }
  }
  throw SolveError("equilibrium iteration exceeded max_iter; residual " +
                       std::to_string(residual),
                   residual);
}

Eigen::VectorXd lim_best_response(const LimParams& params, const Network& net,
                                  const AgentTypes& types, const Eigen::VectorXd& y) {
  Eigen::VectorXd br(y.size());
  for (int s = 0; s < net.num_subnets(); ++s) {
    const auto& sub = net.subnets[s];
    for (int i = 0; i < sub.n; ++i) {
      const int g = net.global_index(s, i);
      if (sub.is_isolated(i)) {
        br[g] = types.alpha[g];
        continue;
      }
      double acc = 0.0, wsum = 0.0;
      for (const auto& [j, w] : sub.adj[i]) {
        acc += w * y[net.global_index(s, j)];
        wsum += w;
      }
      br[g] = (1.0 - params.lambda2) * types.alpha[g] + params.lambda * (acc / wsum);
    }
  }
  return br;
}

Eigen::VectorXd solve_lim_equilibrium(const LimParams& params, const Network& net,
                                      const AgentTypes& types, const SolveOptions& opts) {
  if (!(std::abs(params.lambda) < 1.0)) {
    throw std::invalid_argument("stability requires |lambda| < 1");
  }
  if (types.alpha.size() != net.total_agents()) {
    throw std::invalid_argument("alpha size must match the agent count");
  }
  return iterate_to_fixed_point(
      [&](const Eigen::VectorXd& y) { return lim_best_response(params, net, types, y); },
      opts.start ? *opts.start : types.alpha, opts);
}

}  // namespace qpeer
