#include "qpeer/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace qpeer {

QuantileSpec QuantileSpec::uniform(int k) {
  if (k < 2) throw std::invalid_argument("QuantileSpec::uniform requires k >= 2");
  std::vector<double> lv(k);
  for (int i = 0; i < k; ++i) lv[i] = static_cast<double>(i) / (k - 1);
  return QuantileSpec(std::move(lv));
}

void QuantileSpec::validate() const {
  if (levels.empty()) throw std::invalid_argument("quantile levels must be nonempty");
  for (size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] >= 0.0 && levels[i] <= 1.0)) {
      throw std::invalid_argument("quantile levels must lie in [0, 1]");
    }
    if (i > 0 && !(levels[i] > levels[i - 1])) {
      throw std::invalid_argument("quantile levels must be strictly increasing");
    }
  }
}

namespace {

void check_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in [0, 1]");
}

double interpolate(const std::vector<double>& sorted_vals, const QuantilePos& pos) {
  const double lo = sorted_vals[pos.pi - 1];
  if (pos.omega == 0.0) return lo;
  return (1.0 - pos.omega) * lo + pos.omega * sorted_vals[pos.pi];
}

}  // namespace

QuantilePos type7_position(int d, double tau) {
  check_tau(tau);
  if (d < 1) throw std::invalid_argument("sample must be nonempty");
  const double h = tau * (d - 1);
  int pi = static_cast<int>(std::floor(h)) + 1;
  double omega = h - std::floor(h);
  if (pi >= d) {  // tau = 1
    pi = d;
    omega = 0.0;
  }
  return {pi, omega};
}

QuantilePos weighted_position(const std::vector<double>& sorted_weights, double tau) {
  check_tau(tau);
  const int d = static_cast<int>(sorted_weights.size());
  if (d < 1) throw std::invalid_argument("sample must be nonempty");
  for (double w : sorted_weights) {
    if (!(w > 0.0)) throw std::invalid_argument("weights must be positive");
  }
  if (tau == 1.0) return {d, 0.0};

  const double total = std::accumulate(sorted_weights.begin(), sorted_weights.end(), 0.0);
  // k_hat: largest k with G_k <= tau G_d. tau < 1 guarantees k_hat < d.
  int k_hat = 0;
  double g_khat = 0.0;
  double cum = 0.0;
  for (int k = 1; k < d; ++k) {
    cum += sorted_weights[k - 1];
    if (cum <= tau * total) {
      k_hat = k;
      g_khat = cum;
    } else {
      break;
    }
  }
  const double h = k_hat + 1 - tau + (tau * total - g_khat) / sorted_weights[k_hat];
  int pi = static_cast<int>(std::floor(h));
  double omega = h - pi;
  if (pi < 1) {
    pi = 1;
    omega = 0.0;
  } else if (pi >= d) {
    pi = d;
    omega = 0.0;
  }
  return {pi, omega};
}

double type7_quantile(Eigen::Ref<const Eigen::VectorXd> values, double tau) {
  check_tau(tau);
  if (values.size() == 0) throw std::invalid_argument("quantile of an empty sample");
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::stable_sort(sorted.begin(), sorted.end());
  return interpolate(sorted, type7_position(static_cast<int>(sorted.size()), tau));
}

double weighted_quantile(Eigen::Ref<const Eigen::VectorXd> values,
                         Eigen::Ref<const Eigen::VectorXd> weights, double tau) {
  check_tau(tau);
  const int d = static_cast<int>(values.size());
  if (d == 0) throw std::invalid_argument("quantile of an empty sample");
  if (weights.size() != d) throw std::invalid_argument("values/weights length mismatch");
  for (int i = 0; i < d; ++i) {
    if (!(weights[i] > 0.0)) throw std::invalid_argument("weights must be positive");
  }
  if (weights.minCoeff() == weights.maxCoeff()) return type7_quantile(values, tau);

  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return values[a] < values[b]; });
  std::vector<double> sv(d), sw(d);
  for (int r = 0; r < d; ++r) {
    sv[r] = values[order[r]];
    sw[r] = weights[order[r]];
  }
  return interpolate(sv, weighted_position(sw, tau));
}

namespace {

struct PeerSample {
  std::vector<double> values;   // sorted ascending, ties by local index
  std::vector<double> weights;  // aligned with values
  std::vector<int> locals;      // aligned peer local indices
  bool equal_weights = true;
};

PeerSample gather_peers(const Network& net, const Eigen::VectorXd& outcomes, int s, int i) {
  if (s < 0 || s >= net.num_subnets()) throw std::invalid_argument("subnetwork out of range");
  const auto& sub = net.subnets[s];
  if (i < 0 || i >= sub.n) throw std::invalid_argument("agent not in network");
  if (sub.is_isolated(i)) {
    throw std::invalid_argument("peer quantile is undefined for an isolated agent");
  }
  const auto& nbrs = sub.adj[i];
  const int d = static_cast<int>(nbrs.size());
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  // Adjacency lists are sorted by local index, so a stable sort on the value
  // yields the (value, index) order.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return outcomes[net.global_index(s, nbrs[a].first)] <
           outcomes[net.global_index(s, nbrs[b].first)];
  });
  PeerSample out;
  out.values.resize(d);
  out.weights.resize(d);
  out.locals.resize(d);
  for (int r = 0; r < d; ++r) {
    const auto& [j, w] = nbrs[order[r]];
    out.values[r] = outcomes[net.global_index(s, j)];
    out.weights[r] = w;
    out.locals[r] = j;
    if (w != out.weights[0]) out.equal_weights = false;
  }
  return out;
}

QuantilePos peer_position(const PeerSample& ps, double tau) {
  const int d = static_cast<int>(ps.values.size());
  return ps.equal_weights ? type7_position(d, tau) : weighted_position(ps.weights, tau);
}

}  // namespace

double peer_quantile(const Network& net, const Eigen::VectorXd& outcomes, int s, int i,
                     double tau) {
  check_tau(tau);
  const PeerSample ps = gather_peers(net, outcomes, s, i);
  return interpolate(ps.values, peer_position(ps, tau));
}

QuantileDecomposition quantile_decomposition(const Network& net,
                                             const Eigen::VectorXd& outcomes, int s, int i,
                                             double tau) {
  check_tau(tau);
  const PeerSample ps = gather_peers(net, outcomes, s, i);
  const QuantilePos pos = peer_position(ps, tau);
  QuantileDecomposition dec;
  dec.pi = pos.pi;
  dec.omega = pos.omega;
  dec.j1 = ps.locals[pos.pi - 1];
  dec.j2 = pos.omega == 0.0 ? dec.j1 : ps.locals[pos.pi];
  return dec;
}

}  // namespace qpeer
