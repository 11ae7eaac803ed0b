#pragma once

#include <Eigen/Dense>
#include <vector>

#include "qpeer/network.hpp"

namespace qpeer {

// Ordered, distinct quantile levels in [0, 1].
struct QuantileSpec {
  std::vector<double> levels;

  QuantileSpec() = default;
  explicit QuantileSpec(std::vector<double> lv) : levels(std::move(lv)) { validate(); }

  // k levels uniformly spaced on [0, 1], endpoints included (k >= 2).
  static QuantileSpec uniform(int k);

  void validate() const;
  int size() const { return static_cast<int>(levels.size()); }
};

// Interpolation position within a sorted sample: the quantile is
// (1 - omega) * y_(pi) + omega * y_(pi + 1), with 1-based rank pi.
struct QuantilePos {
  int pi = 1;
  double omega = 0.0;
};

// pi = floor(tau (d - 1)) + 1, omega the fractional remainder.
QuantilePos type7_position(int d, double tau);

// Position for a weighted sample; sorted_weights follow the value order.
// At tau = 1 the maximum is returned directly (pi = d, omega = 0), where the
// interpolation formula is undefined.
QuantilePos weighted_position(const std::vector<double>& sorted_weights, double tau);

// Type 7 sample quantile with linear interpolation.
double type7_quantile(Eigen::Ref<const Eigen::VectorXd> values, double tau);

// Weighted sample quantile; all weights must be positive. Equal weights
// reduce exactly to the Type 7 quantile and take that code path, so binary
// networks and unit-weight calls agree bit for bit with type7_quantile.
double weighted_quantile(Eigen::Ref<const Eigen::VectorXd> values,
                         Eigen::Ref<const Eigen::VectorXd> weights, double tau);

// The two peers and weight such that q = (1 - omega) y_{j1} + omega y_{j2}.
// j1 carries rank pi; j2 = j1 when omega = 0. Indices are local to the
// subnetwork. Ties are ranked by (outcome, local index), so results are
// reproducible.
struct QuantileDecomposition {
  int j1 = -1;
  int j2 = -1;
  double omega = 0.0;
  int pi = 1;
};

// tau-quantile of outcomes over the peers of (s, i), weighted by the
// outgoing link intensities. The agent must be non-isolated.
double peer_quantile(const Network& net, const Eigen::VectorXd& outcomes, int s, int i,
                     double tau);

QuantileDecomposition quantile_decomposition(const Network& net,
                                             const Eigen::VectorXd& outcomes, int s, int i,
                                             double tau);

}  // namespace qpeer
