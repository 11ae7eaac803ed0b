#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "qpeer/network.hpp"
#include "qpeer/quantile.hpp"

namespace qpeer {

// Excluded-instrument block for the endogenous peer-outcome quantiles.
// Rows follow Partition::niso_rows; exact duplicate columns are removed.
struct InstrumentMatrix {
  enum class Kind { type1, type2, combined };

  Eigen::MatrixXd Z;
  Kind kind = Kind::type1;
  std::vector<std::string> labels;
  QuantileSpec levels;
  int max_distance = 0;
  bool exactly_k = false;
  // Rows where an empty or undefined peer set forced zero-filled entries.
  std::vector<uint8_t> row_missing;

  int rows() const { return static_cast<int>(Z.rows()); }
  int cols() const { return static_cast<int>(Z.cols()); }
};

// Quantiles of each covariate (x and xbar) over the distance-k peer sets,
// k = 1..max_distance, at fixed levels shared across all endogenous
// quantiles. Distance sets are unweighted; undefined xbar entries of
// isolated peers are dropped from the sample. Empty samples zero-fill and
// flag the row.
InstrumentMatrix build_type1(const Network& net, const Dataset& data, const Partition& part,
                             const QuantileSpec& levels = QuantileSpec::uniform(10),
                             int max_distance = 3, bool exactly_k = false);

// Covariate combinations of the two peers whose outcomes form each
// estimation-level quantile: (1 - omega) x_{j1} + omega x_{j2}, and the
// analogous xbar combination. Depends on observed outcome ranks. With
// max_distance > 1 the same construction is repeated on the distance-k peer
// sets (bracketing the quantile of outcomes within each set).
InstrumentMatrix build_type2(const Network& net, const Dataset& data, const Partition& part,
                             const QuantileSpec& estimation_levels, int max_distance = 1,
                             bool exactly_k = false);

// Column concatenation with exact-duplicate removal. Row counts must match.
InstrumentMatrix combine(const InstrumentMatrix& a, const InstrumentMatrix& b);

void write_instruments_csv(const InstrumentMatrix& z, const std::string& path);

}  // namespace qpeer
