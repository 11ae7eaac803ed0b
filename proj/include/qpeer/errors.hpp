#pragma once

#include <stdexcept>

namespace qpeer {

// Estimation or solver failures (singular systems, divergence, out-of-range
// recovered parameters), as opposed to input validation errors.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qpeer
