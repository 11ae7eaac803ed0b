#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qpeer/diagnostics.hpp"
#include "qpeer/estimate.hpp"
#include "qpeer/simulate.hpp"

namespace qpeer {

// One estimation column in the Monte Carlo tables.
struct McEstimationSpec {
  std::string name;
  EstimateConfig config;
};

// Test columns. Encompassing pairs refer to estimation specs by name.
struct McTestSpec {
  enum class Kind { encompassing, kp_rank, sargan_type2, wald_type2, sargan_overid };
  Kind kind;
  std::string name;
  std::string fit_a;  // estimation spec supplying residuals / instruments
  std::string fit_b;  // second fit for encompassing / wald
};

struct McConfig {
  DgpSpec dgp;
  int replications = 200;
  std::vector<McEstimationSpec> estimations;
  std::vector<McTestSpec> tests;
  uint64_t seed = 1;
  int threads = 1;

  // The paper's Monte Carlo layout: quantile fits with 3/4/5 uniform levels
  // under Z1 and Z1+Z2, a LIM fit, KP statistics, the Type II validity test
  // and both encompassing comparisons.
  static McConfig standard(const DgpSpec& dgp, int replications, uint64_t seed, int threads);
};

struct McEstimationSummary {
  std::string name;
  std::vector<std::string> coef_names;
  Eigen::VectorXd mean;
  Eigen::VectorXd empirical_sd;
  Eigen::VectorXd mean_asymptotic_se;
  int n_used = 0;
};

struct McTestSummary {
  std::string name;
  double mean_stat = 0.0;
  double sd_stat = 0.0;
  double reject_05 = 0.0;
  double reject_10 = 0.0;
  int n_defined = 0;
  int n_used = 0;
};

struct McReport {
  std::vector<McEstimationSummary> estimations;
  std::vector<McTestSummary> tests;
  int replications = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
};

McReport run_montecarlo(const McConfig& config);

void write_estimation_csv(const McReport& report, const std::string& path);
void write_test_csv(const McReport& report, const std::string& path);

}  // namespace qpeer
