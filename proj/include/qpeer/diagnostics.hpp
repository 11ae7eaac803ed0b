#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "qpeer/estimate.hpp"

namespace qpeer {

struct TestResult {
  std::string method;
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  bool defined = true;  // false when the reference distribution degenerates
  // method-specific payload
  Eigen::VectorXd delta;  // encompassing coefficient vector
  int rank_tested = 0;    // nominal rank / df before pseudo-inverse truncation
  int pinv_rank = 0;      // effective rank used for the degrees of freedom
};

// Encompassing test of Prop-style delta: does the specification of fit_a
// reproduce what the fit_b specification would estimate? The covariance
// accounts for the sampling error of beta1_hat and psi_hat_a. The rank-test
// variant coincides with the robust Wald form for a vector and only changes
// the method tag.
TestResult encompassing_test(const ModelFit& fit_a, const ModelFit& fit_b,
                             bool kp_style = false);

// Sargan-style exogeneity test of the Type II instruments, assuming the
// fit's own instruments are valid: U1 built on Z2' M1 resid with the
// variation explained by Z1 projected out.
TestResult sargan_type2(const ModelFit& fit1, const InstrumentMatrix& z2);

// Wald-style comparison of psi estimated under two instrument sets; the
// variance comes from the joint distribution of (beta1, psi1, psi2).
TestResult wald_type2(const ModelFit& fit1, const ModelFit& fit2);

// Rank Wald test for weak instruments (Kleibergen-Paap style, clustered by
// subnetwork): tests rank deficiency of the first-stage coefficient matrix
// after partialling out the exogenous regressors. The DemeanedData overload
// works directly on the first-stage arrays, so it stays usable when the
// structural fit itself is singular.
// cluster_by_subnetwork switches the moment variance from observation-level
// (default; required when the instrument count exceeds the cluster count)
// to subnetwork clusters.
TestResult weak_instrument_rank(const DemeanedData& dm, const InstrumentMatrix& instruments,
                                bool cluster_by_subnetwork = false);
TestResult weak_instrument_rank(const ModelFit& fit, bool cluster_by_subnetwork = false);

// Non-robust Cragg-Donald minimum-eigenvalue F, for cross-checking.
TestResult cragg_donald(const ModelFit& fit);

// Classical Sargan overidentification statistic.
TestResult sargan_overid(const ModelFit& fit);

void write_tests_csv(const std::vector<TestResult>& tests, const std::string& path);

}  // namespace qpeer
