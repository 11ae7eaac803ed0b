#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "qpeer/instruments.hpp"
#include "qpeer/network.hpp"
#include "qpeer/quantile.hpp"

namespace qpeer {

// Removes subnetwork-by-group fixed effects: within each span (one
// subnetwork's rows of one group) column means are subtracted. Spans of
// size 1 become exact zero rows.
struct GroupDemeaner {
  std::vector<std::pair<int, int>> spans;

  void center(Eigen::Ref<Eigen::MatrixXd> m) const;
  Eigen::MatrixXd centered(Eigen::MatrixXd m) const { center(m); return m; }
  Eigen::VectorXd centered(Eigen::VectorXd v) const;
};

// Demeaned design arrays for the isolated and non-isolated groups. The
// endogenous block holds the peer-outcome quantiles at the estimation levels
// (or the single mean peer outcome for the LIM model).
struct DemeanedData {
  Partition part;
  QuantileSpec levels;  // empty for the LIM model
  bool lim = false;

  Eigen::VectorXd y_iso;
  Eigen::MatrixXd x_iso;
  Eigen::VectorXd y_niso;
  Eigen::MatrixXd q_niso;  // endogenous block
  Eigen::MatrixXd x_niso;
  Eigen::MatrixXd xbar_niso;
  GroupDemeaner dm_iso;
  GroupDemeaner dm_niso;

  int n_endo() const { return static_cast<int>(q_niso.cols()); }
};

DemeanedData demean(const Network& net, const Dataset& data, const Partition& part,
                    const QuantileSpec& levels);
DemeanedData demean_lim(const Network& net, const Dataset& data, const Partition& part);

struct OlsResult {
  Eigen::VectorXd beta1;
  Eigen::MatrixXd xtx;    // X_iso' X_iso
  Eigen::VectorXd resid;  // demeaned residuals
};

// OLS of demeaned isolated outcomes on demeaned isolated covariates. Errors
// if there are no isolated agents or the design is rank deficient (naming
// the collinear columns when names are supplied).
OlsResult ols_isolated(const DemeanedData& dm, const std::vector<std::string>& names = {});

// GMM / 2SLS fit of the non-isolated equation. The regressor matrix stacks
// (endogenous block, x' beta1, xbar); the instrument matrix stacks the
// demeaned exogenous regressors and the supplied instrument block.
struct GmmFit {
  Eigen::VectorXd psi;  // (lambda_tau..., 1 - lambda2, beta2_tilde...)
  int dt = 0;           // endogenous regressor count
  int n_exo = 0;        // leading exogenous columns of Z
  Eigen::MatrixXd Vhat;
  Eigen::MatrixXd Z;
  Eigen::MatrixXd W;
  Eigen::MatrixXd H;      // Vhat' Z W Z' Vhat
  Eigen::VectorXd resid;  // y - Vhat psi
  bool reduced_form_only = false;
  bool stability_warning = false;  // sum |lambda_tau_hat| >= 1

  Eigen::VectorXd lambda_tau() const { return psi.head(dt); }
  double one_minus_lambda2() const { return psi[dt]; }
  Eigen::VectorXd beta2_tilde() const { return psi.tail(psi.size() - dt - 1); }
};

// custom_w overrides the default two-stage-least-squares weighting
// W = (Z'Z)^{-1} (pseudo-inverted when Z has collinear columns).
GmmFit gmm_nonisolated(const DemeanedData& dm, const Eigen::VectorXd& beta1,
                       const InstrumentMatrix& instruments,
                       const Eigen::MatrixXd* custom_w = nullptr);

// Reduced-form-only variant for samples without isolated agents: x enters
// the regressor matrix directly and psi = (lambda_tau..., beta1_tilde...,
// beta2_tilde...). Conformity cannot be separated in this mode.
GmmFit gmm_reduced_form(const DemeanedData& dm, const InstrumentMatrix& instruments,
                        const Eigen::MatrixXd* custom_w = nullptr);

struct StructuralBlock {
  Eigen::VectorXd lambda_tau;
  double lambda2 = 0.0;
  Eigen::VectorXd theta_tau;
  double theta1 = 0.0;
  double theta2 = 0.0;
  Eigen::VectorXd beta2;
};

StructuralBlock recover_structural(const Eigen::VectorXd& beta1, const GmmFit& fit);

// Joint sandwich covariance of (beta1_hat, psi_hat), clustered by
// subnetwork, with the generated-regressor coupling between stages; plus
// delta-method covariance for the structural block ordered
// (lambda_tau..., lambda2, theta_tau..., theta1, theta2, beta2...).
struct JointVcov {
  Eigen::MatrixXd cov;    // (d1 + dim psi) square, order (beta1, psi)
  Eigen::VectorXd se_beta1;
  Eigen::VectorXd se_psi;
  Eigen::MatrixXd structural_cov;
  Eigen::VectorXd se_structural;
};

JointVcov joint_vcov(const DemeanedData& dm, const OlsResult& ols, const GmmFit& fit);

struct EstimateConfig {
  QuantileSpec levels = QuantileSpec::uniform(4);
  InstrumentMatrix::Kind instruments = InstrumentMatrix::Kind::type1;
  QuantileSpec type1_levels = QuantileSpec::uniform(10);
  int max_distance = 3;
  bool exactly_k = false;
  bool lim = false;
  bool reduced_form_only = false;  // allow samples without isolated agents
  std::optional<Eigen::MatrixXd> custom_w;
};

// Full pipeline state, kept for the diagnostic tests.
struct ModelFit {
  EstimateConfig config;
  DemeanedData dm;
  InstrumentMatrix instruments;
  OlsResult ols;
  GmmFit gmm;
  std::optional<StructuralBlock> structural;
  std::optional<JointVcov> vcov;
};

ModelFit fit_model(const Network& net, const Dataset& data, const EstimateConfig& config);

// Reuses previously built instruments (rows must follow part.niso_rows).
ModelFit fit_model(const Network& net, const Dataset& data, const EstimateConfig& config,
                   const Partition& part, const InstrumentMatrix& instruments);

std::string result_to_json(const ModelFit& fit, double kp_stat = -1.0, double sargan_p = -1.0);

// Flat labelled view of the interpretable coefficients
// (lambda block, lambda2, beta1, beta2) with their standard errors.
struct CoefView {
  std::vector<std::string> names;
  Eigen::VectorXd values;
  Eigen::VectorXd ses;
};
CoefView coefficient_view(const ModelFit& fit);

}  // namespace qpeer
