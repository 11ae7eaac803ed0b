#pragma once

#include <Eigen/Dense>

namespace qpeer {

// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
double gamma_q(double a, double x);

// Upper-tail probability of a chi-squared variate with df degrees of freedom.
double chi2_survival(double x, double df);

struct PsdPinv {
  Eigen::MatrixXd pinv;
  int rank = 0;
  double max_eigenvalue = 0.0;
};

// Moore-Penrose pseudoinverse of a symmetric PSD matrix. Eigenvalues below
// rtol * max_eigenvalue are treated as zero; rank reports the count kept.
PsdPinv pinv_psd(const Eigen::MatrixXd& a, double rtol = 1e-10);

// Ranks with ties replaced by midranks (1-based averages).
Eigen::VectorXd midranks(const Eigen::VectorXd& v);

// Spearman rank correlation (midranks for ties).
double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace qpeer
