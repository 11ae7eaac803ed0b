#include "qpeer/diagnostics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "qpeer/stats.hpp"

namespace qpeer {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// One estimating-equation block: per-cluster moments are M(span)' r(span).
struct MomentBlock {
  const Eigen::MatrixXd* m;
  const Eigen::VectorXd* r;
  const std::vector<std::pair<int, int>>* spans;
  const Eigen::MatrixXd* premult = nullptr;  // optional B block applied on the left
};

// Sum over clusters of w_s w_s', w_s stacking the (premultiplied) blocks.
Eigen::MatrixXd clustered_outer(const std::vector<MomentBlock>& blocks) {
  int dim = 0;
  size_t n_clusters = blocks.front().spans->size();
  for (const auto& b : blocks) {
    dim += static_cast<int>(b.premult ? b.premult->rows() : b.m->cols());
    if (b.spans->size() != n_clusters) {
      throw std::invalid_argument("cluster spans disagree across moment blocks");
    }
  }
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd w(dim);
  for (size_t s = 0; s < n_clusters; ++s) {
    int at = 0;
    for (const auto& b : blocks) {
      const auto [lo, hi] = (*b.spans)[s];
      const int cols = static_cast<int>(b.m->cols());
      Eigen::VectorXd u = Eigen::VectorXd::Zero(cols);
      if (hi > lo) u = b.m->middleRows(lo, hi - lo).transpose() * b.r->segment(lo, hi - lo);
      if (b.premult) {
        const int rows = static_cast<int>(b.premult->rows());
        w.segment(at, rows) = (*b.premult) * u;
        at += rows;
      } else {
        w.segment(at, cols) = u;
        at += cols;
      }
    }
    acc.noalias() += w * w.transpose();
  }
  return acc;
}

// Wald statistic x' Var(x)^+ x with the effective rank as df.
TestResult wald_from(const std::string& method, const Eigen::VectorXd& x,
                     const Eigen::MatrixXd& var, int rank_tested) {
  TestResult t;
  t.method = method;
  t.rank_tested = rank_tested;
  const PsdPinv pi = pinv_psd(var);
  t.pinv_rank = pi.rank;
  t.df = pi.rank;
  if (pi.rank == 0) {
    t.defined = false;
    t.statistic = 0.0;
    t.p_value = kNan;
    return t;
  }
  t.statistic = x.dot(pi.pinv * x);
  if (t.statistic < 0.0) t.statistic = 0.0;
  t.p_value = t.statistic == 0.0 ? 1.0 : chi2_survival(t.statistic, t.df);
  return t;
}

void require_two_stage(const ModelFit& fit, const char* where) {
  if (fit.gmm.reduced_form_only) {
    throw std::invalid_argument(std::string(where) + " requires the two-stage fit");
  }
}

// Residual-maker projection of cols(a) off cols(x), via rank-revealing QR
// so columns inside span(x) come out numerically zero even when x is
// collinear.
Eigen::MatrixXd partial_out(const Eigen::MatrixXd& a, const Eigen::MatrixXd& x) {
  if (x.cols() == 0) return a;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  return a - x * qr.solve(a);
}

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& a, bool inverse) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd& vals = es.eigenvalues();
  const double cutoff = 1e-12 * std::max(vals.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(vals.size());
  for (int i = 0; i < vals.size(); ++i) {
    if (vals[i] > cutoff) d[i] = inverse ? 1.0 / std::sqrt(vals[i]) : std::sqrt(vals[i]);
  }
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

TestResult encompassing_test(const ModelFit& fit_a, const ModelFit& fit_b, bool kp_style) {
  require_two_stage(fit_a, "encompassing_test");
  require_two_stage(fit_b, "encompassing_test");
  const auto& ga = fit_a.gmm;
  const auto& gb = fit_b.gmm;
  const int d1 = static_cast<int>(fit_a.ols.beta1.size());
  const int pa = static_cast<int>(ga.psi.size());
  const int pb = static_cast<int>(gb.psi.size());

  const Eigen::MatrixXd ba = ga.Vhat.transpose() * ga.Z * ga.W;  // pa x ka
  const Eigen::MatrixXd bb = gb.Vhat.transpose() * gb.Z * gb.W;  // pb x kb

  // delta_hat = H_b^{-1} B_b Z_b' resid_a
  const Eigen::VectorXd rhs = bb * (gb.Z.transpose() * ga.resid);
  Eigen::VectorXd delta = gb.H.ldlt().solve(rhs);

  // Third-stage residual: resid_a - Vhat_b delta.
  const Eigen::VectorXd resid3 = ga.resid - gb.Vhat * delta;

  const auto& dm = fit_a.dm;
  std::vector<MomentBlock> blocks;
  blocks.push_back({&dm.x_iso, &fit_a.ols.resid, &dm.part.iso_span, nullptr});
  blocks.push_back({&ga.Z, &ga.resid, &dm.part.niso_span, &ba});
  blocks.push_back({&gb.Z, &resid3, &dm.part.niso_span, &bb});
  const Eigen::MatrixXd var_w = clustered_outer(blocks);

  const int dim = d1 + pa + pb;
  Eigen::MatrixXd bf = Eigen::MatrixXd::Zero(dim, dim);
  bf.topLeftCorner(d1, d1) = fit_a.ols.xtx;
  const double coeff_a = ga.one_minus_lambda2();
  const double coeff_b = coeff_a + delta[gb.dt];  // adds delta's x'beta1 entry
  bf.block(d1, 0, pa, d1) = coeff_a * (ba * (ga.Z.transpose() * dm.x_niso));
  bf.block(d1, d1, pa, pa) = ga.H;
  bf.block(d1 + pa, 0, pb, d1) = coeff_b * (bb * (gb.Z.transpose() * dm.x_niso));
  bf.block(d1 + pa, d1, pb, pa) = bb * (gb.Z.transpose() * ga.Vhat);
  bf.block(d1 + pa, d1 + pa, pb, pb) = gb.H;

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(bf);
  const Eigen::MatrixXd cov = lu.solve(lu.solve(var_w).transpose()).transpose();
  const Eigen::MatrixXd var_delta = cov.bottomRightCorner(pb, pb);

  TestResult t = wald_from(kp_style ? "encompassing_kp" : "encompassing_wald", delta,
                           0.5 * (var_delta + var_delta.transpose()), pb);
  t.delta = delta;
  return t;
}

TestResult sargan_type2(const ModelFit& fit1, const InstrumentMatrix& z2) {
  require_two_stage(fit1, "sargan_type2");
  const auto& g1 = fit1.gmm;
  const auto& dm = fit1.dm;
  if (z2.rows() != static_cast<int>(dm.y_niso.size())) {
    throw std::invalid_argument("Type II instrument rows do not match the sample");
  }
  const Eigen::MatrixXd z2dm = dm.dm_niso.centered(z2.Z);
  // Remove the variation linearly explained by the (full) Z1 matrix, then
  // drop columns that lie inside span(Z1) relative to their original scale.
  const Eigen::MatrixXd z2t_all = partial_out(z2dm, g1.Z);
  std::vector<int> kept;
  for (int c = 0; c < z2t_all.cols(); ++c) {
    if (z2t_all.col(c).norm() > 1e-8 * std::max(1.0, z2dm.col(c).norm())) kept.push_back(c);
  }
  Eigen::MatrixXd z2t(z2t_all.rows(), kept.size());
  for (size_t c = 0; c < kept.size(); ++c) z2t.col(c) = z2t_all.col(kept[c]);
  const int k2 = static_cast<int>(z2t.cols());
  if (k2 == 0) {
    TestResult t;
    t.method = "sargan_type2";
    t.defined = false;
    t.statistic = 0.0;
    t.df = 0;
    t.p_value = kNan;
    return t;
  }

  // Rank of M1 Z2 sets the nominal degrees of freedom.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z2t);
  const int nominal_rank = static_cast<int>(qr.rank());

  const Eigen::VectorXd e_total = z2t.transpose() * g1.resid;

  const int d1 = static_cast<int>(fit1.ols.beta1.size());
  const int p = static_cast<int>(g1.psi.size());
  const Eigen::MatrixXd b1 = g1.Vhat.transpose() * g1.Z * g1.W;  // p x k1

  std::vector<MomentBlock> blocks;
  blocks.push_back({&dm.x_iso, &fit1.ols.resid, &dm.part.iso_span, nullptr});
  blocks.push_back({&g1.Z, &g1.resid, &dm.part.niso_span, &b1});
  blocks.push_back({&z2t, &g1.resid, &dm.part.niso_span, nullptr});
  const Eigen::MatrixXd var_w = clustered_outer(blocks);

  const int dim = d1 + p + k2;
  Eigen::MatrixXd bf = Eigen::MatrixXd::Zero(dim, dim);
  bf.topLeftCorner(d1, d1) = fit1.ols.xtx;
  const double c1 = g1.one_minus_lambda2();
  bf.block(d1, 0, p, d1) = c1 * (b1 * (g1.Z.transpose() * dm.x_niso));
  bf.block(d1, d1, p, p) = g1.H;
  bf.block(d1 + p, 0, k2, d1) = c1 * (z2t.transpose() * dm.x_niso);
  bf.block(d1 + p, d1, k2, p) = z2t.transpose() * g1.Vhat;
  bf.bottomRightCorner(k2, k2).setIdentity();

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(bf);
  const Eigen::MatrixXd cov = lu.solve(lu.solve(var_w).transpose()).transpose();
  const Eigen::MatrixXd var_e = cov.bottomRightCorner(k2, k2);

  TestResult t =
      wald_from("sargan_type2", e_total, 0.5 * (var_e + var_e.transpose()), nominal_rank);
  if (nominal_rank == 0) {
    t.defined = false;
    t.statistic = 0.0;
    t.p_value = kNan;
    t.df = 0;
  }
  return t;
}

TestResult wald_type2(const ModelFit& fit1, const ModelFit& fit2) {
  require_two_stage(fit1, "wald_type2");
  require_two_stage(fit2, "wald_type2");
  const auto& g1 = fit1.gmm;
  const auto& g2 = fit2.gmm;
  if (g1.psi.size() != g2.psi.size()) {
    throw std::invalid_argument("wald_type2 requires matching psi dimensions");
  }
  const int p = static_cast<int>(g1.psi.size());
  const int d1 = static_cast<int>(fit1.ols.beta1.size());
  const Eigen::VectorXd diff = g1.psi - g2.psi;

  const Eigen::MatrixXd b1 = g1.Vhat.transpose() * g1.Z * g1.W;
  const Eigen::MatrixXd b2 = g2.Vhat.transpose() * g2.Z * g2.W;

  const auto& dm = fit1.dm;
  std::vector<MomentBlock> blocks;
  blocks.push_back({&dm.x_iso, &fit1.ols.resid, &dm.part.iso_span, nullptr});
  blocks.push_back({&g1.Z, &g1.resid, &dm.part.niso_span, &b1});
  blocks.push_back({&g2.Z, &g2.resid, &dm.part.niso_span, &b2});
  const Eigen::MatrixXd var_w = clustered_outer(blocks);

  const int dim = d1 + 2 * p;
  Eigen::MatrixXd bf = Eigen::MatrixXd::Zero(dim, dim);
  bf.topLeftCorner(d1, d1) = fit1.ols.xtx;
  bf.block(d1, 0, p, d1) = g1.one_minus_lambda2() * (b1 * (g1.Z.transpose() * dm.x_niso));
  bf.block(d1, d1, p, p) = g1.H;
  bf.block(d1 + p, 0, p, d1) = g2.one_minus_lambda2() * (b2 * (g2.Z.transpose() * dm.x_niso));
  bf.block(d1 + p, d1 + p, p, p) = g2.H;

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(bf);
  const Eigen::MatrixXd cov = lu.solve(lu.solve(var_w).transpose()).transpose();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(p, dim);
  d.block(0, d1, p, p) = Eigen::MatrixXd::Identity(p, p);
  d.block(0, d1 + p, p, p) = -Eigen::MatrixXd::Identity(p, p);
  const Eigen::MatrixXd var_diff = d * cov * d.transpose();

  if (diff.isZero(0.0)) {
    TestResult t;
    t.method = "wald_type2";
    t.statistic = 0.0;
    t.df = p;
    t.rank_tested = p;
    t.pinv_rank = p;
    t.p_value = 1.0;
    return t;
  }
  return wald_from("wald_type2", diff, 0.5 * (var_diff + var_diff.transpose()), p);
}

namespace {

struct FirstStage {
  Eigen::MatrixXd q;  // endogenous block, exogenous partialled out
  Eigen::MatrixXd z;  // excluded instruments, exogenous partialled out
  const std::vector<std::pair<int, int>>* spans = nullptr;
  bool cluster_by_subnetwork = false;
};

FirstStage first_stage(const ModelFit& fit) {
  const auto& g = fit.gmm;
  const Eigen::MatrixXd exog = g.Z.leftCols(g.n_exo);
  const Eigen::MatrixXd zex = g.Z.rightCols(g.Z.cols() - g.n_exo);
  FirstStage fs;
  fs.q = partial_out(fit.dm.q_niso, exog);
  fs.z = partial_out(zex, exog);
  fs.spans = &fit.dm.part.niso_span;
  return fs;
}

FirstStage first_stage(const DemeanedData& dm, const InstrumentMatrix& instruments) {
  Eigen::MatrixXd exog(dm.x_niso.rows(), dm.x_niso.cols() + dm.xbar_niso.cols());
  exog << dm.x_niso, dm.xbar_niso;
  FirstStage fs;
  fs.q = partial_out(dm.q_niso, exog);
  fs.z = partial_out(dm.dm_niso.centered(instruments.Z), exog);
  fs.spans = &dm.part.niso_span;
  return fs;
}

TestResult kp_rank_core(const FirstStage& fs) {
  const int n = static_cast<int>(fs.q.rows());
  const int m = static_cast<int>(fs.q.cols());
  const int k = static_cast<int>(fs.z.cols());
  if (k < m) throw std::invalid_argument("fewer instruments than endogenous regressors");

  const Eigen::MatrixXd ztz = fs.z.transpose() * fs.z;
  const Eigen::MatrixXd g = pinv_psd(ztz).pinv;
  const Eigen::MatrixXd pi_hat = g * (fs.z.transpose() * fs.q);  // k x m
  const Eigen::MatrixXd resid = fs.q - fs.z * pi_hat;            // n x m

  // Canonical-correlation normalization, treated as fixed.
  const Eigen::MatrixXd a = sym_sqrt(ztz / n, false);
  const Eigen::MatrixXd bn = sym_sqrt(fs.q.transpose() * fs.q / n, true);
  const Eigen::MatrixXd theta = a * pi_hat * bn;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(theta, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const int q_rank = m - 1;  // null: rank <= m - 1 against full rank
  const auto& sv = svd.singularValues();
  if (sv[m - 1] <= 1e-8 * sv[0]) {
    // First stage is numerically rank deficient: the smallest-singular-value
    // block and its variance both vanish, so the Wald form degenerates.
    TestResult t;
    t.method = "kp_rank";
    t.statistic = 0.0;
    t.df = k - q_rank;
    t.rank_tested = k - q_rank;
    t.pinv_rank = 0;
    t.p_value = 1.0;
    return t;
  }
  const Eigen::MatrixXd u2 = svd.matrixU().rightCols(k - q_rank);
  const Eigen::VectorXd v2 = svd.matrixV().col(m - 1);

  const Eigen::VectorXd lambda_q = u2.transpose() * theta * v2;  // (k - q) vector
  const Eigen::VectorXd c = bn * v2;                             // m vector
  const Eigen::MatrixXd lhs = u2.transpose() * a * g;            // (k - q) x k

  // Robust variance of lambda_q from per-unit first-stage moments. With a
  // high-dimensional instrument block the subnetwork-clustered variance has
  // rank at most the cluster count, which degenerates the Wald form, so the
  // default sampling unit is the observation.
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(k - q_rank, k - q_rank);
  if (fs.cluster_by_subnetwork) {
    for (const auto& [lo, hi] : *fs.spans) {
      if (hi <= lo) continue;
      const Eigen::MatrixXd ms =
          fs.z.middleRows(lo, hi - lo).transpose() * resid.middleRows(lo, hi - lo);  // k x m
      const Eigen::VectorXd t = lhs * (ms * c);
      omega.noalias() += t * t.transpose();
    }
  } else {
    const Eigen::VectorXd rc = resid * c;  // n
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd t = lhs * (fs.z.row(i).transpose() * rc[i]);
      omega.noalias() += t * t.transpose();
    }
  }
  return wald_from("kp_rank", lambda_q, omega, k - q_rank);
}

}  // namespace

TestResult weak_instrument_rank(const DemeanedData& dm, const InstrumentMatrix& instruments,
                                bool cluster_by_subnetwork) {
  FirstStage fs = first_stage(dm, instruments);
  fs.cluster_by_subnetwork = cluster_by_subnetwork;
  return kp_rank_core(fs);
}

TestResult weak_instrument_rank(const ModelFit& fit, bool cluster_by_subnetwork) {
  FirstStage fs = first_stage(fit);
  fs.cluster_by_subnetwork = cluster_by_subnetwork;
  return kp_rank_core(fs);
}

TestResult cragg_donald(const ModelFit& fit) {
  const FirstStage fs = first_stage(fit);
  const int n = static_cast<int>(fs.q.rows());
  const int m = static_cast<int>(fs.q.cols());
  const int k = static_cast<int>(fs.z.cols());
  if (k < m) throw std::invalid_argument("fewer instruments than endogenous regressors");

  const Eigen::MatrixXd g = pinv_psd(fs.z.transpose() * fs.z).pinv;
  const Eigen::MatrixXd ztq = fs.z.transpose() * fs.q;
  const Eigen::MatrixXd qpq = ztq.transpose() * g * ztq;       // Q' P_Z Q
  const Eigen::MatrixXd qmq = fs.q.transpose() * fs.q - qpq;   // Q' M_Z Q
  const int dof = n - k - fit.gmm.n_exo;
  const Eigen::MatrixXd sigma_inv_half = sym_sqrt(qmq / std::max(dof, 1), true);
  const Eigen::MatrixXd gmat = sigma_inv_half * (qpq / k) * sigma_inv_half;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gmat);

  TestResult t;
  t.method = "cragg_donald";
  t.statistic = es.eigenvalues().minCoeff();
  t.df = 0;
  t.defined = false;  // reference values are tabulated, not chi-squared
  t.p_value = kNan;
  t.rank_tested = m;
  return t;
}

TestResult sargan_overid(const ModelFit& fit) {
  const auto& g = fit.gmm;
  const int n = static_cast<int>(g.resid.size());
  const PsdPinv ztz = pinv_psd(g.Z.transpose() * g.Z);
  const int df = ztz.rank - static_cast<int>(g.psi.size());
  TestResult t;
  t.method = "sargan_overid";
  t.rank_tested = df;
  if (df <= 0) {
    t.defined = false;
    t.statistic = 0.0;
    t.df = 0;
    t.p_value = kNan;
    return t;
  }
  const Eigen::VectorXd zte = g.Z.transpose() * g.resid;
  const double quad = zte.dot(ztz.pinv * zte);
  const double s2 = g.resid.squaredNorm() / n;
  t.statistic = quad / s2;
  t.df = df;
  t.pinv_rank = ztz.rank;
  t.p_value = chi2_survival(t.statistic, t.df);
  return t;
}

void write_tests_csv(const std::vector<TestResult>& tests, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "method,statistic,df,p_value,defined\n";
  out.precision(12);
  for (const auto& t : tests) {
    out << t.method << ',' << t.statistic << ',' << t.df << ',' << t.p_value << ','
        << (t.defined ? 1 : 0) << '\n';
  }
}

}  // namespace qpeer
