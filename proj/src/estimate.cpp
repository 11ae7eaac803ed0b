#include "qpeer/estimate.hpp"

#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "qpeer/errors.hpp"
#include "qpeer/stats.hpp"

namespace qpeer {

void GroupDemeaner::center(Eigen::Ref<Eigen::MatrixXd> m) const {
  for (const auto& [b, e] : spans) {
    if (e <= b) continue;
    const auto block = m.middleRows(b, e - b);
    const Eigen::RowVectorXd mean = block.colwise().mean();
    m.middleRows(b, e - b).rowwise() -= mean;
  }
}

Eigen::VectorXd GroupDemeaner::centered(Eigen::VectorXd v) const {
  Eigen::MatrixXd m = v;
  center(m);
  return m.col(0);
}

namespace {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(rows.size(), m.cols());
  for (size_t r = 0; r < rows.size(); ++r) out.row(r) = m.row(rows[r]);
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<int>& rows) {
  Eigen::VectorXd out(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) out[r] = v[rows[r]];
  return out;
}

DemeanedData demean_impl(const Network& net, const Dataset& data, const Partition& part,
                         const QuantileSpec* levels) {
  DemeanedData dm;
  dm.part = part;
  dm.lim = levels == nullptr;
  if (levels) dm.levels = *levels;
  dm.dm_iso.spans = part.iso_span;
  dm.dm_niso.spans = part.niso_span;

  // Endogenous block from the raw outcomes, before any centering.
  const int nn = part.n_niso();
  if (levels) {
    dm.q_niso.resize(nn, levels->size());
    for (int r = 0; r < nn; ++r) {
      const auto [s, i] = net.locate(part.niso_rows[r]);
      for (int t = 0; t < levels->size(); ++t) {
        dm.q_niso(r, t) = peer_quantile(net, data.y, s, i, levels->levels[t]);
      }
    }
  } else {
    dm.q_niso.resize(nn, 1);
    for (int r = 0; r < nn; ++r) {
      const auto [s, i] = net.locate(part.niso_rows[r]);
      const auto& sub = net.subnets[s];
      double acc = 0.0, wsum = 0.0;
      for (const auto& [j, w] : sub.adj[i]) {
        acc += w * data.y[net.global_index(s, j)];
        wsum += w;
      }
      dm.q_niso(r, 0) = acc / wsum;
    }
  }

  dm.y_iso = dm.dm_iso.centered(gather(data.y, part.iso_rows));
  dm.x_iso = dm.dm_iso.centered(gather_rows(data.x, part.iso_rows));
  dm.y_niso = dm.dm_niso.centered(gather(data.y, part.niso_rows));
  dm.x_niso = dm.dm_niso.centered(gather_rows(data.x, part.niso_rows));
  dm.xbar_niso = dm.dm_niso.centered(gather_rows(data.xbar, part.niso_rows));
  dm.dm_niso.center(dm.q_niso);
  return dm;
}

}  // namespace

DemeanedData demean(const Network& net, const Dataset& data, const Partition& part,
                    const QuantileSpec& levels) {
  levels.validate();
  return demean_impl(net, data, part, &levels);
}

DemeanedData demean_lim(const Network& net, const Dataset& data, const Partition& part) {
  return demean_impl(net, data, part, nullptr);
}

OlsResult ols_isolated(const DemeanedData& dm, const std::vector<std::string>& names) {
  if (dm.y_iso.size() == 0) {
    throw std::invalid_argument(
        "identification requires isolated agents; "
        "use reduced_form_only to estimate without them");
  }
  OlsResult out;
  out.xtx = dm.x_iso.transpose() * dm.x_iso;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(out.xtx);
  lu.setThreshold(1e-10);
  if (lu.rank() < out.xtx.rows()) {
    std::string msg = "isolated-agent design is rank deficient";
    if (!names.empty()) {
      // Column-pivoted QR exposes which columns fall outside the rank.
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(dm.x_iso);
      qr.setThreshold(1e-10);
      msg += "; collinear columns:";
      for (int c = qr.rank(); c < out.xtx.rows(); ++c) {
        const int col = qr.colsPermutation().indices()[c];
        msg += " " + (col < static_cast<int>(names.size()) ? names[col]
                                                           : std::to_string(col));
      }
    }
    throw NumericalError(msg);
  }
  out.beta1 = lu.solve(dm.x_iso.transpose() * dm.y_iso);
  out.resid = dm.y_iso - dm.x_iso * out.beta1;
  return out;
}

namespace {

struct AssembledGmm {
  Eigen::MatrixXd Vhat, Z, W, H;
  int n_exo = 0;
};

// Z = [x, xbar, instrument block], all demeaned; W = (Z'Z)^+ unless supplied.
AssembledGmm assemble(const DemeanedData& dm, const Eigen::MatrixXd& vhat,
                      const InstrumentMatrix& instruments, const Eigen::MatrixXd* custom_w) {
  AssembledGmm a;
  a.Vhat = vhat;
  const int n = static_cast<int>(dm.y_niso.size());
  if (instruments.rows() != n) {
    throw std::invalid_argument("instrument rows must match the non-isolated agent count");
  }
  a.n_exo = static_cast<int>(dm.x_niso.cols() + dm.xbar_niso.cols());
  a.Z.resize(n, a.n_exo + instruments.cols());
  a.Z << dm.x_niso, dm.xbar_niso, dm.dm_niso.centered(instruments.Z);
  if (custom_w) {
    if (custom_w->rows() != a.Z.cols() || custom_w->cols() != a.Z.cols()) {
      throw std::invalid_argument("custom weighting matrix has wrong dimensions");
    }
    a.W = *custom_w;
  } else {
    a.W = pinv_psd(a.Z.transpose() * a.Z).pinv;
  }
  const Eigen::MatrixXd ztv = a.Z.transpose() * a.Vhat;  // k x p
  a.H = ztv.transpose() * a.W * ztv;                     // p x p
  return a;
}

Eigen::VectorXd solve_gmm(const AssembledGmm& a, const Eigen::VectorXd& y) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a.H, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[sv.size() - 1] <= 1e-12 * sv[0]) {
    throw NumericalError("GMM moment matrix H is singular; smallest singular value " +
                         std::to_string(sv.size() ? sv[sv.size() - 1] : 0.0));
  }
  const Eigen::VectorXd rhs = a.Vhat.transpose() * a.Z * (a.W * (a.Z.transpose() * y));
  return svd.solve(rhs);
}

}  // namespace

GmmFit gmm_nonisolated(const DemeanedData& dm, const Eigen::VectorXd& beta1,
                       const InstrumentMatrix& instruments, const Eigen::MatrixXd* custom_w) {
  if (beta1.size() != dm.x_niso.cols()) {
    throw std::invalid_argument("beta1 dimension does not match the covariates");
  }
  const int n = static_cast<int>(dm.y_niso.size());
  const int dt = dm.n_endo();
  Eigen::MatrixXd vhat(n, dt + 1 + dm.xbar_niso.cols());
  vhat << dm.q_niso, dm.x_niso * beta1, dm.xbar_niso;

  const AssembledGmm a = assemble(dm, vhat, instruments, custom_w);
  GmmFit fit;
  fit.dt = dt;
  fit.n_exo = a.n_exo;
  fit.Vhat = a.Vhat;
  fit.Z = a.Z;
  fit.W = a.W;
  fit.H = a.H;
  fit.psi = solve_gmm(a, dm.y_niso);
  fit.resid = dm.y_niso - fit.Vhat * fit.psi;
  fit.stability_warning = fit.lambda_tau().cwiseAbs().sum() >= 1.0;
  return fit;
}

GmmFit gmm_reduced_form(const DemeanedData& dm, const InstrumentMatrix& instruments,
                        const Eigen::MatrixXd* custom_w) {
  const int n = static_cast<int>(dm.y_niso.size());
  const int dt = dm.n_endo();
  Eigen::MatrixXd vhat(n, dt + dm.x_niso.cols() + dm.xbar_niso.cols());
  vhat << dm.q_niso, dm.x_niso, dm.xbar_niso;

  const AssembledGmm a = assemble(dm, vhat, instruments, custom_w);
  GmmFit fit;
  fit.dt = dt;
  fit.n_exo = a.n_exo;
  fit.Vhat = a.Vhat;
  fit.Z = a.Z;
  fit.W = a.W;
  fit.H = a.H;
  fit.psi = solve_gmm(a, dm.y_niso);
  fit.resid = dm.y_niso - fit.Vhat * fit.psi;
  fit.reduced_form_only = true;
  fit.stability_warning = fit.psi.head(dt).cwiseAbs().sum() >= 1.0;
  return fit;
}

StructuralBlock recover_structural(const Eigen::VectorXd& beta1, const GmmFit& fit) {
  if (fit.reduced_form_only) {
    throw std::invalid_argument("structural recovery requires the isolated-agent stage");
  }
  const double m = fit.one_minus_lambda2();  // 1 - lambda2
  if (!(m > 0.0)) throw NumericalError("conformity share out of range (lambda2 >= 1)");
  StructuralBlock s;
  s.lambda_tau = fit.lambda_tau();
  s.lambda2 = 1.0 - m;
  s.theta_tau = s.lambda_tau / m;
  s.theta1 = (s.lambda_tau.sum() - s.lambda2) / m;
  s.theta2 = s.lambda2 / m;
  s.beta2 = fit.beta2_tilde() / m;
  (void)beta1;
  return s;
}

JointVcov joint_vcov(const DemeanedData& dm, const OlsResult& ols, const GmmFit& fit) {
  const int d1 = static_cast<int>(dm.x_iso.cols());
  const int p = static_cast<int>(fit.psi.size());
  const int k = static_cast<int>(fit.Z.cols());
  const int S = static_cast<int>(dm.part.iso_span.size());

  const Eigen::MatrixXd bg = fit.Vhat.transpose() * fit.Z * fit.W;  // p x k

  // Per-cluster moment contributions, already premultiplied by the B blocks.
  Eigen::MatrixXd var_w = Eigen::MatrixXd::Zero(d1 + p, d1 + p);
  for (int s = 0; s < S; ++s) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d1 + p);
    const auto [ib, ie] = dm.part.iso_span[s];
    if (ie > ib) {
      w.head(d1) = dm.x_iso.middleRows(ib, ie - ib).transpose() * ols.resid.segment(ib, ie - ib);
    }
    const auto [nb, ne] = dm.part.niso_span[s];
    if (ne > nb) {
      const Eigen::VectorXd zs =
          fit.Z.middleRows(nb, ne - nb).transpose() * fit.resid.segment(nb, ne - nb);
      w.tail(p) = bg * zs;
    }
    var_w.noalias() += w * w.transpose();
  }

  // BF = [[X'X, 0], [(1 - lambda2) B Z'X, H]]; reduced-form fits have no
  // generated-regressor coupling.
  Eigen::MatrixXd bf = Eigen::MatrixXd::Zero(d1 + p, d1 + p);
  bf.topLeftCorner(d1, d1) = ols.xtx;
  bf.bottomRightCorner(p, p) = fit.H;
  if (!fit.reduced_form_only && d1 > 0) {
    const Eigen::MatrixXd ztx = fit.Z.transpose() * dm.x_niso;  // k x d1
    bf.bottomLeftCorner(p, d1) = fit.one_minus_lambda2() * (bg * ztx);
  }

  JointVcov out;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(bf);
  out.cov = lu.solve(lu.solve(var_w).transpose()).transpose();
  // Symmetrize away factorization noise.
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  out.se_beta1 = out.cov.topLeftCorner(d1, d1).diagonal().cwiseMax(0.0).cwiseSqrt();
  out.se_psi = out.cov.bottomRightCorner(p, p).diagonal().cwiseMax(0.0).cwiseSqrt();

  if (!fit.reduced_form_only) {
    // Delta method for (lambda_tau..., lambda2, theta_tau..., theta1,
    // theta2, beta2...) as functions of psi.
    const int dt = fit.dt;
    const int d2 = p - dt - 1;
    const double m = fit.one_minus_lambda2();
    const Eigen::VectorXd lt = fit.lambda_tau();
    const Eigen::VectorXd b2t = fit.beta2_tilde();
    const int q = dt + 1 + dt + 2 + d2;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(q, d1 + p);
    const int psi0 = d1;
    int row = 0;
    for (int t = 0; t < dt; ++t) g(row++, psi0 + t) = 1.0;            // lambda_tau
    g(row++, psi0 + dt) = -1.0;                                       // lambda2 = 1 - m
    for (int t = 0; t < dt; ++t) {                                    // theta_tau
      g(row, psi0 + t) = 1.0 / m;
      g(row++, psi0 + dt) = -lt[t] / (m * m);
    }
    for (int t = 0; t < dt; ++t) g(row, psi0 + t) = 1.0 / m;          // theta1
    g(row++, psi0 + dt) = -(lt.sum() - 1.0) / (m * m);
    g(row++, psi0 + dt) = -1.0 / (m * m);                             // theta2
    for (int c = 0; c < d2; ++c) {                                    // beta2
      g(row, psi0 + dt + 1 + c) = 1.0 / m;
      g(row++, psi0 + dt) = -b2t[c] / (m * m);
    }
    out.structural_cov = g * out.cov * g.transpose();
    out.se_structural = out.structural_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  }
  return out;
}

ModelFit fit_model(const Network& net, const Dataset& data, const EstimateConfig& config) {
  const Partition part = classify(net);
  InstrumentMatrix z;
  switch (config.instruments) {
    case InstrumentMatrix::Kind::type1:
      z = build_type1(net, data, part, config.type1_levels, config.max_distance,
                      config.exactly_k);
      break;
    case InstrumentMatrix::Kind::type2:
      z = build_type2(net, data, part, config.levels);
      break;
    case InstrumentMatrix::Kind::combined:
      z = combine(build_type1(net, data, part, config.type1_levels, config.max_distance,
                              config.exactly_k),
                  build_type2(net, data, part, config.levels));
      break;
  }
  return fit_model(net, data, config, part, z);
}

ModelFit fit_model(const Network& net, const Dataset& data, const EstimateConfig& config,
                   const Partition& part, const InstrumentMatrix& instruments) {
  ModelFit fit;
  fit.config = config;
  fit.instruments = instruments;
  fit.dm = config.lim ? demean_lim(net, data, part) : demean(net, data, part, config.levels);
  const Eigen::MatrixXd* w = config.custom_w ? &*config.custom_w : nullptr;

  if (part.n_iso() == 0 && config.reduced_form_only) {
    fit.gmm = gmm_reduced_form(fit.dm, instruments, w);
    return fit;
  }
  fit.ols = ols_isolated(fit.dm, data.x_names);
  fit.gmm = gmm_nonisolated(fit.dm, fit.ols.beta1, instruments, w);
  fit.structural = recover_structural(fit.ols.beta1, fit.gmm);
  fit.vcov = joint_vcov(fit.dm, fit.ols, fit.gmm);
  return fit;
}

std::string result_to_json(const ModelFit& fit, double kp_stat, double sargan_p) {
  using nlohmann::json;
  auto vec = [](const Eigen::VectorXd& v) {
    json j = json::array();
    for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
  };
  auto mat = [](const Eigen::MatrixXd& m) {
    json j = json::array();
    for (int r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      j.push_back(row);
    }
    return j;
  };

  json j;
  j["model"] = fit.config.lim ? "lim" : "quantile";
  j["n_iso"] = fit.dm.part.n_iso();
  j["n_niso"] = fit.dm.part.n_niso();
  j["reduced_form_only"] = fit.gmm.reduced_form_only;
  j["stability_warning"] = fit.gmm.stability_warning;
  if (!fit.gmm.reduced_form_only) {
    j["beta1"] = vec(fit.ols.beta1);
    j["psi"]["lambda_tau"] = vec(fit.gmm.lambda_tau());
    j["psi"]["one_minus_lambda2"] = fit.gmm.one_minus_lambda2();
    j["psi"]["beta2_tilde"] = vec(fit.gmm.beta2_tilde());
  } else {
    j["psi"]["coefficients"] = vec(fit.gmm.psi);
  }
  if (fit.structural) {
    j["structural"]["lambda_tau"] = vec(fit.structural->lambda_tau);
    j["structural"]["lambda2"] = fit.structural->lambda2;
    j["structural"]["theta_tau"] = vec(fit.structural->theta_tau);
    j["structural"]["theta1"] = fit.structural->theta1;
    j["structural"]["theta2"] = fit.structural->theta2;
    j["structural"]["beta2"] = vec(fit.structural->beta2);
  }
  if (fit.vcov) {
    j["se"]["beta1"] = vec(fit.vcov->se_beta1);
    j["se"]["psi"] = vec(fit.vcov->se_psi);
    j["se"]["structural"] = vec(fit.vcov->se_structural);
    j["vcov"] = mat(fit.vcov->cov);
  }
  if (!fit.config.lim) j["config"]["levels"] = fit.config.levels.levels;
  j["config"]["instruments"] =
      fit.config.instruments == InstrumentMatrix::Kind::type1
          ? "type1"
          : (fit.config.instruments == InstrumentMatrix::Kind::type2 ? "type2" : "combined");
  j["config"]["type1_levels"] = fit.config.type1_levels.levels;
  j["config"]["max_distance"] = fit.config.max_distance;
  j["config"]["exactly_k"] = fit.config.exactly_k;
  j["config"]["weighting"] = fit.config.custom_w ? "custom" : "two_stage_ls";
  if (kp_stat >= 0.0) j["diagnostics"]["kp_stat"] = kp_stat;
  if (sargan_p >= 0.0) j["diagnostics"]["sargan_p"] = sargan_p;
  return j.dump(2);
}

CoefView coefficient_view(const ModelFit& fit) {
  CoefView v;
  if (fit.gmm.reduced_form_only || !fit.structural || !fit.vcov) {
    const int dt = fit.gmm.dt;
    for (int t = 0; t < dt; ++t) v.names.push_back("lambda_tau" + std::to_string(t + 1));
    for (int c = dt; c < fit.gmm.psi.size(); ++c) v.names.push_back("coef" + std::to_string(c));
    v.values = fit.gmm.psi;
    v.ses = Eigen::VectorXd::Constant(fit.gmm.psi.size(),
                                      std::numeric_limits<double>::quiet_NaN());
    return v;
  }
  const auto& s = *fit.structural;
  const auto& vc = *fit.vcov;
  const int dt = static_cast<int>(s.lambda_tau.size());
  const int d1 = static_cast<int>(fit.ols.beta1.size());
  const int d2 = static_cast<int>(s.beta2.size());
  const int total = dt + 1 + d1 + d2;
  v.values.resize(total);
  v.ses.resize(total);
  int at = 0;
  for (int t = 0; t < dt; ++t) {
    v.names.push_back(fit.config.lim ? "lambda" : "lambda_tau" + std::to_string(t + 1));
    v.values[at] = s.lambda_tau[t];
    v.ses[at++] = vc.se_psi[t];
  }
  v.names.push_back("lambda2");
  v.values[at] = s.lambda2;
  v.ses[at++] = vc.se_structural[dt];
  for (int c = 0; c < d1; ++c) {
    v.names.push_back("beta1_" + std::to_string(c + 1));
    v.values[at] = fit.ols.beta1[c];
    v.ses[at++] = vc.se_beta1[c];
  }
  const int beta2_off = dt + 1 + dt + 2;  // position in the structural block
  for (int c = 0; c < d2; ++c) {
    v.names.push_back("beta2_" + std::to_string(c + 1));
    v.values[at] = s.beta2[c];
    v.ses[at++] = vc.se_structural[beta2_off + c];
  }
  return v;
}

}  // namespace qpeer
