#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "qpeer/errors.hpp"
#include "qpeer/estimate.hpp"
#include "qpeer/montecarlo.hpp"
#include "qpeer/simulate.hpp"
#include "test_util.hpp"

using namespace qpeer;

namespace {

Simulated noiseless_dgp(char name, uint64_t seed, int subnets = 6) {
  DgpSpec spec = DgpSpec::preset(name, seed);
  spec.n_subnets = subnets;
  spec.error_sampler = [](Rng&) { return 0.0; };
  return simulate_dataset(spec);
}

}  // namespace

TEST_CASE("group demeaning removes group means within subnetworks") {
  SUBCASE("identical isolated outcomes demean to zero") {
    const Network net = testutil::single_net(3, {{0, 1, 1.0}});  // 1, 2 isolated
    Dataset data;
    data.y = Eigen::Vector3d(5.0, 2.0, 2.0);
    data.x = Eigen::MatrixXd::Zero(3, 1);
    data.x << 1.0, 2.0, 3.0;
    data.xbar = peer_average(net, data.x);
    data.iso = {0, 1, 1};
    const DemeanedData dm = demean(net, data, classify(net), QuantileSpec({0.5}));
    CHECK(dm.y_iso.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("a singleton group becomes an exact zero row") {
    const Network net = testutil::single_net(2, {{0, 1, 1.0}});  // one isolated agent
    Dataset data;
    data.y = Eigen::Vector2d(3.0, 7.0);
    data.x = Eigen::MatrixXd(2, 1);
    data.x << 1.0, 4.0;
    data.xbar = peer_average(net, data.x);
    data.iso = {0, 1};
    const DemeanedData dm = demean(net, data, classify(net), QuantileSpec({0.5}));
    CHECK(dm.y_iso[0] == 0.0);
    CHECK(dm.x_iso(0, 0) == 0.0);
    CHECK(dm.y_niso[0] == 0.0);
  }
  SUBCASE("column sums vanish per subnetwork and group") {
    Rng rng(211);
    const Network net = testutil::random_network(rng, 4, 12, 4, false);
    const int n = net.total_agents();
    Dataset data;
    data.y = testutil::random_vector(rng, n, 2.0);
    data.x.resize(n, 2);
    data.x.col(0) = testutil::random_vector(rng, n);
    data.x.col(1) = testutil::random_vector(rng, n);
    data.xbar = peer_average(net, data.x);
    data.iso.resize(n);
    for (int g = 0; g < n; ++g) {
      const auto [s, i] = net.locate(g);
      data.iso[g] = net.subnets[s].is_isolated(i);
    }
    const Partition part = classify(net);
    const DemeanedData dm = demean(net, data, part, QuantileSpec::uniform(3));
    for (int s = 0; s < net.num_subnets(); ++s) {
      const auto [ib, ie] = part.iso_span[s];
      if (ie > ib) {
        CHECK(std::abs(dm.y_iso.segment(ib, ie - ib).sum()) < 1e-10);
        CHECK(dm.x_iso.middleRows(ib, ie - ib).colwise().sum().cwiseAbs().maxCoeff() < 1e-10);
      }
      const auto [nb, ne] = part.niso_span[s];
      if (ne > nb) {
        CHECK(std::abs(dm.y_niso.segment(nb, ne - nb).sum()) < 1e-10);
        CHECK(dm.q_niso.middleRows(nb, ne - nb).colwise().sum().cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }
}

TEST_CASE("isolated-agent OLS recovers a noiseless linear index exactly") {
  const Simulated sim = noiseless_dgp('A', 3001);
  const DemeanedData dm = demean(sim.net, sim.data, classify(sim.net), QuantileSpec::uniform(4));
  const OlsResult ols = ols_isolated(dm);
  CHECK(std::abs(ols.beta1[0] - (-0.5)) < 1e-9);
  CHECK(std::abs(ols.beta1[1] - 1.0) < 1e-9);
}

TEST_CASE("estimation without isolated agents") {
  // Ring-with-chords subnetworks: nobody is isolated.
  std::vector<qpeer::Subnetwork> subs;
  for (int s = 0; s < 6; ++s) {
    std::vector<std::tuple<int, int, double>> edges;
    for (int i = 0; i < 8; ++i) {
      edges.emplace_back(i, (i + 1) % 8, 1.0);
      edges.emplace_back(i, (i + 3) % 8, 1.0);
    }
    subs.push_back(testutil::make_subnet(s, 8, edges));
  }
  const Network net = testutil::make_network(std::move(subs));
  const int n = net.total_agents();
  Rng rng(223);
  Dataset data;
  data.y = testutil::random_vector(rng, n);
  data.x.resize(n, 2);
  data.x.col(0) = testutil::random_vector(rng, n);
  data.x.col(1) = testutil::random_vector(rng, n);
  data.xbar = peer_average(net, data.x);
  data.iso.assign(n, 0);

  EstimateConfig cfg;
  cfg.levels = QuantileSpec({0.0, 1.0});
  cfg.type1_levels = QuantileSpec::uniform(4);
  cfg.max_distance = 1;
  CHECK_THROWS_WITH_AS(fit_model(net, data, cfg), doctest::Contains("isolated"),
                       std::invalid_argument);
  cfg.reduced_form_only = true;
  const ModelFit fit = fit_model(net, data, cfg);
  CHECK(fit.gmm.reduced_form_only);
  CHECK(fit.gmm.psi.allFinite());
}

TEST_CASE("rank-deficient isolated design names the collinear column") {
  const Network net = testutil::single_net(4, {{0, 1, 1.0}});
  Dataset data;
  data.y = Eigen::Vector4d(1.0, 2.0, 3.0, 4.0);
  data.x.resize(4, 2);
  data.x.col(0) << 1.0, 2.0, 3.0, 4.0;
  data.x.col(1) = 2.0 * data.x.col(0);  // collinear
  data.x_names = {"x1", "x2"};
  data.xbar = peer_average(net, data.x);
  data.iso = {0, 1, 1, 1};
  const DemeanedData dm = demean(net, data, classify(net), QuantileSpec({0.5}));
  CHECK_THROWS_AS(ols_isolated(dm, data.x_names), NumericalError);
}

TEST_CASE("noiseless exactly-fitting system returns exact psi") {
  const Simulated sim = noiseless_dgp('A', 3003);
  EstimateConfig cfg;  // defaults: 4 levels, type1
  const ModelFit fit = fit_model(sim.net, sim.data, cfg);
  const DgpSpec spec = DgpSpec::preset('A');
  CHECK((fit.gmm.lambda_tau() - spec.lambda_tau).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(std::abs(fit.structural->lambda2 - 0.2) < 1e-7);
  CHECK((fit.structural->beta2 - spec.beta2).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(fit.gmm.resid.cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("GMM first-order conditions hold at the solution") {
  DgpSpec spec = DgpSpec::preset('B', 3005);
  spec.n_subnets = 10;
  const Simulated sim = simulate_dataset(spec);
  const ModelFit fit = fit_model(sim.net, sim.data, EstimateConfig{});
  const Eigen::VectorXd foc = fit.gmm.Vhat.transpose() * fit.gmm.Z *
                              (fit.gmm.W * (fit.gmm.Z.transpose() * fit.gmm.resid));
  CHECK(foc.cwiseAbs().maxCoeff() <= 1e-8 * std::max(1.0, fit.dm.y_niso.cwiseAbs().maxCoeff()));
}

TEST_CASE("exactly identified GMM equals the IV closed form") {
  // One covariate, levels {0, 1}: psi has 4 entries and the instrument
  // matrix [x, xbar, min peer x, max peer x] has exactly 4 columns.
  std::vector<qpeer::Subnetwork> subs;
  for (int s = 0; s < 30; ++s) {
    subs.push_back(testutil::make_subnet(s, 6,
                                         {{0, 1, 1.0},
                                          {0, 2, 1.0},
                                          {0, 3, 1.0},
                                          {1, 0, 1.0},
                                          {1, 2, 1.0},
                                          {1, 4, 1.0},
                                          {2, 0, 1.0},
                                          {2, 1, 1.0},
                                          {2, 5, 1.0}}));
  }
  const Network net = testutil::make_network(std::move(subs));
  const int n = net.total_agents();
  Rng rng(3007);
  Dataset data;
  data.y = testutil::random_vector(rng, n);
  data.x = testutil::random_vector(rng, n);
  data.xbar = peer_average(net, data.x);
  data.iso.resize(n);
  for (int g = 0; g < n; ++g) {
    const auto [sg, ig] = net.locate(g);
    data.iso[g] = net.subnets[sg].is_isolated(ig);
  }
  const Partition part = classify(net);

  InstrumentMatrix z;
  z.Z.resize(part.n_niso(), 2);
  for (int r = 0; r < part.n_niso(); ++r) {
    const auto [sg, ig] = net.locate(part.niso_rows[r]);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& [j, w] : net.subnets[sg].adj[ig]) {
      const double v = data.x(net.global_index(sg, j), 0);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    z.Z(r, 0) = lo;
    z.Z(r, 1) = hi;
  }
  z.labels = {"min_peer_x", "max_peer_x"};

  const DemeanedData dm = demean(net, data, part, QuantileSpec({0.0, 1.0}));
  const OlsResult ols = ols_isolated(dm);
  const GmmFit gmm = gmm_nonisolated(dm, ols.beta1, z);
  REQUIRE(gmm.Z.cols() == gmm.psi.size());
  const Eigen::MatrixXd ztv = gmm.Z.transpose() * gmm.Vhat;
  const Eigen::VectorXd direct = ztv.partialPivLu().solve(gmm.Z.transpose() * dm.y_niso);
  CHECK((gmm.psi - direct).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("structural mapping") {
  SUBCASE("lambda2 = 0 is the identity") {
    GmmFit fit;
    fit.dt = 2;
    fit.psi.resize(5);
    fit.psi << 0.1, 0.3, 1.0, -0.2, 0.6;
    const StructuralBlock s = recover_structural(Eigen::Vector2d(1, 1), fit);
    CHECK(s.lambda2 == 0.0);
    CHECK(s.theta_tau[0] == doctest::Approx(0.1));
    CHECK(s.beta2[1] == doctest::Approx(0.6));
  }
  SUBCASE("hand-computed theta values") {
    GmmFit fit;
    fit.dt = 1;
    fit.psi.resize(2);
    fit.psi << 0.3, 0.8;  // lambda = 0.3, 1 - lambda2 = 0.8
    const StructuralBlock s = recover_structural(Eigen::VectorXd::Zero(0), fit);
    CHECK(s.lambda2 == doctest::Approx(0.2));
    CHECK(s.theta_tau[0] == doctest::Approx(0.375));
    CHECK(s.theta2 == doctest::Approx(0.25));
  }
  SUBCASE("theta-to-lambda round trip") {
    Rng rng(251);
    for (int rep = 0; rep < 200; ++rep) {
      const int dt = 1 + rng.uniform_int(4);
      Eigen::VectorXd t1(dt), t2(dt);
      for (int t = 0; t < dt; ++t) {
        t1[t] = rng.uniform() - 0.4;
        t2[t] = 0.5 * rng.uniform();
      }
      const double denom = 1.0 + t2.sum();
      const Eigen::VectorXd lam1 = t1 / denom;
      const Eigen::VectorXd lam2 = t2 / denom;
      GmmFit fit;
      fit.dt = dt;
      fit.psi.resize(dt + 1);
      fit.psi.head(dt) = lam1 + lam2;
      fit.psi[dt] = 1.0 - lam2.sum();
      const StructuralBlock s = recover_structural(Eigen::VectorXd::Zero(0), fit);
      CHECK((s.theta_tau - (t1 + t2)).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(std::abs(s.theta1 - t1.sum()) < 1e-10);
      CHECK(std::abs(s.theta2 - t2.sum()) < 1e-10);
    }
  }
  SUBCASE("conformity share at or above one is rejected") {
    GmmFit fit;
    fit.dt = 1;
    fit.psi.resize(2);
    fit.psi << 0.3, 0.0;
    CHECK_THROWS_AS(recover_structural(Eigen::VectorXd::Zero(0), fit), NumericalError);
  }
}

TEST_CASE("single replication of DGP A lands near the truth") {
  DgpSpec spec = DgpSpec::preset('A', 3011);
  const Simulated sim = simulate_dataset(spec);
  const ModelFit fit = fit_model(sim.net, sim.data, EstimateConfig{});
  const Eigen::Vector4d truth(0.0, 0.05, 0.2, 0.3);
  CHECK((fit.gmm.lambda_tau() - truth).cwiseAbs().maxCoeff() < 0.15);
  CHECK(std::abs(fit.structural->lambda2 - 0.2) < 0.1);
  CHECK(std::abs(fit.ols.beta1[0] + 0.5) < 0.1);
  CHECK(std::abs(fit.ols.beta1[1] - 1.0) < 0.1);
  REQUIRE(fit.vcov.has_value());
  CHECK(fit.vcov->se_psi.allFinite());
  CHECK(fit.vcov->se_psi.minCoeff() > 0.0);
}

TEST_CASE("joint covariance is symmetric positive semidefinite") {
  DgpSpec spec = DgpSpec::preset('C', 3013);
  spec.n_subnets = 15;
  const Simulated sim = simulate_dataset(spec);
  const ModelFit fit = fit_model(sim.net, sim.data, EstimateConfig{});
  const Eigen::MatrixXd& cov = fit.vcov->cov;
  CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("scaling outcomes leaves the lambda block invariant") {
  DgpSpec spec = DgpSpec::preset('B', 3017);
  spec.n_subnets = 12;
  const Simulated sim = simulate_dataset(spec);
  const ModelFit base = fit_model(sim.net, sim.data, EstimateConfig{});

  Simulated scaled = sim;
  scaled.data.y *= 3.0;
  const ModelFit big = fit_model(scaled.net, scaled.data, EstimateConfig{});

  CHECK((base.gmm.lambda_tau() - big.gmm.lambda_tau()).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(std::abs(base.structural->lambda2 - big.structural->lambda2) < 1e-8);
  // beta blocks scale with the outcomes.
  CHECK((3.0 * base.ols.beta1 - big.ols.beta1).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("lim estimator behaves on lim data") {
  SUBCASE("DGP F recovery") {
    DgpSpec spec = DgpSpec::preset('F', 3019);
    const Simulated sim = simulate_dataset(spec);
    EstimateConfig cfg;
    cfg.lim = true;
    const ModelFit fit = fit_model(sim.net, sim.data, cfg);
    CHECK(std::abs(fit.structural->lambda_tau[0] - 0.55) < 0.06);
    CHECK(std::abs(fit.structural->lambda2) < 0.08);
  }
  SUBCASE("zero peer effects estimate near zero") {
    DgpSpec spec = DgpSpec::preset('F', 3023);
    spec.lim_lambda = 0.0;
    spec.n_subnets = 30;
    const Simulated sim = simulate_dataset(spec);
    EstimateConfig cfg;
    cfg.lim = true;
    const ModelFit fit = fit_model(sim.net, sim.data, cfg);
    CHECK(std::abs(fit.structural->lambda_tau[0]) < 0.08);
  }
}

TEST_CASE("estimates concentrate as the subnetwork count grows") {
  const Eigen::VectorXd truth = (Eigen::VectorXd(5) << 0.0, 0.05, 0.2, 0.3, 0.2).finished();
  std::vector<double> mse;
  for (int subnets : {25, 50, 100}) {
    DgpSpec dgp = DgpSpec::preset('A', 5000 + subnets);
    dgp.n_subnets = subnets;
    McConfig mc;
    mc.dgp = dgp;
    mc.replications = 50;
    mc.seed = 400 + subnets;
    mc.threads = 8;
    mc.estimations.push_back({"q4_z1", EstimateConfig{}});
    const McReport report = run_montecarlo(mc);
    REQUIRE(report.failures == 0);
    const auto& est = report.estimations[0];
    double acc = 0.0;
    for (int c = 0; c < 5; ++c) {
      const double bias = est.mean[c] - truth[c];
      acc += bias * bias + est.empirical_sd[c] * est.empirical_sd[c];
    }
    mse.push_back(acc);
  }
  CHECK(mse[1] < mse[0]);
  CHECK(mse[2] < mse[1]);
}
