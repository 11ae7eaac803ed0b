#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "qpeer/equilibrium.hpp"
#include "qpeer/simulate.hpp"
#include "test_util.hpp"

using namespace qpeer;

TEST_CASE("identical seeds give bit-identical datasets") {
  DgpSpec spec = DgpSpec::preset('A', 99);
  spec.n_subnets = 4;
  const Simulated a = simulate_dataset(spec);
  const Simulated b = simulate_dataset(spec);
  CHECK((a.data.y - b.data.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.data.x - b.data.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.types.alpha - b.types.alpha).cwiseAbs().maxCoeff() == 0.0);

  DgpSpec other = spec;
  other.seed = 100;
  const Simulated c = simulate_dataset(other);
  CHECK((a.data.y - c.data.y).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("degree law point masses") {
  DgpSpec spec = DgpSpec::preset('A', 5);
  spec.n_subnets = 2;

  SUBCASE("all mass at zero isolates everyone") {
    spec.degree_law = Eigen::VectorXd::Zero(1);
    spec.degree_law[0] = 1.0;
    const Network net = gen_network(spec);
    CHECK(classify(net).n_iso() == net.total_agents());
  }
  SUBCASE("point mass at four gives four links each") {
    spec.degree_law = Eigen::VectorXd::Zero(5);
    spec.degree_law[4] = 1.0;
    const Network net = gen_network(spec);
    for (const auto& sub : net.subnets) {
      for (int i = 0; i < sub.n; ++i) CHECK(sub.out_degree(i) == 4);
    }
  }
  SUBCASE("support must fit in the subnetwork") {
    spec.subnet_size = 5;
    spec.degree_law = Eigen::VectorXd::Zero(7);
    spec.degree_law[6] = 1.0;
    CHECK_THROWS_AS(gen_network(spec), std::invalid_argument);
  }
}

TEST_CASE("calibrated degree law reproduces the target moments") {
  const Eigen::VectorXd law = default_degree_law();
  double mean = 0.0;
  for (int d = 0; d < law.size(); ++d) mean += d * law[d];
  CHECK(mean == doctest::Approx(3.47).epsilon(1e-6));
  CHECK(law[0] == doctest::Approx(0.22).epsilon(1e-9));
  CHECK(law.head(5).sum() == doctest::Approx(0.64).epsilon(1e-6));

  DgpSpec spec = DgpSpec::preset('A', 12345);
  const Network net = gen_network(spec);  // 50 x 50 agents
  double total_deg = 0.0;
  int zeros = 0;
  for (const auto& sub : net.subnets) {
    for (int i = 0; i < sub.n; ++i) {
      total_deg += sub.out_degree(i);
      if (sub.out_degree(i) == 0) ++zeros;
    }
  }
  const int n = net.total_agents();
  CHECK(std::abs(total_deg / n - 3.47) <= 0.15);
  CHECK(std::abs(static_cast<double>(zeros) / n - 0.22) <= 0.03);
}

TEST_CASE("covariate moments match the design") {
  DgpSpec spec = DgpSpec::preset('B', 777);
  const Network net = gen_network(spec);
  const Eigen::MatrixXd x = gen_covariates(spec, net);
  const int n = net.total_agents();
  const double m1 = x.col(0).mean();
  const double v1 = (x.col(0).array() - m1).square().sum() / (n - 1);
  CHECK(std::abs(m1) <= 4.0 / std::sqrt(n));
  CHECK(std::abs(v1 - 1.0) <= 0.2);
  CHECK(std::abs(x.col(1).mean() - 2.0) <= 4.0 * std::sqrt(2.0 / n));
  // Poisson draws are nonnegative integers.
  for (int g = 0; g < n; ++g) {
    CHECK(x(g, 1) >= 0.0);
    CHECK(x(g, 1) == std::floor(x(g, 1)));
  }
}

TEST_CASE("all-isolated network leaves xbar undefined everywhere") {
  DgpSpec spec = DgpSpec::preset('A', 3);
  spec.n_subnets = 2;
  spec.degree_law = Eigen::VectorXd::Zero(1);
  spec.degree_law[0] = 1.0;
  const Network net = gen_network(spec);
  const Eigen::MatrixXd x = gen_covariates(spec, net);
  const Dataset data = simulate_outcomes(spec, net, x);
  for (int g = 0; g < net.total_agents(); ++g) {
    CHECK(std::isnan(data.xbar(g, 0)));
    CHECK(std::isnan(data.xbar(g, 1)));
  }
}

TEST_CASE("noise-free outcomes without peer effects are the linear index") {
  DgpSpec spec = DgpSpec::preset('A', 21);
  spec.n_subnets = 3;
  spec.sigma = 1.0;
  spec.error_sampler = [](Rng&) { return 0.0; };  // exact zero errors
  spec.lambda_tau = Eigen::VectorXd::Zero(4);
  spec.lambda2 = 0.0;
  const Simulated sim = simulate_dataset(spec);
  for (int g = 0; g < sim.net.total_agents(); ++g) {
    double expect = spec.intercept + sim.data.x.row(g).dot(spec.beta1);
    if (!sim.data.iso[g]) expect += sim.data.xbar.row(g).dot(spec.beta2);
    CHECK(sim.data.y[g] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("simulated outcomes satisfy the fixed-point certificate") {
  for (char name : {'A', 'E', 'F'}) {
    DgpSpec spec = DgpSpec::preset(name, 31);
    spec.n_subnets = 3;
    const Simulated sim = simulate_dataset(spec);
    Eigen::VectorXd br;
    if (spec.family == DgpSpec::Family::quantile) {
      PeerEffectParams p;
      p.levels = spec.levels;
      p.lambda_tau = spec.lambda_tau;
      p.lambda2 = spec.lambda2;
      br = best_response(p, sim.net, sim.types, sim.data.y);
    } else {
      br = lim_best_response({spec.lim_lambda, spec.lambda2}, sim.net, sim.types, sim.data.y);
    }
    CHECK((br - sim.data.y).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("uniform quantile weights approximate the linear-in-means response") {
  // Dense degrees (>= 4) make the quantile average close to the mean.
  Rng rng(61);
  for (int rep = 0; rep < 10; ++rep) {
    qpeer::Subnetwork sub;
    sub.id = 0;
    sub.n = 20;
    sub.adj.resize(sub.n);
    sub.orig_ids.resize(sub.n);
    for (int i = 0; i < sub.n; ++i) sub.orig_ids[i] = i;
    for (int i = 0; i < sub.n; ++i) {
      const int deg = 4 + rng.uniform_int(5);
      for (int j : rng.sample_without_replacement(sub.n, deg, i)) {
        sub.adj[i].emplace_back(j, 1.0);
      }
      std::sort(sub.adj[i].begin(), sub.adj[i].end());
    }
    const Network net = testutil::make_network({sub});
    AgentTypes types{testutil::random_vector(rng, 20)};
    const Eigen::VectorXd y = testutil::random_vector(rng, 20, 2.0);

    const double lambda = 0.5;
    PeerEffectParams p;
    p.levels = QuantileSpec::uniform(4);
    p.lambda_tau = Eigen::VectorXd::Constant(4, lambda / 4.0);
    p.lambda2 = 0.0;
    const Eigen::VectorXd q_br = best_response(p, net, types, y);
    const Eigen::VectorXd l_br = lim_best_response({lambda, 0.0}, net, types, y);
    CHECK((q_br - l_br).cwiseAbs().maxCoeff() <= 0.05 * y.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("dgp JSON round trip") {
  DgpSpec spec = DgpSpec::preset('C', 17);
  spec.n_subnets = 7;
  const std::string text = spec.to_json();
  const auto path = std::filesystem::temp_directory_path() / "qpeer_dgp.json";
  {
    std::ofstream out(path);
    out << text;
  }
  const DgpSpec back = DgpSpec::from_json_file(path.string());
  CHECK(back.n_subnets == 7);
  CHECK(back.family == DgpSpec::Family::quantile);
  CHECK((back.lambda_tau - spec.lambda_tau).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.seed == 17);
  std::filesystem::remove(path);
}

TEST_CASE("presets carry the Monte Carlo parameterizations") {
  const DgpSpec a = DgpSpec::preset('A');
  CHECK(a.lambda_tau[1] == 0.05);
  CHECK(a.lambda_tau[3] == 0.3);
  CHECK(a.lambda2 == 0.2);
  CHECK(a.beta1[0] == -0.5);
  CHECK(a.intercept == 4.0);
  CHECK(a.sigma == 0.7);
  const DgpSpec f = DgpSpec::preset('F');
  CHECK(f.family == DgpSpec::Family::lim);
  CHECK(f.lim_lambda == 0.55);
  CHECK(f.lambda2 == 0.0);
  CHECK_THROWS_AS(DgpSpec::preset('Z'), std::invalid_argument);
}
