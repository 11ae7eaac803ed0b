#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "qpeer/instruments.hpp"
#include "qpeer/rng.hpp"
#include "test_util.hpp"

using namespace qpeer;

namespace {

Dataset make_data(const Network& net, Rng& rng, int d1 = 2) {
  Dataset data;
  const int n = net.total_agents();
  data.y = testutil::random_vector(rng, n, 2.0);
  data.x.resize(n, d1);
  for (int c = 0; c < d1; ++c) data.x.col(c) = testutil::random_vector(rng, n);
  data.xbar = peer_average(net, data.x);
  data.iso.resize(n);
  for (int g = 0; g < n; ++g) {
    const auto [s, i] = net.locate(g);
    data.iso[g] = net.subnets[s].is_isolated(i);
  }
  return data;
}

}  // namespace

TEST_CASE("type1 rows cover the non-isolated agents with finite entries") {
  Rng rng(71);
  const Network net = testutil::random_network(rng, 3, 15, 5, false);
  const Dataset data = make_data(net, rng);
  const Partition part = classify(net);
  const InstrumentMatrix z = build_type1(net, data, part);
  CHECK(z.rows() == part.n_niso());
  CHECK(z.Z.allFinite());
  CHECK(z.cols() > 0);
  CHECK(static_cast<int>(z.labels.size()) == z.cols());
}

TEST_CASE("type1 instruments do not depend on outcomes") {
  Rng rng(73);
  const Network net = testutil::random_network(rng, 2, 12, 4, false);
  Dataset data = make_data(net, rng);
  const Partition part = classify(net);
  const InstrumentMatrix z1 = build_type1(net, data, part);
  // Shuffle the outcomes and rebuild.
  Dataset permuted = data;
  std::reverse(permuted.y.data(), permuted.y.data() + permuted.y.size());
  const InstrumentMatrix z2 = build_type1(net, permuted, part);
  REQUIRE(z1.cols() == z2.cols());
  CHECK((z1.Z - z2.Z).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constant covariate collapses to a single deduplicated column") {
  // Complete directed graph on 4 nodes: no missing sets at any distance.
  std::vector<std::tuple<int, int, double>> edges;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (i != j) edges.emplace_back(i, j, 1.0);
    }
  }
  const Network net = testutil::single_net(4, edges);
  Rng rng(79);
  Dataset data = make_data(net, rng, 2);
  data.x.col(1).setConstant(3.0);  // constant covariate
  data.xbar = peer_average(net, data.x);
  const Partition part = classify(net);
  const InstrumentMatrix z = build_type1(net, data, part, QuantileSpec::uniform(10), 3);
  // x2 and xbar2 quantiles are the constant everywhere: one column survives
  // out of their 60.
  int const_cols = 0;
  for (int c = 0; c < z.cols(); ++c) {
    if ((z.Z.col(c).array() == 3.0).all()) ++const_cols;
  }
  CHECK(const_cols == 1);
}

TEST_CASE("an agent with one distance-1 peer repeats that peer's covariate") {
  // 0 -> 1 only; 1 -> 2 so distance-2 differs.
  const Network net = testutil::single_net(3, {{0, 1, 1.0}, {1, 2, 1.0}});
  Rng rng(83);
  const Dataset data = make_data(net, rng, 1);
  const Partition part = classify(net);
  const InstrumentMatrix z =
      build_type1(net, data, part, QuantileSpec::uniform(5), 1);
  // Row of agent 0: every x1 level column equals x1 of agent 1.
  for (int c = 0; c < z.cols(); ++c) {
    if (z.labels[c].rfind("x1_d1", 0) == 0) {
      CHECK(z.Z(0, c) == data.x(1, 0));
    }
  }
}

TEST_CASE("undefined contextual values are dropped or masked") {
  // 0 -> 1, 1 isolated: xbar of agent 1 is undefined, so agent 0's xbar
  // quantile sample is empty.
  const Network net = testutil::single_net(2, {{0, 1, 1.0}});
  Rng rng(89);
  const Dataset data = make_data(net, rng, 1);
  const Partition part = classify(net);
  const InstrumentMatrix z = build_type1(net, data, part, QuantileSpec::uniform(3), 1);
  REQUIRE(z.rows() == 1);
  CHECK(z.row_missing[0] == 1);
  CHECK(z.Z.allFinite());
}

TEST_CASE("exactly-k distance sets can be empty and zero-fill") {
  const Network net = testutil::single_net(3, {{0, 1, 1.0}});  // no distance-2 peers
  Rng rng(97);
  const Dataset data = make_data(net, rng, 1);
  const Partition part = classify(net);
  const InstrumentMatrix z =
      build_type1(net, data, part, QuantileSpec::uniform(3), 2, /*exactly_k=*/true);
  CHECK(z.row_missing[0] == 1);
  CHECK(z.exactly_k);
}

TEST_CASE("type2 at tau 0 uses the minimum-outcome peer") {
  const Network net = testutil::single_net(3, {{0, 1, 1.0}, {0, 2, 1.0}});
  Rng rng(101);
  Dataset data = make_data(net, rng, 1);
  data.y[1] = 5.0;
  data.y[2] = -1.0;  // the minimum-outcome peer
  const Partition part = classify(net);
  const InstrumentMatrix z = build_type2(net, data, part, QuantileSpec({0.0, 1.0}));
  // First column is x1 at tau = 0 -> covariate of agent 2.
  REQUIRE(z.rows() == 1);
  CHECK(z.Z(0, 0) == data.x(2, 0));
}

TEST_CASE("type2 for a single-peer agent repeats that peer at every tau") {
  const Network net = testutil::single_net(2, {{0, 1, 1.0}});
  Rng rng(103);
  const Dataset data = make_data(net, rng, 2);
  const Partition part = classify(net);
  const InstrumentMatrix z = build_type2(net, data, part, QuantileSpec::uniform(4));
  for (int c = 0; c < z.cols(); ++c) {
    if (z.labels[c].find("_x1_") != std::string::npos ||
        z.labels[c].rfind("z2_x1", 0) == 0) {
      CHECK(z.Z(0, c) == data.x(1, 0));
    }
  }
}

TEST_CASE("type2 responds to outcome rank changes") {
  const Network net = testutil::single_net(3, {{0, 1, 1.0}, {0, 2, 1.0}});
  Rng rng(107);
  Dataset data = make_data(net, rng, 1);
  data.y[1] = 1.0;
  data.y[2] = 2.0;
  const Partition part = classify(net);
  const InstrumentMatrix before = build_type2(net, data, part, QuantileSpec({0.0, 1.0}));
  std::swap(data.y[1], data.y[2]);  // swap the peer ranks
  const InstrumentMatrix after = build_type2(net, data, part, QuantileSpec({0.0, 1.0}));
  // tau = 0 column flips from x of agent 1 (the old minimum) to agent 2.
  CHECK(before.Z(0, 0) == data.x(1, 0));
  CHECK(after.Z(0, 0) == data.x(2, 0));
}

TEST_CASE("type2 recomposition reproduces the outcome quantile") {
  Rng rng(109);
  const Network net = testutil::random_network(rng, 2, 10, 4, true);
  const Dataset data = make_data(net, rng, 1);
  const Partition part = classify(net);
  const QuantileSpec levels = QuantileSpec::uniform(4);
  for (int r = 0; r < part.n_niso(); ++r) {
    const auto [s, i] = net.locate(part.niso_rows[r]);
    for (double tau : levels.levels) {
      const auto dec = quantile_decomposition(net, data.y, s, i, tau);
      const double recomposed = (1.0 - dec.omega) * data.y[net.global_index(s, dec.j1)] +
                                dec.omega * data.y[net.global_index(s, dec.j2)];
      CHECK(recomposed ==
            doctest::Approx(peer_quantile(net, data.y, s, i, tau)).epsilon(1e-14));
    }
  }
}

TEST_CASE("combine concatenates and deduplicates") {
  Rng rng(113);
  const Network net = testutil::random_network(rng, 2, 10, 4, false);
  const Dataset data = make_data(net, rng);
  const Partition part = classify(net);
  const InstrumentMatrix z1 = build_type1(net, data, part, QuantileSpec::uniform(5), 2);
  const InstrumentMatrix z2 = build_type2(net, data, part, QuantileSpec::uniform(4));

  SUBCASE("self-combination is idempotent") {
    const InstrumentMatrix zz = combine(z1, z1);
    CHECK(zz.cols() == z1.cols());
    CHECK((zz.Z - z1.Z).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("empty second block is a no-op") {
    InstrumentMatrix empty;
    empty.Z.resize(z1.rows(), 0);
    const InstrumentMatrix zz = combine(z1, empty);
    CHECK(zz.cols() == z1.cols());
  }
  SUBCASE("distinct blocks concatenate") {
    const InstrumentMatrix zz = combine(z1, z2);
    CHECK(zz.cols() <= z1.cols() + z2.cols());
    CHECK(zz.cols() > z1.cols());
    CHECK(zz.kind == InstrumentMatrix::Kind::combined);
  }
  SUBCASE("row mismatch is rejected") {
    InstrumentMatrix bad = z2;
    bad.Z.conservativeResize(z2.rows() - 1, z2.cols());
    CHECK_THROWS_AS(combine(z1, bad), std::invalid_argument);
  }
}
