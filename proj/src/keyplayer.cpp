#include "qpeer/keyplayer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "qpeer/stats.hpp"

namespace qpeer {

Eigen::VectorXd solve_model(const PeerModel& model, const Network& net, const AgentTypes& types,
                            const SolveOptions& opts) {
  if (const auto* q = std::get_if<PeerEffectParams>(&model)) {
    return solve_equilibrium(*q, net, types, opts);
  }
  return solve_lim_equilibrium(std::get<LimParams>(model), net, types, opts);
}

namespace {

// Single-subnetwork view so counterfactuals solve only the affected school.
Network isolate_subnet(const Subnetwork& sub) {
  Network net;
  net.subnets.push_back(sub);
  net.finalize();
  return net;
}

// Zero the i-th row and column of the adjacency.
Subnetwork remove_agent(const Subnetwork& sub, int i) {
  Subnetwork out = sub;
  out.adj[i].clear();
  for (int j = 0; j < out.n; ++j) {
    auto& nbrs = out.adj[j];
    nbrs.erase(std::remove_if(nbrs.begin(), nbrs.end(),
                              [i](const auto& e) { return e.first == i; }),
               nbrs.end());
  }
  return out;
}

struct SubnetProblem {
  Network base_net;
  AgentTypes types;
  Eigen::VectorXd alpha_iso;
  Eigen::VectorXd baseline;
};

SubnetProblem make_problem(const PeerModel& model, const Network& net, const AgentTypes& types,
                           const std::optional<Eigen::VectorXd>& alpha_isolated, int s,
                           const SolveOptions& opts) {
  const auto& sub = net.subnets[s];
  SubnetProblem prob;
  prob.base_net = isolate_subnet(sub);
  const int off = net.global_index(s, 0);
  prob.types.alpha = types.alpha.segment(off, sub.n);
  prob.alpha_iso =
      alpha_isolated ? alpha_isolated->segment(off, sub.n) : prob.types.alpha;
  prob.baseline = solve_model(model, prob.base_net, prob.types, opts);
  return prob;
}

double influence_within(const PeerModel& model, const SubnetProblem& prob, int i,
                        const SolveOptions& opts) {
  const Subnetwork& sub = prob.base_net.subnets[0];
  Network cf;
  cf.subnets.push_back(remove_agent(sub, i));
  cf.finalize();
  AgentTypes cf_types = prob.types;
  for (int j = 0; j < sub.n; ++j) {
    if (cf.subnets[0].is_isolated(j) && !sub.is_isolated(j)) {
      cf_types.alpha[j] = prob.alpha_iso[j];
    }
  }
  const Eigen::VectorXd y_cf = solve_model(model, cf, cf_types, opts);
  return (prob.baseline - y_cf).mean();
}

}  // namespace

double influence(const PeerModel& model, const Network& net, const AgentTypes& types, int s,
                 int i, const std::optional<Eigen::VectorXd>& alpha_isolated,
                 const SolveOptions& opts) {
  if (s < 0 || s >= net.num_subnets()) throw std::invalid_argument("subnetwork out of range");
  if (i < 0 || i >= net.subnets[s].n) throw std::invalid_argument("agent not in network");
  const SubnetProblem prob = make_problem(model, net, types, alpha_isolated, s, opts);
  return influence_within(model, prob, i, opts);
}

std::vector<Eigen::VectorXd> influence_all(const PeerModel& model, const Network& net,
                                           const AgentTypes& types,
                                           const std::optional<Eigen::VectorXd>& alpha_isolated,
                                           const SolveOptions& opts, int max_subnet_size,
                                           int threads) {
  const int S = net.num_subnets();
  std::vector<Eigen::VectorXd> out(S);
  std::vector<int> todo;
  for (int s = 0; s < S; ++s) {
    if (max_subnet_size > 0 && net.subnets[s].n > max_subnet_size) continue;
    todo.push_back(s);
  }
  const auto work = [&](int begin, int step) {
    for (size_t w = begin; w < todo.size(); w += step) {
      const int s = todo[w];
      const SubnetProblem prob = make_problem(model, net, types, alpha_isolated, s, opts);
      Eigen::VectorXd p(net.subnets[s].n);
      for (int i = 0; i < net.subnets[s].n; ++i) {
        p[i] = influence_within(model, prob, i, opts);
      }
      out[s] = std::move(p);
    }
  };
  const int nthreads = std::max(1, threads);
  if (nthreads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(work, t, nthreads);
    for (auto& t : pool) t.join();
  }
  return out;
}

ReconstructedTypes types_from_estimates(const Network& net, const Dataset& data,
                                        const StructuralBlock& structural,
                                        const QuantileSpec& levels, bool lim) {
  const double one_minus_l2 = 1.0 - structural.lambda2;
  if (!(one_minus_l2 > 0.0)) throw std::invalid_argument("conformity share out of range");
  const int n = net.total_agents();
  ReconstructedTypes out;
  out.types.alpha.resize(n);
  for (int s = 0; s < net.num_subnets(); ++s) {
    const auto& sub = net.subnets[s];
    for (int i = 0; i < sub.n; ++i) {
      const int g = net.global_index(s, i);
      if (sub.is_isolated(i)) {
        out.types.alpha[g] = data.y[g];
        continue;
      }
      double social = 0.0;
      if (lim) {
        double acc = 0.0, wsum = 0.0;
        for (const auto& [j, w] : sub.adj[i]) {
          acc += w * data.y[net.global_index(s, j)];
          wsum += w;
        }
        social = structural.lambda_tau[0] * (acc / wsum);
      } else {
        for (int t = 0; t < levels.size(); ++t) {
          social +=
              structural.lambda_tau[t] * peer_quantile(net, data.y, s, i, levels.levels[t]);
        }
      }
      out.types.alpha[g] = (data.y[g] - social) / one_minus_l2;
    }
  }
  // Isolated counterfactual type: strip the contextual term.
  out.alpha_isolated = out.types.alpha;
  for (int g = 0; g < n; ++g) {
    if (!data.iso[g]) {
      out.alpha_isolated[g] -= data.xbar.row(g).dot(structural.beta2);
    }
  }
  return out;
}

InfluenceReport rank_players(const Network& net, const std::vector<Eigen::VectorXd>& influences,
                             const std::vector<double>& baselines) {
  InfluenceReport rep;
  int total = 0;
  for (const auto& v : influences) total += static_cast<int>(v.size());
  rep.influence.resize(total);
  rep.rank_score.resize(total);
  rep.subnet_ids.reserve(total);
  rep.agent_ids.reserve(total);
  int at = 0;
  for (int s = 0; s < net.num_subnets(); ++s) {
    if (s >= static_cast<int>(influences.size()) || influences[s].size() == 0) continue;
    const auto& sub = net.subnets[s];
    const Eigen::VectorXd& p = influences[s];
    if (p.size() != sub.n) throw std::invalid_argument("influence vector size mismatch");
    rep.included_subnets.push_back(s);
    if (s < static_cast<int>(baselines.size())) rep.baseline_mean.push_back(baselines[s]);

    // Dense descending ranks; ties share a rank (stable by agent id).
    std::vector<int> order(sub.n);
    for (int i = 0; i < sub.n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
    std::vector<int> dense(sub.n);
    int r = 0;
    for (int k = 0; k < sub.n; ++k) {
      if (k > 0 && p[order[k]] != p[order[k - 1]]) ++r;
      dense[order[k]] = r;
    }
    const int n_ranks = r + 1;
    for (int i = 0; i < sub.n; ++i) {
      rep.subnet_ids.push_back(sub.id);
      rep.agent_ids.push_back(sub.orig_ids[i]);
      rep.influence[at] = p[i];
      rep.rank_score[at] =
          n_ranks == 1 ? 100.0
                       : 100.0 * static_cast<double>(n_ranks - 1 - dense[i]) / (n_ranks - 1);
      ++at;
    }
  }
  rep.influence.conservativeResize(at);
  rep.rank_score.conservativeResize(at);
  return rep;
}

RankComparison compare_rankings(const InfluenceReport& a, const InfluenceReport& b) {
  if (a.subnet_ids != b.subnet_ids || a.agent_ids != b.agent_ids) {
    throw std::invalid_argument("rank reports cover different agents");
  }
  RankComparison out;
  out.correlation = spearman(a.rank_score, b.rank_score);
  return out;
}

void write_influence_csv(const InfluenceReport& quantile_report,
                         const InfluenceReport* lim_report, const std::string& path) {
  if (lim_report && (lim_report->subnet_ids != quantile_report.subnet_ids ||
                     lim_report->agent_ids != quantile_report.agent_ids)) {
    throw std::invalid_argument("rank reports cover different agents");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(12);
  out << "subnet,agent,influence,rank_quantile";
  if (lim_report) out << ",influence_lim,rank_lim";
  out << '\n';
  for (size_t r = 0; r < quantile_report.subnet_ids.size(); ++r) {
    out << quantile_report.subnet_ids[r] << ',' << quantile_report.agent_ids[r] << ','
        << quantile_report.influence[r] << ',' << quantile_report.rank_score[r];
    if (lim_report) {
      out << ',' << lim_report->influence[r] << ',' << lim_report->rank_score[r];
    }
    out << '\n';
  }
}

}  // namespace qpeer
