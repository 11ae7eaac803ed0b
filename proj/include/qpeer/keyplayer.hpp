#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "qpeer/equilibrium.hpp"
#include "qpeer/estimate.hpp"
#include "qpeer/network.hpp"

namespace qpeer {

// Either peer-effect parameterization drives the counterfactual solves.
using PeerModel = std::variant<PeerEffectParams, LimParams>;

Eigen::VectorXd solve_model(const PeerModel& model, const Network& net, const AgentTypes& types,
                            const SolveOptions& opts = {});

// Mean outcome change over subnetwork s when agent (s, i) is fully isolated
// (row and column zeroed). Agents isolated by the removal switch to
// alpha_isolated when provided (alpha otherwise).
double influence(const PeerModel& model, const Network& net, const AgentTypes& types, int s,
                 int i, const std::optional<Eigen::VectorXd>& alpha_isolated = std::nullopt,
                 const SolveOptions& opts = {});

// Influence of every agent, one vector per subnetwork. Subnetworks larger
// than max_subnet_size are skipped (empty vector) when the cap is positive.
std::vector<Eigen::VectorXd> influence_all(
    const PeerModel& model, const Network& net, const AgentTypes& types,
    const std::optional<Eigen::VectorXd>& alpha_isolated = std::nullopt,
    const SolveOptions& opts = {}, int max_subnet_size = 0, int threads = 1);

// Types that reproduce the observed outcomes exactly as the baseline
// equilibrium (best-response inversion at the estimated parameters), plus
// the isolated-agent variant with the contextual term removed.
struct ReconstructedTypes {
  AgentTypes types;
  Eigen::VectorXd alpha_isolated;
};
ReconstructedTypes types_from_estimates(const Network& net, const Dataset& data,
                                        const StructuralBlock& structural,
                                        const QuantileSpec& levels, bool lim);

struct InfluenceReport {
  std::vector<int> subnet_ids;       // per row
  std::vector<long long> agent_ids;  // original node ids
  Eigen::VectorXd influence;
  Eigen::VectorXd rank_score;        // dense ranks rescaled to [0, 100]
  std::vector<int> included_subnets;
  std::vector<double> baseline_mean;  // per included subnetwork
};

// Dense descending ranks per subnetwork, rescaled to [0, 100]; ties share a
// rank. baselines may be empty.
InfluenceReport rank_players(const Network& net, const std::vector<Eigen::VectorXd>& influences,
                             const std::vector<double>& baselines = {});

struct RankComparison {
  double correlation = 1.0;  // Spearman over paired rank scores
};
RankComparison compare_rankings(const InfluenceReport& a, const InfluenceReport& b);

// CSV rows: subnet,agent,influence,rank_quantile[,influence_lim,rank_lim].
void write_influence_csv(const InfluenceReport& quantile_report,
                         const InfluenceReport* lim_report, const std::string& path);

}  // namespace qpeer
