#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace qpeer {

// One connected component of observations (e.g. a school). Adjacency is kept
// as out-neighbor lists; g_ii = 0 and all stored weights are > 0.
struct Subnetwork {
  int id = 0;
  int n = 0;
  std::vector<std::vector<std::pair<int, double>>> adj;  // (local index, weight)
  std::vector<long long> orig_ids;                       // by local index

  int out_degree(int i) const { return static_cast<int>(adj[i].size()); }
  bool is_isolated(int i) const { return adj[i].empty(); }
};

struct Network {
  std::vector<Subnetwork> subnets;
  bool directed = true;

  int num_subnets() const { return static_cast<int>(subnets.size()); }
  int total_agents() const { return offsets_.empty() ? 0 : offsets_.back(); }
  int offset(int s) const { return s == 0 ? 0 : offsets_[s - 1]; }
  int global_index(int s, int i) const { return offset(s) + i; }
  // Inverse of global_index: (subnetwork, local index).
  std::pair<int, int> locate(int global) const;
  bool weighted() const { return weighted_; }

  // Recomputes offsets and validates invariants (n_s >= 2, zero diagonal,
  // positive weights). Call after mutating subnets.
  void finalize();

 private:
  std::vector<int> offsets_;  // cumulative node counts
  bool weighted_ = false;
};

// Per-agent observations, indexed globally (subnetwork-major). Rows of xbar
// for isolated agents are NaN: the peer average is undefined there.
struct Dataset {
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  Eigen::MatrixXd xbar;
  std::vector<uint8_t> iso;
  std::vector<std::string> x_names;

  int n() const { return static_cast<int>(y.size()); }
  int d1() const { return static_cast<int>(x.cols()); }
  int d2() const { return static_cast<int>(xbar.cols()); }
};

// Isolated / non-isolated split. Row vectors are global indices in
// subnetwork-major order; spans give each subnetwork's [begin, end) range
// within those row vectors (the clustering unit for variance estimation).
struct Partition {
  std::vector<int> iso_rows;
  std::vector<int> niso_rows;
  std::vector<std::pair<int, int>> iso_span;
  std::vector<std::pair<int, int>> niso_span;

  int n_iso() const { return static_cast<int>(iso_rows.size()); }
  int n_niso() const { return static_cast<int>(niso_rows.size()); }
};

// An agent is isolated iff it has no outgoing links; incoming links do not
// count.
Partition classify(const Network& net);

// Agents reachable from (s, agent) by directed paths of length <= k
// (or exactly k when exactly_k), excluding the agent itself. Sorted by local
// index. k must be in {1, 2, 3}.
std::vector<int> peers_at_distance(const Network& net, int s, int agent, int k,
                                   bool exactly_k = false);

// g-weighted peer averages of the columns of x; NaN rows for isolated agents.
Eigen::MatrixXd peer_average(const Network& net, const Eigen::MatrixXd& x);

// CSV ingestion. Edge file columns: subnet,src,dst[,weight]; node file
// columns: subnet,id,y,<covariate names...>. Headers required. Self-edges,
// negative weights, dangling endpoints and malformed rows are rejected with
// the offending line number.
std::pair<Network, Dataset> load_network(const std::string& edges_path,
                                         const std::string& nodes_path);

void write_edges_csv(const Network& net, const std::string& path);
void write_nodes_csv(const Network& net, const Dataset& data, const std::string& path);

}  // namespace qpeer
