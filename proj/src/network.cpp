#include "qpeer/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace qpeer {

void Network::finalize() {
  offsets_.clear();
  offsets_.reserve(subnets.size());
  weighted_ = false;
  int total = 0;
  for (const auto& sub : subnets) {
    if (sub.n < 2) throw std::invalid_argument("subnetwork must have at least 2 nodes");
    if (static_cast<int>(sub.adj.size()) != sub.n) {
      throw std::invalid_argument("adjacency size does not match node count");
    }
    for (int i = 0; i < sub.n; ++i) {
      for (const auto& [j, w] : sub.adj[i]) {
        if (j == i) throw std::invalid_argument("self-edge forbidden");
        if (j < 0 || j >= sub.n) throw std::invalid_argument("edge endpoint out of range");
        if (!(w > 0.0)) throw std::invalid_argument("edge weights must be positive");
        if (w != 1.0) weighted_ = true;
      }
    }
    total += sub.n;
    offsets_.push_back(total);
  }
}

std::pair<int, int> Network::locate(int global) const {
  if (global < 0 || global >= total_agents()) throw std::invalid_argument("agent out of range");
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), global);
  const int s = static_cast<int>(it - offsets_.begin());
  return {s, global - offset(s)};
}

Partition classify(const Network& net) {
  Partition part;
  part.iso_span.reserve(net.num_subnets());
  part.niso_span.reserve(net.num_subnets());
  for (int s = 0; s < net.num_subnets(); ++s) {
    const auto& sub = net.subnets[s];
    const int iso_begin = part.n_iso();
    const int niso_begin = part.n_niso();
    for (int i = 0; i < sub.n; ++i) {
      if (sub.is_isolated(i)) {
        part.iso_rows.push_back(net.global_index(s, i));
      } else {
        part.niso_rows.push_back(net.global_index(s, i));
      }
    }
    part.iso_span.emplace_back(iso_begin, part.n_iso());
    part.niso_span.emplace_back(niso_begin, part.n_niso());
  }
  return part;
}

std::vector<int> peers_at_distance(const Network& net, int s, int agent, int k,
                                   bool exactly_k) {
  if (s < 0 || s >= net.num_subnets()) throw std::invalid_argument("subnetwork out of range");
  const auto& sub = net.subnets[s];
  if (agent < 0 || agent >= sub.n) throw std::invalid_argument("agent not in network");
  if (k < 1 || k > 3) throw std::invalid_argument("distance must be in {1, 2, 3}");

  // BFS from the agent recording shortest directed distances.
  std::vector<int> dist(sub.n, -1);
  std::vector<int> frontier{agent};
  dist[agent] = 0;
  for (int level = 1; level <= k && !frontier.empty(); ++level) {
    std::vector<int> next;
    for (int u : frontier) {
      for (const auto& [v, w] : sub.adj[u]) {
        (void)w;
        if (dist[v] < 0) {
          dist[v] = level;
          next.push_back(v);
        }
      }
    }
    frontier = std::move(next);
  }
  std::vector<int> out;
  for (int v = 0; v < sub.n; ++v) {
    if (v == agent || dist[v] < 0) continue;
    if (exactly_k ? dist[v] == k : dist[v] <= k) out.push_back(v);
  }
  return out;
}

Eigen::MatrixXd peer_average(const Network& net, const Eigen::MatrixXd& x) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd xbar = Eigen::MatrixXd::Constant(x.rows(), x.cols(), nan);
  for (int s = 0; s < net.num_subnets(); ++s) {
    const auto& sub = net.subnets[s];
    for (int i = 0; i < sub.n; ++i) {
      if (sub.is_isolated(i)) continue;
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(x.cols());
      double wsum = 0.0;
      for (const auto& [j, w] : sub.adj[i]) {
        acc += w * x.row(net.global_index(s, j));
        wsum += w;
      }
      xbar.row(net.global_index(s, i)) = acc / wsum;
    }
  }
  return xbar;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

[[noreturn]] void fail_at(const std::string& path, int line_no, const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + msg);
}

double parse_double(const std::string& s, const std::string& path, int line_no) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail_at(path, line_no, "expected a number, got '" + s + "'");
  }
}

long long parse_int(const std::string& s, const std::string& path, int line_no) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail_at(path, line_no, "expected an integer, got '" + s + "'");
  }
}

}  // namespace

std::pair<Network, Dataset> load_network(const std::string& edges_path,
                                         const std::string& nodes_path) {
  std::ifstream nodes_in(nodes_path);
  if (!nodes_in) throw std::runtime_error("cannot open node file: " + nodes_path);

  std::string line;
  if (!std::getline(nodes_in, line)) fail_at(nodes_path, 1, "missing header");
  auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "subnet" || header[1] != "id" || header[2] != "y") {
    fail_at(nodes_path, 1, "node header must start with subnet,id,y");
  }
  std::vector<std::string> x_names(header.begin() + 3, header.end());
  const int d1 = static_cast<int>(x_names.size());

  struct NodeRow {
    long long id;
    double y;
    std::vector<double> x;
  };
  std::map<long long, std::vector<NodeRow>> by_subnet;  // ordered by subnet id
  std::map<long long, std::unordered_map<long long, int>> local_of;

  int line_no = 1;
  while (std::getline(nodes_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (static_cast<int>(f.size()) != 3 + d1) {
      fail_at(nodes_path, line_no, "expected " + std::to_string(3 + d1) + " fields");
    }
    NodeRow row;
    const long long subnet = parse_int(f[0], nodes_path, line_no);
    row.id = parse_int(f[1], nodes_path, line_no);
    row.y = parse_double(f[2], nodes_path, line_no);
    row.x.reserve(d1);
    for (int c = 0; c < d1; ++c) row.x.push_back(parse_double(f[3 + c], nodes_path, line_no));
    auto& locals = local_of[subnet];
    if (locals.count(row.id)) {
      fail_at(nodes_path, line_no, "duplicate node id " + std::to_string(row.id) +
                                       " in subnet " + std::to_string(subnet));
    }
    locals.emplace(row.id, static_cast<int>(by_subnet[subnet].size()));
    by_subnet[subnet].push_back(std::move(row));
  }
  if (by_subnet.empty()) throw std::runtime_error("node file has no data rows");

  Network net;
  std::unordered_map<long long, int> subnet_pos;
  for (const auto& [sid, rows] : by_subnet) {
    Subnetwork sub;
    sub.id = static_cast<int>(sid);
    sub.n = static_cast<int>(rows.size());
    sub.adj.resize(sub.n);
    sub.orig_ids.reserve(sub.n);
    for (const auto& r : rows) sub.orig_ids.push_back(r.id);
    subnet_pos.emplace(sid, net.num_subnets());
    net.subnets.push_back(std::move(sub));
  }

  std::ifstream edges_in(edges_path);
  if (!edges_in) throw std::runtime_error("cannot open edge file: " + edges_path);
  if (!std::getline(edges_in, line)) fail_at(edges_path, 1, "missing header");
  auto eheader = split_csv_line(line);
  const bool has_weight = eheader.size() == 4 && eheader[3] == "weight";
  if (!(eheader.size() == 3 || has_weight) || eheader[0] != "subnet" || eheader[1] != "src" ||
      eheader[2] != "dst") {
    fail_at(edges_path, 1, "edge header must be subnet,src,dst[,weight]");
  }

  line_no = 1;
  while (std::getline(edges_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != eheader.size()) {
      fail_at(edges_path, line_no, "expected " + std::to_string(eheader.size()) + " fields");
    }
    const long long sid = parse_int(f[0], edges_path, line_no);
    const long long src = parse_int(f[1], edges_path, line_no);
    const long long dst = parse_int(f[2], edges_path, line_no);
    const double w = has_weight ? parse_double(f[3], edges_path, line_no) : 1.0;
    auto sit = subnet_pos.find(sid);
    if (sit == subnet_pos.end()) {
      fail_at(edges_path, line_no, "subnet " + std::to_string(sid) + " has no nodes");
    }
    const auto& locals = local_of[sid];
    auto src_it = locals.find(src);
    auto dst_it = locals.find(dst);
    if (src_it == locals.end() || dst_it == locals.end()) {
      fail_at(edges_path, line_no, "edge endpoint not in node file");
    }
    if (src == dst) fail_at(edges_path, line_no, "self-edge forbidden");
    if (w < 0.0) fail_at(edges_path, line_no, "negative weight");
    if (w == 0.0) continue;  // zero weight means no link
    net.subnets[sit->second].adj[src_it->second].emplace_back(dst_it->second, w);
  }
  for (auto& sub : net.subnets) {
    for (auto& nbrs : sub.adj) {
      std::sort(nbrs.begin(), nbrs.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
    }
  }
  net.finalize();

  Dataset data;
  const int n = net.total_agents();
  data.y.resize(n);
  data.x.resize(n, d1);
  data.x_names = std::move(x_names);
  for (int s = 0; s < net.num_subnets(); ++s) {
    const auto& rows = by_subnet.at(net.subnets[s].id);
    for (int i = 0; i < net.subnets[s].n; ++i) {
      const int g = net.global_index(s, i);
      data.y[g] = rows[i].y;
      for (int c = 0; c < d1; ++c) data.x(g, c) = rows[i].x[c];
    }
  }
  data.xbar = peer_average(net, data.x);
  data.iso.resize(n);
  for (int s = 0; s < net.num_subnets(); ++s) {
    for (int i = 0; i < net.subnets[s].n; ++i) {
      data.iso[net.global_index(s, i)] = net.subnets[s].is_isolated(i) ? 1 : 0;
    }
  }
  return {std::move(net), std::move(data)};
}

void write_edges_csv(const Network& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "subnet,src,dst,weight\n";
  for (const auto& sub : net.subnets) {
    for (int i = 0; i < sub.n; ++i) {
      for (const auto& [j, w] : sub.adj[i]) {
        out << sub.id << ',' << sub.orig_ids[i] << ',' << sub.orig_ids[j] << ',' << w << '\n';
      }
    }
  }
}

void write_nodes_csv(const Network& net, const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "subnet,id,y";
  for (const auto& name : data.x_names) out << ',' << name;
  if (data.x_names.empty()) {
    for (int c = 0; c < data.d1(); ++c) out << ",x" << (c + 1);
  }
  out << '\n';
  for (int s = 0; s < net.num_subnets(); ++s) {
    const auto& sub = net.subnets[s];
    for (int i = 0; i < sub.n; ++i) {
      const int g = net.global_index(s, i);
      out << sub.id << ',' << sub.orig_ids[i] << ',' << data.y[g];
      for (int c = 0; c < data.d1(); ++c) out << ',' << data.x(g, c);
      out << '\n';
    }
  }
}

}  // namespace qpeer
