#include "qpeer/instruments.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace qpeer {

namespace {

// Drops later columns that are bitwise equal to an earlier one.
void dedup_columns(InstrumentMatrix& m) {
  const int n = m.rows();
  std::unordered_map<std::string, int> seen;
  std::vector<int> keep;
  for (int c = 0; c < m.cols(); ++c) {
    std::string key(reinterpret_cast<const char*>(m.Z.col(c).data()), n * sizeof(double));
    if (seen.emplace(std::move(key), c).second) keep.push_back(c);
  }
  if (static_cast<int>(keep.size()) == m.cols()) return;
  Eigen::MatrixXd z(n, keep.size());
  std::vector<std::string> labels;
  labels.reserve(keep.size());
  for (size_t k = 0; k < keep.size(); ++k) {
    z.col(k) = m.Z.col(keep[k]);
    labels.push_back(m.labels[keep[k]]);
  }
  m.Z = std::move(z);
  m.labels = std::move(labels);
}

std::string level_tag(double tau) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "q%.3f", tau);
  return buf;
}

}  // namespace

InstrumentMatrix build_type1(const Network& net, const Dataset& data, const Partition& part,
                             const QuantileSpec& levels, int max_distance, bool exactly_k) {
  levels.validate();
  if (max_distance < 1 || max_distance > 3) {
    throw std::invalid_argument("max_distance must be in {1, 2, 3}");
  }
  const int n = part.n_niso();
  if (n == 0) throw std::invalid_argument("no non-isolated agents");
  const int d1 = data.d1();
  const int d2 = data.d2();
  const int n_cov = d1 + d2;
  const int dt = levels.size();

  InstrumentMatrix out;
  out.kind = InstrumentMatrix::Kind::type1;
  out.levels = levels;
  out.max_distance = max_distance;
  out.exactly_k = exactly_k;
  out.Z.setZero(n, n_cov * max_distance * dt);
  out.row_missing.assign(n, 0);
  out.labels.reserve(out.Z.cols());
  for (int k = 1; k <= max_distance; ++k) {
    for (int c = 0; c < n_cov; ++c) {
      const std::string base = c < d1 ? ("x" + std::to_string(c + 1))
                                      : ("xbar" + std::to_string(c - d1 + 1));
      for (int t = 0; t < dt; ++t) {
        out.labels.push_back(base + "_d" + std::to_string(k) + "_" +
                             level_tag(levels.levels[t]));
      }
    }
  }

  // Map global row -> (subnet, local) once.
  std::vector<double> sample;
  for (int r = 0; r < n; ++r) {
    const auto [s, i] = net.locate(part.niso_rows[r]);
    int col = 0;
    for (int k = 1; k <= max_distance; ++k) {
      const auto set = peers_at_distance(net, s, i, k, exactly_k);
      for (int c = 0; c < n_cov; ++c) {
        sample.clear();
        for (int j : set) {
          const int gj = net.global_index(s, j);
          const double v = c < d1 ? data.x(gj, c) : data.xbar(gj, c - d1);
          if (!std::isnan(v)) sample.push_back(v);
        }
        if (sample.empty()) {
          out.row_missing[r] = 1;
          col += dt;  // entries stay zero
          continue;
        }
        Eigen::Map<const Eigen::VectorXd> sv(sample.data(), sample.size());
        for (int t = 0; t < dt; ++t) {
          out.Z(r, col++) = type7_quantile(sv, levels.levels[t]);
        }
      }
    }
  }
  dedup_columns(out);
  return out;
}

InstrumentMatrix build_type2(const Network& net, const Dataset& data, const Partition& part,
                             const QuantileSpec& estimation_levels, int max_distance,
                             bool exactly_k) {
  estimation_levels.validate();
  if (max_distance < 1 || max_distance > 3) {
    throw std::invalid_argument("max_distance must be in {1, 2, 3}");
  }
  const int n = part.n_niso();
  if (n == 0) throw std::invalid_argument("no non-isolated agents");
  const int d1 = data.d1();
  const int d2 = data.d2();
  const int dt = estimation_levels.size();

  InstrumentMatrix out;
  out.kind = InstrumentMatrix::Kind::type2;
  out.levels = estimation_levels;
  out.max_distance = max_distance;
  out.exactly_k = exactly_k;
  out.Z.setZero(n, (d1 + d2) * dt * max_distance);
  out.row_missing.assign(n, 0);
  out.labels.reserve(out.Z.cols());
  for (int k = 1; k <= max_distance; ++k) {
    for (int t = 0; t < dt; ++t) {
      for (int c = 0; c < d1; ++c) {
        out.labels.push_back("z2_x" + std::to_string(c + 1) + "_d" + std::to_string(k) + "_" +
                             level_tag(estimation_levels.levels[t]));
      }
      for (int c = 0; c < d2; ++c) {
        out.labels.push_back("z2_xbar" + std::to_string(c + 1) + "_d" + std::to_string(k) +
                             "_" + level_tag(estimation_levels.levels[t]));
      }
    }
  }

  // Bracketing peers of the outcome quantile over the distance-k set. For
  // k = 1 this is the quantile_decomposition of the direct peer set.
  std::vector<double> vals;
  std::vector<int> members;
  for (int r = 0; r < n; ++r) {
    const auto [s, i] = net.locate(part.niso_rows[r]);
    int col = 0;
    for (int k = 1; k <= max_distance; ++k) {
      const auto set = peers_at_distance(net, s, i, k, exactly_k);
      if (set.empty()) {
        out.row_missing[r] = 1;
        col += (d1 + d2) * dt;
        continue;
      }
      vals.clear();
      members.assign(set.begin(), set.end());
      std::stable_sort(members.begin(), members.end(), [&](int a, int b) {
        return data.y[net.global_index(s, a)] < data.y[net.global_index(s, b)];
      });
      vals.reserve(members.size());
      for (int j : members) vals.push_back(data.y[net.global_index(s, j)]);
      for (int t = 0; t < dt; ++t) {
        // Direct peers use the (possibly weighted) decomposition; wider sets
        // are unweighted, matching the Type I convention.
        QuantilePos pos;
        int j1, j2;
        if (k == 1) {
          const auto dec = quantile_decomposition(net, data.y, s, i, estimation_levels.levels[t]);
          pos.omega = dec.omega;
          j1 = dec.j1;
          j2 = dec.j2;
        } else {
          pos = type7_position(static_cast<int>(vals.size()), estimation_levels.levels[t]);
          j1 = members[pos.pi - 1];
          j2 = pos.omega == 0.0 ? j1 : members[pos.pi];
        }
        const int g1 = net.global_index(s, j1);
        const int g2 = net.global_index(s, j2);
        for (int c = 0; c < d1; ++c) {
          out.Z(r, col++) = (1.0 - pos.omega) * data.x(g1, c) + pos.omega * data.x(g2, c);
        }
        for (int c = 0; c < d2; ++c) {
          const double v = (1.0 - pos.omega) * data.xbar(g1, c) + pos.omega * data.xbar(g2, c);
          if (std::isnan(v)) {
            out.row_missing[r] = 1;
            out.Z(r, col++) = 0.0;
          } else {
            out.Z(r, col++) = v;
          }
        }
      }
    }
  }
  dedup_columns(out);
  return out;
}

InstrumentMatrix combine(const InstrumentMatrix& a, const InstrumentMatrix& b) {
  if (b.cols() == 0) {
    InstrumentMatrix out = a;
    out.kind = InstrumentMatrix::Kind::combined;
    return out;
  }
  if (a.rows() != b.rows()) throw std::invalid_argument("instrument row counts differ");
  InstrumentMatrix out;
  out.kind = InstrumentMatrix::Kind::combined;
  out.levels = a.levels;
  out.max_distance = std::max(a.max_distance, b.max_distance);
  out.Z.resize(a.rows(), a.cols() + b.cols());
  out.Z << a.Z, b.Z;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.row_missing.assign(a.rows(), 0);
  for (int r = 0; r < a.rows(); ++r) {
    out.row_missing[r] = (r < static_cast<int>(a.row_missing.size()) && a.row_missing[r]) ||
                         (r < static_cast<int>(b.row_missing.size()) && b.row_missing[r]);
  }
  dedup_columns(out);
  return out;
}

void write_instruments_csv(const InstrumentMatrix& z, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "row";
  for (const auto& lab : z.labels) out << ',' << lab;
  out << '\n';
  for (int r = 0; r < z.rows(); ++r) {
    out << r;
    for (int c = 0; c < z.cols(); ++c) out << ',' << z.Z(r, c);
    out << '\n';
  }
}

}  // namespace qpeer
