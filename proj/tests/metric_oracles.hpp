#pragma once

// Brute-force chart metric references: every rank and distance is recomputed
// from scratch for each query.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

namespace csiwm::testing::metrics {

inline double dist(const Eigen::MatrixXd& p, Eigen::Index i, Eigen::Index j) { return (p.row(i) - p.row(j)).norm(); }

/// Neighbor rank by counting closer points (ties: lower index first).
inline Eigen::Index rank_by_count(const Eigen::MatrixXd& p, Eigen::Index i, Eigen::Index j) {
  Eigen::Index r = 1;
  for (Eigen::Index l = 0; l < p.rows(); ++l) {
    if (l == i || l == j) continue;
    const double dl = dist(p, i, l), dj = dist(p, i, j);
    if (dl < dj || (dl == dj && l < j)) ++r;
  }
  return r;
}

inline double tw_oracle(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, Eigen::Index k) {
  const Eigen::Index n = x.rows();
  double sum = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const bool in_z = rank_by_count(z, i, j) <= k;
      const bool in_x = rank_by_count(x, i, j) <= k;
      if (in_z && !in_x) sum += double(rank_by_count(x, i, j) - k);
    }
  }
  return 1.0 - 2.0 / (double(n) * double(k) * (2.0 * n - 3.0 * k - 1.0)) * sum;
}

inline double ks_oracle(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z) {
  double num = 0, den = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
      num += dist(x, i, j) * dist(z, i, j);
      den += dist(z, i, j) * dist(z, i, j);
    }
  const double beta = num / den;
  double s = 0, t = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
      const double e = dist(x, i, j) - beta * dist(z, i, j);
      s += e * e;
      t += dist(x, i, j) * dist(x, i, j);
    }
  return std::sqrt(s / t);
}

inline double rd_oracle(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, int bins) {
  std::vector<double> dx, dz;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
      dx.push_back(dist(x, i, j));
      dz.push_back(dist(z, i, j));
    }
  const double mx = *std::max_element(dx.begin(), dx.end()), mz = *std::max_element(dz.begin(), dz.end());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pu, pv;
  const double w = 1.0 / double(dx.size());
  for (std::size_t q = 0; q < dx.size(); ++q) {
    const int u = std::min(bins - 1, int(std::floor(dx[q] / mx * bins)));
    const int v = mz > 0 ? std::min(bins - 1, int(std::floor(dz[q] / mz * bins))) : 0;
    joint[{u, v}] += w;
    pu[u] += w;
    pv[v] += w;
  }
  double hj = 0, hu = 0, hv = 0;
  for (const auto& [key, p] : joint) hj -= p * std::log(p);
  for (const auto& [key, p] : pu) hu -= p * std::log(p);
  for (const auto& [key, p] : pv) hv -= p * std::log(p);
  return 1.0 - (hu + hv - hj) / hj;
}

}  // namespace csiwm::testing::metrics
