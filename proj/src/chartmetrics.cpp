#include "csiwm/chartmetrics.hpp"

#include "csiwm/sym_eig.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace csiwm {
namespace {

using Eigen::Index;

void check_pair(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, Index min_n, const char* what) {
  if (x.rows() != z.rows()) throw std::invalid_argument(std::string(what) + ": point counts differ");
  if (x.rows() < min_n) {
    throw std::invalid_argument(std::string(what) + ": needs at least " + std::to_string(min_n) + " points");
  }
  if (!x.allFinite() || !z.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

void check_k(Index n, Index k) {
  if (k < 1 || 2 * k >= n) {
    throw std::invalid_argument("neighborhood size " + std::to_string(k) + " out of range for " + std::to_string(n) +
                                " points");
  }
}

/// rank[i][j]: 1-based position of j among i's neighbors; ties by index.
std::vector<std::vector<Index>> neighbor_ranks(const Eigen::MatrixXd& d) {
  const Index n = d.rows();
  std::vector<std::vector<Index>> rank(std::size_t(n), std::vector<Index>(std::size_t(n), 0));
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return d(i, a) < d(i, b); });
    Index r = 0;
    for (Index j : order) {
      if (j == i) continue;
      rank[std::size_t(i)][std::size_t(j)] = ++r;
    }
  }
  return rank;
}

/// Penalizes points that are near in `low` but not in `high`, by their rank in `high`.
double rank_penalty_score(const Eigen::MatrixXd& high, const Eigen::MatrixXd& low, Index k) {
  const Index n = high.rows();
  const auto r_high = neighbor_ranks(pairwise_distances(high));
  const auto r_low = neighbor_ranks(pairwise_distances(low));
  double penalty = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const Index rh = r_high[std::size_t(i)][std::size_t(j)];
      const Index rl = r_low[std::size_t(i)][std::size_t(j)];
      if (rl <= k && rh > k) penalty += double(rh - k);
    }
  }
  const double norm = 2.0 / (double(n) * double(k) * (2.0 * double(n) - 3.0 * double(k) - 1.0));
  return 1.0 - norm * penalty;
}

/// Upper-triangle distances in row-major pair order.
Eigen::VectorXd pair_distances(const Eigen::MatrixXd& p) {
  const Index n = p.rows();
  Eigen::VectorXd out(n * (n - 1) / 2);
  Index q = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) out[q++] = (p.row(i) - p.row(j)).norm();
  }
  return out;
}

}  // namespace

Eigen::Index default_neighbors(Eigen::Index n) {
  return std::max<Eigen::Index>(1, Eigen::Index(std::ceil(0.05 * double(n) - 1e-12)));
}

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& points) {
  const Index n = points.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (points.row(i) - points.row(j)).norm();
  }
  return d;
}

double trustworthiness(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, Index k) {
  check_pair(x, z, 3, "trustworthiness");
  check_k(x.rows(), k);
  return rank_penalty_score(x, z, k);
}

double continuity(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, Index k) {
  check_pair(x, z, 3, "continuity");
  check_k(x.rows(), k);
  return rank_penalty_score(z, x, k);
}

double kruskal_stress(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z) {
  check_pair(x, z, 2, "kruskal_stress");
  const Eigen::VectorXd dx = pair_distances(x), dz = pair_distances(z);
  const double sx = dx.squaredNorm();
  if (sx == 0.0) throw std::domain_error("kruskal_stress: all ground-truth distances are zero");
  const double sz = dz.squaredNorm();
  const double beta = sz > 0 ? dx.dot(dz) / sz : 0.0;
  return std::sqrt((dx - beta * dz).squaredNorm() / sx);
}

double rajski_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, int bins) {
  check_pair(x, z, 3, "rajski_distance");
  if (bins < 2) throw std::invalid_argument("rajski_distance: bins must be at least 2");
  const Eigen::VectorXd dx = pair_distances(x), dz = pair_distances(z);
  if (dx.maxCoeff() == dx.minCoeff()) throw std::domain_error("rajski_distance: all ground-truth distances are equal");
  auto bin_of = [bins](double v, double max) {
    const double u = max > 0 ? v / max : 0.0;
    return std::min(bins - 1, int(u * bins));
  };
  const double mx = dx.maxCoeff(), mz = dz.maxCoeff();
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(bins, bins);
  for (Index q = 0; q < dx.size(); ++q) joint(bin_of(dx[q], mx), bin_of(dz[q], mz)) += 1.0;
  joint /= double(dx.size());
  const Eigen::VectorXd pu = joint.rowwise().sum(), pv = joint.colwise().sum().transpose();
  auto entropy = [](const auto& p) {
    double h = 0;
    for (Index i = 0; i < p.size(); ++i) {
      const double v = p.data()[i];
      if (v > 0) h -= v * std::log(v);
    }
    return h;
  };
  const double h_joint = entropy(joint);
  if (h_joint <= 0) throw std::domain_error("rajski_distance: degenerate joint distribution");
  const double mutual = entropy(pu) + entropy(pv) - h_joint;
  return std::clamp(1.0 - mutual / h_joint, 0.0, 1.0);
}

ChartReport chart_report(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, Index k, int bins) {
  ChartReport r;
  r.k = k > 0 ? k : default_neighbors(x.rows());
  r.bins = bins;
  r.tw = trustworthiness(x, z, r.k);
  r.ct = continuity(x, z, r.k);
  r.ks = kruskal_stress(x, z);
  r.rd = rajski_distance(x, z, bins);
  return r;
}

Eigen::MatrixXd ProcrustesTransform::apply(const Eigen::MatrixXd& z2) const {
  return ((scale * z2 * rotation.transpose()).rowwise() + translation.transpose());
}

ProcrustesResult procrustes_align(const Eigen::MatrixXd& z2, const Eigen::MatrixXd& x2) {
  if (z2.cols() != 2 || x2.cols() != 2) throw std::invalid_argument("procrustes_align: expected n x 2 inputs");
  check_pair(x2, z2, 2, "procrustes_align");
  const Eigen::RowVector2d mz = z2.colwise().mean(), mx = x2.colwise().mean();
  const Eigen::MatrixXd zc = z2.rowwise() - mz, xc = x2.rowwise() - mx;
  const double var_z = zc.squaredNorm();
  if (var_z == 0.0) throw std::domain_error("procrustes_align: chart has zero variance");
  // Maximize sum x^T R z over rotations: R = rot(atan2(b, a)).
  const double a = (zc.col(0).cwiseProduct(xc.col(0)) + zc.col(1).cwiseProduct(xc.col(1))).sum();
  const double b = (zc.col(0).cwiseProduct(xc.col(1)) - zc.col(1).cwiseProduct(xc.col(0))).sum();
  const double theta = std::atan2(b, a);
  ProcrustesResult out;
  auto& t = out.transform;
  t.rotation << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  t.scale = std::hypot(a, b) / var_z;
  t.translation = mx.transpose() - t.scale * t.rotation * mz.transpose();
  out.aligned = t.apply(z2);
  out.residual = (out.aligned - x2).squaredNorm();
  return out;
}

Eigen::MatrixXd Pca2::project(const Eigen::MatrixXd& z) const {
  if (z.cols() != mean.size()) throw std::invalid_argument("pca2: dimension mismatch");
  return (z.rowwise() - mean) * components;
}

Pca2 pca2_fit(const Eigen::MatrixXd& z) {
  if (z.rows() < 3) throw std::invalid_argument("pca2: needs at least 3 points");
  if (z.cols() < 2) throw std::invalid_argument("pca2: needs at least 2 dimensions");
  if (!z.allFinite()) throw std::invalid_argument("pca2: non-finite input");
  Pca2 p;
  p.mean = z.colwise().mean();
  const Eigen::MatrixXd zc = z.rowwise() - p.mean;
  Eigen::MatrixXd cov = zc.transpose() * zc / double(z.rows() - 1);
  cov = 0.5 * (cov + cov.transpose()).eval();
  if (cov.trace() == 0.0) throw std::domain_error("pca2: input has rank 0");
  const auto eig = sym_eig(cov);
  p.eigenvalues = eig.values;
  p.components = eig.vectors.leftCols(2);
  for (Index c = 0; c < 2; ++c) {
    Index arg = 0;
    p.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (p.components(arg, c) < 0) p.components.col(c) *= -1.0;
  }
  return p;
}

Eigen::MatrixXd pca2(const Eigen::MatrixXd& z) { return pca2_fit(z).project(z); }

}  // namespace csiwm
