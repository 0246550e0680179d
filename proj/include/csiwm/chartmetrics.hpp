#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace csiwm {

/// Point sets are row-per-point matrices.

struct ChartReport {
  double tw = 0, ct = 0, ks = 0, rd = 0;
  Eigen::Index k = 0;
  int bins = 0;
};

struct ProcrustesTransform {
  double scale = 1.0;
  Eigen::Matrix2d rotation = Eigen::Matrix2d::Identity();
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();

  double angle() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& z2) const;
};

struct ProcrustesResult {
  Eigen::MatrixXd aligned;
  ProcrustesTransform transform;
  double residual = 0;  // sum of squared distances to the targets
};

/// Top-two principal directions of a point set.
struct Pca2 {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;  // D x 2, unit columns
  Eigen::VectorXd eigenvalues; // full spectrum, descending

  Eigen::MatrixXd project(const Eigen::MatrixXd& z) const;
};

/// ceil(0.05 n), at least 1.
Eigen::Index default_neighbors(Eigen::Index n);

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& points);

double trustworthiness(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, Eigen::Index k);
double continuity(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, Eigen::Index k);
double kruskal_stress(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z);
double rajski_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, int bins = 50);

/// k <= 0 selects default_neighbors(n).
ChartReport chart_report(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, Eigen::Index k = 0, int bins = 50);

/// Best positive similarity s R z + t onto x (rotation only, no reflection).
ProcrustesResult procrustes_align(const Eigen::MatrixXd& z2, const Eigen::MatrixXd& x2);

Pca2 pca2_fit(const Eigen::MatrixXd& z);
Eigen::MatrixXd pca2(const Eigen::MatrixXd& z);

}  // namespace csiwm
