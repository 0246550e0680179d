#include "csiwm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace csiwm {

namespace {

double evaluate(const LossBuilder& loss, const std::vector<NamedTensor>& params) {
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(ad::constant(p.value));
  return loss(vars).item();
}

}  // namespace

GradReport grad_check(const LossBuilder& loss, const std::vector<NamedTensor>& params, double epsilon,
                      double tolerance, const GradCheckOptions& options) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");

  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(ad::parameter(p.value));
  const ad::Var root = loss(leaves);
  ad::backward(root);

  const double again = evaluate(loss, params);
  if (again != root.item()) {
    throw std::runtime_error("grad_check: loss builder is not deterministic (" + std::to_string(root.item()) +
                             " vs " + std::to_string(again) + ")");
  }

  GradReport report;
  report.tolerance = tolerance;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  std::vector<NamedTensor> probe = params;

  auto rel_error = [](double g, double fd) {
    return std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-8});
  };
  auto directional_fd = [&](std::size_t i, const Eigen::VectorXd& dir) {
    probe[i].value.data() = params[i].value.data() + epsilon * dir;
    const double plus = evaluate(loss, probe);
    probe[i].value.data() = params[i].value.data() - epsilon * dir;
    const double minus = evaluate(loss, probe);
    probe[i].value.data() = params[i].value.data();
    return (plus - minus) / (2.0 * epsilon);
  };

  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::VectorXd g = leaves[i].grad().data();
    GradReport::Entry entry{params[i].name, 0.0, 0};
    const Index n = params[i].value.size();
    if (n <= options.max_coordinates) {
      for (Index k = 0; k < n; ++k) {
        const Eigen::VectorXd dir = Eigen::VectorXd::Unit(n, k);
        entry.max_rel_error = std::max(entry.max_rel_error, rel_error(g[k], directional_fd(i, dir)));
        ++entry.probes;
      }
    } else {
      for (Index k = 0; k < options.directions; ++k) {
        Eigen::VectorXd dir(n);
        for (Index j = 0; j < n; ++j) dir[j] = normal(rng);
        dir.normalize();
        entry.max_rel_error = std::max(entry.max_rel_error, rel_error(g.dot(dir), directional_fd(i, dir)));
        ++entry.probes;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.probes += entry.probes;
    report.params.push_back(std::move(entry));
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace csiwm
