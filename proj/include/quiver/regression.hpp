#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "quiver/distance.hpp"
#include "quiver/error.hpp"
#include "quiver/graph.hpp"

namespace quiver {

struct RegressionResult {
  std::string node;
  std::vector<std::string> parents;
  std::map<std::string, double> main_effects;
  std::map<std::pair<std::string, std::string>, double> interactions;
  double residual_variance = 0.0;
  std::size_t sample_size = 0;
  std::size_t parameter_count = 0;
  bool ridge_fallback = false;
  std::vector<std::string> collinear;
};

inline constexpr double kRidge = 1e-8;

// d_j = sum_k alpha_k d_k + sum_{k<l} gamma_kl d_k d_l  (no intercept).
inline RegressionResult partial_regression(std::size_t j, const PipelineGraphSpec& spec,
                                           const DistanceTable& table) {
  const auto& pa = spec.parents(j);
  if (pa.size() < 2)
    throw ValidationError("'" + spec.name(j) + "' has " + std::to_string(pa.size()) +
                          " parent(s); use estimate_edge_sensitivity for single-parent nodes");
  RegressionResult r;
  r.node = spec.name(j);
  std::vector<std::string> columns;
  for (auto p : pa) {
    r.parents.push_back(spec.name(p));
    columns.push_back(spec.name(p));
  }
  std::vector<std::pair<std::size_t, std::size_t>> inter;
  for (std::size_t a = 0; a < pa.size(); ++a)
    for (std::size_t b = a + 1; b < pa.size(); ++b) {
      inter.emplace_back(a, b);
      columns.push_back(spec.name(pa[a]) + "*" + spec.name(pa[b]));
    }
  const std::size_t k = columns.size();
  r.parameter_count = k;

  std::vector<std::size_t> rows;
  for (std::size_t p = 0; p < table.pair_count(); ++p) {
    bool ok = table.at(p, j).has_value();
    for (auto q : pa) ok = ok && table.at(p, q).has_value();
    if (ok) rows.push_back(p);
  }
  r.sample_size = rows.size();
  if (rows.size() < k)
    throw InsufficientDataError("regression for '" + r.node + "' needs at least " + std::to_string(k) +
                                " pairs, has " + std::to_string(rows.size()));

  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(k));
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r_i = 0; r_i < rows.size(); ++r_i) {
    const auto p = rows[r_i];
    const auto row = static_cast<Eigen::Index>(r_i);
    std::vector<double> d(pa.size());
    for (std::size_t a = 0; a < pa.size(); ++a) d[a] = *table.at(p, pa[a]);
    for (std::size_t a = 0; a < pa.size(); ++a) X(row, static_cast<Eigen::Index>(a)) = d[a];
    for (std::size_t c = 0; c < inter.size(); ++c)
      X(row, static_cast<Eigen::Index>(pa.size() + c)) = d[inter[c].first] * d[inter[c].second];
    y(row) = *table.at(p, j);
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  const auto rank = static_cast<std::size_t>(qr.rank());
  const Eigen::MatrixXd xtx = X.transpose() * X;
  const Eigen::VectorXd xty = X.transpose() * y;
  Eigen::VectorXd beta;
  if (rank < k) {
    r.ridge_fallback = true;
    const auto& perm = qr.colsPermutation().indices();
    for (std::size_t c = rank; c < k; ++c) r.collinear.push_back(columns[static_cast<std::size_t>(perm(static_cast<Eigen::Index>(c)))]);
    const Eigen::MatrixXd reg = xtx + kRidge * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    beta = reg.ldlt().solve(xty);
  } else {
    beta = xtx.ldlt().solve(xty);
  }

  for (std::size_t a = 0; a < pa.size(); ++a) r.main_effects[spec.name(pa[a])] = beta(static_cast<Eigen::Index>(a));
  for (std::size_t c = 0; c < inter.size(); ++c)
    r.interactions[{spec.name(pa[inter[c].first]), spec.name(pa[inter[c].second])}] =
        beta(static_cast<Eigen::Index>(pa.size() + c));
  const Eigen::VectorXd resid = y - X * beta;
  const auto dof = rows.size() > k ? rows.size() - k : 0;
  r.residual_variance = dof ? resid.squaredNorm() / static_cast<double>(dof) : 0.0;
  return r;
}

}  // namespace quiver
