#include "partyvec/regression.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "partyvec/error.hpp"

namespace partyvec {

double t_two_sided_p(double t, double dof) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  const boost::math::students_t dist(dof);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

RegressionResult ols(const std::vector<double>& y, const std::vector<std::vector<double>>& X,
                     std::vector<std::string> names) {
  const std::size_t n = y.size();
  if (X.size() != n) fail(ErrorCode::ShapeMismatch, "design rows != observations");
  const std::size_t p = n ? X.front().size() : names.size();
  if (names.size() != p) fail(ErrorCode::ShapeMismatch, "coefficient names != design columns");
  if (p == 0 || n <= p) {
    fail(ErrorCode::InsufficientData, std::to_string(n) + " observations for " + std::to_string(p) + " coefficients");
  }

  Eigen::MatrixXd A(n, p);
  Eigen::VectorXd b(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (X[i].size() != p) fail(ErrorCode::ShapeMismatch, "ragged design matrix");
    for (std::size_t j = 0; j < p; ++j) A(i, j) = X[i][j];
    b(i) = y[i];
  }
  if (!A.allFinite() || !b.allFinite()) fail(ErrorCode::NonFiniteValue, "non-finite regression input");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (static_cast<std::size_t>(qr.rank()) < p) {
    fail(ErrorCode::RankDeficient, "design rank " + std::to_string(qr.rank()) + " < " + std::to_string(p));
  }
  // Residuals accumulated in long double drive a short iterative refinement.
  auto residual = [&](const Eigen::VectorXd& beta) {
    Eigen::VectorXd r(n);
    for (std::size_t i = 0; i < n; ++i) {
      long double acc = b(static_cast<Eigen::Index>(i));
      for (std::size_t j = 0; j < p; ++j) {
        acc -= static_cast<long double>(A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) *
               beta(static_cast<Eigen::Index>(j));
      }
      r(static_cast<Eigen::Index>(i)) = static_cast<double>(acc);
    }
    return r;
  };
  Eigen::VectorXd beta = qr.solve(b);
  Eigen::VectorXd resid = residual(beta);
  for (int step = 0; step < 3; ++step) {
    const Eigen::VectorXd delta = qr.solve(resid);
    if (!(delta.array() != 0.0).any()) break;
    beta += delta;
    resid = residual(beta);
  }

  // (X^T X)^-1 = P R^-1 R^-T P^T
  const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Rinv =
      R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), p));
  const auto& P = qr.colsPermutation();
  const Eigen::MatrixXd cov_unscaled = P * (Rinv * Rinv.transpose()) * P.transpose();

  RegressionResult out;
  out.names = std::move(names);
  out.n = n;
  out.dof = n - p;
  const double ssr = resid.squaredNorm();
  out.sigma2 = ssr / static_cast<double>(out.dof);
  const double sst = (b.array() - b.mean()).square().sum();
  out.r2 = sst > 0.0 ? 1.0 - ssr / sst : 1.0;

  for (std::size_t j = 0; j < p; ++j) {
    const double bj = beta(static_cast<Eigen::Index>(j));
    const double se = std::sqrt(std::max(0.0, out.sigma2 * cov_unscaled(j, j)));
    double t;
    if (se > 0.0) {
      t = bj / se;
    } else {
      t = bj == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), bj);
    }
    out.beta.push_back(bj);
    out.se.push_back(se);
    out.t.push_back(t);
    out.p.push_back(t_two_sided_p(t, static_cast<double>(out.dof)));
  }
  out.residuals.assign(resid.data(), resid.data() + n);
  return out;
}

GroupRegression group_regression(const std::vector<ScalingRecord>& records, const PersonaGrid& grid,
                                 const std::string& party, double alpha) {
  GroupRegression out;
  out.party = party;
  out.alpha = alpha;

  std::vector<std::vector<std::size_t>> rows;
  std::vector<double> y;
  for (const auto& r : records) {
    if (r.party != party) continue;
    if (r.persona_id >= grid.persona_count()) {
      fail(ErrorCode::UnknownValue, "persona id " + std::to_string(r.persona_id) + " outside the grid");
    }
    rows.push_back(grid.assignment_of(r.persona_id));
    y.push_back(r.m);
  }
  if (y.empty()) fail(ErrorCode::InsufficientData, "no records for party " + party);

  struct Column {
    std::size_t variable, level;
  };
  std::vector<Column> columns;
  std::vector<std::string> names{"(intercept)"};
  for (std::size_t v = 0; v < grid.size(); ++v) {
    const auto& var = grid.variables()[v];
    if (var.values.size() < 2) {
      out.warnings.push_back("variable " + var.name + " has a single level; excluded");
      continue;
    }
    std::vector<char> seen(var.values.size(), 0);
    for (const auto& a : rows) seen[a[v]] = 1;
    if (!seen[0]) out.warnings.push_back("reference level " + var.name + "=" + var.values[0] + " absent from data");
    for (std::size_t lv = 1; lv < var.values.size(); ++lv) {
      if (!seen[lv]) {
        out.warnings.push_back("level " + var.name + "=" + var.values[lv] + " absent from data; dropped");
        continue;
      }
      columns.push_back({v, lv});
      names.push_back(var.name + "=" + var.values[lv]);
    }
  }

  std::vector<std::vector<double>> X;
  X.reserve(rows.size());
  for (const auto& a : rows) {
    std::vector<double> x{1.0};
    for (const auto& c : columns) x.push_back(a[c.variable] == c.level ? 1.0 : 0.0);
    X.push_back(std::move(x));
  }
  out.full = ols(y, X, std::move(names));
  for (std::size_t j = 1; j < out.full.p.size(); ++j) {
    if (out.full.p[j] <= alpha) out.significant.push_back(j);
  }
  return out;
}

}  // namespace partyvec
