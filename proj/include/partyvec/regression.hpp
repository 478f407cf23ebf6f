#pragma once

#include <string>
#include <vector>

#include "partyvec/persona.hpp"
#include "partyvec/scaling.hpp"

namespace partyvec {

struct RegressionResult {
  std::vector<std::string> names;
  std::vector<double> beta;
  std::vector<double> se;
  std::vector<double> t;
  std::vector<double> p;
  std::vector<double> residuals;
  double r2 = 0.0;
  double sigma2 = 0.0;
  std::size_t n = 0;
  std::size_t dof = 0;
};

/// Two-sided p-value of a t statistic with `dof` degrees of freedom.
double t_two_sided_p(double t, double dof);

/// Least squares via column-pivoted QR. X is row-major n x p and should carry
/// its own intercept column. Throws InsufficientData (n <= p), RankDeficient.
RegressionResult ols(const std::vector<double>& y, const std::vector<std::vector<double>>& X,
                     std::vector<std::string> names);

struct GroupRegression {
  std::string party;
  double alpha = 0.05;
  RegressionResult full;
  std::vector<std::size_t> significant;  // indices into full, intercept excluded
  std::vector<std::string> warnings;
};

/// m^n_p on dummy-coded persona variables; the first grid value of each
/// variable is the reference level. Variables with a single level, and levels
/// absent from the data, are dropped with a warning.
GroupRegression group_regression(const std::vector<ScalingRecord>& records, const PersonaGrid& grid,
                                 const std::string& party, double alpha = 0.05);

}  // namespace partyvec
