#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace towerlab {

struct DataMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  void resize(int r, int c) {
    rows = r;
    cols = c;
    data.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0);
  }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols); }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols); }
};

// Ridge regression with intercept, closed form; switches to the dual (kernel)
// solution when there are more features than samples.
struct RidgeModel {
  std::vector<double> beta;
  std::vector<double> x_mean;
  double y_mean = 0.0;
};
RidgeModel ridge_fit(const DataMatrix& x, std::span<const double> y, double lambda);
double ridge_predict(const RidgeModel& m, const double* x);

// L2-regularized logistic regression fitted by damped Newton iterations to a
// gradient tolerance; features are centered and a penalized bias column is
// appended. Uses the Woodbury identity when features outnumber samples.
struct LogisticModel {
  std::vector<double> beta;  // coefficients on centered features
  double bias = 0.0;
  std::vector<double> x_mean;
  int iterations = 0;
  bool converged = false;
};
LogisticModel logistic_fit(const DataMatrix& x, std::span<const double> y01,
                           double lambda, double tol = 1e-6, int max_iter = 200);
double logistic_prob(const LogisticModel& m, const double* x);

// Fold index per sample. Classification folds are stratified per class so no
// fold ends up single-class; regression folds are plain shuffled deals.
std::vector<int> stratified_folds(std::span<const double> labels, int k,
                                  std::uint64_t seed);
std::vector<int> plain_folds(int n, int k, std::uint64_t seed);

// Solves A x = b for symmetric positive definite A (in-place Cholesky).
std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, int n);

}  // namespace towerlab
