#ifndef BILIP_COMMON_HPP
#define BILIP_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace bilip {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

/// Thrown when an iterative solve produces non-finite or unbounded iterates.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : std::runtime_error(what), iteration(iteration) {}
  long iteration;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline Matrix uniform_matrix(int rows, int cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Matrix xavier_matrix(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / double(rows + cols));
  return uniform_matrix(rows, cols, -a, a, rng);
}

inline Matrix uniform_points(const Vector& lo, const Vector& hi, int n, Rng& rng) {
  require(lo.size() == hi.size(), "box bounds dimension mismatch");
  Matrix pts(lo.size(), n);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < lo.size(); ++i) pts(i, j) = lo[i] + (hi[i] - lo[i]) * u01(rng);
  return pts;
}

}  // namespace bilip

#endif
