#include "bilip/estimator.hpp"

#include <limits>

namespace bilip {

namespace {

constexpr long kExactPairLimit = 2000;   // all pairs up to this sample count
constexpr long kRandomPairCount = 1000000;

void fold_pair(const Matrix& points, const Matrix& values, long i, long j, double min_sep,
               double& lip, double& invlip, long& n_pairs) {
  const double dx = (points.col(i) - points.col(j)).norm();
  if (dx < min_sep) return;
  const double ratio = (values.col(i) - values.col(j)).norm() / dx;
  lip = std::max(lip, ratio);
  invlip = std::min(invlip, ratio);
  ++n_pairs;
}

}  // namespace

BiLipEstimate estimate_bilip_values(const Matrix& points, const Matrix& values, double min_sep,
                                    std::uint64_t seed) {
  require(points.cols() == values.cols(), "estimate_bilip: point/value count mismatch");
  require(points.cols() >= 2, "estimate_bilip: need at least two samples");
  const long n = points.cols();

  double lip = 0.0;
  double invlip = std::numeric_limits<double>::infinity();
  long n_pairs = 0;
  if (n <= kExactPairLimit) {
    for (long i = 0; i < n; ++i)
      for (long j = i + 1; j < n; ++j) fold_pair(points, values, i, j, min_sep, lip, invlip, n_pairs);
  } else {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_int_distribution<long> pick(0, n - 1);
    for (long k = 0; k < kRandomPairCount; ++k) {
      const long i = pick(rng);
      const long j = pick(rng);
      if (i == j) continue;
      fold_pair(points, values, i, j, min_sep, lip, invlip, n_pairs);
    }
  }
  if (n_pairs == 0)
    throw std::runtime_error("estimate_bilip: all sampled pairs are closer than min_sep");

  BiLipEstimate est;
  est.lip_hat = lip;
  est.invlip_hat = invlip;
  est.n_pairs = n_pairs;
  est.seed = seed;
  return est;
}

BiLipEstimate estimate_bilip(const VectorFn& f, const PairSampler& sampler) {
  require(sampler.n_samples >= 2, "estimate_bilip: n_samples must be >= 2");
  Rng rng(sampler.seed);
  const Matrix points = uniform_points(sampler.lo, sampler.hi, sampler.n_samples, rng);

  Matrix values;
  for (int j = 0; j < sampler.n_samples; ++j) {
    const Vector v = f(points.col(j));
    if (j == 0) values.resize(v.size(), sampler.n_samples);
    values.col(j) = v;
  }
  BiLipEstimate est = estimate_bilip_values(points, values, sampler.min_sep, sampler.seed);
  est.domain_lo = sampler.lo;
  est.domain_hi = sampler.hi;
  return est;
}

double tightness(double lip_hat, double bound) {
  require(bound > 0.0, "tightness: bound must be positive");
  return 100.0 * lip_hat / bound;
}

}  // namespace bilip
