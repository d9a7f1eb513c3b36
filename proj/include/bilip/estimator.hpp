#ifndef BILIP_ESTIMATOR_HPP
#define BILIP_ESTIMATOR_HPP

#include "bilip/common.hpp"

#include <cstdint>
#include <functional>

namespace bilip {

struct BiLipEstimate {
  double lip_hat = 0.0;     // max pairwise ratio
  double invlip_hat = 0.0;  // min pairwise ratio
  long n_pairs = 0;
  Vector domain_lo, domain_hi;
  std::uint64_t seed = 0;
};

struct PairSampler {
  Vector lo, hi;          // box bounds
  int n_samples = 1000;
  std::uint64_t seed = 0;
  double min_sep = 1e-6;  // pairs closer than this are skipped
};

using VectorFn = std::function<Vector(const Vector&)>;

// Ratio extremes over sampled pairs: all pairs for n <= 2000, otherwise 1e6
// random pairs. Deterministic for a fixed seed. Throws when every pair is
// closer than min_sep.
BiLipEstimate estimate_bilip(const VectorFn& f, const PairSampler& sampler);

// Same statistic over precomputed evaluations (columns = samples).
BiLipEstimate estimate_bilip_values(const Matrix& points, const Matrix& values, double min_sep,
                                    std::uint64_t seed = 0);

// 100 * lip_hat / bound.
double tightness(double lip_hat, double bound);

}  // namespace bilip

#endif
