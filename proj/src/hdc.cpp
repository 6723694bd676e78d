#include "ffpdet/ffp.hpp"

#include <algorithm>

namespace ffpdet {

// Admissibility of a dilation-rate stack for KxK convolutions, following the
// hybrid-dilated-convolution criterion: define, top-down,
//   M[n-1] = r[n-1]
//   M[i]   = max(M[i+1] - 2 r[i],  2 r[i] - M[i+1],  r[i])
// M[i] bounds the largest gap between active input taps of the kernel
// composed from layers i..n-1.  The stack leaves holes in its receptive
// field (gridding) exactly when the bottom layer's gap exceeds one pixel.
HdcReport hdc_check(const std::vector<int64_t>& rates, int64_t kernel) {
  require<ConfigError>(kernel >= 3 && kernel % 2 == 1,
                       strfmt("dilation check requires an odd kernel >= 3, got %lld",
                              (long long)kernel));
  require<ConfigError>(!rates.empty(), "dilation rate list is empty");
  for (int64_t r : rates)
    require<ConfigError>(r > 0,
                         strfmt("dilation rates must be positive, got %lld",
                                (long long)r));

  HdcReport rep;
  rep.rates = rates;
  rep.kernel = kernel;
  rep.max_gap.assign(rates.size(), 0);

  const size_t n = rates.size();
  rep.max_gap[n - 1] = rates[n - 1];
  for (size_t i = n - 1; i-- > 0;) {
    const int64_t r = rates[i], next = rep.max_gap[i + 1];
    rep.max_gap[i] = std::max({next - 2 * r, 2 * r - next, r});
  }
  rep.gridding = rep.max_gap[0] > 1;
  return rep;
}

}  // namespace ffpdet
