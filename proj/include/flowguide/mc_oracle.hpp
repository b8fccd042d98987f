#pragma once

#include <cstdint>
#include <string>

#include "flowguide/oracle.hpp"

namespace flowguide {

// Kernel-regression estimate of E[x1 - x0 | x_t near x] from simulated
// (x0, x1) pairs, used as an independent cross-check of the closed-form
// velocities. Gaussian kernel in x_t with the given bandwidth.
struct McVelocity {
  Vec estimate;
  Vec std_error;   // per-coordinate, delta-method for the weighted mean
  double ess = 0;  // (sum w)^2 / sum w^2
  bool low_ess = false;  // flagged when ess < 100
};

McVelocity mc_velocity(const MixtureSpec& spec, const std::string& label,
                       const Vec& x, double t, int64_t n_samples,
                       double bandwidth, uint64_t seed);

}  // namespace flowguide
