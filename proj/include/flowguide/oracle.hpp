#pragma once

#include <limits>
#include <string>
#include <vector>

#include "flowguide/mixture.hpp"

namespace flowguide {

// Interpolation convention: x_t = t*x1 + (1-t)*x0 with x1 ~ N(0, I) noise at
// t=1 and x0 ~ data at t=0. Velocities are exact posterior expectations
// E[x1 - x0 | x_t = x]; sampling integrates them from t=1 down to t=0.

// One mixture treated as a single weighted component list (either the whole
// spec prior-weighted, or one class).
struct FlatMixture {
  int dim = 0;
  std::vector<Component> comps;  // weights sum to 1
};

FlatMixture flatten_unconditional(const MixtureSpec& spec);
FlatMixture flatten_class(const MixtureSpec& spec, int ci);

// Everything t-dependent, shared across evaluation points at the same t.
// For component N(mu, S) the x_t marginal is N((1-t)mu, M), M = (1-t)^2 S
// + t^2 I, and E[x1 - x0 | x_t = x] = (t I - (1-t) S) M^{-1} (x - (1-t)mu)
// - mu.
struct FieldFactors {
  double t = 1;
  int dim = 0;
  struct PerComp {
    Vec mean;            // component mean mu
    Mat cov;             // component covariance S
    Vec marginal_mean;   // (1-t) mu
    Eigen::LLT<Mat> llt; // Cholesky of M
    double log_norm;     // log weight - 0.5 log det M - d/2 log 2pi
  };
  std::vector<PerComp> comps;
};

FieldFactors make_factors(const FlatMixture& fm, double t);
Vec field_velocity(const FieldFactors& f, const Vec& x);
Vec field_responsibilities(const FieldFactors& f, const Vec& x);
Mat field_jacobian(const FieldFactors& f, const Vec& x);  // analytic d/dx

// Point-wise conveniences (factors rebuilt per call; samplers use the
// factor forms directly).
Vec unconditional_velocity(const MixtureSpec& spec, const Vec& x, double t);
Vec conditional_velocity(const MixtureSpec& spec, const std::string& label,
                         const Vec& x, double t);

// ratio is quiet NaN when ||v_u|| = 0: "undefined", distinct from 0.
inline double undefined_ratio() {
  return std::numeric_limits<double>::quiet_NaN();
}
inline bool ratio_defined(double rho) { return rho == rho; }

struct VelocityPair {
  Vec v_u, v_c, delta;
  double ratio = 0;
};

VelocityPair velocity_pair(const MixtureSpec& spec, const std::string& label,
                           const Vec& x, double t);
VelocityPair pair_from_factors(const FieldFactors& fu, const FieldFactors& fc,
                               const Vec& x);

// ||mu_c - mu_u|| / ||x1 - mu_u||; throws division-by-zero when x1 = mu_u.
double initial_ratio_closed_form(const MixtureSpec& spec,
                                 const std::string& label, const Vec& x1);

// Draws from the t=0 distribution; label "" means unconditional. One row
// per draw, deterministic for a given seed.
Mat sample_data(const MixtureSpec& spec, const std::string& label, int n,
                uint64_t seed);
Mat sample_noise(int n, int dim, uint64_t seed);

}  // namespace flowguide
