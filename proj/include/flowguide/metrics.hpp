#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flowguide/mixture.hpp"
#include "flowguide/oracle.hpp"

namespace flowguide {

// Energy distance 2 E||A-B|| - E||A-A'|| - E||B-B'|| as the V-statistic over
// all pairs (diagonal included). Rows are samples. Requires n, m >= 2.
// The parallel version reduces fixed-size row blocks in index order, so the
// result is identical for any thread count.
double energy_distance(const Mat& a, const Mat& b);
double energy_distance_serial(const Mat& a, const Mat& b);  // reference

struct QualityScore {
  double energy_distance = 0;
  double mean_error = 0;  // ||sample mean - target mean||
};

QualityScore quality_score(const Mat& samples, const Mat& reference,
                           const Vec& target_mean);

// Empirical constants for the trajectory-separation bounds, estimated on a
// probe set (not global suprema; valid on the probed region only).
//   L_u       max spectral norm of J_{v_u}
//   L_delta   max spectral norm of J_delta
//   sigma_min min singular value of J_{v_u}
//   lambda_max max real eigenvalue part of J_{v_u + w delta}
//   rho_max   max measured ratio
//   V_max     max ||v_u|| over probes and along a reference trajectory
struct BoundConstants {
  double L_u = 0;
  double L_delta = 0;
  double sigma_min = 0;
  double lambda_max = 0;
  double rho_max = 0;
  double V_max = 0;
  bool fd_unstable = false;  // central vs forward differences off by > 10%
};

// probe_points: one x per row; Jacobians by central finite differences with
// step fd_eps, cross-checked against forward differences for stability.
// w enters only through lambda_max (the combined field's Jacobian).
BoundConstants estimate_bound_constants(const MixtureSpec& spec,
                                        const std::string& label,
                                        const std::vector<double>& t_grid,
                                        const Mat& probe_points, double fd_eps,
                                        double w);

Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
                double eps, bool central);

}  // namespace flowguide
