#include "flowguide/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "flowguide/sampler.hpp"
#include "flowguide/schedule.hpp"

namespace flowguide {

namespace {

constexpr int kBlock = 32;  // row-block size for the ordered parallel sums

// Sum over a fixed block decomposition, blocks reduced in index order, so
// the result is bit-identical for any thread count.
double cross_sum(const Mat& a, const Mat& b) {
  const int n = int(a.rows());
  const int nb = (n + kBlock - 1) / kBlock;
  std::vector<double> part(size_t(nb), 0.0);
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < nb; ++bi) {
    double s = 0;
    const int lo = bi * kBlock, hi = std::min(n, lo + kBlock);
    for (int i = lo; i < hi; ++i)
      for (int j = 0; j < b.rows(); ++j) s += (a.row(i) - b.row(j)).norm();
    part[size_t(bi)] = s;
  }
  double s = 0;
  for (double p : part) s += p;
  return s;
}

// The individual terms ||a_i - b_j|| are bitwise symmetric, but the order
// they are added in is not. Picking a canonical operand order for the cross
// term (more rows first, content as tie-break) makes ed(a,b) == ed(b,a)
// hold exactly instead of only up to rounding.
bool cross_swapped(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) {
      if (a(i, j) < b(i, j)) return false;
      if (b(i, j) < a(i, j)) return true;
    }
  return false;
}

}  // namespace

double energy_distance(const Mat& a, const Mat& b) {
  const int n = int(a.rows()), m = int(b.rows());
  if (n < 2 || m < 2)
    throw Error("invalid-argument", "energy_distance needs n, m >= 2");
  double ab = (cross_swapped(a, b) ? cross_sum(b, a) : cross_sum(a, b)) /
              (double(n) * m);
  double aa = cross_sum(a, a) / (double(n) * n);
  double bb = cross_sum(b, b) / (double(m) * m);
  return 2.0 * ab - aa - bb;
}

namespace {

double cross_sum_serial(const Mat& a, const Mat& b) {
  double s = 0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.rows(); ++j) s += (a.row(i) - b.row(j)).norm();
  return s;
}

}  // namespace

double energy_distance_serial(const Mat& a, const Mat& b) {
  const int n = int(a.rows()), m = int(b.rows());
  if (n < 2 || m < 2)
    throw Error("invalid-argument", "energy_distance needs n, m >= 2");
  double ab =
      cross_swapped(a, b) ? cross_sum_serial(b, a) : cross_sum_serial(a, b);
  double aa = cross_sum_serial(a, a);
  double bb = cross_sum_serial(b, b);
  return 2.0 * ab / (double(n) * m) - aa / (double(n) * n) -
         bb / (double(m) * m);
}

QualityScore quality_score(const Mat& samples, const Mat& reference,
                           const Vec& target_mean) {
  QualityScore q;
  q.energy_distance = energy_distance(samples, reference);
  Vec mean = samples.colwise().mean();
  q.mean_error = (mean - target_mean).norm();
  return q;
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
                double eps, bool central) {
  const int d = int(x.size());
  Vec f0;
  if (!central) f0 = f(x);
  Mat J(d, d);
  for (int j = 0; j < d; ++j) {
    Vec xp = x;
    xp[j] += eps;
    Vec fp = f(xp);
    if (central) {
      Vec xm = x;
      xm[j] -= eps;
      J.col(j) = (fp - f(xm)) / (2.0 * eps);
    } else {
      J.col(j) = (fp - f0) / eps;
    }
  }
  return J;
}

namespace {

double spectral_norm(const Mat& J) {
  return J.jacobiSvd().singularValues()(0);
}

}  // namespace

BoundConstants estimate_bound_constants(const MixtureSpec& spec,
                                        const std::string& label,
                                        const std::vector<double>& t_grid,
                                        const Mat& probe_points, double fd_eps,
                                        double w) {
  if (!(fd_eps > 0)) throw Error("invalid-argument", "fd_eps must be > 0");
  if (probe_points.rows() < 10)
    throw Error("invalid-argument", "need at least 10 probe points");
  if (t_grid.empty()) throw Error("invalid-argument", "t_grid empty");
  int ci = spec.require_class(label);
  const FlatMixture fm_u = flatten_unconditional(spec);
  const FlatMixture fm_c = flatten_class(spec, ci);

  BoundConstants bc;
  bc.sigma_min = std::numeric_limits<double>::infinity();
  bc.lambda_max = -std::numeric_limits<double>::infinity();

  for (double t : t_grid) {
    const FieldFactors fu = make_factors(fm_u, t);
    const FieldFactors fc = make_factors(fm_c, t);
    auto v_u = [&](const Vec& x) { return field_velocity(fu, x); };
    auto v_d = [&](const Vec& x) {
      return Vec(field_velocity(fc, x) - field_velocity(fu, x));
    };
    for (int i = 0; i < probe_points.rows(); ++i) {
      Vec x = probe_points.row(i);
      Mat Ju = fd_jacobian(v_u, x, fd_eps, true);
      Mat Jd = fd_jacobian(v_d, x, fd_eps, true);
      Mat Juf = fd_jacobian(v_u, x, fd_eps, false);
      Mat Jdf = fd_jacobian(v_d, x, fd_eps, false);
      double nu = spectral_norm(Ju), nd = spectral_norm(Jd);
      if (spectral_norm(Ju - Juf) > 0.10 * std::max(nu, 1e-12) ||
          spectral_norm(Jd - Jdf) > 0.10 * std::max(nd, 1e-12))
        bc.fd_unstable = true;
      bc.L_u = std::max(bc.L_u, nu);
      bc.L_delta = std::max(bc.L_delta, nd);
      Eigen::JacobiSVD<Mat> svd(Ju);
      bc.sigma_min = std::min(
          bc.sigma_min, double(svd.singularValues()(svd.singularValues().size() - 1)));
      Eigen::EigenSolver<Mat> es(Ju + w * Jd, false);
      for (int e = 0; e < es.eigenvalues().size(); ++e)
        bc.lambda_max = std::max(bc.lambda_max, es.eigenvalues()[e].real());
      VelocityPair p = pair_from_factors(fu, fc, x);
      if (ratio_defined(p.ratio)) bc.rho_max = std::max(bc.rho_max, p.ratio);
      bc.V_max = std::max(bc.V_max, p.v_u.norm());
    }
  }

  // Extend V_max along one guided trajectory from the first probe point;
  // the sup in the bound runs along the path, not just over probes.
  try {
    Trajectory tr = sample(spec, label, GuidanceSchedule::constant(std::max(1.0, w)),
                           20, IntegratorKind::Euler, probe_points.row(0));
    for (size_t k = 0; k + 1 < tr.times.size(); ++k) {
      const FieldFactors fu = make_factors(fm_u, tr.times[k]);
      Vec x = tr.states.row(int(k));
      bc.V_max = std::max(bc.V_max, field_velocity(fu, x).norm());
    }
  } catch (const Error&) {
    // diverging reference path: keep the probe-based V_max
  }
  return bc;
}

}  // namespace flowguide
