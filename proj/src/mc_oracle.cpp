#include "flowguide/mc_oracle.hpp"

#include <cmath>
#include <vector>

#include "flowguide/rng.hpp"

namespace flowguide {

McVelocity mc_velocity(const MixtureSpec& spec, const std::string& label,
                       const Vec& x, double t, int64_t n_samples,
                       double bandwidth, uint64_t seed) {
  if (n_samples < 10000)
    throw Error("invalid-argument", "mc_velocity needs n_samples >= 1e4");
  if (!(bandwidth > 0))
    throw Error("invalid-argument", "mc_velocity needs bandwidth > 0");

  FlatMixture fm = label.empty()
                       ? flatten_unconditional(spec)
                       : flatten_class(spec, spec.require_class(label));
  const int d = fm.dim;
  std::vector<Mat> chol;
  std::vector<double> cum;
  double acc = 0;
  for (const Component& c : fm.comps) {
    chol.push_back(Eigen::LLT<Mat>(c.cov).matrixL());
    acc += c.weight;
    cum.push_back(acc);
  }

  // Fixed-size chunks with one derived RNG stream each; chunk partials are
  // combined in index order, so the result does not depend on thread count.
  const int64_t chunk = 16384;
  const int64_t n_chunks = (n_samples + chunk - 1) / chunk;
  struct Partial {
    double s0 = 0, w2 = 0;
    Vec s1, k1, k2;
  };
  std::vector<Partial> parts(static_cast<size_t>(n_chunks));

  const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);

#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < n_chunks; ++c) {
    Rng rng(derive_seed(seed, uint64_t(c)));
    Partial p;
    p.s1 = Vec::Zero(d);
    p.k1 = Vec::Zero(d);
    p.k2 = Vec::Zero(d);
    int64_t lo = c * chunk;
    int64_t hi = std::min(n_samples, lo + chunk);
    Vec x0(d), x1(d), xt(d), u(d);
    for (int64_t i = lo; i < hi; ++i) {
      double pick_u = rng.uniform() * acc;
      size_t pick = 0;
      while (pick + 1 < cum.size() && pick_u > cum[pick]) ++pick;
      Vec z = rng.normal_vec(d);
      x0 = fm.comps[pick].mean + chol[pick] * z;
      x1 = rng.normal_vec(d);
      xt = t * x1 + (1.0 - t) * x0;
      double k = std::exp(-(xt - x).squaredNorm() * inv2h2);
      u = x1 - x0;
      p.s0 += k;
      p.w2 += k * k;
      p.s1 += k * u;
      p.k1 += (k * k) * u;
      p.k2 += (k * k) * u.cwiseProduct(u);
    }
    parts[size_t(c)] = std::move(p);
  }

  double s0 = 0, w2 = 0;
  Vec s1 = Vec::Zero(d), k1 = Vec::Zero(d), k2 = Vec::Zero(d);
  for (const Partial& p : parts) {
    s0 += p.s0;
    w2 += p.w2;
    s1 += p.s1;
    k1 += p.k1;
    k2 += p.k2;
  }

  McVelocity out;
  out.estimate = s1 / s0;
  // Delta-method error of the self-normalized weighted mean:
  // var_j = sum_i k_i^2 (u_ij - est_j)^2 / (sum_i k_i)^2
  out.std_error = Vec(d);
  for (int j = 0; j < d; ++j) {
    double varnum =
        k2[j] - 2.0 * out.estimate[j] * k1[j] + out.estimate[j] * out.estimate[j] * w2;
    out.std_error[j] = std::sqrt(std::max(0.0, varnum)) / s0;
  }
  out.ess = s0 > 0 ? s0 * s0 / w2 : 0;
  out.low_ess = out.ess < 100.0;
  return out;
}

}  // namespace flowguide
