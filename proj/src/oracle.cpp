#include "flowguide/oracle.hpp"

#include <cmath>

#include "flowguide/rng.hpp"

namespace flowguide {

FlatMixture flatten_unconditional(const MixtureSpec& spec) {
  FlatMixture fm;
  fm.dim = spec.dim;
  for (size_t i = 0; i < spec.classes.size(); ++i)
    for (const Component& c : spec.classes[i].components) {
      Component pc = c;
      pc.weight = spec.class_priors[i] * c.weight;
      fm.comps.push_back(std::move(pc));
    }
  return fm;
}

FlatMixture flatten_class(const MixtureSpec& spec, int ci) {
  FlatMixture fm;
  fm.dim = spec.dim;
  fm.comps = spec.classes[ci].components;
  return fm;
}

FieldFactors make_factors(const FlatMixture& fm, double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw Error("invalid-argument", "t outside [0, 1]");
  FieldFactors f;
  f.t = t;
  f.dim = fm.dim;
  const double s = 1.0 - t;
  const double log2pi = 1.8378770664093454836;
  f.comps.reserve(fm.comps.size());
  for (const Component& c : fm.comps) {
    FieldFactors::PerComp pc;
    pc.mean = c.mean;
    pc.cov = c.cov;
    pc.marginal_mean = s * c.mean;
    Mat M = (s * s) * c.cov + (t * t) * Mat::Identity(fm.dim, fm.dim);
    pc.llt.compute(M);
    if (pc.llt.info() != Eigen::Success)
      throw Error("degenerate-marginal",
                  "marginal covariance not positive definite (t=" +
                      std::to_string(t) + ")");
    double logdet = 0;
    for (int i = 0; i < fm.dim; ++i)
      logdet += 2.0 * std::log(pc.llt.matrixLLT()(i, i));
    pc.log_norm = std::log(c.weight) - 0.5 * logdet - 0.5 * fm.dim * log2pi;
    f.comps.push_back(std::move(pc));
  }
  return f;
}

namespace {

// Shared per-point workspace: responsibilities r_i (log-sum-exp), solved
// innovations y_i = M^{-1}(x - (1-t)mu_i), per-component velocities.
struct Eval {
  std::vector<double> resp;
  std::vector<Vec> y;
  std::vector<Vec> v;
};

Eval evaluate(const FieldFactors& f, const Vec& x) {
  const double t = f.t, s = 1.0 - t;
  const size_t n = f.comps.size();
  Eval ev;
  ev.resp.resize(n);
  ev.y.resize(n);
  ev.v.resize(n);
  std::vector<double> ll(n);
  double maxll = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n; ++i) {
    const auto& pc = f.comps[i];
    Vec z = x - pc.marginal_mean;
    Vec y = pc.llt.solve(z);
    ll[i] = pc.log_norm - 0.5 * z.dot(y);
    ev.v[i] = t * y - s * (pc.cov * y) - pc.mean;
    ev.y[i] = std::move(y);
    if (ll[i] > maxll) maxll = ll[i];
  }
  double norm = 0;
  for (size_t i = 0; i < n; ++i) {
    ev.resp[i] = std::exp(ll[i] - maxll);
    norm += ev.resp[i];
  }
  for (size_t i = 0; i < n; ++i) ev.resp[i] /= norm;
  return ev;
}

}  // namespace

Vec field_velocity(const FieldFactors& f, const Vec& x) {
  Eval ev = evaluate(f, x);
  Vec v = Vec::Zero(f.dim);
  for (size_t i = 0; i < f.comps.size(); ++i) v += ev.resp[i] * ev.v[i];
  return v;
}

Vec field_responsibilities(const FieldFactors& f, const Vec& x) {
  Eval ev = evaluate(f, x);
  Vec r(int(ev.resp.size()));
  for (size_t i = 0; i < ev.resp.size(); ++i) r[int(i)] = ev.resp[i];
  return r;
}

Mat field_jacobian(const FieldFactors& f, const Vec& x) {
  // d/dx [sum_i r_i v_i] = sum_i r_i G_i + sum_i r_i v_i (g_i - gbar)^T
  // with G_i = (t I - (1-t) S_i) M_i^{-1} and g_i = grad_x log(w_i N_i)
  // = -y_i.
  const double t = f.t, s = 1.0 - t;
  Eval ev = evaluate(f, x);
  Vec gbar = Vec::Zero(f.dim);
  for (size_t i = 0; i < f.comps.size(); ++i) gbar -= ev.resp[i] * ev.y[i];
  Mat J = Mat::Zero(f.dim, f.dim);
  Mat I = Mat::Identity(f.dim, f.dim);
  for (size_t i = 0; i < f.comps.size(); ++i) {
    const auto& pc = f.comps[i];
    Mat G = pc.llt.solve(t * I - s * pc.cov);
    J += ev.resp[i] * G;
    J += ev.resp[i] * ev.v[i] * (-ev.y[i] - gbar).transpose();
  }
  return J;
}

Vec unconditional_velocity(const MixtureSpec& spec, const Vec& x, double t) {
  return field_velocity(make_factors(flatten_unconditional(spec), t), x);
}

Vec conditional_velocity(const MixtureSpec& spec, const std::string& label,
                         const Vec& x, double t) {
  int ci = spec.require_class(label);
  return field_velocity(make_factors(flatten_class(spec, ci), t), x);
}

VelocityPair pair_from_factors(const FieldFactors& fu, const FieldFactors& fc,
                               const Vec& x) {
  VelocityPair p;
  p.v_u = field_velocity(fu, x);
  p.v_c = field_velocity(fc, x);
  p.delta = p.v_c - p.v_u;
  double nu = p.v_u.norm();
  p.ratio = nu > 0 ? p.delta.norm() / nu : undefined_ratio();
  return p;
}

VelocityPair velocity_pair(const MixtureSpec& spec, const std::string& label,
                           const Vec& x, double t) {
  int ci = spec.require_class(label);
  return pair_from_factors(make_factors(flatten_unconditional(spec), t),
                           make_factors(flatten_class(spec, ci), t), x);
}

double initial_ratio_closed_form(const MixtureSpec& spec,
                                 const std::string& label, const Vec& x1) {
  int ci = spec.require_class(label);
  Vec mu_u = spec.mixture_mean();
  double den = (x1 - mu_u).norm();
  if (den == 0.0)
    throw Error("division-by-zero",
                "x1 equals the unconditional mean; initial ratio undefined");
  return (spec.class_mean(ci) - mu_u).norm() / den;
}

Mat sample_data(const MixtureSpec& spec, const std::string& label, int n,
                uint64_t seed) {
  FlatMixture fm = label.empty()
                       ? flatten_unconditional(spec)
                       : flatten_class(spec, spec.require_class(label));
  std::vector<Mat> chol;
  std::vector<double> cum;
  double acc = 0;
  for (const Component& c : fm.comps) {
    chol.push_back(Eigen::LLT<Mat>(c.cov).matrixL());
    acc += c.weight;
    cum.push_back(acc);
  }
  Rng rng(seed);
  Mat out(n, fm.dim);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * acc;
    size_t pick = 0;
    while (pick + 1 < cum.size() && u > cum[pick]) ++pick;
    Vec z = rng.normal_vec(fm.dim);
    out.row(i) = (fm.comps[pick].mean + chol[pick] * z).transpose();
  }
  return out;
}

Mat sample_noise(int n, int dim, uint64_t seed) {
  Rng rng(seed);
  Mat out(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) out(i, j) = rng.normal();
  return out;
}

}  // namespace flowguide
