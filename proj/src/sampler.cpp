#include "flowguide/sampler.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "flowguide/rng.hpp"

namespace flowguide {

IntegratorKind integrator_from_string(const std::string& s) {
  if (s == "euler") return IntegratorKind::Euler;
  if (s == "heun") return IntegratorKind::Heun;
  throw Error("invalid-argument", "unknown integrator '" + s + "'");
}

std::string integrator_name(IntegratorKind k) {
  return k == IntegratorKind::Euler ? "euler" : "heun";
}

namespace {

// All rows advance through the same time grid, so the per-t Cholesky
// factors are built once per step and shared across the batch.
std::vector<Trajectory> run_batch(const MixtureSpec& spec, int ci,
                                  const GuidanceSchedule& schedule,
                                  int n_steps, IntegratorKind integrator,
                                  const Mat& X1) {
  if (n_steps < 1) throw Error("invalid-argument", "n_steps must be >= 1");
  require_valid(schedule);
  if (schedule.kind == ScheduleKind::Table &&
      int(schedule.table.size()) < n_steps)
    throw Error("index-out-of-range",
                "table schedule shorter than n_steps");

  const int n = int(X1.rows());
  const int d = spec.dim;
  const FlatMixture fm_u = flatten_unconditional(spec);
  const FlatMixture fm_c = flatten_class(spec, ci);

  std::vector<double> times(size_t(n_steps) + 1);
  for (int k = 0; k <= n_steps; ++k) times[size_t(k)] = 1.0 - double(k) / n_steps;
  times[0] = 1.0;
  times[size_t(n_steps)] = 0.0;

  std::vector<Trajectory> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Trajectory& tr = out[size_t(i)];
    tr.times = times;
    tr.states = Mat::Zero(n_steps + 1, d);
    tr.states.row(0) = X1.row(i);
    tr.ratios.assign(size_t(n_steps), undefined_ratio());
    tr.scales.assign(size_t(n_steps), 1.0);
  }

  Mat X = X1;
  for (int k = 0; k < n_steps; ++k) {
    const double t = times[size_t(k)];
    const double t1 = times[size_t(k) + 1];
    const double dt = t - t1;
    const FieldFactors fu = make_factors(fm_u, t);
    const FieldFactors fc = make_factors(fm_c, t);
    FieldFactors fu1, fc1;
    if (integrator == IntegratorKind::Heun) {
      fu1 = make_factors(fm_u, t1);
      fc1 = make_factors(fm_c, t1);
    }

#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      Trajectory& tr = out[size_t(i)];
      if (tr.diverged) {
        tr.states.row(k + 1) = X.row(i);
        continue;
      }
      Vec x = X.row(i);
      VelocityPair p = pair_from_factors(fu, fc, x);
      double w = scale_at(schedule, k, p.ratio);
      Vec v = cfg_combine(p.v_u, p.v_c, w);
      Vec xn(d);
      if (integrator == IntegratorKind::Euler) {
        xn = x - dt * v;
      } else {
        Vec xp = x - dt * v;
        VelocityPair p1 = pair_from_factors(fu1, fc1, xp);
        double w1 = scale_at(schedule, k, p1.ratio);
        Vec v1 = cfg_combine(p1.v_u, p1.v_c, w1);
        xn = x - 0.5 * dt * (v + v1);
      }
      tr.ratios[size_t(k)] = p.ratio;
      tr.scales[size_t(k)] = w;
      if (!xn.allFinite()) {
        tr.diverged = true;
        tr.diverged_step = k;
        xn = x;  // freeze at the last finite state
      }
      X.row(i) = xn.transpose();
      tr.states.row(k + 1) = xn.transpose();
    }
  }
  return out;
}

}  // namespace

Trajectory sample(const MixtureSpec& spec, const std::string& label,
                  const GuidanceSchedule& schedule, int n_steps,
                  IntegratorKind integrator, const Vec& x1) {
  int ci = spec.require_class(label);
  Mat X1 = x1.transpose();
  Trajectory tr =
      std::move(run_batch(spec, ci, schedule, n_steps, integrator, X1)[0]);
  if (tr.diverged)
    throw Error("non-finite-state",
                "non-finite state at step " + std::to_string(tr.diverged_step));
  return tr;
}

std::vector<Trajectory> sample_batch(const MixtureSpec& spec,
                                     const std::string& label,
                                     const GuidanceSchedule& schedule,
                                     int n_steps, IntegratorKind integrator,
                                     int n_seeds, uint64_t seed) {
  int ci = spec.require_class(label);
  if (n_seeds < 0) throw Error("invalid-argument", "n_seeds must be >= 0");
  Mat X1(n_seeds, spec.dim);
  for (int i = 0; i < n_seeds; ++i) {
    Rng rng(derive_seed(seed, uint64_t(i)));
    X1.row(i) = rng.normal_vec(spec.dim).transpose();
  }
  if (n_seeds == 0) return {};
  return run_batch(spec, ci, schedule, n_steps, integrator, X1);
}

std::vector<Trajectory> sample_batch_serial(const MixtureSpec& spec,
                                            const std::string& label,
                                            const GuidanceSchedule& schedule,
                                            int n_steps,
                                            IntegratorKind integrator,
                                            int n_seeds, uint64_t seed) {
  std::vector<Trajectory> out;
  for (int i = 0; i < n_seeds; ++i) {
    Rng rng(derive_seed(seed, uint64_t(i)));
    Vec x1 = rng.normal_vec(spec.dim);
    try {
      out.push_back(sample(spec, label, schedule, n_steps, integrator, x1));
    } catch (const Error& e) {
      if (e.kind != "non-finite-state") throw;
      // rebuild the flagged trajectory so the batch keeps going
      int ci = spec.require_class(label);
      Mat X1 = x1.transpose();
      out.push_back(std::move(
          run_batch(spec, ci, schedule, n_steps, integrator, X1)[0]));
    }
  }
  return out;
}

namespace {

void put(std::string& line, double v) {
  char buf[40];
  snprintf(buf, sizeof buf, "%.17g", v);
  line += buf;
}

}  // namespace

void write_trajectory_csv(std::ostream& os,
                          const std::vector<Trajectory>& batch) {
  os << "seed,step,t,scale,ratio,state_norm,divergence_flag\n";
  for (size_t i = 0; i < batch.size(); ++i) {
    const Trajectory& tr = batch[i];
    const int n_steps = int(tr.ratios.size());
    for (int k = 0; k < n_steps; ++k) {
      std::string line = std::to_string(i) + "," + std::to_string(k) + ",";
      put(line, tr.times[size_t(k)]);
      line += ",";
      put(line, tr.scales[size_t(k)]);
      line += ",";
      put(line, tr.ratios[size_t(k)]);
      line += ",";
      put(line, tr.states.row(k).norm());
      line += ",";
      line += (tr.diverged && k >= tr.diverged_step) ? "1" : "0";
      os << line << "\n";
    }
  }
}

nlohmann::json states_to_json(const std::vector<Trajectory>& batch) {
  nlohmann::json j;
  j["times"] = batch.empty() ? std::vector<double>{} : batch[0].times;
  j["trajectories"] = nlohmann::json::array();
  for (size_t i = 0; i < batch.size(); ++i) {
    const Trajectory& tr = batch[i];
    nlohmann::json jt;
    jt["seed"] = i;
    jt["diverged"] = tr.diverged;
    jt["diverged_step"] = tr.diverged_step;
    std::vector<std::vector<double>> states;
    for (int k = 0; k < tr.states.rows(); ++k) {
      std::vector<double> row(size_t(tr.states.cols()));
      for (int c = 0; c < tr.states.cols(); ++c) row[size_t(c)] = tr.states(k, c);
      states.push_back(std::move(row));
    }
    jt["states"] = states;
    j["trajectories"].push_back(std::move(jt));
  }
  return j;
}

Mat terminal_states(const std::vector<Trajectory>& batch) {
  if (batch.empty()) return Mat(0, 0);
  Mat out(int(batch.size()), batch[0].states.cols());
  for (size_t i = 0; i < batch.size(); ++i)
    out.row(int(i)) = batch[i].states.row(batch[i].states.rows() - 1);
  return out;
}

}  // namespace flowguide
