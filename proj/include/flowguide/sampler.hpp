#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "flowguide/oracle.hpp"
#include "flowguide/schedule.hpp"
#include "json.hpp"

namespace flowguide {

enum class IntegratorKind { Euler, Heun };

IntegratorKind integrator_from_string(const std::string& s);
std::string integrator_name(IntegratorKind k);

// Reverse-time trajectory on the uniform grid t_k = 1 - k/n_steps.
// ratios[k] and scales[k] are measured at the pre-step state x_k, so both
// have n_steps entries while states has n_steps+1. A trajectory that hits a
// non-finite state is frozen at its last finite state; from that step on
// ratios are NaN and scales 1.
struct Trajectory {
  std::vector<double> times;   // n_steps+1, strictly decreasing, 1 ... 0
  Mat states;                  // (n_steps+1) x d, one state per row
  std::vector<double> ratios;  // n_steps; NaN = undefined ratio
  std::vector<double> scales;  // n_steps
  bool diverged = false;
  int diverged_step = -1;

  const Vec terminal() const { return states.row(states.rows() - 1); }
};

// Euler: x_{k+1} = x_k - dt * v_cfg(x_k, t_k)  (v points toward noise; we
// integrate toward data). Heun averages the slopes at (x_k, t_k) and at the
// Euler predictor (x~, t_{k+1}), re-evaluating the schedule at the
// predictor's ratio. Throws non-finite-state with the step index.
Trajectory sample(const MixtureSpec& spec, const std::string& label,
                  const GuidanceSchedule& schedule, int n_steps,
                  IntegratorKind integrator, const Vec& x1);

// x1 ~ N(0, I) per seed from streams derived as derive_seed(seed, i);
// failures are flagged on the trajectory, never abort the batch. Results
// are identical for any thread count.
std::vector<Trajectory> sample_batch(const MixtureSpec& spec,
                                     const std::string& label,
                                     const GuidanceSchedule& schedule,
                                     int n_steps, IntegratorKind integrator,
                                     int n_seeds, uint64_t seed);

// Plain loop over sample(); reference for testing the parallel batch.
std::vector<Trajectory> sample_batch_serial(const MixtureSpec& spec,
                                            const std::string& label,
                                            const GuidanceSchedule& schedule,
                                            int n_steps,
                                            IntegratorKind integrator,
                                            int n_seeds, uint64_t seed);

// One row per step: seed,step,t,scale,ratio,state_norm,divergence_flag
void write_trajectory_csv(std::ostream& os,
                          const std::vector<Trajectory>& batch);

// Full states as nested arrays, for --dump-states.
nlohmann::json states_to_json(const std::vector<Trajectory>& batch);

// n_traj x d matrix of terminal states.
Mat terminal_states(const std::vector<Trajectory>& batch);

}  // namespace flowguide
