#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flowguide/metrics.hpp"
#include "flowguide/sampler.hpp"

namespace flowguide {

// ---------------------------------------------------------------- ratio spike

struct RatioSpikeRow {
  double t = 0, mean_ratio = 0, p10 = 0, p90 = 0;
};

struct RatioSpikeResult {
  std::vector<RatioSpikeRow> rows;  // one per step
  int excluded_seeds = 0;           // diverged, left out of the aggregates
  std::vector<Trajectory> trajectories;
};

// Aggregates ratios[k] across seeds per step; quantiles are linear-
// interpolation order statistics over the defined ratios.
RatioSpikeResult run_ratio_spike(const MixtureSpec& spec,
                                 const std::string& label,
                                 const GuidanceSchedule& schedule, int n_steps,
                                 int n_seeds, uint64_t seed);

// -------------------------------------------------------------- ratio groups

struct RatioGroupRow {
  std::string label;
  double low_energy_distance = 0;
  double high_energy_distance = 0;
};

struct RatioGroupResult {
  double low_group_score = 0;   // mean over classes of the low-ratio group ED
  double high_group_score = 0;
  double p_value = 0;           // one-sided permutation test, low < high
  std::vector<RatioGroupRow> rows;
};

// Per class: n_seeds_per trajectories sorted by ratios[0]; the bottom top_k
// seeds form the low-ratio group, the top top_k the high-ratio group; each
// group's terminal states are scored by energy distance against n_ref fresh
// conditional samples. Group labels start at label_start ("" = first class)
// and cover n_classes consecutive classes. The permutation test re-partitions
// each class's seeds within the class (n_perm resamples).
RatioGroupResult run_ratio_grouping(const MixtureSpec& spec,
                                    const std::string& label_start,
                                    double w_const, int n_steps, int n_classes,
                                    int n_seeds_per, int top_k, uint64_t seed,
                                    int n_ref = 512, int n_perm = 10000);

// ---------------------------------------------------------------- divergence

struct DivergenceRow {
  double w = 0;
  int seed_index = 0;
  double rho0 = 0;              // ratio at the initial state
  double delta0 = 0;            // initial pair separation (the perturbation)
  double growth_rate_fit = 0;   // LS slope of log Delta vs elapsed time
  double lower_bound_A = 0;     // lambda sigma |1 - w rho0| / (w (L_u + L_d))
  double upper_bound_rhs_at_t = 0;
  double delta_at_t = 0;
  bool upper_ok = true;         // bound held at every step in the window
  bool diverged = false;
};

struct DivergenceResult {
  std::vector<DivergenceRow> rows;
  std::vector<BoundConstants> constants;  // one per w (lambda_max depends on w)
  std::vector<double> w_values;
};

// Integrates trajectory pairs started at x1 and x1 + eps*u (u a random unit
// vector) under Constant(w) for each w; Delta(t_k) = ||x_k - y_k||. The fit
// and the upper-bound check use the steps with elapsed time <= horizon_t
// (the bounds are local to the start). Bound constants are estimated on the
// batch's own initial states at the window's time grid.
DivergenceResult run_divergence(const MixtureSpec& spec,
                                const std::string& label,
                                const std::vector<double>& w_values,
                                double perturbation_eps, int n_steps,
                                double horizon_t, int n_seeds, uint64_t seed);

// -------------------------------------------------------------- greedy search

struct GreedyConfig {
  int n_search_steps = 3;          // N: steps whose scale gets optimized
  int total_steps = 10;            // T
  double default_w = 7.0;          // scale used for not-yet-chosen steps
  std::vector<double> grid;        // candidate scales, ascending, contains
                                   // default_w so the incumbent is re-tested
  static GreedyConfig standard();  // N=3, T=10, grid 1,1.5,...,9
};

std::vector<std::string> validate_greedy(const GreedyConfig& cfg);

struct GreedyStep {
  std::string label;
  int k = 0;
  double rho_k = 0;         // seed-averaged ratio at step k, winning schedule
  double w_star = 0;
  double best_quality = 0;  // non-increasing in k by construction
};

struct GreedyResult {
  std::vector<GreedyStep> steps;                  // per label, then per k
  std::vector<std::pair<double, double>> pairs;   // pooled (rho_k, w_k*)
  FitResult fit;
  bool fit_ok = false;
  std::string fit_error;
};

// Per label and step k = 0..N-1: every grid candidate is spliced into the
// incumbent per-step scale table, scored by sampling n_eval_seeds
// trajectories (the same x1 draws for all candidates and steps, so the
// incumbent reproduces the previous winner exactly) and taking the quality
// metric against n_ref reference samples; ties go to the smallest w.
// quality: "energy_distance" (default) or "mean_error"; lower is better.
GreedyResult run_greedy_search(const MixtureSpec& spec,
                               const std::vector<std::string>& labels,
                               const GreedyConfig& cfg,
                               const std::string& quality, int n_eval_seeds,
                               uint64_t seed, int n_ref = 512);

// --------------------------------------------------- schedule comparison

struct CompareRow {
  std::string schedule;
  int n_steps = 0;
  double energy_distance = 0;  // mean over labels
  double mean_error = 0;
};

struct CompareResult {
  std::vector<CompareRow> rows;
};

// Full factorial over (schedule, step count); per cell, scores terminal
// samples per label against n_ref conditional references and averages the
// scores over labels.
CompareResult run_schedule_comparison(const MixtureSpec& spec,
                                      const std::vector<std::string>& labels,
                                      const std::vector<GuidanceSchedule>& schedules,
                                      const std::vector<int>& step_counts,
                                      int n_seeds, uint64_t seed,
                                      int n_ref = 512);

// ------------------------------------------------------- hyperparameter sweep

struct SweepRow {
  double w_max = 0, alpha = 0;
  double energy_distance = 0, mean_error = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepRow best, worst;  // by energy distance
};

// 2-D grid over Raag(w_max, alpha) at a fixed step count; spread between the
// best and worst cell is reported, not asserted.
SweepResult run_sweep(const MixtureSpec& spec,
                      const std::vector<std::string>& labels,
                      const std::vector<double>& w_max_values,
                      const std::vector<double>& alpha_values, int n_steps,
                      int n_seeds, uint64_t seed, int n_ref = 512);

// ------------------------------------------------------------ config + files

struct RunConfig {
  std::string experiment;  // ratio-spike|ratio-group|divergence|greedy|
                           // compare|sweep
  std::string spec_path;
  std::string out_dir;
  uint64_t seed = 0;
  nlohmann::json params;   // experiment-specific block
};

RunConfig config_from_json(const nlohmann::json& j);  // lists every violation
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::string& path);

// FNV-1a 64 over the canonical (sorted-key, compact) JSON dump; stamped into
// every CSV ("# config_hash=...") and summary for exact replay.
std::string config_hash_hex(const nlohmann::json& canonical);

struct RunOutput {
  std::string summary_line;   // printed by the CLI on success
  nlohmann::json summary;     // also written to out_dir/summary.json
};

// Validates, executes, and writes results.csv + summary.json (plus
// trajectories.csv for ratio-spike and states.json when dump_states).
// Throws Error with config-* kinds for bad configs.
RunOutput run_experiment(const RunConfig& cfg, bool force, bool dump_states);

}  // namespace flowguide
