#include "flowguide/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "flowguide/rng.hpp"

namespace fs = std::filesystem;

namespace flowguide {

namespace {

std::string fmt17(double v) {
  char buf[40];
  snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

// Linear-interpolation order statistic on a sorted vector.
double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double h = q * double(v.size() - 1);
  size_t lo = size_t(std::floor(h));
  size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = h - double(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

}  // namespace

// ---------------------------------------------------------------- ratio spike

RatioSpikeResult run_ratio_spike(const MixtureSpec& spec,
                                 const std::string& label,
                                 const GuidanceSchedule& schedule, int n_steps,
                                 int n_seeds, uint64_t seed) {
  if (n_seeds < 50)
    throw Error("invalid-argument", "ratio spike needs n_seeds >= 50");
  RatioSpikeResult res;
  res.trajectories =
      sample_batch(spec, label, schedule, n_steps, IntegratorKind::Euler,
                   n_seeds, derive_seed(seed, "spike-x1"));
  for (const Trajectory& tr : res.trajectories)
    if (tr.diverged) ++res.excluded_seeds;
  for (int k = 0; k < n_steps; ++k) {
    std::vector<double> vals;
    vals.reserve(size_t(n_seeds));
    for (const Trajectory& tr : res.trajectories) {
      if (tr.diverged) continue;  // excluded seeds
      double r = tr.ratios[size_t(k)];
      if (ratio_defined(r)) vals.push_back(r);
    }
    std::sort(vals.begin(), vals.end());
    RatioSpikeRow row;
    row.t = res.trajectories.empty() ? 1.0 - double(k) / n_steps
                                     : res.trajectories[0].times[size_t(k)];
    row.mean_ratio = mean_of(vals);
    row.p10 = quantile_sorted(vals, 0.10);
    row.p90 = quantile_sorted(vals, 0.90);
    res.rows.push_back(row);
  }
  return res;
}

// -------------------------------------------------------------- ratio groups

RatioGroupResult run_ratio_grouping(const MixtureSpec& spec,
                                    const std::string& label_start,
                                    double w_const, int n_steps, int n_classes,
                                    int n_seeds_per, int top_k, uint64_t seed,
                                    int n_ref, int n_perm) {
  if (top_k < 1 || n_seeds_per < 2 * top_k)
    throw Error("insufficient-seeds",
                "need n_seeds_per >= 2*top_k to form disjoint groups");
  int start = label_start.empty() ? 0 : spec.require_class(label_start);
  if (n_classes < 1 || start + n_classes > int(spec.classes.size()))
    throw Error("invalid-argument",
                "class range [" + std::to_string(start) + ", " +
                    std::to_string(start + n_classes) + ") out of bounds");

  // Per class: union of the 2*top_k extreme-ratio seeds, with the cross and
  // pairwise distance sums cached so the permutation test only re-partitions
  // indices instead of recomputing energy distances from scratch.
  struct ClassCache {
    std::vector<double> cross;  // per member: sum of distances to references
    Mat pair;                   // member-to-member distances
    double ref_term = 0;        // E||B - B'|| over the reference sample
    double k_count = 0, r_count = 0;
  };
  std::vector<ClassCache> caches;
  RatioGroupResult res;
  std::vector<double> lows, highs;

  for (int ci = start; ci < start + n_classes; ++ci) {
    const std::string& label = spec.classes[size_t(ci)].label;
    auto batch = sample_batch(spec, label, GuidanceSchedule::constant(w_const),
                              n_steps, IntegratorKind::Euler, n_seeds_per,
                              derive_seed(seed, "group-x1-" + label));
    Mat term = terminal_states(batch);
    Mat ref = sample_data(spec, label, n_ref, derive_seed(seed, "group-ref-" + label));

    std::vector<int> order(static_cast<size_t>(n_seeds_per));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      double ra = batch[size_t(a)].ratios[0], rb = batch[size_t(b)].ratios[0];
      if (!ratio_defined(ra)) return false;  // undefined sorts high
      if (!ratio_defined(rb)) return true;
      return ra < rb;
    });

    // members: bottom top_k (low ratio) first, then top top_k (high ratio)
    std::vector<int> members;
    for (int i = 0; i < top_k; ++i) members.push_back(order[size_t(i)]);
    for (int i = n_seeds_per - top_k; i < n_seeds_per; ++i)
      members.push_back(order[size_t(i)]);

    ClassCache cc;
    cc.k_count = top_k;
    cc.r_count = n_ref;
    const int m = int(members.size());
    cc.cross.resize(size_t(m));
    cc.pair = Mat::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      double s = 0;
      for (int r = 0; r < n_ref; ++r)
        s += (term.row(members[size_t(i)]) - ref.row(r)).norm();
      cc.cross[size_t(i)] = s;
      for (int j = 0; j < m; ++j)
        cc.pair(i, j) =
            (term.row(members[size_t(i)]) - term.row(members[size_t(j)])).norm();
    }
    double bb = 0;
    for (int r = 0; r < n_ref; ++r)
      for (int r2 = 0; r2 < n_ref; ++r2)
        bb += (ref.row(r) - ref.row(r2)).norm();
    cc.ref_term = bb / (double(n_ref) * n_ref);

    auto group_ed = [&](const std::vector<int>& idx) {
      double cross = 0, pair = 0;
      for (int i : idx) cross += cc.cross[size_t(i)];
      for (int i : idx)
        for (int j : idx) pair += cc.pair(i, j);
      double k = double(top_k);
      return 2.0 * cross / (k * n_ref) - pair / (k * k) - cc.ref_term;
    };
    std::vector<int> low_idx(static_cast<size_t>(top_k));
    std::vector<int> high_idx(static_cast<size_t>(top_k));
    std::iota(low_idx.begin(), low_idx.end(), 0);
    std::iota(high_idx.begin(), high_idx.end(), top_k);
    double ed_low = group_ed(low_idx), ed_high = group_ed(high_idx);
    lows.push_back(ed_low);
    highs.push_back(ed_high);
    res.rows.push_back({label, ed_low, ed_high});
    caches.push_back(std::move(cc));
  }

  res.low_group_score = mean_of(lows);
  res.high_group_score = mean_of(highs);
  double observed = res.low_group_score - res.high_group_score;

  // One-sided permutation test (is the low group really better): within each
  // class, randomly re-partition the same 2*top_k seeds and compare pooled
  // means.
  Rng prng(derive_seed(seed, "group-perm"));
  int hits = 0;
  const int m = 2 * top_k;
  std::vector<int> idx(static_cast<size_t>(m));
  for (int p = 0; p < n_perm; ++p) {
    double low_sum = 0, high_sum = 0;
    for (const ClassCache& cc : caches) {
      std::iota(idx.begin(), idx.end(), 0);
      for (int i = m - 1; i > 0; --i) {
        int j = int(prng.next() % uint64_t(i + 1));
        std::swap(idx[size_t(i)], idx[size_t(j)]);
      }
      double cross_a = 0, pair_a = 0, cross_b = 0, pair_b = 0;
      for (int i = 0; i < top_k; ++i) cross_a += cc.cross[size_t(idx[size_t(i)])];
      for (int i = top_k; i < m; ++i) cross_b += cc.cross[size_t(idx[size_t(i)])];
      for (int i = 0; i < top_k; ++i)
        for (int j = 0; j < top_k; ++j)
          pair_a += cc.pair(idx[size_t(i)], idx[size_t(j)]);
      for (int i = top_k; i < m; ++i)
        for (int j = top_k; j < m; ++j)
          pair_b += cc.pair(idx[size_t(i)], idx[size_t(j)]);
      double k = double(top_k);
      low_sum += 2.0 * cross_a / (k * cc.r_count) - pair_a / (k * k) - cc.ref_term;
      high_sum += 2.0 * cross_b / (k * cc.r_count) - pair_b / (k * k) - cc.ref_term;
    }
    double diff = (low_sum - high_sum) / double(caches.size());
    if (diff <= observed) ++hits;
  }
  res.p_value = double(1 + hits) / double(1 + n_perm);
  return res;
}

// ---------------------------------------------------------------- divergence

DivergenceResult run_divergence(const MixtureSpec& spec,
                                const std::string& label,
                                const std::vector<double>& w_values,
                                double perturbation_eps, int n_steps,
                                double horizon_t, int n_seeds, uint64_t seed) {
  if (!(perturbation_eps > 0))
    throw Error("invalid-argument", "perturbation_eps must be > 0");
  if (w_values.empty())
    throw Error("invalid-argument", "w_values empty");
  for (double w : w_values)
    if (!(w > 0))
      throw Error("invalid-argument", "w values must be > 0");
  if (n_steps < 1) throw Error("invalid-argument", "n_steps must be >= 1");
  if (n_seeds < 10)
    throw Error("invalid-argument",
                "need n_seeds >= 10 (the initial states double as the probe "
                "set for the bound constants)");
  int ci = spec.require_class(label);
  const int d = spec.dim;
  const FlatMixture fm_u = flatten_unconditional(spec);
  const FlatMixture fm_c = flatten_class(spec, ci);

  Mat X1(n_seeds, d);
  Mat U(n_seeds, d);
  for (int i = 0; i < n_seeds; ++i) {
    Rng rx(derive_seed(derive_seed(seed, "div-x1"), uint64_t(i)));
    X1.row(i) = rx.normal_vec(d).transpose();
    Rng ru(derive_seed(derive_seed(seed, "div-u"), uint64_t(i)));
    Vec u = ru.normal_vec(d);
    U.row(i) = (u / u.norm()).transpose();
  }

  std::vector<double> times(size_t(n_steps) + 1);
  for (int k = 0; k <= n_steps; ++k) times[size_t(k)] = 1.0 - double(k) / n_steps;
  // window steps: elapsed time 1 - t_k within the horizon
  int K = 0;
  for (int k = 0; k <= n_steps; ++k)
    if (1.0 - times[size_t(k)] <= horizon_t + 1e-12) K = k;
  if (K < 1)
    throw Error("invalid-argument", "horizon_t shorter than one step");

  DivergenceResult res;
  res.w_values = w_values;
  Mat probes = X1.topRows(std::min(n_seeds, 20));

  for (double w : w_values) {
    Mat X = X1;
    Mat Y = X1 + perturbation_eps * U;
    Mat delta(n_seeds, n_steps + 1);
    for (int i = 0; i < n_seeds; ++i)
      delta(i, 0) = (X.row(i) - Y.row(i)).norm();
    std::vector<double> rho0(size_t(n_seeds), 0.0);
    std::vector<bool> dead(size_t(n_seeds), false);
    std::vector<int> dead_at(size_t(n_seeds), -1);

    for (int k = 0; k < n_steps; ++k) {
      const double t = times[size_t(k)];
      const double dt = t - times[size_t(k) + 1];
      const FieldFactors fu = make_factors(fm_u, t);
      const FieldFactors fc = make_factors(fm_c, t);
#pragma omp parallel for schedule(static)
      for (int i = 0; i < n_seeds; ++i) {
        if (dead[size_t(i)]) {
          delta(i, k + 1) = delta(i, k);
          continue;
        }
        Vec x = X.row(i), y = Y.row(i);
        VelocityPair px = pair_from_factors(fu, fc, x);
        VelocityPair py = pair_from_factors(fu, fc, y);
        if (k == 0) rho0[size_t(i)] = px.ratio;
        Vec xn = x - dt * cfg_combine(px.v_u, px.v_c, w);
        Vec yn = y - dt * cfg_combine(py.v_u, py.v_c, w);
        if (!xn.allFinite() || !yn.allFinite()) {
          dead[size_t(i)] = true;
          dead_at[size_t(i)] = k;
          delta(i, k + 1) = delta(i, k);
          continue;
        }
        X.row(i) = xn.transpose();
        Y.row(i) = yn.transpose();
        delta(i, k + 1) = (xn - yn).norm();
      }
    }

    std::vector<double> t_window(times.begin(), times.begin() + K + 1);
    BoundConstants bc = estimate_bound_constants(spec, label, t_window, probes,
                                                 1e-5, w);
    res.constants.push_back(bc);

    for (int i = 0; i < n_seeds; ++i) {
      DivergenceRow row;
      row.w = w;
      row.seed_index = i;
      row.rho0 = rho0[size_t(i)];
      row.delta0 = delta(i, 0);
      row.diverged = dead[size_t(i)];

      // LS slope of log Delta against elapsed time over the window
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      int n_fit = 0;
      int k_max = dead[size_t(i)] ? std::min(K, dead_at[size_t(i)]) : K;
      for (int k = 0; k <= k_max; ++k) {
        double dl = delta(i, k);
        if (!(dl > 0) || !std::isfinite(dl)) continue;
        double tau = 1.0 - times[size_t(k)];
        double ld = std::log(dl);
        sx += tau;
        sy += ld;
        sxx += tau * tau;
        sxy += tau * ld;
        ++n_fit;
      }
      row.growth_rate_fit =
          n_fit >= 2 ? (n_fit * sxy - sx * sy) / (n_fit * sxx - sx * sx)
                     : std::numeric_limits<double>::quiet_NaN();

      double rho = ratio_defined(row.rho0) ? row.rho0 : 0.0;
      row.lower_bound_A = bc.lambda_max * bc.sigma_min *
                          std::abs(1.0 - w * rho) /
                          (w * (bc.L_u + bc.L_delta));

      double growth_coef = bc.L_u * (1.0 + w * bc.rho_max);
      bool ok = true;
      for (int k = 0; k <= k_max; ++k) {
        double tau = 1.0 - times[size_t(k)];
        double rhs = (2.0 * w * bc.rho_max * bc.V_max * tau + row.delta0) *
                     std::exp(growth_coef * tau);
        if (k == k_max) row.upper_bound_rhs_at_t = rhs;
        if (delta(i, k) > rhs * (1.0 + 1e-9)) ok = false;
      }
      row.upper_ok = ok;
      row.delta_at_t = delta(i, k_max);
      res.rows.push_back(row);
    }
  }
  return res;
}

// -------------------------------------------------------------- greedy search

GreedyConfig GreedyConfig::standard() {
  GreedyConfig cfg;
  cfg.n_search_steps = 3;
  cfg.total_steps = 10;
  cfg.default_w = 7.0;
  for (int i = 0; i <= 16; ++i) cfg.grid.push_back(1.0 + 0.5 * i);
  return cfg;
}

std::vector<std::string> validate_greedy(const GreedyConfig& cfg) {
  std::vector<std::string> errs;
  if (cfg.n_search_steps < 1) errs.push_back("n_search_steps must be >= 1");
  if (cfg.total_steps < cfg.n_search_steps)
    errs.push_back("total_steps must be >= n_search_steps");
  if (cfg.grid.empty()) errs.push_back("grid empty");
  for (size_t i = 0; i < cfg.grid.size(); ++i) {
    if (!(cfg.grid[i] >= 1) || !std::isfinite(cfg.grid[i]))
      errs.push_back("grid[" + std::to_string(i) + "] must be finite and >= 1");
    if (i > 0 && !(cfg.grid[i] > cfg.grid[i - 1]))
      errs.push_back("grid must be strictly ascending");
  }
  if (std::find(cfg.grid.begin(), cfg.grid.end(), cfg.default_w) ==
      cfg.grid.end())
    errs.push_back(
        "grid must contain default_w so the incumbent stays a candidate");
  return errs;
}

GreedyResult run_greedy_search(const MixtureSpec& spec,
                               const std::vector<std::string>& labels,
                               const GreedyConfig& cfg,
                               const std::string& quality, int n_eval_seeds,
                               uint64_t seed, int n_ref) {
  {
    std::vector<std::string> errs = validate_greedy(cfg);
    if (!errs.empty()) {
      std::string msg;
      for (const std::string& e : errs) {
        if (!msg.empty()) msg += "; ";
        msg += e;
      }
      throw Error("invalid-argument", msg);
    }
  }
  if (labels.empty()) throw Error("invalid-argument", "labels empty");
  if (quality != "energy_distance" && quality != "mean_error")
    throw Error("invalid-argument",
                "quality must be energy_distance or mean_error");
  if (n_eval_seeds < 2)
    throw Error("invalid-argument", "n_eval_seeds must be >= 2");

  GreedyResult res;
  for (const std::string& label : labels) {
    int ci = spec.require_class(label);
    // One x1 set per label, reused by every candidate at every step: the
    // incumbent then reproduces the previous winner exactly, which makes the
    // best-quality sequence non-increasing by construction.
    uint64_t x1_seed = derive_seed(seed, "greedy-x1-" + label);
    Mat ref = sample_data(spec, label, n_ref, derive_seed(seed, "greedy-ref-" + label));
    Vec target = spec.class_mean(ci);

    std::vector<double> entries(size_t(cfg.total_steps), cfg.default_w);
    size_t pairs_before = res.pairs.size();
    bool label_ok = true;
    for (int k = 0; k < cfg.n_search_steps && label_ok; ++k) {
      double best_q = std::numeric_limits<double>::infinity();
      double best_w = cfg.grid[0];
      double best_rho = undefined_ratio();
      for (double w : cfg.grid) {
        entries[size_t(k)] = w;
        auto batch = sample_batch(spec, label,
                                  GuidanceSchedule::table_of(entries),
                                  cfg.total_steps, IntegratorKind::Euler,
                                  n_eval_seeds, x1_seed);
        Mat term = terminal_states(batch);
        double q;
        if (quality == "energy_distance") {
          q = energy_distance(term, ref);
        } else {
          q = (Vec(term.colwise().mean()) - target).norm();
        }
        if (q < best_q) {  // ties keep the earlier (smaller) w
          best_q = q;
          best_w = w;
          std::vector<double> rhos;
          for (const Trajectory& tr : batch) {
            double r = tr.ratios[size_t(k)];
            if (ratio_defined(r)) rhos.push_back(r);
          }
          best_rho = rhos.empty() ? undefined_ratio() : mean_of(rhos);
        }
      }
      entries[size_t(k)] = best_w;
      res.steps.push_back({label, k, best_rho, best_w, best_q});
      if (!ratio_defined(best_rho)) {
        res.fit_error = "label '" + label +
                        "' skipped for the fit: undefined ratios at step " +
                        std::to_string(k);
        label_ok = false;
        continue;
      }
      res.pairs.emplace_back(best_rho, best_w);
    }
    if (!label_ok) res.pairs.resize(pairs_before);  // drop this label's pairs
  }

  try {
    res.fit = fit_exponential(res.pairs);
    res.fit_ok = true;
  } catch (const Error& e) {
    res.fit_ok = false;
    if (!res.fit_error.empty()) res.fit_error += "; ";
    res.fit_error += e.kind + ": " + e.what();
  }
  return res;
}

// --------------------------------------------------- schedule comparison

CompareResult run_schedule_comparison(const MixtureSpec& spec,
                                      const std::vector<std::string>& labels,
                                      const std::vector<GuidanceSchedule>& schedules,
                                      const std::vector<int>& step_counts,
                                      int n_seeds, uint64_t seed, int n_ref) {
  bool have_const = false, have_raag = false;
  for (const GuidanceSchedule& s : schedules) {
    have_const |= s.kind == ScheduleKind::Constant;
    have_raag |= s.kind == ScheduleKind::Raag;
  }
  if (!have_const || !have_raag)
    throw Error("invalid-argument",
                "schedules must include at least one constant and one raag");
  if (labels.empty() || step_counts.empty() || n_seeds < 2)
    throw Error("invalid-argument",
                "need labels, step_counts, and n_seeds >= 2");

  struct Ref {
    Mat samples;
    Vec target;
  };
  std::vector<Ref> refs;
  for (const std::string& label : labels) {
    int ci = spec.require_class(label);
    refs.push_back({sample_data(spec, label, n_ref,
                                derive_seed(seed, "cmp-ref-" + label)),
                    spec.class_mean(ci)});
  }

  CompareResult res;
  for (int n_steps : step_counts) {
    for (const GuidanceSchedule& s : schedules) {
      double ed = 0, me = 0;
      for (size_t li = 0; li < labels.size(); ++li) {
        auto batch = sample_batch(spec, labels[li], s, n_steps,
                                  IntegratorKind::Euler, n_seeds,
                                  derive_seed(seed, "cmp-x1-" + labels[li]));
        Mat term = terminal_states(batch);
        QualityScore q = quality_score(term, refs[li].samples, refs[li].target);
        ed += q.energy_distance;
        me += q.mean_error;
      }
      res.rows.push_back({schedule_name(s), n_steps, ed / double(labels.size()),
                          me / double(labels.size())});
    }
  }
  return res;
}

// ------------------------------------------------------- hyperparameter sweep

SweepResult run_sweep(const MixtureSpec& spec,
                      const std::vector<std::string>& labels,
                      const std::vector<double>& w_max_values,
                      const std::vector<double>& alpha_values, int n_steps,
                      int n_seeds, uint64_t seed, int n_ref) {
  if (labels.empty() || w_max_values.empty() || alpha_values.empty())
    throw Error("invalid-argument", "labels and parameter grids must be non-empty");

  struct Ref {
    Mat samples;
    Vec target;
  };
  std::vector<Ref> refs;
  for (const std::string& label : labels) {
    int ci = spec.require_class(label);
    refs.push_back({sample_data(spec, label, n_ref,
                                derive_seed(seed, "sweep-ref-" + label)),
                    spec.class_mean(ci)});
  }

  SweepResult res;
  for (double w_max : w_max_values) {
    for (double alpha : alpha_values) {
      GuidanceSchedule s = GuidanceSchedule::raag(w_max, alpha);
      double ed = 0, me = 0;
      for (size_t li = 0; li < labels.size(); ++li) {
        auto batch = sample_batch(spec, labels[li], s, n_steps,
                                  IntegratorKind::Euler, n_seeds,
                                  derive_seed(seed, "sweep-x1-" + labels[li]));
        QualityScore q = quality_score(terminal_states(batch),
                                       refs[li].samples, refs[li].target);
        ed += q.energy_distance;
        me += q.mean_error;
      }
      res.rows.push_back({w_max, alpha, ed / double(labels.size()),
                          me / double(labels.size())});
    }
  }
  res.best = res.rows[0];
  res.worst = res.rows[0];
  for (const SweepRow& r : res.rows) {
    if (r.energy_distance < res.best.energy_distance) res.best = r;
    if (r.energy_distance > res.worst.energy_distance) res.worst = r;
  }
  return res;
}

// ------------------------------------------------------------ config + files

RunConfig config_from_json(const nlohmann::json& j) {
  std::vector<std::string> errs;
  RunConfig cfg;
  if (!j.is_object()) throw Error("config-parse", "config root: not a JSON object");

  static const std::vector<std::string> kExperiments = {
      "ratio-spike", "ratio-group", "divergence", "greedy", "compare", "sweep"};
  if (!j.contains("experiment") || !j.at("experiment").is_string()) {
    errs.push_back("experiment: missing or not a string");
  } else {
    cfg.experiment = j.at("experiment").get<std::string>();
    if (std::find(kExperiments.begin(), kExperiments.end(), cfg.experiment) ==
        kExperiments.end())
      errs.push_back("experiment: unknown '" + cfg.experiment + "'");
  }
  if (!j.contains("spec_path") || !j.at("spec_path").is_string())
    errs.push_back("spec_path: missing or not a string");
  else
    cfg.spec_path = j.at("spec_path").get<std::string>();
  if (!j.contains("out_dir") || !j.at("out_dir").is_string())
    errs.push_back("out_dir: missing or not a string");
  else
    cfg.out_dir = j.at("out_dir").get<std::string>();
  if (!j.contains("seed") || !j.at("seed").is_number_integer())
    errs.push_back("seed: missing or not an integer");
  else
    cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("params")) {
    if (!j.at("params").is_object())
      errs.push_back("params: not an object");
    else
      cfg.params = j.at("params");
  } else {
    cfg.params = nlohmann::json::object();
  }
  if (!errs.empty()) {
    std::string msg;
    for (const std::string& e : errs) {
      if (!msg.empty()) msg += "; ";
      msg += e;
    }
    throw Error("config-parse", msg);
  }
  return cfg;
}

nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["experiment"] = c.experiment;
  j["spec_path"] = c.spec_path;
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["params"] = c.params;
  return j;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config-not-found", "cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("config-parse", path + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash_hex(const nlohmann::json& canonical) {
  // nlohmann objects iterate in sorted key order, so dump() is canonical
  std::string s = canonical.dump();
  uint64_t h = fnv1a64(s);
  char buf[20];
  snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

namespace {

// Accumulates parameter-block problems so a bad config reports everything
// at once.
struct Params {
  const nlohmann::json& p;
  std::vector<std::string> errs;

  explicit Params(const nlohmann::json& j) : p(j) {}

  double num(const std::string& key, bool required, double fallback) {
    if (!p.contains(key)) {
      if (required) errs.push_back("params." + key + ": missing");
      return fallback;
    }
    if (!p.at(key).is_number()) {
      errs.push_back("params." + key + ": not a number");
      return fallback;
    }
    return p.at(key).get<double>();
  }

  int integer(const std::string& key, bool required, int fallback) {
    if (!p.contains(key)) {
      if (required) errs.push_back("params." + key + ": missing");
      return fallback;
    }
    if (!p.at(key).is_number_integer()) {
      errs.push_back("params." + key + ": not an integer");
      return fallback;
    }
    return p.at(key).get<int>();
  }

  std::string str(const std::string& key, bool required,
                  const std::string& fallback) {
    if (!p.contains(key)) {
      if (required) errs.push_back("params." + key + ": missing");
      return fallback;
    }
    if (!p.at(key).is_string()) {
      errs.push_back("params." + key + ": not a string");
      return fallback;
    }
    return p.at(key).get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, bool required) {
    std::vector<double> out;
    if (!p.contains(key)) {
      if (required) errs.push_back("params." + key + ": missing");
      return out;
    }
    if (!p.at(key).is_array()) {
      errs.push_back("params." + key + ": not an array");
      return out;
    }
    for (const auto& e : p.at(key)) {
      if (!e.is_number()) {
        errs.push_back("params." + key + ": non-numeric entry");
        return {};
      }
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key, bool required) {
    std::vector<std::string> out;
    if (!p.contains(key)) {
      if (required) errs.push_back("params." + key + ": missing");
      return out;
    }
    if (!p.at(key).is_array()) {
      errs.push_back("params." + key + ": not an array");
      return out;
    }
    for (const auto& e : p.at(key)) {
      if (!e.is_string()) {
        errs.push_back("params." + key + ": non-string entry");
        return {};
      }
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  void finish() {
    if (errs.empty()) return;
    std::string msg;
    for (const std::string& e : errs) {
      if (!msg.empty()) msg += "; ";
      msg += e;
    }
    throw Error("config-invalid", msg);
  }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("path-unwritable", "cannot write: " + path);
  out << content;
}

void write_csv(const std::string& path, const std::string& hash,
               const std::string& header,
               const std::vector<std::string>& lines) {
  std::string content = "# config_hash=" + hash + "\n" + header + "\n";
  for (const std::string& l : lines) content += l + "\n";
  write_file(path, content);
}

}  // namespace

RunOutput run_experiment(const RunConfig& cfg, bool force, bool dump_states) {
  MixtureSpec spec = load_spec(cfg.spec_path);
  require_valid(spec);

  fs::create_directories(cfg.out_dir);
  std::string summary_path = cfg.out_dir + "/summary.json";
  if (fs::exists(summary_path) && !force)
    throw Error("output-exists",
                summary_path + " already exists; pass --force to overwrite");

  nlohmann::json echo = config_to_json(cfg);
  std::string hash = config_hash_hex(echo);
  std::string results_path = cfg.out_dir + "/results.csv";

  nlohmann::json summary;
  summary["config"] = echo;
  summary["config_hash"] = hash;
  std::string line;
  std::vector<std::string> rows;

  if (cfg.experiment == "ratio-spike") {
    Params pp(cfg.params);
    std::string label = pp.str("label", true, "");
    int n_steps = pp.integer("n_steps", true, 10);
    int n_seeds = pp.integer("n_seeds", true, 100);
    nlohmann::json js = cfg.params.contains("schedule")
                            ? cfg.params.at("schedule")
                            : nlohmann::json();
    if (js.is_null()) pp.errs.push_back("params.schedule: missing");
    pp.finish();
    GuidanceSchedule sched = schedule_from_json(js);

    RatioSpikeResult r =
        run_ratio_spike(spec, label, sched, n_steps, n_seeds, cfg.seed);
    for (const RatioSpikeRow& row : r.rows)
      rows.push_back(fmt17(row.t) + "," + fmt17(row.mean_ratio) + "," +
                     fmt17(row.p10) + "," + fmt17(row.p90));
    write_csv(results_path, hash, "t,mean_ratio,p10,p90", rows);

    std::ostringstream traj;
    traj << "# config_hash=" << hash << "\n";
    write_trajectory_csv(traj, r.trajectories);
    write_file(cfg.out_dir + "/trajectories.csv", traj.str());
    if (dump_states)
      write_file(cfg.out_dir + "/states.json",
                 states_to_json(r.trajectories).dump(2) + "\n");

    summary["excluded_seeds"] = r.excluded_seeds;
    summary["mean_ratio_first"] = r.rows.front().mean_ratio;
    summary["mean_ratio_last"] = r.rows.back().mean_ratio;
    line = std::to_string(n_steps) + " steps x " +
           std::to_string(n_seeds) + " seeds";
  } else if (cfg.experiment == "ratio-group") {
    Params pp(cfg.params);
    std::string label_start = pp.str("label_start", false, "");
    double w_const = pp.num("w_const", true, 7.0);
    int n_steps = pp.integer("n_steps", true, 10);
    int n_classes = pp.integer("n_classes", true, 0);
    int n_seeds_per = pp.integer("n_seeds_per", true, 20);
    int top_k = pp.integer("top_k", true, 10);
    int n_ref = pp.integer("n_ref", false, 512);
    int n_perm = pp.integer("n_perm", false, 10000);
    pp.finish();

    RatioGroupResult r =
        run_ratio_grouping(spec, label_start, w_const, n_steps, n_classes,
                           n_seeds_per, top_k, cfg.seed, n_ref, n_perm);
    for (const RatioGroupRow& row : r.rows)
      rows.push_back(row.label + "," + fmt17(row.low_energy_distance) + "," +
                     fmt17(row.high_energy_distance));
    write_csv(results_path, hash,
              "label,low_energy_distance,high_energy_distance", rows);
    summary["low_group_score"] = r.low_group_score;
    summary["high_group_score"] = r.high_group_score;
    summary["p_value"] = r.p_value;
    char buf[64];
    snprintf(buf, sizeof buf, "low=%.4g high=%.4g p=%.4g", r.low_group_score,
             r.high_group_score, r.p_value);
    line = std::string(buf);
  } else if (cfg.experiment == "divergence") {
    Params pp(cfg.params);
    std::string label = pp.str("label", true, "");
    std::vector<double> w_values = pp.numbers("w_values", true);
    double eps = pp.num("perturbation_eps", false, 1e-4);
    int n_steps = pp.integer("n_steps", true, 10);
    double horizon_t = pp.num("horizon_t", false, 0.25);
    int n_seeds = pp.integer("n_seeds", true, 50);
    pp.finish();

    DivergenceResult r = run_divergence(spec, label, w_values, eps, n_steps,
                                        horizon_t, n_seeds, cfg.seed);
    int n_upper_ok = 0, n_diverged = 0;
    for (const DivergenceRow& row : r.rows) {
      rows.push_back(fmt17(row.w) + "," + std::to_string(row.seed_index) +
                     "," + fmt17(row.rho0) + "," + fmt17(row.delta0) + "," +
                     fmt17(row.growth_rate_fit) + "," +
                     fmt17(row.lower_bound_A) + "," +
                     fmt17(row.upper_bound_rhs_at_t) + "," +
                     fmt17(row.delta_at_t) + "," +
                     (row.upper_ok ? "1" : "0") + "," +
                     (row.diverged ? "1" : "0"));
      n_upper_ok += row.upper_ok ? 1 : 0;
      n_diverged += row.diverged ? 1 : 0;
    }
    write_csv(results_path, hash,
              "w,seed,rho0,delta0,growth_rate_fit,lower_bound_A,"
              "upper_bound_rhs_at_t,delta_at_t,upper_ok,diverged",
              rows);
    summary["upper_ok_fraction"] =
        r.rows.empty() ? 1.0 : double(n_upper_ok) / double(r.rows.size());
    summary["diverged_runs"] = n_diverged;
    nlohmann::json jc = nlohmann::json::array();
    for (size_t i = 0; i < r.w_values.size(); ++i) {
      const BoundConstants& bc = r.constants[i];
      jc.push_back({{"w", r.w_values[i]},
                    {"L_u", bc.L_u},
                    {"L_delta", bc.L_delta},
                    {"sigma_min", bc.sigma_min},
                    {"lambda_max", bc.lambda_max},
                    {"rho_max", bc.rho_max},
                    {"V_max", bc.V_max},
                    {"fd_unstable", bc.fd_unstable}});
    }
    summary["bound_constants"] = jc;
    line = std::to_string(r.rows.size()) + " runs, upper bound held on " +
           std::to_string(n_upper_ok) + "/" + std::to_string(r.rows.size());
  } else if (cfg.experiment == "greedy") {
    Params pp(cfg.params);
    std::vector<std::string> labels = pp.strings("labels", true);
    GreedyConfig gc;
    GreedyConfig std_gc = GreedyConfig::standard();
    gc.n_search_steps = pp.integer("n_search_steps", true, 3);
    gc.total_steps = pp.integer("total_steps", true, 10);
    gc.default_w = pp.num("default_w", false, std_gc.default_w);
    gc.grid = cfg.params.contains("grid") ? pp.numbers("grid", true) : std_gc.grid;
    std::string quality = pp.str("quality", false, "energy_distance");
    int n_eval_seeds = pp.integer("n_eval_seeds", true, 64);
    int n_ref = pp.integer("n_ref", false, 512);
    pp.finish();

    GreedyResult r = run_greedy_search(spec, labels, gc, quality, n_eval_seeds,
                                       cfg.seed, n_ref);
    for (const GreedyStep& st : r.steps)
      rows.push_back(st.label + "," + std::to_string(st.k) + "," +
                     fmt17(st.rho_k) + "," + fmt17(st.w_star) + "," +
                     fmt17(st.best_quality));
    write_csv(results_path, hash, "label,step,rho,w_star,quality", rows);
    summary["quality_direction"] = "argmin: lower " + quality + " is better";
    if (r.fit_ok) {
      summary["fit"] = {{"w_max_hat", r.fit.w_max_hat},
                        {"alpha_hat", r.fit.alpha_hat},
                        {"rmse_log", r.fit.rmse_log},
                        {"n_points_used", r.fit.n_points_used}};
    }
    if (!r.fit_error.empty()) summary["fit_error"] = r.fit_error;
    line = std::to_string(r.steps.size()) + " steps chosen" +
           (r.fit_ok ? ", fit w_max=" + fmt17(r.fit.w_max_hat) +
                           " alpha=" + fmt17(r.fit.alpha_hat)
                     : " (fit unavailable)");
  } else if (cfg.experiment == "compare") {
    Params pp(cfg.params);
    std::vector<std::string> labels = pp.strings("labels", true);
    std::vector<int> step_counts;
    for (double v : pp.numbers("step_counts", true)) step_counts.push_back(int(v));
    int n_seeds = pp.integer("n_seeds", true, 128);
    int n_ref = pp.integer("n_ref", false, 512);
    if (!cfg.params.contains("schedules") || !cfg.params.at("schedules").is_array())
      pp.errs.push_back("params.schedules: missing or not an array");
    pp.finish();
    std::vector<GuidanceSchedule> schedules;
    for (const auto& js : cfg.params.at("schedules"))
      schedules.push_back(schedule_from_json(js));

    CompareResult r = run_schedule_comparison(spec, labels, schedules,
                                              step_counts, n_seeds, cfg.seed,
                                              n_ref);
    for (const CompareRow& row : r.rows)
      rows.push_back(row.schedule + "," + std::to_string(row.n_steps) + "," +
                     fmt17(row.energy_distance) + "," + fmt17(row.mean_error));
    write_csv(results_path, hash, "schedule,n_steps,energy_distance,mean_error",
              rows);
    summary["n_cells"] = r.rows.size();
    line = std::to_string(r.rows.size()) + " cells";
  } else if (cfg.experiment == "sweep") {
    Params pp(cfg.params);
    std::vector<std::string> labels = pp.strings("labels", true);
    std::vector<double> w_max_values = pp.numbers("w_max_values", true);
    std::vector<double> alpha_values = pp.numbers("alpha_values", true);
    int n_steps = pp.integer("n_steps", true, 10);
    int n_seeds = pp.integer("n_seeds", true, 128);
    int n_ref = pp.integer("n_ref", false, 512);
    pp.finish();

    SweepResult r = run_sweep(spec, labels, w_max_values, alpha_values,
                              n_steps, n_seeds, cfg.seed, n_ref);
    for (const SweepRow& row : r.rows)
      rows.push_back(fmt17(row.w_max) + "," + fmt17(row.alpha) + "," +
                     fmt17(row.energy_distance) + "," + fmt17(row.mean_error));
    write_csv(results_path, hash, "w_max,alpha,energy_distance,mean_error",
              rows);
    summary["best"] = {{"w_max", r.best.w_max},
                       {"alpha", r.best.alpha},
                       {"energy_distance", r.best.energy_distance}};
    summary["worst"] = {{"w_max", r.worst.w_max},
                        {"alpha", r.worst.alpha},
                        {"energy_distance", r.worst.energy_distance}};
    summary["spread"] = r.worst.energy_distance - r.best.energy_distance;
    line = std::to_string(r.rows.size()) + " cells, spread " +
           fmt17(r.worst.energy_distance - r.best.energy_distance);
  } else {
    throw Error("config-invalid", "unknown experiment '" + cfg.experiment + "'");
  }

  write_file(summary_path, summary.dump(2) + "\n");
  RunOutput out;
  out.summary = summary;
  out.summary_line =
      cfg.experiment + ": wrote " + results_path + " (config " + hash + ")" +
      (line.empty() ? "" : " | " + line);
  return out;
}

}  // namespace flowguide
