#pragma once

#include <string>
#include <utility>
#include <vector>

#include "flowguide/common.hpp"
#include "json.hpp"

namespace flowguide {

enum class ScheduleKind { Constant, Raag, Table, Linear, Piecewise, Sigmoid };

// Guidance-scale policy w as a function of the measured ratio rho (and, for
// Table, the step index). Raag is w(rho) = 1 + (w_max - 1) exp(-alpha rho);
// Linear/Piecewise/Sigmoid are ablation stand-ins parameterized to agree
// with Raag at rho = 0 and rho = 1.
struct GuidanceSchedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double w = 1;                  // Constant
  double w_max = 1, alpha = 1;   // Raag; w_max shared by the variants
  double slope = 0;              // Linear: w = max(1, w_max - slope*rho)
  double rho_cut = 1;            // Piecewise: w_max below, 1 at and above
  double k = 1, rho0 = 1;        // Sigmoid: 1 + (w_max-1)/(1+exp(k(rho-rho0)))
  std::vector<double> table;     // Table: per-step scales

  static GuidanceSchedule constant(double w);
  static GuidanceSchedule raag(double w_max, double alpha);
  static GuidanceSchedule table_of(std::vector<double> entries);
};

std::vector<std::string> validate_schedule(const GuidanceSchedule& s);
void require_valid(const GuidanceSchedule& s);  // throws invalid-schedule

// Undefined-ratio sentinel (NaN) is treated as rho = 0, i.e. full headroom.
double scale_at(const GuidanceSchedule& s, int step_index, double rho);

// v_u + w (v_c - v_u)
Vec cfg_combine(const Vec& v_u, const Vec& v_c, double w);

struct FitResult {
  double w_max_hat = 0;
  double alpha_hat = 0;
  double rmse_log = 0;   // RMSE of log(w*-1) residuals
  int n_points_used = 0;
};

// Least-squares line through (rho, log(w*-1)); points with w* <= 1+1e-9 are
// excluded (log undefined there) and only counted. Throws
// insufficient-points (< 3 usable) or degenerate-fit (all rho equal).
FitResult fit_exponential(const std::vector<std::pair<double, double>>& pairs,
                          double w_grid_floor = 1.0);

// Ablation variants matched to Raag(w_max, alpha) at rho = 0 and rho = 1.
GuidanceSchedule linear_variant(double w_max, double alpha);
GuidanceSchedule piecewise_variant(double w_max, double alpha);
GuidanceSchedule sigmoid_variant(double w_max, double alpha);
std::vector<GuidanceSchedule> alternative_schedules(double w_max, double alpha);

// {kind: "constant"|"raag"|"table"|"linear"|"piecewise"|"sigmoid",
//  params: {...}}
nlohmann::json schedule_to_json(const GuidanceSchedule& s);
GuidanceSchedule schedule_from_json(const nlohmann::json& j);
std::string schedule_name(const GuidanceSchedule& s);  // short CSV key

}  // namespace flowguide
