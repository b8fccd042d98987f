#include "flowguide/schedule.hpp"

#include <cmath>

#include "flowguide/oracle.hpp"

namespace flowguide {

GuidanceSchedule GuidanceSchedule::constant(double w) {
  GuidanceSchedule s;
  s.kind = ScheduleKind::Constant;
  s.w = w;
  return s;
}

GuidanceSchedule GuidanceSchedule::raag(double w_max, double alpha) {
  GuidanceSchedule s;
  s.kind = ScheduleKind::Raag;
  s.w_max = w_max;
  s.alpha = alpha;
  return s;
}

GuidanceSchedule GuidanceSchedule::table_of(std::vector<double> entries) {
  GuidanceSchedule s;
  s.kind = ScheduleKind::Table;
  s.table = std::move(entries);
  return s;
}

std::vector<std::string> validate_schedule(const GuidanceSchedule& s) {
  std::vector<std::string> errs;
  switch (s.kind) {
    case ScheduleKind::Constant:
      if (!(s.w >= 1) || !std::isfinite(s.w))
        errs.push_back("constant: w must be finite and >= 1");
      break;
    case ScheduleKind::Raag:
      if (!(s.w_max > 1) || !std::isfinite(s.w_max))
        errs.push_back("raag: w_max must be finite and > 1");
      if (!(s.alpha > 0) || !std::isfinite(s.alpha))
        errs.push_back("raag: alpha must be finite and > 0");
      break;
    case ScheduleKind::Table:
      if (s.table.empty()) errs.push_back("table: no entries");
      for (size_t i = 0; i < s.table.size(); ++i)
        if (!(s.table[i] >= 1) || !std::isfinite(s.table[i]))
          errs.push_back("table[" + std::to_string(i) +
                         "]: must be finite and >= 1");
      break;
    case ScheduleKind::Linear:
      if (!(s.w_max >= 1)) errs.push_back("linear: w_max must be >= 1");
      if (!(s.slope > 0)) errs.push_back("linear: slope must be > 0");
      break;
    case ScheduleKind::Piecewise:
      if (!(s.w_max >= 1)) errs.push_back("piecewise: w_max must be >= 1");
      if (!(s.rho_cut > 0)) errs.push_back("piecewise: rho_cut must be > 0");
      break;
    case ScheduleKind::Sigmoid:
      if (!(s.w_max >= 1)) errs.push_back("sigmoid: w_max must be >= 1");
      if (!(s.k > 0)) errs.push_back("sigmoid: k must be > 0");
      break;
  }
  return errs;
}

void require_valid(const GuidanceSchedule& s) {
  std::vector<std::string> errs = validate_schedule(s);
  if (errs.empty()) return;
  std::string msg;
  for (const std::string& e : errs) {
    if (!msg.empty()) msg += "; ";
    msg += e;
  }
  throw Error("invalid-schedule", msg);
}

double scale_at(const GuidanceSchedule& s, int step_index, double rho) {
  if (!ratio_defined(rho)) rho = 0.0;  // undefined ratio keeps full headroom
  switch (s.kind) {
    case ScheduleKind::Constant:
      return s.w;
    case ScheduleKind::Raag:
      return 1.0 + (s.w_max - 1.0) * std::exp(-s.alpha * rho);
    case ScheduleKind::Table:
      if (step_index < 0 || size_t(step_index) >= s.table.size())
        throw Error("index-out-of-range",
                    "table schedule has " + std::to_string(s.table.size()) +
                        " entries, step " + std::to_string(step_index));
      return s.table[size_t(step_index)];
    case ScheduleKind::Linear:
      return std::max(1.0, s.w_max - s.slope * rho);
    case ScheduleKind::Piecewise:
      return rho < s.rho_cut ? s.w_max : 1.0;
    case ScheduleKind::Sigmoid:
      return 1.0 + (s.w_max - 1.0) / (1.0 + std::exp(s.k * (rho - s.rho0)));
  }
  return 1.0;
}

Vec cfg_combine(const Vec& v_u, const Vec& v_c, double w) {
  return v_u + w * (v_c - v_u);
}

FitResult fit_exponential(const std::vector<std::pair<double, double>>& pairs,
                          double w_grid_floor) {
  // Line fit of log(w* - 1) against rho; w* at (or numerically at) the floor
  // has no log image and is excluded.
  std::vector<double> xs, ys;
  for (const auto& [rho, w_star] : pairs) {
    if (w_star <= w_grid_floor + 1e-9) continue;
    xs.push_back(rho);
    ys.push_back(std::log(w_star - 1.0));
  }
  const int n = int(xs.size());
  if (n < 3)
    throw Error("insufficient-points",
                "need >= 3 pairs with w* above the floor, have " +
                    std::to_string(n));
  double xmin = xs[0], xmax = xs[0];
  for (double v : xs) {
    xmin = std::min(xmin, v);
    xmax = std::max(xmax, v);
  }
  if (xmax - xmin <= 1e-15 * std::max(1.0, std::abs(xmax)))
    throw Error("degenerate-fit", "all rho values identical; slope undefined");

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  double denom = n * sxx - sx * sx;
  double slope = (n * sxy - sx * sy) / denom;
  double intercept = (sy - slope * sx) / n;

  FitResult r;
  r.alpha_hat = -slope;
  r.w_max_hat = 1.0 + std::exp(intercept);
  r.n_points_used = n;
  double ss = 0;
  for (int i = 0; i < n; ++i) {
    double resid = ys[i] - (intercept + slope * xs[i]);
    ss += resid * resid;
  }
  r.rmse_log = std::sqrt(ss / n);
  return r;
}

// The variants share Raag's endpoints: value w_max at rho=0 and Raag's
// rho=1 value (piecewise, which can only jump, drops to 1 at rho_cut=1).

GuidanceSchedule linear_variant(double w_max, double alpha) {
  if (!(alpha > 0) || !(w_max > 1))
    throw Error("invalid-parameter", "linear variant needs w_max>1, alpha>0");
  GuidanceSchedule s;
  s.kind = ScheduleKind::Linear;
  s.w_max = w_max;
  s.slope = (w_max - 1.0) * (1.0 - std::exp(-alpha));
  return s;
}

GuidanceSchedule piecewise_variant(double w_max, double alpha) {
  if (!(alpha > 0) || !(w_max > 1))
    throw Error("invalid-parameter",
                "piecewise variant needs w_max>1, alpha>0");
  GuidanceSchedule s;
  s.kind = ScheduleKind::Piecewise;
  s.w_max = w_max;
  s.rho_cut = 1.0;
  return s;
}

GuidanceSchedule sigmoid_variant(double w_max, double alpha) {
  if (!(alpha > 0) || !(w_max > 1))
    throw Error("invalid-parameter", "sigmoid variant needs w_max>1, alpha>0");
  // Solve 1 + (w_max-1)/(1+exp(k(1-rho0))) = raag(1) for k(1-rho0), then
  // place rho0 so that k*rho0 >= 10, keeping the rho=0 value within
  // 5e-5*(w_max-1) of w_max.
  double c = std::log(std::expm1(alpha));  // k (1 - rho0)
  double m = std::max(10.0, alpha);        // k rho0
  double k = m + c;
  if (!(k > 0))
    throw Error("invalid-parameter",
                "sigmoid variant underdetermined for alpha this small");
  GuidanceSchedule s;
  s.kind = ScheduleKind::Sigmoid;
  s.w_max = w_max;
  s.k = k;
  s.rho0 = m / k;
  return s;
}

std::vector<GuidanceSchedule> alternative_schedules(double w_max,
                                                    double alpha) {
  return {linear_variant(w_max, alpha), piecewise_variant(w_max, alpha),
          sigmoid_variant(w_max, alpha)};
}

namespace {

std::string trimmed(double v) {
  char buf[64];
  snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

nlohmann::json schedule_to_json(const GuidanceSchedule& s) {
  nlohmann::json p;
  std::string kind;
  switch (s.kind) {
    case ScheduleKind::Constant:
      kind = "constant";
      p["w"] = s.w;
      break;
    case ScheduleKind::Raag:
      kind = "raag";
      p["w_max"] = s.w_max;
      p["alpha"] = s.alpha;
      break;
    case ScheduleKind::Table:
      kind = "table";
      p["entries"] = s.table;
      break;
    case ScheduleKind::Linear:
      kind = "linear";
      p["w_max"] = s.w_max;
      p["slope"] = s.slope;
      break;
    case ScheduleKind::Piecewise:
      kind = "piecewise";
      p["w_max"] = s.w_max;
      p["rho_cut"] = s.rho_cut;
      break;
    case ScheduleKind::Sigmoid:
      kind = "sigmoid";
      p["w_max"] = s.w_max;
      p["k"] = s.k;
      p["rho0"] = s.rho0;
      break;
  }
  return nlohmann::json{{"kind", kind}, {"params", p}};
}

GuidanceSchedule schedule_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string())
    throw Error("schedule-parse", "schedule needs a string 'kind'");
  std::string kind = j.at("kind").get<std::string>();
  nlohmann::json p = j.value("params", nlohmann::json::object());
  auto num = [&](const std::string& key, bool required,
                 double fallback) -> double {
    if (!p.contains(key)) {
      if (required)
        throw Error("schedule-parse", kind + " schedule: missing params." + key);
      return fallback;
    }
    if (!p.at(key).is_number())
      throw Error("schedule-parse", kind + " schedule: params." + key +
                                        " must be a number");
    return p.at(key).get<double>();
  };

  GuidanceSchedule s;
  if (kind == "constant") {
    s = GuidanceSchedule::constant(num("w", true, 1));
  } else if (kind == "raag") {
    s = GuidanceSchedule::raag(num("w_max", true, 1), num("alpha", true, 1));
  } else if (kind == "table") {
    if (!p.contains("entries") || !p.at("entries").is_array())
      throw Error("schedule-parse", "table schedule: missing params.entries");
    std::vector<double> entries;
    for (const auto& e : p.at("entries")) {
      if (!e.is_number())
        throw Error("schedule-parse", "table schedule: non-numeric entry");
      entries.push_back(e.get<double>());
    }
    s = GuidanceSchedule::table_of(std::move(entries));
  } else if (kind == "linear") {
    s.kind = ScheduleKind::Linear;
    s.w_max = num("w_max", true, 1);
    s.slope = num("slope", true, 1);
  } else if (kind == "piecewise") {
    s.kind = ScheduleKind::Piecewise;
    s.w_max = num("w_max", true, 1);
    s.rho_cut = num("rho_cut", true, 1);
  } else if (kind == "sigmoid") {
    s.kind = ScheduleKind::Sigmoid;
    s.w_max = num("w_max", true, 1);
    s.k = num("k", true, 1);
    s.rho0 = num("rho0", true, 1);
  } else {
    throw Error("schedule-parse", "unknown schedule kind '" + kind + "'");
  }
  require_valid(s);
  return s;
}

std::string schedule_name(const GuidanceSchedule& s) {
  switch (s.kind) {
    case ScheduleKind::Constant:
      return "constant(" + trimmed(s.w) + ")";
    case ScheduleKind::Raag:
      return "raag(" + trimmed(s.w_max) + "," + trimmed(s.alpha) + ")";
    case ScheduleKind::Table:
      return "table[" + std::to_string(s.table.size()) + "]";
    case ScheduleKind::Linear:
      return "linear(" + trimmed(s.w_max) + "," + trimmed(s.slope) + ")";
    case ScheduleKind::Piecewise:
      return "piecewise(" + trimmed(s.w_max) + "," + trimmed(s.rho_cut) + ")";
    case ScheduleKind::Sigmoid:
      return "sigmoid(" + trimmed(s.w_max) + "," + trimmed(s.k) + "," +
             trimmed(s.rho0) + ")";
  }
  return "?";
}

}  // namespace flowguide
