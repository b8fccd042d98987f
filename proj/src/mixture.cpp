#include "flowguide/mixture.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace flowguide {

int MixtureSpec::class_index(const std::string& label) const {
  for (size_t i = 0; i < classes.size(); ++i)
    if (classes[i].label == label) return int(i);
  return -1;
}

int MixtureSpec::require_class(const std::string& label) const {
  int ci = class_index(label);
  if (ci < 0) throw Error("unknown-label", "no class labeled '" + label + "'");
  return ci;
}

Vec MixtureSpec::class_mean(int ci) const {
  Vec m = Vec::Zero(dim);
  for (const Component& c : classes[ci].components) m += c.weight * c.mean;
  return m;
}

Vec MixtureSpec::mixture_mean() const {
  Vec m = Vec::Zero(dim);
  for (size_t i = 0; i < classes.size(); ++i)
    m += class_priors[i] * class_mean(int(i));
  return m;
}

namespace {

bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace

std::vector<std::string> validate_spec(const MixtureSpec& spec) {
  std::vector<std::string> errs;
  auto add = [&](const std::string& m) { errs.push_back(m); };

  if (spec.dim < 1) add("dim: must be a positive integer");
  if (spec.classes.size() < 2)
    add("classes: need at least 2 classes (one class makes the ratio degenerate)");
  if (spec.class_priors.size() != spec.classes.size())
    add("class_priors: length " + std::to_string(spec.class_priors.size()) +
        " does not match " + std::to_string(spec.classes.size()) + " classes");

  double prior_sum = 0;
  for (size_t i = 0; i < spec.class_priors.size(); ++i) {
    double p = spec.class_priors[i];
    if (!(p >= 0))
      add("class_priors[" + std::to_string(i) + "]: negative or non-finite");
    prior_sum += p;
  }
  if (!spec.class_priors.empty() && std::abs(prior_sum - 1.0) > 1e-12)
    add("class_priors: sum to " + std::to_string(prior_sum) + ", expected 1");

  std::set<std::string> seen;
  for (size_t i = 0; i < spec.classes.size(); ++i) {
    const ClassSpec& cls = spec.classes[i];
    std::string at = "classes[" + std::to_string(i) + "]";
    if (cls.label.empty()) add(at + ".label: empty");
    if (!seen.insert(cls.label).second)
      add(at + ".label: duplicate '" + cls.label + "'");
    if (cls.components.empty()) {
      add(at + ".components: empty");
      continue;
    }
    double wsum = 0;
    for (size_t j = 0; j < cls.components.size(); ++j) {
      const Component& c = cls.components[j];
      std::string cat = at + ".components[" + std::to_string(j) + "]";
      if (!(c.weight >= 0)) add(cat + ".weight: negative or non-finite");
      wsum += c.weight;
      if (c.mean.size() != spec.dim)
        add(cat + ".mean: length " + std::to_string(c.mean.size()) +
            ", expected dim " + std::to_string(spec.dim));
      else if (!all_finite(c.mean))
        add(cat + ".mean: non-finite entry");
      if (c.cov.rows() != spec.dim || c.cov.cols() != spec.dim) {
        add(cat + ".covariance: shape " + std::to_string(c.cov.rows()) + "x" +
            std::to_string(c.cov.cols()) + ", expected " +
            std::to_string(spec.dim) + "x" + std::to_string(spec.dim));
        continue;
      }
      if (!all_finite(c.cov)) {
        add(cat + ".covariance: non-finite entry");
        continue;
      }
      double scale = std::max(1.0, c.cov.cwiseAbs().maxCoeff());
      if ((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
        add(cat + ".covariance: not symmetric");
        continue;
      }
      Eigen::LLT<Mat> llt(c.cov);
      if (llt.info() != Eigen::Success)
        add(cat + ".covariance: not positive definite (Cholesky failed)");
    }
    if (std::abs(wsum - 1.0) > 1e-12)
      add(at + ".components: weights sum to " + std::to_string(wsum) +
          ", expected 1");
  }
  return errs;
}

void require_valid(const MixtureSpec& spec) {
  std::vector<std::string> errs = validate_spec(spec);
  if (errs.empty()) return;
  std::string msg;
  for (const std::string& e : errs) {
    if (!msg.empty()) msg += "; ";
    msg += e;
  }
  throw Error("invalid-spec", msg);
}

namespace {

// Structural JSON checks; collects every problem before giving up.
struct Checker {
  std::vector<std::string> errs;

  bool has(const nlohmann::json& j, const std::string& at,
           const std::string& key, nlohmann::json::value_t ty,
           bool number_ok = false) {
    if (!j.is_object() || !j.contains(key)) {
      errs.push_back(at + key + ": missing");
      return false;
    }
    const auto& v = j.at(key);
    if (number_ok && v.is_number()) return true;
    if (v.type() != ty &&
        !(ty == nlohmann::json::value_t::number_float && v.is_number())) {
      errs.push_back(at + key + ": wrong type");
      return false;
    }
    return true;
  }

  void finish(const std::string& kind) {
    if (errs.empty()) return;
    std::string msg;
    for (const std::string& e : errs) {
      if (!msg.empty()) msg += "; ";
      msg += e;
    }
    throw Error(kind, msg);
  }
};

}  // namespace

MixtureSpec spec_from_json(const nlohmann::json& j) {
  Checker ck;
  MixtureSpec spec;
  if (!j.is_object()) {
    throw Error("spec-parse", "spec root: not a JSON object");
  }
  if (ck.has(j, "", "dim", nlohmann::json::value_t::number_unsigned, true))
    spec.dim = j.at("dim").get<int>();
  if (ck.has(j, "", "class_priors", nlohmann::json::value_t::array)) {
    for (const auto& p : j.at("class_priors")) {
      if (!p.is_number()) {
        ck.errs.push_back("class_priors: non-numeric entry");
        break;
      }
      spec.class_priors.push_back(p.get<double>());
    }
  }
  if (ck.has(j, "", "classes", nlohmann::json::value_t::array)) {
    int ci = 0;
    for (const auto& jc : j.at("classes")) {
      std::string at = "classes[" + std::to_string(ci++) + "].";
      ClassSpec cls;
      if (ck.has(jc, at, "label", nlohmann::json::value_t::string))
        cls.label = jc.at("label").get<std::string>();
      if (!ck.has(jc, at, "components", nlohmann::json::value_t::array)) {
        spec.classes.push_back(cls);
        continue;
      }
      int ki = 0;
      for (const auto& jk : jc.at("components")) {
        std::string cat = at + "components[" + std::to_string(ki++) + "].";
        Component comp;
        if (ck.has(jk, cat, "weight", nlohmann::json::value_t::number_float,
                   true))
          comp.weight = jk.at("weight").get<double>();
        if (ck.has(jk, cat, "mean", nlohmann::json::value_t::array)) {
          const auto& jm = jk.at("mean");
          comp.mean = Vec(jm.size());
          for (size_t i = 0; i < jm.size(); ++i)
            comp.mean[int(i)] = jm[i].is_number() ? jm[i].get<double>() : 0;
        }
        if (ck.has(jk, cat, "covariance", nlohmann::json::value_t::array)) {
          const auto& jv = jk.at("covariance");
          int d = spec.dim;
          if (d >= 1 && int(jv.size()) == d * d) {
            comp.cov = Mat(d, d);
            for (int r = 0; r < d; ++r)
              for (int c = 0; c < d; ++c) {
                const auto& e = jv[size_t(r * d + c)];  // row-major
                comp.cov(r, c) = e.is_number() ? e.get<double>() : 0;
              }
          } else {
            ck.errs.push_back(cat + "covariance: length " +
                              std::to_string(jv.size()) + ", expected dim^2 = " +
                              std::to_string(spec.dim * spec.dim));
          }
        }
        cls.components.push_back(std::move(comp));
      }
      spec.classes.push_back(std::move(cls));
    }
  }
  ck.finish("spec-parse");
  return spec;
}

nlohmann::json spec_to_json(const MixtureSpec& spec) {
  nlohmann::json j;
  j["dim"] = spec.dim;
  j["class_priors"] = spec.class_priors;
  j["classes"] = nlohmann::json::array();
  for (const ClassSpec& cls : spec.classes) {
    nlohmann::json jc;
    jc["label"] = cls.label;
    jc["components"] = nlohmann::json::array();
    for (const Component& c : cls.components) {
      nlohmann::json jk;
      jk["weight"] = c.weight;
      jk["mean"] = std::vector<double>(c.mean.data(),
                                       c.mean.data() + c.mean.size());
      std::vector<double> flat;
      flat.reserve(size_t(spec.dim) * spec.dim);
      for (int r = 0; r < c.cov.rows(); ++r)
        for (int cc = 0; cc < c.cov.cols(); ++cc) flat.push_back(c.cov(r, cc));
      jk["covariance"] = flat;
      jc["components"].push_back(jk);
    }
    j["classes"].push_back(jc);
  }
  return j;
}

MixtureSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("spec-not-found", "cannot open spec file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("spec-parse", path + ": " + e.what());
  }
  return spec_from_json(j);
}

void save_spec(const MixtureSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("path-unwritable", "cannot write: " + path);
  out << spec_to_json(spec).dump(2) << "\n";
}

namespace {

Component comp(double w, std::initializer_list<double> mean,
               std::initializer_list<double> cov_diag) {
  Component c;
  c.weight = w;
  c.mean = Vec(int(mean.size()));
  int i = 0;
  for (double m : mean) c.mean[i++] = m;
  c.cov = Mat::Zero(int(cov_diag.size()), int(cov_diag.size()));
  i = 0;
  for (double v : cov_diag) c.cov(i, i) = v, ++i;
  return c;
}

}  // namespace

MixtureSpec make_preset(const std::string& name) {
  MixtureSpec spec;
  if (name == "two-class-2d") {
    spec.dim = 2;
    spec.classes = {{"0", {comp(1.0, {2.0, 0.0}, {1.0, 1.0})}},
                    {"1", {comp(1.0, {-2.0, 0.0}, {1.0, 1.0})}}};
    spec.class_priors = {0.5, 0.5};
  } else if (name == "eight-class-8d") {
    // Axis-aligned class means with a ladder of separations so the initial
    // ratio varies meaningfully across classes.
    spec.dim = 8;
    const double sep[8] = {2.4, 2.7, 3.0, 3.3, 3.6, 3.9, 4.2, 4.5};
    for (int i = 0; i < 8; ++i) {
      Component c;
      c.weight = 1.0;
      c.mean = Vec::Zero(8);
      c.mean[i] = sep[i];
      c.cov = Mat::Identity(8, 8);
      spec.classes.push_back({std::to_string(i), {c}});
      spec.class_priors.push_back(0.125);
    }
  } else if (name == "shared-mean-null") {
    // Both classes are the same Gaussian: the conditional signal vanishes
    // identically, so every ratio at t=1 is 0.
    spec.dim = 2;
    spec.classes = {{"0", {comp(1.0, {0.0, 0.0}, {1.0, 1.0})}},
                    {"1", {comp(1.0, {0.0, 0.0}, {1.0, 1.0})}}};
    spec.class_priors = {0.5, 0.5};
  } else if (name == "divergence-1d") {
    // 1-D spec built for the pair-separation studies. Both classes share a
    // tight component at 1.5 (a strong-contraction zone sitting at the right
    // edge of the x1 ~ N(0,1) cloud); class 1 carries a far negative
    // component that drags the pooled mean to -2, which fixes the class-0
    // mean gap at 5.9 and keeps 1/rho0 inside the studied w range for most
    // seeds.
    spec.dim = 1;
    spec.classes = {
        {"0", {comp(0.6, {1.5}, {0.02}), comp(0.4, {7.5}, {1.0})}},
        {"1",
         {comp(0.3, {1.5}, {0.02}), comp(0.55, {5.22}, {1.0}),
          comp(0.15, {-74.80666666666667}, {1.0})}}};
    spec.class_priors = {0.5, 0.5};
  } else {
    throw Error("unknown-preset", "no preset named '" + name + "'");
  }
  return spec;
}

std::vector<std::string> preset_names() {
  return {"two-class-2d", "eight-class-8d", "shared-mean-null",
          "divergence-1d"};
}

}  // namespace flowguide
