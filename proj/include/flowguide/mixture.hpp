#pragma once

#include <string>
#include <vector>

#include "flowguide/common.hpp"
#include "json.hpp"

namespace flowguide {

struct Component {
  double weight = 0;
  Vec mean;
  Mat cov;
};

struct ClassSpec {
  std::string label;
  std::vector<Component> components;
};

// Class-conditional Gaussian mixture: p(x0 | class i) is the mixture in
// classes[i], p(x0) weights the classes by class_priors.
struct MixtureSpec {
  int dim = 0;
  std::vector<ClassSpec> classes;
  std::vector<double> class_priors;

  int class_index(const std::string& label) const;      // -1 when absent
  int require_class(const std::string& label) const;    // throws unknown-label
  Vec class_mean(int ci) const;
  Vec mixture_mean() const;  // prior-weighted mean over all components
};

// Collects every violation (not just the first); empty means valid.
std::vector<std::string> validate_spec(const MixtureSpec& spec);
void require_valid(const MixtureSpec& spec);  // throws invalid-spec

// JSON layout: {dim, class_priors, classes:[{label, components:
// [{weight, mean, covariance}]}]} with covariance a row-major flat array
// of dim*dim numbers.
MixtureSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const MixtureSpec& spec);
MixtureSpec load_spec(const std::string& path);  // throws spec-not-found
void save_spec(const MixtureSpec& spec, const std::string& path);

// Pinned benchmark mixtures; all numbers are literals so runs reproduce
// across machines.
MixtureSpec make_preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace flowguide
