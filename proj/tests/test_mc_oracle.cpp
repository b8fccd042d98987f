#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "doctest.h"
#include "flowguide/mc_oracle.hpp"
#include "flowguide/oracle.hpp"
#include "flowguide/rng.hpp"

using namespace flowguide;

TEST_CASE("argument guards") {
  MixtureSpec s = make_preset("two-class-2d");
  Vec x = Vec::Zero(2);
  try {
    mc_velocity(s, "", x, 0.5, 9999, 0.1, 1);
    FAIL("expected invalid-argument");
  } catch (const Error& e) {
    CHECK(e.kind == "invalid-argument");
  }
  try {
    mc_velocity(s, "", x, 0.5, 10000, 0.0, 1);
    FAIL("expected invalid-argument");
  } catch (const Error& e) {
    CHECK(e.kind == "invalid-argument");
  }
}

TEST_CASE("zero velocity at the symmetric mode") {
  MixtureSpec s = make_preset("shared-mean-null");
  Vec x = Vec::Zero(2);
  McVelocity m = mc_velocity(s, "", x, 0.5, 100000, 0.1 * std::sqrt(0.5), 5);
  for (int j = 0; j < 2; ++j)
    CHECK(std::abs(m.estimate[j]) <= 3.0 * m.std_error[j]);
}

TEST_CASE("t=1 recovers x minus the data mean") {
  MixtureSpec s = make_preset("shared-mean-null");  // mu_u = 0
  Vec x(2);
  x << 0.7, -0.4;
  McVelocity m = mc_velocity(s, "", x, 1.0, 100000, 0.1, 6);
  for (int j = 0; j < 2; ++j)
    CHECK(std::abs(m.estimate[j] - x[j]) <= 3.0 * m.std_error[j]);
}

TEST_CASE("agreement with the analytic field at interior times") {
  MixtureSpec s = make_preset("two-class-2d");
  Rng rng(17);
  int worst_ok = 0;
  for (int rep = 0; rep < 5; ++rep) {
    double t = 0.15 + 0.175 * rep;  // 0.15 ... 0.85
    Vec x = rng.normal_vec(2);
    Vec truth = rep % 2 == 0 ? unconditional_velocity(s, x, t)
                             : conditional_velocity(s, "1", x, t);
    McVelocity m = mc_velocity(s, rep % 2 == 0 ? "" : "1", x, t, 100000,
                               0.1 * std::sqrt(t), 40 + rep);
    CHECK(m.low_ess == (m.ess < 100.0));  // small-t probes sit below 100 here
    for (int j = 0; j < 2; ++j)
      if (std::abs(m.estimate[j] - truth[j]) <= 3.0 * m.std_error[j])
        ++worst_ok;
  }
  CHECK(worst_ok >= 9);  // 10 coordinate checks, one 3-sigma miss allowed
}

TEST_CASE("low effective sample size raises the flag") {
  MixtureSpec s = make_preset("two-class-2d");
  Vec x = Vec::Zero(2);
  McVelocity m = mc_velocity(s, "", x, 0.5, 10000, 0.005, 9);
  CHECK(m.low_ess);
  CHECK(m.ess < 100.0);

  McVelocity wide = mc_velocity(s, "", x, 0.5, 100000, 0.5, 9);
  CHECK(!wide.low_ess);
}

TEST_CASE("bit-deterministic and thread-count invariant") {
  MixtureSpec s = make_preset("two-class-2d");
  Vec x(2);
  x << 0.5, 0.5;
  McVelocity a = mc_velocity(s, "0", x, 0.6, 40000, 0.1, 12);
  McVelocity b = mc_velocity(s, "0", x, 0.6, 40000, 0.1, 12);
  CHECK((a.estimate - b.estimate).norm() == 0.0);
  CHECK((a.std_error - b.std_error).norm() == 0.0);
  CHECK(a.ess == b.ess);

#ifdef _OPENMP
  int saved = omp_get_max_threads();
  omp_set_num_threads(2);
  McVelocity c = mc_velocity(s, "0", x, 0.6, 40000, 0.1, 12);
  omp_set_num_threads(saved);
  CHECK((a.estimate - c.estimate).norm() == 0.0);
  CHECK(a.ess == c.ess);
#endif
}
