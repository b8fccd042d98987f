// Timings for the parallel kernels against their serial references.
// Numbers are reported, not asserted; on a single-core host the ratio
// hovers around 1.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "flowguide/metrics.hpp"
#include "flowguide/rng.hpp"
#include "flowguide/sampler.hpp"

using namespace flowguide;

namespace {

double seconds_now() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

double best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    double t0 = seconds_now();
    fn();
    best = std::min(best, seconds_now() - t0);
  }
  return best;
}

Mat random_points(int n, int d, uint64_t seed) {
  Rng rng(seed);
  Mat m(n, d);
  for (int i = 0; i < n; ++i) m.row(i) = rng.normal_vec(d).transpose();
  return m;
}

}  // namespace

int main() {
  int threads = 1;
#ifdef _OPENMP
  threads = omp_get_max_threads();
#endif
  printf("threads: %d\n\n", threads);

  printf("energy_distance, d=8 (seconds, best of 3)\n");
  printf("%8s %12s %12s %8s\n", "n", "serial", "parallel", "ratio");
  volatile double sink = 0;
  for (int n : {256, 512, 1024}) {
    Mat a = random_points(n, 8, 1);
    Mat b = random_points(n, 8, 2);
    double ts = best_of(3, [&] { sink = energy_distance_serial(a, b); });
    double tp = best_of(3, [&] { sink = energy_distance(a, b); });
    printf("%8d %12.6f %12.6f %8.2f\n", n, ts, tp, ts / tp);
  }

  printf("\nsample_batch, eight-class-8d, raag(7,2), 20 steps (best of 3)\n");
  printf("%8s %12s %12s %8s\n", "seeds", "serial", "parallel", "ratio");
  MixtureSpec spec = make_preset("eight-class-8d");
  GuidanceSchedule sched = GuidanceSchedule::raag(7.0, 2.0);
  for (int n : {64, 256}) {
    double ts = best_of(3, [&] {
      auto out = sample_batch_serial(spec, "3", sched, 20,
                                     IntegratorKind::Euler, n, 7);
      sink = out.back().terminal().sum();
    });
    double tp = best_of(3, [&] {
      auto out =
          sample_batch(spec, "3", sched, 20, IntegratorKind::Euler, n, 7);
      sink = out.back().terminal().sum();
    });
    printf("%8d %12.6f %12.6f %8.2f\n", n, ts, tp, ts / tp);
  }
  (void)sink;
  return 0;
}
