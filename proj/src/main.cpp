#include <cstdlib>
#include <iostream>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "flowguide/experiments.hpp"

using flowguide::Error;

namespace {

// Exit 2: the invocation or its inputs were bad and rerunning unchanged
// cannot succeed. Exit 1: the run itself failed.
int exit_code_for(const std::string& kind) {
  static const char* kConfigKinds[] = {
      "cli-usage",        "config-not-found", "config-parse",
      "config-invalid",   "spec-not-found",   "spec-parse",
      "invalid-spec",     "invalid-schedule", "schedule-parse",
      "unknown-preset",   "unknown-label",    "output-exists",
      "invalid-argument", "insufficient-seeds", "index-out-of-range"};
  for (const char* k : kConfigKinds)
    if (kind == k) return 2;
  return 1;
}

void print_error(const std::string& kind, const std::string& message) {
  nlohmann::json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  std::cout << j.dump() << "\n";
}

void apply_threads(int cli_threads) {
  int n = cli_threads;
  if (n <= 0) {
    const char* env = std::getenv("FLOWGUIDE_THREADS");
    if (env) n = std::atoi(env);
  }
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowguide: guidance-schedule experiments on Gaussian-mixture "
               "flows with exact velocity oracles"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false, dump_states = false;
  int threads = 0;
  CLI::App* run = app.add_subcommand("run", "execute an experiment config");
  run->add_option("config", config_path, "path to a JSON run config")
      ->required();
  run->add_flag("--force", force, "overwrite an existing summary.json");
  run->add_flag("--dump-states", dump_states,
                "also write full per-step states (states.json)");
  run->add_option("--threads", threads,
                  "worker threads (default: FLOWGUIDE_THREADS or OpenMP's)");

  std::string preset_name, spec_out;
  CLI::App* gen = app.add_subcommand("gen-spec", "write a preset mixture spec");
  std::string preset_help = "one of:";
  for (const std::string& p : flowguide::preset_names()) preset_help += " " + p;
  gen->add_option("preset", preset_name, preset_help)->required();
  gen->add_option("out", spec_out, "output JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("cli-usage", e.what());
    return 2;
  }

  try {
    if (run->parsed()) {
      apply_threads(threads);
      flowguide::RunConfig cfg = flowguide::load_config(config_path);
      flowguide::RunOutput out =
          flowguide::run_experiment(cfg, force, dump_states);
      std::cout << out.summary_line << "\n";
    } else {
      flowguide::MixtureSpec spec = flowguide::make_preset(preset_name);
      flowguide::save_spec(spec, spec_out);
      std::cout << "wrote " << spec_out << " (" << preset_name << ", dim "
                << spec.dim << ", " << spec.classes.size() << " classes)\n";
    }
  } catch (const Error& e) {
    print_error(e.kind, e.what());
    return exit_code_for(e.kind);
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
