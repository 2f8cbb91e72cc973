// readalign command-line front end. Talks to the engine only through the C API.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "readalign/readalign.h"

namespace {

void print_line(const char* line, void*) { std::cout << line << '\n'; }

int report(ra_status s) {
  if (s != RA_OK) std::cerr << "readalign: " << ra_status_name(s) << ": " << ra_last_error() << '\n';
  return ra_status_exit_code(s);
}

struct Options {
  std::string config;
  std::string out;
  std::optional<unsigned> workers;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
};

int run_pipeline(const std::string& command, const Options& o) {
  ra_config* cfg = nullptr;
  ra_status s = ra_config_load(o.config.c_str(), &cfg);
  if (s != RA_OK) return report(s);
  if (s == RA_OK && o.workers) s = ra_config_set_workers(cfg, *o.workers);
  if (s == RA_OK && o.seed) s = ra_config_set_seed(cfg, *o.seed);
  if (s == RA_OK && !o.out.empty()) s = ra_config_set_output_dir(cfg, o.out.c_str());
  if (s == RA_OK) s = ra_config_set_dry_run(cfg, o.dry_run);
  if (s == RA_OK) s = ra_run(cfg, command.c_str(), print_line, nullptr);
  ra_config_free(cfg);
  return report(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"readalign: attention-to-reading alignment engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ra_version());

  Options o;
  std::string synth_config;
  const char* commands[][2] = {
      {"validate", "check every input and report per-subject completeness"},
      {"features", "aggregate attention dumps into word-pair feature tables"},
      {"targets", "build saccade and BOLD targets from fixations"},
      {"align", "fit cross-validated ridge encoders, then run statistics"},
      {"stats", "rerun the statistics over existing alignment outputs"},
      {"visualness", "score sentence visual strength and the modulation analysis"},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c[0], c[1]);
    sub->add_option("-c,--config", o.config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--out", o.out, "output directory (overrides the config)");
    sub->add_option("-w,--workers", o.workers, "worker threads (default: READALIGN_WORKERS, else all cores)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "root seed (overrides the config)");
    sub->add_flag("--dry-run", o.dry_run, "validate inputs and print the plan without writing");
  }
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic study with planted signal");
  synth->add_option("-c,--config", synth_config, "synthetic-study config (JSON); defaults if omitted")
      ->check(CLI::ExistingFile);
  synth->add_option("-o,--out", o.out, "directory to write the study into")->required();
  synth->add_flag("--dry-run", o.dry_run, "print the plan without writing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (synth->parsed())
    return report(ra_synth(synth_config.empty() ? nullptr : synth_config.c_str(), o.out.c_str(), o.dry_run,
                           print_line, nullptr));
  for (const auto& c : commands)
    if (app.got_subcommand(c[0])) return run_pipeline(c[0], o);
  return 2;
}
