// Copyright 2026 The rydsteady Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end. Exit codes: 0 success, 1 other errors,
// 2 malformed input or configuration, 3 solver failure.

#pragma once

#include "rydsteady/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace rydsteady {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitSolver = 3;

namespace detail {

struct CliOptions {
  std::string config;
  std::string out;
  std::string format = "csv";
  std::string collapse_variant;
  std::string flavor;
  std::string stepper;
  std::optional<int> jobs;
  std::optional<double> horizon_ms;
  bool no_timing = false;
};

/// --flavor / --collapse-variant / --stepper on top of a loaded job.
inline void apply_flags(Job& job, const CliOptions& o) {
  Json patch = Json::object();
  if (!o.flavor.empty()) patch["flavor"] = o.flavor;
  if (!o.collapse_variant.empty()) patch["collapse_variant"] = o.collapse_variant;
  ModelSpec& m = job.kind == Job::Kind::trajectory ? job.trajectory.model : job.sweep.base;
  merge_model(m, patch, "flags");
  if (!o.stepper.empty()) {
    if (job.kind != Job::Kind::trajectory) throw ConfigError("stepper", "only applies to trajectories");
    job.trajectory.stepper.kind = rethrow_as_config("stepper", [&] { return parse_stepper_kind(o.stepper); });
  }
  if (o.no_timing) job.timed = false;
  rethrow_as_config("flags", [&] {
    if (job.kind == Job::Kind::trajectory) {
      job.trajectory.validate();
    } else {
      job.sweep.validate();
      for (std::size_t k = 0; k < job.sweep.points(); ++k) (void)job.sweep.point(k);
    }
    return 0;
  });
}

inline int run(const Job& job, const CliOptions& o, std::ostream& out) {
  const Format format = parse_format(o.format);
  const int jobs = resolve_jobs(o.jobs);
  const JobOutput result = run_job(job, format, jobs);
  out << job.name << ": " << result.summary << '\n';
  if (!o.out.empty()) {
    const auto path = write_job_output(job, result, format, o.out);
    out << "wrote " << path.string() << '\n';
  }
  return result.solver_failed ? kExitSolver : kExitOk;
}

}  // namespace detail

/// Entry point with injectable streams. args[0] is the program name.
inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Steady states and dynamics of driven-dissipative Rydberg atom pairs and triples", "rydsteady"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  detail::CliOptions o;
  std::string figure;

  auto common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", o.config, "JSON config: a model or a job document");
    if (config_required) c->required();
    sub->add_option("--out", o.out, "directory for <name>.csv|json and <name>.meta.json");
    sub->add_option("--format", o.format, "table format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--collapse-variant", o.collapse_variant, "independent | coherent-sum | paper-effective");
    sub->add_option("--flavor", o.flavor, "full | effective");
    sub->add_option("--jobs", o.jobs, "worker threads (default: RYDSTEADY_JOBS or all cores)");
    sub->add_flag("--no-timing", o.no_timing, "write wall_ms = 0 so reruns are byte-identical");
  };
  auto* steady = app.add_subcommand("steady", "steady state and metrics for one model");
  common(steady, true);
  auto* evolve_cmd = app.add_subcommand("evolve", "trajectory from a job or model document");
  common(evolve_cmd, true);
  evolve_cmd->add_option("--stepper", o.stepper, "rk4-fixed | rk-adaptive | chebyshev");
  auto* sweep = app.add_subcommand("sweep", "steady-state grid from a sweep document");
  common(sweep, true);
  auto* fig = app.add_subcommand("figure", "reproduce a figure's data");
  common(fig, false);
  fig->add_option("figure", figure, "fig2 | fig3 | fig3-inset | fig4")->required();
  fig->add_option("--horizon-ms", o.horizon_ms, "fig3-inset / fig4 end time");
  fig->add_option("--stepper", o.stepper, "rk4-fixed | rk-adaptive | chebyshev");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }

  try {
    Job job;
    if (fig->parsed()) {
      Json overrides = o.config.empty() ? Json::object() : read_json_file(o.config);
      job = figure_job(figure, overrides, o.horizon_ms);
    } else {
      const Job::Kind kind = steady->parsed()   ? Job::Kind::steady
                             : sweep->parsed() ? Job::Kind::sweep
                                               : Job::Kind::trajectory;
      job = job_from_json(read_json_file(o.config), kind);
    }
    detail::apply_flags(job, o);
    return detail::run(job, o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitInput;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const SolverError& e) {
    err << "solver error: " << e.what() << '\n';
    return kExitSolver;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

inline int cli_main(int argc, char** argv) {
  return cli_main(std::vector<std::string>(argv, argv + argc));
}

}  // namespace rydsteady
