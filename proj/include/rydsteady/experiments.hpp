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

// Parameter sweeps, trajectories and figure pipelines, plus their file formats.

#pragma once

#include "rydsteady/dynamics.hpp"
#include "rydsteady/metrics.hpp"
#include "rydsteady/model.hpp"

#include <json.hpp>

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifndef RYDSTEADY_VERSION
#define RYDSTEADY_VERSION "0.0.0"
#endif

namespace rydsteady {

using Json = nlohmann::ordered_json;

inline constexpr const char* kVersion = RYDSTEADY_VERSION;

/// Malformed configuration; `path()` names the offending key (a/b/c).
class ConfigError : public InputError {
 public:
  ConfigError(std::string path, const std::string& what)
      : InputError(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "/" + key;
}

inline void reject_unknown(const Json& j, const std::string& where, std::initializer_list<std::string_view> known) {
  if (!j.is_object()) throw ConfigError(where, "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError(join_path(where, key), "unknown key");
    }
  }
}

inline double get_number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where, "expected a number");
  return j.get<double>();
}

inline int get_int(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) throw ConfigError(where, "expected an integer");
  return j.get<int>();
}

inline bool get_bool(const Json& j, const std::string& where) {
  if (!j.is_boolean()) throw ConfigError(where, "expected true or false");
  return j.get<bool>();
}

inline std::string get_string(const Json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where, "expected a string");
  return j.get<std::string>();
}

/// A number, or [re, im].
inline cplx get_complex(const Json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
    return {j[0].get<double>(), j[1].get<double>()};
  }
  throw ConfigError(where, "expected a number or a [re, im] pair");
}

inline Json complex_json(cplx v) {
  if (v.imag() == 0.0) return v.real();
  return Json::array({v.real(), v.imag()});
}

template <class Fn>
auto rethrow_as_config(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const InputError& e) {
    throw ConfigError(where, e.what());
  }
}

}  // namespace detail

/// Keys: omega_mhz, omega_mw_mhz, delta_mhz, u_table_mhz, gamma_khz,
/// gamma_angular, atoms, flavor, collapse_variant. The collapse variant is
/// written resolved.
inline Json to_json(const ModelSpec& s) {
  Json j;
  Json om = Json::array();
  for (const auto& v : s.omega_mhz) om.push_back(detail::complex_json(v));
  j["omega_mhz"] = om;
  j["omega_mw_mhz"] = Json::array({detail::complex_json(s.omega_mw_mhz[0]), detail::complex_json(s.omega_mw_mhz[1])});
  j["delta_mhz"] = s.delta_mhz;
  const auto& u = s.u_table_mhz;
  j["u_table_mhz"] = Json{{"LL", u.ll}, {"00", u.zz}, {"RR", u.rr}, {"L0", u.l0}, {"LR", u.lr}, {"0R", u.zr}};
  j["gamma_khz"] = s.gamma_khz;
  j["gamma_angular"] = s.gamma_angular;
  j["atoms"] = s.atoms;
  j["flavor"] = to_string(s.flavor);
  j["collapse_variant"] = to_string(s.resolved_collapse());
  return j;
}

/// Applies the keys present in `j` on top of `s`. Used for full configs
/// (starting from defaults) and for partial overrides.
inline void merge_model(ModelSpec& s, const Json& j, const std::string& where = "model") {
  using namespace detail;
  reject_unknown(j, where,
                 {"omega_mhz", "omega_mw_mhz", "delta_mhz", "u_table_mhz", "gamma_khz", "gamma_angular", "atoms",
                  "flavor", "collapse_variant"});
  if (j.contains("omega_mhz")) {
    const auto& v = j["omega_mhz"];
    const std::string p = join_path(where, "omega_mhz");
    if (v.is_array() && v.size() == 3) {
      for (std::size_t i = 0; i < 3; ++i) s.omega_mhz[i] = get_complex(v[i], p + "/" + std::to_string(i));
    } else {
      const cplx c = get_complex(v, p);
      s.omega_mhz = {c, c, c};
    }
  }
  if (j.contains("omega_mw_mhz")) {
    const auto& v = j["omega_mw_mhz"];
    const std::string p = join_path(where, "omega_mw_mhz");
    if (!v.is_array() || v.size() != 2) throw ConfigError(p, "expected a pair [omega_L0, omega_0R]");
    for (std::size_t i = 0; i < 2; ++i) s.omega_mw_mhz[i] = get_complex(v[i], p + "/" + std::to_string(i));
  }
  if (j.contains("delta_mhz")) s.delta_mhz = get_number(j["delta_mhz"], join_path(where, "delta_mhz"));
  if (j.contains("u_table_mhz")) {
    const auto& v = j["u_table_mhz"];
    const std::string p = join_path(where, "u_table_mhz");
    auto& u = s.u_table_mhz;
    std::array<double*, 6> slots{&u.ll, &u.zz, &u.rr, &u.l0, &u.lr, &u.zr};
    static constexpr std::array<std::string_view, 6> names{"LL", "00", "RR", "L0", "LR", "0R"};
    if (v.is_array()) {
      if (v.size() != 6) throw ConfigError(p, "expected 6 entries LL, 00, RR, L0, LR, 0R");
      for (std::size_t i = 0; i < 6; ++i) *slots[i] = get_number(v[i], p + "/" + std::to_string(i));
    } else if (v.is_object()) {
      reject_unknown(v, p, {"LL", "00", "RR", "L0", "LR", "0R"});
      for (std::size_t i = 0; i < 6; ++i) {
        const std::string key(names[i]);
        if (!v.contains(key)) throw ConfigError(p + "/" + key, "missing entry");
        *slots[i] = get_number(v[key], p + "/" + key);
      }
    } else {
      throw ConfigError(p, "expected an array or object of 6 entries");
    }
  }
  if (j.contains("gamma_khz")) {
    s.gamma_khz = get_number(j["gamma_khz"], join_path(where, "gamma_khz"));
    if (!(s.gamma_khz >= 0.0)) throw ConfigError(join_path(where, "gamma_khz"), "must be non-negative");
  }
  if (j.contains("gamma_angular")) s.gamma_angular = get_bool(j["gamma_angular"], join_path(where, "gamma_angular"));
  if (j.contains("atoms")) {
    s.atoms = get_int(j["atoms"], join_path(where, "atoms"));
    if (s.atoms != 2 && s.atoms != 3) throw ConfigError(join_path(where, "atoms"), "must be 2 or 3");
  }
  if (j.contains("flavor")) {
    const std::string p = join_path(where, "flavor");
    s.flavor = rethrow_as_config(p, [&] { return parse_flavor(get_string(j["flavor"], p)); });
  }
  if (j.contains("collapse_variant")) {
    const std::string p = join_path(where, "collapse_variant");
    if (j["collapse_variant"].is_null()) {
      s.collapse_variant.reset();
    } else {
      s.collapse_variant = rethrow_as_config(p, [&] { return parse_collapse_variant(get_string(j["collapse_variant"], p)); });
    }
  }
}

inline ModelSpec model_from_json(const Json& j, const std::string& where = "model") {
  ModelSpec s;
  merge_model(s, j, where);
  detail::rethrow_as_config(where, [&] {
    s.validate();
    return 0;
  });
  return s;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sweeps

/// Parameters recomputed from Omega and Delta at every grid point:
/// omega_mw = microwave_ratio * Omega^2 / Delta, U_same = u_same_ratio * Delta,
/// U_cross = u_cross_ratio * Delta.
struct DerivedRules {
  std::optional<double> microwave_ratio;
  std::optional<double> u_same_ratio;
  std::optional<double> u_cross_ratio;

  void apply(ModelSpec& s) const {
    if (microwave_ratio) {
      if (s.delta_mhz == 0.0) throw InputError("microwave rule needs a nonzero detuning");
      const double om = s.omega_mhz[0].real();
      const double w = *microwave_ratio * om * om / s.delta_mhz;
      s.omega_mw_mhz = {w, w};
    }
    if (u_same_ratio) {
      s.u_table_mhz.ll = s.u_table_mhz.zz = s.u_table_mhz.rr = *u_same_ratio * s.delta_mhz;
    }
    if (u_cross_ratio) {
      s.u_table_mhz.l0 = s.u_table_mhz.lr = s.u_table_mhz.zr = *u_cross_ratio * s.delta_mhz;
    }
  }

  /// omega = 3 Omega^2 / (4 Delta) with the given interaction ratios.
  static DerivedRules pumping(double same_ratio, double cross_ratio) { return {0.75, same_ratio, cross_ratio}; }
};

struct SweepAxis {
  std::string name;  // delta_mhz, gamma_khz or omega_mhz
  std::vector<double> values;

  static SweepAxis linspace(std::string name, double lo, double hi, int count) {
    if (count < 1) throw InputError("sweep axis needs at least one point");
    SweepAxis a{std::move(name), {}};
    for (int i = 0; i < count; ++i) {
      a.values.push_back(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    }
    return a;
  }
};

inline void set_axis_value(ModelSpec& s, std::string_view name, double v) {
  if (name == "delta_mhz") {
    s.delta_mhz = v;
  } else if (name == "gamma_khz") {
    s.gamma_khz = v;
  } else if (name == "omega_mhz") {
    s.omega_mhz = {v, v, v};
  } else {
    throw InputError("unknown sweep axis '" + std::string(name) + "'");
  }
}

struct SweepSpec {
  ModelSpec base;
  std::vector<SweepAxis> axes;  // at most two, first one outermost
  DerivedRules rules;

  void validate() const {
    if (axes.size() > 2) throw InputError("a sweep has at most two axes");
    for (const auto& a : axes) {
      if (a.values.empty()) throw InputError("sweep axis '" + a.name + "' is empty");
      ModelSpec probe = base;
      set_axis_value(probe, a.name, a.values.front());
    }
    if (base.dimension() > kDenseLimit) throw InputError("steady-state sweeps need a two-atom model");
  }

  std::size_t points() const {
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.values.size();
    return n;
  }

  /// Model at flat grid index k (row-major, first axis outermost).
  ModelSpec point(std::size_t k) const {
    ModelSpec s = base;
    std::size_t stride = points();
    for (const auto& a : axes) {
      stride /= a.values.size();
      set_axis_value(s, a.name, a.values[(k / stride) % a.values.size()]);
    }
    rules.apply(s);
    s.validate();
    return s;
  }
};

enum class RowStatus { ok, nonunique, high_residual, failed };

inline std::string to_string(RowStatus s) {
  switch (s) {
    case RowStatus::ok:
      return "ok";
    case RowStatus::nonunique:
      return "nonunique";
    case RowStatus::high_residual:
      return "high-residual";
    case RowStatus::failed:
      return "failed";
  }
  return "?";
}

struct SweepRow {
  ModelSpec spec;
  double negativity = std::numeric_limits<double>::quiet_NaN();
  double fidelity_psi = std::numeric_limits<double>::quiet_NaN();
  double residual = std::numeric_limits<double>::quiet_NaN();
  RowStatus status = RowStatus::failed;
  std::string message;
  double wall_ms = 0.0;
};

struct SweepTable {
  SweepSpec spec;
  std::vector<SweepRow> rows;
  bool timed = true;
};

/// Steady state and metrics at one grid point. Never throws.
inline SweepRow evaluate_point(const ModelSpec& spec, bool timed) {
  SweepRow row;
  row.spec = spec;
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto ss = steady_state(spec);
    row.negativity = negativity(ss.state);
    row.fidelity_psi = fidelity_pure(ss.state, psi_state());
    row.residual = ss.residual;
    if (!ss.unique) {
      row.status = RowStatus::nonunique;
    } else if (!(ss.residual < kSteadyResidualLimit)) {
      row.status = RowStatus::high_residual;
    } else {
      row.status = RowStatus::ok;
    }
  } catch (const std::exception& e) {
    row.status = RowStatus::failed;
    row.message = e.what();
  }
  if (timed) row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return row;
}

/// Worker count: explicit value, else RYDSTEADY_JOBS, else the hardware.
inline int resolve_jobs(std::optional<int> requested) {
  int jobs = 0;
  if (requested) {
    jobs = *requested;
  } else if (const char* env = std::getenv("RYDSTEADY_JOBS")) {
    const std::string_view v(env);
    const auto res = std::from_chars(v.data(), v.data() + v.size(), jobs);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
      throw ConfigError("RYDSTEADY_JOBS", "expected a positive integer");
    }
  } else {
    jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  }
  if (jobs < 1) throw ConfigError("jobs", "must be at least 1");
  return jobs;
}

/// Evaluates every grid point on `jobs` workers. Row order is the grid order.
inline SweepTable run_sweep(const SweepSpec& spec, int jobs = 1, bool timed = true) {
  spec.validate();
  SweepTable table{spec, std::vector<SweepRow>(spec.points()), timed};
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < table.rows.size(); k = next++) {
      try {
        table.rows[k] = evaluate_point(spec.point(k), timed);
      } catch (const std::exception& e) {
        table.rows[k].status = RowStatus::failed;
        table.rows[k].message = e.what();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, jobs));
  if (n == 1 || table.rows.size() == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(n, table.rows.size()); ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return table;
}

// ---------------------------------------------------------------------------
// Trajectories

struct TrajectorySpec {
  ModelSpec model;
  std::string initial_state = "ground-mixture";  // or a product/named state label
  std::string target;                            // defaults to Psi (2 atoms) or S3 (3 atoms)
  double t_final_ms = 1.0;
  double observe_every_ms = 0.1;
  StepperConfig stepper;

  std::string resolved_target() const {
    if (!target.empty()) return target;
    return model.atoms == 3 ? "S3" : "Psi";
  }

  DensityMatrix initial() const {
    if (initial_state == "ground-mixture") return ground_mixture(model.atoms);
    return DensityMatrix::pure(target_state(initial_state, model.atoms), model.dims());
  }

  void validate() const {
    model.validate();
    stepper.validate();
    if (!(t_final_ms > 0.0)) throw InputError("t_final_ms must be positive");
    if (!(observe_every_ms > 0.0)) throw InputError("observe_every_ms must be positive");
    (void)initial();
    (void)target_state(resolved_target(), model.atoms);
  }
};

inline const std::vector<std::string>& trajectory_columns() {
  static const std::vector<std::string> cols{"t_ms", "p_psi", "p_phi", "p_upsilon", "p_ground", "fidelity_target", "trace"};
  return cols;
}

struct TrajectoryTable {
  TrajectorySpec spec;
  std::vector<std::vector<double>> rows;  // trajectory_columns() order
  double min_eigenvalue = 0.0;            // over all observations
  std::int64_t steps = 0;
  double wall_ms = 0.0;
};

/// Populations of the named two-atom states are NaN for three atoms.
inline TrajectoryTable run_trajectory(const TrajectorySpec& spec, bool timed = true) {
  spec.validate();
  const int atoms = spec.model.atoms;
  std::vector<Observable> obs;
  if (atoms == 2) {
    obs.push_back({"p_psi", psi_state()});
    obs.push_back({"p_phi", phi_state()});
    obs.push_back({"p_upsilon", upsilon_state()});
  }
  obs.push_back({"p_ground", manifold_projector(atoms, false)});
  obs.push_back({"fidelity_target", target_state(spec.resolved_target(), atoms)});

  const auto start = std::chrono::steady_clock::now();
  const TrajectoryRecord rec = evolve(spec.model, spec.initial(), spec.t_final_ms * 1e3, spec.stepper,
                                      spec.observe_every_ms * 1e3, obs);
  TrajectoryTable table;
  table.spec = spec;
  table.steps = rec.steps;
  if (timed) table.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto& mins = rec.series("min_eigenvalue");
  table.min_eigenvalue = *std::min_element(mins.begin(), mins.end());
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    std::vector<double> row{rec.times[i] * 1e-3};
    for (const char* name : {"p_psi", "p_phi", "p_upsilon"}) row.push_back(atoms == 2 ? rec.series(name)[i] : nan);
    row.push_back(rec.series("p_ground")[i]);
    row.push_back(rec.series("fidelity_target")[i]);
    row.push_back(rec.series("trace")[i]);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Job documents. Every output's metadata is a job document that reruns it.

namespace detail {

inline Json stepper_json(const StepperConfig& c) {
  Json j{{"kind", to_string(c.kind)}};
  if (c.kind == StepperConfig::Kind::rk4_fixed) j["dt_us"] = c.dt;
  if (c.kind == StepperConfig::Kind::rk_adaptive) {
    j["rel_tol"] = c.rel_tol;
    j["abs_tol"] = c.abs_tol;
  }
  j["max_steps"] = c.max_steps;
  return j;
}

inline StepperConfig stepper_from_json(const Json& j, const std::string& where) {
  reject_unknown(j, where, {"kind", "dt_us", "rel_tol", "abs_tol", "max_steps"});
  StepperConfig c;
  if (j.contains("kind")) {
    const std::string p = join_path(where, "kind");
    c.kind = rethrow_as_config(p, [&] { return parse_stepper_kind(get_string(j["kind"], p)); });
  }
  if (j.contains("dt_us")) c.dt = get_number(j["dt_us"], join_path(where, "dt_us"));
  if (j.contains("rel_tol")) c.rel_tol = get_number(j["rel_tol"], join_path(where, "rel_tol"));
  if (j.contains("abs_tol")) c.abs_tol = get_number(j["abs_tol"], join_path(where, "abs_tol"));
  if (j.contains("max_steps")) {
    const std::string p = join_path(where, "max_steps");
    if (!j["max_steps"].is_number_integer()) throw ConfigError(p, "expected an integer");
    c.max_steps = j["max_steps"].get<std::int64_t>();
  }
  rethrow_as_config(where, [&] {
    c.validate();
    return 0;
  });
  return c;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::optional<double> optional_number(const Json& j, const std::string& where) {
  if (j.is_null()) return std::nullopt;
  return get_number(j, where);
}

}  // namespace detail

struct Job {
  enum class Kind { steady, sweep, trajectory };
  Kind kind = Kind::steady;
  std::string name;  // output file stem
  SweepSpec sweep;   // steady jobs are sweeps without axes
  TrajectorySpec trajectory;
  bool timed = true;
  Json info = Json::object();  // informational, not read back
};

inline std::string to_string(Job::Kind k) {
  switch (k) {
    case Job::Kind::steady:
      return "steady";
    case Job::Kind::sweep:
      return "sweep";
    case Job::Kind::trajectory:
      return "trajectory";
  }
  return "?";
}

inline Json to_json(const Job& job) {
  Json j;
  j["name"] = job.name;
  j["kind"] = to_string(job.kind);
  if (job.kind == Job::Kind::trajectory) {
    const auto& t = job.trajectory;
    j["model"] = to_json(t.model);
    j["trajectory"] = Json{{"initial_state", t.initial_state},
                           {"target", t.resolved_target()},
                           {"t_final_ms", t.t_final_ms},
                           {"observe_every_ms", t.observe_every_ms},
                           {"stepper", detail::stepper_json(t.stepper)}};
  } else {
    j["model"] = to_json(job.sweep.base);
    Json axes = Json::array();
    for (const auto& a : job.sweep.axes) axes.push_back(Json{{"name", a.name}, {"values", a.values}});
    j["sweep"] = Json{{"axes", axes},
                      {"rules", Json{{"microwave_ratio", detail::optional_json(job.sweep.rules.microwave_ratio)},
                                     {"u_same_ratio", detail::optional_json(job.sweep.rules.u_same_ratio)},
                                     {"u_cross_ratio", detail::optional_json(job.sweep.rules.u_cross_ratio)}}}};
  }
  j["timed"] = job.timed;
  Json info = job.info;
  info["version"] = kVersion;
  j["info"] = info;
  return j;
}

/// A job document, or a bare model document (read as a steady job).
inline Job job_from_json(const Json& j, std::optional<Job::Kind> expected = std::nullopt) {
  using namespace detail;
  Job job;
  if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
  if (!j.contains("model")) {
    job.kind = expected.value_or(Job::Kind::steady);
    job.name = to_string(job.kind);
    const ModelSpec model = model_from_json(j, "");
    if (job.kind == Job::Kind::trajectory) {
      job.trajectory.model = model;
      rethrow_as_config("", [&] {
        job.trajectory.validate();
        return 0;
      });
    } else {
      job.kind = Job::Kind::steady;
      job.sweep.base = model;
      rethrow_as_config("", [&] {
        job.sweep.validate();
        return 0;
      });
    }
    return job;
  }
  reject_unknown(j, "", {"name", "kind", "model", "sweep", "trajectory", "timed", "info"});
  if (j.contains("kind")) {
    const std::string k = get_string(j["kind"], "kind");
    if (k == "steady") {
      job.kind = Job::Kind::steady;
    } else if (k == "sweep") {
      job.kind = Job::Kind::sweep;
    } else if (k == "trajectory") {
      job.kind = Job::Kind::trajectory;
    } else {
      throw ConfigError("kind", "expected steady, sweep or trajectory");
    }
  } else if (j.contains("trajectory")) {
    job.kind = Job::Kind::trajectory;
  } else {
    job.kind = j.contains("sweep") ? Job::Kind::sweep : Job::Kind::steady;
  }
  if (expected) {
    const bool compatible = *expected == job.kind ||
                            (*expected == Job::Kind::sweep && job.kind == Job::Kind::steady) ||
                            (*expected == Job::Kind::steady && job.kind == Job::Kind::sweep);
    if (!compatible) throw ConfigError("kind", "document is a " + to_string(job.kind) + " job");
  }
  job.name = j.contains("name") ? get_string(j["name"], "name") : to_string(job.kind);
  if (job.name.empty() || job.name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("name", "must be a plain file stem");
  }
  if (j.contains("timed")) job.timed = get_bool(j["timed"], "timed");
  if (j.contains("info")) job.info = j["info"];
  const ModelSpec model = model_from_json(j["model"], "model");

  if (job.kind == Job::Kind::trajectory) {
    if (j.contains("sweep")) throw ConfigError("sweep", "not valid in a trajectory job");
    auto& t = job.trajectory;
    t.model = model;
    const Json tj = j.contains("trajectory") ? j["trajectory"] : Json::object();
    reject_unknown(tj, "trajectory", {"initial_state", "target", "t_final_ms", "observe_every_ms", "stepper"});
    if (tj.contains("initial_state")) t.initial_state = get_string(tj["initial_state"], "trajectory/initial_state");
    if (tj.contains("target")) t.target = get_string(tj["target"], "trajectory/target");
    if (tj.contains("t_final_ms")) t.t_final_ms = get_number(tj["t_final_ms"], "trajectory/t_final_ms");
    if (tj.contains("observe_every_ms")) {
      t.observe_every_ms = get_number(tj["observe_every_ms"], "trajectory/observe_every_ms");
    }
    if (tj.contains("stepper")) t.stepper = stepper_from_json(tj["stepper"], "trajectory/stepper");
    rethrow_as_config("trajectory", [&] {
      t.validate();
      return 0;
    });
    return job;
  }

  if (j.contains("trajectory")) throw ConfigError("trajectory", "not valid in a " + to_string(job.kind) + " job");
  job.sweep.base = model;
  if (j.contains("sweep")) {
    const Json& sj = j["sweep"];
    reject_unknown(sj, "sweep", {"axes", "rules"});
    if (sj.contains("axes")) {
      const Json& axes = sj["axes"];
      if (!axes.is_array()) throw ConfigError("sweep/axes", "expected an array");
      for (std::size_t i = 0; i < axes.size(); ++i) {
        const std::string p = "sweep/axes/" + std::to_string(i);
        reject_unknown(axes[i], p, {"name", "values", "from", "to", "count"});
        SweepAxis a;
        if (!axes[i].contains("name")) throw ConfigError(p + "/name", "missing key");
        a.name = get_string(axes[i]["name"], p + "/name");
        if (axes[i].contains("values")) {
          const Json& v = axes[i]["values"];
          if (!v.is_array()) throw ConfigError(p + "/values", "expected an array");
          for (std::size_t k = 0; k < v.size(); ++k) a.values.push_back(get_number(v[k], p + "/values/" + std::to_string(k)));
        } else {
          for (const char* key : {"from", "to", "count"}) {
            if (!axes[i].contains(key)) throw ConfigError(p + "/" + key, "missing key (or give values)");
          }
          a = rethrow_as_config(p, [&] {
            return SweepAxis::linspace(a.name, get_number(axes[i]["from"], p + "/from"),
                                       get_number(axes[i]["to"], p + "/to"), get_int(axes[i]["count"], p + "/count"));
          });
        }
        job.sweep.axes.push_back(std::move(a));
      }
    }
    if (sj.contains("rules")) {
      const Json& r = sj["rules"];
      reject_unknown(r, "sweep/rules", {"microwave_ratio", "u_same_ratio", "u_cross_ratio"});
      if (r.contains("microwave_ratio")) {
        job.sweep.rules.microwave_ratio = optional_number(r["microwave_ratio"], "sweep/rules/microwave_ratio");
      }
      if (r.contains("u_same_ratio")) job.sweep.rules.u_same_ratio = optional_number(r["u_same_ratio"], "sweep/rules/u_same_ratio");
      if (r.contains("u_cross_ratio")) {
        job.sweep.rules.u_cross_ratio = optional_number(r["u_cross_ratio"], "sweep/rules/u_cross_ratio");
      }
    }
  }
  rethrow_as_config("sweep", [&] {
    job.sweep.validate();
    for (std::size_t k = 0; k < job.sweep.points(); ++k) (void)job.sweep.point(k);
    return 0;
  });
  if (job.kind == Job::Kind::steady && !job.sweep.axes.empty()) job.kind = Job::Kind::sweep;
  return job;
}

// ---------------------------------------------------------------------------
// Writers

enum class Format { csv, json };

inline Format parse_format(std::string_view s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  throw ConfigError("format", "expected csv or json");
}

inline std::string extension(Format f) { return f == Format::csv ? ".csv" : ".json"; }

/// Shortest text that reads back to the same double; "nan" for NaN.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline Json number_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline const std::vector<std::string>& sweep_columns() {
  static const std::vector<std::string> cols{"delta_mhz", "gamma_khz", "negativity", "fidelity_psi", "residual", "status", "wall_ms"};
  return cols;
}

inline std::string write_table(const SweepTable& t, Format f) {
  std::ostringstream out;
  if (f == Format::csv) {
    const auto& cols = sweep_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const auto& r : t.rows) {
      out << format_number(r.spec.delta_mhz) << ',' << format_number(r.spec.gamma_khz) << ','
          << format_number(r.negativity) << ',' << format_number(r.fidelity_psi) << ',' << format_number(r.residual)
          << ',' << to_string(r.status) << ',' << format_number(r.wall_ms) << '\n';
    }
    return out.str();
  }
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    Json row{{"delta_mhz", r.spec.delta_mhz},       {"gamma_khz", r.spec.gamma_khz},
             {"negativity", number_json(r.negativity)}, {"fidelity_psi", number_json(r.fidelity_psi)},
             {"residual", number_json(r.residual)},   {"status", to_string(r.status)},
             {"wall_ms", r.wall_ms}};
    if (!r.message.empty()) row["message"] = r.message;
    rows.push_back(row);
  }
  return Json{{"columns", sweep_columns()}, {"rows", rows}}.dump(2) + "\n";
}

inline std::string write_table(const TrajectoryTable& t, Format f) {
  std::ostringstream out;
  const auto& cols = trajectory_columns();
  if (f == Format::csv) {
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const auto& r : t.rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_number(r[i]);
      out << '\n';
    }
    return out.str();
  }
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    Json row;
    for (std::size_t i = 0; i < r.size(); ++i) row[cols[i]] = number_json(r[i]);
    rows.push_back(row);
  }
  return Json{{"columns", cols}, {"rows", rows}}.dump(2) + "\n";
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

/// Result of running a job: the table text plus a one-line summary.
struct JobOutput {
  std::string table;
  std::string summary;
  Json resolved;  // per-row models of a sweep, after the derived rules
  bool solver_failed = false;
};

inline JobOutput run_job(const Job& job, Format format, int jobs) {
  JobOutput out;
  std::ostringstream line;
  if (job.kind == Job::Kind::trajectory) {
    const TrajectoryTable t = run_trajectory(job.trajectory, job.timed);
    out.table = write_table(t, format);
    const auto& last = t.rows.back();
    line << "t_ms=" << format_number(last[0]) << " fidelity_" << job.trajectory.resolved_target() << '='
         << format_number(last[5]) << " p_ground=" << format_number(last[4]) << " trace=" << format_number(last[6])
         << " min_eigenvalue=" << format_number(t.min_eigenvalue) << " steps=" << t.steps
         << " wall_ms=" << format_number(t.wall_ms);
  } else {
    const auto start = std::chrono::steady_clock::now();
    const SweepTable t = run_sweep(job.sweep, jobs, job.timed);
    out.table = write_table(t, format);
    out.resolved = Json::array();
    for (const auto& r : t.rows) out.resolved.push_back(to_json(r.spec));
    const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    std::size_t failed = 0;
    for (const auto& r : t.rows) failed += r.status == RowStatus::failed;
    out.solver_failed = failed == t.rows.size();
    if (t.rows.size() == 1) {
      const auto& r = t.rows.front();
      line << "negativity=" << format_number(r.negativity) << " fidelity_psi=" << format_number(r.fidelity_psi)
           << " residual=" << format_number(r.residual) << " status=" << to_string(r.status);
      if (!r.message.empty()) line << " (" << r.message << ")";
    } else {
      std::size_t best = 0;
      for (std::size_t k = 0; k < t.rows.size(); ++k) {
        if (!(t.rows[k].negativity <= t.rows[best].negativity)) best = k;
      }
      double worst_residual = 0.0;
      for (const auto& r : t.rows) {
        if (std::isfinite(r.residual)) worst_residual = std::max(worst_residual, r.residual);
      }
      line << "points=" << t.rows.size() << " failed=" << failed
           << " max_negativity=" << format_number(t.rows[best].negativity) << " at delta_mhz="
           << format_number(t.rows[best].spec.delta_mhz) << " gamma_khz=" << format_number(t.rows[best].spec.gamma_khz)
           << " max_residual=" << format_number(worst_residual);
    }
    line << " wall_ms=" << format_number(job.timed ? wall : 0.0);
  }
  out.summary = line.str();
  return out;
}

/// Writes <name><ext> and <name>.meta.json into `dir`. Returns the table path.
inline std::filesystem::path write_job_output(const Job& job, const JobOutput& out, Format format,
                                              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto table = dir / (job.name + extension(format));
  write_file(table, out.table);
  Job meta = job;
  if (!out.resolved.is_null()) meta.info["resolved_models"] = out.resolved;
  write_file(dir / (job.name + ".meta.json"), to_json(meta).dump(2) + "\n");
  return table;
}

// ---------------------------------------------------------------------------
// Figures

inline const std::vector<std::string>& figure_ids() {
  static const std::vector<std::string> ids{"fig2", "fig3", "fig3-inset", "fig4"};
  return ids;
}

inline constexpr double kFig4MaxHorizonMs = 300.0;

/// Job reproducing one figure. `overrides` is a partial model document
/// applied before the derived rules.
inline Job figure_job(std::string_view fig, const Json& overrides = Json::object(),
                      std::optional<double> horizon_ms = std::nullopt) {
  Job job;
  job.name = std::string(fig);
  job.info["figure"] = std::string(fig);
  if (fig == "fig2" || fig == "fig3") {
    job.kind = Job::Kind::sweep;
    ModelSpec base = figure_defaults(2);
    base.collapse_variant = CollapseVariant::independent;
    base.delta_mhz = 0.5;
    merge_model(base, overrides, "overrides");
    job.sweep.base = base;
    job.sweep.axes.push_back(SweepAxis::linspace("delta_mhz", 0.5, 5.0, 10));
    if (fig == "fig2") job.sweep.axes.push_back(SweepAxis::linspace("gamma_khz", 1.0, 10.0, 10));
    job.sweep.rules = DerivedRules::pumping(4.0, 2.0);
    job.info["grid"] = "artifact default; only the endpoints are given for the figure";
    detail::rethrow_as_config("overrides", [&] {
      job.sweep.validate();
      for (std::size_t k = 0; k < job.sweep.points(); ++k) (void)job.sweep.point(k);
      return 0;
    });
  } else if (fig == "fig3-inset" || fig == "fig4") {
    job.kind = Job::Kind::trajectory;
    const bool three = fig == "fig4";
    ModelSpec m = figure_defaults(three ? 3 : 2);
    m.delta_mhz = 0.5;
    if (three) {
      m.flavor = Flavor::full;
    } else {
      m.flavor = Flavor::effective;
      m.collapse_variant = CollapseVariant::independent;
    }
    merge_model(m, overrides, "overrides");
    (three ? DerivedRules::pumping(2.0, 0.2) : DerivedRules::pumping(4.0, 2.0)).apply(m);
    auto& t = job.trajectory;
    t.model = m;
    t.initial_state = three ? "gLgLgL" : "ground-mixture";
    t.t_final_ms = three ? kFig4MaxHorizonMs : 100.0;
    t.observe_every_ms = three ? 1.0 : 0.5;
    t.stepper = three ? StepperConfig::chebyshev() : StepperConfig::adaptive();
    if (horizon_ms) {
      if (!(*horizon_ms > 0.0)) throw ConfigError("horizon-ms", "must be positive");
      if (three && *horizon_ms > kFig4MaxHorizonMs) throw ConfigError("horizon-ms", "at most 300 ms for fig4");
      t.t_final_ms = *horizon_ms;
      t.observe_every_ms = std::min(t.observe_every_ms, *horizon_ms);
    }
    detail::rethrow_as_config("overrides", [&] {
      t.validate();
      return 0;
    });
  } else {
    throw ConfigError("figure", "unknown figure id '" + std::string(fig) + "' (fig2, fig3, fig3-inset, fig4)");
  }
  return job;
}

}  // namespace rydsteady
