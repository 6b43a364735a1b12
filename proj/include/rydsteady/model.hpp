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

// Two- and three-atom Rydberg pumping model: single-atom and interaction
// Hamiltonians, the adiabatically eliminated two-atom Hamiltonian, decay
// channels and the named target states.

#pragma once

#include "rydsteady/opalg.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rydsteady {

/// Single-atom basis order: g_L, g_0, g_R, e_L, e_0, e_R.
enum Level : int { gL = 0, g0 = 1, gR = 2, eL = 3, e0 = 4, eR = 5 };
inline constexpr int kLevels = 6;

/// Sublevel index L=0, 0=1, R=2 shared by ground and Rydberg manifolds.
inline constexpr Level ground(int i) { return static_cast<Level>(i); }
inline constexpr Level rydberg(int i) { return static_cast<Level>(i + 3); }

enum class Flavor { full, effective };
enum class CollapseVariant { independent, coherent_sum, paper_effective };

inline std::string to_string(Flavor f) { return f == Flavor::full ? "full" : "effective"; }

inline std::string to_string(CollapseVariant v) {
  switch (v) {
    case CollapseVariant::independent: return "independent";
    case CollapseVariant::coherent_sum: return "coherent-sum";
    case CollapseVariant::paper_effective: return "paper-effective";
  }
  return "?";
}

inline Flavor parse_flavor(std::string_view s) {
  if (s == "full") return Flavor::full;
  if (s == "effective") return Flavor::effective;
  throw InputError("unknown flavor '" + std::string(s) + "'");
}

inline CollapseVariant parse_collapse_variant(std::string_view s) {
  if (s == "independent") return CollapseVariant::independent;
  if (s == "coherent-sum") return CollapseVariant::coherent_sum;
  if (s == "paper-effective") return CollapseVariant::paper_effective;
  throw InputError("unknown collapse variant '" + std::string(s) + "'");
}

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Converts a frequency quoted as X/2pi = v MHz into rad/us.
inline constexpr double mhz_to_angular(double v) { return kTwoPi * v; }

/// Symmetric table of pair interaction strengths indexed by Rydberg sublevel.
struct InteractionTable {
  // L-L, 0-0, R-R, L-0, L-R, 0-R
  double ll = 0.0, zz = 0.0, rr = 0.0, l0 = 0.0, lr = 0.0, zr = 0.0;

  double at(int i, int j) const {
    if (i > j) std::swap(i, j);
    static constexpr std::array<std::array<int, 3>, 3> slot{{{0, 3, 4}, {3, 1, 5}, {4, 5, 2}}};
    const std::array<double, 6> v{ll, zz, rr, l0, lr, zr};
    return v[static_cast<std::size_t>(slot[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])];
  }

  static InteractionTable same_and_cross(double same, double cross) {
    return {same, same, same, cross, cross, cross};
  }

  bool operator==(const InteractionTable&) const = default;
};

/// Physical parameters in laboratory units: MHz for X/2pi quantities, kHz for gamma.
struct ModelSpec {
  std::array<cplx, 3> omega_mhz{};     // laser Rabi frequencies Omega_L, Omega_0, Omega_R
  std::array<cplx, 2> omega_mw_mhz{};  // microwave couplings omega_L0, omega_0R
  double delta_mhz = 0.0;
  InteractionTable u_table_mhz{};
  double gamma_khz = 0.0;
  bool gamma_angular = false;  // multiply gamma by 2pi
  int atoms = 2;
  Flavor flavor = Flavor::full;
  std::optional<CollapseVariant> collapse_variant;

  cplx omega(int i) const { return kTwoPi * omega_mhz[static_cast<std::size_t>(i)]; }
  cplx omega_mw(int k) const { return kTwoPi * omega_mw_mhz[static_cast<std::size_t>(k)]; }
  double delta() const { return mhz_to_angular(delta_mhz); }
  double u(int i, int j) const { return mhz_to_angular(u_table_mhz.at(i, j)); }
  /// Total decay rate of each Rydberg level, 1/us.
  double gamma() const { return gamma_khz * 1e-3 * (gamma_angular ? kTwoPi : 1.0); }

  CollapseVariant resolved_collapse() const {
    if (collapse_variant) return *collapse_variant;
    return flavor == Flavor::full ? CollapseVariant::independent : CollapseVariant::paper_effective;
  }

  Dims dims() const { return Dims(static_cast<std::size_t>(atoms), kLevels); }
  Index dimension() const { return dims_product(dims()); }

  void validate() const {
    if (atoms != 2 && atoms != 3) throw InputError("atoms must be 2 or 3");
    if (!(gamma_khz >= 0.0)) throw InputError("gamma must be non-negative");
    if (flavor == Flavor::effective) {
      if (atoms != 2) throw InputError("effective flavor is defined for two atoms only");
      if (delta_mhz == 0.0) throw InputError("effective flavor needs a nonzero detuning");
      if (omega_mhz[0] != omega_mhz[1] || omega_mhz[1] != omega_mhz[2] || omega_mhz[0].imag() != 0.0) {
        throw InputError("effective flavor needs equal real laser Rabi frequencies");
      }
      if (omega_mw_mhz[0] != omega_mw_mhz[1]) {
        throw InputError("effective flavor needs equal microwave couplings");
      }
    }
    if (resolved_collapse() == CollapseVariant::paper_effective && atoms != 2) {
      throw InputError("paper-effective collapse set is defined for two atoms only");
    }
  }

  bool operator==(const ModelSpec&) const = default;
};

/// Default parameters shared by every figure: Omega/2pi = 0.02 MHz, gamma = 1 kHz.
inline ModelSpec figure_defaults(int atoms = 2) {
  ModelSpec s;
  s.omega_mhz = {0.02, 0.02, 0.02};
  s.gamma_khz = 1.0;
  s.atoms = atoms;
  return s;
}

/// omega = 3 Omega^2 / (4 Delta), with U_cross = cross_ratio * Delta and
/// U_same = same_ratio * Delta. All in MHz.
inline void apply_pumping_rules(ModelSpec& s, double same_ratio, double cross_ratio) {
  const double om = s.omega_mhz[0].real();
  const double w = 3.0 * om * om / (4.0 * s.delta_mhz);
  s.omega_mw_mhz = {w, w};
  s.u_table_mhz = InteractionTable::same_and_cross(same_ratio * s.delta_mhz, cross_ratio * s.delta_mhz);
}

// ---------------------------------------------------------------------------
// Basis helpers

inline StateVector basis_state(std::span<const int> levels) {
  Index flat = 0;
  for (int l : levels) flat = flat * kLevels + l;
  StateVector v = StateVector::Zero(static_cast<Index>(std::pow(kLevels, levels.size())));
  v(flat) = 1.0;
  return v;
}

inline StateVector basis_state(std::initializer_list<int> levels) {
  const std::vector<int> v(levels);
  return basis_state(std::span<const int>(v));
}

inline Operator outer(const StateVector& ket, const StateVector& bra, const Dims& dims) {
  return {DenseMatrix(ket * bra.adjoint()), dims};
}

inline Operator local_projector(int level) {
  DenseMatrix m = DenseMatrix::Zero(kLevels, kLevels);
  m(level, level) = 1.0;
  return {std::move(m), {kLevels}};
}

inline Operator local_transition(int to, int from, cplx amplitude = 1.0) {
  DenseMatrix m = DenseMatrix::Zero(kLevels, kLevels);
  m(to, from) = amplitude;
  return {std::move(m), {kLevels}};
}

// ---------------------------------------------------------------------------
// Target states

inline StateVector psi_state() {
  return (basis_state({gL, gL}) - basis_state({g0, g0}) + basis_state({gR, gR})) / std::sqrt(3.0);
}

inline StateVector phi_state() {
  return (basis_state({gL, gL}) + 2.0 * basis_state({g0, g0}) + basis_state({gR, gR})) / std::sqrt(6.0);
}

inline StateVector upsilon_state() {
  return (basis_state({gL, gL}) - basis_state({gR, gR})) / std::sqrt(2.0);
}

/// Totally antisymmetric three-atom ground state.
inline StateVector singlet3_state() {
  return (basis_state({g0, gL, gR}) - basis_state({gL, g0, gR}) - basis_state({gR, gL, g0}) +
          basis_state({gL, gR, g0}) + basis_state({gR, g0, gL}) - basis_state({g0, gR, gL})) /
         std::sqrt(6.0);
}

/// Parses "gLg0", "g0 e_R", ... into a level sequence.
inline std::optional<std::vector<int>> parse_product_label(std::string_view label) {
  std::vector<int> levels;
  std::size_t i = 0;
  while (i < label.size()) {
    const char c = label[i];
    if (c == ' ' || c == ',' || c == '|' || c == '>') {
      ++i;
      continue;
    }
    if ((c != 'g' && c != 'e') || i + 1 >= label.size()) return std::nullopt;
    std::size_t j = i + 1;
    if (label[j] == '_' && j + 1 < label.size()) ++j;
    int sub = -1;
    switch (label[j]) {
      case 'L': sub = 0; break;
      case '0': sub = 1; break;
      case 'R': sub = 2; break;
      default: return std::nullopt;
    }
    levels.push_back(c == 'g' ? ground(sub) : rydberg(sub));
    i = j + 1;
  }
  if (levels.empty()) return std::nullopt;
  return levels;
}

/// Named state: Psi, Phi, Upsilon (two atoms), S3 (three atoms) or a product label.
inline StateVector target_state(std::string_view name, int atoms) {
  auto require = [&](int n) {
    if (atoms != n) {
      throw InputError("state '" + std::string(name) + "' needs " + std::to_string(n) + " atoms");
    }
  };
  if (name == "Psi") return require(2), psi_state();
  if (name == "Phi") return require(2), phi_state();
  if (name == "Upsilon") return require(2), upsilon_state();
  if (name == "S3") return require(3), singlet3_state();
  if (auto levels = parse_product_label(name)) {
    require(static_cast<int>(levels->size()));
    return basis_state(std::span<const int>(*levels));
  }
  throw InputError("unknown state name '" + std::string(name) + "'");
}

/// The 3^atoms product states with every atom in a ground level.
inline std::vector<StateVector> ground_product_states(int atoms) {
  std::vector<StateVector> out;
  const int count = static_cast<int>(std::pow(3, atoms));
  std::vector<int> levels(static_cast<std::size_t>(atoms));
  for (int k = 0; k < count; ++k) {
    int rest = k;
    for (int a = atoms - 1; a >= 0; --a) {
      levels[static_cast<std::size_t>(a)] = ground(rest % 3);
      rest /= 3;
    }
    out.push_back(basis_state(std::span<const int>(levels)));
  }
  return out;
}

/// Uniform mixture over all ground product states.
inline DensityMatrix ground_mixture(int atoms) {
  const auto states = ground_product_states(atoms);
  return DensityMatrix::uniform_mixture(states, Dims(static_cast<std::size_t>(atoms), kLevels));
}

// ---------------------------------------------------------------------------
// Hamiltonians (hbar = 1, rad/us)

/// 6x6 single-atom Hamiltonian: laser couplings g_i <-> e_i, microwave
/// couplings g_L <-> g_0 <-> g_R and -Delta on every Rydberg level.
inline Operator single_atom_hamiltonian(const ModelSpec& spec) {
  DenseMatrix h = DenseMatrix::Zero(kLevels, kLevels);
  h(gL, g0) = spec.omega_mw(0);
  h(g0, gR) = spec.omega_mw(1);
  for (int i = 0; i < 3; ++i) {
    h(ground(i), rydberg(i)) = spec.omega(i);
    h(rydberg(i), rydberg(i)) = -spec.delta();
  }
  h(g0, gL) = std::conj(h(gL, g0));
  h(gR, g0) = std::conj(h(g0, gR));
  for (int i = 0; i < 3; ++i) h(rydberg(i), ground(i)) = std::conj(h(ground(i), rydberg(i)));
  return {std::move(h), {kLevels}};
}

/// Microwave part of the single-atom Hamiltonian.
inline Operator single_atom_microwave(const ModelSpec& spec) {
  ModelSpec mw = spec;
  mw.omega_mhz = {};
  mw.delta_mhz = 0.0;
  return single_atom_hamiltonian(mw);
}

/// Pairwise Rydberg interaction, diagonal: U_ij on |e_i>_a |e_j>_b summed over atom pairs a < b.
inline Operator interaction_hamiltonian(const ModelSpec& spec) {
  const Dims dims = spec.dims();
  const Index n = dims_product(dims);
  std::vector<Eigen::Triplet<cplx>> diag;
  std::vector<int> digits;
  for (Index k = 0; k < n; ++k) {
    detail::unflatten(k, dims, digits);
    double e = 0.0;
    for (int a = 0; a < spec.atoms; ++a) {
      for (int b = a + 1; b < spec.atoms; ++b) {
        const int la = digits[static_cast<std::size_t>(a)];
        const int lb = digits[static_cast<std::size_t>(b)];
        if (la >= 3 && lb >= 3) e += spec.u(la - 3, lb - 3);
      }
    }
    if (e != 0.0) diag.emplace_back(k, k, e);
  }
  SparseMatrix v(n, n);
  v.setFromTriplets(diag.begin(), diag.end());
  return {std::move(v), dims};
}

inline Operator sum_over_atoms(const Operator& local, const Dims& dims) {
  Operator out = embed(local, 0, dims);
  for (int a = 1; a < static_cast<int>(dims.size()); ++a) out = out + embed(local, a, dims);
  return out;
}

/// H_1 (x) I + I (x) H_2 (+ third atom) + V.
inline Operator full_hamiltonian(const ModelSpec& spec) {
  return sum_over_atoms(single_atom_hamiltonian(spec), spec.dims()) + interaction_hamiltonian(spec);
}

/// Microwave-only part of the full Hamiltonian, sum over atoms.
inline Operator microwave_hamiltonian(const ModelSpec& spec) {
  return sum_over_atoms(single_atom_microwave(spec), spec.dims());
}

/// Second-order laser part of the two-atom effective Hamiltonian: couplings
/// |g_i g_j> <-> |e_i e_j> (i != j) and Stark shifts, all of strength 2 Omega^2 / Delta.
inline Operator effective_laser_hamiltonian(const ModelSpec& spec) {
  if (spec.atoms != 2) throw InputError("effective Hamiltonian is defined for two atoms only");
  const double om = spec.omega(0).real();
  const double k = 2.0 * om * om / spec.delta();
  const Dims dims{kLevels, kLevels};
  DenseMatrix h = DenseMatrix::Zero(36, 36);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      const StateVector g = basis_state({ground(i), ground(j)});
      const StateVector e = basis_state({rydberg(i), rydberg(j)});
      h += k * (g * e.adjoint() + e * g.adjoint() + e * e.adjoint() + g * g.adjoint());
    }
  }
  for (const StateVector& v : {psi_state(), phi_state(), upsilon_state()}) h += k * v * v.adjoint();
  return {std::move(h), dims};
}

/// Microwave part of the two-atom effective Hamiltonian, written in the
/// {Psi, Phi, Upsilon, |g_i g_j>} basis of the ground manifold.
inline Operator effective_microwave_hamiltonian(const ModelSpec& spec) {
  if (spec.atoms != 2) throw InputError("effective Hamiltonian is defined for two atoms only");
  const cplx w = spec.omega_mw(0);
  const double r2 = std::sqrt(2.0), r3 = std::sqrt(3.0);
  const StateVector phi = phi_state(), ups = upsilon_state();
  auto ket = [](int a, int b) { return basis_state({a, b}); };
  const StateVector lz = ket(gL, g0) + ket(g0, gL);
  const StateVector rz = ket(gR, g0) + ket(g0, gR);
  DenseMatrix a = (w / r2) * (lz * (r3 * phi + ups).adjoint() + rz * (r3 * phi - ups).adjoint());
  a += w * ((ket(g0, gL) + ket(gR, g0)) * ket(gR, gL).adjoint() +
            (ket(gL, g0) + ket(g0, gR)) * ket(gL, gR).adjoint());
  return {DenseMatrix(a + a.adjoint()), {kLevels, kLevels}};
}

/// Effective two-atom Hamiltonian embedded in the 36-dimensional space.
inline Operator effective_hamiltonian(const ModelSpec& spec) {
  if (spec.flavor != Flavor::effective) {
    throw InputError("effective_hamiltonian requires flavor = effective");
  }
  spec.validate();
  return effective_laser_hamiltonian(spec) + effective_microwave_hamiltonian(spec);
}

inline Operator hamiltonian(const ModelSpec& spec) {
  spec.validate();
  return spec.flavor == Flavor::full ? full_hamiltonian(spec) : effective_hamiltonian(spec);
}

// ---------------------------------------------------------------------------
// Collapse operators

namespace detail {

// Decay of atom 1 or 2 into |g_k>, as written for the effective two-atom model:
// bi-excitations and single excitations with i != j, plus the same-state
// channel re-expressed through Psi, Phi, Upsilon.
inline Operator paper_effective_collapse(int atom, int k, double amp) {
  const double r2 = std::sqrt(2.0), r3 = std::sqrt(3.0), r6 = std::sqrt(6.0);
  const Dims dims{kLevels, kLevels};
  auto ket = [](int a, int b) { return basis_state({a, b}); };
  DenseMatrix l = DenseMatrix::Zero(36, 36);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      if (atom == 0) {
        l += ket(ground(k), rydberg(j)) * ket(rydberg(i), rydberg(j)).adjoint();
        l += ket(ground(k), ground(j)) * ket(rydberg(i), ground(j)).adjoint();
      } else {
        l += ket(rydberg(j), ground(k)) * ket(rydberg(j), rydberg(i)).adjoint();
        l += ket(ground(j), ground(k)) * ket(ground(j), rydberg(i)).adjoint();
      }
    }
  }
  StateVector same;
  switch (k) {
    case 0: same = psi_state() / r3 + phi_state() / r6 + upsilon_state() / r2; break;
    case 1: same = 2.0 / r6 * phi_state() - psi_state() / r3; break;
    default: same = psi_state() / r3 + phi_state() / r6 - upsilon_state() / r2; break;
  }
  const StateVector from = atom == 0 ? ket(rydberg(k), ground(k)) : ket(ground(k), rydberg(k));
  l += same * from.adjoint();
  return {DenseMatrix(amp * l), dims};
}

}  // namespace detail

/// Single-atom decay channels (6x6) for the independent and coherent-sum sets.
inline std::vector<Operator> local_collapse_ops(const ModelSpec& spec) {
  const double amp = std::sqrt(spec.gamma() / 3.0);
  std::vector<Operator> out;
  switch (spec.resolved_collapse()) {
    case CollapseVariant::independent:
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) out.push_back(local_transition(ground(j), rydberg(i), amp));
      }
      break;
    case CollapseVariant::coherent_sum:
      for (int j = 0; j < 3; ++j) {
        DenseMatrix m = DenseMatrix::Zero(kLevels, kLevels);
        for (int i = 0; i < 3; ++i) m(ground(j), rydberg(i)) = amp;
        out.emplace_back(std::move(m), Dims{kLevels});
      }
      break;
    case CollapseVariant::paper_effective:
      throw InputError("paper-effective decay channels are not single-atom operators");
  }
  return out;
}

/// Spontaneous-emission channels, branching gamma/3 into each ground level.
inline std::vector<Operator> collapse_ops(const ModelSpec& spec) {
  spec.validate();
  std::vector<Operator> out;
  if (spec.resolved_collapse() == CollapseVariant::paper_effective) {
    const double amp = std::sqrt(spec.gamma() / 3.0);
    for (int a = 0; a < 2; ++a) {
      for (int k = 0; k < 3; ++k) out.push_back(detail::paper_effective_collapse(a, k, amp));
    }
    return out;
  }
  const Dims dims = spec.dims();
  const auto local = local_collapse_ops(spec);
  for (int a = 0; a < spec.atoms; ++a) {
    for (const auto& l : local) out.push_back(embed(l, a, dims));
  }
  return out;
}

}  // namespace rydsteady
