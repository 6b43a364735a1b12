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

#pragma once

#include "rydsteady/dynamics.hpp"
#include "rydsteady/model.hpp"
#include "rydsteady/opalg.hpp"

#include <map>
#include <string>
#include <vector>

namespace rydsteady {

/// (||rho^{T_k}||_1 - 1) / 2 for a two-party state.
inline double negativity(const DensityMatrix& rho, int subsystem = 0) {
  if (rho.dims().size() != 2) {
    throw InputError("negativity is defined for bipartite states only (got " +
                     std::to_string(rho.dims().size()) + " factors)");
  }
  return 0.5 * (trace_norm_hermitian(partial_transpose(rho, subsystem)) - 1.0);
}

inline constexpr double kFidelityImagTol = 1e-12;

/// <target|rho|target> for a pure target.
inline double fidelity_pure(const DensityMatrix& rho, const StateVector& target) {
  if (target.size() != rho.dimension()) throw InputError("fidelity_pure: dimension mismatch");
  const cplx f = (target.adjoint() * rho.matrix() * target)(0, 0);
  if (std::abs(f.imag()) > kFidelityImagTol) throw SolverError("fidelity has an imaginary part");
  return f.real();
}

/// Projector onto "every atom in a ground level" (or at least one atom
/// excited when `excited` is set).
inline Operator manifold_projector(int atoms, bool excited) {
  const Dims dims(static_cast<std::size_t>(atoms), kLevels);
  const Index n = dims_product(dims);
  std::vector<Eigen::Triplet<cplx>> diag;
  std::vector<int> digits;
  for (Index k = 0; k < n; ++k) {
    detail::unflatten(k, dims, digits);
    const bool all_ground = std::all_of(digits.begin(), digits.end(), [](int l) { return l < 3; });
    if (all_ground != excited) diag.emplace_back(k, k, 1.0);
  }
  SparseMatrix p(n, n);
  p.setFromTriplets(diag.begin(), diag.end());
  return {std::move(p), dims};
}

/// Label -> population. Labels are product states ("gLg0"), the named
/// entangled states (Psi, Phi, Upsilon, S3) or the totals "ground"/"excited".
inline std::map<std::string, double> populations(const DensityMatrix& rho, const std::vector<std::string>& labels) {
  const int atoms = static_cast<int>(rho.dims().size());
  std::map<std::string, double> out;
  for (const auto& label : labels) {
    if (label == "ground" || label == "excited") {
      const Observable o{label, manifold_projector(atoms, label == "excited")};
      out[label] = o.evaluate(rho.matrix());
    } else {
      out[label] = fidelity_pure(rho, target_state(label, atoms));
    }
  }
  return out;
}

/// Frobenius norm of the generator applied to rho.
inline double steady_residual(const ModelSpec& spec, const DensityMatrix& rho) {
  if (rho.dimension() != spec.dimension()) throw InputError("steady_residual: dimension mismatch");
  const auto ls = collapse_ops(spec);
  return lindblad_rhs(hamiltonian(spec), ls, rho).dense().norm();
}

struct MetricReport {
  double negativity = 0.0;
  std::map<std::string, double> fidelity;
  std::map<std::string, double> populations;
  double purity = 0.0;
};

inline MetricReport metric_report(const DensityMatrix& rho) {
  MetricReport r;
  const int atoms = static_cast<int>(rho.dims().size());
  if (atoms == 2) {
    r.negativity = negativity(rho, 0);
    for (const char* name : {"Psi", "Phi", "Upsilon"}) r.fidelity[name] = fidelity_pure(rho, target_state(name, 2));
  } else if (atoms == 3) {
    r.fidelity["S3"] = fidelity_pure(rho, singlet3_state());
  }
  r.populations = populations(rho, {"ground", "excited"});
  r.purity = rho.purity();
  return r;
}

}  // namespace rydsteady
