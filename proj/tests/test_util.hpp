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

#include "rydsteady/opalg.hpp"

#include <random>

namespace rydsteady::testing {

inline DenseMatrix random_matrix(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  DenseMatrix m(n, n);
  for (Index c = 0; c < n; ++c) {
    for (Index r = 0; r < n; ++r) m(r, c) = cplx(g(rng), g(rng));
  }
  return m;
}

inline DenseMatrix random_hermitian(Index n, std::mt19937_64& rng) {
  const DenseMatrix m = random_matrix(n, rng);
  return 0.5 * (m + m.adjoint());
}

inline StateVector random_vector(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  StateVector v(n);
  for (Index k = 0; k < n; ++k) v(k) = cplx(g(rng), g(rng));
  return v.normalized();
}

// Full-rank state from a Ginibre matrix.
inline DensityMatrix random_density(const Dims& dims, std::mt19937_64& rng) {
  const DenseMatrix g = random_matrix(dims_product(dims), rng);
  DenseMatrix rho = g * g.adjoint();
  rho /= rho.trace().real();
  rho = 0.5 * (rho + rho.adjoint()).eval();
  return {rho, dims};
}

}  // namespace rydsteady::testing
