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

// Operator algebra: tensor products, partial transpose/trace, Hermitian
// spectra and the column-stacked Lindblad superoperator.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace rydsteady {

using cplx = std::complex<double>;
using DenseMatrix = Eigen::MatrixXcd;
using SparseMatrix = Eigen::SparseMatrix<cplx, Eigen::ColMajor>;
using StateVector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using Index = Eigen::Index;
using Dims = std::vector<int>;

inline constexpr cplx kI{0.0, 1.0};

/// Operators up to this dimension are stored dense; larger ones sparse.
inline constexpr Index kDenseLimit = 64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input (dimensions, labels, parameters).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure (singular system, step cap, unstable step).
class SolverError : public Error {
 public:
  using Error::Error;
};

inline Index dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), Index{1},
                         [](Index acc, int d) { return acc * d; });
}

enum class Storage { dense, sparse };

inline Storage storage_for(Index dimension) {
  return dimension <= kDenseLimit ? Storage::dense : Storage::sparse;
}

/// Square complex matrix tagged with its tensor-factor dimensions.
class Operator {
 public:
  Operator() = default;

  Operator(DenseMatrix m, Dims dims) : dims_(std::move(dims)) {
    check_shape(m.rows(), m.cols());
    if (storage_for(m.rows()) == Storage::dense) {
      data_ = std::move(m);
    } else {
      data_ = SparseMatrix(m.sparseView());
    }
  }

  Operator(SparseMatrix m, Dims dims) : dims_(std::move(dims)) {
    check_shape(m.rows(), m.cols());
    m.makeCompressed();
    if (storage_for(m.rows()) == Storage::dense) {
      data_ = DenseMatrix(m);
    } else {
      data_ = std::move(m);
    }
  }

  static Operator zero(const Dims& dims) {
    const Index n = dims_product(dims);
    if (storage_for(n) == Storage::dense) return {DenseMatrix::Zero(n, n), dims};
    return {SparseMatrix(n, n), dims};
  }

  static Operator identity(const Dims& dims) {
    const Index n = dims_product(dims);
    SparseMatrix id(n, n);
    id.setIdentity();
    return {std::move(id), dims};
  }

  const Dims& dims() const { return dims_; }
  Index dimension() const { return dims_product(dims_); }
  Storage storage() const {
    return std::holds_alternative<DenseMatrix>(data_) ? Storage::dense : Storage::sparse;
  }

  DenseMatrix dense() const {
    if (auto* d = std::get_if<DenseMatrix>(&data_)) return *d;
    return DenseMatrix(std::get<SparseMatrix>(data_));
  }

  SparseMatrix sparse() const {
    if (auto* s = std::get_if<SparseMatrix>(&data_)) return *s;
    SparseMatrix s = std::get<DenseMatrix>(data_).sparseView();
    s.makeCompressed();
    return s;
  }

  cplx coeff(Index r, Index c) const {
    if (auto* d = std::get_if<DenseMatrix>(&data_)) return (*d)(r, c);
    return std::get<SparseMatrix>(data_).coeff(r, c);
  }

  Operator adjoint() const {
    if (auto* d = std::get_if<DenseMatrix>(&data_)) return {DenseMatrix(d->adjoint()), dims_};
    return {SparseMatrix(std::get<SparseMatrix>(data_).adjoint()), dims_};
  }

  StateVector apply(const StateVector& v) const {
    if (auto* d = std::get_if<DenseMatrix>(&data_)) return *d * v;
    return std::get<SparseMatrix>(data_) * v;
  }

  Operator operator+(const Operator& o) const {
    require_same_dims(o);
    return {SparseMatrix(sparse() + o.sparse()), dims_};
  }

  Operator operator*(const Operator& o) const {
    require_same_dims(o);
    return {SparseMatrix(sparse() * o.sparse()), dims_};
  }

  Operator scaled(cplx s) const {
    if (auto* d = std::get_if<DenseMatrix>(&data_)) return {DenseMatrix(*d * s), dims_};
    return {SparseMatrix(std::get<SparseMatrix>(data_) * s), dims_};
  }

  /// Max |A - A^dagger| entrywise.
  double hermiticity_error() const {
    const DenseMatrix d = dense();
    return (d - d.adjoint()).cwiseAbs().maxCoeff();
  }

  cplx trace() const {
    if (auto* d = std::get_if<DenseMatrix>(&data_)) return d->trace();
    const auto& s = std::get<SparseMatrix>(data_);
    cplx t = 0.0;
    for (Index i = 0; i < s.rows(); ++i) t += s.coeff(i, i);
    return t;
  }

  /// Nonzero entries as (row, col, value) triplets, column-major order.
  std::vector<Eigen::Triplet<cplx>> triplets(double drop = 0.0) const {
    std::vector<Eigen::Triplet<cplx>> out;
    const SparseMatrix s = sparse();
    for (Index k = 0; k < s.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(s, k); it; ++it) {
        if (std::abs(it.value()) > drop) out.emplace_back(it.row(), it.col(), it.value());
      }
    }
    return out;
  }

  void require_same_dims(const Operator& o) const {
    if (o.dims_ != dims_) throw InputError("operator dimension mismatch");
  }

 private:
  void check_shape(Index rows, Index cols) const {
    if (rows != cols) throw InputError("operator must be square");
    if (dims_.empty()) throw InputError("operator needs at least one tensor factor");
    for (int d : dims_) {
      if (d <= 0) throw InputError("tensor factor dimensions must be positive");
    }
    if (dims_product(dims_) != rows) {
      throw InputError("product of dims (" + std::to_string(dims_product(dims_)) +
                       ") does not match matrix size " + std::to_string(rows));
    }
  }

  std::variant<DenseMatrix, SparseMatrix> data_;
  Dims dims_{1};
};

inline Dims concat_dims(const Dims& a, const Dims& b) {
  Dims out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline SparseMatrix kron_sparse(const SparseMatrix& a, const SparseMatrix& b) {
  std::vector<Eigen::Triplet<cplx>> trips;
  trips.reserve(static_cast<std::size_t>(a.nonZeros() * b.nonZeros()));
  for (Index ka = 0; ka < a.outerSize(); ++ka) {
    for (SparseMatrix::InnerIterator ia(a, ka); ia; ++ia) {
      for (Index kb = 0; kb < b.outerSize(); ++kb) {
        for (SparseMatrix::InnerIterator ib(b, kb); ib; ++ib) {
          trips.emplace_back(ia.row() * b.rows() + ib.row(), ia.col() * b.cols() + ib.col(),
                             ia.value() * ib.value());
        }
      }
    }
  }
  SparseMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

/// Tensor product a (x) b; the first factor is the slowest index.
inline Operator kron(const Operator& a, const Operator& b) {
  return {kron_sparse(a.sparse(), b.sparse()), concat_dims(a.dims(), b.dims())};
}

/// Embeds a single-factor operator on slot `site` of the product space.
inline Operator embed(const Operator& local, int site, const Dims& dims) {
  if (site < 0 || site >= static_cast<int>(dims.size())) throw InputError("site out of range");
  if (local.dimension() != dims[static_cast<std::size_t>(site)]) {
    throw InputError("local operator does not match factor dimension");
  }
  Operator out = site == 0 ? local : Operator::identity({dims[0]});
  for (int k = 1; k < static_cast<int>(dims.size()); ++k) {
    out = kron(out, k == site ? local : Operator::identity({dims[static_cast<std::size_t>(k)]}));
  }
  return out;
}

/// Hermitian, unit-trace, positive semidefinite operator.
class DensityMatrix {
 public:
  static constexpr double kHermitianTol = 1e-12;
  static constexpr double kTraceTol = 1e-9;
  static constexpr double kPositivityTol = 1e-8;

  DensityMatrix() = default;

  /// Validating constructor.
  DensityMatrix(DenseMatrix m, Dims dims) : DensityMatrix(std::move(m), std::move(dims), Unchecked{}) {
    validate();
  }

  struct Unchecked {};
  DensityMatrix(DenseMatrix m, Dims dims, Unchecked) : matrix_(std::move(m)), dims_(std::move(dims)) {
    if (matrix_.rows() != matrix_.cols() || dims_product(dims_) != matrix_.rows()) {
      throw InputError("density matrix shape does not match dims");
    }
    trace_ = matrix_.trace().real();
  }

  static DensityMatrix pure(const StateVector& psi, Dims dims) {
    const double n = psi.norm();
    if (n == 0.0) throw InputError("cannot build a density matrix from the zero vector");
    const StateVector u = psi / n;
    return {DenseMatrix(u * u.adjoint()), std::move(dims)};
  }

  /// Equal-weight mixture of the given (normalized) vectors.
  static DensityMatrix uniform_mixture(std::span<const StateVector> states, Dims dims) {
    if (states.empty()) throw InputError("empty mixture");
    const Index n = dims_product(dims);
    DenseMatrix m = DenseMatrix::Zero(n, n);
    for (const auto& s : states) m += s.normalized() * s.normalized().adjoint();
    m /= static_cast<double>(states.size());
    return {std::move(m), std::move(dims)};
  }

  const DenseMatrix& matrix() const { return matrix_; }
  const Dims& dims() const { return dims_; }
  Index dimension() const { return matrix_.rows(); }
  double trace() const { return trace_; }
  Operator op() const { return {matrix_, dims_}; }

  double hermiticity_error() const { return (matrix_ - matrix_.adjoint()).cwiseAbs().maxCoeff(); }

  double min_eigenvalue() const {
    const DenseMatrix h = 0.5 * (matrix_ + matrix_.adjoint());
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

  double purity() const { return (matrix_ * matrix_).trace().real(); }

  void validate() const {
    if (hermiticity_error() > kHermitianTol) throw InputError("density matrix is not Hermitian");
    if (std::abs(trace_ - 1.0) > kTraceTol) {
      throw InputError("density matrix trace " + std::to_string(trace_) + " differs from 1");
    }
    if (min_eigenvalue() < -kPositivityTol) throw InputError("density matrix is not positive");
  }

 private:
  DenseMatrix matrix_;
  Dims dims_{1};
  double trace_ = 0.0;
};

namespace detail {

// Mixed-radix digits of a flat index, most significant factor first.
inline void unflatten(Index flat, const Dims& dims, std::vector<int>& digits) {
  digits.resize(dims.size());
  for (std::size_t k = dims.size(); k-- > 0;) {
    digits[k] = static_cast<int>(flat % dims[k]);
    flat /= dims[k];
  }
}

inline Index flatten(const std::vector<int>& digits, const Dims& dims) {
  Index flat = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) flat = flat * dims[k] + digits[k];
  return flat;
}

inline DenseMatrix partial_transpose(const DenseMatrix& m, const Dims& dims, int subsystem) {
  if (subsystem < 0 || subsystem >= static_cast<int>(dims.size())) {
    throw InputError("subsystem index " + std::to_string(subsystem) + " out of range");
  }
  const Index n = m.rows();
  const auto k = static_cast<std::size_t>(subsystem);
  DenseMatrix out(n, n);
  std::vector<int> row, col;
  for (Index c = 0; c < n; ++c) {
    unflatten(c, dims, col);
    for (Index r = 0; r < n; ++r) {
      unflatten(r, dims, row);
      std::swap(row[k], col[k]);
      out(r, c) = m(flatten(row, dims), flatten(col, dims));
      std::swap(row[k], col[k]);
    }
  }
  return out;
}

}  // namespace detail

/// rho^{T_k}: transpose on tensor factor `subsystem` only.
inline Operator partial_transpose(const DensityMatrix& rho, int subsystem) {
  return {detail::partial_transpose(rho.matrix(), rho.dims(), subsystem), rho.dims()};
}

inline Operator partial_transpose(const Operator& a, int subsystem) {
  return {detail::partial_transpose(a.dense(), a.dims(), subsystem), a.dims()};
}

/// Reduced state on the factors listed in `keep` (kept in ascending order).
inline DensityMatrix partial_trace(const DensityMatrix& rho, std::vector<int> keep) {
  if (keep.empty()) throw InputError("partial_trace needs a nonempty keep set");
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  const Dims& dims = rho.dims();
  for (int k : keep) {
    if (k < 0 || k >= static_cast<int>(dims.size())) throw InputError("keep index out of range");
  }
  Dims kept_dims;
  for (int k : keep) kept_dims.push_back(dims[static_cast<std::size_t>(k)]);
  std::vector<bool> is_kept(dims.size(), false);
  for (int k : keep) is_kept[static_cast<std::size_t>(k)] = true;

  const Index n = rho.dimension();
  const Index m = dims_product(kept_dims);
  DenseMatrix out = DenseMatrix::Zero(m, m);
  std::vector<int> row, col, rk(keep.size()), ck(keep.size());
  for (Index c = 0; c < n; ++c) {
    detail::unflatten(c, dims, col);
    for (Index r = 0; r < n; ++r) {
      detail::unflatten(r, dims, row);
      bool diagonal_in_traced = true;
      std::size_t j = 0;
      for (std::size_t k = 0; k < dims.size(); ++k) {
        if (is_kept[k]) {
          rk[j] = row[k];
          ck[j] = col[k];
          ++j;
        } else if (row[k] != col[k]) {
          diagonal_in_traced = false;
          break;
        }
      }
      if (diagonal_in_traced) {
        out(detail::flatten(rk, kept_dims), detail::flatten(ck, kept_dims)) += rho.matrix()(r, c);
      }
    }
  }
  return {std::move(out), std::move(kept_dims), DensityMatrix::Unchecked{}};
}

inline constexpr double kHermitianInputTol = 1e-10;

/// Full spectrum of a Hermitian operator, ascending.
inline RealVector hermitian_eigenvalues(const Operator& a) {
  const DenseMatrix d = a.dense();
  if ((d - d.adjoint()).cwiseAbs().maxCoeff() > kHermitianInputTol) {
    throw InputError("hermitian_eigenvalues: input is not Hermitian");
  }
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(0.5 * (d + d.adjoint()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw SolverError("Hermitian eigensolver did not converge");
  return es.eigenvalues();
}

/// Trace norm Tr sqrt(A^dagger A) of a Hermitian A, i.e. the sum of |eigenvalues|.
inline double trace_norm_hermitian(const Operator& a) {
  return hermitian_eigenvalues(a).cwiseAbs().sum();
}

/// Column-stacking vectorization: vec(X)[i + n j] = X(i, j).
inline StateVector vectorize(const DenseMatrix& x) {
  return Eigen::Map<const StateVector>(x.data(), x.size());
}

inline DenseMatrix unvectorize(const StateVector& v, Index n) {
  if (v.size() != n * n) throw InputError("vector length is not n^2");
  return Eigen::Map<const DenseMatrix>(v.data(), n, n);
}

/// Superoperator S with S vec(rho) = vec(-i[H, rho] + sum_k L rho L^+ - 1/2 {L^+ L, rho}).
class Liouvillian {
 public:
  Liouvillian(SparseMatrix s, Dims dims) : dims_(std::move(dims)) {
    const Index d = dims_product(dims_);
    if (s.rows() != d * d || s.cols() != d * d) throw InputError("Liouvillian size mismatch");
    if (storage_for(d) == Storage::dense) {
      data_ = DenseMatrix(s);
    } else {
      s.makeCompressed();
      data_ = std::move(s);
    }
  }

  const Dims& dims() const { return dims_; }
  Index hilbert_dimension() const { return dims_product(dims_); }
  Index size() const { return hilbert_dimension() * hilbert_dimension(); }
  Storage storage() const {
    return std::holds_alternative<DenseMatrix>(data_) ? Storage::dense : Storage::sparse;
  }

  /// Dense matrix; only available for Hilbert dimensions up to kDenseLimit.
  const DenseMatrix& dense() const {
    if (auto* d = std::get_if<DenseMatrix>(&data_)) return *d;
    throw InputError("Liouvillian of dimension " + std::to_string(hilbert_dimension()) +
                     " is stored sparse only");
  }

  SparseMatrix sparse() const {
    if (auto* d = std::get_if<DenseMatrix>(&data_)) return d->sparseView();
    return std::get<SparseMatrix>(data_);
  }

  StateVector apply(const StateVector& v) const {
    if (auto* d = std::get_if<DenseMatrix>(&data_)) return *d * v;
    return std::get<SparseMatrix>(data_) * v;
  }

  DenseMatrix apply(const DenseMatrix& rho) const {
    return unvectorize(apply(vectorize(rho)), hilbert_dimension());
  }

 private:
  std::variant<DenseMatrix, SparseMatrix> data_;
  Dims dims_;
};

inline Liouvillian liouvillian_matrix(const Operator& h, std::span<const Operator> collapse) {
  for (const auto& l : collapse) h.require_same_dims(l);
  const Index n = h.dimension();
  SparseMatrix id(n, n);
  id.setIdentity();
  const SparseMatrix hs = h.sparse();
  SparseMatrix s = (kron_sparse(id, hs) - kron_sparse(SparseMatrix(hs.transpose()), id)) * (-kI);
  for (const auto& l : collapse) {
    const SparseMatrix ls = l.sparse();
    const SparseMatrix ldl = SparseMatrix(ls.adjoint()) * ls;
    s += kron_sparse(SparseMatrix(ls.conjugate()), ls);
    s -= 0.5 * kron_sparse(id, ldl);
    s -= 0.5 * kron_sparse(SparseMatrix(ldl.transpose()), id);
  }
  s.prune(cplx(0.0));
  return {std::move(s), h.dims()};
}

}  // namespace rydsteady
