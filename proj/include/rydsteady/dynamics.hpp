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

// Master-equation time evolution and direct steady-state solution.

#pragma once

#include "rydsteady/model.hpp"
#include "rydsteady/opalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace rydsteady {

/// Operator of the form sum_a (I (x) ... (x) local (x) ... (x) I) + diag(diagonal)
/// on `sites` identical factors of dimension `local.rows()`. `local` carries
/// no diagonal; every diagonal contribution lives in `diagonal`.
struct KroneckerSum {
  DenseMatrix local;
  int sites = 0;
  StateVector diagonal;

  Index factor_dimension() const { return local.rows(); }
  Index dimension() const { return diagonal.size(); }

  /// out = (this) * y for a square n x n column-major y.
  void multiply(const DenseMatrix& y, DenseMatrix& out) const {
    using Strided = Eigen::Map<DenseMatrix, 0, Eigen::OuterStride<>>;
    using ConstStrided = Eigen::Map<const DenseMatrix, 0, Eigen::OuterStride<>>;
    const Index n = dimension();
    const Index d = factor_dimension();
    out.noalias() = diagonal.asDiagonal() * y;
    Index stride = n;
    for (int a = 0; a < sites; ++a) {
      stride /= d;
      // Row index = hi * d * stride + level * stride + lo.
      const Index rest = (n * n) / (stride * d);
      if (stride == 1) {
        Eigen::Map<DenseMatrix>(out.data(), d, rest).noalias() +=
            local * Eigen::Map<const DenseMatrix>(y.data(), d, rest);
        continue;
      }
      for (Index k = 0; k < d; ++k) {
        const ConstStrided src(y.data() + k * stride, stride, rest, Eigen::OuterStride<>(stride * d));
        for (Index i = 0; i < d; ++i) {
          const cplx v = local(i, k);
          if (v == cplx(0.0)) continue;
          Strided dst(out.data() + i * stride, stride, rest, Eigen::OuterStride<>(stride * d));
          dst += v * src;
        }
      }
    }
  }

  DenseMatrix to_dense() const {
    const Index n = dimension();
    DenseMatrix id = DenseMatrix::Identity(n, n);
    DenseMatrix out;
    multiply(id, out);
    return out;
  }
};

/// sum_k L_k rho L_k^+ for jump operators that each act on a single factor
/// of a product of identical factors. Stored as the four-index tensor
/// C(p, p', q, q') = sum_k l_k(p, q) conj(l_k(p', q')), applied block-wise.
class LocalDissipator {
 public:
  LocalDissipator() = default;

  LocalDissipator(std::span<const Operator> local_jumps, int sites) : sites_(sites) {
    if (local_jumps.empty()) return;
    d_ = local_jumps.front().dimension();
    std::vector<cplx> c(static_cast<std::size_t>(d_ * d_ * d_ * d_), 0.0);
    auto at = [&](Index p, Index pp, Index q, Index qq) -> cplx& {
      return c[static_cast<std::size_t>(((p * d_ + pp) * d_ + q) * d_ + qq)];
    };
    for (const auto& l : local_jumps) {
      const DenseMatrix m = l.dense();
      for (Index p = 0; p < d_; ++p)
        for (Index q = 0; q < d_; ++q)
          for (Index pp = 0; pp < d_; ++pp)
            for (Index qq = 0; qq < d_; ++qq) at(p, pp, q, qq) += m(p, q) * std::conj(m(pp, qq));
    }
    for (Index p = 0; p < d_; ++p)
      for (Index pp = 0; pp < d_; ++pp)
        for (Index q = 0; q < d_; ++q)
          for (Index qq = 0; qq < d_; ++qq)
            if (std::abs(at(p, pp, q, qq)) > 0.0) terms_.push_back({p, pp, q, qq, at(p, pp, q, qq)});
  }

  bool empty() const { return terms_.empty(); }

  void accumulate(const DenseMatrix& rho, DenseMatrix& out) const {
    using Strided = Eigen::Map<DenseMatrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
    using ConstStrided = Eigen::Map<const DenseMatrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
    const Index n = rho.rows();
    Index stride = n;
    for (int a = 0; a < sites_; ++a) {
      stride /= d_;
      const Index outer = n / (stride * d_);
      for (const auto& t : terms_) {
        if (stride == 1) {
          // Rows p, p + d, p + 2d, ...
          const Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic> st(d_ * n, d_);
          Strided dst(out.data() + t.p + t.pp * n, n / d_, n / d_, st);
          dst += t.value * ConstStrided(rho.data() + t.q + t.qq * n, n / d_, n / d_, st);
          continue;
        }
        for (Index hc = 0; hc < outer; ++hc) {
          for (Index hr = 0; hr < outer; ++hr) {
            const Index r0 = hr * d_ * stride, c0 = hc * d_ * stride;
            out.block(r0 + t.p * stride, c0 + t.pp * stride, stride, stride) +=
                t.value * rho.block(r0 + t.q * stride, c0 + t.qq * stride, stride, stride);
          }
        }
      }
    }
  }

 private:
  struct Term {
    Index p, pp, q, qq;
    cplx value;
  };
  int sites_ = 0;
  Index d_ = 0;
  std::vector<Term> terms_;
};

/// Matrix-free Lindblad generator. Precomputes the non-Hermitian
/// H_eff = H - i/2 sum L^+ L so that for Hermitian rho
///   d rho / dt = X + X^+ + sum_k L_k rho L_k^+,   X = -i H_eff rho.
class LindbladGenerator {
 public:
  using RowSparse = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;
  using State = DenseMatrix;

  LindbladGenerator(const Operator& h, std::span<const Operator> collapse)
      : dims_(h.dims()), n_(h.dimension()) {
    const SparseMatrix loss = add_jumps(h, collapse);
    const SparseMatrix hs = h.sparse();
    for (Index k = 0; k < n_; ++k) {
      max_energy_ = std::max(max_energy_, std::abs(hs.coeff(k, k)));
      max_decay_ = std::max(max_decay_, std::abs(loss.coeff(k, k)));
    }
    SparseMatrix heff = hs - 0.5 * kI * loss;
    heff.prune(cplx(0.0));
    if (storage_for(n_) == Storage::dense) {
      heff_ = DenseMatrix(heff);
    } else {
      heff_ = RowSparse(heff);
    }
  }

  /// Structured form for identical factors: H_eff given as a Kronecker sum
  /// and every collapse operator one of `local_jumps` embedded on one site.
  /// `h` and `collapse` are the same model in explicit form.
  LindbladGenerator(const Operator& h, std::span<const Operator> collapse, KroneckerSum structured,
                    std::span<const Operator> local_jumps)
      : dims_(h.dims()), n_(h.dimension()) {
    if (structured.dimension() != n_) throw InputError("structured Hamiltonian dimension mismatch");
    const SparseMatrix loss = add_jumps(h, collapse);
    jumps_.clear();
    local_ = LocalDissipator(local_jumps, structured.sites);
    const SparseMatrix hs = h.sparse();
    for (Index k = 0; k < n_; ++k) {
      max_energy_ = std::max(max_energy_, std::abs(hs.coeff(k, k)));
      max_decay_ = std::max(max_decay_, std::abs(loss.coeff(k, k)));
    }
    heff_ = std::move(structured);
  }

  const Dims& dims() const { return dims_; }
  Index dimension() const { return n_; }
  double max_energy() const { return max_energy_; }
  double max_decay() const { return max_decay_; }
  bool structured() const { return std::holds_alternative<KroneckerSum>(heff_); }

  /// Spread of the eigenvalues of the Hermitian part of H_eff. Eigenvalues
  /// of the generator have imaginary parts within +- this value.
  double frequency_span() const {
    const DenseMatrix he = effective_hamiltonian();
    const DenseMatrix herm = 0.5 * (he + he.adjoint());
    const RealVector ev = Eigen::SelfAdjointEigenSolver<DenseMatrix>(herm, Eigen::EigenvaluesOnly).eigenvalues();
    return ev.maxCoeff() - ev.minCoeff();
  }

  State from_matrix(const DenseMatrix& rho) const { return rho; }
  DenseMatrix to_matrix(const State& y) const { return y; }

  /// H_eff as a dense matrix (diagnostics and tests).
  DenseMatrix effective_hamiltonian() const {
    if (auto* d = std::get_if<DenseMatrix>(&heff_)) return *d;
    if (auto* k = std::get_if<KroneckerSum>(&heff_)) return k->to_dense();
    return DenseMatrix(std::get<RowSparse>(heff_));
  }

  /// out = L(rho). `rho` must be Hermitian; the coherent part of the result
  /// is exactly Hermitian.
  void apply(const DenseMatrix& rho, DenseMatrix& out) const {
    scratch_.resize(n_, n_);
    if (auto* d = std::get_if<DenseMatrix>(&heff_)) {
      scratch_.noalias() = *d * rho;
    } else if (auto* k = std::get_if<KroneckerSum>(&heff_)) {
      k->multiply(rho, scratch_);
    } else {
      scratch_.noalias() = std::get<RowSparse>(heff_) * rho;
    }
    out.resize(n_, n_);
    // -i X + (-i X)^+ = -i (X - X^+), blocked for cache reuse.
    constexpr Index kBlock = 32;
    for (Index cb = 0; cb < n_; cb += kBlock) {
      for (Index rb = 0; rb < n_; rb += kBlock) {
        const Index ce = std::min(cb + kBlock, n_), re = std::min(rb + kBlock, n_);
        for (Index c = cb; c < ce; ++c) {
          for (Index r = rb; r < re; ++r) {
            const cplx d = scratch_(r, c) - std::conj(scratch_(c, r));
            out(r, c) = cplx(d.imag(), -d.real());
          }
        }
      }
    }
    local_.accumulate(rho, out);
    for (const auto& jump : jumps_) {
      for (const auto& a : jump.entries) {
        for (const auto& b : jump.entries) {
          out(a.row, b.row) += a.value * std::conj(b.value) * rho(a.col, b.col);
        }
      }
    }
  }

  DenseMatrix apply(const DenseMatrix& rho) const {
    DenseMatrix out;
    apply(rho, out);
    return out;
  }

 private:
  struct Jump {
    struct Entry {
      Index row, col;
      cplx value;
    };
    std::vector<Entry> entries;
  };

  SparseMatrix add_jumps(const Operator& h, std::span<const Operator> collapse) {
    SparseMatrix loss(n_, n_);
    for (const auto& l : collapse) {
      h.require_same_dims(l);
      const SparseMatrix ls = l.sparse();
      loss += SparseMatrix(ls.adjoint()) * ls;
      std::vector<Jump::Entry> entries;
      for (const auto& t : l.triplets()) entries.push_back({t.row(), t.col(), t.value()});
      if (!entries.empty()) jumps_.push_back({std::move(entries)});
    }
    return loss;
  }

  Dims dims_;
  Index n_;
  std::variant<DenseMatrix, RowSparse, KroneckerSum> heff_;
  std::vector<Jump> jumps_;
  LocalDissipator local_;
  double max_energy_ = 0.0;
  double max_decay_ = 0.0;
  mutable DenseMatrix scratch_;
};

/// Generator restricted to Hermitian operators that are invariant under
/// every permutation of identical factors (rho = P rho P^+). Exact when the
/// model itself is permutation symmetric. The state keeps one entry per
/// orbit of (row, col) index pairs, and of each pair of orbits related by
/// transposition only one; the other is its complex conjugate. The generator
/// is therefore real-linear: out = A y + B conj(y).
class SymmetricGenerator {
 public:
  using State = StateVector;
  using RowSparse = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;

  SymmetricGenerator(const Operator& h, std::span<const Operator> collapse) : full_(h, collapse) {
    const Dims& dims = h.dims();
    if (dims.size() < 2 || std::adjacent_find(dims.begin(), dims.end(), std::not_equal_to<>()) != dims.end()) {
      throw InputError("symmetric generator needs at least two identical factors");
    }
    const Index n = h.dimension();
    // Image of every basis index under every permutation of the factors.
    std::vector<int> perm(dims.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::vector<Index>> images;
    std::vector<int> digits, moved(dims.size());
    do {
      std::vector<Index> img(static_cast<std::size_t>(n));
      for (Index k = 0; k < n; ++k) {
        detail::unflatten(k, dims, digits);
        for (std::size_t a = 0; a < dims.size(); ++a) moved[static_cast<std::size_t>(perm[a])] = digits[a];
        img[static_cast<std::size_t>(k)] = detail::flatten(moved, dims);
      }
      images.push_back(std::move(img));
    } while (std::next_permutation(perm.begin(), perm.end()));

    // Orbits of column-major pair indices r + c n, labelled by first visit.
    // An orbit is stored unless its transpose orbit was seen first.
    orbit_.assign(static_cast<std::size_t>(n * n), -1);
    std::vector<Index> reps;
    for (Index c = 0; c < n; ++c) {
      for (Index r = 0; r < n; ++r) {
        if (orbit_[static_cast<std::size_t>(r + c * n)] >= 0) continue;
        const auto id = static_cast<std::int32_t>(reps.size());
        reps.push_back(r + c * n);
        for (const auto& img : images) {
          const auto rr = img[static_cast<std::size_t>(r)], cc = img[static_cast<std::size_t>(c)];
          orbit_[static_cast<std::size_t>(rr + cc * n)] = id;
        }
      }
    }
    slot_.assign(reps.size(), 0);
    for (std::size_t o = 0; o < reps.size(); ++o) {
      const Index r = reps[o] % n, c = reps[o] / n;
      const auto t = static_cast<std::size_t>(orbit_[static_cast<std::size_t>(c + r * n)]);
      if (t >= o) {
        slot_[o] = static_cast<std::int32_t>(stored_.size());
        stored_.push_back(reps[o]);
      } else {
        slot_[o] = ~slot_[t];  // conjugate of the transposed orbit
      }
    }

    // Row-compressed storage; each row holds its direct entries, then the
    // entries acting on conjugated slots.
    const RowSparse s = liouvillian_matrix(h, collapse).sparse();
    const Index m = size();
    std::vector<std::pair<std::int32_t, cplx>> direct, conjugate;
    row_start_.push_back(0);
    for (Index row = 0; row < m; ++row) {
      direct.clear();
      conjugate.clear();
      for (RowSparse::InnerIterator it(s, stored_[static_cast<std::size_t>(row)]); it; ++it) {
        const auto sl = slot_[static_cast<std::size_t>(orbit_[static_cast<std::size_t>(it.col())])];
        auto& dst = sl >= 0 ? direct : conjugate;
        const std::int32_t col = sl >= 0 ? sl : ~sl;
        auto hit = std::find_if(dst.begin(), dst.end(), [&](const auto& e) { return e.first == col; });
        if (hit == dst.end()) {
          dst.emplace_back(col, it.value());
        } else {
          hit->second += it.value();
        }
      }
      for (const auto* part : {&direct, &conjugate}) {
        for (const auto& [col, v] : *part) {
          cols_.push_back(col);
          values_.push_back(v);
        }
        if (part == &direct) row_split_.push_back(static_cast<std::int64_t>(cols_.size()));
      }
      row_start_.push_back(static_cast<std::int64_t>(cols_.size()));
    }
    verify();
  }

  const Dims& dims() const { return full_.dims(); }
  Index dimension() const { return full_.dimension(); }
  /// Number of stored complex entries.
  Index size() const { return static_cast<Index>(stored_.size()); }
  Index nonzeros() const { return static_cast<Index>(values_.size()); }
  double max_energy() const { return full_.max_energy(); }
  double max_decay() const { return full_.max_decay(); }
  double frequency_span() const { return full_.frequency_span(); }

  /// Largest deviation of rho from its permutation average.
  double asymmetry(const DenseMatrix& rho) const {
    const std::size_t orbits = slot_.size();
    StateVector sum = StateVector::Zero(static_cast<Index>(orbits));
    Eigen::VectorXd count = Eigen::VectorXd::Zero(static_cast<Index>(orbits));
    for (Index k = 0; k < rho.size(); ++k) {
      sum(orbit_[static_cast<std::size_t>(k)]) += rho.data()[k];
      count(orbit_[static_cast<std::size_t>(k)]) += 1.0;
    }
    double worst = 0.0;
    for (Index k = 0; k < rho.size(); ++k) {
      const auto o = orbit_[static_cast<std::size_t>(k)];
      worst = std::max(worst, std::abs(rho.data()[k] - sum(o) / count(o)));
    }
    return worst;
  }

  State from_matrix(const DenseMatrix& rho) const {
    State y(size());
    for (Index i = 0; i < size(); ++i) y(i) = rho.data()[stored_[static_cast<std::size_t>(i)]];
    return y;
  }

  DenseMatrix to_matrix(const State& y) const {
    const Index n = dimension();
    DenseMatrix rho(n, n);
    for (Index k = 0; k < n * n; ++k) {
      const auto sl = slot_[static_cast<std::size_t>(orbit_[static_cast<std::size_t>(k)])];
      rho.data()[k] = sl >= 0 ? y(sl) : std::conj(y(~sl));
    }
    return rho;
  }

  void apply(const State& y, State& out) const {
    out.resize(size());
    const cplx* in = y.data();
    const std::int32_t* col = cols_.data();
    const cplx* val = values_.data();
    for (Index row = 0; row < size(); ++row) {
      const auto r = static_cast<std::size_t>(row);
      double re = 0.0, im = 0.0;
      for (auto k = row_start_[r]; k < row_split_[r]; ++k) {
        const cplx a = val[k], b = in[col[k]];
        re += a.real() * b.real() - a.imag() * b.imag();
        im += a.real() * b.imag() + a.imag() * b.real();
      }
      for (auto k = row_split_[r]; k < row_start_[r + 1]; ++k) {
        const cplx a = val[k], b = in[col[k]];
        re += a.real() * b.real() + a.imag() * b.imag();
        im += a.imag() * b.real() - a.real() * b.imag();
      }
      out(row) = cplx(re, im);
    }
  }

 private:
  // The model must commute with the permutations for the reduction to be exact.
  void verify() const {
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> g;
    State y(size());
    for (Index i = 0; i < size(); ++i) y(i) = cplx(g(rng), g(rng));
    DenseMatrix rho = to_matrix(y);
    rho = (0.5 * (rho + rho.adjoint())).eval();
    State out;
    apply(from_matrix(rho), out);
    const DenseMatrix expect = full_.apply(rho);
    const double err = (to_matrix(out) - expect).cwiseAbs().maxCoeff();
    const double scale = std::max(1.0, expect.cwiseAbs().maxCoeff());
    if (err > 1e-10 * scale || asymmetry(expect) > 1e-10 * scale) {
      throw InputError("model is not symmetric under permutations of its factors");
    }
  }

  LindbladGenerator full_;
  std::vector<std::int32_t> orbit_;  // pair index -> orbit
  std::vector<std::int32_t> slot_;   // orbit -> stored slot, or ~slot for a conjugate
  std::vector<Index> stored_;        // representative pair index per slot
  std::vector<std::int64_t> row_start_, row_split_;
  std::vector<std::int32_t> cols_;
  std::vector<cplx> values_;
};

/// -i[H, rho] + sum_k (L rho L^+ - 1/2 {L^+ L, rho}), evaluated without a superoperator.
inline Operator lindblad_rhs(const Operator& h, std::span<const Operator> collapse, const DensityMatrix& rho) {
  if (rho.dims() != h.dims()) throw InputError("lindblad_rhs: state and Hamiltonian dims differ");
  const LindbladGenerator gen(h, collapse);
  return {gen.apply(rho.matrix()), h.dims()};
}

/// Generator for a model. Full-flavor models above the dense limit use the
/// structured single-atom form of H_eff.
inline LindbladGenerator make_generator(const ModelSpec& spec) {
  const auto ls = collapse_ops(spec);
  const Operator h = hamiltonian(spec);
  const auto variant = spec.resolved_collapse();
  if (spec.flavor != Flavor::full || h.storage() == Storage::dense ||
      variant == CollapseVariant::paper_effective) {
    return {h, ls};
  }
  // Per-atom loss operator sum_i,j (gamma/3) |e_i><g_j|g_j><e_i| (independent)
  // or its coherent-sum counterpart; both act on one atom at a time.
  const auto local_jumps = local_collapse_ops(spec);
  DenseMatrix local_loss = DenseMatrix::Zero(kLevels, kLevels);
  for (const auto& l : local_jumps) {
    const DenseMatrix d = l.dense();
    local_loss += d.adjoint() * d;
  }
  KroneckerSum ks;
  ks.sites = spec.atoms;
  ks.local = single_atom_hamiltonian(spec).dense() - 0.5 * kI * local_loss;
  const StateVector local_diag = ks.local.diagonal();
  ks.local.diagonal().setZero();
  const Dims dims = spec.dims();
  const SparseMatrix v = interaction_hamiltonian(spec).sparse();
  ks.diagonal = StateVector::Zero(h.dimension());
  std::vector<int> digits;
  for (Index k = 0; k < h.dimension(); ++k) {
    detail::unflatten(k, dims, digits);
    cplx e = v.coeff(k, k);
    for (int lvl : digits) e += local_diag(lvl);
    ks.diagonal(k) = e;
  }
  return {h, ls, std::move(ks), local_jumps};
}

// ---------------------------------------------------------------------------
// Integrators

struct StepperConfig {
  enum class Kind { rk4_fixed, rk_adaptive, chebyshev };

  Kind kind = Kind::rk_adaptive;
  double dt = 1e-3;  // us, fixed-step only
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  std::int64_t max_steps = 200'000'000;

  void validate() const {
    if (!(dt > 0.0)) throw InputError("stepper dt must be positive");
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw InputError("stepper tolerances must be positive");
    if (max_steps <= 0) throw InputError("stepper max_steps must be positive");
  }

  static StepperConfig rk4(double dt) {
    StepperConfig c;
    c.kind = Kind::rk4_fixed;
    c.dt = dt;
    return c;
  }

  static StepperConfig adaptive(double rel_tol = 1e-8, double abs_tol = 1e-10) {
    StepperConfig c;
    c.kind = Kind::rk_adaptive;
    c.rel_tol = rel_tol;
    c.abs_tol = abs_tol;
    return c;
  }

  static StepperConfig chebyshev() {
    StepperConfig c;
    c.kind = Kind::chebyshev;
    return c;
  }
};

inline std::string to_string(StepperConfig::Kind k) {
  switch (k) {
    case StepperConfig::Kind::rk4_fixed:
      return "rk4-fixed";
    case StepperConfig::Kind::rk_adaptive:
      return "rk-adaptive";
    case StepperConfig::Kind::chebyshev:
      return "chebyshev";
  }
  return "?";
}

inline StepperConfig::Kind parse_stepper_kind(std::string_view s) {
  if (s == "rk4-fixed" || s == "rk4") return StepperConfig::Kind::rk4_fixed;
  if (s == "rk-adaptive" || s == "adaptive") return StepperConfig::Kind::rk_adaptive;
  if (s == "chebyshev") return StepperConfig::Kind::chebyshev;
  throw InputError("unknown stepper kind '" + std::string(s) + "'");
}

/// Fixed-step classical Runge-Kutta.
template <class Gen>
class Rk4Stepper {
 public:
  using State = typename Gen::State;

  Rk4Stepper(const Gen& gen, double dt) : gen_(gen), dt_(dt) {}

  /// Advances y by exactly `span` using ceil(span / dt) equal steps.
  std::int64_t advance(State& y, double span) {
    if (span <= 0.0) return 0;
    const auto steps = static_cast<std::int64_t>(std::ceil(span / dt_ * (1.0 - 1e-12)));
    const double h = span / static_cast<double>(steps);
    for (std::int64_t s = 0; s < steps; ++s) step(y, h);
    return steps;
  }

  void step(State& y, double h) {
    gen_.apply(y, k1_);
    tmp_ = y + (0.5 * h) * k1_;
    gen_.apply(tmp_, k2_);
    tmp_ = y + (0.5 * h) * k2_;
    gen_.apply(tmp_, k3_);
    tmp_ = y + h * k3_;
    gen_.apply(tmp_, k4_);
    y += (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
  }

 private:
  const Gen& gen_;
  double dt_;
  State k1_, k2_, k3_, k4_, tmp_;
};

/// Dormand-Prince 5(4) with FSAL and a PI step-size controller.
template <class Gen>
class DormandPrinceStepper {
 public:
  using State = typename Gen::State;

  DormandPrinceStepper(const Gen& gen, double rel_tol, double abs_tol)
      : gen_(gen), rtol_(rel_tol), atol_(abs_tol) {}

  std::int64_t accepted() const { return accepted_; }
  std::int64_t rejected() const { return rejected_; }
  std::int64_t evaluations() const { return evaluations_; }

  /// Call after modifying the state outside the stepper.
  void state_changed() { have_k1_ = false; }

  /// Integrates y over `span`, landing exactly on the end point. Returns
  /// the number of attempted steps.
  std::int64_t advance(State& y, double span, std::int64_t step_budget) {
    if (span <= 0.0) return 0;
    if (!have_k1_) {
      eval(y, k1_);
      have_k1_ = true;
    }
    if (h_ <= 0.0) h_ = initial_step(y, span);
    double t = 0.0;
    std::int64_t attempts = 0;
    while (t < span) {
      if (++attempts > step_budget) throw SolverError("adaptive stepper exceeded its step cap");
      const bool last = t + h_ >= span * (1.0 - 1e-14);
      const double h = last ? span - t : h_;
      const double err = trial_step(y, h);
      if (!std::isfinite(err)) throw SolverError("adaptive stepper produced a non-finite state");
      if (err <= 1.0) {
        ++accepted_;
        t = last ? span : t + h;
        y.swap(y_new_);
        k1_.swap(k7_);
        const double fac = kSafety * std::pow(err > 0.0 ? err : 1e-10, -kAlpha) * std::pow(err_old_, kBeta);
        const double grow = std::clamp(fac, kMinFactor, kMaxFactor);
        // A step shortened to land on the end point says nothing about h_.
        if (!last || h >= h_) h_ = h * grow;
        err_old_ = std::max(err, 1e-4);
      } else {
        ++rejected_;
        h_ = h * std::max(kMinFactor, kSafety * std::pow(err, -kAlpha));
      }
    }
    return attempts;
  }

 private:
  static constexpr double kSafety = 0.9;
  static constexpr double kBeta = 0.04;
  static constexpr double kAlpha = 0.2 - 0.75 * kBeta;
  static constexpr double kMinFactor = 0.2;
  static constexpr double kMaxFactor = 10.0;

  void eval(const State& y, State& out) {
    gen_.apply(y, out);
    ++evaluations_;
  }

  template <class E>
  double error_norm(const State& y0, const State& y1, const E& err) const {
    double acc = 0.0;
    const Index n = err.size();
    const cplx* e = err.data();
    const cplx* a = y0.data();
    const cplx* b = y1.data();
    for (Index i = 0; i < n; ++i) {
      const double sc = atol_ + rtol_ * std::max(std::abs(a[i]), std::abs(b[i]));
      acc += std::norm(e[i]) / (sc * sc);
    }
    return std::sqrt(acc / static_cast<double>(n));
  }

  // Hairer-Norsett-Wanner starting step.
  double initial_step(const State& y, double span) {
    const double d0 = error_norm(y, y, y);
    const double d1 = error_norm(y, y, k1_);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    const State y1 = y + h0 * k1_;
    State f1;
    eval(y1, f1);
    const double d2 = error_norm(y, y, State(f1 - k1_)) / h0;
    const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                               : std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
    return std::min({100.0 * h0, h1, span});
  }

  double trial_step(const State& y, double h) {
    static constexpr double a21 = 1.0 / 5.0;
    static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
    static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
    static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                            a54 = -212.0 / 729.0;
    static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                            a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
    static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                            b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
    static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                            e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

    tmp_ = y + (h * a21) * k1_;
    eval(tmp_, k2_);
    tmp_ = y + h * (a31 * k1_ + a32 * k2_);
    eval(tmp_, k3_);
    tmp_ = y + h * (a41 * k1_ + a42 * k2_ + a43 * k3_);
    eval(tmp_, k4_);
    tmp_ = y + h * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
    eval(tmp_, k5_);
    tmp_ = y + h * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
    eval(tmp_, k6_);
    y_new_ = y + h * (b1 * k1_ + b3 * k3_ + b4 * k4_ + b5 * k5_ + b6 * k6_);
    eval(y_new_, k7_);
    tmp_ = h * (e1 * k1_ + e3 * k3_ + e4 * k4_ + e5 * k5_ + e6 * k6_ + e7 * k7_);
    return error_norm(y, y_new_, tmp_);
  }

  const Gen& gen_;
  double rtol_, atol_;
  double h_ = 0.0;
  double err_old_ = 1e-4;
  bool have_k1_ = false;
  std::int64_t accepted_ = 0, rejected_ = 0, evaluations_ = 0;
  State k1_, k2_, k3_, k4_, k5_, k6_, k7_, y_new_, tmp_;
};

/// exp(tau L) for a constant generator whose spectrum is a thin band around
/// a segment of the imaginary axis. With Y = (L - c) / a the Jacobi-Anger
/// series exp(i z x) = J_0(z) + 2 sum_k i^k J_k(z) T_k(x) at x = -i Y becomes
///   exp(tau (L - c)) = J_0(z) + 2 sum_k J_k(z) P_k(Y),  z = tau a,
/// P_0 = 1, P_1 = Y, P_{k+1} = 2 Y P_k + P_{k-1}. All coefficients are real,
/// so real-linear generators are fine. The band has half-length a
/// (frequency span plus decay) and centre c = -max_decay / 2.
template <class Gen>
class ChebyshevPropagator {
 public:
  using State = typename Gen::State;

  static constexpr double kMaxArgument = 100.0;  // z per sub-step
  static constexpr double kTruncation = 1e-16;

  explicit ChebyshevPropagator(const Gen& gen) : gen_(gen) {
    const double decay = gen.max_decay();
    half_length_ = gen.frequency_span() * (1.0 + 1e-6) + 2.0 * decay;
    centre_ = -0.5 * decay;
    if (!(half_length_ > 20.0 * decay) || half_length_ <= 0.0) {
      throw InputError("chebyshev stepper needs a generator dominated by coherent dynamics; use rk-adaptive");
    }
    // Growth of P_k off the segment for the band half-width.
    const double beta = decay / half_length_;
    growth_ = beta + std::sqrt(1.0 + beta * beta);
  }

  std::int64_t evaluations() const { return evaluations_; }

  /// Advances y by exactly `span` in equal sub-steps. Returns the sub-step count.
  std::int64_t advance(State& y, double span) {
    if (span <= 0.0) return 0;
    const auto steps = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::ceil(span * half_length_ / kMaxArgument * (1.0 - 1e-12))));
    prepare(span / static_cast<double>(steps));
    for (std::int64_t s = 0; s < steps; ++s) step(y);
    return steps;
  }

 private:
  void prepare(double tau) {
    if (tau == tau_) return;
    tau_ = tau;
    const double z = tau * half_length_;
    coeff_.clear();
    for (int k = 0;; ++k) {
      const double j = std::cyl_bessel_j(static_cast<double>(k), z);
      coeff_.push_back(k == 0 ? j : 2.0 * j);
      if (k > z && std::abs(j) * std::pow(growth_, k) < kTruncation) break;
    }
    scale_ = std::exp(tau * centre_);
  }

  // out = 2 (L - c) v / a, the doubled recurrence operator.
  void apply_2y(const State& v, State& out) {
    gen_.apply(v, out);
    ++evaluations_;
    out = (out - centre_ * v) * (2.0 / half_length_);
  }

  void step(State& y) {
    p0_ = y;
    apply_2y(p0_, p1_);
    p1_ *= 0.5;
    acc_ = coeff_[0] * p0_ + coeff_[1] * p1_;
    for (std::size_t k = 2; k < coeff_.size(); ++k) {
      apply_2y(p1_, p2_);
      p2_ += p0_;
      acc_ += coeff_[k] * p2_;
      std::swap(p0_, p1_);
      std::swap(p1_, p2_);
    }
    y = scale_ * acc_;
  }

  const Gen& gen_;
  double half_length_ = 0.0, centre_ = 0.0, growth_ = 1.0;
  double tau_ = -1.0, scale_ = 1.0;
  std::vector<double> coeff_;
  std::int64_t evaluations_ = 0;
  State p0_, p1_, p2_, acc_;
};

// ---------------------------------------------------------------------------
// Trajectories

/// Expectation value recorded along a trajectory: population of a state
/// vector, or Tr(O rho) for a Hermitian operator.
struct Observable {
  std::string name;
  std::variant<StateVector, Operator> what;

  double evaluate(const DenseMatrix& rho) const {
    if (auto* v = std::get_if<StateVector>(&what)) return (v->adjoint() * rho * *v)(0, 0).real();
    const auto& op = std::get<Operator>(what);
    if (op.storage() == Storage::dense) return (op.dense() * rho).trace().real();
    const SparseMatrix s = op.sparse();
    cplx acc = 0.0;
    for (Index k = 0; k < s.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(s, k); it; ++it) acc += it.value() * rho(it.col(), it.row());
    }
    return acc.real();
  }
};

struct TrajectoryRecord {
  std::vector<double> times;  // us
  /// Named series in insertion order; always includes "trace" and "min_eigenvalue".
  std::vector<std::pair<std::string, std::vector<double>>> observables;
  DensityMatrix final_state;
  std::int64_t steps = 0;

  const std::vector<double>& series(std::string_view name) const {
    for (const auto& [n, v] : observables) {
      if (n == name) return v;
    }
    throw InputError("no observable named '" + std::string(name) + "'");
  }
};

inline constexpr double kTraceDriftLimit = 1e-6;

/// Integrates the master equation from rho0 to t_final (us), recording the
/// observables every `observe_every` us and at t_final. At each observation
/// the state is re-symmetrized and renormalized.
template <class Gen>
TrajectoryRecord evolve(const Gen& gen, const DensityMatrix& rho0, double t_final, const StepperConfig& stepper,
                        double observe_every, std::span<const Observable> observables) {
  stepper.validate();
  if (!(t_final > 0.0)) throw InputError("t_final must be positive");
  if (!(observe_every > 0.0)) throw InputError("observe_every must be positive");
  if (rho0.dims() != gen.dims()) throw InputError("initial state dims do not match the model");
  rho0.validate();

  if (stepper.kind == StepperConfig::Kind::rk4_fixed) {
    const double limit = 0.05 / (gen.max_energy() + gen.max_decay());
    if (stepper.dt > limit) {
      throw InputError("rk4 dt " + std::to_string(stepper.dt) + " exceeds stability guard " +
                       std::to_string(limit));
    }
  }

  TrajectoryRecord rec;
  for (const auto& o : observables) rec.observables.emplace_back(o.name, std::vector<double>{});
  rec.observables.emplace_back("trace", std::vector<double>{});
  rec.observables.emplace_back("min_eigenvalue", std::vector<double>{});

  typename Gen::State y = gen.from_matrix(rho0.matrix());
  DenseMatrix m;
  auto observe = [&](double t) {
    m = gen.to_matrix(y);
    m = 0.5 * (m + m.adjoint()).eval();
    const double tr = m.trace().real();
    if (std::abs(tr - 1.0) > kTraceDriftLimit) {
      throw SolverError("trace drifted to " + std::to_string(tr) + " at t = " + std::to_string(t) +
                        " us; reduce the step");
    }
    rec.times.push_back(t);
    std::size_t k = 0;
    for (const auto& o : observables) rec.observables[k++].second.push_back(o.evaluate(m));
    rec.observables[k++].second.push_back(tr);
    m /= tr;
    y = gen.from_matrix(m);
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(m, Eigen::EigenvaluesOnly);
    rec.observables[k].second.push_back(es.eigenvalues().minCoeff());
  };

  Rk4Stepper<Gen> rk4(gen, stepper.dt);
  DormandPrinceStepper<Gen> dp(gen, stepper.rel_tol, stepper.abs_tol);
  std::optional<ChebyshevPropagator<Gen>> cheb;
  if (stepper.kind == StepperConfig::Kind::chebyshev) cheb.emplace(gen);
  observe(0.0);
  const auto intervals = static_cast<std::int64_t>(std::ceil(t_final / observe_every * (1.0 - 1e-12)));
  double t = 0.0;
  for (std::int64_t k = 1; k <= intervals; ++k) {
    const double next = std::min(t_final, static_cast<double>(k) * observe_every);
    const std::int64_t budget = stepper.max_steps - rec.steps;
    if (stepper.kind == StepperConfig::Kind::rk4_fixed) {
      rec.steps += rk4.advance(y, next - t);
      if (rec.steps > stepper.max_steps) throw SolverError("rk4 stepper exceeded its step cap");
    } else if (cheb) {
      rec.steps += cheb->advance(y, next - t);
      if (rec.steps > stepper.max_steps) throw SolverError("chebyshev stepper exceeded its step cap");
    } else {
      rec.steps += dp.advance(y, next - t, budget);
    }
    t = next;
    observe(t);
    dp.state_changed();
  }
  rec.final_state = DensityMatrix(std::move(m), gen.dims(), DensityMatrix::Unchecked{});
  return rec;
}

/// Largest entry of P rho P^+ - rho over the transpositions of neighbouring
/// factors, which generate every permutation.
inline double permutation_asymmetry(const DenseMatrix& rho, const Dims& dims) {
  const Index n = dims_product(dims);
  if (rho.rows() != n) throw InputError("permutation_asymmetry: dimension mismatch");
  double worst = 0.0;
  std::vector<int> digits;
  std::vector<Index> img(static_cast<std::size_t>(n));
  for (std::size_t a = 0; a + 1 < dims.size(); ++a) {
    if (dims[a] != dims[a + 1]) return std::numeric_limits<double>::infinity();
    for (Index k = 0; k < n; ++k) {
      detail::unflatten(k, dims, digits);
      std::swap(digits[a], digits[a + 1]);
      img[static_cast<std::size_t>(k)] = detail::flatten(digits, dims);
    }
    for (Index c = 0; c < n; ++c) {
      for (Index r = 0; r < n; ++r) {
        const cplx moved = rho(img[static_cast<std::size_t>(r)], img[static_cast<std::size_t>(c)]);
        worst = std::max(worst, std::abs(moved - rho(r, c)));
      }
    }
  }
  return worst;
}

inline constexpr double kSymmetryTol = 1e-12;

/// Trajectory for a model. Full models above the dense limit started from a
/// permutation-symmetric state use the symmetric generator; everything else
/// uses make_generator.
inline TrajectoryRecord evolve(const ModelSpec& spec, const DensityMatrix& rho0, double t_final,
                               const StepperConfig& stepper, double observe_every,
                               std::span<const Observable> observables) {
  spec.validate();
  if (rho0.dims() != spec.dims()) throw InputError("initial state dims do not match the model");
  if (spec.flavor == Flavor::full && spec.dimension() > kDenseLimit &&
      permutation_asymmetry(rho0.matrix(), rho0.dims()) <= kSymmetryTol) {
    const SymmetricGenerator gen(hamiltonian(spec), collapse_ops(spec));
    return evolve(gen, rho0, t_final, stepper, observe_every, observables);
  }
  return evolve(make_generator(spec), rho0, t_final, stepper, observe_every, observables);
}

// ---------------------------------------------------------------------------
// Steady state

struct SteadyStateResult {
  DensityMatrix state;
  double residual = 0.0;    // ||S vec(rho)||_2
  bool unique = true;       // false when the stationary manifold is degenerate
  double min_eigenvalue = 0.0;  // before clipping
  double rcond = 0.0;       // reciprocal condition estimate of the constrained system
};

inline constexpr double kSteadyResidualLimit = 1e-10;
inline constexpr double kSingularRcond = 1e-13;

/// Direct solve of S vec(rho) = 0 with one row replaced by Tr rho = 1.
inline SteadyStateResult steady_state(const Operator& h, std::span<const Operator> collapse) {
  const Index n = h.dimension();
  if (n > kDenseLimit) {
    throw InputError("steady_state: Hilbert dimension " + std::to_string(n) +
                     " is too large for the superoperator solve; integrate to long times with evolve instead");
  }
  const Liouvillian lv = liouvillian_matrix(h, collapse);
  const DenseMatrix& s = lv.dense();
  DenseMatrix a = s;
  StateVector b = StateVector::Zero(n * n);
  a.row(0).setZero();
  for (Index i = 0; i < n; ++i) a(0, i * (n + 1)) = 1.0;
  b(0) = 1.0;

  SteadyStateResult out;
  Eigen::PartialPivLU<DenseMatrix> lu(a);
  // The rcond estimate is unreliable once a pivot is exactly zero.
  const RealVector pivots = lu.matrixLU().diagonal().cwiseAbs();
  out.rcond = std::min(lu.rcond(), pivots.minCoeff() / pivots.maxCoeff());
  StateVector x;
  if (out.rcond > kSingularRcond && std::isfinite(out.rcond)) {
    x = lu.solve(b);
  } else {
    out.unique = false;
    x = Eigen::CompleteOrthogonalDecomposition<DenseMatrix>(a).solve(b);
  }
  DenseMatrix rho = unvectorize(x, n);
  rho = 0.5 * (rho + rho.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(rho);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  if (out.min_eigenvalue < 0.0 && out.min_eigenvalue >= -DensityMatrix::kPositivityTol) {
    const RealVector clipped = es.eigenvalues().cwiseMax(0.0);
    rho = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().adjoint();
    rho /= rho.trace().real();
  } else {
    rho /= rho.trace().real();
  }
  out.residual = (s * vectorize(rho)).norm();
  out.state = DensityMatrix(std::move(rho), h.dims(), DensityMatrix::Unchecked{});
  return out;
}

inline SteadyStateResult steady_state(const ModelSpec& spec) {
  const auto ls = collapse_ops(spec);
  return steady_state(hamiltonian(spec), ls);
}

}  // namespace rydsteady
