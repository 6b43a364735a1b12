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


#include "rydsteady/dynamics.hpp"
#include "rydsteady/metrics.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

namespace rydsteady {
namespace {

// Two-level atom, |g> = 0 and |e> = 1.
Operator two_level_h(double omega, double delta) {
  DenseMatrix h = DenseMatrix::Zero(2, 2);
  h(0, 1) = h(1, 0) = omega;
  h(1, 1) = -delta;
  return {h, {2}};
}

std::vector<Operator> two_level_decay(double gamma) {
  DenseMatrix l = DenseMatrix::Zero(2, 2);
  l(0, 1) = std::sqrt(gamma);
  return {Operator(l, {2})};
}

DensityMatrix level(int k) {
  StateVector v = StateVector::Zero(2);
  v(k) = 1.0;
  return DensityMatrix::pure(v, {2});
}

std::vector<Observable> excited_population() {
  StateVector e = StateVector::Zero(2);
  e(1) = 1.0;
  return {{"p_e", e}};
}

ModelSpec three_atom() {
  ModelSpec s = figure_defaults(3);
  s.delta_mhz = 0.5;
  apply_pumping_rules(s, 2.0, 0.2);
  return s;
}

TEST(Evolve, PureDecay) {
  const double gamma = 0.4;
  const LindbladGenerator gen(two_level_h(0.0, 0.0), two_level_decay(gamma));
  const auto obs = excited_population();
  const auto rec = evolve(gen, level(1), 5.0, StepperConfig::adaptive(1e-10, 1e-12), 0.5, obs);
  ASSERT_EQ(rec.times.size(), 11u);
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    EXPECT_NEAR(rec.series("p_e")[i], std::exp(-gamma * rec.times[i]), 1e-8);
  }
}

TEST(Evolve, RabiOscillation) {
  const double omega = 1.3;
  const LindbladGenerator gen(two_level_h(omega, 0.0), {});
  const auto obs = excited_population();
  for (const auto& stepper : {StepperConfig::adaptive(1e-10, 1e-12), StepperConfig::rk4(1e-3)}) {
    const auto rec = evolve(gen, level(0), 10.0, stepper, 0.25, obs);
    double worst = 0.0;
    for (std::size_t i = 0; i < rec.times.size(); ++i) {
      const double s = std::sin(omega * rec.times[i]);
      worst = std::max(worst, std::abs(rec.series("p_e")[i] - s * s));
    }
    EXPECT_LT(worst, 1e-6) << to_string(stepper.kind);
  }
}

TEST(Evolve, ChebyshevRabiOscillation) {
  const double omega = 1.3;
  const LindbladGenerator gen(two_level_h(omega, 0.4), two_level_decay(1e-3));
  const auto obs = excited_population();
  const auto cheb = evolve(gen, level(0), 200.0, StepperConfig::chebyshev(), 10.0, obs);
  const auto ref = evolve(gen, level(0), 200.0, StepperConfig::adaptive(1e-11, 1e-13), 10.0, obs);
  for (std::size_t i = 0; i < ref.times.size(); ++i) {
    EXPECT_NEAR(cheb.series("p_e")[i], ref.series("p_e")[i], 1e-8);
  }
}

TEST(SteadyState, OpticalBlochClosedForm) {
  for (const auto& [omega, delta, gamma] : {std::tuple{0.3, 1.1, 0.7}, std::tuple{1.0, 0.0, 0.2},
                                            std::tuple{0.05, -2.0, 1.5}}) {
    const auto res = steady_state(two_level_h(omega, delta), two_level_decay(gamma));
    const double expect = 4 * omega * omega / (4 * delta * delta + 8 * omega * omega + gamma * gamma);
    EXPECT_NEAR(res.state.matrix()(1, 1).real(), expect, 1e-10);
    EXPECT_TRUE(res.unique);
    EXPECT_LT(res.residual, 1e-12);
  }
  const auto res = steady_state(two_level_h(0.3, 1.1), two_level_decay(0.7));
  EXPECT_NEAR(res.state.matrix()(1, 1).real(), 0.0595041322314049, 1e-12);
}

TEST(SteadyState, DegenerateWithoutDecay) {
  const auto res = steady_state(two_level_h(0.3, 1.1), {});
  EXPECT_FALSE(res.unique);
}

TEST(SteadyState, RejectsLargeSystems) {
  EXPECT_THROW(steady_state(three_atom()), InputError);
}

TEST(Rk4, FourthOrderConvergence) {
  const LindbladGenerator gen(two_level_h(1.0, 0.5), two_level_decay(0.3));
  const auto ref = evolve(gen, level(0), 4.0, StepperConfig::adaptive(1e-13, 1e-15), 4.0, {});
  std::vector<double> errors;
  for (double dt : {0.04, 0.02, 0.01}) {
    const auto rec = evolve(gen, level(0), 4.0, StepperConfig::rk4(dt), 4.0, {});
    errors.push_back((rec.final_state.matrix() - ref.final_state.matrix()).norm());
  }
  for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
    const double ratio = errors[i] / errors[i + 1];
    EXPECT_GE(ratio, 8.0);
    EXPECT_LE(ratio, 32.0);
  }
}

TEST(Rk4, StabilityGuard) {
  const ModelSpec s = [] {
    ModelSpec m = figure_defaults(2);
    m.delta_mhz = 5.0;
    apply_pumping_rules(m, 4.0, 2.0);
    return m;
  }();
  EXPECT_THROW(evolve(s, ground_mixture(2), 1.0, StepperConfig::rk4(0.1), 1.0, {}), InputError);
}

TEST(Rk4, PurityConservedWithoutDecay) {
  std::mt19937_64 rng(31);
  const Operator h(DenseMatrix(0.25 * testing::random_hermitian(4, rng)), {4});
  const LindbladGenerator gen(h, {});
  const DensityMatrix rho0 = DensityMatrix::pure(testing::random_vector(4, rng), {4});
  const auto rec = evolve(gen, rho0, 100.0, StepperConfig::rk4(0.01), 10.0, {});
  EXPECT_EQ(rec.steps, 10000);
  EXPECT_NEAR(rec.final_state.purity(), 1.0, 1e-9);
}

TEST(Evolve, TracePositivityAndHermiticity) {
  ModelSpec s = figure_defaults(2);
  s.delta_mhz = 0.5;
  s.gamma_khz = 50.0;
  apply_pumping_rules(s, 4.0, 2.0);
  const auto rec = evolve(s, ground_mixture(2), 50.0, StepperConfig::adaptive(), 1.0, {});
  for (double tr : rec.series("trace")) EXPECT_NEAR(tr, 1.0, 1e-9);
  for (double ev : rec.series("min_eigenvalue")) EXPECT_GE(ev, -1e-8);
  EXPECT_LT(rec.final_state.hermiticity_error(), 1e-15);
}

TEST(Evolve, BitIdenticalReruns) {
  ModelSpec s = figure_defaults(2);
  s.delta_mhz = 0.5;
  apply_pumping_rules(s, 4.0, 2.0);
  const auto a = evolve(s, ground_mixture(2), 20.0, StepperConfig::adaptive(), 5.0, {});
  const auto b = evolve(s, ground_mixture(2), 20.0, StepperConfig::adaptive(), 5.0, {});
  EXPECT_EQ(a.steps, b.steps);
  EXPECT_TRUE(a.final_state.matrix() == b.final_state.matrix());
}

TEST(Evolve, RejectsBadArguments) {
  const LindbladGenerator gen(two_level_h(1.0, 0.0), {});
  EXPECT_THROW(evolve(gen, level(0), -1.0, StepperConfig::adaptive(), 1.0, {}), InputError);
  EXPECT_THROW(evolve(gen, level(0), 1.0, StepperConfig::adaptive(), 0.0, {}), InputError);
  EXPECT_THROW(evolve(gen, ground_mixture(2), 1.0, StepperConfig::adaptive(), 1.0, {}), InputError);
}

TEST(Evolve, StepCapIsASolverFailure) {
  const LindbladGenerator gen(two_level_h(1.0, 0.0), {});
  StepperConfig c = StepperConfig::adaptive();
  c.max_steps = 3;
  EXPECT_THROW(evolve(gen, level(0), 10.0, c, 10.0, {}), SolverError);
}

TEST(StructuredGenerator, MatchesExplicitForm) {
  std::mt19937_64 rng(32);
  for (auto variant : {CollapseVariant::independent, CollapseVariant::coherent_sum}) {
    ModelSpec s = three_atom();
    s.gamma_khz = 30.0;
    s.collapse_variant = variant;
    const LindbladGenerator structured = make_generator(s);
    ASSERT_TRUE(structured.structured());
    const LindbladGenerator plain(hamiltonian(s), collapse_ops(s));
    const DenseMatrix rho = testing::random_density(s.dims(), rng).matrix();
    const DenseMatrix a = structured.apply(rho), b = plain.apply(rho);
    EXPECT_LT((a - b).norm() / b.norm(), 1e-12);
  }
}

TEST(SymmetricGenerator, MatchesFullTrajectory) {
  const ModelSpec s = three_atom();
  const SymmetricGenerator sym(hamiltonian(s), collapse_ops(s));
  EXPECT_EQ(sym.size(), 4291);
  const DensityMatrix rho0 = DensityMatrix::pure(basis_state({gL, gL, gL}), s.dims());
  const auto a = evolve(sym, rho0, 10.0, StepperConfig::adaptive(1e-10, 1e-12), 5.0, {});
  const auto b = evolve(make_generator(s), rho0, 10.0, StepperConfig::adaptive(1e-10, 1e-12), 5.0, {});
  EXPECT_LT((a.final_state.matrix() - b.final_state.matrix()).norm(), 1e-8);
  EXPECT_LT(permutation_asymmetry(b.final_state.matrix(), s.dims()), 1e-10);
}

TEST(SymmetricGenerator, ChebyshevMatchesAdaptive) {
  const ModelSpec s = three_atom();
  const SymmetricGenerator sym(hamiltonian(s), collapse_ops(s));
  const DensityMatrix rho0 = DensityMatrix::pure(basis_state({gL, gL, gL}), s.dims());
  const std::vector<Observable> obs{{"S3", singlet3_state()}};
  const auto a = evolve(sym, rho0, 60.0, StepperConfig::chebyshev(), 20.0, obs);
  const auto b = evolve(sym, rho0, 60.0, StepperConfig::adaptive(1e-11, 1e-13), 20.0, obs);
  EXPECT_LT((a.final_state.matrix() - b.final_state.matrix()).norm(), 1e-8);
  for (std::size_t i = 0; i < a.times.size(); ++i) EXPECT_NEAR(a.series("S3")[i], b.series("S3")[i], 1e-10);
}

TEST(SymmetricGenerator, RejectsAsymmetricModel) {
  const ModelSpec s = three_atom();
  const Operator h = hamiltonian(s) + embed(local_projector(gL), 0, s.dims()).scaled(0.1);
  EXPECT_THROW(SymmetricGenerator(h, collapse_ops(s)), InputError);
}

TEST(Chebyshev, RejectsDecayDominatedGenerator) {
  const LindbladGenerator gen(two_level_h(0.0, 0.0), two_level_decay(1.0));
  EXPECT_THROW(evolve(gen, level(1), 1.0, StepperConfig::chebyshev(), 1.0, {}), InputError);
}

TEST(StepperConfig, NamesRoundTrip) {
  for (auto k : {StepperConfig::Kind::rk4_fixed, StepperConfig::Kind::rk_adaptive, StepperConfig::Kind::chebyshev}) {
    EXPECT_EQ(parse_stepper_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_stepper_kind("euler"), InputError);
}

}  // namespace
}  // namespace rydsteady
