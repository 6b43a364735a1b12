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

#include <gtest/gtest.h>

namespace rydsteady {
namespace {

ModelSpec two_atom(Flavor flavor = Flavor::full) {
  ModelSpec s = figure_defaults(2);
  s.delta_mhz = 0.5;
  s.flavor = flavor;
  apply_pumping_rules(s, 4.0, 2.0);
  return s;
}

TEST(Units, AngularConversion) {
  ModelSpec s = two_atom();
  EXPECT_DOUBLE_EQ(s.delta(), kTwoPi * 0.5);
  EXPECT_DOUBLE_EQ(s.gamma(), 1e-3);
  s.gamma_angular = true;
  EXPECT_DOUBLE_EQ(s.gamma(), kTwoPi * 1e-3);
}

TEST(PumpingRules, MicrowaveAndInteraction) {
  const ModelSpec s = two_atom();
  const double om = 0.02;
  EXPECT_NEAR(s.omega_mw_mhz[0].real() * 4.0 * s.delta_mhz, 3.0 * om * om, 1e-18);
  EXPECT_DOUBLE_EQ(s.u_table_mhz.ll, 2.0);
  EXPECT_DOUBLE_EQ(s.u_table_mhz.l0, 1.0);
  EXPECT_DOUBLE_EQ(s.u_table_mhz.at(2, 0), s.u_table_mhz.lr);
}

TEST(Hamiltonian, SingleAtomStructure) {
  const ModelSpec s = two_atom();
  const DenseMatrix h = single_atom_hamiltonian(s).dense();
  EXPECT_LT((h - h.adjoint()).norm(), 1e-15);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(h(rydberg(i), rydberg(i)), cplx(-s.delta()));
    EXPECT_EQ(h(ground(i), rydberg(i)), s.omega(i));
    EXPECT_EQ(h(ground(i), ground(i)), cplx(0.0));
  }
  EXPECT_EQ(h(gL, g0), s.omega_mw(0));
  EXPECT_EQ(h(g0, gR), s.omega_mw(1));
  EXPECT_EQ(h(gL, gR), cplx(0.0));
  EXPECT_EQ(h(eL, e0), cplx(0.0));
}

TEST(Hamiltonian, InteractionDiagonal) {
  ModelSpec s = two_atom();
  s.u_table_mhz = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  const Operator v = interaction_hamiltonian(s);
  auto diag = [&](std::initializer_list<int> l) {
    const StateVector k = basis_state(l);
    return (k.adjoint() * v.dense() * k)(0, 0).real();
  };
  EXPECT_DOUBLE_EQ(diag({eL, eL}), kTwoPi * 1.0);
  EXPECT_DOUBLE_EQ(diag({e0, e0}), kTwoPi * 2.0);
  EXPECT_DOUBLE_EQ(diag({eR, eR}), kTwoPi * 3.0);
  EXPECT_DOUBLE_EQ(diag({eL, e0}), kTwoPi * 4.0);
  EXPECT_DOUBLE_EQ(diag({e0, eL}), kTwoPi * 4.0);
  EXPECT_DOUBLE_EQ(diag({eR, eL}), kTwoPi * 5.0);
  EXPECT_DOUBLE_EQ(diag({e0, eR}), kTwoPi * 6.0);
  EXPECT_DOUBLE_EQ(diag({eL, gL}), 0.0);
  EXPECT_DOUBLE_EQ(diag({gL, gL}), 0.0);

  s.atoms = 3;
  const Operator v3 = interaction_hamiltonian(s);
  const StateVector k = basis_state({eL, e0, gR});
  EXPECT_DOUBLE_EQ((k.adjoint() * v3.dense() * k)(0, 0).real(), kTwoPi * 4.0);
  const StateVector t = basis_state({eL, eL, eR});
  EXPECT_DOUBLE_EQ((t.adjoint() * v3.dense() * t)(0, 0).real(), kTwoPi * (1.0 + 5.0 + 5.0));
}

TEST(Hamiltonian, FullIsHermitianForBothSizes) {
  ModelSpec s = two_atom();
  s.omega_mhz = {cplx(0.02, 0.01), 0.03, 0.01};
  EXPECT_LT(full_hamiltonian(s).hermiticity_error(), 1e-15);
  s.atoms = 3;
  const Operator h3 = full_hamiltonian(s);
  EXPECT_EQ(h3.dimension(), 216);
  EXPECT_LT(h3.hermiticity_error(), 1e-15);
}

TEST(EffectiveModel, MicrowavePartIsGroundProjection) {
  const ModelSpec full = two_atom();
  const ModelSpec eff = two_atom(Flavor::effective);
  const DenseMatrix p = manifold_projector(2, false).dense();
  const DenseMatrix hw = p * microwave_hamiltonian(full).dense() * p;
  EXPECT_LT((effective_microwave_hamiltonian(eff).dense() - hw).norm(), 1e-14);
}

TEST(EffectiveModel, LaserPartCouplesDistinctPairs) {
  const ModelSpec eff = two_atom(Flavor::effective);
  const DenseMatrix h = effective_laser_hamiltonian(eff).dense();
  const double om = eff.omega(0).real();
  const double k = 2.0 * om * om / eff.delta();
  const StateVector g = basis_state({gL, g0}), e = basis_state({eL, e0});
  EXPECT_NEAR((g.adjoint() * h * e)(0, 0).real(), k, 1e-15);
  EXPECT_NEAR((e.adjoint() * h * e)(0, 0).real(), k, 1e-15);
  // No laser coupling out of same-state pairs.
  const StateVector s = basis_state({eL, eL});
  EXPECT_LT((h * s).norm(), 1e-15);
}

TEST(DarkStates, MicrowaveAnnihilatesTargets) {
  const ModelSpec eff = two_atom(Flavor::effective);
  EXPECT_LT((effective_microwave_hamiltonian(eff).dense() * psi_state()).norm(), 1e-12);
  ModelSpec s3 = figure_defaults(3);
  s3.delta_mhz = 0.5;
  apply_pumping_rules(s3, 2.0, 0.2);
  const StateVector hs = microwave_hamiltonian(s3).apply(singlet3_state());
  EXPECT_LT(hs.norm(), 1e-12);
}

TEST(TargetStates, NormalizedAndOrthogonal) {
  EXPECT_NEAR(psi_state().norm(), 1.0, 1e-15);
  EXPECT_NEAR(phi_state().norm(), 1.0, 1e-15);
  EXPECT_NEAR(upsilon_state().norm(), 1.0, 1e-15);
  EXPECT_NEAR(singlet3_state().norm(), 1.0, 1e-15);
  EXPECT_LT(std::abs(psi_state().dot(phi_state())), 1e-15);
  EXPECT_LT(std::abs(psi_state().dot(upsilon_state())), 1e-15);
  EXPECT_LT(std::abs(phi_state().dot(upsilon_state())), 1e-15);
}

TEST(TargetStates, LabelParsing) {
  EXPECT_EQ(target_state("gLg0", 2), basis_state({gL, g0}));
  EXPECT_EQ(target_state("g_R e_0", 2), basis_state({gR, e0}));
  EXPECT_EQ(target_state("gLgLgL", 3), basis_state({gL, gL, gL}));
  EXPECT_THROW(target_state("gLx0", 2), InputError);
  EXPECT_THROW(target_state("Psi", 3), InputError);
  EXPECT_THROW(target_state("gLg0", 3), InputError);
}

TEST(GroundMixture, UniformOverNineStates) {
  const DensityMatrix m = ground_mixture(2);
  EXPECT_EQ(ground_product_states(2).size(), 9u);
  EXPECT_NEAR(m.trace(), 1.0, 1e-15);
  EXPECT_NEAR(m.matrix()(0, 0).real(), 1.0 / 9.0, 1e-15);
  EXPECT_NEAR(m.purity(), 1.0 / 9.0, 1e-15);
}

TEST(Collapse, IndependentChannels) {
  const ModelSpec s = two_atom();
  const auto ls = collapse_ops(s);
  ASSERT_EQ(ls.size(), 18u);
  // Each Rydberg level of each atom decays at the total rate gamma.
  DenseMatrix loss = DenseMatrix::Zero(36, 36);
  for (const auto& l : ls) loss += l.dense().adjoint() * l.dense();
  const StateVector k = basis_state({eL, g0});
  EXPECT_NEAR((k.adjoint() * loss * k)(0, 0).real(), s.gamma(), 1e-18);
  const StateVector kk = basis_state({eL, eR});
  EXPECT_NEAR((kk.adjoint() * loss * kk)(0, 0).real(), 2.0 * s.gamma(), 1e-18);
}

TEST(Collapse, CoherentSumChannels) {
  ModelSpec s = two_atom();
  s.collapse_variant = CollapseVariant::coherent_sum;
  const auto local = local_collapse_ops(s);
  ASSERT_EQ(local.size(), 3u);
  EXPECT_NEAR(std::abs(local[0].dense()(gL, eR)), std::sqrt(s.gamma() / 3.0), 1e-18);
  EXPECT_EQ(collapse_ops(s).size(), 6u);
}

TEST(Collapse, EffectiveSetCoefficient) {
  ModelSpec s = two_atom(Flavor::effective);
  s.gamma_khz = 3.0;
  const auto ls = collapse_ops(s);
  ASSERT_EQ(ls.size(), 6u);
  // |e_L g_0> decays to |g_L g_0> with amplitude sqrt(gamma / 3).
  const cplx a = (basis_state({gL, g0}).adjoint() * ls[0].dense() * basis_state({eL, g0}))(0, 0);
  EXPECT_NEAR(std::abs(a), std::sqrt(s.gamma() / 3.0), 1e-15);
  EXPECT_EQ(s.resolved_collapse(), CollapseVariant::paper_effective);
}

TEST(Validation, RejectsInconsistentModels) {
  ModelSpec s = two_atom(Flavor::effective);
  s.omega_mhz[1] = 0.03;
  EXPECT_THROW(s.validate(), InputError);
  s = two_atom();
  s.atoms = 4;
  EXPECT_THROW(s.validate(), InputError);
  s = two_atom();
  s.gamma_khz = -1.0;
  EXPECT_THROW(s.validate(), InputError);
  s = two_atom();
  s.atoms = 3;
  s.collapse_variant = CollapseVariant::paper_effective;
  EXPECT_THROW(s.validate(), InputError);
}

}  // namespace
}  // namespace rydsteady
