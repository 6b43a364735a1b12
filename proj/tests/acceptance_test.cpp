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


// One test per acceptance criterion. The long fig4 tier runs only when
// RYDSTEADY_LONG_TIER=1.

#include "rydsteady/experiments.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <iostream>

namespace rydsteady {
namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ModelSpec pumped_pair(double delta_mhz) {
  ModelSpec s = figure_defaults(2);
  s.delta_mhz = delta_mhz;
  DerivedRules::pumping(4.0, 2.0).apply(s);
  return s;
}

TEST(Acceptance, C1_PeakNegativity) {
  double best = 0.0;
  for (auto flavor : {Flavor::full, Flavor::effective}) {
    for (auto variant : {CollapseVariant::independent, CollapseVariant::coherent_sum, CollapseVariant::paper_effective}) {
      ModelSpec s = pumped_pair(5.0);
      s.flavor = flavor;
      s.collapse_variant = variant;
      const auto t0 = std::chrono::steady_clock::now();
      const SweepRow row = evaluate_point(s, false);
      const double secs = seconds_since(t0);
      std::cout << "  " << to_string(flavor) << " + " << to_string(variant) << ": negativity "
                << std::setprecision(10) << row.negativity << " fidelity_psi " << row.fidelity_psi << " residual "
                << row.residual << " status " << to_string(row.status) << " (" << std::setprecision(3) << secs
                << " s)\n";
      EXPECT_NE(row.status, RowStatus::failed) << row.message;
      EXPECT_LT(secs, 60.0);
      if (flavor == Flavor::full && variant == CollapseVariant::independent) {
        EXPECT_NEAR(row.negativity, 0.9991, 0.002);
      }
      if (std::abs(row.negativity - 0.9991) <= 0.002) best = std::max(best, row.negativity);
    }
  }
  EXPECT_GT(best, 0.0) << "no combination within 0.9991 +- 0.002";
}

TEST(Acceptance, C2_NegativityGrowsWithDetuning) {
  const Job job = figure_job("fig3");
  ASSERT_EQ(job.sweep.points(), 10u);
  ASSERT_DOUBLE_EQ(job.sweep.base.gamma_khz, 1.0);
  const SweepTable t = run_sweep(job.sweep, resolve_jobs(std::nullopt), false);
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    std::cout << "  delta " << t.rows[k].spec.delta_mhz << " MHz: negativity " << std::setprecision(10)
              << t.rows[k].negativity << '\n';
    EXPECT_EQ(t.rows[k].status, RowStatus::ok);
    if (k > 0) {
      EXPECT_GE(t.rows[k].negativity, t.rows[k - 1].negativity - 1e-4) << "at k = " << k;
    }
  }
}

TEST(Acceptance, C3_EffectiveTrajectoryReachesTarget) {
  const Job job = figure_job("fig3-inset");
  ASSERT_DOUBLE_EQ(job.trajectory.t_final_ms, 100.0);
  const auto t0 = std::chrono::steady_clock::now();
  const TrajectoryTable t = run_trajectory(job.trajectory, false);
  const auto& last = t.rows.back();
  std::cout << "  fidelity to Psi at " << last[0] << " ms: " << std::setprecision(10) << last[5] << " ("
            << t.steps << " steps, " << seconds_since(t0) << " s)\n";
  EXPECT_DOUBLE_EQ(last[0], 100.0);
  EXPECT_GE(last[5], 0.90);
  EXPECT_LT(seconds_since(t0), 60.0);
}

TEST(Acceptance, C4_FullAndEffectiveGroundPopulationsAgree) {
  const std::vector<Observable> obs = [] {
    std::vector<Observable> o;
    for (const auto& v : ground_product_states(2)) o.push_back({"", v});
    for (std::size_t k = 0; k < o.size(); ++k) o[k].name = "g" + std::to_string(k);
    o.push_back({"ground", manifold_projector(2, false)});
    return o;
  }();
  auto run = [&](Flavor flavor) {
    ModelSpec s = pumped_pair(0.5);
    s.flavor = flavor;
    s.collapse_variant = CollapseVariant::independent;
    return evolve(s, ground_mixture(2), 1000.0, StepperConfig::adaptive(), 1000.0, obs);
  };
  const auto full = run(Flavor::full);
  const auto eff = run(Flavor::effective);
  double worst = 0.0;
  for (const auto& o : obs) worst = std::max(worst, std::abs(full.series(o.name).back() - eff.series(o.name).back()));
  std::cout << "  largest ground-population difference at 1 ms: " << worst << " (full " << full.steps
            << " steps, total ground " << full.series("ground").back() << ")\n";
  EXPECT_LT(worst, 5e-3);
}

TEST(Acceptance, C5_DarkStatesAreExact) {
  ModelSpec s = pumped_pair(0.5);
  s.flavor = Flavor::effective;
  s.collapse_variant = CollapseVariant::paper_effective;
  const double r = steady_residual(s, DensityMatrix::pure(psi_state(), {kLevels, kLevels}));
  ModelSpec s3 = figure_defaults(3);
  s3.delta_mhz = 0.5;
  DerivedRules::pumping(2.0, 0.2).apply(s3);
  const double h = microwave_hamiltonian(s3).apply(singlet3_state()).norm();
  std::cout << "  ||L_eff(Psi)||_F = " << r << ", ||H_w S3|| = " << h << '\n';
  EXPECT_LT(r, 1e-12);
  EXPECT_LT(h, 1e-12);
}

// Fidelity to S3 from scipy's expm_multiply on the explicit 46656 x 46656
// generator (independent code path), every 5 ms.
constexpr double kFig4Oracle[] = {0.0, 0.06440767530117217, 0.13654407322125756, 0.2018562186826317,
                                  0.2606735518139178, 0.3136384061564245, 0.36133371931214237};

TEST(Acceptance, C6a_ThreeAtomShortTier) {
  Job job = figure_job("fig4", Json::object(), 30.0);
  job.trajectory.observe_every_ms = 5.0;
  const auto t0 = std::chrono::steady_clock::now();
  const TrajectoryTable t = run_trajectory(job.trajectory, false);
  ASSERT_EQ(t.rows.size(), 7u);
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const double f = t.rows[k][5];
    std::cout << "  t = " << t.rows[k][0] << " ms: fidelity_S3 " << std::setprecision(13) << f << " (oracle "
              << kFig4Oracle[k] << ")\n";
    EXPECT_NEAR(f, kFig4Oracle[k], 1e-8);
    if (k > 0) {
      EXPECT_GT(f, t.rows[k - 1][5]);
    }
  }
  std::cout << "  " << t.steps << " Chebyshev sub-steps, " << seconds_since(t0) << " s\n";
  EXPECT_GE(t.rows.back()[5] - t.rows.front()[5], 0.2);
  EXPECT_GE(t.min_eigenvalue, -1e-8);
}

TEST(Acceptance, C6b_ThreeAtomLongTier) {
  const char* flag = std::getenv("RYDSTEADY_LONG_TIER");
  if (flag == nullptr || std::string(flag) != "1") GTEST_SKIP() << "set RYDSTEADY_LONG_TIER=1 to run the 300 ms tier";
  Job job = figure_job("fig4");
  job.trajectory.observe_every_ms = 50.0;
  const TrajectoryTable t = run_trajectory(job.trajectory, false);
  for (const auto& row : t.rows) std::cout << "  t = " << row[0] << " ms: fidelity_S3 " << row[5] << '\n';
  EXPECT_NEAR(t.rows.back()[5], 0.7915, 0.03);
}

TEST(Acceptance, C7_PropertySuite) {
  std::mt19937_64 rng(70);
  // Generator tracelessness and Hermiticity, superoperator vs matrix-free.
  {
    ModelSpec s = pumped_pair(0.5);
    s.gamma_khz = 100.0;
    const auto ls = collapse_ops(s);
    const Operator h = hamiltonian(s);
    const LindbladGenerator gen(h, ls);
    const Liouvillian lv = liouvillian_matrix(h, ls);
    for (int k = 0; k < 20; ++k) {
      const DenseMatrix x = testing::random_hermitian(36, rng);
      const DenseMatrix y = gen.apply(x);
      EXPECT_LT(std::abs(y.trace()) / x.norm(), 1e-12);
      EXPECT_LT((y - y.adjoint()).norm() / x.norm(), 1e-12);
      EXPECT_LT((lv.apply(x) - y).norm() / y.norm(), 1e-12);
    }
  }
  // Trace preservation and positivity along a trajectory.
  {
    ModelSpec s = pumped_pair(0.5);
    s.gamma_khz = 20.0;
    const auto rec = evolve(s, ground_mixture(2), 100.0, StepperConfig::adaptive(), 2.0, {});
    for (double tr : rec.series("trace")) EXPECT_NEAR(tr, 1.0, 1e-9);
    for (double ev : rec.series("min_eigenvalue")) EXPECT_GE(ev, -1e-8);
  }
  // Negativity.
  const Dims pair{kLevels, kLevels};
  EXPECT_NEAR(negativity(DensityMatrix::pure(psi_state(), pair)), 1.0, 1e-12);
  for (int k = 0; k < 10; ++k) {
    const DensityMatrix a = testing::random_density({kLevels}, rng), b = testing::random_density({kLevels}, rng);
    EXPECT_NEAR(negativity(DensityMatrix(kron(a.op(), b.op()).dense(), pair)), 0.0, 1e-10);
  }
  // Two-level checks: RK4 order, optical Bloch steady state, Rabi oscillation.
  auto two_level = [](double omega, double delta) {
    DenseMatrix h = DenseMatrix::Zero(2, 2);
    h(0, 1) = h(1, 0) = omega;
    h(1, 1) = -delta;
    return Operator(h, {2});
  };
  auto decay = [](double gamma) {
    DenseMatrix l = DenseMatrix::Zero(2, 2);
    l(0, 1) = std::sqrt(gamma);
    return std::vector<Operator>{Operator(l, {2})};
  };
  const DensityMatrix g = DensityMatrix::pure(StateVector::Unit(2, 0), {2});
  {
    const LindbladGenerator gen(two_level(1.0, 0.5), decay(0.3));
    const auto ref = evolve(gen, g, 4.0, StepperConfig::adaptive(1e-13, 1e-15), 4.0, {});
    auto err = [&](double dt) {
      return (evolve(gen, g, 4.0, StepperConfig::rk4(dt), 4.0, {}).final_state.matrix() - ref.final_state.matrix())
          .norm();
    };
    const double ratio = err(0.04) / err(0.02);
    std::cout << "  rk4 error ratio " << ratio << '\n';
    EXPECT_GE(ratio, 8.0);
    EXPECT_LE(ratio, 32.0);
  }
  {
    const double om = 0.3, de = 1.1, ga = 0.7;
    const auto res = steady_state(two_level(om, de), decay(ga));
    EXPECT_NEAR(res.state.matrix()(1, 1).real(), 4 * om * om / (4 * de * de + 8 * om * om + ga * ga), 1e-10);
  }
  {
    const LindbladGenerator gen(two_level(1.3, 0.0), {});
    const std::vector<Observable> obs{{"p_e", StateVector::Unit(2, 1)}};
    const auto rec = evolve(gen, g, 10.0, StepperConfig::adaptive(1e-10, 1e-12), 0.25, obs);
    for (std::size_t i = 0; i < rec.times.size(); ++i) {
      EXPECT_NEAR(rec.series("p_e")[i], std::pow(std::sin(1.3 * rec.times[i]), 2), 1e-6);
    }
  }
}

}  // namespace
}  // namespace rydsteady
