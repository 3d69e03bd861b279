#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "granular/lr_solver.hpp"
#include "granular/sampling.hpp"
#include "test_util.hpp"

using namespace granular;

namespace {

constexpr double kR = 0.02;

ParticleSet two(const Vec3& a, const Vec3& b, double wa = 1.0, double wb = 1.0) {
  ParticleSet ps(kR);
  ps.add(a, wa, 0.35, 0.3, wa > 0 ? Phase::granular() : Phase::boundary());
  ps.add(b, wb, 0.35, 0.3, wb > 0 ? Phase::granular() : Phase::boundary());
  return ps;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> pair_ids(const std::vector<ContactPair>& c) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (const auto& p : c) out.emplace_back(p.i, p.j);
  std::sort(out.begin(), out.end());
  return out;
}

// Boundary floor: square lattice of spacing `sp` at height 0.
void add_floor(ParticleSet& ps, double half, double sp) {
  for (double x = -half; x <= half + 1e-12; x += sp) {
    for (double z = -half; z <= half + 1e-12; z += sp) ps.add(Vec3(x, 0, z), 0.0, 0.35, 0.3, Phase::boundary());
  }
}

}  // namespace

// --- predict ---------------------------------------------------------------

TEST(Predict, GravityFromRest) {
  ParticleSet ps(kR);
  ps.add(Vec3(1, 2, 3), 1.0, 0.35, 0.3, Phase::granular());
  predict(ps, Vec3(0, -9.81, 0), 0.005);
  EXPECT_NEAR(ps.v[0].y(), -0.04905, 1e-15);
  EXPECT_NEAR(ps.x_pred[0].y() - 2.0, -0.00024525, 1e-15);
  EXPECT_EQ(ps.x_pred[0].x(), 1.0);
}

TEST(Predict, BoundaryAndRest) {
  ParticleSet ps(kR);
  ps.add(Vec3(0, 1, 0), 0.0, 0.35, 0.3, Phase::boundary(), Vec3(0.5, 0, 0));
  ps.add(Vec3(0, 2, 0), 1.0, 0.35, 0.3, Phase::granular());
  ps.x_pred[0] = Vec3(9, 9, 9);
  predict(ps, Vec3(0, -9.81, 0), 0.005);
  EXPECT_EQ(ps.x_pred[0], ps.x[0]);
  EXPECT_EQ(ps.v[0], Vec3(0.5, 0, 0));
  predict(ps, Vec3::Zero(), 0.005);
  ps.v[1].setZero();
  predict(ps, Vec3::Zero(), 0.005);
  EXPECT_EQ(ps.x_pred[1], ps.x[1]);
}

// --- mass scaling and CFL ------------------------------------------------------

TEST(ScaledMass, Examples) {
  EXPECT_EQ(scaled_mass(2.0, 0.0, 5.0), 2.0);
  EXPECT_NEAR(scaled_mass(1.0, 1.0, 1.0), 2.718281828459045, 1e-15);
  EXPECT_NEAR(1.0 / scaled_mass(1.0, 1.0, 1.0), 0.36788, 1e-5);
  EXPECT_EQ(scaled_mass(0.0, 3.0, 1.0), 0.0);
  EXPECT_EQ(scaled_mass(2.0, -1.0, 1.0), 2.0);  // below ground clamps to h = 0
}

TEST(ScaledMass, OnlyGranularIsScaled) {
  ParticleSet ps(kR);
  ps.add(Vec3(0, 0.5, 0), 1.0, 0.35, 0.3, Phase::granular());
  ps.add(Vec3(0, 0.5, 0), 1.0, 0.35, 0.3, Phase::rigid(0));
  ps.add(Vec3(0, 0.5, 0), 0.0, 0.35, 0.3, Phase::boundary());
  auto p = LrParams::defaults_for(kR);
  p.ground_height = 0.1;
  apply_mass_scaling(ps, p);
  EXPECT_NEAR(ps.scaled_inv_mass[0], std::exp(0.4 / (2 * kR)), 1e-9);
  EXPECT_EQ(ps.scaled_inv_mass[1], 1.0);
  EXPECT_EQ(ps.scaled_inv_mass[2], 0.0);
}

TEST(Cfl, Examples) {
  auto p = LrParams::defaults_for(kR);
  ParticleSet ps(kR);
  ps.add(Vec3::Zero(), 1.0, 0.35, 0.3, Phase::granular());
  EXPECT_EQ(cfl_substeps(ps, p), std::make_pair(1, 0.005));

  ps.v[0] = Vec3(8, 0, 0);
  const auto [n, dt] = cfl_substeps(ps, p);
  EXPECT_EQ(n, 5);
  EXPECT_NEAR(dt, 0.001, 1e-15);

  ps.v[0] = Vec3(0.4 * kR / 0.005, 0, 0);  // exactly at the limit
  EXPECT_EQ(cfl_substeps(ps, p).first, 1);
}

TEST(Cfl, CappedWithWarning) {
  auto p = LrParams::defaults_for(kR);
  ParticleSet ps(kR);
  ps.add(Vec3::Zero(), 1.0, 0.35, 0.3, Phase::granular(), Vec3(1000, 0, 0));
  std::vector<std::string> warnings;
  auto saved = warning_sink();
  warning_sink() = [&](const std::string& m) { warnings.push_back(m); };
  EXPECT_EQ(cfl_substeps(ps, p).first, 16);
  warning_sink() = saved;
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("capped"), std::string::npos);
}

// --- contacts ----------------------------------------------------------------

TEST(GenerateContacts, Examples) {
  auto ps = two(Vec3::Zero(), Vec3(1.5 * kR, 0, 0));
  EXPECT_EQ(generate_contacts(ps, NeighborGrid(ps.x_pred, 3 * kR)).size(), 1u);

  ps = two(Vec3::Zero(), Vec3(2 * kR, 0, 0));
  EXPECT_TRUE(generate_contacts(ps, NeighborGrid(ps.x_pred, 3 * kR)).empty());
}

TEST(GenerateContacts, MatchesBruteForce) {
  std::mt19937_64 g(21);
  for (int trial = 0; trial < 20; ++trial) {
    ParticleSet ps(kR);
    for (int i = 0; i < 50; ++i) {
      const auto kind = g() % 4;
      const Phase ph = kind == 0 ? Phase::boundary() : kind == 1 ? Phase::rigid(int(g() % 2)) : Phase::granular();
      ps.add(testutil::random_in_box(g, 0.0, 0.15), ph.is_boundary() ? 0.0 : 1.0, 0.35, 0.3, ph);
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> expect;
    for (std::uint32_t i = 0; i < 50; ++i) {
      for (std::uint32_t j = i + 1; j < 50; ++j) {
        if ((ps.x_pred[j] - ps.x_pred[i]).norm() >= 2 * kR) continue;
        if (ps.phase[i].is_boundary() && ps.phase[j].is_boundary()) continue;
        if (ps.phase[i].is_rigid() && ps.phase[j].is_rigid() && ps.phase[i].body == ps.phase[j].body) continue;
        expect.emplace_back(i, j);
      }
    }
    EXPECT_EQ(pair_ids(generate_contacts(ps, NeighborGrid(ps.x_pred, 3 * kR))), expect);
  }
}

TEST(GenerateContacts, CoincidentFlagged) {
  auto ps = two(Vec3(0.1, 0.1, 0.1), Vec3(0.1, 0.1, 0.1));
  const auto c = generate_contacts(ps, NeighborGrid(ps.x_pred, 3 * kR));
  ASSERT_EQ(c.size(), 1u);
  EXPECT_TRUE(c[0].coincident);
  // Resolution still separates them along a fixed direction.
  const auto d = solve_contact(c[0], ps);
  EXPECT_NEAR((ps.x_pred[1] + d.dj - ps.x_pred[0] - d.di).norm(), 2 * kR, 1e-15);
  const auto d2 = solve_contact(c[0], ps);
  EXPECT_EQ(d.di, d2.di);
}

TEST(SolveContact, EqualMasses) {
  auto ps = two(Vec3::Zero(), Vec3(1.5 * kR, 0, 0));
  const auto d = solve_contact({0, 1, ps.x_pred[1] - ps.x_pred[0]}, ps);
  EXPECT_NEAR(d.di.x(), -0.25 * kR, 1e-17);
  EXPECT_NEAR(d.dj.x(), 0.25 * kR, 1e-17);
  EXPECT_EQ(d.di.y(), 0.0);
}

TEST(SolveContact, AgainstBoundary) {
  auto ps = two(Vec3::Zero(), Vec3(0, 1.5 * kR, 0), 1.0, 0.0);
  const auto d = solve_contact({0, 1, ps.x_pred[1] - ps.x_pred[0]}, ps);
  EXPECT_NEAR(d.di.norm(), 0.5 * kR, 1e-17);
  EXPECT_EQ(d.dj, Vec3::Zero());
}

TEST(SolveContact, MassRatio) {
  // m_i = 1, m_j = 3: inverse masses 1 and 1/3.
  const double d = 0.3 * kR;
  auto ps = two(Vec3::Zero(), Vec3(0, 0, 2 * kR - d), 1.0, 1.0 / 3.0);
  const auto out = solve_contact({0, 1, ps.x_pred[1] - ps.x_pred[0]}, ps);
  EXPECT_NEAR(out.di.norm(), 0.75 * d, 1e-16);
  EXPECT_NEAR(out.dj.norm(), 0.25 * d, 1e-16);
}

TEST(SolveContact, SeparationAndMomentumProperties) {
  std::mt19937_64 g(33);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 10000; ++k) {
    const Vec3 xi = testutil::random_in_box(g, -1.0, 1.0);
    const Vec3 xj = xi + testutil::random_unit(g) * (2 * kR * (0.01 + 0.98 * u(g)));
    const double wi = std::exp(4 * u(g) - 2), wj = std::exp(4 * u(g) - 2);
    const auto d = contact_deltas(xi, xj, wi, wj, kR);
    EXPECT_NEAR(((xj + d.dj) - (xi + d.di)).norm(), 2 * kR, 1e-9 * 2 * kR);
    EXPECT_LE((d.di / wi + d.dj / wj).norm(), 1e-10 * (d.di.norm() / wi));
  }
}

// --- friction ---------------------------------------------------------------

TEST(SolveFriction, HeadOnHasNoFriction) {
  const Vec3 xij(1.8 * kR, 0, 0);
  const auto f = friction_deltas(xij, Vec3(-0.1 * kR, 0, 0), Vec3(0.1 * kR, 0, 0), 1, 1, kR, 0.35, 0.3);
  EXPECT_EQ(f.di, Vec3::Zero());
  EXPECT_EQ(f.dj, Vec3::Zero());
}

TEST(SolveFriction, StaticBranch) {
  // |dx_perp| = 0.2 r < 2 r mu_s = 0.7 r: cancelled outright, split by mass.
  const Vec3 xij(1.8 * kR, 0, 0);
  const Vec3 disp_i(0.05 * kR, 0.2 * kR, 0);
  const auto f = friction_deltas(xij, disp_i, Vec3::Zero(), 1.0, 1.0 / 3.0, kR, 0.35, 0.3);
  EXPECT_NEAR(f.di.y(), -0.75 * 0.2 * kR, 1e-18);
  EXPECT_NEAR(f.dj.y(), 0.25 * 0.2 * kR, 1e-18);
  EXPECT_EQ(f.di.x(), 0.0);
  EXPECT_NEAR((disp_i + f.di - f.dj).y(), 0.0, 1e-18);
}

TEST(SolveFriction, KineticBranch) {
  // |dx_perp| = 2 r: min_fric = 0.6 r / 2 r = 0.3.
  const Vec3 xij(0, 0, 1.9 * kR);
  const Vec3 disp_i(2 * kR, 0, 0), disp_j = Vec3::Zero();
  EXPECT_NEAR(min_fric(kR, 0.3, 2 * kR), 0.3, 1e-15);
  const auto f = friction_deltas(xij, disp_i, disp_j, 1, 1, kR, 0.35, 0.3);
  EXPECT_NEAR(f.di.x(), -0.5 * 0.3 * 2 * kR, 1e-17);
  EXPECT_NEAR(f.dj.x(), 0.5 * 0.3 * 2 * kR, 1e-17);
}

TEST(SolveFriction, UsesCrossCoefficients) {
  ParticleSet ps(kR);
  ps.add(Vec3::Zero(), 1, 0.4, 0.4, Phase::granular());
  ps.add(Vec3(1.8 * kR, 0, 0), 1, 0.1, 0.1, Phase::granular());
  // Cross coefficients are 0.2: static below 2 r * 0.2 = 0.4 r.
  const ContactPair pair{0, 1, ps.x_pred[1] - ps.x_pred[0]};
  auto f = solve_friction(pair, ps, Vec3(0, 0.35 * kR, 0), Vec3::Zero());
  EXPECT_NEAR(f.di.y(), -0.5 * 0.35 * kR, 1e-18);  // static
  f = solve_friction(pair, ps, Vec3(0, 0.8 * kR, 0), Vec3::Zero());
  EXPECT_NEAR(f.di.y(), -0.5 * 0.4 * kR, 1e-17);  // kinetic: capped at 2 r mu_k
}

TEST(SolveFriction, PerpendicularAndBounded) {
  std::mt19937_64 g(44);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 10000; ++k) {
    const Vec3 xij = testutil::random_unit(g) * (2 * kR * (0.05 + 0.9 * u(g)));
    const Vec3 di = testutil::random_unit(g) * 3 * kR * u(g), dj = testutil::random_unit(g) * 3 * kR * u(g);
    const double wi = std::exp(2 * u(g) - 1), wj = std::exp(2 * u(g) - 1);
    const double mk = 0.5 * u(g), ms = mk + 0.3 * u(g);
    const auto f = friction_deltas(xij, di, dj, wi, wj, kR, ms, mk);
    const Vec3 n = xij.normalized();
    EXPECT_LE(std::abs(f.di.dot(n)), 1e-10 * std::max(f.di.norm(), 1e-30));
    EXPECT_LE(std::abs(f.dj.dot(n)), 1e-10 * std::max(f.dj.norm(), 1e-30));
    // Never more than the full static correction.
    const Vec3 rel = di - dj;
    const Vec3 perp = rel - rel.dot(n) * n;
    EXPECT_LE((f.di - f.dj).norm(), perp.norm() * (1 + 1e-12));
    const double mf = min_fric(kR, mk, perp.norm());
    if (mk > 0.0) { EXPECT_GT(mf, 0.0); }
    EXPECT_LE(mf, 1.0);
  }
}

TEST(SolveFriction, PenetrationLengthVariant) {
  // Threshold d mu_s with d = 0.2 r: 0.05 r slip is kinetic and capped at d mu_k.
  const Vec3 xij(1.8 * kR, 0, 0);
  const auto f = friction_deltas_len(xij, Vec3(0, 0.1 * kR, 0), Vec3::Zero(), 1, 1, 0.2 * kR, 0.35, 0.3);
  EXPECT_NEAR((f.dj - f.di).norm(), 0.2 * kR * 0.3, 1e-17);
  const auto g = friction_deltas_len(xij, Vec3(0, 0.05 * kR, 0), Vec3::Zero(), 1, 1, 0.2 * kR, 0.35, 0.3);
  EXPECT_NEAR((g.dj - g.di).norm(), 0.05 * kR, 1e-17);
}

// --- averaging --------------------------------------------------------------

TEST(ApplyAveraged, Examples) {
  ParticleSet ps(kR);
  for (int i = 0; i < 4; ++i) ps.add(Vec3::Zero(), i == 3 ? 0.0 : 1.0, 0.35, 0.3, i == 3 ? Phase::boundary() : Phase::granular());
  ConstraintBatch b;
  b.reset(4);
  b.add(0, Vec3(0.5, 0, 0));
  b.add(1, Vec3(1, 2, 3));
  b.add(1, Vec3(-1, -2, -3));
  b.add(2, Vec3(1, 0, 0));
  b.add(2, Vec3(1, 0, 0));
  b.add(2, Vec3(4, 0, 0));
  b.add(3, Vec3(1, 1, 1));
  apply_averaged(b, ps, false);
  EXPECT_EQ(ps.x_pred[0], Vec3(0.5, 0, 0));
  EXPECT_EQ(ps.x_pred[1], Vec3::Zero());
  EXPECT_EQ(ps.x_pred[2], Vec3(2, 0, 0));
  EXPECT_EQ(ps.x_pred[3], Vec3::Zero());
  EXPECT_EQ(ps.x[2], Vec3::Zero());
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(b.count[i], 0);
    EXPECT_EQ(b.dx_sum[i], Vec3::Zero());
  }
  b.add(0, Vec3(0, 1, 0));
  apply_averaged(b, ps, true);
  EXPECT_EQ(ps.x[0], Vec3(0, 1, 0));
  EXPECT_EQ(ps.x_pred[0], Vec3(0.5, 1, 0));
}

// --- full step ---------------------------------------------------------------

TEST(Step, EmptyScene) {
  ParticleSet ps(kR);
  std::vector<RigidBody> bodies;
  const auto s = step(ps, bodies, LrParams::defaults_for(kR));
  EXPECT_EQ(s.contacts, 0u);
}

TEST(Step, FreeFallClosedForm) {
  ParticleSet ps(kR);
  ps.add(Vec3(0, 0, 0), 1.0, 0.35, 0.3, Phase::granular());
  std::vector<RigidBody> bodies;
  const auto p = LrParams::defaults_for(kR);
  LrSolver solver;
  for (int n = 1; n <= 10; ++n) {
    solver.step(ps, bodies, p);
    const double expect = -9.81 * p.dt_lr * p.dt_lr * n * (n + 1) / 2.0;
    EXPECT_NEAR(ps.x[0].y(), expect, 1e-12 * std::abs(expect));
    EXPECT_NEAR(ps.v[0].y(), -9.81 * p.dt_lr * n, 1e-12 * 9.81 * p.dt_lr * n);
  }
}

TEST(Step, ParticleParkedOnFloor) {
  ParticleSet ps(kR);
  add_floor(ps, 0.1, kR);
  const auto i = ps.add(Vec3(0.003, 2 * kR, 0.001), 1.0 / mass_from_density(1600, kR), 0.35, 0.3, Phase::granular());
  std::vector<RigidBody> bodies;
  const auto p = LrParams::defaults_for(kR);
  LrSolver solver;
  const double y0 = ps.x[i].y();
  std::vector<Vec3> floor(ps.x.begin(), ps.x.begin() + i);
  for (int n = 0; n < 100; ++n) solver.step(ps, bodies, p);
  EXPECT_LT(std::abs(ps.x[i].y() - y0), 0.05 * kR);
  EXPECT_LT(ps.v[i].norm(), 1e-3);
  for (std::size_t k = 0; k < i; ++k) EXPECT_EQ(ps.x[k], floor[k]);
}

TEST(Step, NonFiniteReportsIndex) {
  ParticleSet ps(kR);
  ps.add(Vec3::Zero(), 1.0, 0.35, 0.3, Phase::granular());
  ps.add(Vec3(1, 0, 0), 1.0, 0.35, 0.3, Phase::granular());
  ps.v[1] = Vec3(std::nan(""), 0, 0);
  std::vector<RigidBody> bodies;
  try {
    step(ps, bodies, LrParams::defaults_for(kR));
    FAIL();
  } catch (const SimulationError& e) {
    EXPECT_EQ(e.index(), 1u);
  }
}

TEST(Step, SerialAndParallelAgree) {
  ParticleSet ps(kR);
  add_floor(ps, 0.15, 1.5 * kR);
  for (const auto& q : sample_volume(shapes::box(Vec3(-0.1, 0.03, -0.1), Vec3(0.1, 0.2, 0.1)), kR, 3)) {
    ps.add(q, 1.0 / mass_from_density(1600, kR), 0.35, 0.3, Phase::granular());
  }
  auto a = ps, b = ps;
  std::vector<RigidBody> bodies;
  auto p = LrParams::defaults_for(kR);
  LrSolver sa, sb;
  for (int n = 0; n < 40; ++n) {
    p.deterministic = true;
    sa.step(a, bodies, p);
    p.deterministic = false;
    sb.step(b, bodies, p);
  }
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.v, b.v);
}

TEST(Step, SubstepsForFastParticles) {
  ParticleSet ps(kR);
  ps.add(Vec3::Zero(), 1.0, 0.35, 0.3, Phase::granular(), Vec3(8, 0, 0));
  std::vector<RigidBody> bodies;
  auto p = LrParams::defaults_for(kR);
  p.gravity.setZero();
  const auto s = step(ps, bodies, p);
  EXPECT_EQ(s.substeps, 5);
  EXPECT_NEAR(ps.x[0].x(), 8 * 0.005, 1e-15);
}

TEST(Step, IterationsReducePenetration) {
  // Contact-only Jacobi iterations on predicted positions of a loosely
  // settled heap: mean penetration is non-increasing in the ensemble mean.
  const int kIters = 8, kSeeds = 8;
  std::vector<double> mean_pen(kIters + 1, 0.0);
  for (int seed = 0; seed < kSeeds; ++seed) {
    ParticleSet ps(kR);
    add_floor(ps, 0.12, 1.5 * kR);
    for (const auto& q : sample_volume(shapes::box(Vec3(-0.08, 0.025, -0.08), Vec3(0.08, 0.15, 0.08)), kR,
                                       std::uint64_t(seed))) {
      ps.add(q, 1.0 / mass_from_density(1600, kR), 0.35, 0.3, Phase::granular());
    }
    std::vector<RigidBody> bodies;
    const auto p = LrParams::defaults_for(kR);
    LrSolver solver;
    for (int n = 0; n < 30; ++n) solver.step(ps, bodies, p);
    predict(ps, p);
    apply_mass_scaling(ps, p);
    ConstraintBatch batch;
    batch.reset(ps.size());
    const auto pairs = generate_contacts(ps, NeighborGrid(ps.x_pred, 3 * kR));
    auto penetration = [&] {
      double sum = 0.0;
      for (const auto& c : pairs) sum += std::max(0.0, 2 * kR - (ps.x_pred[c.j] - ps.x_pred[c.i]).norm());
      return pairs.empty() ? 0.0 : sum / double(pairs.size());
    };
    mean_pen[0] += penetration() / kSeeds;
    for (int it = 1; it <= kIters; ++it) {
      for (const auto& c : pairs) {
        const auto d = solve_contact(c, ps);
        if (d.di == Vec3::Zero() && d.dj == Vec3::Zero()) continue;
        batch.add(c.i, d.di);
        batch.add(c.j, d.dj);
      }
      apply_averaged(batch, ps, false);
      mean_pen[it] += penetration() / kSeeds;
    }
  }
  for (int it = 0; it < kIters; ++it) EXPECT_LE(mean_pen[it + 1], mean_pen[it]) << "iteration " << it + 1;
  EXPECT_LT(mean_pen[kIters], 0.5 * mean_pen[0]);
}
