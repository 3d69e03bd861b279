#include <gtest/gtest.h>

#include <random>

#include "granular/core.hpp"

using namespace granular;

TEST(MassFromDensity, SandGrain) {
  // 1600 * 4/3 * pi * 0.03^3, evaluated by hand.
  EXPECT_NEAR(mass_from_density(1600.0, 0.03), 0.18095574, 5e-9);
}

TEST(MassFromDensity, RejectsNonPositive) {
  EXPECT_THROW(mass_from_density(0.0, 0.03), ParameterError);
  EXPECT_THROW(mass_from_density(1600.0, 0.0), ParameterError);
  EXPECT_THROW(mass_from_density(-1.0, 0.03), ParameterError);
}

TEST(MassFromDensity, CubicInRadius) {
  EXPECT_NEAR(mass_from_density(1600.0, 0.06) / mass_from_density(1600.0, 0.03), 8.0, 1e-12);
}

TEST(MassFromDensity, StrictlyMonotone) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(0.01, 10.0);
  for (int k = 0; k < 1000; ++k) {
    const double rho = u(g) * 100, r = u(g) * 0.01, f = 1.0 + u(g);
    EXPECT_LT(mass_from_density(rho, r), mass_from_density(rho * f, r));
    EXPECT_LT(mass_from_density(rho, r), mass_from_density(rho, r * f));
  }
}

TEST(CrossFriction, Examples) {
  EXPECT_DOUBLE_EQ(cross_friction(0.35, 0.35), 0.35);
  EXPECT_NEAR(cross_friction(0.4, 0.1), 0.2, 1e-15);
  EXPECT_EQ(cross_friction(0.3, 0.0), 0.0);
  EXPECT_THROW(cross_friction(-0.1, 0.3), ParameterError);
}

TEST(CrossFriction, SymmetricExactly) {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int k = 0; k < 10000; ++k) {
    const double a = u(g), b = u(g);
    EXPECT_EQ(cross_friction(a, b), cross_friction(b, a));
  }
}

TEST(ParticleSet, AddKeepsArraysAligned) {
  ParticleSet ps(0.02);
  ps.add(Vec3(0, 0, 0), 1.0, 0.35, 0.3, Phase::granular());
  ps.add(Vec3(1, 0, 0), 0.0, 0.35, 0.3, Phase::boundary());
  EXPECT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps.x_pred.size(), 2u);
  EXPECT_EQ(ps.scaled_inv_mass.size(), 2u);
  EXPECT_NO_THROW(ps.validate());
}

TEST(ParticleSet, ValidateCatchesBrokenInvariants) {
  ParticleSet ps(0.02);
  ps.add(Vec3(0, 0, 0), 1.0, 0.35, 0.3, Phase::granular());
  auto bad = ps;
  bad.v.pop_back();
  EXPECT_THROW(bad.validate(), ParameterError);

  bad = ps;
  bad.add(Vec3(1, 0, 0), 2.0, 0.35, 0.3, Phase::boundary());
  EXPECT_THROW(bad.validate(), DataError);

  bad = ps;
  bad.mu_k[0] = 0.5;  // mu_k > mu_s
  EXPECT_THROW(bad.validate(), DataError);

  bad = ps;
  bad.x[0].x() = std::nan("");
  try {
    bad.validate();
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.index(), 0u);
  }

  bad = ps;
  bad.radius = 0.0;
  EXPECT_THROW(bad.validate(), ParameterError);
}

TEST(Params, LrDefaults) {
  const auto p = LrParams::defaults_for(0.025);
  EXPECT_EQ(p.dt_lr, 0.005);
  EXPECT_EQ(p.solver_iterations, 5);
  EXPECT_EQ(p.stabilization_iterations, 2);
  EXPECT_DOUBLE_EQ(p.mass_scale_k, 20.0);
  EXPECT_EQ(p.cfl_factor, 0.4);
  EXPECT_NO_THROW(p.validate());
}

TEST(Params, LrValidation) {
  auto p = LrParams::defaults_for(0.02);
  p.stabilization_iterations = 5;
  EXPECT_THROW(p.validate(), ParameterError);
  p = LrParams::defaults_for(0.02);
  p.cfl_factor = 0.0;
  EXPECT_THROW(p.validate(), ParameterError);
  p.cfl_factor = 1.0;
  EXPECT_NO_THROW(p.validate());
  p.dt_lr = 0.0;
  EXPECT_THROW(p.validate(), ParameterError);
}

TEST(Params, HrConstants) {
  HrParams h;
  EXPECT_EQ(h.c1, 512.0 / 729.0);
  EXPECT_EQ(h.c2, 0.6);
  EXPECT_EQ(h.dt_hr, 0.0167);
  h.r_hr = 0.01;
  EXPECT_NO_THROW(h.validate(0.03));
  EXPECT_THROW(h.validate(0.01), ParameterError);
}

TEST(Params, MaterialNamesBothFields) {
  MaterialParams m;
  EXPECT_EQ(m.density, 1600.0);
  EXPECT_EQ(m.mu_s, 0.35);
  EXPECT_EQ(m.mu_k, 0.3);
  m.mu_k = 0.5;
  try {
    m.validate();
    FAIL();
  } catch (const ParameterError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("mu_s"), std::string::npos);
    EXPECT_NE(msg.find("mu_k"), std::string::npos);
  }
}

TEST(UpDirection, OppositeGravity) {
  EXPECT_TRUE(up_direction(Vec3(0, -9.81, 0)).isApprox(Vec3::UnitY()));
  EXPECT_TRUE(up_direction(Vec3(0, 0, 3)).isApprox(-Vec3::UnitZ()));
  EXPECT_EQ(up_direction(Vec3::Zero()), Vec3::UnitY());
}
