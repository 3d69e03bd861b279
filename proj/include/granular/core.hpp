#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "granular/errors.hpp"

namespace granular {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

/// What a particle represents. Fixed once the scene is built.
struct Phase {
  enum class Kind : std::uint8_t { Granular, RigidBody, StaticBoundary };

  Kind kind = Kind::Granular;
  std::int32_t body = -1;  // valid only for RigidBody

  static constexpr Phase granular() { return {Kind::Granular, -1}; }
  static constexpr Phase rigid(std::int32_t id) { return {Kind::RigidBody, id}; }
  static constexpr Phase boundary() { return {Kind::StaticBoundary, -1}; }

  constexpr bool is_granular() const { return kind == Kind::Granular; }
  constexpr bool is_rigid() const { return kind == Kind::RigidBody; }
  constexpr bool is_boundary() const { return kind == Kind::StaticBoundary; }

  friend constexpr bool operator==(const Phase&, const Phase&) = default;
};

/// Structure-of-arrays particle store shared by the LR solver and the upsampler.
///
/// `x` holds the positions at the start of a step, `x_pred` the predicted
/// positions that constraints act on. Inverse mass is the stored quantity so
/// that static boundaries (inverse mass 0) are exact. `scaled_inv_mass` is
/// the height-attenuated value used while solving contacts and friction.
struct ParticleSet {
  double radius = 0.0;

  std::vector<Vec3> x;
  std::vector<Vec3> x_pred;
  std::vector<Vec3> v;
  std::vector<double> inv_mass;
  std::vector<double> scaled_inv_mass;
  std::vector<double> mu_s;
  std::vector<double> mu_k;
  std::vector<Phase> phase;

  ParticleSet() = default;
  explicit ParticleSet(double r) : radius(r) {}

  std::size_t size() const { return x.size(); }
  bool empty() const { return x.empty(); }

  std::size_t add(const Vec3& position, double inverse_mass, double static_mu,
                  double kinetic_mu, Phase ph, const Vec3& velocity = Vec3::Zero()) {
    x.push_back(position);
    x_pred.push_back(position);
    v.push_back(velocity);
    inv_mass.push_back(inverse_mass);
    scaled_inv_mass.push_back(inverse_mass);
    mu_s.push_back(static_mu);
    mu_k.push_back(kinetic_mu);
    phase.push_back(ph);
    return x.size() - 1;
  }

  void reserve(std::size_t n) {
    x.reserve(n);
    x_pred.reserve(n);
    v.reserve(n);
    inv_mass.reserve(n);
    scaled_inv_mass.reserve(n);
    mu_s.reserve(n);
    mu_k.reserve(n);
    phase.reserve(n);
  }

  /// Throws ParameterError / DataError when an invariant is broken.
  void validate() const {
    const std::size_t n = x.size();
    if (x_pred.size() != n || v.size() != n || inv_mass.size() != n ||
        scaled_inv_mass.size() != n || mu_s.size() != n || mu_k.size() != n ||
        phase.size() != n) {
      throw ParameterError("particle arrays have mismatched lengths");
    }
    if (!(radius > 0.0)) throw ParameterError("particle radius must be positive");
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_finite(x[i]) || !is_finite(x_pred[i]) || !is_finite(v[i])) {
        throw DataError("non-finite particle state", i);
      }
      if (!(inv_mass[i] >= 0.0)) throw DataError("negative inverse mass", i);
      if (phase[i].is_boundary() && inv_mass[i] != 0.0) {
        throw DataError("static boundary particle with finite mass", i);
      }
      if (!(mu_k[i] >= 0.0) || !(mu_s[i] >= mu_k[i])) {
        throw DataError("friction coefficients must satisfy mu_s >= mu_k >= 0", i);
      }
    }
  }
};

/// Length that scales the friction thresholds: the particle diameter 2r
/// (static below 2r mu_s), or the pair's penetration depth d (static below
/// d mu_s, as in unified particle solvers).
enum class FrictionLength : std::uint8_t { Diameter, Penetration };

/// Low-resolution solver settings. Defaults are the values used throughout
/// the experiments; `mass_scale_k` defaults to 1/(2 r_LR) via `defaults_for`.
struct LrParams {
  double dt_lr = 0.005;
  int solver_iterations = 5;
  int stabilization_iterations = 2;
  Vec3 gravity{0.0, -9.81, 0.0};
  double mass_scale_k = 0.0;
  double cfl_factor = 0.4;
  double ground_height = 0.0;
  int max_substeps = 16;
  FrictionLength friction_length = FrictionLength::Diameter;
  // Forces serial evaluation. Results do not depend on the thread count
  // either way; this only removes OpenMP from the picture.
  bool deterministic = false;

  static LrParams defaults_for(double r_lr) {
    LrParams p;
    p.mass_scale_k = 1.0 / (2.0 * r_lr);
    return p;
  }

  void validate() const {
    if (!(dt_lr > 0.0)) throw ParameterError("lr.dt must be positive");
    if (solver_iterations < 1 || solver_iterations > 16) {
      throw ParameterError("lr.solver_iterations must be in [1, 16]");
    }
    if (stabilization_iterations < 0 || stabilization_iterations > 4) {
      throw ParameterError("lr.stabilization_iterations must be in [0, 4]");
    }
    if (!(mass_scale_k >= 0.0)) throw ParameterError("lr.mass_scale_k must be >= 0");
    if (!(cfl_factor > 0.0 && cfl_factor <= 1.0)) {
      throw ParameterError("lr.cfl_factor must be in (0, 1]");
    }
    if (max_substeps < 1) throw ParameterError("lr.max_substeps must be >= 1");
    if (!is_finite(gravity)) throw ParameterError("lr.gravity must be finite");
  }
};

struct HrParams {
  double dt_hr = 0.0167;
  double r_hr = 0.0;
  double c1 = 512.0 / 729.0;
  double c2 = 0.6;
  Vec3 gravity{0.0, -9.81, 0.0};
  double ground_height = 0.0;
  bool floor_clamp = true;
  // Drop rigid/boundary LR neighbours when no granular neighbour is in range.
  bool ignore_isolated_rigid = true;
  bool deterministic = false;

  void validate(double r_lr) const {
    if (!(dt_hr > 0.0)) throw ParameterError("hr.dt must be positive");
    if (!(r_hr > 0.0 && r_hr < r_lr)) throw ParameterError("r_hr must be in (0, r_lr)");
    if (!(c1 > 0.0 && c1 < 1.0) || !(c2 > 0.0 && c2 < 1.0)) {
      throw ParameterError("hr.c1 and hr.c2 must lie in (0, 1)");
    }
  }
};

struct MaterialParams {
  double density = 1600.0;
  double mu_s = 0.35;
  double mu_k = 0.3;

  void validate() const {
    if (!(density > 0.0)) throw ParameterError("material.density must be positive");
    if (!(mu_k >= 0.0)) throw ParameterError("material.mu_k must be >= 0");
    if (!(mu_s >= mu_k)) {
      throw ParameterError("material.mu_s (" + std::to_string(mu_s) +
                           ") must be >= material.mu_k (" + std::to_string(mu_k) + ")");
    }
  }
};

/// Mass of a solid sphere of radius r.
inline double mass_from_density(double density, double r) {
  if (!(density > 0.0) || !(r > 0.0)) {
    throw ParameterError("mass_from_density requires positive density and radius");
  }
  return density * (4.0 / 3.0) * std::numbers::pi * r * r * r;
}

/// Pairwise friction coefficient for two particles (geometric mean).
inline double cross_friction(double mu_i, double mu_j) {
  if (!(mu_i >= 0.0) || !(mu_j >= 0.0)) {
    throw ParameterError("friction coefficients must be non-negative");
  }
  return std::sqrt(mu_i * mu_j);
}

/// Unit "up" direction, opposite to gravity (+y when gravity vanishes).
inline Vec3 up_direction(const Vec3& gravity) {
  const double g = gravity.norm();
  if (g == 0.0) return Vec3::UnitY();
  return -gravity / g;
}

}  // namespace granular
