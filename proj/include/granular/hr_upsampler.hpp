#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "granular/core.hpp"
#include "granular/neighbor_grid.hpp"

namespace granular {

/// High-resolution visual particles advected through the LR velocity field.
struct HrSet {
  double radius = 0.0;
  std::vector<Vec3> x;
  std::vector<Vec3> v;

  std::size_t size() const { return x.size(); }

  void add(const Vec3& p, const Vec3& vel = Vec3::Zero()) {
    x.push_back(p);
    v.push_back(vel);
  }
};

struct HrFieldEntry {
  Vec3 v_avg = Vec3::Zero();
  double alpha = 1.0;
  double max_w = 0.0;
  double sum_w = 0.0;
};

/// Cubic kernel (1 - d^2 / (9 r_lr^2))^3, zero beyond 3 r_lr.
inline double weight(double d2, double r_lr) {
  const double q = 1.0 - d2 / (9.0 * r_lr * r_lr);
  return q > 0.0 ? q * q * q : 0.0;
}

/// Gravity blend factor: 1 - max_w in sparse regions (max_w <= c1, or one
/// neighbour dominating with max_w / sum_w >= c2), 0 otherwise.
inline double alpha(double max_w, double sum_w, double c1, double c2) {
  if (sum_w <= 0.0) return 1.0;
  if (max_w <= c1 || max_w / sum_w >= c2) return 1.0 - max_w;
  return 0.0;
}

/// Weighted LR velocity around an HR particle.
///
/// Neighbours are the LR particles within 3 r_lr. When none of them is
/// granular, rigid and boundary particles are dropped as well (with
/// `ignore_isolated_rigid`), so an HR particle next to an externally moved
/// body goes ballistic instead of being dragged along.
inline HrFieldEntry gather(const Vec3& p, const ParticleSet& lr, const NeighborGrid& grid,
                           bool ignore_isolated_rigid = true) {
  const double support = 3.0 * lr.radius;
  HrFieldEntry e;
  Vec3 wv = Vec3::Zero();
  bool any_granular = false;
  Vec3 wv_solid = Vec3::Zero();
  double sum_solid = 0.0, max_solid = 0.0;
  Vec3 wv_gran = Vec3::Zero();
  double sum_gran = 0.0, max_gran = 0.0;
  grid.for_each_within(p, support, [&](std::uint32_t j, double d2) {
    const double w = weight(d2, lr.radius);
    if (lr.phase[j].is_granular()) {
      any_granular = true;
      wv_gran += w * lr.v[j];
      sum_gran += w;
      max_gran = std::max(max_gran, w);
    } else {
      wv_solid += w * lr.v[j];
      sum_solid += w;
      max_solid = std::max(max_solid, w);
    }
  });
  if (any_granular || !ignore_isolated_rigid) {
    wv = wv_gran + wv_solid;
    e.sum_w = sum_gran + sum_solid;
    e.max_w = std::max(max_gran, max_solid);
  }
  if (e.sum_w > 0.0) e.v_avg = wv / e.sum_w;
  return e;
}

/// v <- (1 - a) v_avg + a (v + dt g);  x <- x + dt v.
inline void advect(HrSet& hr, std::span<const HrFieldEntry> field, const HrParams& params) {
  const auto n = static_cast<std::int64_t>(hr.size());
  const Vec3 dv = params.dt_hr * params.gravity;
#pragma omp parallel for schedule(static) if (!params.deterministic && n > 4096)
  for (std::int64_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const HrFieldEntry& e = field[i];
    hr.v[i] = (1.0 - e.alpha) * e.v_avg + e.alpha * (hr.v[i] + dv);
    hr.x[i] += params.dt_hr * hr.v[i];
  }
  for (std::size_t i = 0; i < hr.size(); ++i) {
    if (!is_finite(hr.x[i]) || !is_finite(hr.v[i])) throw SimulationError("non-finite HR state", i);
  }
}

/// Keeps HR particles at least r_hr above the ground plane and removes
/// their downward velocity there.
inline void floor_clamp(HrSet& hr, double ground_height, double r_hr, const Vec3& up = Vec3::UnitY()) {
  const double floor = ground_height + r_hr;
  for (std::size_t i = 0; i < hr.size(); ++i) {
    const double h = up.dot(hr.x[i]);
    if (h < floor) {
      hr.x[i] += (floor - h) * up;
      const double vn = up.dot(hr.v[i]);
      if (vn < 0.0) hr.v[i] -= vn * up;
    }
  }
}

/// One HR step against the current LR state. Reads LR, never writes it.
class HrUpsampler {
 public:
  void step(HrSet& hr, const ParticleSet& lr, const HrParams& params) {
    field_.resize(hr.size());
    if (!lr.empty()) {
      const NeighborGrid grid(lr.x, 3.0 * lr.radius);
      const auto n = static_cast<std::int64_t>(hr.size());
#pragma omp parallel for schedule(static) if (!params.deterministic && n > 4096)
      for (std::int64_t ii = 0; ii < n; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        HrFieldEntry e = gather(hr.x[i], lr, grid, params.ignore_isolated_rigid);
        e.alpha = alpha(e.max_w, e.sum_w, params.c1, params.c2);
        field_[i] = e;
      }
    } else {
      std::fill(field_.begin(), field_.end(), HrFieldEntry{});
    }
    advect(hr, field_, params);
    if (params.floor_clamp) floor_clamp(hr, params.ground_height, hr.radius, up_direction(params.gravity));
  }

  const std::vector<HrFieldEntry>& field() const { return field_; }

 private:
  std::vector<HrFieldEntry> field_;
};

}  // namespace granular
