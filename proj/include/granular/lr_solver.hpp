#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "granular/core.hpp"
#include "granular/log.hpp"
#include "granular/neighbor_grid.hpp"
#include "granular/rigid.hpp"

namespace granular {

/// Distance below which two particle centres count as coincident.
inline constexpr double kCoincident = 1e-9;

struct ContactPair {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  Vec3 x_ij = Vec3::Zero();  // x_j - x_i when the pair was generated
  bool coincident = false;
};

/// Per-particle accumulation buffers for one solver iteration.
struct ConstraintBatch {
  std::vector<ContactPair> contacts;
  std::vector<Vec3> dx_sum;
  std::vector<std::int32_t> count;

  void reset(std::size_t n) {
    dx_sum.assign(n, Vec3::Zero());
    count.assign(n, 0);
  }

  void add(std::uint32_t i, const Vec3& delta) {
    dx_sum[i] += delta;
    ++count[i];
  }
};

struct PairDelta {
  Vec3 di = Vec3::Zero();
  Vec3 dj = Vec3::Zero();
};

// ---------------------------------------------------------------------------
// Prediction, mass scaling, CFL

/// v += dt g and x_pred = x + dt v for particles with finite mass;
/// infinite-mass particles keep x_pred = x and their prescribed velocity.
inline void predict(ParticleSet& ps, const Vec3& gravity, double dt) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.inv_mass[i] > 0.0) {
      ps.v[i] += dt * gravity;
      ps.x_pred[i] = ps.x[i] + dt * ps.v[i];
    } else {
      ps.x_pred[i] = ps.x[i];
    }
  }
}

inline void predict(ParticleSet& ps, const LrParams& params) { predict(ps, params.gravity, params.dt_lr); }

/// Inverse-mass form of m* = m e^{-k h}: returns m_inv e^{k h}, h clamped at 0.
/// The exponent is capped so particles far above the ground stay finite;
/// only ratios within a contact pair matter.
inline double scaled_mass(double m_inv, double h, double k) {
  if (m_inv == 0.0) return 0.0;
  return m_inv * std::exp(std::min(k * std::max(h, 0.0), 600.0));
}

/// Height-attenuated inverse masses for granular particles; everything else
/// solves with its plain inverse mass.
inline void apply_mass_scaling(ParticleSet& ps, const LrParams& params) {
  const Vec3 up = up_direction(params.gravity);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.phase[i].is_granular()) {
      const double h = up.dot(ps.x[i]) - params.ground_height;
      ps.scaled_inv_mass[i] = scaled_mass(ps.inv_mass[i], h, params.mass_scale_k);
    } else {
      ps.scaled_inv_mass[i] = ps.inv_mass[i];
    }
  }
}

/// Smallest n >= 1 with max_speed * dt / n <= cfl * r, capped at max_substeps.
inline int substeps_for_speed(double max_speed, double r, const LrParams& params) {
  const double ratio = max_speed * params.dt_lr / (params.cfl_factor * r);
  // The relative slack keeps "exactly at the limit" on the inclusive side.
  const double n = std::ceil(ratio * (1.0 - 1e-12));
  if (!(n <= params.max_substeps)) {
    if (std::isfinite(ratio) && ratio > 0.0) {
      log_warning("CFL wants " + std::to_string(static_cast<long long>(std::min(n, 1e15))) +
                  " substeps; capped at " + std::to_string(params.max_substeps));
    } else {
      log_warning("non-finite particle speed; substeps capped at " + std::to_string(params.max_substeps));
    }
    return params.max_substeps;
  }
  return std::max(1, static_cast<int>(n));
}

inline std::pair<int, double> cfl_substeps(const ParticleSet& ps, const LrParams& params) {
  double vmax2 = 0.0;
  for (const auto& v : ps.v) vmax2 = std::max(vmax2, v.squaredNorm());
  const int n = substeps_for_speed(std::sqrt(vmax2), ps.radius, params);
  return {n, params.dt_lr / n};
}

// ---------------------------------------------------------------------------
// Contacts and friction

/// Pairs that never interact: two infinite masses, or two particles of the
/// same rigid body.
inline bool excluded_pair(const ParticleSet& ps, std::uint32_t i, std::uint32_t j) {
  if (ps.inv_mass[i] == 0.0 && ps.inv_mass[j] == 0.0) return true;
  return ps.phase[i].is_rigid() && ps.phase[j].is_rigid() && ps.phase[i].body == ps.phase[j].body;
}

/// Deterministic separation axis for coincident centres: +x, tilted by the
/// pair indices.
inline Vec3 coincident_direction(std::uint32_t i, std::uint32_t j) {
  return Vec3(1.0, 1e-3 * double((i + j) % 7), 1e-3 * double((31u * i + j) % 5)).normalized();
}

/// Pairs (i < j) whose predicted centres are strictly closer than 2r.
inline std::vector<ContactPair> generate_contacts(const ParticleSet& ps, const NeighborGrid& grid) {
  const double two_r = 2.0 * ps.radius;
  const double limit2 = two_r * two_r;
  std::vector<ContactPair> out;
  std::vector<std::uint32_t> partners;
  for (std::uint32_t i = 0; i < ps.size(); ++i) {
    partners.clear();
    grid.for_each_within(ps.x_pred[i], two_r, [&](std::uint32_t j, double) {
      if (j > i) partners.push_back(j);
    });
    std::sort(partners.begin(), partners.end());
    for (auto j : partners) {
      const Vec3 xij = ps.x_pred[j] - ps.x_pred[i];
      if (xij.squaredNorm() >= limit2 || excluded_pair(ps, i, j)) continue;
      out.push_back({i, j, xij, xij.norm() < kCoincident});
    }
  }
  return out;
}

/// Separating displacement for centres xi, xj with inverse masses wi, wj:
/// each side moves along x_ij by its mass share of the overlap 2r - |x_ij|.
inline PairDelta contact_deltas(const Vec3& xi, const Vec3& xj, double wi, double wj, double r,
                                std::uint32_t i = 0, std::uint32_t j = 0) {
  const Vec3 xij = xj - xi;
  const double d = xij.norm();
  const double overlap = 2.0 * r - d;
  if (overlap <= 0.0) return {};
  const double wsum = wi + wj;
  if (!(wsum > 0.0)) throw ParameterError("contact between two infinite masses");
  const Vec3 n = d < kCoincident ? coincident_direction(i, j) : Vec3(xij / d);
  return {-(wi / wsum) * overlap * n, (wj / wsum) * overlap * n};
}

/// Contact deltas for a pair from the current predicted positions and
/// scaled inverse masses.
inline PairDelta solve_contact(const ContactPair& pair, const ParticleSet& ps) {
  return contact_deltas(ps.x_pred[pair.i], ps.x_pred[pair.j], ps.scaled_inv_mass[pair.i],
                        ps.scaled_inv_mass[pair.j], ps.radius, pair.i, pair.j);
}

/// Kinetic scale factor min(2 r mu_k / |dx_perp|, 1).
inline double min_fric(double r, double mu_k, double tangential) {
  if (tangential <= 0.0) return 1.0;
  return std::min(2.0 * r * mu_k / tangential, 1.0);
}

/// Frictional deltas with an explicit friction length L: the tangential
/// part of disp_i - disp_j (w.r.t. x_ij) is cancelled outright below L mu_s
/// and scaled by min(L mu_k / |dx_perp|, 1) above it.
inline PairDelta friction_deltas_len(const Vec3& xij, const Vec3& disp_i, const Vec3& disp_j, double wi,
                                     double wj, double length, double mu_s, double mu_k) {
  const double d2 = xij.squaredNorm();
  if (d2 < kCoincident * kCoincident) return {};
  const double wsum = wi + wj;
  if (!(wsum > 0.0)) return {};
  const Vec3 rel = disp_i - disp_j;
  const Vec3 perp = rel - (rel.dot(xij) / d2) * xij;
  const double len = perp.norm();
  if (len == 0.0) return {};
  double scale = 1.0;
  if (!(len < length * mu_s)) scale = std::min(length * mu_k / len, 1.0);
  return {-(wi / wsum) * scale * perp, (wj / wsum) * scale * perp};
}

/// Frictional deltas from the relative displacement of the pair.
///
/// `disp_i`, `disp_j` are how far each particle has moved from its
/// start-of-step position once the contact correction is included. The
/// tangential part of disp_i - disp_j (w.r.t. x_ij) is cancelled outright
/// below the static threshold 2r mu_s, and scaled by min_fric above it.
inline PairDelta friction_deltas(const Vec3& xij, const Vec3& disp_i, const Vec3& disp_j, double wi,
                                 double wj, double r, double mu_s, double mu_k) {
  return friction_deltas_len(xij, disp_i, disp_j, wi, wj, 2.0 * r, mu_s, mu_k);
}

inline PairDelta solve_friction(const ContactPair& pair, const ParticleSet& ps, const Vec3& disp_i,
                                const Vec3& disp_j) {
  const auto i = pair.i, j = pair.j;
  return friction_deltas(ps.x_pred[j] - ps.x_pred[i], disp_i, disp_j, ps.scaled_inv_mass[i],
                         ps.scaled_inv_mass[j], ps.radius, cross_friction(ps.mu_s[i], ps.mu_s[j]),
                         cross_friction(ps.mu_k[i], ps.mu_k[j]));
}

/// x_pred_i += dx_sum_i / n_i (and x_i too when stabilizing) for every
/// particle with finite mass that received a constraint; then zeroes the
/// accumulators.
inline void apply_averaged(ConstraintBatch& batch, ParticleSet& ps, bool also_to_x) {
  const auto n = static_cast<std::int64_t>(ps.size());
#pragma omp parallel for schedule(static) if (n > 4096)
  for (std::int64_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    if (batch.count[i] > 0 && ps.inv_mass[i] > 0.0) {
      const Vec3 d = batch.dx_sum[i] / double(batch.count[i]);
      ps.x_pred[i] += d;
      if (also_to_x) ps.x[i] += d;
    }
    batch.dx_sum[i].setZero();
    batch.count[i] = 0;
  }
}

// ---------------------------------------------------------------------------
// Time step

struct StepStats {
  int substeps = 0;
  std::size_t contacts = 0;
  std::size_t stabilization_contacts = 0;
};

/// One LR time step with reusable scratch buffers.
///
/// Per CFL substep: predict, drive kinematic bodies, scale masses, run the
/// stabilization passes (contact only, evaluated on start-of-step positions
/// and written to both x and x_pred), then the main iterations (fused
/// contact + friction per pair, shape matching per dynamic body), each
/// averaged per particle. Velocities are then (x_pred - x) / dt.
///
/// Every constraint in an iteration reads the same x_pred snapshot; deltas
/// are stored per constraint and summed per particle in a fixed order, so
/// results do not depend on the number of threads.
class LrSolver {
 public:
  StepStats step(ParticleSet& ps, std::span<RigidBody> bodies, const LrParams& params) {
    StepStats stats;
    if (ps.empty()) {
      for (auto& b : bodies) b.target.reset();
      return stats;
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!is_finite(ps.x[i]) || !is_finite(ps.v[i])) throw SimulationError("non-finite LR state", i);
    }
    double vmax2 = 0.0;
    for (const auto& v : ps.v) vmax2 = std::max(vmax2, v.squaredNorm());
    // Kinematic bodies move to their targets over this step; include that speed.
    std::vector<RigidTransform> start(bodies.size()), goal(bodies.size());
    for (std::size_t b = 0; b < bodies.size(); ++b) {
      start[b] = bodies[b].pose();
      goal[b] = bodies[b].target.value_or(start[b]);
      if (bodies[b].is_kinematic()) {
        for (std::size_t k = 0; k < bodies[b].indices.size(); ++k) {
          const Vec3 travel = goal[b].apply(bodies[b].rest_offsets[k]) - ps.x[bodies[b].indices[k]];
          vmax2 = std::max(vmax2, travel.squaredNorm() / (params.dt_lr * params.dt_lr));
        }
      }
    }
    const int n_sub = substeps_for_speed(std::sqrt(vmax2), ps.radius, params);
    const double dt = params.dt_lr / n_sub;
    stats.substeps = n_sub;

    for (int s = 1; s <= n_sub; ++s) {
      const double f = double(s) / n_sub;
      for (std::size_t b = 0; b < bodies.size(); ++b) {
        if (!bodies[b].is_kinematic()) continue;
        const Eigen::Quaterniond q0(start[b].rotation), q1(goal[b].rotation);
        pose_scratch_.rotation = q0.slerp(f, q1).normalized().toRotationMatrix();
        pose_scratch_.translation = (1.0 - f) * start[b].translation + f * goal[b].translation;
        bodies[b].target = pose_scratch_;
      }
      substep(ps, bodies, params, dt, stats);
    }
    for (auto& b : bodies) b.target.reset();
    return stats;
  }

  /// Contacts used in the most recent main solve.
  const std::vector<ContactPair>& contacts() const { return batch_.contacts; }

 private:
  void substep(ParticleSet& ps, std::span<RigidBody> bodies, const LrParams& params, double dt,
               StepStats& stats) {
    const std::size_t n = ps.size();
    const double r = ps.radius;
    predict(ps, params.gravity, dt);
    for (auto& body : bodies) {
      if (body.is_kinematic()) drive_kinematic(body, ps, body.target.value_or(body.pose()), dt);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_finite(ps.x_pred[i])) throw SimulationError("non-finite predicted position", i);
    }
    apply_mass_scaling(ps, params);
    batch_.reset(n);

    if (params.stabilization_iterations > 0) {
      const NeighborGrid grid(ps.x, 3.0 * r);
      stab_pairs_.clear();
      collect_pairs(ps, ps.x, grid, stab_pairs_);
      stats.stabilization_contacts = std::max(stats.stabilization_contacts, stab_pairs_.size());
      build_adjacency(stab_pairs_, {}, n);
      for (int it = 0; it < params.stabilization_iterations; ++it) {
        eval_pairs(ps, stab_pairs_, /*stabilize=*/true, params.deterministic);
        gather(ps, params.deterministic);
        apply_averaged(batch_, ps, /*also_to_x=*/true);
      }
    }

    const NeighborGrid grid(ps.x_pred, 3.0 * r);
    batch_.contacts = generate_contacts(ps, grid);
    stats.contacts = std::max(stats.contacts, batch_.contacts.size());
    build_adjacency(batch_.contacts, bodies, n);
    for (int it = 0; it < params.solver_iterations; ++it) {
      eval_pairs(ps, batch_.contacts, /*stabilize=*/false, params.deterministic, params.friction_length);
      match_bodies(ps, bodies, params.deterministic);
      gather(ps, params.deterministic);
      apply_averaged(batch_, ps, /*also_to_x=*/false);
    }

    const double inv_dt = 1.0 / dt;
    for (std::size_t i = 0; i < n; ++i) {
      if (ps.phase[i].is_boundary()) continue;
      ps.v[i] = (ps.x_pred[i] - ps.x[i]) * inv_dt;
      ps.x[i] = ps.x_pred[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_finite(ps.x[i]) || !is_finite(ps.v[i])) {
        throw SimulationError("non-finite state after LR substep", i);
      }
    }
    for (auto& body : bodies) {
      if (body.is_dynamic()) {
        Vec3 c = Vec3::Zero();
        for (auto i : body.indices) c += ps.x[i];
        body.centroid = c / double(body.indices.size());
      }
    }
  }

  // Candidate pairs closer than 2r measured on `pos`.
  static void collect_pairs(const ParticleSet& ps, const std::vector<Vec3>& pos, const NeighborGrid& grid,
                            std::vector<ContactPair>& out) {
    const double two_r = 2.0 * ps.radius;
    std::vector<std::uint32_t> partners;
    for (std::uint32_t i = 0; i < ps.size(); ++i) {
      partners.clear();
      grid.for_each_within(pos[i], two_r, [&](std::uint32_t j, double d2) {
        if (j > i && d2 < two_r * two_r) partners.push_back(j);
      });
      std::sort(partners.begin(), partners.end());
      for (auto j : partners) {
        if (excluded_pair(ps, i, j)) continue;
        const Vec3 xij = pos[j] - pos[i];
        out.push_back({i, j, xij, xij.norm() < kCoincident});
      }
    }
  }

  // CSR map particle -> (constraint slot). Slots [0, 2P) are pair sides,
  // slots from 2P on are shape-matching deltas of dynamic bodies.
  void build_adjacency(const std::vector<ContactPair>& pairs, std::span<const RigidBody> bodies,
                       std::size_t n) {
    adj_start_.assign(n + 1, 0);
    for (const auto& p : pairs) {
      ++adj_start_[p.i + 1];
      ++adj_start_[p.j + 1];
    }
    body_slot_.assign(bodies.size(), 0);
    std::size_t slot = 2 * pairs.size();
    for (std::size_t b = 0; b < bodies.size(); ++b) {
      body_slot_[b] = slot;
      if (!bodies[b].is_dynamic()) continue;
      for (auto i : bodies[b].indices) ++adj_start_[i + 1];
      slot += bodies[b].indices.size();
    }
    for (std::size_t i = 0; i < n; ++i) adj_start_[i + 1] += adj_start_[i];
    adj_.resize(adj_start_[n]);
    std::vector<std::uint32_t> fill(adj_start_.begin(), adj_start_.end() - 1);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      adj_[fill[pairs[p].i]++] = static_cast<std::uint32_t>(2 * p);
      adj_[fill[pairs[p].j]++] = static_cast<std::uint32_t>(2 * p + 1);
    }
    for (std::size_t b = 0; b < bodies.size(); ++b) {
      if (!bodies[b].is_dynamic()) continue;
      for (std::size_t k = 0; k < bodies[b].indices.size(); ++k) {
        adj_[fill[bodies[b].indices[k]]++] = static_cast<std::uint32_t>(body_slot_[b] + k);
      }
    }
    slot_delta_.assign(slot, Vec3::Zero());
    slot_active_.assign(slot, 0);
  }

  void eval_pairs(const ParticleSet& ps, const std::vector<ContactPair>& pairs, bool stabilize,
                  bool deterministic, FrictionLength friction_length = FrictionLength::Diameter) {
    const double r = ps.radius;
    const double limit2 = 4.0 * r * r;
    const auto np = static_cast<std::int64_t>(pairs.size());
#pragma omp parallel for schedule(static) if (!deterministic && np > 2048)
    for (std::int64_t pp = 0; pp < np; ++pp) {
      const auto p = static_cast<std::size_t>(pp);
      const auto i = pairs[p].i, j = pairs[p].j;
      const std::vector<Vec3>& pos = stabilize ? ps.x : ps.x_pred;
      const Vec3 xij = pos[j] - pos[i];
      if (xij.squaredNorm() >= limit2) {
        slot_active_[2 * p] = slot_active_[2 * p + 1] = 0;
        continue;
      }
      const double wi = ps.scaled_inv_mass[i], wj = ps.scaled_inv_mass[j];
      PairDelta d = contact_deltas(pos[i], pos[j], wi, wj, r, i, j);
      if (!stabilize) {
        const Vec3 disp_i = ps.x_pred[i] + d.di - ps.x[i];
        const Vec3 disp_j = ps.x_pred[j] + d.dj - ps.x[j];
        const double length =
            friction_length == FrictionLength::Diameter ? 2.0 * r : std::max(2.0 * r - xij.norm(), 0.0);
        const PairDelta f = friction_deltas_len(xij, disp_i, disp_j, wi, wj, length,
                                                cross_friction(ps.mu_s[i], ps.mu_s[j]),
                                                cross_friction(ps.mu_k[i], ps.mu_k[j]));
        d.di += f.di;
        d.dj += f.dj;
      }
      slot_delta_[2 * p] = d.di;
      slot_delta_[2 * p + 1] = d.dj;
      slot_active_[2 * p] = slot_active_[2 * p + 1] = 1;
    }
  }

  void match_bodies(const ParticleSet& ps, std::span<RigidBody> bodies, bool deterministic) {
    const auto nb = static_cast<std::int64_t>(bodies.size());
#pragma omp parallel for schedule(dynamic) if (!deterministic && nb > 1)
    for (std::int64_t bb = 0; bb < nb; ++bb) {
      auto& body = bodies[static_cast<std::size_t>(bb)];
      if (!body.is_dynamic()) continue;
      std::vector<Vec3> deltas;
      shape_match(body, ps, deltas);
      const std::size_t base = body_slot_[static_cast<std::size_t>(bb)];
      for (std::size_t k = 0; k < deltas.size(); ++k) {
        slot_delta_[base + k] = deltas[k];
        slot_active_[base + k] = 1;
      }
    }
  }

  void gather(const ParticleSet& ps, bool deterministic) {
    const auto n = static_cast<std::int64_t>(ps.size());
#pragma omp parallel for schedule(static) if (!deterministic && n > 4096)
    for (std::int64_t ii = 0; ii < n; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      Vec3 sum = Vec3::Zero();
      std::int32_t count = 0;
      for (std::size_t k = adj_start_[i]; k < adj_start_[i + 1]; ++k) {
        const auto slot = adj_[k];
        if (!slot_active_[slot]) continue;
        sum += slot_delta_[slot];
        ++count;
      }
      batch_.dx_sum[i] = sum;
      batch_.count[i] = count;
    }
  }

  ConstraintBatch batch_;
  std::vector<ContactPair> stab_pairs_;
  std::vector<std::uint32_t> adj_start_;
  std::vector<std::uint32_t> adj_;
  std::vector<std::size_t> body_slot_;
  std::vector<Vec3> slot_delta_;
  std::vector<std::uint8_t> slot_active_;
  RigidTransform pose_scratch_;
};

/// Convenience wrapper with throwaway scratch buffers.
inline StepStats step(ParticleSet& ps, std::span<RigidBody> bodies, const LrParams& params) {
  LrSolver solver;
  return solver.step(ps, bodies, params);
}

}  // namespace granular
