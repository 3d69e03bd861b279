#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "granular/mesh.hpp"
#include "granular/mesh_query.hpp"
#include "granular/rng.hpp"

namespace granular {

struct SamplingOptions {
  int candidates_per_cell = 30;
  // Surface sampling keeps samples at least 2 r * coverage_slack apart.
  double coverage_slack = 0.9;
};

/// Dense occupancy grid over an axis-aligned box. Cells are indexed x-major
/// (x outermost) and hold at most one accepted sample.
class SamplingGrid {
 public:
  SamplingGrid(const Vec3& origin, const Vec3& extent, double cell_side)
      : origin_(origin), side_(cell_side) {
    std::size_t total = 1;
    for (int a = 0; a < 3; ++a) {
      dims_[a] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(extent[a] / side_)));
      total *= static_cast<std::size_t>(dims_[a]);
    }
    if (total > (std::size_t{1} << 31)) {
      throw GeometryError("sampling grid too large: " + std::to_string(total) + " cells");
    }
    occupancy_.assign(total, -1);
  }

  double cell_side() const { return side_; }
  const std::array<std::int64_t, 3>& dims() const { return dims_; }
  std::size_t cell_count() const { return occupancy_.size(); }

  std::array<std::int64_t, 3> cell_of(const Vec3& p) const {
    std::array<std::int64_t, 3> c{};
    for (int a = 0; a < 3; ++a) {
      c[a] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor((p[a] - origin_[a]) / side_)),
                                      0, dims_[a] - 1);
    }
    return c;
  }

  std::size_t linear(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return static_cast<std::size_t>((i * dims_[1] + j) * dims_[2] + k);
  }
  std::size_t linear(const std::array<std::int64_t, 3>& c) const { return linear(c[0], c[1], c[2]); }

  Vec3 cell_min(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return origin_ + side_ * Vec3(double(i), double(j), double(k));
  }

  std::int32_t occupant(std::size_t cell) const { return occupancy_[cell]; }
  void occupy(std::size_t cell, std::int32_t sample) { occupancy_[cell] = sample; }

  /// True if no stored sample lies closer than `min_dist` to p. Scans every
  /// cell whose nearest point could be within min_dist.
  bool is_free(const Vec3& p, double min_dist, const std::vector<Vec3>& samples) const {
    const auto c = cell_of(p);
    const auto ring = static_cast<std::int64_t>(std::ceil(min_dist / side_));
    const double min_d2 = min_dist * min_dist * (1.0 + 1e-12);
    for (std::int64_t di = -ring; di <= ring; ++di) {
      const std::int64_t i = c[0] + di;
      if (i < 0 || i >= dims_[0]) continue;
      for (std::int64_t dj = -ring; dj <= ring; ++dj) {
        const std::int64_t j = c[1] + dj;
        if (j < 0 || j >= dims_[1]) continue;
        for (std::int64_t dk = -ring; dk <= ring; ++dk) {
          const std::int64_t k = c[2] + dk;
          if (k < 0 || k >= dims_[2]) continue;
          const auto gap = [](std::int64_t d) { return double(std::max<std::int64_t>(std::abs(d) - 1, 0)); };
          const double g2 = (gap(di) * gap(di) + gap(dj) * gap(dj) + gap(dk) * gap(dk)) * side_ * side_;
          if (g2 >= min_d2) continue;
          const std::int32_t s = occupancy_[linear(i, j, k)];
          if (s >= 0 && (samples[static_cast<std::size_t>(s)] - p).squaredNorm() < min_d2) return false;
        }
      }
    }
    return true;
  }

 private:
  Vec3 origin_;
  double side_;
  std::array<std::int64_t, 3> dims_{};
  std::vector<std::int32_t> occupancy_;
};

namespace detail {

// Marks cells whose box may intersect a triangle: within the triangle's AABB
// and no farther from its plane than half a cell diagonal.
inline void mark_surface_cells(const TriangleMesh& mesh, const SamplingGrid& grid,
                               std::vector<std::uint8_t>& mark) {
  const double s = grid.cell_side();
  const double half_diag = 0.5 * std::sqrt(3.0) * s;
  for (const auto& tri : mesh.triangles) {
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    Vec3 n = (b - a).cross(c - a);
    const double len = n.norm();
    if (len > 0.0) n /= len;
    const auto lo = grid.cell_of(a.cwiseMin(b).cwiseMin(c));
    const auto hi = grid.cell_of(a.cwiseMax(b).cwiseMax(c));
    for (auto i = lo[0]; i <= hi[0]; ++i) {
      for (auto j = lo[1]; j <= hi[1]; ++j) {
        for (auto k = lo[2]; k <= hi[2]; ++k) {
          const Vec3 centre = grid.cell_min(i, j, k) + Vec3::Constant(0.5 * s);
          if (len > 0.0 && std::abs(n.dot(centre - a)) > half_diag) continue;
          mark[grid.linear(i, j, k)] = 1;
        }
      }
    }
  }
}

}  // namespace detail

/// Randomized volume sampling of the union of closed meshes.
///
/// The bounding box is split into cells of side 2r/sqrt(3). Cells are visited
/// in x-major order; each draws up to `candidates_per_cell` uniform candidates
/// inside the cell and keeps the first one that is inside the solid and at
/// least 2r from every accepted sample. Deterministic for a fixed seed.
inline std::vector<Vec3> sample_volume(std::span<const TriangleMesh> parts, double r,
                                       std::uint64_t seed, const SamplingOptions& opts = {}) {
  if (!(r > 0.0)) throw ParameterError("sampling radius must be positive");
  for (const auto& m : parts) {
    if (m.empty()) throw GeometryError("volume sampling requires a non-empty mesh");
    m.validate_indices();
    if (!m.is_closed()) throw GeometryError("volume sampling requires a closed mesh");
  }
  std::vector<Vec3> samples;
  Aabb box;
  std::vector<const TriangleMesh*> solid_parts;
  for (const auto& m : parts) {
    const Aabb b = m.bounds();
    if (!((b.extent().array() > 0.0).all()) || std::abs(m.signed_volume()) <= 0.0) continue;
    solid_parts.push_back(&m);
    box.extend(b.lo);
    box.extend(b.hi);
  }
  if (solid_parts.empty()) return samples;

  std::vector<TriangleMesh> kept;
  kept.reserve(solid_parts.size());
  for (auto* m : solid_parts) kept.push_back(*m);
  const SolidUnion solid(kept);

  const double side = 2.0 * r / std::sqrt(3.0);
  SamplingGrid grid(box.lo, box.extent(), side);
  std::vector<std::uint8_t> near_surface(grid.cell_count(), 0);
  for (const auto& m : kept) detail::mark_surface_cells(m, grid, near_surface);

  const auto& dims = grid.dims();
  const double min_dist = 2.0 * r;
  for (std::int64_t i = 0; i < dims[0]; ++i) {
    for (std::int64_t j = 0; j < dims[1]; ++j) {
      for (std::int64_t k = 0; k < dims[2]; ++k) {
        const std::size_t cell = grid.linear(i, j, k);
        const Vec3 lo = grid.cell_min(i, j, k);
        const bool boundary = near_surface[cell] != 0;
        if (!boundary && !solid.contains(lo + Vec3::Constant(0.5 * side))) continue;
        Rng rng(seed, cell);
        for (int c = 0; c < opts.candidates_per_cell; ++c) {
          const Vec3 p = lo + side * Vec3(rng.uniform(), rng.uniform(), rng.uniform());
          if (boundary && !solid.contains(p)) continue;
          if (!grid.is_free(p, min_dist, samples)) continue;
          grid.occupy(cell, static_cast<std::int32_t>(samples.size()));
          samples.push_back(p);
          break;
        }
      }
    }
  }
  return samples;
}

inline std::vector<Vec3> sample_volume(const TriangleMesh& mesh, double r, std::uint64_t seed,
                                       const SamplingOptions& opts = {}) {
  return sample_volume(std::span<const TriangleMesh>(&mesh, 1), r, seed, opts);
}

/// Uniform point on triangle t.
inline Vec3 point_on_triangle(const TriangleMesh& mesh, std::size_t t, Rng& rng) {
  const auto& tri = mesh.triangles[t];
  const double su = std::sqrt(rng.uniform());
  const double v = rng.uniform();
  const double wa = 1.0 - su, wb = su * (1.0 - v), wc = su * v;
  return wa * mesh.vertices[tri[0]] + wb * mesh.vertices[tri[1]] + wc * mesh.vertices[tri[2]];
}

/// Randomized surface sampling (boundaries only need their skin).
///
/// Candidates are scattered on every triangle in proportion to its area,
/// bucketed into cells of side 2r*beta/sqrt(3) and accepted in x-major cell
/// order at a minimum spacing of 2r*beta. A final pass adds the centroid of
/// any triangle with no sample within 2r, so small or sliver triangles are
/// never left uncovered.
inline std::vector<Vec3> sample_surface(const TriangleMesh& mesh, double r, std::uint64_t seed,
                                        const SamplingOptions& opts = {}) {
  if (!(r > 0.0)) throw ParameterError("sampling radius must be positive");
  if (mesh.empty()) throw GeometryError("surface sampling requires a non-empty mesh");
  mesh.validate_indices();

  const double min_dist = 2.0 * r * opts.coverage_slack;
  const double side = min_dist / std::sqrt(3.0);
  const Aabb box = mesh.bounds();
  const Vec3 origin = box.lo - Vec3::Constant(side);
  SamplingGrid grid(origin, box.extent() + Vec3::Constant(2.0 * side), side);

  struct Candidate {
    std::size_t cell;
    Vec3 p;
  };
  std::vector<Candidate> candidates;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const double area = mesh.area(t);
    const auto count = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::ceil(opts.candidates_per_cell * area / (side * side))));
    Rng rng(seed, t);
    for (std::int64_t c = 0; c < count; ++c) {
      const Vec3 p = point_on_triangle(mesh, t, rng);
      candidates.push_back({grid.linear(grid.cell_of(p)), p});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.cell < b.cell; });

  std::vector<Vec3> samples;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const Candidate& cand = candidates[k];
    if (grid.occupant(cand.cell) >= 0) continue;
    if (!grid.is_free(cand.p, min_dist, samples)) continue;
    grid.occupy(cand.cell, static_cast<std::int32_t>(samples.size()));
    samples.push_back(cand.p);
  }

  // Coverage: no sample within 2r of a centroid implies its cell is empty
  // (the cell diagonal is min_dist <= 2r), so the centroid can be taken.
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3 centroid = (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
    if (grid.is_free(centroid, 2.0 * r, samples)) {
      grid.occupy(grid.linear(grid.cell_of(centroid)), static_cast<std::int32_t>(samples.size()));
      samples.push_back(centroid);
    }
  }
  return samples;
}

}  // namespace granular
