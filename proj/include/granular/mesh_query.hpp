#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "granular/mesh.hpp"

namespace granular {

/// Strict point-in-solid test for a closed triangle mesh by ray parity.
///
/// The common case casts a ray along +x and only visits triangles binned
/// under the query's (y, z) coordinates. When that ray grazes an edge or
/// vertex the query is re-cast along fixed oblique directions against all
/// triangles. Points on the surface are reported as outside.
class InsideTester {
 public:
  explicit InsideTester(const TriangleMesh& mesh) : mesh_(&mesh) {
    if (mesh.empty()) throw GeometryError("inside test on an empty mesh");
    mesh.validate_indices();
    if (!mesh.is_closed()) throw GeometryError("inside test requires a closed mesh");
    box_ = mesh.bounds();
    const Vec3 ext = box_.extent();
    scale_ = std::max(ext.norm(), 1e-300);

    const std::size_t n = mesh.triangles.size();
    bins_ = static_cast<int>(std::clamp<double>(std::ceil(std::sqrt(double(n)) / 2.0), 1.0, 128.0));
    bin_size_y_ = std::max(ext.y(), 1e-300) / bins_;
    bin_size_z_ = std::max(ext.z(), 1e-300) / bins_;
    std::vector<std::vector<std::uint32_t>> cells(static_cast<std::size_t>(bins_) * bins_);
    for (std::uint32_t t = 0; t < n; ++t) {
      const auto& tri = mesh.triangles[t];
      double ylo = INFINITY, yhi = -INFINITY, zlo = INFINITY, zhi = -INFINITY;
      for (auto idx : tri) {
        ylo = std::min(ylo, mesh.vertices[idx].y());
        yhi = std::max(yhi, mesh.vertices[idx].y());
        zlo = std::min(zlo, mesh.vertices[idx].z());
        zhi = std::max(zhi, mesh.vertices[idx].z());
      }
      const int y0 = bin_y(ylo), y1 = bin_y(yhi), z0 = bin_z(zlo), z1 = bin_z(zhi);
      for (int by = y0; by <= y1; ++by) {
        for (int bz = z0; bz <= z1; ++bz) cells[static_cast<std::size_t>(by) * bins_ + bz].push_back(t);
      }
    }
    bin_start_.assign(cells.size() + 1, 0);
    for (std::size_t c = 0; c < cells.size(); ++c) bin_start_[c + 1] = bin_start_[c] + cells[c].size();
    bin_tris_.reserve(bin_start_.back());
    for (const auto& c : cells) bin_tris_.insert(bin_tris_.end(), c.begin(), c.end());
  }

  const Aabb& bounds() const { return box_; }

  bool contains(const Vec3& p) const {
    if (!(p.x() > box_.lo.x() && p.x() < box_.hi.x() && p.y() > box_.lo.y() &&
          p.y() < box_.hi.y() && p.z() > box_.lo.z() && p.z() < box_.hi.z())) {
      return false;
    }
    if (auto r = cast_axis(p)) return *r;
    static constexpr std::array<std::array<double, 3>, 4> kDirections{{
        {0.5773502691896258, 0.5773502691896257, 0.5773502691896258},
        {-0.3401020514433644, 0.8012305745302066, 0.4923659639173309},
        {0.1237745964185765, -0.4156244738925326, 0.9010739534215023},
        {-0.7302967433402214, -0.1825741858350554, -0.6581793373108297},
    }};
    for (const auto& d : kDirections) {
      if (auto r = cast_general(p, Vec3(d[0], d[1], d[2]))) return *r;
    }
    // Every direction grazed something; only happens on the surface itself.
    return false;
  }

 private:
  int bin_y(double y) const {
    return std::clamp(static_cast<int>((y - box_.lo.y()) / bin_size_y_), 0, bins_ - 1);
  }
  int bin_z(double z) const {
    return std::clamp(static_cast<int>((z - box_.lo.z()) / bin_size_z_), 0, bins_ - 1);
  }

  // nullopt when the ray grazes an edge or vertex.
  std::optional<bool> cast_axis(const Vec3& p) const {
    const std::size_t cell = static_cast<std::size_t>(bin_y(p.y())) * bins_ + bin_z(p.z());
    int crossings = 0;
    for (std::size_t k = bin_start_[cell]; k < bin_start_[cell + 1]; ++k) {
      const auto& tri = mesh_->triangles[bin_tris_[k]];
      const Vec3& a = mesh_->vertices[tri[0]];
      const Vec3& b = mesh_->vertices[tri[1]];
      const Vec3& c = mesh_->vertices[tri[2]];
      auto orient = [&](const Vec3& u, const Vec3& v) {
        return (v.y() - u.y()) * (p.z() - u.z()) - (v.z() - u.z()) * (p.y() - u.y());
      };
      const double e0 = orient(b, c), e1 = orient(c, a), e2 = orient(a, b);
      const double area = e0 + e1 + e2;
      if (area == 0.0) continue;  // parallel to the ray
      const double s0 = e0 / area, s1 = e1 / area, s2 = e2 / area;
      constexpr double eps = 1e-12;
      if (s0 < -eps || s1 < -eps || s2 < -eps) continue;
      if (s0 <= eps || s1 <= eps || s2 <= eps) return std::nullopt;
      const double hit = s0 * a.x() + s1 * b.x() + s2 * c.x();
      if (std::abs(hit - p.x()) <= 1e-14 * scale_) return false;  // on the surface
      if (hit > p.x()) ++crossings;
    }
    return (crossings & 1) != 0;
  }

  std::optional<bool> cast_general(const Vec3& p, const Vec3& dir) const {
    int crossings = 0;
    for (const auto& tri : mesh_->triangles) {
      const Vec3& a = mesh_->vertices[tri[0]];
      const Vec3 e1 = mesh_->vertices[tri[1]] - a;
      const Vec3 e2 = mesh_->vertices[tri[2]] - a;
      const Vec3 h = dir.cross(e2);
      const double det = e1.dot(h);
      if (std::abs(det) < 1e-300) continue;
      const Vec3 s = p - a;
      const double u = s.dot(h) / det;
      const Vec3 q = s.cross(e1);
      const double v = dir.dot(q) / det;
      constexpr double eps = 1e-12;
      if (u < -eps || v < -eps || u + v > 1.0 + eps) continue;
      const double t = e2.dot(q) / det;
      if (std::abs(t) <= 1e-14 * scale_) return false;
      if (t < 0.0) continue;
      if (u <= eps || v <= eps || u + v >= 1.0 - eps) return std::nullopt;
      ++crossings;
    }
    return (crossings & 1) != 0;
  }

  const TriangleMesh* mesh_;
  Aabb box_;
  double scale_ = 1.0;
  int bins_ = 1;
  double bin_size_y_ = 1.0, bin_size_z_ = 1.0;
  std::vector<std::size_t> bin_start_;
  std::vector<std::uint32_t> bin_tris_;
};

/// True iff p is strictly inside the closed mesh.
inline bool point_in_mesh(const Vec3& p, const TriangleMesh& mesh) {
  return InsideTester(mesh).contains(p);
}

/// Union of closed meshes; a point is inside if any part contains it.
class SolidUnion {
 public:
  explicit SolidUnion(std::span<const TriangleMesh> parts) {
    if (parts.empty()) throw GeometryError("solid has no parts");
    testers_.reserve(parts.size());
    for (const auto& m : parts) {
      testers_.emplace_back(m);
      box_.extend(testers_.back().bounds().lo);
      box_.extend(testers_.back().bounds().hi);
    }
  }

  const Aabb& bounds() const { return box_; }

  bool contains(const Vec3& p) const {
    for (const auto& t : testers_) {
      if (t.contains(p)) return true;
    }
    return false;
  }

 private:
  std::vector<InsideTester> testers_;
  Aabb box_;
};

}  // namespace granular
