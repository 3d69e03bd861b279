#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "granular/core.hpp"

namespace granular {

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  bool valid() const { return (hi.array() >= lo.array()).all(); }
  Vec3 extent() const { return valid() ? Vec3(hi - lo) : Vec3::Zero(); }
};

struct TriangleMesh {
  using Triangle = std::array<std::uint32_t, 3>;

  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  bool empty() const { return triangles.empty(); }

  Aabb bounds() const {
    Aabb box;
    for (const auto& v : vertices) box.extend(v);
    return box;
  }

  void validate_indices() const {
    for (const auto& t : triangles) {
      for (auto idx : t) {
        if (idx >= vertices.size()) throw GeometryError("triangle index out of range");
      }
    }
  }

  /// Every directed edge appears once and its reverse once: watertight and
  /// consistently oriented.
  bool is_closed() const {
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
    for (const auto& t : triangles) {
      for (int k = 0; k < 3; ++k) {
        const std::uint32_t a = t[k], b = t[(k + 1) % 3];
        if (a == b) continue;
        if (++edges[{a, b}] > 1) return false;
      }
    }
    if (edges.empty()) return false;
    for (const auto& [e, count] : edges) {
      auto it = edges.find({e.second, e.first});
      if (it == edges.end() || it->second != 1) return false;
    }
    return true;
  }

  double area(std::size_t t) const {
    const auto& tri = triangles[t];
    return 0.5 * (vertices[tri[1]] - vertices[tri[0]])
                     .cross(vertices[tri[2]] - vertices[tri[0]])
                     .norm();
  }

  /// Signed enclosed volume (positive for outward-facing winding).
  double signed_volume() const {
    double vol = 0.0;
    for (const auto& t : triangles) {
      vol += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]]));
    }
    return vol / 6.0;
  }

  void transform(const Mat3& linear, const Vec3& translation) {
    for (auto& v : vertices) v = linear * v + translation;
  }

  void append(const TriangleMesh& other) {
    const auto base = static_cast<std::uint32_t>(vertices.size());
    vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
    for (const auto& t : other.triangles) {
      triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
    }
  }

  /// Merge bit-identical vertices (STL stores each triangle separately).
  void weld() {
    std::map<std::array<double, 3>, std::uint32_t> seen;
    std::vector<std::uint32_t> remap(vertices.size());
    std::vector<Vec3> unique;
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      const std::array<double, 3> key{vertices[i].x(), vertices[i].y(), vertices[i].z()};
      auto [it, inserted] = seen.emplace(key, static_cast<std::uint32_t>(unique.size()));
      if (inserted) unique.push_back(vertices[i]);
      remap[i] = it->second;
    }
    for (auto& t : triangles) {
      for (auto& idx : t) idx = remap[idx];
    }
    vertices = std::move(unique);
  }
};

namespace shapes {

/// Closed axis-aligned box, outward winding.
inline TriangleMesh box(const Vec3& lo, const Vec3& hi) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(),
                            (i & 4) ? hi.z() : lo.z());
  }
  // Each face as two triangles, counter-clockwise seen from outside.
  const std::uint32_t quads[6][4] = {
      {0, 4, 6, 2},  // -x
      {1, 3, 7, 5},  // +x
      {0, 1, 5, 4},  // -y
      {2, 6, 7, 3},  // +y
      {0, 2, 3, 1},  // -z
      {4, 5, 7, 6},  // +z
  };
  for (const auto& q : quads) {
    m.triangles.push_back({q[0], q[1], q[2]});
    m.triangles.push_back({q[0], q[2], q[3]});
  }
  return m;
}

/// Box centred at the origin with the given edge lengths.
inline TriangleMesh box(const Vec3& size) { return box(-0.5 * size, 0.5 * size); }

/// Open-top container (floor + four walls), for surface-sampled boundaries.
inline TriangleMesh container(const Vec3& lo, const Vec3& hi) {
  TriangleMesh closed = box(lo, hi);
  TriangleMesh m;
  m.vertices = closed.vertices;
  for (std::size_t t = 0; t < closed.triangles.size(); ++t) {
    if (t == 6 || t == 7) continue;  // +y face
    m.triangles.push_back(closed.triangles[t]);
  }
  return m;
}

/// Square quad in the xz-plane (normal +y) centred at the origin.
inline TriangleMesh plane(double size_x, double size_z) {
  TriangleMesh m;
  const double hx = 0.5 * size_x, hz = 0.5 * size_z;
  m.vertices = {{-hx, 0, -hz}, {hx, 0, -hz}, {hx, 0, hz}, {-hx, 0, hz}};
  m.triangles = {{0, 2, 1}, {0, 3, 2}};
  return m;
}

/// Icosphere centred at the origin.
inline TriangleMesh sphere(double radius, int subdivisions = 2) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                 {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                 {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                 {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& v : m.vertices) v.normalize();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoints;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      auto key = std::minmax(a, b);
      auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      const auto idx = static_cast<std::uint32_t>(m.vertices.size() - 1);
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<TriangleMesh::Triangle> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& tri : m.triangles) {
      const auto a = midpoint(tri[0], tri[1]);
      const auto b = midpoint(tri[1], tri[2]);
      const auto c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    m.triangles = std::move(next);
  }
  for (auto& v : m.vertices) v *= radius;
  return m;
}

/// Closed cylinder along +y, base at y = 0.
inline TriangleMesh cylinder(double radius, double height, int segments = 32) {
  TriangleMesh m;
  for (int k = 0; k < segments; ++k) {
    const double a = 2.0 * std::numbers::pi * k / segments;
    m.vertices.emplace_back(radius * std::cos(a), 0.0, radius * std::sin(a));
    m.vertices.emplace_back(radius * std::cos(a), height, radius * std::sin(a));
  }
  const auto bottom = static_cast<std::uint32_t>(m.vertices.size());
  m.vertices.emplace_back(0.0, 0.0, 0.0);
  m.vertices.emplace_back(0.0, height, 0.0);
  const std::uint32_t top = bottom + 1;
  const auto n = static_cast<std::uint32_t>(segments);
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::uint32_t b0 = 2 * k, t0 = 2 * k + 1;
    const std::uint32_t b1 = 2 * ((k + 1) % n), t1 = 2 * ((k + 1) % n) + 1;
    m.triangles.push_back({b0, t0, t1});
    m.triangles.push_back({b0, t1, b1});
    m.triangles.push_back({bottom, b0, b1});
    m.triangles.push_back({top, t1, t0});
  }
  return m;
}

}  // namespace shapes
}  // namespace granular
