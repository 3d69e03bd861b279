#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "granular/mesh.hpp"

namespace granular {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

/// ASCII OBJ: `v x y z` and `f a b c ...` records, 1-based (or negative
/// relative) indices, `a/b/c` forms accepted. Polygons are fan-triangulated.
inline TriangleMesh parse_obj(std::istream& in) {
  TriangleMesh mesh;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z)) {
        throw GeometryError("OBJ line " + std::to_string(line_no) + ": malformed vertex");
      }
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<std::uint32_t> face;
      std::string tok;
      while (ss >> tok) {
        const long idx = std::stol(tok.substr(0, tok.find('/')));
        const long n = static_cast<long>(mesh.vertices.size());
        const long resolved = idx > 0 ? idx - 1 : n + idx;
        if (idx == 0 || resolved < 0 || resolved >= n) {
          throw GeometryError("OBJ line " + std::to_string(line_no) + ": bad face index");
        }
        face.push_back(static_cast<std::uint32_t>(resolved));
      }
      if (face.size() < 3) {
        throw GeometryError("OBJ line " + std::to_string(line_no) + ": face needs 3 indices");
      }
      for (std::size_t k = 1; k + 1 < face.size(); ++k) {
        mesh.triangles.push_back({face[0], face[k], face[k + 1]});
      }
    }
  }
  return mesh;
}

/// Binary little-endian STL. Coincident vertices are welded.
inline TriangleMesh parse_stl(const std::vector<char>& bytes) {
  if (bytes.size() < 84) throw GeometryError("STL file shorter than its header");
  std::uint32_t count;
  std::memcpy(&count, bytes.data() + 80, 4);
  if (bytes.size() < 84 + std::size_t{count} * 50) {
    throw GeometryError("STL file truncated: expected " + std::to_string(count) + " triangles");
  }
  TriangleMesh mesh;
  mesh.vertices.reserve(std::size_t{count} * 3);
  for (std::uint32_t t = 0; t < count; ++t) {
    const char* rec = bytes.data() + 84 + std::size_t{t} * 50 + 12;
    for (int k = 0; k < 3; ++k) {
      float f[3];
      std::memcpy(f, rec + 12 * k, 12);
      mesh.vertices.emplace_back(f[0], f[1], f[2]);
    }
    mesh.triangles.push_back({3 * t, 3 * t + 1, 3 * t + 2});
  }
  mesh.weld();
  return mesh;
}

inline TriangleMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mesh file " + path.string());
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  TriangleMesh mesh;
  if (ext == ".obj") {
    mesh = parse_obj(in);
  } else if (ext == ".stl") {
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    mesh = parse_stl(bytes);
  } else {
    throw GeometryError("unsupported mesh format '" + ext + "' (expected .obj or .stl)");
  }
  mesh.validate_indices();
  return mesh;
}

inline void write_obj(const TriangleMesh& mesh, std::ostream& out) {
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) {
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
}

inline void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_obj(mesh, out);
  if (!out) throw IoError("failed writing " + path.string());
}

inline void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::array<char, 80> header{};
  out.write(header.data(), header.size());
  const auto count = static_cast<std::uint32_t>(mesh.triangles.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    const Vec3 n = (b - a).cross(c - a).normalized();
    float rec[12] = {float(n.x()), float(n.y()), float(n.z()), float(a.x()), float(a.y()),
                     float(a.z()),  float(b.x()), float(b.y()), float(b.z()), float(c.x()),
                     float(c.y()),  float(c.z())};
    out.write(reinterpret_cast<const char*>(rec), sizeof rec);
    const std::uint16_t attr = 0;
    out.write(reinterpret_cast<const char*>(&attr), 2);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace granular
