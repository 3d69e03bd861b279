#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <toml.hpp>

#include "granular/core.hpp"
#include "granular/hr_upsampler.hpp"
#include "granular/log.hpp"
#include "granular/mesh.hpp"
#include "granular/mesh_io.hpp"
#include "granular/rigid.hpp"
#include "granular/rng.hpp"
#include "granular/sampling.hpp"

namespace granular {

// ---------------------------------------------------------------------------
// Scene description

struct Keyframe {
  double time = 0.0;
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();  // axis * angle, radians
};

/// Built-in primitive, used instead of a mesh file.
struct ShapeSpec {
  enum class Kind { Box, Sphere, Plane, Container, Cylinder };
  Kind kind = Kind::Box;
  Vec3 size = Vec3::Ones();  // box / container: edge lengths; plane: x and z
  double radius = 0.5;       // sphere / cylinder
  double height = 1.0;       // cylinder
  int detail = 0;            // sphere subdivisions / cylinder segments (0 = default)
};

struct EntitySpec {
  enum class Role { Granular, RigidDynamic, RigidKinematic, Boundary };
  enum class Sampling { Volume, Surface };

  std::string name;
  Role role = Role::Granular;
  std::optional<std::filesystem::path> mesh;  // resolved against the scene directory
  std::optional<ShapeSpec> shape;
  Vec3 scale = Vec3::Ones();
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();  // axis * angle, radians
  Vec3 velocity = Vec3::Zero();
  std::optional<double> density;  // rigid_dynamic only; defaults to the material density
  Sampling sampling = Sampling::Volume;
  std::vector<Keyframe> keyframes;  // rigid_kinematic only
};

struct Scene {
  int version = 1;
  std::string name = "scene";
  std::uint64_t seed = 1;
  double duration = 1.0;
  double r_lr = 0.0;
  double r_hr = 0.0;
  bool deterministic = false;
  MaterialParams material;
  LrParams lr;
  HrParams hr;
  std::vector<EntitySpec> entities;
};

inline std::string_view role_name(EntitySpec::Role r) {
  switch (r) {
    case EntitySpec::Role::Granular: return "granular";
    case EntitySpec::Role::RigidDynamic: return "rigid_dynamic";
    case EntitySpec::Role::RigidKinematic: return "rigid_kinematic";
    case EntitySpec::Role::Boundary: return "boundary";
  }
  return "?";
}

inline Mat3 rotation_from_axis_angle(const Vec3& aa) {
  const double angle = aa.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

inline Vec3 axis_angle_from_rotation(const Mat3& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

/// Checks the cross-field invariants. Throws ConfigError.
inline void validate_scene(const Scene& s) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (s.version != 1) fail("unsupported scene version " + std::to_string(s.version) + " (expected 1)");
  if (!(s.r_lr > 0.0)) fail("r_lr must be positive");
  if (!(s.duration >= 0.0) || !std::isfinite(s.duration)) fail("duration must be >= 0");
  const double ratio = s.r_hr / s.r_lr;
  if (!(ratio >= 0.1 && ratio <= 0.5)) {
    fail("r_hr / r_lr = " + std::to_string(ratio) + " is outside [0.1, 0.5]");
  }
  if (ratio < 0.2 || ratio > 0.4) {
    log_warning("r_hr / r_lr = " + std::to_string(ratio) + " is outside the usual [0.2, 0.4] band");
  }
  try {
    s.material.validate();
    s.lr.validate();
    s.hr.validate(s.r_lr);
  } catch (const ParameterError& e) {
    fail(e.what());
  }
  std::set<std::string> names;
  for (const auto& e : s.entities) {
    const std::string where = "entity '" + e.name + "': ";
    if (e.name.empty()) fail("entity without a name");
    if (!names.insert(e.name).second) fail("duplicate entity name '" + e.name + "'");
    if (e.mesh.has_value() == e.shape.has_value()) fail(where + "exactly one of mesh / shape is required");
    if (e.mesh && !std::filesystem::exists(*e.mesh)) fail(where + "mesh file not found: " + e.mesh->string());
    if (!((e.scale.array() > 0.0).all())) fail(where + "scale must be positive");
    if (e.role == EntitySpec::Role::Granular && e.sampling != EntitySpec::Sampling::Volume) {
      fail(where + "granular entities are volume-sampled");
    }
    if (e.density && e.role != EntitySpec::Role::RigidDynamic) fail(where + "density applies to rigid_dynamic only");
    if (e.density && !(*e.density > 0.0)) fail(where + "density must be positive");
    if (!e.keyframes.empty() && e.role != EntitySpec::Role::RigidKinematic) {
      fail(where + "keyframes apply to rigid_kinematic only");
    }
    if (e.role == EntitySpec::Role::Boundary && !e.velocity.isZero()) fail(where + "boundaries cannot move");
    for (std::size_t k = 0; k < e.keyframes.size(); ++k) {
      if (!(e.keyframes[k].time >= 0.0)) fail(where + "keyframe times must be >= 0");
      if (k > 0 && !(e.keyframes[k].time > e.keyframes[k - 1].time)) {
        fail(where + "keyframe times must be strictly increasing");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// TOML reader

namespace detail {

inline std::string line_of(const toml::node& n) {
  const auto& src = n.source();
  return src.begin ? " (line " + std::to_string(src.begin.line) + ")" : "";
}

// Typed access to one table. Every key read is recorded; finish() rejects
// the rest.
class TableReader {
 public:
  TableReader(const toml::table& t, std::string path) : t_(t), path_(std::move(path)) {}

  const toml::node* get(std::string_view key) {
    used_.emplace(key);
    return t_.get(key);
  }

  std::string field(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  [[noreturn]] void fail(std::string_view key, const toml::node& n, const std::string& what) const {
    throw ConfigError(field(key) + " " + what + line_of(n));
  }

  bool has(std::string_view key) const { return t_.contains(key); }

  double number(std::string_view key, double def) {
    const auto* n = get(key);
    if (!n) return def;
    if (auto v = n->as_floating_point()) return v->get();
    if (auto v = n->as_integer()) return static_cast<double>(v->get());
    fail(key, *n, "must be a number");
  }

  std::int64_t integer(std::string_view key, std::int64_t def) {
    const auto* n = get(key);
    if (!n) return def;
    if (auto v = n->as_integer()) return v->get();
    fail(key, *n, "must be an integer");
  }

  bool boolean(std::string_view key, bool def) {
    const auto* n = get(key);
    if (!n) return def;
    if (auto v = n->as_boolean()) return v->get();
    fail(key, *n, "must be true or false");
  }

  std::optional<std::string> string(std::string_view key) {
    const auto* n = get(key);
    if (!n) return std::nullopt;
    if (auto v = n->as_string()) return v->get();
    fail(key, *n, "must be a string");
  }

  Vec3 vec3(std::string_view key, const Vec3& def) {
    const auto* n = get(key);
    if (!n) return def;
    const auto* arr = n->as_array();
    if (!arr || arr->size() != 3) fail(key, *n, "must be an array of 3 numbers");
    Vec3 out;
    for (int k = 0; k < 3; ++k) {
      const auto& e = *arr->get(static_cast<std::size_t>(k));
      if (auto f = e.as_floating_point()) {
        out[k] = f->get();
      } else if (auto i = e.as_integer()) {
        out[k] = static_cast<double>(i->get());
      } else {
        fail(key, *n, "must be an array of 3 numbers");
      }
    }
    return out;
  }

  const toml::table* table(std::string_view key) {
    const auto* n = get(key);
    if (!n) return nullptr;
    if (auto t = n->as_table()) return t;
    fail(key, *n, "must be a table");
  }

  const toml::array* array(std::string_view key) {
    const auto* n = get(key);
    if (!n) return nullptr;
    if (auto a = n->as_array()) return a;
    fail(key, *n, "must be an array");
  }

  void finish() const {
    for (const auto& [k, v] : t_) {
      if (!used_.count(std::string(k.str()))) {
        throw ConfigError("unknown key '" + field(k.str()) + "'" + line_of(v));
      }
    }
  }

 private:
  const toml::table& t_;
  std::string path_;
  std::set<std::string, std::less<>> used_;
};

inline const toml::table& as_table_entry(const toml::node& n, const std::string& path) {
  if (auto t = n.as_table()) return *t;
  throw ConfigError(path + " must be a table" + line_of(n));
}

inline ShapeSpec read_shape(TableReader& r, const std::string& path) {
  ShapeSpec s;
  const auto type = r.string("type");
  if (!type) throw ConfigError(path + ".type is required");
  if (*type == "box") {
    s.kind = ShapeSpec::Kind::Box;
    s.size = r.vec3("size", s.size);
  } else if (*type == "container") {
    s.kind = ShapeSpec::Kind::Container;
    s.size = r.vec3("size", s.size);
  } else if (*type == "plane") {
    s.kind = ShapeSpec::Kind::Plane;
    const Vec3 sz = r.vec3("size", Vec3(1.0, 0.0, 1.0));
    s.size = sz;
  } else if (*type == "sphere") {
    s.kind = ShapeSpec::Kind::Sphere;
    s.radius = r.number("radius", s.radius);
    s.detail = static_cast<int>(r.integer("subdivisions", 2));
  } else if (*type == "cylinder") {
    s.kind = ShapeSpec::Kind::Cylinder;
    s.radius = r.number("radius", s.radius);
    s.height = r.number("height", s.height);
    s.detail = static_cast<int>(r.integer("segments", 32));
  } else {
    throw ConfigError(path + ".type '" + *type + "' is not one of box, container, plane, sphere, cylinder");
  }
  r.finish();
  const bool sizes_ok = s.kind == ShapeSpec::Kind::Plane ? (s.size.x() > 0.0 && s.size.z() > 0.0)
                                                        : (s.size.array() > 0.0).all();
  if (!sizes_ok || !(s.radius > 0.0) || !(s.height > 0.0)) {
    throw ConfigError(path + " dimensions must be positive");
  }
  if (s.detail < 0 || s.detail > 256) throw ConfigError(path + " detail level out of range");
  return s;
}

inline EntitySpec read_entity(const toml::table& t, const std::string& path,
                              const std::filesystem::path& base_dir) {
  TableReader r(t, path);
  EntitySpec e;
  e.name = r.string("name").value_or("");
  if (e.name.empty()) throw ConfigError(path + ".name is required" + line_of(t));
  const auto role = r.string("role").value_or("granular");
  if (role == "granular") {
    e.role = EntitySpec::Role::Granular;
  } else if (role == "rigid_dynamic") {
    e.role = EntitySpec::Role::RigidDynamic;
  } else if (role == "rigid_kinematic") {
    e.role = EntitySpec::Role::RigidKinematic;
  } else if (role == "boundary") {
    e.role = EntitySpec::Role::Boundary;
  } else {
    throw ConfigError(path + ".role '" + role +
                      "' is not one of granular, rigid_dynamic, rigid_kinematic, boundary");
  }
  if (auto mesh = r.string("mesh")) {
    const std::filesystem::path p(*mesh);
    e.mesh = p.is_absolute() ? p : base_dir / p;
  }
  if (const auto* shape = r.table("shape")) {
    TableReader sr(*shape, path + ".shape");
    e.shape = read_shape(sr, path + ".shape");
  }
  if (const auto* n = r.get("scale")) {
    if (n->is_number()) {
      e.scale = Vec3::Constant(r.number("scale", 1.0));
    } else {
      e.scale = r.vec3("scale", e.scale);
    }
  }
  e.translation = r.vec3("translation", e.translation);
  e.rotation = r.vec3("rotation", e.rotation);
  e.velocity = r.vec3("velocity", e.velocity);
  if (r.has("density")) e.density = r.number("density", 0.0);
  e.sampling = e.role == EntitySpec::Role::Boundary ? EntitySpec::Sampling::Surface
                                                   : EntitySpec::Sampling::Volume;
  if (auto s = r.string("sampling")) {
    if (*s == "volume") {
      e.sampling = EntitySpec::Sampling::Volume;
    } else if (*s == "surface") {
      e.sampling = EntitySpec::Sampling::Surface;
    } else {
      throw ConfigError(path + ".sampling '" + *s + "' is not one of volume, surface");
    }
  }
  if (const auto* keys = r.array("keyframes")) {
    for (std::size_t k = 0; k < keys->size(); ++k) {
      const std::string kp = path + ".keyframes[" + std::to_string(k) + "]";
      TableReader kr(as_table_entry(*keys->get(k), kp), kp);
      Keyframe kf;
      if (!kr.has("time")) throw ConfigError(kp + ".time is required");
      kf.time = kr.number("time", 0.0);
      kf.translation = kr.vec3("translation", e.translation);
      kf.rotation = kr.vec3("rotation", e.rotation);
      kr.finish();
      e.keyframes.push_back(kf);
    }
  }
  r.finish();
  return e;
}

}  // namespace detail

/// Parses a scene document. Relative mesh paths resolve against `base_dir`.
///
/// Schema (version 1):
///   version = 1                      required
///   name, seed, duration, deterministic
///   r_lr                             required
///   r_hr                             default 0.3 * r_lr
///   gravity = [x, y, z], ground_height
///   [material]  density, mu_s, mu_k
///   [lr]        dt, solver_iterations, stabilization_iterations,
///               mass_scale_k, cfl_factor, max_substeps
///   [hr]        dt, c1, c2, floor_clamp, ignore_isolated_rigid
///   [[entities]] name, role, mesh | shape, scale, translation, rotation,
///               velocity, density, sampling, [[entities.keyframes]]
inline Scene parse_scene(std::string_view text, const std::filesystem::path& base_dir = ".",
                         const std::string& source_name = "scene") {
  toml::table root;
  try {
    root = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    throw ConfigError(source_name + ": " + std::string(e.description()) + " (line " +
                      std::to_string(e.source().begin.line) + ")");
  }
  Scene s;
  detail::TableReader r(root, "");
  if (!r.has("version")) throw ConfigError("version is required (use version = 1)");
  s.version = static_cast<int>(r.integer("version", 1));
  if (s.version != 1) throw ConfigError("unsupported scene version " + std::to_string(s.version));
  s.name = r.string("name").value_or(s.name);
  const std::int64_t seed = r.integer("seed", 1);
  if (seed < 0) throw ConfigError("seed must be >= 0");
  s.seed = static_cast<std::uint64_t>(seed);
  s.duration = r.number("duration", s.duration);
  s.deterministic = r.boolean("deterministic", false);
  if (!r.has("r_lr")) throw ConfigError("r_lr is required");
  s.r_lr = r.number("r_lr", 0.0);
  s.r_hr = r.number("r_hr", 0.3 * s.r_lr);
  const Vec3 gravity = r.vec3("gravity", Vec3(0.0, -9.81, 0.0));
  const double ground = r.number("ground_height", 0.0);

  if (const auto* m = r.table("material")) {
    detail::TableReader mr(*m, "material");
    s.material.density = mr.number("density", s.material.density);
    s.material.mu_s = mr.number("mu_s", s.material.mu_s);
    s.material.mu_k = mr.number("mu_k", s.material.mu_k);
    mr.finish();
  }

  s.lr = LrParams::defaults_for(s.r_lr > 0.0 ? s.r_lr : 1.0);
  if (const auto* l = r.table("lr")) {
    detail::TableReader lr(*l, "lr");
    s.lr.dt_lr = lr.number("dt", s.lr.dt_lr);
    s.lr.solver_iterations = static_cast<int>(lr.integer("solver_iterations", s.lr.solver_iterations));
    s.lr.stabilization_iterations =
        static_cast<int>(lr.integer("stabilization_iterations", s.lr.stabilization_iterations));
    s.lr.mass_scale_k = lr.number("mass_scale_k", s.lr.mass_scale_k);
    s.lr.cfl_factor = lr.number("cfl_factor", s.lr.cfl_factor);
    s.lr.max_substeps = static_cast<int>(lr.integer("max_substeps", s.lr.max_substeps));
    lr.finish();
  }
  s.lr.gravity = gravity;
  s.lr.ground_height = ground;
  s.lr.deterministic = s.deterministic;

  s.hr.r_hr = s.r_hr;
  if (const auto* h = r.table("hr")) {
    detail::TableReader hr(*h, "hr");
    s.hr.dt_hr = hr.number("dt", s.hr.dt_hr);
    s.hr.c1 = hr.number("c1", s.hr.c1);
    s.hr.c2 = hr.number("c2", s.hr.c2);
    s.hr.floor_clamp = hr.boolean("floor_clamp", s.hr.floor_clamp);
    s.hr.ignore_isolated_rigid = hr.boolean("ignore_isolated_rigid", s.hr.ignore_isolated_rigid);
    hr.finish();
  }
  s.hr.gravity = gravity;
  s.hr.ground_height = ground;
  s.hr.deterministic = s.deterministic;

  if (const auto* ents = r.array("entities")) {
    for (std::size_t k = 0; k < ents->size(); ++k) {
      const std::string path = "entities[" + std::to_string(k) + "]";
      s.entities.push_back(detail::read_entity(detail::as_table_entry(*ents->get(k), path), path, base_dir));
    }
  }
  r.finish();
  validate_scene(s);
  return s;
}

inline Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open scene file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path(),
                     path.string());
}

// ---------------------------------------------------------------------------
// Scene construction

/// Keyframed pose of a kinematic body, interpolated linearly / by slerp and
/// held constant outside the keyframe range.
struct KinematicScript {
  std::size_t body = 0;
  std::vector<Keyframe> keys;
  Mat3 initial_rotation = Mat3::Identity();
  Vec3 initial_translation = Vec3::Zero();
  Vec3 rest_centroid = Vec3::Zero();

  /// Entity transform (rotation, translation) at time t.
  RigidTransform entity_transform(double t) const {
    if (keys.empty()) return {initial_rotation, initial_translation};
    if (t <= keys.front().time) return {rotation_from_axis_angle(keys.front().rotation), keys.front().translation};
    if (t >= keys.back().time) return {rotation_from_axis_angle(keys.back().rotation), keys.back().translation};
    const auto it = std::upper_bound(keys.begin(), keys.end(), t,
                                     [](double v, const Keyframe& k) { return v < k.time; });
    const Keyframe& b = *it;
    const Keyframe& a = *(it - 1);
    const double f = (t - a.time) / (b.time - a.time);
    const Eigen::Quaterniond qa(rotation_from_axis_angle(a.rotation));
    const Eigen::Quaterniond qb(rotation_from_axis_angle(b.rotation));
    return {qa.slerp(f, qb).normalized().toRotationMatrix(), (1.0 - f) * a.translation + f * b.translation};
  }

  /// Body pose (rotation relative to the rest pose, centroid) at time t.
  RigidTransform pose_at(double t) const {
    const RigidTransform e = entity_transform(t);
    const Mat3 rel = e.rotation * initial_rotation.transpose();
    return {rel, rel * (rest_centroid - initial_translation) + e.translation};
  }
};

/// Which particles an entity produced.
struct EntityRecord {
  std::string name;
  EntitySpec::Role role = EntitySpec::Role::Granular;
  std::size_t lr_begin = 0, lr_end = 0;
  std::size_t hr_begin = 0, hr_end = 0;
  std::int32_t body = -1;
};

struct BuiltScene {
  ParticleSet lr;
  std::vector<RigidBody> bodies;
  HrSet hr;
  std::vector<KinematicScript> scripts;
  std::vector<EntityRecord> entities;
  LrParams lr_params;
  HrParams hr_params;
  MaterialParams material;
  double duration = 0.0;
  std::uint64_t seed = 0;
  std::string name;
};

/// Entity geometry in world space at its initial transform.
inline TriangleMesh entity_mesh(const EntitySpec& e) {
  TriangleMesh m;
  if (e.mesh) {
    m = load_mesh(*e.mesh);
  } else if (e.shape) {
    const ShapeSpec& s = *e.shape;
    switch (s.kind) {
      case ShapeSpec::Kind::Box: m = shapes::box(s.size); break;
      case ShapeSpec::Kind::Container:
        m = shapes::container(Vec3(-0.5 * s.size.x(), 0.0, -0.5 * s.size.z()),
                              Vec3(0.5 * s.size.x(), s.size.y(), 0.5 * s.size.z()));
        break;
      case ShapeSpec::Kind::Plane: m = shapes::plane(s.size.x(), s.size.z()); break;
      case ShapeSpec::Kind::Sphere: m = shapes::sphere(s.radius, s.detail > 0 ? s.detail : 2); break;
      case ShapeSpec::Kind::Cylinder: m = shapes::cylinder(s.radius, s.height, s.detail > 0 ? s.detail : 32); break;
    }
  } else {
    throw ConfigError("entity '" + e.name + "' has no geometry");
  }
  m.transform(rotation_from_axis_angle(e.rotation) * e.scale.asDiagonal(), e.translation);
  return m;
}

/// Samples every entity into LR / HR particles. Deterministic per seed.
inline BuiltScene build_scene(const Scene& scene) {
  validate_scene(scene);
  BuiltScene out;
  out.lr = ParticleSet(scene.r_lr);
  out.hr.radius = scene.r_hr;
  out.lr_params = scene.lr;
  out.hr_params = scene.hr;
  out.hr_params.r_hr = scene.r_hr;
  out.material = scene.material;
  out.duration = scene.duration;
  out.seed = scene.seed;
  out.name = scene.name;

  const double m_lr = mass_from_density(scene.material.density, scene.r_lr);
  for (std::size_t k = 0; k < scene.entities.size(); ++k) {
    const EntitySpec& e = scene.entities[k];
    const std::uint64_t lr_seed = mix64(scene.seed ^ mix64(2 * k));
    const std::uint64_t hr_seed = mix64(scene.seed ^ mix64(2 * k + 1));
    EntityRecord rec{e.name, e.role, out.lr.size(), out.lr.size(), out.hr.size(), out.hr.size(), -1};
    try {
      const TriangleMesh mesh = entity_mesh(e);
      const auto lr_points = e.sampling == EntitySpec::Sampling::Volume
                                 ? sample_volume(mesh, scene.r_lr, lr_seed)
                                 : sample_surface(mesh, scene.r_lr, lr_seed);
      if (lr_points.empty()) log_warning("entity '" + e.name + "' produced no particles");
      const auto body_id = static_cast<std::int32_t>(out.bodies.size());
      Phase phase = Phase::granular();
      double inv_mass = 1.0 / m_lr;
      Vec3 vel = e.velocity;
      switch (e.role) {
        case EntitySpec::Role::Granular: break;
        case EntitySpec::Role::RigidDynamic:
          phase = Phase::rigid(body_id);
          inv_mass = 1.0 / mass_from_density(e.density.value_or(scene.material.density), scene.r_lr);
          break;
        case EntitySpec::Role::RigidKinematic:
          phase = Phase::rigid(body_id);
          inv_mass = 0.0;
          break;
        case EntitySpec::Role::Boundary:
          phase = Phase::boundary();
          inv_mass = 0.0;
          vel.setZero();
          break;
      }
      std::vector<std::uint32_t> indices;
      indices.reserve(lr_points.size());
      for (const auto& p : lr_points) {
        indices.push_back(static_cast<std::uint32_t>(
            out.lr.add(p, inv_mass, scene.material.mu_s, scene.material.mu_k, phase, vel)));
      }
      rec.lr_end = out.lr.size();

      if (e.role == EntitySpec::Role::RigidDynamic || e.role == EntitySpec::Role::RigidKinematic) {
        const auto control = e.role == EntitySpec::Role::RigidDynamic ? RigidBody::Control::Dynamic
                                                                       : RigidBody::Control::Kinematic;
        out.bodies.push_back(make_rigid_body(e.name, std::move(indices), out.lr.x, control));
        rec.body = body_id;
        if (control == RigidBody::Control::Kinematic) {
          KinematicScript script;
          script.body = static_cast<std::size_t>(body_id);
          script.keys = e.keyframes;
          script.initial_rotation = rotation_from_axis_angle(e.rotation);
          script.initial_translation = e.translation;
          script.rest_centroid = out.bodies.back().centroid;
          // Start at the t = 0 pose of the script.
          if (!script.keys.empty()) {
            const RigidTransform pose = script.pose_at(0.0);
            RigidBody& body = out.bodies.back();
            for (std::size_t i = 0; i < body.indices.size(); ++i) {
              const Vec3 p = pose.apply(body.rest_offsets[i]);
              out.lr.x[body.indices[i]] = p;
              out.lr.x_pred[body.indices[i]] = p;
            }
            body.rotation = pose.rotation;
            body.centroid = pose.translation;
          }
          out.scripts.push_back(std::move(script));
        }
      }

      if (e.role == EntitySpec::Role::Granular) {
        for (const auto& p : sample_volume(mesh, scene.r_hr, hr_seed)) out.hr.add(p);
        rec.hr_end = out.hr.size();
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const GeometryError& err) {
      throw GeometryError("entity '" + e.name + "': " + err.what());
    } catch (const ParameterError& err) {
      throw ParameterError("entity '" + e.name + "': " + err.what());
    } catch (const IoError& err) {
      throw IoError("entity '" + e.name + "': " + err.what());
    }
    out.entities.push_back(rec);
  }
  return out;
}

}  // namespace granular
