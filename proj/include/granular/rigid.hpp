#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "granular/core.hpp"

namespace granular {

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& offset) const { return rotation * offset + translation; }
};

/// Rigid group of LR particles. Dynamic bodies are restored to a rigid pose
/// by shape matching each solver iteration; kinematic bodies follow a
/// prescribed transform and act with infinite mass.
struct RigidBody {
  enum class Control : std::uint8_t { Dynamic, Kinematic };

  std::string name;
  Control control = Control::Dynamic;
  std::vector<std::uint32_t> indices;
  std::vector<Vec3> rest_offsets;  // from the rest centroid, sums to zero

  // Current pose. For dynamic bodies the rotation is the last recovered one
  // and seeds the next polar decomposition.
  Mat3 rotation = Mat3::Identity();
  Vec3 centroid = Vec3::Zero();

  // Kinematic goal pose for the end of the coming LR step.
  std::optional<RigidTransform> target;

  bool is_dynamic() const { return control == Control::Dynamic; }
  bool is_kinematic() const { return control == Control::Kinematic; }
  RigidTransform pose() const { return {rotation, centroid}; }
};

/// Builds a body from particles already stored in a set, at rest pose.
inline RigidBody make_rigid_body(std::string name, std::vector<std::uint32_t> indices,
                                 std::span<const Vec3> positions, RigidBody::Control control) {
  if (indices.empty()) throw ParameterError("rigid body '" + name + "' has no particles");
  RigidBody body;
  body.name = std::move(name);
  body.control = control;
  Vec3 c = Vec3::Zero();
  for (auto i : indices) c += positions[i];
  c /= double(indices.size());
  body.centroid = c;
  body.rest_offsets.reserve(indices.size());
  Mat3 spread = Mat3::Zero();
  for (auto i : indices) {
    body.rest_offsets.push_back(positions[i] - c);
    spread += body.rest_offsets.back() * body.rest_offsets.back().transpose();
  }
  body.indices = std::move(indices);
  if (control == RigidBody::Control::Dynamic) {
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(spread, Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    if (body.indices.size() < 4 || !(ev(0) > 1e-12 * std::max(ev(2), 1e-300))) {
      throw ParameterError("dynamic rigid body '" + body.name +
                           "' needs at least 4 non-coplanar particles");
    }
  }
  return body;
}

/// C = sum_i (x_pred_i - c) x_o_i^T with c the mean predicted position.
inline Mat3 covariance(const RigidBody& body, const ParticleSet& ps, Vec3* centre = nullptr) {
  Vec3 c = Vec3::Zero();
  for (auto i : body.indices) c += ps.x_pred[i];
  c /= double(body.indices.size());
  Mat3 cov = Mat3::Zero();
  for (std::size_t k = 0; k < body.indices.size(); ++k) {
    cov += (ps.x_pred[body.indices[k]] - c) * body.rest_offsets[k].transpose();
  }
  if (centre) *centre = c;
  return cov;
}

struct PolarResult {
  Mat3 rotation;
  int iterations = 0;
  bool used_svd = false;
};

/// Rotation R in SO(3) maximizing tr(R^T C), i.e. the rotational polar
/// factor of C with the smallest singular direction flipped when det C < 0.
///
/// Newton's method on the rotation manifold, seeded with `warm`: with
/// M = R^T C, S = sym(M) and axial vector a of skew(M), the step is
/// omega = (tr(S) I - S)^{-1} 2a, applied as R <- R exp([omega]x).
/// Converges quadratically once tr(S) I - S is positive definite. If that
/// fails (start more than ~90 degrees off, rank-1 input) the result comes
/// from an SVD instead. ||C|| < 1e-12 returns `warm` unchanged.
inline PolarResult polar_rotation_ex(const Mat3& C, const Mat3& warm = Mat3::Identity(),
                                     int max_iterations = 50) {
  if (!C.allFinite()) throw ParameterError("polar decomposition of a non-finite matrix");
  if (C.norm() < 1e-12) return {warm, 0, false};

  Mat3 R = warm;
  for (int it = 1; it <= max_iterations; ++it) {
    const Mat3 M = R.transpose() * C;
    const Vec3 a(0.5 * (M(2, 1) - M(1, 2)), 0.5 * (M(0, 2) - M(2, 0)), 0.5 * (M(1, 0) - M(0, 1)));
    const Mat3 S = 0.5 * (M + M.transpose());
    const Mat3 K = S.trace() * Mat3::Identity() - S;
    const Eigen::LLT<Mat3> llt(K);
    if (llt.info() != Eigen::Success || !(K.diagonal().minCoeff() > 1e-14 * C.norm())) break;
    const Vec3 omega = llt.solve(2.0 * a);
    const double angle = omega.norm();
    if (angle > 1.0) break;  // outside the basin where the quadratic model is trusted
    if (angle > 0.0) R = R * Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
    if (angle < 1e-13) return {R, it, false};
  }

  const Eigen::JacobiSVD<Mat3> svd(C, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 U = svd.matrixU();
  const Mat3 V = svd.matrixV();
  Mat3 D = Mat3::Identity();
  D(2, 2) = (U * V.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return {U * D * V.transpose(), max_iterations, true};
}

inline Mat3 polar_rotation(const Mat3& C, const Mat3& warm = Mat3::Identity()) {
  return polar_rotation_ex(C, warm).rotation;
}

/// Shape-matching deltas toward the best rigid pose (R x_o + c) of the
/// body's predicted positions. Updates the body's rotation and centroid.
inline void shape_match(RigidBody& body, const ParticleSet& ps, std::vector<Vec3>& deltas) {
  Vec3 c;
  const Mat3 cov = covariance(body, ps, &c);
  body.rotation = polar_rotation(cov, body.rotation);
  body.centroid = c;
  deltas.resize(body.indices.size());
  for (std::size_t k = 0; k < body.indices.size(); ++k) {
    deltas[k] = (body.rotation * body.rest_offsets[k] + c) - ps.x_pred[body.indices[k]];
  }
}

inline std::vector<Vec3> shape_match(RigidBody& body, const ParticleSet& ps) {
  std::vector<Vec3> d;
  shape_match(body, ps, d);
  return d;
}

/// Places a kinematic body at `pose` for the end of a step of length dt:
/// x_pred = R x_o + t and v = (x_pred - x) / dt.
inline void drive_kinematic(RigidBody& body, ParticleSet& ps, const RigidTransform& pose, double dt) {
  if (!(dt > 0.0)) throw ParameterError("drive_kinematic requires dt > 0");
  if ((pose.rotation.transpose() * pose.rotation - Mat3::Identity()).norm() > 1e-6) {
    throw ParameterError("kinematic transform for '" + body.name + "' is not orthogonal");
  }
  for (std::size_t k = 0; k < body.indices.size(); ++k) {
    const auto i = body.indices[k];
    ps.x_pred[i] = pose.apply(body.rest_offsets[k]);
    ps.v[i] = (ps.x_pred[i] - ps.x[i]) / dt;
  }
  body.rotation = pose.rotation;
  body.centroid = pose.translation;
}

}  // namespace granular
