#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "granular/frame_io.hpp"
#include "granular/hr_upsampler.hpp"
#include "granular/lr_solver.hpp"
#include "granular/scene.hpp"

namespace granular {

/// Number of HR frames in `duration` seconds: floor(duration / dt_hr),
/// with a relative slack so that exact multiples are not lost to rounding.
inline std::uint32_t frame_count(double duration, double dt_hr) {
  if (!(duration > 0.0)) return 0;
  return static_cast<std::uint32_t>(std::floor(duration / dt_hr * (1.0 + 1e-12) + 1e-9));
}

/// Interactive goal for a kinematic body, replacing its script once set.
struct BodyGoal {
  RigidTransform pose;
};

/// Drives the LR solver and the HR upsampler on their own clocks.
///
/// Frame n (n = 1, 2, ...) is emitted at t_n = n dt_hr. Before it, LR steps
/// run until the LR clock reaches t_n (LR step k ends at k dt_lr); then one HR
/// step advects against that LR state.
class Simulation {
 public:
  explicit Simulation(BuiltScene scene) : initial_(scene), s_(std::move(scene)) {
    s_.lr.validate();
    goals_.resize(s_.bodies.size());
  }

  /// Advances to the next frame and returns it. With `timing` false the
  /// timing fields are left at zero (byte-stable output).
  FrameRecord advance_frame(bool timing = true) {
    using clock = std::chrono::steady_clock;
    ++frame_;
    const double t = frame_ * s_.hr_params.dt_hr;
    const auto lr_target = static_cast<std::uint64_t>(std::floor(t / s_.lr_params.dt_lr + 1e-9));

    const auto t0 = clock::now();
    while (lr_steps_ < lr_target) step_lr();
    const auto t1 = clock::now();
    upsampler_.step(s_.hr, s_.lr, s_.hr_params);
    const auto t2 = clock::now();

    FrameRecord f;
    f.index = frame_;
    f.time = t;
    f.lr = to_points(s_.lr.x);
    f.hr = to_points(s_.hr.x);
    if (timing) {
      f.lr_ms = std::chrono::duration<float, std::milli>(t1 - t0).count();
      f.hr_ms = std::chrono::duration<float, std::milli>(t2 - t1).count();
    }
    return f;
  }

  /// One LR step (used by advance_frame; exposed for tests).
  void step_lr() {
    const double t_end = (lr_steps_ + 1) * s_.lr_params.dt_lr;
    for (const auto& script : s_.scripts) {
      if (!goals_[script.body]) s_.bodies[script.body].target = script.pose_at(t_end);
    }
    for (std::size_t b = 0; b < s_.bodies.size(); ++b) {
      if (goals_[b] && s_.bodies[b].is_kinematic()) s_.bodies[b].target = limited_goal(b);
    }
    last_stats_ = solver_.step(s_.lr, s_.bodies, s_.lr_params);
    ++lr_steps_;
  }

  // --- interactive control; call between frames only -----------------------

  /// Largest translation a user goal may move a body per frame.
  double max_translation_per_frame() const { return 5.0 * s_.lr.radius; }

  void set_goal(std::size_t body, const RigidTransform& pose) {
    check_kinematic(body);
    goals_[body] = BodyGoal{pose};
  }

  /// Shifts the body's goal by `dtrans` and rotates it by the axis-angle
  /// `drot` about its centroid. The translation is clamped to
  /// max_translation_per_frame().
  void nudge(std::size_t body, Vec3 dtrans, const Vec3& drot) {
    check_kinematic(body);
    const double lim = max_translation_per_frame();
    if (dtrans.norm() > lim) dtrans *= lim / dtrans.norm();
    RigidTransform g = goals_[body] ? goals_[body]->pose : s_.bodies[body].pose();
    g.translation += dtrans;
    g.rotation = rotation_from_axis_angle(drot) * g.rotation;
    goals_[body] = BodyGoal{g};
  }

  void reset() {
    s_ = initial_;
    goals_.assign(s_.bodies.size(), std::nullopt);
    frame_ = 0;
    lr_steps_ = 0;
  }

  std::uint32_t frame_index() const { return frame_; }
  double time() const { return frame_ * s_.hr_params.dt_hr; }
  std::uint64_t lr_steps() const { return lr_steps_; }
  const StepStats& last_step_stats() const { return last_stats_; }

  const BuiltScene& scene() const { return s_; }
  BuiltScene& scene() { return s_; }
  const ParticleSet& lr() const { return s_.lr; }
  const HrSet& hr() const { return s_.hr; }
  const std::vector<RigidBody>& bodies() const { return s_.bodies; }

 private:
  void check_kinematic(std::size_t body) const {
    if (body >= s_.bodies.size()) throw ParameterError("no body " + std::to_string(body));
    if (!s_.bodies[body].is_kinematic()) {
      throw ParameterError("body '" + s_.bodies[body].name + "' is not kinematic");
    }
  }

  // Step toward the user goal, at most 5 r_LR per frame of travel.
  RigidTransform limited_goal(std::size_t b) const {
    const RigidBody& body = s_.bodies[b];
    const RigidTransform& goal = goals_[b]->pose;
    const double max_step = max_translation_per_frame() * s_.lr_params.dt_lr / s_.hr_params.dt_hr;
    RigidTransform out = goal;
    const Vec3 d = goal.translation - body.centroid;
    if (d.norm() > max_step) out.translation = body.centroid + d * (max_step / d.norm());
    return out;
  }

  BuiltScene initial_;
  BuiltScene s_;
  LrSolver solver_;
  HrUpsampler upsampler_;
  std::vector<std::optional<BodyGoal>> goals_;
  std::uint32_t frame_ = 0;
  std::uint64_t lr_steps_ = 0;
  StepStats last_stats_;
};

}  // namespace granular
