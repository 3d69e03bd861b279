#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "granular/frame_io.hpp"
#include "granular/scene.hpp"

namespace granular::live {

// Every WebSocket message starts with one tag byte.
inline constexpr std::uint8_t kTagFrame = 0x01;     // server -> client: tag + frame bytes
inline constexpr std::uint8_t kTagManifest = 0x02;  // server -> client: tag + UTF-8 JSON
inline constexpr std::uint8_t kTagCommand = 0x10;   // client -> server: 40-byte command

/// Client input. Wire layout (little-endian, 40 bytes):
///   u8 tag 0x10 | u8 kind | u16 reserved (0) | u32 body | f64 timestamp |
///   3 x f32 a | 3 x f32 b
/// SetTarget: a = translation (centroid), b = rotation (axis-angle, rad)
/// Nudge:     a = delta translation,      b = delta rotation (axis-angle)
/// Pause / Resume / Reset ignore body, a and b.
struct InputCommand {
  enum class Kind : std::uint8_t { SetTarget = 1, Nudge = 2, Pause = 3, Resume = 4, Reset = 5 };

  Kind kind = Kind::Pause;
  std::uint32_t body = 0;
  double timestamp = 0.0;
  std::array<float, 3> a{};
  std::array<float, 3> b{};

  friend bool operator==(const InputCommand&, const InputCommand&) = default;
};

inline constexpr std::size_t kCommandSize = 40;

inline std::vector<std::uint8_t> encode_command(const InputCommand& c) {
  std::vector<std::uint8_t> out(kCommandSize, 0);
  out[0] = kTagCommand;
  out[1] = static_cast<std::uint8_t>(c.kind);
  std::memcpy(out.data() + 4, &c.body, 4);
  std::memcpy(out.data() + 8, &c.timestamp, 8);
  std::memcpy(out.data() + 16, c.a.data(), 12);
  std::memcpy(out.data() + 28, c.b.data(), 12);
  return out;
}

inline InputCommand decode_command(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kCommandSize) {
    throw FormatError("command message must be 40 bytes, got " + std::to_string(bytes.size()),
                      std::min<std::size_t>(bytes.size(), kCommandSize));
  }
  if (bytes[0] != kTagCommand) throw FormatError("not a command message", 0);
  if (bytes[1] < 1 || bytes[1] > 5) throw FormatError("unknown command kind " + std::to_string(bytes[1]), 1);
  InputCommand c;
  c.kind = static_cast<InputCommand::Kind>(bytes[1]);
  std::memcpy(&c.body, bytes.data() + 4, 4);
  std::memcpy(&c.timestamp, bytes.data() + 8, 8);
  std::memcpy(c.a.data(), bytes.data() + 16, 12);
  std::memcpy(c.b.data(), bytes.data() + 28, 12);
  return c;
}

/// Frame message. `decimate` = k keeps HR particles 0, k, 2k, ...;
/// LR positions are always sent in full.
inline std::vector<std::uint8_t> encode_frame(const FrameRecord& f, std::uint32_t decimate = 1) {
  if (decimate == 0) throw ParameterError("decimation stride must be >= 1");
  std::vector<std::uint8_t> out;
  out.push_back(kTagFrame);
  if (decimate == 1) {
    append_frame_bytes(f, out);
    return out;
  }
  FrameRecord d;
  d.index = f.index;
  d.time = f.time;
  d.lr = f.lr;
  d.lr_ms = f.lr_ms;
  d.hr_ms = f.hr_ms;
  d.hr.reserve((f.hr.size() + decimate - 1) / decimate);
  for (std::size_t i = 0; i < f.hr.size(); i += decimate) d.hr.push_back(f.hr[i]);
  append_frame_bytes(d, out);
  return out;
}

inline FrameRecord decode_frame(std::span<const std::uint8_t> msg) {
  if (msg.empty() || msg[0] != kTagFrame) throw FormatError("not a frame message", 0);
  std::size_t offset = 0;
  FrameRecord f = decode_frame_bytes(msg.subspan(1), offset, 1);
  if (offset + 1 != msg.size()) throw FormatError("trailing bytes after frame", offset + 1);
  return f;
}

/// Scene summary sent on connect and served at /manifest.
inline nlohmann::json manifest_json(const BuiltScene& s, std::uint32_t decimate = 1) {
  nlohmann::json m;
  m["version"] = 1;
  m["name"] = s.name;
  m["lr_count"] = s.lr.size();
  m["hr_count"] = s.hr.size();
  m["hr_sent_count"] = (s.hr.size() + decimate - 1) / decimate;
  m["decimate"] = decimate;
  m["r_lr"] = s.lr.radius;
  m["r_hr"] = s.hr.radius;
  m["dt_lr"] = s.lr_params.dt_lr;
  m["dt_hr"] = s.hr_params.dt_hr;
  m["max_translation_per_frame"] = 5.0 * s.lr.radius;
  auto bodies = nlohmann::json::array();
  for (std::size_t b = 0; b < s.bodies.size(); ++b) {
    bodies.push_back({{"id", b},
                      {"name", s.bodies[b].name},
                      {"kind", s.bodies[b].is_kinematic() ? "kinematic" : "dynamic"}});
  }
  m["bodies"] = bodies;
  auto ents = nlohmann::json::array();
  for (const auto& e : s.entities) {
    ents.push_back({{"name", e.name},
                    {"role", role_name(e.role)},
                    {"lr_range", {e.lr_begin, e.lr_end}},
                    {"hr_range", {e.hr_begin, e.hr_end}}});
  }
  m["entities"] = ents;
  return m;
}

inline std::vector<std::uint8_t> encode_manifest(const BuiltScene& s, std::uint32_t decimate = 1) {
  const std::string text = manifest_json(s, decimate).dump();
  std::vector<std::uint8_t> out;
  out.reserve(text.size() + 1);
  out.push_back(kTagManifest);
  out.insert(out.end(), text.begin(), text.end());
  return out;
}

}  // namespace granular::live
