#pragma once

#include <array>
#include <bit>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "granular/core.hpp"

namespace granular {

static_assert(std::endian::native == std::endian::little,
              "frame format is little-endian; big-endian hosts need byte swapping");

using Point3f = std::array<float, 3>;

/// One emitted frame.
///
/// Stream layout (little-endian, no padding):
///   "GKF1" | u32 index | f64 time | u32 lr_count | u32 hr_count |
///   lr_count * 3 f32 | hr_count * 3 f32 | f32 lr_ms | f32 hr_ms
struct FrameRecord {
  std::uint32_t index = 0;
  double time = 0.0;
  std::vector<Point3f> lr;
  std::vector<Point3f> hr;
  float lr_ms = 0.0f;
  float hr_ms = 0.0f;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

inline constexpr std::array<char, 4> kFrameMagic{'G', 'K', 'F', '1'};

inline std::size_t frame_byte_size(std::size_t lr_count, std::size_t hr_count) {
  return 4 + 4 + 8 + 4 + 4 + 12 * (lr_count + hr_count) + 4 + 4;
}

inline std::vector<Point3f> to_points(std::span<const Vec3> v, std::size_t stride = 1) {
  std::vector<Point3f> out;
  out.reserve((v.size() + stride - 1) / stride);
  for (std::size_t i = 0; i < v.size(); i += stride) {
    out.push_back({float(v[i].x()), float(v[i].y()), float(v[i].z())});
  }
  return out;
}

namespace detail {
template <class T>
void put(std::vector<std::uint8_t>& out, const T& value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}
}  // namespace detail

inline void append_frame_bytes(const FrameRecord& f, std::vector<std::uint8_t>& out) {
  out.reserve(out.size() + frame_byte_size(f.lr.size(), f.hr.size()));
  out.insert(out.end(), kFrameMagic.begin(), kFrameMagic.end());
  detail::put(out, f.index);
  detail::put(out, f.time);
  detail::put(out, static_cast<std::uint32_t>(f.lr.size()));
  detail::put(out, static_cast<std::uint32_t>(f.hr.size()));
  for (const auto& p : f.lr) detail::put(out, p);
  for (const auto& p : f.hr) detail::put(out, p);
  detail::put(out, f.lr_ms);
  detail::put(out, f.hr_ms);
}

inline std::vector<std::uint8_t> encode_frame_bytes(const FrameRecord& f) {
  std::vector<std::uint8_t> out;
  append_frame_bytes(f, out);
  return out;
}

/// Decodes one frame starting at `offset`, advancing it. `base` is added to
/// offsets in error messages (position of `bytes` within a larger stream).
inline FrameRecord decode_frame_bytes(std::span<const std::uint8_t> bytes, std::size_t& offset,
                                      std::uint64_t base = 0) {
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - offset < n) {
      throw FormatError(std::string("truncated frame (") + what + ")", base + offset);
    }
  };
  auto get = [&](auto& value, const char* what) {
    need(sizeof value, what);
    std::memcpy(&value, bytes.data() + offset, sizeof value);
    offset += sizeof value;
  };
  need(4, "magic");
  if (std::memcmp(bytes.data() + offset, kFrameMagic.data(), 4) != 0) {
    throw FormatError("bad frame magic", base + offset);
  }
  offset += 4;
  FrameRecord f;
  std::uint32_t lr_count = 0, hr_count = 0;
  get(f.index, "index");
  get(f.time, "time");
  get(lr_count, "lr_count");
  get(hr_count, "hr_count");
  need(12 * (std::size_t{lr_count} + hr_count), "positions");
  f.lr.resize(lr_count);
  f.hr.resize(hr_count);
  if (lr_count) std::memcpy(f.lr.data(), bytes.data() + offset, 12 * std::size_t{lr_count});
  offset += 12 * std::size_t{lr_count};
  if (hr_count) std::memcpy(f.hr.data(), bytes.data() + offset, 12 * std::size_t{hr_count});
  offset += 12 * std::size_t{hr_count};
  get(f.lr_ms, "timing");
  get(f.hr_ms, "timing");
  return f;
}

/// Appends one frame and flushes, so a reader never sees half a frame from
/// a completed write.
inline void write_frame(const FrameRecord& f, std::ostream& out) {
  const auto bytes = encode_frame_bytes(f);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed to write frame " + std::to_string(f.index));
}

inline std::vector<FrameRecord> read_frames(std::span<const std::uint8_t> bytes) {
  std::vector<FrameRecord> frames;
  std::size_t offset = 0;
  while (offset < bytes.size()) frames.push_back(decode_frame_bytes(bytes, offset));
  return frames;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<FrameRecord> read_frames(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return read_frames(std::span<const std::uint8_t>(bytes));
}

/// Binary little-endian PLY point cloud.
inline void write_ply(const std::filesystem::path& path, std::span<const Point3f> points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  out.write(reinterpret_cast<const char*>(points.data()),
            static_cast<std::streamsize>(points.size() * sizeof(Point3f)));
  if (!out) throw IoError("failed writing " + path.string());
}

/// Writes frames on a background thread. `push` hands over one completed
/// frame and blocks only while the previous one is still being written, so
/// at most one frame is in flight.
class FrameWriter {
 public:
  explicit FrameWriter(const std::filesystem::path& path)
      : out_(path, std::ios::binary | std::ios::trunc), thread_([this] { loop(); }) {
    if (!out_) {
      stop();
      throw IoError("cannot open frame output " + path.string());
    }
  }

  FrameWriter(const FrameWriter&) = delete;
  FrameWriter& operator=(const FrameWriter&) = delete;

  ~FrameWriter() { stop(); }

  void push(FrameRecord frame) {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !pending_ || error_; });
    rethrow_locked();
    pending_ = std::move(frame);
    cv_.notify_all();
  }

  /// Waits for the in-flight frame and reports any write failure.
  void finish() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return (!pending_ && !busy_) || error_; });
    rethrow_locked();
  }

 private:
  void loop() {
    for (;;) {
      FrameRecord frame;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return pending_.has_value() || done_; });
        if (!pending_) return;
        frame = std::move(*pending_);
        pending_.reset();
        busy_ = true;
        cv_.notify_all();
      }
      std::string err;
      try {
        write_frame(frame, out_);
      } catch (const std::exception& e) {
        err = e.what();
      }
      std::lock_guard lock(mutex_);
      busy_ = false;
      if (!err.empty()) error_ = err;
      cv_.notify_all();
    }
  }

  void rethrow_locked() {
    if (error_) throw IoError(*error_);
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      done_ = true;
      cv_.notify_all();
    }
    if (thread_.joinable()) thread_.join();
  }

  std::ofstream out_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<FrameRecord> pending_;
  bool busy_ = false;
  bool done_ = false;
  std::optional<std::string> error_;
  std::thread thread_;
};

}  // namespace granular
