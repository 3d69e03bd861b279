#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "granular/frame_io.hpp"
#include "granular/simulation.hpp"

namespace granular {

struct TimingStats {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};

/// Nearest-rank statistics; all zero for an empty sample.
inline TimingStats timing_stats(std::vector<double> v) {
  TimingStats s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / double(v.size());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * double(n)));
  s.p95 = v[std::clamp<std::size_t>(rank, 1, n) - 1];
  s.max = v.back();
  return s;
}

struct FrameTiming {
  std::uint32_t index = 0;
  double lr_ms = 0.0;
  double hr_ms = 0.0;
};

struct RunSummary {
  std::uint32_t frames = 0;
  double sim_time = 0.0;
  std::size_t lr_count = 0;
  std::size_t hr_count = 0;
  TimingStats lr;
  TimingStats hr;
  TimingStats total;
  std::vector<FrameTiming> per_frame;

  void write_csv(std::ostream& out) const {
    out << "frame,lr_ms,hr_ms\n";
    out << std::setprecision(6);
    for (const auto& f : per_frame) out << f.index << ',' << f.lr_ms << ',' << f.hr_ms << '\n';
  }

  std::string report() const {
    std::ostringstream o;
    o << std::fixed << std::setprecision(3);
    o << frames << " frames, " << sim_time << " s simulated, " << lr_count << " LR / " << hr_count
      << " HR particles\n";
    auto line = [&](const char* name, const TimingStats& s) {
      o << "  " << name << " ms/frame: mean " << s.mean << "  median " << s.median << "  p95 " << s.p95
        << '\n';
    };
    line("LR   ", lr);
    line("HR   ", hr);
    line("total", total);
    return o.str();
  }
};

struct RunOptions {
  std::optional<std::uint32_t> frames;  // default: floor(duration / dt_hr)
  bool deterministic = false;           // zero the timing fields in frames
  std::optional<std::filesystem::path> ply_dir;
};

using FrameSink = std::function<void(FrameRecord&&)>;

/// Runs the simulation for the requested number of frames, handing each one
/// to `sink`. A simulation failure is rethrown naming the last good frame.
inline RunSummary run(Simulation& sim, const FrameSink& sink, const RunOptions& opts = {}) {
  RunSummary summary;
  summary.lr_count = sim.lr().size();
  summary.hr_count = sim.hr().size();
  const std::uint32_t n = opts.frames.value_or(frame_count(sim.scene().duration, sim.scene().hr_params.dt_hr));
  if (opts.ply_dir) std::filesystem::create_directories(*opts.ply_dir);
  std::vector<double> lr_ms, hr_ms, total_ms;
  lr_ms.reserve(n);
  hr_ms.reserve(n);
  total_ms.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    FrameRecord f;
    try {
      f = sim.advance_frame(true);
    } catch (const SimulationError& e) {
      throw SimulationError(std::string(e.what()) + "; last good frame " + std::to_string(sim.frame_index() - 1),
                            e.index());
    }
    summary.per_frame.push_back({f.index, f.lr_ms, f.hr_ms});
    lr_ms.push_back(f.lr_ms);
    hr_ms.push_back(f.hr_ms);
    total_ms.push_back(double(f.lr_ms) + double(f.hr_ms));
    if (opts.deterministic) f.lr_ms = f.hr_ms = 0.0f;
    if (opts.ply_dir) {
      std::ostringstream name;
      name << "frame_" << std::setw(5) << std::setfill('0') << f.index;
      write_ply(*opts.ply_dir / (name.str() + "_lr.ply"), f.lr);
      write_ply(*opts.ply_dir / (name.str() + "_hr.ply"), f.hr);
    }
    if (sink) sink(std::move(f));
  }
  summary.frames = n;
  summary.sim_time = sim.time();
  summary.lr = timing_stats(std::move(lr_ms));
  summary.hr = timing_stats(std::move(hr_ms));
  summary.total = timing_stats(std::move(total_ms));
  return summary;
}

/// run() writing frames to `out` through a background writer thread.
inline RunSummary run_to_file(Simulation& sim, const std::filesystem::path& out, const RunOptions& opts = {}) {
  FrameWriter writer(out);
  RunSummary s;
  try {
    s = run(sim, [&](FrameRecord&& f) { writer.push(std::move(f)); }, opts);
  } catch (...) {
    try {
      writer.finish();
    } catch (...) {
    }
    throw;
  }
  writer.finish();
  return s;
}

struct BenchResult {
  std::vector<RunSummary> runs;
  TimingStats lr;
  TimingStats hr;
  TimingStats total;

  void write_csv(std::ostream& out) const {
    out << "repeat,frame,lr_ms,hr_ms\n" << std::setprecision(6);
    for (std::size_t r = 0; r < runs.size(); ++r) {
      for (const auto& f : runs[r].per_frame) {
        out << r << ',' << f.index << ',' << f.lr_ms << ',' << f.hr_ms << '\n';
      }
    }
  }
};

/// Runs a freshly built copy of the scene `repeat` times without output.
inline BenchResult bench(const BuiltScene& scene, int repeat, std::optional<std::uint32_t> frames = {}) {
  if (repeat < 1) throw ParameterError("bench repeat must be >= 1");
  BenchResult b;
  std::vector<double> lr, hr, total;
  for (int r = 0; r < repeat; ++r) {
    Simulation sim(scene);
    RunOptions opts;
    opts.frames = frames;
    b.runs.push_back(run(sim, {}, opts));
    for (const auto& f : b.runs.back().per_frame) {
      lr.push_back(f.lr_ms);
      hr.push_back(f.hr_ms);
      total.push_back(f.lr_ms + f.hr_ms);
    }
  }
  b.lr = timing_stats(std::move(lr));
  b.hr = timing_stats(std::move(hr));
  b.total = timing_stats(std::move(total));
  return b;
}

}  // namespace granular
