// Headless driver: simulate / bench / sample / serve.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "granular/granular.hpp"
#include "granular/live/server.hpp"

namespace fs = std::filesystem;
using namespace granular;

namespace {

enum Exit { kOk = 0, kConfig = 2, kSimulation = 3, kIo = 4 };

Scene load(const fs::path& path, std::optional<std::uint64_t> seed, bool deterministic) {
  Scene s = load_scene(path);
  if (seed) s.seed = *seed;
  if (deterministic) {
    s.deterministic = true;
    s.lr.deterministic = true;
    s.hr.deterministic = true;
  }
  return s;
}

int cmd_simulate(const fs::path& scene_path, const fs::path& out, std::optional<std::uint32_t> frames,
                 bool deterministic, std::optional<std::uint64_t> seed, std::optional<fs::path> ply_dir,
                 std::optional<fs::path> csv) {
  const Scene scene = load(scene_path, seed, deterministic);
  Simulation sim(build_scene(scene));
  RunOptions opts;
  opts.frames = frames;
  opts.deterministic = scene.deterministic;
  opts.ply_dir = ply_dir;
  const RunSummary summary = run_to_file(sim, out, opts);
  std::cout << summary.report();
  if (csv) {
    std::ofstream f(*csv);
    if (!f) throw IoError("cannot write " + csv->string());
    summary.write_csv(f);
  }
  return kOk;
}

int cmd_bench(const fs::path& scene_path, int repeat, const fs::path& csv, std::optional<std::uint32_t> frames) {
  const Scene scene = load(scene_path, std::nullopt, false);
  const BuiltScene built = build_scene(scene);
  std::cout << "scene '" << built.name << "': " << built.lr.size() << " LR / " << built.hr.size()
            << " HR particles, " << repeat << " repeats\n";
  const BenchResult b = bench(built, repeat, frames);
  std::ofstream f(csv);
  if (!f) throw IoError("cannot write " + csv.string());
  b.write_csv(f);
  RunSummary all;
  all.frames = 0;
  for (const auto& r : b.runs) all.frames += r.frames;
  all.sim_time = b.runs.empty() ? 0.0 : b.runs.front().sim_time;
  all.lr_count = built.lr.size();
  all.hr_count = built.hr.size();
  all.lr = b.lr;
  all.hr = b.hr;
  all.total = b.total;
  std::cout << all.report();
  return kOk;
}

int cmd_sample(const fs::path& mesh_path, double radius, const std::string& mode, const fs::path& out,
               std::uint64_t seed) {
  const TriangleMesh mesh = load_mesh(mesh_path);
  const auto points = mode == "volume" ? sample_volume(mesh, radius, seed) : sample_surface(mesh, radius, seed);
  if (out.extension() == ".ply") {
    write_ply(out, to_points(points));
  } else {
    std::ofstream f(out);
    if (!f) throw IoError("cannot write " + out.string());
    f.precision(17);
    for (const auto& p : points) f << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    if (!f) throw IoError("failed writing " + out.string());
  }
  std::cout << points.size() << " samples\n";
  return kOk;
}

int cmd_serve(const fs::path& scene_path, const std::string& bind, std::uint32_t decimate,
              std::optional<fs::path> web_dir, std::optional<std::uint64_t> seed) {
  const Scene scene = load(scene_path, seed, false);
  live::ServerOptions opts;
  try {
    std::tie(opts.host, opts.port) = live::parse_bind(bind);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  opts.decimate = decimate;
  opts.web_dir = web_dir;

  // Wait for SIGINT / SIGTERM on this thread; workers inherit the mask.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  live::Server server(build_scene(scene), opts);
  server.start();
  int sig = 0;
  sigwait(&set, &sig);
  std::cerr << "[serve] shutting down after " << server.frames_emitted() << " frames\n";
  server.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Granular material simulation: LR solver + HR upsampler"};
  app.require_subcommand(1);

  fs::path scene_path, out, csv, mesh_path;
  std::optional<std::uint32_t> frames;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> ply_dir, csv_opt, web_dir;
  bool deterministic = false;
  int repeat = 3;
  double radius = 0.0;
  std::string mode = "volume";
  std::string bind = "127.0.0.1:8080";
  std::uint32_t decimate = 1;
  std::uint64_t sample_seed = 1;

  auto* sim = app.add_subcommand("simulate", "Run a scene headless and write a frame file");
  sim->add_option("scene", scene_path, "Scene file (TOML)")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out, "Output frame file")->required();
  sim->add_option("--frames", frames, "Number of frames (default: duration / hr.dt)");
  sim->add_flag("--deterministic", deterministic, "Serial solve, zero timing fields; byte-stable output");
  sim->add_option("--seed", seed, "Override the scene seed");
  sim->add_option("--ply-dir", ply_dir, "Also write per-frame PLY point clouds here");
  sim->add_option("--csv", csv_opt, "Write the per-frame timing table");

  auto* ben = app.add_subcommand("bench", "Time repeated runs of a scene");
  ben->add_option("scene", scene_path, "Scene file (TOML)")->required()->check(CLI::ExistingFile);
  ben->add_option("--repeat", repeat, "Number of runs")->check(CLI::PositiveNumber);
  ben->add_option("--csv", csv, "Per-frame timing table")->required();
  ben->add_option("--frames", frames, "Frames per run (default: duration / hr.dt)");

  auto* smp = app.add_subcommand("sample", "Sample a mesh into particles");
  smp->add_option("mesh", mesh_path, "Mesh file (.obj or binary .stl)")->required()->check(CLI::ExistingFile);
  smp->add_option("--radius", radius, "Particle radius")->required()->check(CLI::PositiveNumber);
  smp->add_option("--mode", mode, "volume or surface")->check(CLI::IsMember({"volume", "surface"}));
  smp->add_option("--out", out, "Output (.ply, otherwise 'x y z' text)")->required();
  smp->add_option("--seed", sample_seed, "Sampling seed");

  auto* srv = app.add_subcommand("serve", "Live session over WebSocket");
  srv->add_option("scene", scene_path, "Scene file (TOML)")->required()->check(CLI::ExistingFile);
  srv->add_option("--bind", bind, "addr:port");
  srv->add_option("--decimate", decimate, "Send every k-th HR particle")->check(CLI::PositiveNumber);
  srv->add_option("--web-dir", web_dir, "Serve static viewer files from this directory");
  srv->add_option("--seed", seed, "Override the scene seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*sim) return cmd_simulate(scene_path, out, frames, deterministic, seed, ply_dir, csv_opt);
    if (*ben) return cmd_bench(scene_path, repeat, csv, frames);
    if (*smp) return cmd_sample(mesh_path, radius, mode, out, sample_seed);
    if (*srv) return cmd_serve(scene_path, bind, decimate, web_dir, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const SimulationError& e) {
    std::cerr << "simulation error: " << e.what() << '\n';
    return kSimulation;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    // Geometry / parameter problems come from the scene or arguments.
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  }
  return kOk;
}
