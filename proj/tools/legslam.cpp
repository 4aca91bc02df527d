// Batch front end: run, eval, synth, ablate.
//
// Exit codes: 0 success, 1 input error, 2 tracking failure. The last line on
// stderr is always "status=<ok|input_error|tracking_failure> exit=<code>".

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "legslam/dataset.hpp"
#include "legslam/evaluation.hpp"
#include "legslam/image.hpp"
#include "legslam/pipeline.hpp"
#include "legslam/synthetic.hpp"

namespace fs = std::filesystem;
using namespace legslam;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kTrackingFailure = 2;

int finish(int code, const std::string& detail = {}) {
  const char* name = code == kOk ? "ok" : code == kInputError ? "input_error" : "tracking_failure";
  std::cerr << "status=" << name << " exit=" << code;
  if (!detail.empty()) std::cerr << ' ' << detail;
  std::cerr << '\n';
  return code;
}

PipelineConfig make_config(const std::string& config_path, const std::string& toggles) {
  PipelineConfig c = config_path.empty() ? PipelineConfig::defaults() : load_pipeline_config(config_path);
  if (!toggles.empty()) c.toggles = PipelineToggles::parse(toggles);
  return c;
}

struct Outputs {
  std::optional<fs::path> dir;
  bool ply = false;
  int overlay_every = 0;
};

SequenceRun run_manifest(const SequenceManifest& seq, const PipelineConfig& config, const Outputs& out) {
  Pipeline pipeline(config, seq.camera, seq.T_b_c);
  std::vector<double> times;
  for (const auto& f : seq.frames) times.push_back(f.timestamp);
  const auto load = [&](std::size_t i) {
    return std::pair{read_png_gray(seq.frames[i].rgb), read_png_depth(seq.frames[i].depth)};
  };
  FrameCallback overlay;
  if (out.dir && out.overlay_every > 0) {
    fs::create_directories(*out.dir / "overlays");
    overlay = [&](std::size_t i, const GrayImage& gray, const TrackingReport&, const Pipeline& p) {
      if (i % static_cast<std::size_t>(out.overlay_every) != 0 || !p.last_tracking()) return;
      RgbImage img(gray);
      for (const auto& t : p.last_tracking()->track.points) {
        if (t.status != TrackStatus::Tracked) continue;
        if (t.stream == StreamTag::ThreeDToTwoD) {
          draw_cross(img, t.pixel, 3, 0, 255, 0);
        } else {
          draw_cross(img, t.pixel, 3, 255, 160, 0);
        }
      }
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.png", i);
      write_png(*out.dir / "overlays" / name, img);
    };
  }
  SequenceRun run = run_sequence(pipeline, times, load, seq.imu, seq.legged, overlay);
  if (out.dir) {
    fs::create_directories(*out.dir);
    write_trajectory(run.trajectory, *out.dir / "trajectory.txt");
    write_report_csv(run.reports, *out.dir / "report.csv");
    if (out.ply) {
      std::vector<Point3> pts;
      for (const auto& m : pipeline.map_points()) pts.push_back(m.position);
      write_ply(*out.dir / "map.ply", pts);
    }
  }
  return run;
}

void print_timing(const SequenceRun& run) {
  StageTimings sum;
  for (const auto& r : run.reports) {
    sum.planes_ms += r.timings.planes_ms;
    sum.tracking_ms += r.timings.tracking_ms;
    sum.init_ms += r.timings.init_ms;
    sum.optimization_ms += r.timings.optimization_ms;
    sum.mapping_ms += r.timings.mapping_ms;
  }
  const double n = std::max<std::size_t>(run.reports.size(), 1);
  std::printf("timing ms/frame: planes %.1f tracking %.1f init %.1f optimization %.1f mapping %.1f (%.2f fps)\n",
              sum.planes_ms / n, sum.tracking_ms / n, sum.init_ms / n, sum.optimization_ms / n, sum.mapping_ms / n,
              run.frames_per_second);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-D / inertial / legged-odometry SLAM"};
  app.require_subcommand(1);

  std::string seq_dir, config_path, toggles, out_dir;
  bool ply = false;
  int overlay_every = 0;
  auto* run = app.add_subcommand("run", "Run the pipeline on a TUM-layout sequence");
  run->add_option("seq_dir", seq_dir, "Sequence directory")->required();
  run->add_option("--config", config_path, "Flat key = value pipeline config");
  run->add_option("--toggles", toggles, "Override toggles, e.g. r+o+i+d");
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_flag("--ply", ply, "Write the map points as map.ply");
  run->add_option("--overlays", overlay_every, "Write a tracking overlay every N frames");

  std::string est_path, gt_path;
  int rte_delta = 1;
  auto* eval = app.add_subcommand("eval", "ATE / RTE of a TUM trajectory against ground truth");
  eval->add_option("--est", est_path)->required();
  eval->add_option("--gt", gt_path)->required();
  eval->add_option("--rte-delta", rte_delta, "RTE interval in frames")->check(CLI::PositiveNumber);

  std::string scene = "room", trajectory = "walk", synth_out;
  std::uint64_t seed = 1;
  int frames = 200, bursts = 0;
  auto* synth = app.add_subcommand("synth", "Render a synthetic sequence in TUM layout");
  synth->add_option("--scene", scene, "room, corridor, plaza or mixed");
  synth->add_option("--trajectory", trajectory, "static, line, walk, ...");
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--seed", seed);
  synth->add_option("--frames", frames)->check(CLI::PositiveNumber);
  synth->add_option("--bursts", bursts, "IMU distortion bursts")->check(CLI::NonNegativeNumber);

  auto* ablate = app.add_subcommand("ablate", "Run r, r+o, r+i, r+d, r+o+i+d and tabulate");
  ablate->add_option("seq_dir", seq_dir, "Sequence directory")->required();
  ablate->add_option("--config", config_path, "Base config (toggles replaced per row)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : finish(kInputError, "reason=usage");
  }

  try {
    if (*run) {
      const SequenceManifest seq = load_tum_sequence(seq_dir);
      const SequenceRun r = run_manifest(seq, make_config(config_path, toggles), {out_dir, ply, overlay_every});
      std::printf("frames %zu keyframes %zu dropped %d\n", r.reports.size(),
                  static_cast<std::size_t>(std::count_if(r.reports.begin(), r.reports.end(),
                                                         [](const TrackingReport& x) { return x.keyframe; })),
                  seq.dropped);
      if (seq.ground_truth) {
        std::printf("ATE %.6f\n", compute_ate(r.trajectory, *seq.ground_truth).rmse);
      }
      print_timing(r);
      if (r.longest_unanchored_loss > kMaxUnanchoredLoss) {
        return finish(kTrackingFailure, "unanchored_lost_frames=" + std::to_string(r.longest_unanchored_loss));
      }
      return finish(kOk);
    }
    if (*eval) {
      const Trajectory est = read_trajectory(est_path);
      const Trajectory gt = read_trajectory(gt_path);
      std::printf("ATE %.6f\n", compute_ate(est, gt).rmse);
      std::printf("RTE %.6f\n", compute_rte(est, gt, rte_delta));
      return finish(kOk);
    }
    if (*synth) {
      SensorSpec s = SensorSpec::defaults();
      s.num_frames = frames;
      s.imu_bursts = bursts;
      const auto spline = trajectory_by_name(trajectory, s.first_frame_offset + frames / s.frame_rate + 1.0, seed);
      write_sequence(generate_synthetic_sequence(scene_by_name(scene, seed), spline, s, seed), synth_out);
      std::printf("wrote %d frames to %s\n", frames, synth_out.c_str());
      return finish(kOk);
    }
    if (*ablate) {
      const SequenceManifest seq = load_tum_sequence(seq_dir);
      std::printf("%-10s %10s %10s %8s %8s\n", "config", "ATE[m]", "RTE[m]", "lost", "fps");
      int failed = 0;
      for (const char* name : {"r", "r+o", "r+i", "r+d", "r+o+i+d"}) {
        const SequenceRun r = run_manifest(seq, make_config(config_path, name), {});
        const int lost = static_cast<int>(std::count_if(r.reports.begin(), r.reports.end(),
                                                        [](const TrackingReport& x) { return x.tracking_lost; }));
        // A failed row is reported as "\" in place of its errors.
        if (r.longest_unanchored_loss > kMaxUnanchoredLoss) {
          ++failed;
          std::printf("%-10s %10s %10s %8d %8.2f\n", name, "\\", "\\", lost, r.frames_per_second);
        } else if (seq.ground_truth) {
          std::printf("%-10s %10.4f %10.4f %8d %8.2f\n", name, compute_ate(r.trajectory, *seq.ground_truth).rmse,
                      compute_rte(r.trajectory, *seq.ground_truth), lost, r.frames_per_second);
        } else {
          std::printf("%-10s %10s %10s %8d %8.2f\n", name, "-", "-", lost, r.frames_per_second);
        }
        std::fflush(stdout);
      }
      // Failed rows are results of the ablation, not errors of the command.
      return finish(kOk, "failed_rows=" + std::to_string(failed));
    }
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return finish(kInputError, "error=" + std::string(to_string(e.code())));
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return finish(kInputError);
  }
  return finish(kInputError);
}
