#pragma once

// TUM RGB-D sequence layout plus IMU / legged-odometry CSV streams, TUM
// trajectory files and the flat key-value text format used for camera and
// pipeline configuration.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "legslam/geometry.hpp"
#include "legslam/preintegration.hpp"
#include "legslam/synthetic.hpp"

namespace legslam {

struct TimedPose {
  double timestamp = 0.0;
  Se3d pose;
};

/// Timestamps strictly increasing.
using Trajectory = std::vector<TimedPose>;

struct TimedPath {
  double timestamp = 0.0;
  std::filesystem::path path;
};

struct AssociatedFrame {
  double timestamp = 0.0;  // rgb stamp
  double depth_timestamp = 0.0;
  std::filesystem::path rgb;
  std::filesystem::path depth;
};

struct SequenceManifest {
  std::filesystem::path root;
  std::vector<TimedPath> rgb;
  std::vector<TimedPath> depth;
  std::vector<AssociatedFrame> frames;
  /// rgb frames without a depth partner.
  int dropped = 0;
  std::optional<Trajectory> ground_truth;
  std::vector<ImuSample> imu;
  std::vector<LeggedOdomSample> legged;
  CameraIntrinsics camera;
  Se3d T_b_c;
};

inline constexpr double kDefaultAssociationOffset = 0.02;

/// Greedy nearest-timestamp matching: all pairs within max_offset are taken
/// in order of increasing offset, each stamp used at most once. Returned
/// pairs (index into a, index into b) are sorted by a.
std::vector<std::pair<int, int>> associate_timestamps(std::span<const double> a, std::span<const double> b,
                                                      double max_offset = kDefaultAssociationOffset);

/// Reads rgb.txt / depth.txt (required), groundtruth.txt, imu.csv,
/// legged.csv and camera.txt (optional; TUM defaults otherwise). Throws
/// MissingIndexFile, NoAssociations, ParseError, IoError.
SequenceManifest load_tum_sequence(const std::filesystem::path& dir,
                                   double max_offset = kDefaultAssociationOffset);

/// "timestamp tx ty tz qx qy qz qw" lines, 6 decimals, '#' comments.
void write_trajectory(const Trajectory& trajectory, const std::filesystem::path& path);
/// Throws IoError, or ParseError naming the offending line.
Trajectory read_trajectory(const std::filesystem::path& path);

/// imu.csv: timestamp,wx,wy,wz,ax,ay,az (header line optional).
std::vector<ImuSample> read_imu_csv(const std::filesystem::path& path);
void write_imu_csv(std::span<const ImuSample> samples, const std::filesystem::path& path);
/// legged.csv: timestamp,tx,ty,tz,qx,qy,qz,qw (header line optional).
std::vector<LeggedOdomSample> read_legged_csv(const std::filesystem::path& path);
void write_legged_csv(std::span<const LeggedOdomSample> samples, const std::filesystem::path& path);

/// Flat "key = value" text; '#' starts a comment; blank lines ignored.
/// Throws IoError or ParseError (line number in the message).
std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path);

struct CameraFile {
  CameraIntrinsics camera;
  Se3d T_b_c;
};

/// Keys fx fy cx cy width height depth_scale and optional body_from_camera
/// ("tx ty tz qx qy qz qw").
CameraFile read_camera_file(const std::filesystem::path& path);
void write_camera_file(const CameraFile& file, const std::filesystem::path& path);

/// TUM intrinsics used when a sequence has no camera.txt.
CameraFile tum_default_camera();

/// Writes a synthetic sequence in the layout read by load_tum_sequence.
void write_sequence(const SyntheticSequence& seq, const std::filesystem::path& dir);

}  // namespace legslam
