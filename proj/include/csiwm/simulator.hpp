#pragma once

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csiwm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

inline constexpr double kSpeedOfLight = 299792458.0;

struct RoomBounds {
  Vec3 min = Vec3(0.0, 0.0, 0.0);
  Vec3 max = Vec3(12.0, 12.0, 3.0);
};

/// Static radio scene: distributed base stations with uniform linear arrays
/// in the horizontal plane and a fixed set of point scatterers.
struct SceneConfig {
  int num_bs = 2;
  int antennas = 4;
  int subcarriers = 64;
  double carrier_hz = 1.272e9;
  double bandwidth_hz = 100e6;
  std::vector<Vec3> bs_positions = {Vec3(2.0, -0.5, 2.5), Vec3(10.0, -0.5, 2.5)};
  /// Array axis direction per BS, radians from +x in the horizontal plane.
  std::vector<double> bs_array_azimuth = {0.0, 0.0};
  /// Element spacing in meters; 0 selects half a carrier wavelength.
  double element_spacing = 0.0;
  /// Paths per BS-UE link; the first is line of sight, the rest bounce off
  /// scatterers[0 .. paths-2].
  int paths = 3;
  std::vector<Vec3> scatterers = {Vec3(-0.5, 9.0, 1.5), Vec3(12.5, 7.0, 1.5)};
  /// Complex Gaussian noise std per entry, relative to the link's LoS amplitude.
  double noise_std = 1e-4;
  RoomBounds room;
  double ue_height = 1.0;

  double wavelength() const { return kSpeedOfLight / carrier_hz; }
  double spacing() const { return element_spacing > 0.0 ? element_spacing : 0.5 * wavelength(); }
  double subcarrier_hz(int k) const { return carrier_hz - 0.5 * bandwidth_hz + k * bandwidth_hz / subcarriers; }
  Vec3 antenna_position(int bs, int element) const;
  void validate() const;
};

struct MotionConfig {
  double dt = 0.1;
  double speed_min = 0.5;
  double speed_max = 1.5;
  double turn_rate_std = 0.05;
  int waypoints = 4;
  /// Base seed for dataset generation; trajectory i uses seed + i.
  std::uint64_t seed = 1;

  void validate() const;
};

/// Complex B x M x N_sub tensor, row-major.
struct CsiTensor {
  int num_bs = 0;
  int antennas = 0;
  int subcarriers = 0;
  Eigen::VectorXcd data;

  CsiTensor() = default;
  CsiTensor(int b, int m, int n) : num_bs(b), antennas(m), subcarriers(n), data(Eigen::VectorXcd::Zero(Eigen::Index(b) * m * n)) {}

  Eigen::Index offset(int b, int m, int k) const { return (Eigen::Index(b) * antennas + m) * subcarriers + k; }
  std::complex<double>& at(int b, int m, int k) { return data[offset(b, m, k)]; }
  std::complex<double> at(int b, int m, int k) const { return data[offset(b, m, k)]; }
  int rows() const { return num_bs * antennas; }
};

struct CsiSnapshot {
  CsiTensor csi;
  Vec3 position = Vec3::Zero();
  double timestamp = 0.0;
};

struct TrajectoryRecord {
  std::vector<CsiSnapshot> snapshots;
  std::vector<Vec2> actions;

  std::size_t steps() const { return actions.size(); }
};

/// Noiseless multipath response at a UE position.
CsiTensor channel_response(const SceneConfig& scene, const Vec3& ue);

/// UE path plus CSI for T steps (T + 1 snapshots).
TrajectoryRecord generate_trajectory(const SceneConfig& scene, const MotionConfig& motion, int steps,
                                     std::uint64_t seed);

/// Trajectories i = 0..count-1 with seeds motion.seed + i.
std::vector<TrajectoryRecord> generate_dataset(const SceneConfig& scene, const MotionConfig& motion, int count,
                                               int steps);

/// Planar velocity between consecutive positions.
std::vector<Vec2> actions_from_positions(std::span<const Vec3> positions, std::span<const double> timestamps);

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kTruncated, kDimensionMismatch, kInvalid, kIo };
  DatasetError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr char kDatasetMagic[8] = {'C', 'S', 'T', 'J', '0', '0', '0', '1'};

/// "CSTJ0001" little-endian dataset. Timestamps are stored as f64, positions
/// and CSI as f32; actions are recomputed on read.
void write_dataset(std::span<const TrajectoryRecord> trajectories, const std::filesystem::path& path);
std::vector<TrajectoryRecord> read_dataset(const std::filesystem::path& path);

}  // namespace csiwm
