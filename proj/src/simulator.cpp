#include "csiwm/simulator.hpp"

#include "csiwm/binary_io.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace csiwm {

namespace {

constexpr double kReflectionFactor = 0.6;
constexpr double kSteeringGain = 0.3;

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Vec3 SceneConfig::antenna_position(int bs, int element) const {
  const double az = bs_array_azimuth.at(std::size_t(bs));
  const Vec3 axis(std::cos(az), std::sin(az), 0.0);
  return bs_positions.at(std::size_t(bs)) + (element - 0.5 * (antennas - 1)) * spacing() * axis;
}

void SceneConfig::validate() const {
  require(num_bs >= 1 && antennas >= 1 && subcarriers >= 1, "scene: num_bs, antennas and subcarriers must be >= 1");
  require(bandwidth_hz > 0.0, "scene: bandwidth must be positive");
  require(carrier_hz > 0.0, "scene: carrier frequency must be positive");
  require(int(bs_positions.size()) == num_bs, "scene: bs_positions must list one position per BS");
  require(int(bs_array_azimuth.size()) == num_bs, "scene: bs_array_azimuth must list one angle per BS");
  require(paths >= 1, "scene: paths must be >= 1");
  require(int(scatterers.size()) >= paths - 1, "scene: need at least paths - 1 scatterers");
  require(noise_std >= 0.0, "scene: noise_std must be non-negative");
  require(element_spacing >= 0.0, "scene: element_spacing must be non-negative");
  require((room.max.array() >= room.min.array()).all(), "scene: room bounds are inverted");
}

void MotionConfig::validate() const {
  require(dt > 0.0, "motion: dt must be positive");
  require(speed_min >= 0.0 && speed_max >= speed_min, "motion: need 0 <= speed_min <= speed_max");
  require(turn_rate_std >= 0.0, "motion: turn_rate_std must be non-negative");
  require(waypoints >= 1, "motion: waypoints must be >= 1");
}

CsiTensor channel_response(const SceneConfig& scene, const Vec3& ue) {
  const double lambda = scene.wavelength();
  CsiTensor h(scene.num_bs, scene.antennas, scene.subcarriers);
  std::vector<double> freqs(std::size_t(scene.subcarriers));
  for (int k = 0; k < scene.subcarriers; ++k) freqs[std::size_t(k)] = scene.subcarrier_hz(k);

  for (int b = 0; b < scene.num_bs; ++b) {
    for (int m = 0; m < scene.antennas; ++m) {
      const Vec3 ant = scene.antenna_position(b, m);
      for (int p = 0; p < scene.paths; ++p) {
        double length = 0.0;
        if (p == 0) {
          length = (ue - ant).norm();
        } else {
          const Vec3& s = scene.scatterers[std::size_t(p - 1)];
          length = (ue - s).norm() + (s - ant).norm();
        }
        if (!(length > 0.0)) throw std::domain_error("channel_response: zero path length");
        const double amplitude = lambda / (4.0 * std::numbers::pi * length) * (p == 0 ? 1.0 : kReflectionFactor);
        const double delay = length / kSpeedOfLight;
        for (int k = 0; k < scene.subcarriers; ++k) {
          const double phase = -2.0 * std::numbers::pi * freqs[std::size_t(k)] * delay;
          h.at(b, m, k) += std::polar(amplitude, phase);
        }
      }
    }
  }
  return h;
}

TrajectoryRecord generate_trajectory(const SceneConfig& scene, const MotionConfig& motion, int steps,
                                     std::uint64_t seed) {
  scene.validate();
  motion.validate();
  if (steps < 1) throw std::invalid_argument("generate_trajectory: need at least one step");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Vec3 lo = scene.room.min, hi = scene.room.max;
  auto random_point = [&] {
    return Vec3(lo.x() + unit(rng) * (hi.x() - lo.x()), lo.y() + unit(rng) * (hi.y() - lo.y()), scene.ue_height);
  };
  auto random_speed = [&] { return motion.speed_min + unit(rng) * (motion.speed_max - motion.speed_min); };

  std::vector<Vec3> waypoints;
  for (int i = 0; i < motion.waypoints; ++i) waypoints.push_back(random_point());
  Vec3 pos = random_point();
  std::size_t target = 0;
  double speed = random_speed();
  double heading = std::atan2(waypoints[0].y() - pos.y(), waypoints[0].x() - pos.x());

  TrajectoryRecord record;
  record.snapshots.reserve(std::size_t(steps) + 1);
  for (int t = 0; t <= steps; ++t) {
    CsiSnapshot snap;
    snap.position = pos;
    snap.timestamp = t * motion.dt;
    snap.csi = channel_response(scene, pos);
    if (scene.noise_std > 0.0) {
      for (int b = 0; b < scene.num_bs; ++b) {
        const double los = scene.wavelength() / (4.0 * std::numbers::pi * (pos - scene.antenna_position(b, 0)).norm());
        const double sigma = scene.noise_std * los / std::numbers::sqrt2;
        for (int m = 0; m < scene.antennas; ++m)
          for (int k = 0; k < scene.subcarriers; ++k) {
            const double re = normal(rng), im = normal(rng);
            snap.csi.at(b, m, k) += std::complex<double>(sigma * re, sigma * im);
          }
      }
    }
    record.snapshots.push_back(std::move(snap));
    if (t == steps) break;

    // Smooth random-waypoint motion: steer toward the active waypoint with
    // a noisy turn rate, move, clip to the room.
    const Vec3& wp = waypoints[target];
    const double desired = std::atan2(wp.y() - pos.y(), wp.x() - pos.x());
    heading = wrap_angle(heading + kSteeringGain * wrap_angle(desired - heading) + motion.turn_rate_std * normal(rng));
    pos.x() = std::clamp(pos.x() + speed * motion.dt * std::cos(heading), lo.x(), hi.x());
    pos.y() = std::clamp(pos.y() + speed * motion.dt * std::sin(heading), lo.y(), hi.y());
    if ((wp - pos).head<2>().norm() < std::max(2.0 * speed * motion.dt, 0.25)) {
      waypoints[target] = random_point();
      target = (target + 1) % waypoints.size();
      speed = random_speed();
    }
  }

  std::vector<Vec3> positions;
  std::vector<double> times;
  for (const auto& s : record.snapshots) {
    positions.push_back(s.position);
    times.push_back(s.timestamp);
  }
  record.actions = actions_from_positions(positions, times);
  return record;
}

std::vector<TrajectoryRecord> generate_dataset(const SceneConfig& scene, const MotionConfig& motion, int count,
                                               int steps) {
  std::vector<TrajectoryRecord> out;
  out.reserve(std::size_t(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(generate_trajectory(scene, motion, steps, motion.seed + std::uint64_t(i)));
  return out;
}

std::vector<Vec2> actions_from_positions(std::span<const Vec3> positions, std::span<const double> timestamps) {
  if (positions.size() != timestamps.size()) throw std::invalid_argument("actions_from_positions: length mismatch");
  if (positions.size() < 2) throw std::invalid_argument("actions_from_positions: need at least two positions");
  std::vector<Vec2> actions;
  actions.reserve(positions.size() - 1);
  for (std::size_t t = 0; t + 1 < positions.size(); ++t) {
    const double dt = timestamps[t + 1] - timestamps[t];
    if (!(dt > 0.0)) {
      throw std::invalid_argument("actions_from_positions: timestamps must be strictly increasing (index " +
                                  std::to_string(t + 1) + ")");
    }
    actions.push_back((positions[t + 1] - positions[t]).head<2>() / dt);
  }
  return actions;
}

void write_dataset(std::span<const TrajectoryRecord> trajectories, const std::filesystem::path& path) {
  if (trajectories.empty()) throw DatasetError(DatasetError::Kind::kInvalid, "write_dataset: empty trajectory list");
  const auto& ref = trajectories.front().snapshots.at(0).csi;
  io::ByteWriter w;
  w.put_bytes(std::string_view(kDatasetMagic, 8));
  w.put(std::uint32_t(ref.num_bs));
  w.put(std::uint32_t(ref.antennas));
  w.put(std::uint32_t(ref.subcarriers));
  w.put(std::uint32_t(trajectories.size()));
  for (const auto& traj : trajectories) {
    if (traj.snapshots.empty()) throw DatasetError(DatasetError::Kind::kInvalid, "write_dataset: empty trajectory");
    w.put(std::uint32_t(traj.snapshots.size()));
    for (const auto& s : traj.snapshots) w.put(s.timestamp);
    for (const auto& s : traj.snapshots)
      for (int i = 0; i < 3; ++i) w.put(float(s.position[i]));
    for (const auto& s : traj.snapshots) {
      if (s.csi.num_bs != ref.num_bs || s.csi.antennas != ref.antennas || s.csi.subcarriers != ref.subcarriers) {
        throw DatasetError(DatasetError::Kind::kDimensionMismatch, "write_dataset: inconsistent CSI dimensions");
      }
      for (Eigen::Index i = 0; i < s.csi.data.size(); ++i) {
        w.put(float(s.csi.data[i].real()));
        w.put(float(s.csi.data[i].imag()));
      }
    }
  }
  try {
    io::atomic_write(path, w.bytes());
  } catch (const io::IoError& e) {
    throw DatasetError(DatasetError::Kind::kIo, e.what());
  }
}

std::vector<TrajectoryRecord> read_dataset(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const io::IoError& e) {
    throw DatasetError(DatasetError::Kind::kIo, e.what());
  }
  io::ByteReader r(bytes);
  std::vector<TrajectoryRecord> out;
  try {
    if (r.get_bytes(8) != std::string_view(kDatasetMagic, 8)) {
      throw DatasetError(DatasetError::Kind::kBadMagic, "bad magic in dataset " + path.string());
    }
    const auto num_bs = int(r.get<std::uint32_t>());
    const auto antennas = int(r.get<std::uint32_t>());
    const auto subcarriers = int(r.get<std::uint32_t>());
    const auto count = r.get<std::uint32_t>();
    if (num_bs < 1 || antennas < 1 || subcarriers < 1) {
      throw DatasetError(DatasetError::Kind::kDimensionMismatch, "dataset declares an empty CSI dimension");
    }
    const std::size_t csi_bytes = std::size_t(num_bs) * antennas * subcarriers * 2 * sizeof(float);
    for (std::uint32_t n = 0; n < count; ++n) {
      const auto len = r.get<std::uint32_t>();
      if (len < 1) throw DatasetError(DatasetError::Kind::kInvalid, "dataset trajectory with no snapshots");
      // Fail fast on a short file before allocating.
      if (r.remaining() < std::size_t(len) * (sizeof(double) + 3 * sizeof(float) + csi_bytes)) {
        throw io::TruncatedError("truncated trajectory " + std::to_string(n));
      }
      TrajectoryRecord traj;
      traj.snapshots.resize(len);
      for (auto& s : traj.snapshots) s.timestamp = r.get<double>();
      for (auto& s : traj.snapshots)
        for (int i = 0; i < 3; ++i) s.position[i] = double(r.get<float>());
      for (auto& s : traj.snapshots) {
        s.csi = CsiTensor(num_bs, antennas, subcarriers);
        for (Eigen::Index i = 0; i < s.csi.data.size(); ++i) {
          const float re = r.get<float>();
          const float im = r.get<float>();
          s.csi.data[i] = {double(re), double(im)};
        }
      }
      if (len >= 2) {
        std::vector<Vec3> positions;
        std::vector<double> times;
        for (const auto& s : traj.snapshots) {
          positions.push_back(s.position);
          times.push_back(s.timestamp);
        }
        try {
          traj.actions = actions_from_positions(positions, times);
        } catch (const std::invalid_argument& e) {
          throw DatasetError(DatasetError::Kind::kInvalid, std::string("dataset trajectory ") + std::to_string(n) + ": " + e.what());
        }
      }
      out.push_back(std::move(traj));
    }
    if (r.remaining() != 0) {
      throw DatasetError(DatasetError::Kind::kDimensionMismatch,
                         "dataset has " + std::to_string(r.remaining()) + " trailing bytes; header dimensions disagree with payload");
    }
  } catch (const io::TruncatedError& e) {
    throw DatasetError(DatasetError::Kind::kTruncated, std::string("dataset ") + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace csiwm
