#pragma once

// Linear time-varying injection -> output response model. For fixed
// hydraulics the quality dynamics are linear in the booster setpoints, so
// the model is exact: y = y_free + G u.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <Eigen/Core>

#include "wdn/error.hpp"
#include "wdn/quality.hpp"

namespace wdn {

/// Gains are stored densely. Row i*H + k is output i at step k, column
/// j*H + l is input j at step l (both relative to first_step); G is zero
/// for l > k. u and y trajectories are H x n matrices, so their column-major
/// vectorisation matches this ordering.
struct LtvResponseModel {
  int first_step = 0;
  int horizon = 0;
  int n_in = 0;
  int n_out = 0;
  Mat gains;   // (n_out*H) x (n_in*H)
  Mat y_free;  // H x n_out

  double gain(int i, int k, int j, int l) const { return gains(i * horizon + k, j * horizon + l); }
  bool operator==(const LtvResponseModel& o) const {
    return first_step == o.first_step && horizon == o.horizon && n_in == o.n_in && n_out == o.n_out &&
           gains == o.gains && y_free == o.y_free;
  }
};

/// Extracts the model over steps [init.step, init.step + horizon) by running
/// all impulse responses side by side: lane 0 is the free response (initial
/// state, sources, zero injections), lane 1 + j*H + l a unit impulse of
/// booster j at step l from a chlorine free state without sources.
inline LtvResponseModel extract(const Network& net, const HydraulicSchedule& hyd, const QualityState& init,
                                int horizon = -1, const Realization& r = {}) {
  QualityEngine eng(net, hyd, r);
  if (horizon < 0) horizon = eng.last_step() - init.step;
  if (horizon <= 0 || init.step + horizon > eng.last_step()) {
    throw Error(ErrorCode::invalid_argument, "extract: horizon outside the hydraulic schedule");
  }
  LtvResponseModel m;
  m.first_step = init.step;
  m.horizon = horizon;
  m.n_in = static_cast<int>(net.boosters.size());
  m.n_out = static_cast<int>(net.monitored.size());
  const int H = horizon;
  const int lanes = 1 + m.n_in * H;
  m.gains = Mat::Zero(m.n_out * H, m.n_in * H);
  m.y_free.resize(H, m.n_out);
  auto ls = eng.lanes_from(init, lanes);
  Vec src = Vec::Zero(lanes);
  src[0] = 1.0;
  Mat u = Mat::Zero(lanes, m.n_in);
  for (int k = 0; k < H; ++k) {
    if (k > 0) {
      for (int j = 0; j < m.n_in; ++j) u(1 + j * H + k - 1, j) = 0.0;
    }
    for (int j = 0; j < m.n_in; ++j) u(1 + j * H + k, j) = 1.0;
    eng.step(ls, u, src);
    const Mat y = eng.outputs(ls);
    for (int i = 0; i < m.n_out; ++i) {
      m.y_free(k, i) = y(0, i);
      // Only impulses at l <= k can have arrived.
      for (int j = 0; j < m.n_in; ++j) {
        for (int l = 0; l <= k; ++l) m.gains(i * H + k, j * H + l) = y(1 + j * H + l, i);
      }
    }
  }
  return m;
}

/// y = y_free + G u for an H x n_in trajectory.
inline Mat predict(const LtvResponseModel& m, const Mat& u) {
  if (u.rows() != m.horizon || u.cols() != m.n_in) {
    throw Error(ErrorCode::dimension_mismatch, "predict: u must be " + std::to_string(m.horizon) + " x " +
                                                   std::to_string(m.n_in));
  }
  // Summed one H x H block at a time, inputs in order, so a sub-model made
  // of some of the blocks reproduces these outputs bit for bit.
  const int H = m.horizon;
  Mat y = m.y_free;
  for (int i = 0; i < m.n_out; ++i) {
    for (int j = 0; j < m.n_in; ++j) y.col(i).noalias() += m.gains.block(i * H, j * H, H, H) * u.col(j);
  }
  return y;
}

/// Binary dump: magic "WDNLTV01", four int64 dims (n_out, n_in, horizon,
/// first_step), then G and y_free as row-major float64.
inline void save_model(const LtvResponseModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
  os.write("WDNLTV01", 8);
  const std::int64_t dims[4] = {m.n_out, m.n_in, m.horizon, m.first_step};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  // Row-major payload.
  for (Eigen::Index r = 0; r < m.gains.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.gains.cols(); ++c) {
      const double v = m.gains(r, c);
      os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  for (Eigen::Index r = 0; r < m.y_free.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.y_free.cols(); ++c) {
      const double v = m.y_free(r, c);
      os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (!os) throw Error(ErrorCode::io_error, "write failed for " + path);
}

inline LtvResponseModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io_error, "cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "WDNLTV01", 8) != 0) throw Error(ErrorCode::parse_error, path + ": bad model header");
  std::int64_t dims[4];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!is || dims[0] < 0 || dims[1] < 0 || dims[2] <= 0) throw Error(ErrorCode::parse_error, path + ": bad dimensions");
  LtvResponseModel m;
  m.n_out = static_cast<int>(dims[0]);
  m.n_in = static_cast<int>(dims[1]);
  m.horizon = static_cast<int>(dims[2]);
  m.first_step = static_cast<int>(dims[3]);
  m.gains.resize(m.n_out * m.horizon, m.n_in * m.horizon);
  m.y_free.resize(m.horizon, m.n_out);
  for (Eigen::Index r = 0; r < m.gains.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.gains.cols(); ++c) is.read(reinterpret_cast<char*>(&m.gains(r, c)), sizeof(double));
  }
  for (Eigen::Index r = 0; r < m.y_free.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.y_free.cols(); ++c) is.read(reinterpret_cast<char*>(&m.y_free(r, c)), sizeof(double));
  }
  if (!is) throw Error(ErrorCode::parse_error, path + ": truncated model payload");
  return m;
}

}  // namespace wdn
