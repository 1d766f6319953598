#pragma once

// Two-view pinhole camera math and depth-consistency ground-truth match
// generation over a coarse cell grid.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clf/error.hpp"

namespace clf {

// ---------------------------------------------------------------------------
// Small fixed-size linear algebra (doubles throughout)
// ---------------------------------------------------------------------------

struct Vec2 {
  double u = 0.0, v = 0.0;
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{};

  static Mat3 identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }

  double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }
  double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }

  Mat3 transposed() const {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }

  double det() const {
    const auto& a = m;
    return a[0] * (a[4] * a[8] - a[5] * a[7]) -
           a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
  }
};

inline Vec3 operator*(const Mat3& a, Vec3 v) {
  return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
          a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
          a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

inline Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 3; ++k) acc += a(i, k) * b(k, j);
      r(i, j) = acc;
    }
  return r;
}

// Rodrigues rotation about a (not necessarily unit) axis.
inline Mat3 rotation_from_axis_angle(Vec3 axis, double angle) {
  double n = norm(axis);
  if (n == 0.0) return Mat3::identity();
  Vec3 u = (1.0 / n) * axis;
  double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  Mat3 r;
  r.m = {c + u.x * u.x * t,       u.x * u.y * t - u.z * s, u.x * u.z * t + u.y * s,
         u.y * u.x * t + u.z * s, c + u.y * u.y * t,       u.y * u.z * t - u.x * s,
         u.z * u.x * t - u.y * s, u.z * u.y * t + u.x * s, c + u.z * u.z * t};
  return r;
}

inline bool is_rotation(const Mat3& r, double tol) {
  Mat3 rtr = r.transposed() * r;
  Mat3 eye = Mat3::identity();
  for (std::size_t i = 0; i < 9; ++i)
    if (std::abs(rtr.m[i] - eye.m[i]) > tol) return false;
  return std::abs(r.det() - 1.0) <= tol;
}

// ---------------------------------------------------------------------------
// Cameras and depth maps
// ---------------------------------------------------------------------------

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;  // focal lengths, pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels
};

// World-to-camera transform: p_cam = R * p_world + t.
struct CameraExtrinsics {
  Mat3 R = Mat3::identity();
  Vec3 t;
};

struct Camera {
  CameraIntrinsics intr;
  CameraExtrinsics extr;
};

inline void validate_intrinsics(const CameraIntrinsics& k) {
  if (!(k.fx > 0.0) || !(k.fy > 0.0))
    throw geometry_error("intrinsics: focal lengths must be positive, got fx=" +
                         std::to_string(k.fx) + " fy=" + std::to_string(k.fy));
}

inline void validate_extrinsics(const CameraExtrinsics& e, double tol = 1e-6) {
  if (!is_rotation(e.R, tol))
    throw geometry_error("extrinsics: R is not a rotation matrix");
}

// Per-pixel depth in the same length units as camera translations. A value
// <= 0 marks an invalid measurement.
struct DepthMap {
  std::size_t width = 0, height = 0;
  std::vector<float> values;  // row-major

  float at(std::size_t x, std::size_t y) const {
    return values[y * width + x];
  }
  bool valid_at(std::size_t x, std::size_t y) const { return at(x, y) > 0.0f; }
};

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
};

// Pixel + depth to a world-space point: camera-space
// ((u-cx)d/fx, (v-cy)d/fy, d), then world = R^T (p - t).
inline Vec3 unproject(Vec2 pixel, double depth, const CameraIntrinsics& k,
                      const CameraExtrinsics& e) {
  if (!(depth > 0.0))
    throw geometry_error("unproject: depth must be positive, got " +
                         std::to_string(depth));
  Vec3 cam{(pixel.u - k.cx) * depth / k.fx, (pixel.v - k.cy) * depth / k.fy,
           depth};
  return e.R.transposed() * (cam - e.t);
}

inline constexpr double kBehindCameraEps = 1e-9;

// Non-throwing projection; returns false when the point sits behind (or
// numerically on) the camera plane.
inline bool try_project(Vec3 world, const CameraIntrinsics& k,
                        const CameraExtrinsics& e, Projection& out) {
  Vec3 q = e.R * world + e.t;
  if (q.z <= kBehindCameraEps) return false;
  out.pixel = {k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy};
  out.depth = q.z;
  return true;
}

inline Projection project(Vec3 world, const CameraIntrinsics& k,
                          const CameraExtrinsics& e) {
  Projection p;
  if (!try_project(world, k, e, p))
    throw geometry_error("project: point is behind the camera");
  return p;
}

// ---------------------------------------------------------------------------
// Ground-truth matches over the coarse grid
// ---------------------------------------------------------------------------

// Coarse cell matches between two views. Cells index row-major grids of
// ceil(H/step) x ceil(W/step); dense is the N_A x N_B indicator matrix.
struct GroundTruthMatches {
  std::size_t grid_a_w = 0, grid_a_h = 0;
  std::size_t grid_b_w = 0, grid_b_h = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (cellA, cellB)
  std::vector<std::uint8_t> dense;                         // [n_a * n_b]

  std::size_t n_a() const { return grid_a_w * grid_a_h; }
  std::size_t n_b() const { return grid_b_w * grid_b_h; }
};

inline std::size_t grid_cells(std::size_t extent, std::size_t step) {
  return (extent + step - 1) / step;
}

// Nearest pixel with halves rounded away from zero.
inline long round_pixel(double x) { return std::lround(x); }

// Depth-consistency match generation:
//   1. sample cell centers on a stride `grid_step` grid in A, skipping
//      invalid depths;
//   2. unproject with A's depth;
//   3. project into B;
//   4. accept iff the projected pixel lands inside B, B's depth at the
//      nearest pixel is valid, and the relative depth gap is within
//      depth_tol. The pair is (source cell, cell containing the projection).
inline GroundTruthMatches generate_ground_truth(
    const DepthMap& depth_a, const DepthMap& depth_b, const Camera& cam_a,
    const Camera& cam_b, std::size_t grid_step = 16, double depth_tol = 0.02) {
  if (grid_step < 1)
    throw contract_error("generate_ground_truth: grid_step must be >= 1");
  if (depth_a.values.size() != depth_a.width * depth_a.height ||
      depth_b.values.size() != depth_b.width * depth_b.height)
    throw contract_error(
        "generate_ground_truth: depth map storage does not match its size");
  if (depth_a.width == 0 || depth_a.height == 0 || depth_b.width == 0 ||
      depth_b.height == 0)
    throw contract_error("generate_ground_truth: empty depth map");

  GroundTruthMatches gt;
  gt.grid_a_w = grid_cells(depth_a.width, grid_step);
  gt.grid_a_h = grid_cells(depth_a.height, grid_step);
  gt.grid_b_w = grid_cells(depth_b.width, grid_step);
  gt.grid_b_h = grid_cells(depth_b.height, grid_step);
  gt.dense.assign(gt.n_a() * gt.n_b(), 0);

  double half = 0.5 * static_cast<double>(grid_step);
  for (std::size_t cy = 0; cy < gt.grid_a_h; ++cy)
    for (std::size_t cx = 0; cx < gt.grid_a_w; ++cx) {
      double u = static_cast<double>(cx * grid_step) + half;
      double v = static_cast<double>(cy * grid_step) + half;
      long ui = round_pixel(u), vi = round_pixel(v);
      // Ragged edge cells may center outside the image; they carry no sample.
      if (ui < 0 || vi < 0 || ui >= static_cast<long>(depth_a.width) ||
          vi >= static_cast<long>(depth_a.height))
        continue;
      float d = depth_a.at(static_cast<std::size_t>(ui),
                           static_cast<std::size_t>(vi));
      if (!(d > 0.0f)) continue;

      Vec3 world = unproject({u, v}, static_cast<double>(d), cam_a.intr,
                             cam_a.extr);
      Projection proj;
      if (!try_project(world, cam_b.intr, cam_b.extr, proj)) continue;

      long ub = round_pixel(proj.pixel.u), vb = round_pixel(proj.pixel.v);
      if (ub < 0 || vb < 0 || ub >= static_cast<long>(depth_b.width) ||
          vb >= static_cast<long>(depth_b.height))
        continue;
      float db = depth_b.at(static_cast<std::size_t>(ub),
                            static_cast<std::size_t>(vb));
      if (!(db > 0.0f)) continue;
      if (std::abs(proj.depth - static_cast<double>(db)) >
          depth_tol * static_cast<double>(db))
        continue;

      std::size_t cell_a = cy * gt.grid_a_w + cx;
      std::size_t cell_b =
          (static_cast<std::size_t>(vb) / grid_step) * gt.grid_b_w +
          static_cast<std::size_t>(ub) / grid_step;
      gt.pairs.emplace_back(cell_a, cell_b);
      gt.dense[cell_a * gt.n_b() + cell_b] = 1;
    }
  return gt;
}

}  // namespace clf
