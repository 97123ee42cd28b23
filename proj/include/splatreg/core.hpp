// Copyright 2026 The splatreg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatreg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// ---------------------------------------------------------------------------
// Spherical harmonics. Real basis, standard normalization, index l*(l+1)+m.
// Evaluated color is coeff . basis + 0.5 per channel; no clamping here —
// RGB is clamped to [0,1] only at image export.
// ---------------------------------------------------------------------------

inline constexpr int kMaxShDegree = 3;

inline constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// Basis values for a unit direction, filled into out[0 .. (degree+1)^2).
inline void sh_basis(const Vec3& d, int degree, double* out) {
  const double x = d.x(), y = d.y(), z = d.z();
  out[0] = 0.28209479177387814;
  if (degree < 1) return;
  out[1] = 0.4886025119029199 * y;
  out[2] = 0.4886025119029199 * z;
  out[3] = 0.4886025119029199 * x;
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  out[4] = 1.0925484305920792 * x * y;
  out[5] = 1.0925484305920792 * y * z;
  out[6] = 0.31539156525252005 * (2.0 * zz - xx - yy);
  out[7] = 1.0925484305920792 * x * z;
  out[8] = 0.5462742152960396 * (xx - yy);
  if (degree < 3) return;
  out[9] = 0.5900435899266435 * y * (3.0 * xx - yy);
  out[10] = 2.890611442640554 * x * y * z;
  out[11] = 0.45704579946446573 * y * (4.0 * zz - xx - yy);
  out[12] = 0.3731763325901154 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  out[13] = 0.45704579946446573 * x * (4.0 * zz - xx - yy);
  out[14] = 1.445305721320277 * z * (xx - yy);
  out[15] = 0.5900435899266435 * x * (xx - 3.0 * yy);
}

// coeffs is channel-major: coeffs[ch * B + b], B = (degree+1)^2.
inline Vec3 sh_eval(std::span<const double> coeffs, int degree, const Vec3& view_dir) {
  const int B = sh_coeff_count(degree);
  double basis[16];
  sh_basis(view_dir, degree, basis);
  Vec3 rgb;
  for (int ch = 0; ch < 3; ++ch) {
    double v = 0.0;
    const double* c = coeffs.data() + ch * B;
    for (int b = 0; b < B; ++b) v += c[b] * basis[b];
    rgb[ch] = v + 0.5;
  }
  return rgb;
}

// ---------------------------------------------------------------------------
// Gaussian primitive. Scales live in log-space and opacity as a logit so the
// optimizer sees unconstrained parameters.
// ---------------------------------------------------------------------------

struct Gaussian {
  Vec3 center = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rot = Vec4(1, 0, 0, 0);  // quaternion (w, x, y, z); normalized before use
  double opacity_logit = 0.0;
  int sh_degree = 0;
  std::vector<double> sh;  // channel-major, 3 * (sh_degree+1)^2 values

  double opacity() const { return sigmoid(opacity_logit); }
  Vec3 scale() const { return log_scale.array().exp(); }

  static Gaussian make(const Vec3& center, const Vec3& scale, double opacity,
                       const Vec3& rgb, int sh_degree = 0) {
    Gaussian g;
    g.center = center;
    g.log_scale = scale.array().log();
    g.opacity_logit = logit(opacity);
    g.sh_degree = sh_degree;
    g.sh.assign(3 * sh_coeff_count(sh_degree), 0.0);
    const int B = sh_coeff_count(sh_degree);
    for (int ch = 0; ch < 3; ++ch) g.sh[ch * B] = (rgb[ch] - 0.5) / 0.28209479177387814;
    return g;
  }
};

using Scene = std::vector<Gaussian>;

inline Mat3 quat_to_rotation(const Vec4& q_unit) {
  const double w = q_unit[0], x = q_unit[1], y = q_unit[2], z = q_unit[3];
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

// Sigma = R S S^T R^T; eigenvalues are the squared per-axis scales.
inline Mat3 covariance(const Gaussian& g) {
  const Mat3 R = quat_to_rotation(g.rot.normalized());
  const Vec3 s2 = (2.0 * g.log_scale).array().exp();
  return R * s2.asDiagonal() * R.transpose();
}

// ---------------------------------------------------------------------------
// Pinhole camera, OpenCV axes (x right, y down, z forward).
// x_cam = R_wc * x_world + t_wc.
// ---------------------------------------------------------------------------

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();  // unit length
};

struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat3 R_wc = Mat3::Identity();
  Vec3 t_wc = Vec3::Zero();

  Vec3 center() const { return -R_wc.transpose() * t_wc; }
  Vec3 world_to_cam(const Vec3& p) const { return R_wc * p + t_wc; }
  Vec3 cam_to_world(const Vec3& p) const { return R_wc.transpose() * (p - t_wc); }
  Vec3 forward() const { return R_wc.row(2).transpose(); }

  void validate() const {
    if (fx <= 0 || fy <= 0) throw std::invalid_argument("camera: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera: empty image plane");
    const Mat3 RtR = R_wc.transpose() * R_wc;
    if ((RtR - Mat3::Identity()).norm() > 1e-9 || R_wc.determinant() < 0.999)
      throw std::invalid_argument("camera: R_wc is not a proper rotation");
  }
};

struct Projection {
  Vec2 px = Vec2::Zero();
  double z = 0.0;  // signed camera-space depth
  bool behind() const { return z <= 1e-9; }
};

inline Projection project(const Camera& cam, const Vec3& point) {
  const Vec3 pc = cam.world_to_cam(point);
  Projection out;
  out.z = pc.z();
  if (out.behind()) return out;
  out.px = Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
  return out;
}

// (u, v) are continuous pixel coordinates; pixel (i, j) is sampled at its
// center (i + 0.5, j + 0.5), and (cx, cy) maps to the optical axis.
inline Ray pixel_ray(const Camera& cam, double u, double v) {
  if (u < 0.0 || u > cam.width || v < 0.0 || v > cam.height)
    throw std::out_of_range("pixel_ray: pixel outside image bounds");
  const Vec3 dir_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  Ray ray;
  ray.origin = cam.center();
  ray.dir = (cam.R_wc.transpose() * dir_cam).normalized();
  return ray;
}

// Scale factor turning ray length t into camera-space z-depth for this pixel.
inline double pixel_depth_factor(const Camera& cam, double u, double v) {
  const double a = (u - cam.cx) / cam.fx;
  const double b = (v - cam.cy) / cam.fy;
  return 1.0 / std::sqrt(1.0 + a * a + b * b);
}

// Camera-space point of pixel (u, v) at z-depth z.
inline Vec3 unproject_cam(const Camera& cam, double u, double v, double z) {
  return Vec3((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z);
}

inline Vec3 unproject_world(const Camera& cam, double u, double v, double z) {
  return cam.cam_to_world(unproject_cam(cam, u, v, z));
}

// ---------------------------------------------------------------------------
// Row-major image buffer.
// ---------------------------------------------------------------------------

template <typename T>
struct Image {
  int width = 0, height = 0, channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c, T fill = T(0)) : width(w), height(h), channels(c) {
    data.assign(static_cast<size_t>(w) * h * c, fill);
  }

  T& at(int x, int y, int c = 0) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
  const T& at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  template <typename U>
  Image<U> cast() const {
    Image<U> out;
    out.width = width;
    out.height = height;
    out.channels = channels;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

using ImageBuffer = Image<float>;
using ImageD = Image<double>;

}  // namespace splatreg
