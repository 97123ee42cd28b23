// Copyright 2026 The splatreg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "splatreg/core.hpp"
#include "splatreg/parallel.hpp"

namespace splatreg {

struct RenderConfig {
  double e_cutoff = std::exp(-4.5);  // 3-sigma support
  double alpha_max = 0.999;          // per-sample alpha*E clamp, keeps T > 0
  double t_stop = 1e-4;              // early-stop transmittance
  double t_min = 0.01;               // near plane, ray length
  double eps_u = 1e-6;               // mean-depth normalization floor
  Vec3 background = Vec3::Zero();
  bool exhaustive = false;   // test every Gaussian against every pixel (oracle path)
  bool with_normals = true;  // cache per-sample Gaussian normals for the normal loss
  int tile = 16;             // candidate-binning tile size in pixels
};

enum SampleFlags : uint8_t {
  kSampleClamped = 1,         // alpha*E hit alpha_max; no gradient through the clamp
  kSampleNormalFallback = 2,  // density gradient vanished; shortest-axis normal used
  kSampleNormalFlipped = 4,   // normal negated to satisfy n . r <= 0
};

struct RaySample {
  int gaussian_index = -1;
  double t = 0;          // ray length at peak contribution
  double E = 0;          // peak Gaussian value along the ray
  double alpha_eff = 0;  // min(alpha * E, alpha_max)
  double omega = 0;      // alpha_eff * T
  double T = 1;          // transmittance before this sample
  uint8_t flags = 0;
  Vec3 color = Vec3::Zero();   // SH color for this pixel's view direction
  Vec3 normal = Vec3::Zero();  // world space, oriented so normal . r <= 0
};

// Whitened per-view data: x -> S^{-1} R^T (x - p) maps the Gaussian to the
// unit isotropic one. The ray origin term is shared by all pixels of a view.
struct GaussianViewData {
  Mat3 M;
  Vec3 o_white;
  double alpha;
};

inline GaussianViewData make_view_data(const Gaussian& g, const Vec3& cam_center) {
  GaussianViewData d;
  const Mat3 R = quat_to_rotation(g.rot.normalized());
  const Vec3 inv_s = (-g.log_scale).array().exp();
  d.M = inv_s.asDiagonal() * R.transpose();
  d.o_white = d.M * (cam_center - g.center);
  d.alpha = g.opacity();
  return d;
}

struct PeakResult {
  double E = 0;
  double t = 0;
};

// Analytic maximum of the Gaussian along o + t r: in whitened coordinates
// t* = -(o'.r')/(r'.r'), E = exp(-|o' + t* r'|^2 / 2).
inline std::optional<PeakResult> ray_gaussian_peak(const GaussianViewData& d, const Vec3& ray_dir,
                                                   const RenderConfig& cfg) {
  const Vec3 rw = d.M * ray_dir;
  const double a = rw.squaredNorm();
  const double b = d.o_white.dot(rw);
  const double t = -b / a;
  if (!(t > cfg.t_min)) return std::nullopt;
  const double q2 = (d.o_white + t * rw).squaredNorm();
  const double E = std::exp(-0.5 * q2);
  if (E < cfg.e_cutoff) return std::nullopt;
  return PeakResult{E, t};
}

inline std::optional<PeakResult> ray_gaussian_peak(const Gaussian& g, const Ray& ray,
                                                   const RenderConfig& cfg = RenderConfig{}) {
  return ray_gaussian_peak(make_view_data(g, ray.origin), ray.dir, cfg);
}

// Normal of the intersection plane: the (negated) density gradient direction
// -Sigma^{-1} (x(t*) - p) = -M^T v. Falls back to the shortest principal axis
// when the ray passes through the center, and is flipped to face the ray.
inline Vec3 gaussian_normal_at(const Gaussian& g, const GaussianViewData& d, const Vec3& ray_dir,
                               double t, uint8_t* flags) {
  const Vec3 v = d.o_white + t * (d.M * ray_dir);
  Vec3 n_raw = -d.M.transpose() * v;
  const double len = n_raw.norm();
  Vec3 n;
  if (len < 1e-12) {
    int axis = 0;
    g.log_scale.minCoeff(&axis);
    const Mat3 R = quat_to_rotation(g.rot.normalized());
    n = R.col(axis);
    if (flags) *flags |= kSampleNormalFallback;
  } else {
    n = n_raw / len;
  }
  if (n.dot(ray_dir) > 0) {
    n = -n;
    if (flags) *flags |= kSampleNormalFlipped;
  }
  return n;
}

inline Vec3 gaussian_normal_at(const Gaussian& g, const Ray& ray, double t) {
  uint8_t flags = 0;
  return gaussian_normal_at(g, make_view_data(g, ray.origin), ray.dir, t, &flags);
}

struct CompositeResult {
  Vec3 color = Vec3::Zero();
  double U = 0;              // accumulated alpha, sum of omegas
  double mean_t = 0;         // omega-weighted mean ray length, normalized by max(U, eps)
  double t_final = 1;        // transmittance after the last retained sample
  size_t retained = 0;       // samples kept before early stop
};

// Front-to-back compositing over samples sorted ascending by t. Fills
// alpha_eff / omega / T / flags in place, truncates the list at the early-stop
// threshold, and returns the aggregates. Samples must arrive with
// gaussian_index, t, E, color (and normal if used) set, and alpha_eff
// pre-loaded with the Gaussian's opacity alpha.
inline CompositeResult composite(std::vector<RaySample>& samples, const RenderConfig& cfg) {
  CompositeResult out;
  double T = 1.0;
  double wt_sum = 0.0;
  size_t kept = 0;
  for (auto& s : samples) {
    double ae = s.alpha_eff * s.E;
    if (ae > cfg.alpha_max) {
      ae = cfg.alpha_max;
      s.flags |= kSampleClamped;
    }
    s.alpha_eff = ae;
    s.T = T;
    s.omega = ae * T;
    out.color += s.omega * s.color;
    out.U += s.omega;
    wt_sum += s.omega * s.t;
    T *= (1.0 - ae);
    ++kept;
    if (T < cfg.t_stop) break;
  }
  samples.resize(kept);
  out.t_final = T;
  out.retained = kept;
  out.color += T * cfg.background;
  out.mean_t = wt_sum / std::max(out.U, cfg.eps_u);
  return out;
}

// Largest sample depth still considered visible: max { t_i | T_i > 0.5 }.
// Returns the sample index, or -1 when the list is empty.
inline int median_sample_index(const std::vector<RaySample>& samples) {
  int idx = -1;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    if (samples[i].T > 0.5) idx = i;
  }
  return idx;
}

struct MedianDepth {
  double t = 0;
  bool valid = false;
};

inline MedianDepth median_depth(const std::vector<RaySample>& samples) {
  const int i = median_sample_index(samples);
  if (i < 0) return {};
  return {samples[i].t, true};
}

// ---------------------------------------------------------------------------
// Full view render.
// ---------------------------------------------------------------------------

struct RenderedView {
  Camera cam;
  ImageD color;          // H x W x 3, unclamped
  ImageD mean_depth;     // H x W, z-depth
  ImageD median_depth;   // H x W, z-depth, 0 where invalid
  Image<uint8_t> median_valid;
  ImageD certainty;      // H x W, accumulated alpha U
  ImageD normal;         // H x W x 3, camera space, from median depth
  Image<uint8_t> normal_valid;
  std::vector<std::vector<RaySample>> samples;  // row-major per pixel
  std::vector<int> median_idx;                  // per pixel, -1 when empty
  std::vector<double> zfac;                     // per pixel ray-length -> z-depth factor

  size_t pixel(int x, int y) const { return static_cast<size_t>(y) * cam.width + x; }
};

// Camera-space normals from forward differences of a z-depth map. Pixels with
// any invalid forward neighbor (or on the +x/+y border) are invalid.
inline void depth_to_normal(const ImageD& depth, const Image<uint8_t>& valid, const Camera& cam,
                            ImageD& normal, Image<uint8_t>& normal_valid) {
  const int W = depth.width, H = depth.height;
  normal = ImageD(W, H, 3, 0.0);
  normal_valid = Image<uint8_t>(W, H, 1, 0);
  for (int y = 0; y + 1 < H; ++y) {
    for (int x = 0; x + 1 < W; ++x) {
      if (!valid.at(x, y) || !valid.at(x + 1, y) || !valid.at(x, y + 1)) continue;
      const Vec3 p0 = unproject_cam(cam, x + 0.5, y + 0.5, depth.at(x, y));
      const Vec3 px = unproject_cam(cam, x + 1.5, y + 0.5, depth.at(x + 1, y));
      const Vec3 py = unproject_cam(cam, x + 0.5, y + 1.5, depth.at(x, y + 1));
      const Vec3 c = (px - p0).cross(py - p0);
      const double len = c.norm();
      if (len < 1e-15) continue;
      Vec3 n = c / len;
      if (n.dot(p0) > 0) n = -n;  // face the camera
      normal.at(x, y, 0) = n.x();
      normal.at(x, y, 1) = n.y();
      normal.at(x, y, 2) = n.z();
      normal_valid.at(x, y) = 1;
    }
  }
}

namespace detail {

// Conservative pixel bounds from the projected corners of the Gaussian's
// 3-sigma world AABB. Returns false when the Gaussian cannot reach the image.
// If any corner sits behind the camera the whole image is used.
inline bool gaussian_pixel_bounds(const Gaussian& g, const Camera& cam, int bounds[4]) {
  const Mat3 cov = covariance(g);
  const Vec3 half = 3.0 * cov.diagonal().array().sqrt();
  double lo_u = std::numeric_limits<double>::max(), lo_v = lo_u;
  double hi_u = std::numeric_limits<double>::lowest(), hi_v = hi_u;
  bool any_front = false, any_behind = false;
  for (int k = 0; k < 8; ++k) {
    const Vec3 corner = g.center + Vec3(k & 1 ? half.x() : -half.x(),
                                        k & 2 ? half.y() : -half.y(),
                                        k & 4 ? half.z() : -half.z());
    const Projection pr = project(cam, corner);
    if (pr.behind()) {
      any_behind = true;
      continue;
    }
    any_front = true;
    lo_u = std::min(lo_u, pr.px.x());
    hi_u = std::max(hi_u, pr.px.x());
    lo_v = std::min(lo_v, pr.px.y());
    hi_v = std::max(hi_v, pr.px.y());
  }
  if (!any_front) return false;
  if (any_behind) {
    lo_u = 0;
    lo_v = 0;
    hi_u = cam.width;
    hi_v = cam.height;
  }
  bounds[0] = std::max(0, static_cast<int>(std::floor(lo_u)));
  bounds[1] = std::max(0, static_cast<int>(std::floor(lo_v)));
  bounds[2] = std::min(cam.width - 1, static_cast<int>(std::ceil(hi_u)));
  bounds[3] = std::min(cam.height - 1, static_cast<int>(std::ceil(hi_v)));
  return bounds[0] <= bounds[2] && bounds[1] <= bounds[3];
}

}  // namespace detail

// Tile-binned candidate lists; the exhaustive flag routes every Gaussian to
// every tile instead and serves as the correctness oracle for the binning.
inline std::vector<std::vector<int>> bin_gaussians(const Scene& scene, const Camera& cam,
                                                   const RenderConfig& cfg) {
  const int tiles_x = (cam.width + cfg.tile - 1) / cfg.tile;
  const int tiles_y = (cam.height + cfg.tile - 1) / cfg.tile;
  std::vector<std::vector<int>> bins(static_cast<size_t>(tiles_x) * tiles_y);
  for (int i = 0; i < static_cast<int>(scene.size()); ++i) {
    int b[4];
    if (cfg.exhaustive) {
      b[0] = 0;
      b[1] = 0;
      b[2] = cam.width - 1;
      b[3] = cam.height - 1;
    } else if (!detail::gaussian_pixel_bounds(scene[i], cam, b)) {
      continue;
    }
    for (int ty = b[1] / cfg.tile; ty <= b[3] / cfg.tile; ++ty)
      for (int tx = b[0] / cfg.tile; tx <= b[2] / cfg.tile; ++tx)
        bins[static_cast<size_t>(ty) * tiles_x + tx].push_back(i);
  }
  return bins;
}

inline RenderedView render_view(const Scene& scene, const Camera& cam,
                                const RenderConfig& cfg = RenderConfig{}) {
  cam.validate();
  const int W = cam.width, H = cam.height;
  RenderedView rv;
  rv.cam = cam;
  rv.color = ImageD(W, H, 3, 0.0);
  rv.mean_depth = ImageD(W, H, 1, 0.0);
  rv.median_depth = ImageD(W, H, 1, 0.0);
  rv.median_valid = Image<uint8_t>(W, H, 1, 0);
  rv.certainty = ImageD(W, H, 1, 0.0);
  rv.samples.resize(static_cast<size_t>(W) * H);
  rv.median_idx.assign(static_cast<size_t>(W) * H, -1);
  rv.zfac.assign(static_cast<size_t>(W) * H, 1.0);

  std::vector<GaussianViewData> vdata(scene.size());
  const Vec3 origin = cam.center();
  for (size_t i = 0; i < scene.size(); ++i) vdata[i] = make_view_data(scene[i], origin);
  const auto bins = bin_gaussians(scene, cam, cfg);
  const int tiles_x = (W + cfg.tile - 1) / cfg.tile;
  const Mat3 Rt = cam.R_wc.transpose();

  parallel_for(static_cast<size_t>(H), [&](size_t row, int) {
    const int y = static_cast<int>(row);
    std::vector<RaySample> local;
    double basis[16];
    for (int x = 0; x < W; ++x) {
      const double u = x + 0.5, v = y + 0.5;
      const Vec3 dir_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      const double inv_len = 1.0 / dir_cam.norm();
      const Vec3 dir = Rt * (dir_cam * inv_len);
      const size_t px = rv.pixel(x, y);
      rv.zfac[px] = inv_len;

      local.clear();
      const auto& cand = bins[static_cast<size_t>(y / cfg.tile) * tiles_x + x / cfg.tile];
      for (int gi : cand) {
        if (const auto peak = ray_gaussian_peak(vdata[gi], dir, cfg)) {
          RaySample s;
          s.gaussian_index = gi;
          s.t = peak->t;
          s.E = peak->E;
          s.alpha_eff = vdata[gi].alpha;  // raw alpha; composite applies E and the clamp
          local.push_back(s);
        }
      }
      std::sort(local.begin(), local.end(), [](const RaySample& a, const RaySample& b) {
        return a.t != b.t ? a.t < b.t : a.gaussian_index < b.gaussian_index;
      });
      sh_basis(dir, kMaxShDegree, basis);
      for (auto& s : local) {
        const Gaussian& g = scene[s.gaussian_index];
        const int B = sh_coeff_count(g.sh_degree);
        for (int ch = 0; ch < 3; ++ch) {
          double acc = 0.0;
          const double* c = g.sh.data() + ch * B;
          for (int b = 0; b < B; ++b) acc += c[b] * basis[b];
          s.color[ch] = acc + 0.5;
        }
        if (cfg.with_normals)
          s.normal = gaussian_normal_at(g, vdata[s.gaussian_index], dir, s.t, &s.flags);
      }

      const CompositeResult cr = composite(local, cfg);
      rv.color.at(x, y, 0) = cr.color.x();
      rv.color.at(x, y, 1) = cr.color.y();
      rv.color.at(x, y, 2) = cr.color.z();
      rv.certainty.at(x, y) = cr.U;
      rv.mean_depth.at(x, y) = cr.mean_t * inv_len;
      const int mi = median_sample_index(local);
      rv.median_idx[px] = mi;
      if (mi >= 0) {
        rv.median_depth.at(x, y) = local[mi].t * inv_len;
        rv.median_valid.at(x, y) = 1;
      }
      rv.samples[px] = std::move(local);
      local = {};
    }
  });

  depth_to_normal(rv.median_depth, rv.median_valid, cam, rv.normal, rv.normal_valid);
  return rv;
}

}  // namespace splatreg
