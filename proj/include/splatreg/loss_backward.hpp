// Copyright 2026 The splatreg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "splatreg/core.hpp"
#include "splatreg/losses.hpp"
#include "splatreg/parallel.hpp"
#include "splatreg/render.hpp"

namespace splatreg {

// ---------------------------------------------------------------------------
// Per-Gaussian parameter gradients. Flat layout per Gaussian:
// center(3), log_scale(3), rot(4), opacity_logit(1), sh(3B).
// ---------------------------------------------------------------------------

struct GradBuffer {
  std::vector<Vec3> center;
  std::vector<Vec3> log_scale;
  std::vector<Vec4> rot;
  std::vector<double> opacity;
  std::vector<std::vector<double>> sh;

  void resize(const Scene& scene) {
    center.assign(scene.size(), Vec3::Zero());
    log_scale.assign(scene.size(), Vec3::Zero());
    rot.assign(scene.size(), Vec4::Zero());
    opacity.assign(scene.size(), 0.0);
    sh.resize(scene.size());
    for (size_t i = 0; i < scene.size(); ++i) sh[i].assign(scene[i].sh.size(), 0.0);
  }

  void zero() {
    for (auto& v : center) v.setZero();
    for (auto& v : log_scale) v.setZero();
    for (auto& v : rot) v.setZero();
    for (auto& v : opacity) v = 0;
    for (auto& v : sh) std::fill(v.begin(), v.end(), 0.0);
  }

  void add(const GradBuffer& o) {
    for (size_t i = 0; i < center.size(); ++i) {
      center[i] += o.center[i];
      log_scale[i] += o.log_scale[i];
      rot[i] += o.rot[i];
      opacity[i] += o.opacity[i];
      for (size_t k = 0; k < sh[i].size(); ++k) sh[i][k] += o.sh[i][k];
    }
  }
};

inline size_t gaussian_param_count(const Gaussian& g) { return 11 + g.sh.size(); }

inline size_t param_count(const Scene& scene) {
  size_t n = 0;
  for (const auto& g : scene) n += gaussian_param_count(g);
  return n;
}

namespace detail {
// Locates flat parameter `idx` as (gaussian, local offset).
inline std::pair<size_t, size_t> locate_param(const Scene& scene, size_t idx) {
  for (size_t i = 0; i < scene.size(); ++i) {
    const size_t n = gaussian_param_count(scene[i]);
    if (idx < n) return {i, idx};
    idx -= n;
  }
  throw std::out_of_range("parameter index out of range");
}
}  // namespace detail

inline double scene_get_param(const Scene& scene, size_t idx) {
  const auto [i, k] = detail::locate_param(scene, idx);
  const Gaussian& g = scene[i];
  if (k < 3) return g.center[k];
  if (k < 6) return g.log_scale[k - 3];
  if (k < 10) return g.rot[k - 6];
  if (k == 10) return g.opacity_logit;
  return g.sh[k - 11];
}

inline void scene_set_param(Scene& scene, size_t idx, double v) {
  const auto [i, k] = detail::locate_param(scene, idx);
  Gaussian& g = scene[i];
  if (k < 3)
    g.center[k] = v;
  else if (k < 6)
    g.log_scale[k - 3] = v;
  else if (k < 10)
    g.rot[k - 6] = v;
  else if (k == 10)
    g.opacity_logit = v;
  else
    g.sh[k - 11] = v;
}

inline double grad_get(const Scene& scene, const GradBuffer& gb, size_t idx) {
  const auto [i, k] = detail::locate_param(scene, idx);
  if (k < 3) return gb.center[i][k];
  if (k < 6) return gb.log_scale[i][k - 3];
  if (k < 10) return gb.rot[i][k - 6];
  if (k == 10) return gb.opacity[i];
  return gb.sh[i][k - 11];
}

// ---------------------------------------------------------------------------
// Reverse pass.
// ---------------------------------------------------------------------------

enum class DepthMode { kMedian, kMean };

struct ViewLossOptions {
  LossWeights weights;
  double s = 0.15;
  DepthMode depth_mode = DepthMode::kMedian;
  bool apply_rel = true;  // relative depth loss active on this view
  bool apply_dn = true;   // distortion + normal losses active on this view
  RenderConfig render;
};

// Screen-projected center-gradient statistics driving adaptive density
// control: per view, |dL/dp| projected onto the camera x/y axes and scaled
// meters -> pixels at the center's depth.
struct AdcAccum {
  std::vector<double> grad_norm_sum;
  std::vector<int> count;

  void resize(size_t n) {
    grad_norm_sum.assign(n, 0.0);
    count.assign(n, 0);
  }
};

namespace detail {

// d(rotation)/d(unit quaternion) contracted with the rotation adjoint.
inline Vec4 rotation_backward(const Vec4& q, const Mat3& Rhat) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4 g;
  g[0] = 2.0 * (Rhat(0, 1) * -z + Rhat(0, 2) * y + Rhat(1, 0) * z + Rhat(1, 2) * -x +
                Rhat(2, 0) * -y + Rhat(2, 1) * x);
  g[1] = 2.0 * (Rhat(0, 1) * y + Rhat(0, 2) * z + Rhat(1, 0) * y + Rhat(1, 1) * -2.0 * x +
                Rhat(1, 2) * -w + Rhat(2, 0) * z + Rhat(2, 1) * w + Rhat(2, 2) * -2.0 * x);
  g[2] = 2.0 * (Rhat(0, 0) * -2.0 * y + Rhat(0, 1) * x + Rhat(0, 2) * w + Rhat(1, 0) * x +
                Rhat(1, 2) * z + Rhat(2, 0) * -w + Rhat(2, 1) * z + Rhat(2, 2) * -2.0 * y);
  g[3] = 2.0 * (Rhat(0, 0) * -2.0 * z + Rhat(0, 1) * -w + Rhat(0, 2) * x + Rhat(1, 0) * w +
                Rhat(1, 1) * -2.0 * z + Rhat(1, 2) * y + Rhat(2, 0) * x + Rhat(2, 1) * y);
  return g;
}

struct BackGauss {
  Mat3 M;
  Vec3 o_white;
  Vec3 o_center;  // cam_center - p
  Mat3 R;
  Vec3 inv_s;
  Vec4 q_unit;
  double q_norm = 1;
  double alpha = 0;
};

inline BackGauss make_back_gauss(const Gaussian& g, const Vec3& cam_center) {
  BackGauss b;
  b.q_norm = g.rot.norm();
  b.q_unit = g.rot / b.q_norm;
  b.R = quat_to_rotation(b.q_unit);
  b.inv_s = (-g.log_scale).array().exp();
  b.M = b.inv_s.asDiagonal() * b.R.transpose();
  b.o_center = cam_center - g.center;
  b.o_white = b.M * b.o_center;
  b.alpha = g.opacity();
  return b;
}

// Reverse accumulation through one sample's peak (and normal, when requested):
// adjoints of E, t and the world normal flow into center/log_scale/rot grads.
inline void peak_backward(const BackGauss& bg, const Vec3& dir, const RaySample& s, double e_hat,
                          double t_hat, const Vec3& n_hat_world, bool use_normal, Vec3& center_g,
                          Vec3& log_scale_g, Vec4& rot_g) {
  const Vec3 rw = bg.M * dir;
  const double a = rw.squaredNorm();
  const double b = bg.o_white.dot(rw);
  const double t = -b / a;
  const Vec3 v = bg.o_white + t * rw;

  Vec3 v_hat = e_hat * (-s.E) * v;
  Mat3 M_hat = Mat3::Zero();

  if (use_normal && !(s.flags & kSampleNormalFallback)) {
    const Vec3 nr = -bg.M.transpose() * v;
    const double len = nr.norm();
    if (len >= 1e-12) {
      const Vec3 n0 = nr / len;
      const double flip = (s.flags & kSampleNormalFlipped) ? -1.0 : 1.0;
      const Vec3 nr_hat = flip * (n_hat_world - n0 * n0.dot(n_hat_world)) / len;
      v_hat -= bg.M * nr_hat;
      M_hat -= v * nr_hat.transpose();
    }
  }

  Vec3 ow_hat = v_hat;
  Vec3 rw_hat = t * v_hat;
  double th = t_hat + v_hat.dot(rw);

  const double b_hat = -th / a;
  const double a_hat = th * b / (a * a);
  ow_hat += b_hat * rw;
  rw_hat += b_hat * bg.o_white + 2.0 * a_hat * rw;

  // o_white = M (o - p), rw = M dir
  M_hat += ow_hat * bg.o_center.transpose() + rw_hat * dir.transpose();
  center_g -= bg.M.transpose() * ow_hat;

  // M = diag(inv_s) R^T; log-scale gradient folds the exp through inv_s.
  for (int i = 0; i < 3; ++i) {
    double acc = 0;
    for (int j = 0; j < 3; ++j) acc += M_hat(i, j) * bg.M(i, j);
    log_scale_g[i] -= acc;
  }
  const Mat3 R_hat = M_hat.transpose() * bg.inv_s.asDiagonal();
  const Vec4 qn_hat = rotation_backward(bg.q_unit, R_hat);
  rot_g += (qn_hat - bg.q_unit * bg.q_unit.dot(qn_hat)) / bg.q_norm;
}

struct ViewAdjoints {
  ImageD color;   // dL/d rendered color
  ImageD med_z;   // dL/d median z-depth
  ImageD mean_z;  // dL/d mean z-depth (mean-depth ablation route)
  ImageD u;       // dL/d certainty
  double ld_coef = 0;  // lambda_d / pixel count
  double ln_coef = 0;  // lambda_n / valid-normal pixel count
};

inline void backward_view(const Scene& scene, const RenderedView& rv, const ViewAdjoints& adj,
                          const RenderConfig& cfg, GradBuffer& out, std::vector<uint8_t>& touched) {
  const Camera& cam = rv.cam;
  const int W = cam.width, H = cam.height;
  const Vec3 origin = cam.center();
  const Mat3 Rt = cam.R_wc.transpose();

  std::vector<BackGauss> bgs(scene.size());
  for (size_t i = 0; i < scene.size(); ++i) bgs[i] = make_back_gauss(scene[i], origin);

  const int T = num_threads();
  std::vector<GradBuffer> partial(T);
  for (auto& p : partial) p.resize(scene);
  touched.assign(scene.size(), 0);

  parallel_for(static_cast<size_t>(H), [&](size_t row, int worker) {
    GradBuffer& gb = partial[worker];
    const int y = static_cast<int>(row);
    std::vector<double> what, that;
    std::vector<Vec3> nhat;
    double basis[16];
    for (int x = 0; x < W; ++x) {
      const size_t px = rv.pixel(x, y);
      const auto& samples = rv.samples[px];
      const size_t n = samples.size();
      if (n == 0) continue;
      const double u = x + 0.5, v = y + 0.5;
      const Vec3 dir_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      const double zf = 1.0 / dir_cam.norm();
      const Vec3 dir = Rt * (dir_cam * zf);
      const Vec3 cadj(adj.color.at(x, y, 0), adj.color.at(x, y, 1), adj.color.at(x, y, 2));

      what.assign(n, 0.0);
      that.assign(n, 0.0);

      const double uadj = adj.u.at(x, y);
      for (size_t i = 0; i < n; ++i) what[i] = cadj.dot(samples[i].color) + uadj;

      const int mi = rv.median_idx[px];
      const double mzadj = adj.med_z.at(x, y);
      if (mi >= 0 && mzadj != 0.0) that[mi] += mzadj * zf;

      const double meanadj = adj.mean_z.at(x, y);
      if (meanadj != 0.0) {
        double U = 0, wt = 0;
        for (const auto& s : samples) {
          U += s.omega;
          wt += s.omega * s.t;
        }
        const double denom = std::max(U, cfg.eps_u);
        const double mean_t = wt / denom;
        for (size_t i = 0; i < n; ++i) {
          what[i] += meanadj * zf * (samples[i].t - (U > cfg.eps_u ? mean_t : 0.0)) / denom;
          that[i] += meanadj * zf * samples[i].omega / denom;
        }
      }

      if (adj.ld_coef != 0.0) distortion_pixel_backward(samples, adj.ld_coef, what, that);

      const bool use_n = adj.ln_coef != 0.0 && rv.normal_valid.at(x, y);
      if (use_n) {
        nhat.assign(n, Vec3::Zero());
        const Vec3 N(rv.normal.at(x, y, 0), rv.normal.at(x, y, 1), rv.normal.at(x, y, 2));
        for (size_t i = 0; i < n; ++i) {
          const Vec3 n_cam = cam.R_wc * samples[i].normal;
          what[i] += adj.ln_coef * (1.0 - n_cam.dot(N));
          nhat[i] = Rt * (-adj.ln_coef * samples[i].omega * N);
        }
      }

      // Compositing: omega_k = ae_k T_k, T depends on earlier alphas; the
      // background enters as bg * T_final.
      const double t_final = samples.back().T * (1.0 - samples.back().alpha_eff);
      double suffix = cadj.dot(cfg.background) * t_final;
      sh_basis(dir, kMaxShDegree, basis);
      for (size_t k = n; k-- > 0;) {
        const RaySample& s = samples[k];
        const double ae_hat = what[k] * s.T - suffix / (1.0 - s.alpha_eff);
        suffix += what[k] * s.omega;

        const int gi = s.gaussian_index;
        touched[gi] = 1;
        const Gaussian& g = scene[gi];
        const BackGauss& bg = bgs[gi];

        // SH coefficients from the color adjoint.
        const Vec3 chat = s.omega * cadj;
        const int B = sh_coeff_count(g.sh_degree);
        for (int ch = 0; ch < 3; ++ch)
          for (int b = 0; b < B; ++b) gb.sh[gi][ch * B + b] += chat[ch] * basis[b];

        double e_hat = 0.0;
        if (!(s.flags & kSampleClamped)) {
          e_hat = ae_hat * bg.alpha;
          const double alpha_hat = ae_hat * s.E;
          gb.opacity[gi] += alpha_hat * bg.alpha * (1.0 - bg.alpha);
        }

        const bool need_peak = e_hat != 0.0 || that[k] != 0.0 || (use_n && !nhat[k].isZero());
        if (need_peak)
          peak_backward(bg, dir, s, e_hat, that[k], use_n ? nhat[k] : Vec3::Zero(), use_n,
                        gb.center[gi], gb.log_scale[gi], gb.rot[gi]);
      }
    }
  });

  out.resize(scene);
  for (const auto& p : partial) out.add(p);
}

// Scatters the normal-map adjoint back into the median-depth adjoint map
// (depth_to_normal reverse pass).
inline void normal_map_backward(const RenderedView& rv, double ln_coef, ImageD& med_z_adj) {
  const Camera& cam = rv.cam;
  for (int y = 0; y + 1 < cam.height; ++y)
    for (int x = 0; x + 1 < cam.width; ++x) {
      if (!rv.normal_valid.at(x, y)) continue;
      Vec3 N_hat = Vec3::Zero();
      for (const auto& s : rv.samples[rv.pixel(x, y)])
        N_hat += -ln_coef * s.omega * (cam.R_wc * s.normal);
      if (N_hat.isZero()) continue;

      const double z0 = rv.median_depth.at(x, y);
      const double z1 = rv.median_depth.at(x + 1, y);
      const double z2 = rv.median_depth.at(x, y + 1);
      const Vec3 K0 = unproject_cam(cam, x + 0.5, y + 0.5, 1.0);
      const Vec3 K1 = unproject_cam(cam, x + 1.5, y + 0.5, 1.0);
      const Vec3 K2 = unproject_cam(cam, x + 0.5, y + 1.5, 1.0);
      const Vec3 dx = K1 * z1 - K0 * z0;
      const Vec3 dy = K2 * z2 - K0 * z0;
      const Vec3 c = dx.cross(dy);
      const double len = c.norm();
      if (len < 1e-15) continue;
      const Vec3 n0 = c / len;
      const double flip = n0.dot(K0 * z0) > 0 ? -1.0 : 1.0;
      const Vec3 c_hat = flip * (N_hat - n0 * n0.dot(N_hat)) / len;
      const Vec3 dx_hat = dy.cross(c_hat);
      const Vec3 dy_hat = c_hat.cross(dx);
      med_z_adj.at(x + 1, y) += K1.dot(dx_hat);
      med_z_adj.at(x, y + 1) += K2.dot(dy_hat);
      med_z_adj.at(x, y) += -K0.dot(dx_hat + dy_hat);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single-view loss + gradients, then the multiview aggregation.
// ---------------------------------------------------------------------------

struct ViewInput {
  Camera cam;
  const ImageD* gt_rgb = nullptr;
  const DepthPrior* prior = nullptr;  // may be null
  bool apply_rel = true;
  bool apply_dn = true;
};

inline ViewLossTerms view_loss(const Scene& scene, const ViewInput& view,
                               const ViewLossOptions& opt, GradBuffer* grads = nullptr,
                               AdcAccum* adc = nullptr, RenderedView* keep_rv = nullptr) {
  const LossWeights& w = opt.weights;
  RenderConfig rcfg = opt.render;
  rcfg.with_normals = view.apply_dn && w.lambda_n > 0;
  RenderedView rv = render_view(scene, view.cam, rcfg);
  const int W = view.cam.width, H = view.cam.height;

  ViewLossTerms terms;
  detail::ViewAdjoints adj;
  adj.color = ImageD(W, H, 3, 0.0);
  adj.med_z = ImageD(W, H, 1, 0.0);
  adj.mean_z = ImageD(W, H, 1, 0.0);
  adj.u = ImageD(W, H, 1, 0.0);

  terms.l_c = rgb_loss(rv.color, *view.gt_rgb, w.lambda_ssim, grads ? &adj.color : nullptr);

  const bool rel_active = view.apply_rel && view.prior && !view.prior->empty() && w.lambda_rel > 0;
  if (rel_active) {
    const ImageD& d_map = opt.depth_mode == DepthMode::kMedian ? rv.median_depth : rv.mean_depth;
    ImageD gdr, gu;
    const auto rel = relative_depth_loss(d_map, rv.median_valid, view.prior->depth,
                                         view.prior->valid, rv.certainty, opt.s,
                                         grads ? &gdr : nullptr, grads ? &gu : nullptr);
    terms.l_rel = rel.loss;
    terms.gated_pixels = rel.gated;
    terms.rel_candidates = rel.candidates;
    if (grads) {
      ImageD& route = opt.depth_mode == DepthMode::kMedian ? adj.med_z : adj.mean_z;
      for (size_t i = 0; i < route.size(); ++i) route.data[i] += w.lambda_rel * gdr.data[i];
      for (size_t i = 0; i < adj.u.size(); ++i) adj.u.data[i] += w.lambda_rel * gu.data[i];
    }
  }

  if (view.apply_dn && w.lambda_d > 0) {
    terms.l_d = distortion_loss(rv);
    if (grads) adj.ld_coef = w.lambda_d / static_cast<double>(W * H);
  }
  if (view.apply_dn && w.lambda_n > 0) {
    terms.l_n = normal_consistency_loss(rv);
    long valid_n = 0;
    for (const auto& m : rv.normal_valid.data) valid_n += m;
    if (grads && valid_n > 0) {
      adj.ln_coef = w.lambda_n / static_cast<double>(valid_n);
      detail::normal_map_backward(rv, adj.ln_coef, adj.med_z);
    }
  }

  if (grads) {
    GradBuffer gview;
    std::vector<uint8_t> touched;
    detail::backward_view(scene, rv, adj, rcfg, gview, touched);
    if (adc) {
      for (size_t i = 0; i < scene.size(); ++i) {
        if (!touched[i]) continue;
        const Vec3 pc = view.cam.world_to_cam(scene[i].center);
        adc->count[i] += 1;
        if (pc.z() > 1e-9) {
          const double gx = gview.center[i].dot(view.cam.R_wc.row(0)) * pc.z() / view.cam.fx;
          const double gy = gview.center[i].dot(view.cam.R_wc.row(1)) * pc.z() / view.cam.fy;
          adc->grad_norm_sum[i] += std::sqrt(gx * gx + gy * gy);
        }
      }
    }
    grads->add(gview);
  }
  if (keep_rv) *keep_rv = std::move(rv);
  return terms;
}

// Final objective over a list of views (a triplet in multiview mode, a single
// view otherwise): sum_v (L_c + l_rel L_rel + l_d L_d + l_n L_n), with
// gradients accumulated over all views in fixed view order.
inline LossReport multiview_loss(const Scene& scene, std::span<const ViewInput> views,
                                 const ViewLossOptions& opt, GradBuffer* grads = nullptr,
                                 AdcAccum* adc = nullptr) {
  LossReport report;
  report.s = opt.s;
  if (grads) grads->resize(scene);
  if (adc && adc->count.size() != scene.size()) adc->resize(scene.size());
  for (const auto& v : views) {
    const ViewLossTerms t = view_loss(scene, v, opt, grads, adc);
    report.total += t.l_c + opt.weights.lambda_rel * t.l_rel + opt.weights.lambda_d * t.l_d +
                    opt.weights.lambda_n * t.l_n;
    report.views.push_back(t);
  }
  return report;
}

}  // namespace splatreg
