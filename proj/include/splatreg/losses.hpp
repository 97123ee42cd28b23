// Copyright 2026 The splatreg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "splatreg/core.hpp"
#include "splatreg/depth_prior.hpp"
#include "splatreg/render.hpp"
#include "splatreg/ssim.hpp"

namespace splatreg {

struct ScheduleKnot {
  int iteration = 0;
  double value = 0;
};

struct LossWeights {
  double lambda_rel = 1.0;
  double lambda_d = 100.0;
  double lambda_n = 0.05;
  double lambda_ssim = 0.2;
  std::vector<ScheduleKnot> s_schedule = {{0, 0.15}, {7000, 0.1}, {20000, 0.05}};

  void validate() const {
    if (lambda_rel < 0 || lambda_d < 0 || lambda_n < 0 || lambda_ssim < 0)
      throw std::invalid_argument("loss weights must be non-negative");
    for (size_t i = 0; i < s_schedule.size(); ++i) {
      if (s_schedule[i].value <= 0 || s_schedule[i].value >= 1)
        throw std::invalid_argument("s schedule values must lie in (0,1)");
      if (i > 0 && s_schedule[i].iteration <= s_schedule[i - 1].iteration)
        throw std::invalid_argument("s schedule iterations must be strictly increasing");
    }
  }
};

// Piecewise-constant step schedule: the latest knot at or before `iteration`.
inline double anneal_s(int iteration, const std::vector<ScheduleKnot>& schedule) {
  if (schedule.empty()) throw std::invalid_argument("anneal_s: empty schedule");
  double s = schedule.front().value;
  for (const auto& k : schedule) {
    if (k.iteration <= iteration) s = k.value;
  }
  return s;
}

struct ViewLossTerms {
  double l_c = 0;
  double l_rel = 0;
  double l_d = 0;
  double l_n = 0;
  long gated_pixels = 0;      // valid-prior pixels rejected by the indicator
  long rel_candidates = 0;    // pixels with a valid prior
};

struct LossReport {
  double total = 0;
  std::vector<ViewLossTerms> views;
  double s = 0;

  long gated_pixels() const {
    long n = 0;
    for (const auto& v : views) n += v.gated_pixels;
    return n;
  }
  long rel_candidates() const {
    long n = 0;
    for (const auto& v : views) n += v.rel_candidates;
    return n;
  }
  double gated_fraction() const {
    const long c = rel_candidates();
    return c > 0 ? static_cast<double>(gated_pixels()) / c : 0.0;
  }
  double term_sum(double f(const ViewLossTerms&)) const {
    double t = 0;
    for (const auto& v : views) t += f(v);
    return t;
  }
};

// (1 - lambda) L1 + lambda (1 - SSIM). grad, when requested, receives the
// derivative with respect to `rendered`.
inline double rgb_loss(const ImageD& rendered, const ImageD& gt, double lambda_ssim,
                       ImageD* grad = nullptr) {
  if (!rendered.same_shape(gt)) throw std::invalid_argument("rgb_loss: image dimensions differ");
  const size_t n = rendered.size();
  double l1 = 0;
  for (size_t i = 0; i < n; ++i) l1 += std::abs(rendered.data[i] - gt.data[i]);
  l1 /= static_cast<double>(n);

  double ssim_val;
  if (grad) {
    ImageD ssim_grad;
    ssim_val = ssim(rendered, gt, &ssim_grad);
    *grad = ImageD(rendered.width, rendered.height, rendered.channels, 0.0);
    const double l1_scale = (1.0 - lambda_ssim) / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
      const double d = rendered.data[i] - gt.data[i];
      const double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      grad->data[i] = l1_scale * sgn - lambda_ssim * ssim_grad.data[i];
    }
  } else {
    ssim_val = ssim(rendered, gt);
  }
  return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim_val);
}

struct RelativeDepthResult {
  double loss = 0;
  ImageD per_pixel;
  long gated = 0;       // valid prior, valid render, indicator rejected
  long candidates = 0;  // valid prior pixels
};

// Eq-style per-pixel relative depth error |1 - D_mvs / D_r| * U gated by the
// indicator |D_r - D_mvs| < s * D_r. The indicator and validity masks are
// stop-gradients; D_r and U receive gradients where the pixel contributes.
// The scalar is the mean over pixels with a valid prior.
inline RelativeDepthResult relative_depth_loss(const ImageD& d_r, const Image<uint8_t>& r_valid,
                                               const ImageD& d_mvs, const Image<uint8_t>& mvs_valid,
                                               const ImageD& certainty, double s,
                                               ImageD* grad_dr = nullptr, ImageD* grad_u = nullptr) {
  if (!d_r.same_shape(d_mvs)) throw std::invalid_argument("relative_depth_loss: map sizes differ");
  if (s <= 0 || s >= 1) throw std::invalid_argument("relative_depth_loss: s must lie in (0,1)");
  const int W = d_r.width, H = d_r.height;
  RelativeDepthResult out;
  out.per_pixel = ImageD(W, H, 1, 0.0);
  if (grad_dr) *grad_dr = ImageD(W, H, 1, 0.0);
  if (grad_u) *grad_u = ImageD(W, H, 1, 0.0);

  double sum = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!mvs_valid.at(x, y)) continue;
      ++out.candidates;
      if (!r_valid.at(x, y)) continue;
      const double dr = d_r.at(x, y);
      const double dm = d_mvs.at(x, y);
      if (std::abs(dr - dm) >= s * dr) {
        ++out.gated;
        continue;
      }
      const double u = certainty.at(x, y);
      const double e = 1.0 - dm / dr;
      const double val = std::abs(e) * u;
      out.per_pixel.at(x, y) = val;
      sum += val;
      if (grad_dr) {
        const double sgn = e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0);
        grad_dr->at(x, y) = sgn * (dm / (dr * dr)) * u;
        grad_u->at(x, y) = std::abs(e);
      }
    }
  if (out.candidates > 0) {
    out.loss = sum / static_cast<double>(out.candidates);
    if (grad_dr) {
      const double inv = 1.0 / static_cast<double>(out.candidates);
      for (auto& v : grad_dr->data) v *= inv;
      for (auto& v : grad_u->data) v *= inv;
    }
  }
  return out;
}

// Per-ray depth distortion sum_{i,j} w_i w_j |t_i - t_j| in O(n) via prefix
// sums over the t-sorted list: 2 sum_i w_i (t_i A_{i-1} - B_{i-1}).
inline double distortion_pixel(const std::vector<RaySample>& samples) {
  double A = 0, B = 0, acc = 0;
  for (const auto& s : samples) {
    acc += s.omega * (s.t * A - B);
    A += s.omega;
    B += s.omega * s.t;
  }
  return 2.0 * acc;
}

// d(distortion_pixel)/d(omega_k, t_k) scaled by coef, accumulated into the
// adjoint arrays (sized like samples).
inline void distortion_pixel_backward(const std::vector<RaySample>& samples, double coef,
                                      std::vector<double>& omega_adj, std::vector<double>& t_adj) {
  const size_t n = samples.size();
  if (n < 2) return;
  double An = 0, Bn = 0;
  for (const auto& s : samples) {
    An += s.omega;
    Bn += s.omega * s.t;
  }
  double A = 0, B = 0;  // prefix sums over j < k
  for (size_t k = 0; k < n; ++k) {
    const double w = samples[k].omega, t = samples[k].t;
    const double A_after = An - A - w, B_after = Bn - B - w * t;
    omega_adj[k] += coef * 2.0 * ((t * A - B) + (B_after - t * A_after));
    t_adj[k] += coef * 2.0 * w * (A - A_after);
    A += w;
    B += w * t;
  }
}

// Mean per-pixel distortion over the whole image.
inline double distortion_loss(const RenderedView& rv) {
  double sum = 0;
  for (const auto& px : rv.samples) sum += distortion_pixel(px);
  return sum / static_cast<double>(rv.samples.size());
}

// Per-pixel normal consistency sum_i w_i (1 - n_i . N) with n_i taken to the
// camera frame; N comes from depth_to_normal. Zero where N is invalid; the
// scalar is the mean over valid-N pixels.
inline double normal_consistency_loss(const RenderedView& rv) {
  const Mat3& R = rv.cam.R_wc;
  double sum = 0;
  long valid = 0;
  for (int y = 0; y < rv.cam.height; ++y)
    for (int x = 0; x < rv.cam.width; ++x) {
      if (!rv.normal_valid.at(x, y)) continue;
      ++valid;
      const Vec3 N(rv.normal.at(x, y, 0), rv.normal.at(x, y, 1), rv.normal.at(x, y, 2));
      for (const auto& s : rv.samples[rv.pixel(x, y)])
        sum += s.omega * (1.0 - (R * s.normal).dot(N));
    }
  return valid > 0 ? sum / static_cast<double>(valid) : 0.0;
}

}  // namespace splatreg
