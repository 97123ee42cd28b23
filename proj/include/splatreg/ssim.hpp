// Copyright 2026 The splatreg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "splatreg/core.hpp"

namespace splatreg {

// 11x11 Gaussian window, sigma 1.5, standard constants, reflect padding.
// The adjoint of the windowed convolution is implemented as an explicit
// scatter so analytic gradients match finite differences exactly.

namespace ssim_detail {

inline constexpr int kRadius = 5;

inline const std::vector<double>& kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> w(2 * kRadius + 1);
    double sum = 0;
    for (int i = -kRadius; i <= kRadius; ++i) {
      w[i + kRadius] = std::exp(-0.5 * i * i / (1.5 * 1.5));
      sum += w[i + kRadius];
    }
    for (auto& v : w) v /= sum;
    return w;
  }();
  return k;
}

inline int reflect(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - 1 - i;
  return i;
}

// Separable convolution of a single-channel map.
inline void conv(const std::vector<double>& in, int W, int H, std::vector<double>& out,
                 std::vector<double>& tmp) {
  const auto& k = kernel();
  tmp.resize(in.size());
  out.resize(in.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0;
      for (int d = -kRadius; d <= kRadius; ++d) acc += k[d + kRadius] * in[y * W + reflect(x + d, W)];
      tmp[y * W + x] = acc;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0;
      for (int d = -kRadius; d <= kRadius; ++d) acc += k[d + kRadius] * tmp[reflect(y + d, H) * W + x];
      out[y * W + x] = acc;
    }
}

// Adjoint of conv under reflect padding: scatter in the reverse pass order.
inline void conv_adjoint(const std::vector<double>& gout, int W, int H, std::vector<double>& gin,
                         std::vector<double>& tmp) {
  const auto& k = kernel();
  tmp.assign(gout.size(), 0.0);
  gin.assign(gout.size(), 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double g = gout[y * W + x];
      for (int d = -kRadius; d <= kRadius; ++d) tmp[reflect(y + d, H) * W + x] += k[d + kRadius] * g;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double g = tmp[y * W + x];
      for (int d = -kRadius; d <= kRadius; ++d) gin[y * W + reflect(x + d, W)] += k[d + kRadius] * g;
    }
}

}  // namespace ssim_detail

// Mean SSIM over pixels and channels of two images with values nominally in
// [0,1]. When grad_a is non-null it receives d(mean SSIM)/d(a).
inline double ssim(const ImageD& a, const ImageD& b, ImageD* grad_a = nullptr) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: image dimensions differ");
  const int W = a.width, H = a.height, C = a.channels;
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const size_t n = static_cast<size_t>(W) * H;
  if (grad_a) *grad_a = ImageD(W, H, C, 0.0);

  std::vector<double> xa(n), xb(n), x2(n), y2(n), xy(n);
  std::vector<double> mu_a, mu_b, e_a2, e_b2, e_ab, tmp;
  std::vector<double> d_mu(n), d_ea2(n), d_eab(n), g1, g2, g3;
  double total = 0;

  for (int ch = 0; ch < C; ++ch) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const size_t i = static_cast<size_t>(y) * W + x;
        xa[i] = a.at(x, y, ch);
        xb[i] = b.at(x, y, ch);
        x2[i] = xa[i] * xa[i];
        y2[i] = xb[i] * xb[i];
        xy[i] = xa[i] * xb[i];
      }
    ssim_detail::conv(xa, W, H, mu_a, tmp);
    ssim_detail::conv(xb, W, H, mu_b, tmp);
    ssim_detail::conv(x2, W, H, e_a2, tmp);
    ssim_detail::conv(y2, W, H, e_b2, tmp);
    ssim_detail::conv(xy, W, H, e_ab, tmp);

    double ch_sum = 0;
    for (size_t i = 0; i < n; ++i) {
      const double sa2 = e_a2[i] - mu_a[i] * mu_a[i];
      const double sb2 = e_b2[i] - mu_b[i] * mu_b[i];
      const double sab = e_ab[i] - mu_a[i] * mu_b[i];
      const double A1 = 2 * mu_a[i] * mu_b[i] + C1;
      const double A2 = 2 * sab + C2;
      const double B1 = mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1;
      const double B2 = sa2 + sb2 + C2;
      const double denom = B1 * B2;
      const double S = A1 * A2 / denom;
      ch_sum += S;
      if (grad_a) {
        const double dA1 = A2 / denom;
        const double dA2 = A1 / denom;
        const double dB1 = -S / B1;
        const double dB2 = -S / B2;
        d_mu[i] = dA1 * 2 * mu_b[i] + dB1 * 2 * mu_a[i] + dA2 * (-2 * mu_b[i]) + dB2 * (-2 * mu_a[i]);
        d_ea2[i] = dB2;
        d_eab[i] = dA2 * 2;
      }
    }
    total += ch_sum / static_cast<double>(n);

    if (grad_a) {
      ssim_detail::conv_adjoint(d_mu, W, H, g1, tmp);
      ssim_detail::conv_adjoint(d_ea2, W, H, g2, tmp);
      ssim_detail::conv_adjoint(d_eab, W, H, g3, tmp);
      const double scale = 1.0 / (static_cast<double>(n) * C);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const size_t i = static_cast<size_t>(y) * W + x;
          grad_a->at(x, y, ch) = scale * (g1[i] + 2 * xa[i] * g2[i] + xb[i] * g3[i]);
        }
    }
  }
  return total / C;
}

}  // namespace splatreg
