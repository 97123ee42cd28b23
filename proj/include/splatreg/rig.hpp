// Copyright 2026 The splatreg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "splatreg/core.hpp"

namespace splatreg {

// World is z-up. Camera axes follow the OpenCV convention (x right, y down,
// z forward), so a level camera has y pointing against world up.
inline Camera make_lookat_camera(const Vec3& position, const Vec3& target, double fx, int width,
                                 int height, const Vec3& up = Vec3(0, 0, 1)) {
  Vec3 zc = (target - position).normalized();
  Vec3 xc = zc.cross(up);
  if (xc.norm() < 1e-9) xc = zc.cross(Vec3(0, 1, 0));
  xc.normalize();
  const Vec3 yc = zc.cross(xc);
  Camera cam;
  cam.fx = fx;
  cam.fy = fx;
  cam.cx = width * 0.5;
  cam.cy = height * 0.5;
  cam.width = width;
  cam.height = height;
  cam.R_wc.row(0) = xc.transpose();
  cam.R_wc.row(1) = yc.transpose();
  cam.R_wc.row(2) = zc.transpose();
  cam.t_wc = -cam.R_wc * position;
  return cam;
}

// Cameras spread over one or more elevation rings, all looking at `target`.
// Ring r contributes every (r + k * n_rings)-th camera so view ids interleave
// azimuthally.
inline std::vector<Camera> make_orbit_cameras(int count, const Vec3& target, double radius,
                                              const std::vector<double>& elevations_deg, double fx,
                                              int width, int height, double azimuth0_deg = 0.0) {
  std::vector<Camera> cams;
  cams.reserve(count);
  const int n_rings = static_cast<int>(elevations_deg.size());
  for (int i = 0; i < count; ++i) {
    const double elev = elevations_deg[i % n_rings] * M_PI / 180.0;
    const double az = (azimuth0_deg + 360.0 * i / count) * M_PI / 180.0;
    const Vec3 pos = target + radius * Vec3(std::cos(az) * std::cos(elev),
                                            std::sin(az) * std::cos(elev), std::sin(elev));
    cams.push_back(make_lookat_camera(pos, target, fx, width, height));
  }
  return cams;
}

}  // namespace splatreg
