// Copyright 2026 The splatreg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "splatreg/core.hpp"

namespace splatreg {

// MVS-style depth prior: z-depth in meters, 0 where invalid.
struct DepthPrior {
  ImageD depth;
  Image<uint8_t> valid;
  int view_id = -1;

  bool empty() const { return depth.width == 0; }
};

}  // namespace splatreg
