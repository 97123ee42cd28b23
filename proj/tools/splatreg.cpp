// Copyright 2026 The splatreg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>

int main() {
  std::printf("splatreg: CLI under construction\n");
  return 0;
}
