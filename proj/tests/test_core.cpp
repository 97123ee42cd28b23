// Copyright 2026 The splatreg Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <random>

#include "splatreg/core.hpp"
#include "splatreg/rig.hpp"
#include "test_util.hpp"

using namespace splatreg;

namespace {

// Independent real-SH oracle: associated Legendre recurrence (Condon-Shortley
// phase folded out) plus the factorial normalization, evaluated in spherical
// coordinates. Used to cross-check the hardcoded polynomial basis.
double legendre_nocs(int l, int m, double x) {
  double pmm = 1.0;
  if (m > 0) {
    const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
    double fact = 1.0;
    for (int i = 0; i < m; ++i) {
      pmm *= fact * s;
      fact += 2.0;
    }
  }
  if (l == m) return pmm;
  double pmmp1 = x * (2.0 * m + 1.0) * pmm;
  if (l == m + 1) return pmmp1;
  double pll = 0.0;
  for (int ll = m + 2; ll <= l; ++ll) {
    pll = (x * (2.0 * ll - 1.0) * pmmp1 - (ll + m - 1.0) * pmm) / (ll - m);
    pmm = pmmp1;
    pmmp1 = pll;
  }
  return pll;
}

double factorial(int n) {
  double f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

double real_sh_oracle(int l, int m, const Vec3& d) {
  const double theta = std::acos(std::clamp(d.z(), -1.0, 1.0));
  const double phi = std::atan2(d.y(), d.x());
  const int am = std::abs(m);
  const double K = std::sqrt((2.0 * l + 1.0) / (4.0 * M_PI) * factorial(l - am) / factorial(l + am));
  const double P = legendre_nocs(l, am, std::cos(theta));
  if (m > 0) return std::sqrt(2.0) * K * std::cos(m * phi) * P;
  if (m < 0) return std::sqrt(2.0) * K * std::sin(am * phi) * P;
  return K * P;
}

}  // namespace

TEST_CASE("covariance identity and axis-aligned cases", "[core]") {
  Gaussian g;
  CHECK((covariance(g) - Mat3::Identity()).norm() < 1e-12);

  g.log_scale = Vec3(std::log(2.0), 0, 0);
  const Mat3 cov = covariance(g);
  CHECK(cov(0, 0) == Catch::Approx(4.0));
  CHECK(cov(1, 1) == Catch::Approx(1.0));
  CHECK(cov(2, 2) == Catch::Approx(1.0));
  CHECK(std::abs(cov(0, 1)) < 1e-15);
}

TEST_CASE("covariance eigenvalues equal squared scales for random rotations", "[core]") {
  std::mt19937_64 rng(7);
  for (int it = 0; it < 50; ++it) {
    Gaussian g = test::random_gaussian(rng, Vec3(-1, -1, -1), Vec3(1, 1, 1), -2.0, 1.0);
    const Mat3 cov = covariance(g);
    CHECK((cov - cov.transpose()).norm() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 expected = (2.0 * g.log_scale).array().exp();
    std::sort(expected.data(), expected.data() + 3);
    for (int k = 0; k < 3; ++k) CHECK(es.eigenvalues()[k] == Catch::Approx(expected[k]).margin(1e-10));
    CHECK(es.eigenvalues().minCoeff() > 0);  // SPD
  }
}

TEST_CASE("pixel_ray through the principal point is the forward axis", "[core]") {
  std::mt19937_64 rng(3);
  for (int it = 0; it < 10; ++it) {
    const Camera cam = make_lookat_camera(test::random_unit(rng) * 4.0, Vec3::Zero(), 50, 32, 24);
    const Ray r = pixel_ray(cam, cam.cx, cam.cy);
    CHECK((r.dir - cam.forward()).norm() < 1e-12);
    CHECK((r.origin - cam.center()).norm() < 1e-12);
  }
}

TEST_CASE("pixel_ray rejects out-of-bounds pixels", "[core]") {
  const Camera cam = make_lookat_camera(Vec3(3, 0, 0), Vec3::Zero(), 40, 32, 24);
  CHECK_THROWS_AS(pixel_ray(cam, -0.5, 5.0), std::out_of_range);
  CHECK_THROWS_AS(pixel_ray(cam, 5.0, 24.5), std::out_of_range);
}

TEST_CASE("project/pixel_ray round trip", "[core]") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> upix(0.0, 1.0), udist(0.1, 100.0);
  for (int it = 0; it < 200; ++it) {
    const Camera cam = make_lookat_camera(test::random_unit(rng) * 3.0, Vec3::Zero(), 45, 40, 30);
    const double u = upix(rng) * cam.width, v = upix(rng) * cam.height;
    const Ray r = pixel_ray(cam, u, v);
    const double d = udist(rng);
    const Projection pr = project(cam, r.origin + d * r.dir);
    REQUIRE(!pr.behind());
    CHECK(std::abs(pr.px.x() - u) < 1e-6);
    CHECK(std::abs(pr.px.y() - v) < 1e-6);
  }
}

TEST_CASE("project basics", "[core]") {
  const Camera cam = make_lookat_camera(Vec3(0, -4, 0), Vec3::Zero(), 30, 20, 20);
  const Projection pr = project(cam, cam.center() + cam.forward());
  CHECK(pr.z == Catch::Approx(1.0));
  CHECK(pr.px.x() == Catch::Approx(cam.cx));
  CHECK(pr.px.y() == Catch::Approx(cam.cy));
  CHECK(project(cam, cam.center() - cam.forward()).behind());
}

TEST_CASE("pixel_ray is equivariant under camera rotation", "[core]") {
  Camera cam = make_lookat_camera(Vec3(2, 0, 0), Vec3(0, 0, 0), 25, 16, 16);
  const Ray before = pixel_ray(cam, 3.5, 7.5);
  // rotate the whole rig 90 degrees about world z
  Mat3 rot;
  rot << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  Camera cam2 = cam;
  cam2.R_wc = cam.R_wc * rot.transpose();
  cam2.t_wc = cam.t_wc;
  const Ray after = pixel_ray(cam2, 3.5, 7.5);
  CHECK((after.dir - rot * before.dir).norm() < 1e-12);
}

TEST_CASE("sh_eval degree 0 is constant with the DC offset", "[core]") {
  std::vector<double> coeffs = {0.7, -0.2, 1.3};
  std::mt19937_64 rng(5);
  for (int it = 0; it < 20; ++it) {
    const Vec3 rgb = sh_eval(coeffs, 0, test::random_unit(rng));
    CHECK(rgb[0] == Catch::Approx(0.7 * 0.28209479 + 0.5).epsilon(1e-7));
    CHECK(rgb[1] == Catch::Approx(-0.2 * 0.28209479 + 0.5).epsilon(1e-7));
    CHECK(rgb[2] == Catch::Approx(1.3 * 0.28209479 + 0.5).epsilon(1e-7));
  }
}

TEST_CASE("sh_eval band-1 z coefficient is antisymmetric about the DC value", "[core]") {
  std::vector<double> coeffs(3 * 4, 0.0);
  coeffs[0 * 4 + 2] = 0.8;  // channel 0, (l=1, m=0)
  const Vec3 up = sh_eval(coeffs, 1, Vec3(0.3, -0.2, 0.933).normalized());
  const Vec3 dn = sh_eval(coeffs, 1, Vec3(0.3, -0.2, -0.933).normalized());
  CHECK(up[0] - 0.5 == Catch::Approx(-(dn[0] - 0.5)).margin(1e-12));
  CHECK(up[1] == Catch::Approx(0.5));
}

TEST_CASE("sh basis matches the Legendre-recurrence oracle up to degree 3", "[core]") {
  std::mt19937_64 rng(17);
  for (int it = 0; it < 100; ++it) {
    const Vec3 d = test::random_unit(rng);
    double basis[16];
    sh_basis(d, 3, basis);
    for (int l = 0; l <= 3; ++l)
      for (int m = -l; m <= l; ++m) {
        CHECK(basis[l * (l + 1) + m] == Catch::Approx(real_sh_oracle(l, m, d)).margin(1e-10));
      }
  }
}

TEST_CASE("sh_eval degree 2 against direct basis-table combination", "[core]") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> coeffs(3 * 9);
  for (auto& c : coeffs) c = u(rng);
  for (int it = 0; it < 30; ++it) {
    const Vec3 d = test::random_unit(rng);
    const Vec3 got = sh_eval(coeffs, 2, d);
    for (int ch = 0; ch < 3; ++ch) {
      double want = 0.5;
      int idx = 0;
      for (int l = 0; l <= 2; ++l)
        for (int m = -l; m <= l; ++m, ++idx) want += coeffs[ch * 9 + idx] * real_sh_oracle(l, m, d);
      CHECK(got[ch] == Catch::Approx(want).margin(1e-9));
    }
  }
}

TEST_CASE("camera validate rejects bad rotations", "[core]") {
  Camera cam = make_lookat_camera(Vec3(1, 2, 3), Vec3::Zero(), 10, 8, 8);
  CHECK_NOTHROW(cam.validate());
  cam.R_wc(0, 0) += 0.01;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
}
