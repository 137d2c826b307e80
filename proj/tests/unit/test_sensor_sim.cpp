#include <doctest.h>

#include <cmath>
#include <random>

#include "c5cc/error.hpp"
#include "c5cc/features.hpp"
#include "c5cc/sensor_sim.hpp"

using namespace c5cc;

namespace {

double angle(const Rgb& a, const Rgb& b) {
  const double c = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (std::hypot(a[0], a[1], a[2]) * std::hypot(b[0], b[1], b[2]));
  return std::acos(std::clamp(c, -1.0, 1.0));
}

Rgb unit(Eigen::Vector3d v) {
  v.normalize();
  return {v[0], v[1], v[2]};
}

}  // namespace

TEST_CASE("embedded CMF table equals the shipped data file") {
  const CmfTable file = CmfTable::load(std::filesystem::path(C5CC_SOURCE_DIR) / "data/cie1931_2deg_5nm.csv");
  const CmfTable& emb = CmfTable::cie1931();
  REQUIRE(file.wavelength_nm.size() == 81);
  CHECK(file.wavelength_nm == emb.wavelength_nm);
  CHECK(file.x == emb.x);
  CHECK(file.y == emb.y);
  CHECK(file.z == emb.z);
  CHECK(emb.step_nm == 5.0);
  CHECK(emb.wavelength_nm.front() == 380.0);
  CHECK(emb.wavelength_nm.back() == 780.0);
}

TEST_CASE("Planck's law") {
  // 40-digit mpmath evaluation of the blackbody formula.
  CHECK(planck_spd(5000.0, 560e-9) == doctest::Approx(4.009092107231159943609912156566e13).epsilon(1e-12));
  for (double q = 1000; q < 12000; q += 500) CHECK(planck_spd(q + 100, 500e-9) > planck_spd(q, 500e-9));
  const double warm = planck_spd(3000, 450e-9) / planck_spd(3000, 650e-9);
  const double cool = planck_spd(6500, 450e-9) / planck_spd(6500, 650e-9);
  CHECK(cool > warm);
  CHECK_THROWS_AS(planck_spd(100.0, 500e-9), DataError);
  CHECK_THROWS_AS(planck_spd(5000.0, 300e-9), DataError);
}

TEST_CASE("Planckian locus chromaticities") {
  // Independent summation in Python over the same 5 nm table.
  struct Point {
    double q, x, y;
  };
  const Point pts[] = {{6500, 0.313545, 0.323672}, {5000, 0.345116, 0.351638}, {3000, 0.436937, 0.404083},
                       {2500, 0.476998, 0.413680}, {7500, 0.300356, 0.310318}};
  for (const Point& p : pts) {
    const Eigen::Vector3d c = temp_to_xyz(p.q);
    CHECK(c[0] == doctest::Approx(p.x).epsilon(2e-5));
    CHECK(c[1] == doctest::Approx(p.y).epsilon(2e-5));
    CHECK(c.sum() == doctest::Approx(1.0).epsilon(1e-15));
  }
  // 1 nm CIE tables give (0.313552, 0.323687) at 6500 K.
  const Eigen::Vector3d c = temp_to_xyz(6500);
  CHECK(std::abs(c[0] - 0.313552) < 0.002);
  CHECK(std::abs(c[1] - 0.323687) < 0.002);
  double prev = 1.0;
  for (double q = 2500; q <= 7500; q += 50) {
    const double x = temp_to_xyz(q)[0];
    CHECK(x < prev);
    prev = x;
  }
}

TEST_CASE("CST interpolation") {
  CameraProfile p;
  p.c1 << 1, 0.2, 0, 0.1, 0.9, 0.05, 0, 0.1, 1.2;
  p.c2 << 0.8, 0.1, 0.1, 0.2, 1.0, 0, 0.05, 0, 0.9;
  p.q1 = 2850;
  p.q2 = 6500;
  CHECK(interp_cst(p, 2850).isApprox(p.c1, 1e-15));
  CHECK(interp_cst(p, 6500).isApprox(p.c2, 1e-15));
  CHECK(interp_cst(p, 2000).isApprox(p.c1, 1e-15));
  CHECK(interp_cst(p, 9000).isApprox(p.c2, 1e-15));
  const double mid = 2 * p.q1 * p.q2 / (p.q1 + p.q2);
  CHECK(interp_cst(p, mid).isApprox((p.c1 + p.c2) / 2, 1e-12));
  CameraProfile same = p;
  same.c2 = same.c1;
  for (double q : {2500.0, 4000.0, 7000.0}) CHECK(interp_cst(same, q).isApprox(same.c1, 1e-15));
  CameraProfile bad = p;
  bad.q2 = bad.q1;
  CHECK_THROWS_AS(interp_cst(bad, 4000), DataError);
}

TEST_CASE("CCT estimation") {
  CameraProfile id;
  const Eigen::Vector3d x5000 = temp_to_xyz(5000);
  const CctEstimate e = estimate_cct(unit(x5000), id);
  CHECK(std::abs(e.q - 5000) <= 10.0);
  CHECK(estimate_cct(unit(temp_to_xyz(2500)), id).q == 2500.0);
  CHECK(estimate_cct(unit(temp_to_xyz(7500)), id).q == 7500.0);
  // Beyond the range the boundary is returned.
  CHECK(estimate_cct(unit(temp_to_xyz(12000)), id).q == 7500.0);
  // A flat profile mapping every temperature to the same illuminant makes all
  // candidates tie; the lowest temperature wins.
  CctSearch coarse{4000, 4100, 50};
  CameraProfile p;
  p.c1 = p.c2 = Mat3::Identity();
  const CctEstimate t = estimate_cct(unit(temp_to_xyz(4050)), p, CmfTable::cie1931(), coarse);
  CHECK(t.q == 4050.0);
  CHECK_THROWS_AS(estimate_cct({0, 1, 1}, id), DataError);
}

TEST_CASE("CCT recovery on fixtures from a non-trivial profile") {
  std::mt19937_64 rng(1);
  SyntheticCameraSpec spec;
  spec.perturbation = 0.1;
  const SyntheticCamera cam = make_synthetic_camera(spec, rng);
  std::uniform_real_distribution<double> qd(2500, 7500);
  for (int i = 0; i < 20; ++i) {
    const double q = std::round(qd(rng));
    const double est = estimate_cct(planckian_raw_illuminant(cam.profile, q), cam.profile).q;
    CHECK(std::abs(est - q) <= 10.0);
  }
}

TEST_CASE("raw to XYZ") {
  CameraProfile id;
  RawImage img(2, 1);
  img.set(0, 0, {0.2, 0.4, 0.6});
  img.set(1, 0, {0.5, 0.1, 0.3});
  const double s = 1 / std::sqrt(3.0);
  const ColorImage x = raw_to_xyz(img, {s, s, s}, id);
  for (std::size_t i = 0; i < 6; ++i) CHECK(x.pixels[i] == doctest::Approx(img.pixels[i]));

  const Rgb l{0.3, 0.8, 0.52};
  RawImage white(1, 1);
  white.set(0, 0, l);
  const Mat3 c = interp_cst(CameraProfile{}, 4000);
  const ColorImage wx = raw_to_xyz(white, l, c);
  const Eigen::Vector3d expect = c * Eigen::Vector3d(1, 1, 1) * l[1];
  for (int k = 0; k < 3; ++k) CHECK(wx.pixels[k] == doctest::Approx(expect[k]).epsilon(1e-6));

  RawImage doubled = scaled_channels(img, {2, 2, 2});
  const ColorImage xd = raw_to_xyz(doubled, l, c);
  const ColorImage x1 = raw_to_xyz(img, l, c);
  for (std::size_t i = 0; i < 6; ++i) CHECK(xd.pixels[i] == doctest::Approx(2 * x1.pixels[i]));
}

TEST_CASE("XYZ to target raw matches the matrix chain") {
  Mat3 m;
  m << 0.9, 0.2, 0.1, 0.3, 1.1, -0.2, 0.05, 0.1, 0.8;
  ColorImage x{1, 1, {0.4, 0.5, 0.3}, {1}};
  const RawImage r = xyz_to_target_raw(x, {0.5, 0.7, 0.3}, m);
  // numpy: D^-1 inv(M) x
  CHECK(r.pixels[0] == doctest::Approx(0.22630835).epsilon(1e-6));
  CHECK(r.pixels[1] == doctest::Approx(0.42310231).epsilon(1e-6));
  CHECK(r.pixels[2] == doctest::Approx(0.12956153).epsilon(1e-6));
  const double s = 1 / std::sqrt(3.0);
  const RawImage n = xyz_to_target_raw(x, {s, s, s}, Mat3::Identity());
  for (int k = 0; k < 3; ++k) CHECK(n.pixels[k] == doctest::Approx(x.pixels[k]));
  CHECK_THROWS_AS(xyz_to_target_raw(x, {s, s, s}, Mat3::Zero()), DataError);
}

TEST_CASE("raw -> XYZ -> raw round trip") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(0.01, 1.0);
  SyntheticCameraSpec spec;
  spec.perturbation = 0.1;
  const SyntheticCamera cam = make_synthetic_camera(spec, rng);
  RawImage img(8, 6);
  for (float& v : img.pixels) v = static_cast<float>(d(rng));
  const Rgb l = cam.illuminants[0];
  const CctEstimate e = estimate_cct(l, cam.profile);
  const RawImage back = xyz_to_target_raw(raw_to_xyz(img, l, e.cst), l, e.cst);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 1e-6 * img.pixels[i]);
  }
}

TEST_CASE("capture features") {
  CaptureMeta m;
  m.iso = 100;
  m.baseline_noise = 1;
  m.baseline_exposure = 0;
  m.exposure_time = 0.01;
  auto f = raw_capture_feature(m, 5000);
  CHECK(f[1] == 100.0);
  CHECK(f[3] == 0.01);
  m.baseline_exposure = 2;
  CHECK(raw_capture_feature(m, 5000)[3] == doctest::Approx(0.02));
  FeatureNorms n;
  n.min = {2500, 50, 2, 0.001};
  n.max = {7500, 50, 8, 0.101};
  const auto v = capture_feature(m, 5000, n);
  CHECK(v[0] == doctest::Approx(0.5));
  CHECK(v[1] == 0.0);  // degenerate range
  CHECK(v[2] == doctest::Approx(1.0 / 3.0));
  CHECK(v[3] == doctest::Approx(0.19));
  m.iso = -1;
  CHECK_THROWS_AS(raw_capture_feature(m, 5000), DataError);
}

TEST_CASE("nearest neighbours") {
  const std::vector<CaptureVector> t{{0.1, 0, 0, 0}, {0, 0.3, 0, 0}, {0, 0, 0, 0.2}, {1, 1, 1, 1}};
  const auto nb = knn_retrieve({0, 0, 0, 0}, t, 3);
  REQUIRE(nb.size() == 3);
  CHECK(nb[0].index == 0);
  CHECK(nb[1].index == 2);
  CHECK(nb[2].index == 1);
  // numpy softmax of 1 - d / max(d).
  CHECK(nb[0].weight == doctest::Approx(0.44844086));
  CHECK(nb[1].weight == doctest::Approx(0.32132192));
  CHECK(nb[2].weight == doctest::Approx(0.23023722));
  const auto one = knn_retrieve({0, 0, 0, 0}, t, 1);
  CHECK(one.size() == 1);
  CHECK(one[0].weight == 1.0);
  const std::vector<CaptureVector> ring{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  for (const auto& n : knn_retrieve({0, 0, 0, 0}, ring, 4)) CHECK(n.weight == doctest::Approx(0.25));
  CHECK(knn_retrieve({0, 0, 0, 0}, t, 10).size() == 4);
}

TEST_CASE("cubic fit") {
  const std::array<double, 4> c{0.1, 1.5, -2.0, 0.8};
  std::vector<Rgb> ill;
  for (double r : {0.2, 0.25, 0.3, 0.35, 0.4, 0.45}) {
    const double g = c[0] + c[1] * r + c[2] * r * r + c[3] * r * r * r;
    ill.push_back({r, g, 1 - r - g});
  }
  const PlanckianCubic fit = fit_planckian_cubic(ill);
  for (int k = 0; k < 4; ++k) CHECK(std::abs(fit.coef[k] - c[k]) < 1e-8);
  CHECK(fit.sigma_r > 0.0);
  CHECK_THROWS_AS(fit_planckian_cubic({ill[0], ill[1], ill[2]}), DataError);
  CHECK_THROWS_AS(fit_planckian_cubic({ill[0], ill[0], ill[0], ill[0], ill[0]}), DataError);
}

TEST_CASE("illuminant sampling") {
  const std::vector<Rgb> ill{{0.5, 0.4, 0.2}, {0.4, 0.45, 0.3}, {0.3, 0.45, 0.4}, {0.25, 0.42, 0.5}, {0.2, 0.4, 0.6}};
  const PlanckianCubic cubic = fit_planckian_cubic(ill);
  std::mt19937_64 rng(3);
  const std::vector<Neighbor> nb{{2, 0.0, 1.0}};
  const Rgb j = sample_illuminant(nb, ill, cubic, 0.0, 0.0, rng);
  const auto rg = rg_chromaticity(j);
  CHECK(rg[0] == doctest::Approx(rg_chromaticity(ill[2])[0]).epsilon(1e-12));
  CHECK(rg[1] == doctest::Approx(cubic(rg[0])).epsilon(1e-12));
  std::mt19937_64 a(9), b(9);
  for (int i = 0; i < 50; ++i) {
    const Rgb x = sample_illuminant(nb, ill, cubic, 0.7, 1.0, a);
    const Rgb y = sample_illuminant(nb, ill, cubic, 0.7, 1.0, b);
    CHECK(x == y);
    CHECK(std::hypot(x[0], x[1], x[2]) == doctest::Approx(1.0));
    for (double v : x) CHECK(v > 0.0);
  }
  PlanckianCubic broken = cubic;
  broken.coef = {2.0, 0, 0, 0};  // g > 1 everywhere
  CHECK_THROWS_AS(sample_illuminant(nb, ill, broken, 0.0, 0.0, rng), DataError);
}

TEST_CASE("synthetic cameras") {
  std::mt19937_64 rng(4);
  SyntheticCameraSpec spec;
  const SyntheticCamera canon = make_synthetic_camera(spec, rng);
  CHECK(canon.profile.c1.isApprox(srgb_to_xyz(), 1e-15));
  CHECK(canon.profile.c2.isApprox(srgb_to_xyz(), 1e-15));
  spec.perturbation = 0.12;
  spec.off_locus = 0.02;
  std::mt19937_64 r1(10), r2(11);
  const SyntheticCamera a = make_synthetic_camera(spec, r1);
  const SyntheticCamera b = make_synthetic_camera(spec, r2);
  auto mean_rg = [](const SyntheticCamera& c) {
    std::array<double, 2> m{0, 0};
    for (const Rgb& l : c.illuminants) {
      const auto rg = rg_chromaticity(l);
      m[0] += rg[0] / c.illuminants.size();
      m[1] += rg[1] / c.illuminants.size();
    }
    return m;
  };
  const auto ma = mean_rg(a), mb = mean_rg(b);
  CHECK(std::hypot(ma[0] - mb[0], ma[1] - mb[1]) > 1e-3);
  for (const auto* cam : {&a, &b})
    for (const Rgb& l : cam->illuminants) {
      CHECK(std::hypot(l[0], l[1], l[2]) == doctest::Approx(1.0));
      for (double v : l) CHECK(v > 0.0);
    }
  // White-balanced white maps to D65 white for every temperature.
  const Eigen::Vector3d d65 = srgb_to_xyz() * Eigen::Vector3d::Ones();
  for (double q : {2500.0, 4000.0, 7000.0}) CHECK((interp_cst(a.profile, q) * Eigen::Vector3d::Ones()).isApprox(d65, 1e-12));
}

TEST_CASE("rendered raw images carry the illuminant on white surfaces") {
  std::mt19937_64 rng(5);
  SyntheticCameraSpec spec;
  spec.perturbation = 0.1;
  const SyntheticCamera cam = make_synthetic_camera(spec, rng);
  SceneSpec ss{4, 4, 0};
  std::vector<Rgb> scene(16, Rgb{0.7, 0.7, 0.7});
  const RawImage img = render_raw(scene, ss, cam, cam.illuminants[3], cam.temperatures[3]);
  CHECK(angle(img.at(1, 1), cam.illuminants[3]) < 1e-6);
  const auto rs = random_scene(SceneSpec{}, rng);
  CHECK(rs.size() == 64u * 48u);
}

TEST_CASE("augmentation identity fixture") {
  std::mt19937_64 rng(6);
  SyntheticCameraSpec spec;
  spec.perturbation = 0.1;
  const SyntheticCamera cam = make_synthetic_camera(spec, rng);
  // Target illuminants on an exact cubic through the source illuminant, so
  // noise-free sampling with K = 1 returns the source illuminant.
  const double q_src = 4200;
  const Rgb l_src = planckian_raw_illuminant(cam.profile, q_src);
  const auto rg0 = rg_chromaticity(l_src);
  std::vector<Rgb> ill;
  std::vector<CaptureMeta> metas;
  for (int i = 0; i < 6; ++i) {
    const double r = rg0[0] + 0.02 * (i - 2);
    const double g = rg0[1] + 0.3 * (r - rg0[0]) - 0.5 * (r - rg0[0]) * (r - rg0[0]);
    ill.push_back(unit(Eigen::Vector3d(r, g, 1 - r - g)));
    CaptureMeta m;
    m.iso = 100 * (i + 1);
    metas.push_back(m);
  }
  const TargetCamera target = TargetCamera::build(cam.profile, ill, metas);
  CaptureMeta src_meta = metas[2];
  std::vector<CaptureVector> raw = target.raw_features();
  const FeatureNorms norms = FeatureNorms::from(raw);
  RawImage img(12, 8);
  std::uniform_real_distribution<double> d(0.05, 1.0);
  for (float& v : img.pixels) v = static_cast<float>(d(rng));
  AugmentConfig cfg;
  cfg.k = 1;
  cfg.lambda_r = cfg.lambda_g = 0.0;
  cfg.crop = false;
  const AugmentResult r = augment_image({&img, l_src, src_meta, &cam.profile}, target, norms, cfg, rng);
  CHECK(angle(r.illuminant, l_src) < 1e-7);  // acos resolves ~1.5e-8 near 1
  CHECK(r.source_q == r.target_q);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(r.image.pixels[i] - img.pixels[i]) <= 1e-6 * img.pixels[i]);

  cfg.crop = true;
  cfg.lambda_r = 0.7;
  cfg.lambda_g = 1.0;
  cfg.k = 4;
  cfg.out_width = 6;
  cfg.out_height = 4;
  const AugmentResult c = augment_image({&img, l_src, src_meta, &cam.profile}, target, norms, cfg, rng);
  CHECK(c.image.width == 6);
  CHECK(c.image.height == 4);
  CHECK(std::hypot(c.illuminant[0], c.illuminant[1], c.illuminant[2]) == doctest::Approx(1.0));
}

TEST_CASE("stratified source selection") {
  std::vector<double> temps;
  for (int i = 0; i < 40; ++i) temps.push_back(2600);  // crowded warm group
  temps.push_back(6100);
  temps.push_back(7400);
  std::mt19937_64 rng(7);
  const auto picks = stratified_sources(temps, 30, rng);
  REQUIRE(picks.size() == 30);
  int warm = 0;
  for (int i : picks) warm += temps[i] < 3000;
  CHECK(warm == 10);  // three groups, cycled evenly
}
