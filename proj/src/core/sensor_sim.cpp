#include "c5cc/sensor_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "c5cc/error.hpp"

namespace c5cc {

namespace {

Eigen::Vector3d vec(const Rgb& c) { return {c[0], c[1], c[2]}; }

Rgb normalized(const Eigen::Vector3d& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("cannot normalize a zero or non-finite colour");
  return {v[0] / n, v[1] / n, v[2] / n};
}

Mat3 checked_inverse(const Mat3& m, const char* what) {
  Mat3 inv;
  bool ok = false;
  double det = 0.0;
  m.computeInverseAndDetWithCheck(inv, det, ok, 1e-12);
  if (!ok || !inv.allFinite()) throw DataError(std::string(what) + " is singular");
  return inv;
}

double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double c = a.dot(b) / (a.norm() * b.norm());
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace

void CameraProfile::validate() const {
  if (!(q1 > 0.0 && q1 < q2)) throw DataError("camera profile " + id + ": need 0 < q1 < q2");
  if (!c1.allFinite() || !c2.allFinite()) throw DataError("camera profile " + id + ": non-finite CST");
  checked_inverse(c1, "CST C1");
  checked_inverse(c2, "CST C2");
}

void CaptureMeta::validate() const {
  if (!(iso > 0.0 && aperture > 0.0 && exposure_time > 0.0 && baseline_noise > 0.0) ||
      !std::isfinite(baseline_exposure)) {
    throw DataError("capture metadata must hold positive physical quantities");
  }
}

// ---------------------------------------------------------------------------
// Colorimetry

void CmfTable::validate() const {
  const std::size_t n = wavelength_nm.size();
  if (n < 2 || x.size() != n || y.size() != n || z.size() != n) throw DataError("CMF table columns differ in length");
  if (!(step_nm > 0.0)) throw DataError("CMF step must be positive");
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] < 0.0 || y[i] < 0.0 || z[i] < 0.0) throw DataError("CMF values must be non-negative");
    if (i > 0 && std::abs(wavelength_nm[i] - wavelength_nm[i - 1] - step_nm) > 1e-9) {
      throw DataError("CMF wavelengths must be evenly spaced and increasing");
    }
  }
}

CmfTable CmfTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CMF table " + path.string());
  CmfTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::array<double, 4> v{};
    char comma = 0;
    if (!(ss >> v[0] >> comma >> v[1] >> comma >> v[2] >> comma >> v[3])) {
      throw DataError("malformed CMF row: " + line);
    }
    t.wavelength_nm.push_back(v[0]);
    t.x.push_back(v[1]);
    t.y.push_back(v[2]);
    t.z.push_back(v[3]);
  }
  if (t.wavelength_nm.size() >= 2) t.step_nm = t.wavelength_nm[1] - t.wavelength_nm[0];
  t.validate();
  return t;
}

double planck_spd(double q, double wavelength_m) {
  if (!(q >= 500.0 && q <= 20000.0)) throw DataError("temperature outside [500, 20000] K");
  if (!(wavelength_m >= 380e-9 * (1 - 1e-12) && wavelength_m <= 780e-9 * (1 + 1e-12))) {
    throw DataError("wavelength outside [380, 780] nm");
  }
  return kPlanckF1 * std::pow(wavelength_m, -5.0) / std::expm1(kPlanckF2 / (wavelength_m * q));
}

Eigen::Vector3d temp_to_xyz(double q, const CmfTable& cmf) {
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < cmf.wavelength_nm.size(); ++i) {
    const double s = planck_spd(q, cmf.wavelength_nm[i] * 1e-9);
    xyz += s * Eigen::Vector3d(cmf.x[i], cmf.y[i], cmf.z[i]);
  }
  xyz *= cmf.step_nm;
  const double total = xyz.sum();
  if (!(total > 0.0)) throw NumericalError("degenerate tristimulus values");
  return xyz / total;
}

double cst_alpha(const CameraProfile& p, double q) {
  if (p.q1 == p.q2) throw DataError("CST calibration temperatures coincide");
  if (!(q > 0.0)) throw DataError("temperature must be positive");
  const double a = (1.0 / q - 1.0 / p.q2) / (1.0 / p.q1 - 1.0 / p.q2);
  return std::clamp(a, 0.0, 1.0);
}

Mat3 interp_cst(const CameraProfile& p, double q) {
  const double a = cst_alpha(p, q);
  return a * p.c1 + (1.0 - a) * p.c2;
}

Rgb planckian_raw_illuminant(const CameraProfile& p, double q, const CmfTable& cmf) {
  return normalized(checked_inverse(interp_cst(p, q), "CST") * temp_to_xyz(q, cmf));
}

CctEstimate estimate_cct(const Rgb& l_raw, const CameraProfile& p, const CmfTable& cmf, const CctSearch& grid) {
  if (!(l_raw[0] > 0.0 && l_raw[1] > 0.0 && l_raw[2] > 0.0)) throw DataError("raw illuminant must be positive");
  if (!(grid.step > 0.0 && grid.q_min <= grid.q_max)) throw UsageError("invalid CCT grid");
  const Eigen::Vector3d target = vec(l_raw);
  const int steps = static_cast<int>(std::floor((grid.q_max - grid.q_min) / grid.step + 1e-9));
  CctEstimate best;
  best.angular_error = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= steps; ++i) {
    const double q = grid.q_min + i * grid.step;
    const Mat3 c = interp_cst(p, q);
    const Eigen::Vector3d cand = checked_inverse(c, "CST") * temp_to_xyz(q, cmf);
    const double err = angle_between(cand, target);
    if (err < best.angular_error) {
      best.q = q;
      best.cst = c;
      best.angular_error = err;
    }
  }
  return best;
}

Mat3 white_balance_matrix(const Rgb& l) {
  if (!(l[0] > 0.0 && l[1] > 0.0 && l[2] > 0.0)) throw DataError("illuminant must be positive");
  return Eigen::Vector3d(l[1] / l[0], 1.0, l[1] / l[2]).asDiagonal();
}

ColorImage raw_to_xyz(const RawImage& img, const Rgb& l_raw, const Mat3& cst) {
  const Mat3 m = cst * white_balance_matrix(l_raw);
  ColorImage out{img.width, img.height, std::vector<double>(img.pixels.size()), img.mask};
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const Eigen::Vector3d c(img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]);
    const Eigen::Vector3d x = m * c;
    for (int k = 0; k < 3; ++k) out.pixels[3 * i + k] = x[k];
  }
  return out;
}

ColorImage raw_to_xyz(const RawImage& img, const Rgb& l_raw, const CameraProfile& p, const CmfTable& cmf) {
  return raw_to_xyz(img, l_raw, estimate_cct(l_raw, p, cmf).cst);
}

RawImage xyz_to_target_raw(const ColorImage& xyz, const Rgb& target_illuminant, const Mat3& target_cst) {
  const Mat3 m = checked_inverse(white_balance_matrix(target_illuminant), "white balance") *
                 checked_inverse(target_cst, "target CST");
  RawImage out(xyz.width, xyz.height);
  out.mask = xyz.mask;
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    const Eigen::Vector3d c(xyz.pixels[3 * i], xyz.pixels[3 * i + 1], xyz.pixels[3 * i + 2]);
    const Eigen::Vector3d r = m * c;
    for (int k = 0; k < 3; ++k) out.pixels[3 * i + k] = static_cast<float>(std::max(0.0, r[k]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Capture metadata neighbours

CaptureVector raw_capture_feature(const CaptureMeta& meta, double q) {
  meta.validate();
  return {q, meta.baseline_noise * meta.iso, meta.aperture,
          std::sqrt(std::exp2(meta.baseline_exposure)) * meta.exposure_time};
}

FeatureNorms FeatureNorms::from(const std::vector<CaptureVector>& raw) {
  if (raw.empty()) throw DataError("no capture features to normalize over");
  FeatureNorms n;
  n.min = n.max = raw.front();
  for (const auto& v : raw)
    for (int k = 0; k < 4; ++k) {
      n.min[k] = std::min(n.min[k], v[k]);
      n.max[k] = std::max(n.max[k], v[k]);
    }
  return n;
}

CaptureVector normalize_feature(const CaptureVector& raw, const FeatureNorms& norms) {
  CaptureVector out{};
  for (int k = 0; k < 4; ++k) {
    const double range = norms.max[k] - norms.min[k];
    out[k] = range > 0.0 ? (raw[k] - norms.min[k]) / range : 0.0;
  }
  return out;
}

CaptureVector capture_feature(const CaptureMeta& meta, double q, const FeatureNorms& norms) {
  return normalize_feature(raw_capture_feature(meta, q), norms);
}

std::vector<Neighbor> knn_retrieve(const CaptureVector& query, const std::vector<CaptureVector>& targets, int k) {
  if (targets.empty()) throw DataError("empty target set for nearest neighbours");
  if (k < 1) throw UsageError("K must be at least 1");
  std::vector<Neighbor> all(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double s = 0.0;
    for (int c = 0; c < 4; ++c) s += (targets[i][c] - query[c]) * (targets[i][c] - query[c]);
    all[i] = {static_cast<int>(i), std::sqrt(s), 0.0};
  }
  const std::size_t kk = std::min<std::size_t>(k, all.size());
  std::partial_sort(all.begin(), all.begin() + kk, all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
  });
  all.resize(kk);
  const double dmax = all.back().distance;
  double z = 0.0;
  for (Neighbor& n : all) {
    n.distance = dmax > 0.0 ? n.distance / dmax : 0.0;
    n.weight = std::exp(1.0 - n.distance);
    z += n.weight;
  }
  for (Neighbor& n : all) n.weight /= z;
  return all;
}

// ---------------------------------------------------------------------------
// Illuminant sampling

std::array<double, 2> rg_chromaticity(const Rgb& c) {
  const double s = c[0] + c[1] + c[2];
  if (!(s > 0.0)) throw DataError("chromaticity of a colour with non-positive sum");
  return {c[0] / s, c[1] / s};
}

double PlanckianCubic::operator()(double r) const {
  return coef[0] + r * (coef[1] + r * (coef[2] + r * coef[3]));
}

PlanckianCubic fit_planckian_cubic(const std::vector<Rgb>& illuminants) {
  const auto n = static_cast<Eigen::Index>(illuminants.size());
  if (n < 4) throw DataError("cubic fit needs at least 4 illuminants");
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd g(n), r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto rg = rg_chromaticity(illuminants[i]);
    r[i] = rg[0];
    g[i] = rg[1];
    a(i, 0) = 1.0;
    a(i, 1) = rg[0];
    a(i, 2) = rg[0] * rg[0];
    a(i, 3) = rg[0] * rg[0] * rg[0];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < 4) throw DataError("cubic fit is rank deficient (too few distinct r chromaticities)");
  const Eigen::VectorXd x = qr.solve(g);
  PlanckianCubic c;
  for (int k = 0; k < 4; ++k) c.coef[k] = x[k];
  c.sigma_r = std::sqrt((r.array() - r.mean()).square().mean());
  c.sigma_g = std::sqrt((g.array() - g.mean()).square().mean());
  return c;
}

Rgb sample_illuminant(const std::vector<Neighbor>& neighbors, const std::vector<Rgb>& target_illuminants,
                      const PlanckianCubic& cubic, double lambda_r, double lambda_g, std::mt19937_64& rng) {
  if (neighbors.empty()) throw DataError("no neighbours to sample an illuminant from");
  double r_mean = 0.0;
  for (const Neighbor& nb : neighbors) r_mean += nb.weight * rg_chromaticity(target_illuminants.at(nb.index))[0];
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double r = r_mean + lambda_r * cubic.sigma_r * unit(rng);
    const double g = cubic(r) + lambda_g * cubic.sigma_g * unit(rng);
    const double b = 1.0 - r - g;
    if (r > 0.0 && g > 0.0 && b > 0.0) return normalized(Eigen::Vector3d(r, g, b));
  }
  throw DataError("illuminant sampling rejected 100 draws; cubic or spread is degenerate");
}

// ---------------------------------------------------------------------------
// Augmentation

TargetCamera TargetCamera::build(CameraProfile profile, std::vector<Rgb> illuminants, std::vector<CaptureMeta> metas,
                                 const CmfTable& cmf) {
  profile.validate();
  if (illuminants.empty() || illuminants.size() != metas.size()) {
    throw DataError("target camera needs one capture record per illuminant");
  }
  TargetCamera t;
  t.profile = std::move(profile);
  t.illuminants = std::move(illuminants);
  t.metas = std::move(metas);
  for (const Rgb& l : t.illuminants) t.temperatures.push_back(estimate_cct(l, t.profile, cmf).q);
  t.cubic = fit_planckian_cubic(t.illuminants);
  return t;
}

std::vector<CaptureVector> TargetCamera::raw_features() const {
  std::vector<CaptureVector> out;
  for (std::size_t i = 0; i < metas.size(); ++i) out.push_back(raw_capture_feature(metas[i], temperatures[i]));
  return out;
}

RawImage random_crop(const RawImage& img, double min_area, int out_w, int out_h, std::mt19937_64& rng) {
  if (!(min_area > 0.0 && min_area <= 1.0)) throw UsageError("crop area fraction must be in (0, 1]");
  std::uniform_real_distribution<double> area(min_area, 1.0);
  const double s = std::sqrt(area(rng));
  const int cw = std::clamp(static_cast<int>(std::lround(s * img.width)), 1, img.width);
  const int ch = std::clamp(static_cast<int>(std::lround(s * img.height)), 1, img.height);
  const int x0 = std::uniform_int_distribution<int>(0, img.width - cw)(rng);
  const int y0 = std::uniform_int_distribution<int>(0, img.height - ch)(rng);
  return resize(crop(img, x0, y0, cw, ch), out_w, out_h);
}

AugmentResult augment_image(const AugmentSource& src, const TargetCamera& target, const FeatureNorms& norms,
                            const AugmentConfig& cfg, std::mt19937_64& rng, const CmfTable& cmf) {
  if (!src.image || !src.profile) throw DataError("augmentation source is incomplete");
  src.image->validate();
  const CctEstimate source = estimate_cct(src.illuminant, *src.profile, cmf);
  const ColorImage xyz = raw_to_xyz(*src.image, src.illuminant, source.cst);

  std::vector<CaptureVector> features = target.raw_features();
  for (auto& f : features) f = normalize_feature(f, norms);
  const auto neighbors = knn_retrieve(capture_feature(src.meta, source.q, norms), features, cfg.k);
  AugmentResult out;
  out.illuminant = sample_illuminant(neighbors, target.illuminants, target.cubic, cfg.lambda_r, cfg.lambda_g, rng);
  const CctEstimate dest = estimate_cct(out.illuminant, target.profile, cmf);
  out.source_q = source.q;
  out.target_q = dest.q;
  out.image = xyz_to_target_raw(xyz, out.illuminant, dest.cst);

  const int w = cfg.out_width > 0 ? cfg.out_width : src.image->width;
  const int h = cfg.out_height > 0 ? cfg.out_height : src.image->height;
  if (cfg.crop) {
    out.image = random_crop(out.image, cfg.crop_min_area, w, h, rng);
  } else if (w != out.image.width || h != out.image.height) {
    out.image = resize(out.image, w, h);
  }
  return out;
}

std::vector<int> stratified_sources(const std::vector<double>& temperatures, int count, std::mt19937_64& rng,
                                    double group_width) {
  if (temperatures.empty()) throw DataError("no source images to select from");
  if (!(group_width > 0.0)) throw UsageError("group width must be positive");
  const int groups = static_cast<int>(std::ceil((7500.0 - 2500.0) / group_width));
  std::vector<std::vector<int>> members(groups);
  for (int i = 0; i < static_cast<int>(temperatures.size()); ++i) {
    const int g = std::clamp(static_cast<int>(std::floor((temperatures[i] - 2500.0) / group_width)), 0, groups - 1);
    members[g].push_back(i);
  }
  std::vector<int> nonempty;
  for (int g = 0; g < groups; ++g)
    if (!members[g].empty()) nonempty.push_back(g);
  std::vector<int> out;
  while (static_cast<int>(out.size()) < count) {
    std::shuffle(nonempty.begin(), nonempty.end(), rng);
    for (int g : nonempty) {
      if (static_cast<int>(out.size()) == count) break;
      const auto& m = members[g];
      out.push_back(m[std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic cameras

const Mat3& srgb_to_xyz() {
  static const Mat3 m = [] {
    Mat3 t;
    t << 0.4124564, 0.3575761, 0.1804375,  //
        0.2126729, 0.7151522, 0.0721750,   //
        0.0193339, 0.1191920, 0.9503041;
    return t;
  }();
  return m;
}

Mat3 SyntheticCamera::a_at(double q) const {
  const double a = cst_alpha(profile, q);
  return a * a1 + (1.0 - a) * a2;
}

namespace {

// I + P with zero row sums in P, so A * (1,1,1) = (1,1,1).
Mat3 crosstalk(double sigma, std::mt19937_64& rng) {
  Mat3 a = Mat3::Identity();
  if (sigma == 0.0) return a;
  std::normal_distribution<double> d(0.0, sigma);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) {
        const double p = d(rng);
        a(i, j) += p;
        a(i, i) -= p;
      }
  return a;
}

bool well_conditioned(const Mat3& a) {
  Eigen::JacobiSVD<Mat3> svd(a);
  const auto s = svd.singularValues();
  return s[2] > 0.2 && s[0] / s[2] < 20.0;
}

}  // namespace

SyntheticCamera make_synthetic_camera(const SyntheticCameraSpec& spec, std::mt19937_64& rng, const CmfTable& cmf) {
  if (spec.perturbation < 0.0 || spec.off_locus < 0.0 || spec.illuminant_count < 1 ||
      !(spec.q_min >= 2500.0 && spec.q_min <= spec.q_max && spec.q_max <= 7500.0)) {
    throw UsageError("invalid synthetic camera specification");
  }
  SyntheticCamera cam;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw NumericalError("could not draw a well-conditioned camera");
    cam.a1 = crosstalk(spec.perturbation, rng);
    cam.a2 = cam.a1 + (crosstalk(spec.perturbation / 3.0, rng) - Mat3::Identity());
    if (well_conditioned(cam.a1) && well_conditioned(cam.a2)) break;
  }
  cam.profile.id = spec.id;
  cam.profile.q1 = 2850.0;
  cam.profile.q2 = 6500.0;
  cam.profile.c1 = srgb_to_xyz() * cam.a1;
  cam.profile.c2 = srgb_to_xyz() * cam.a2;
  cam.profile.validate();

  // Uniform in reciprocal temperature, as illuminant populations cluster
  // toward the warm end of the locus in mired terms.
  std::uniform_real_distribution<double> mired(1e6 / spec.q_max, 1e6 / spec.q_min);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (int i = 0; i < spec.illuminant_count; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 100) throw NumericalError("synthetic illuminants are not positive");
      const double q = 1e6 / mired(rng);
      Rgb l = planckian_raw_illuminant(cam.profile, q, cmf);
      l[0] *= std::exp(-spec.off_locus * jitter(rng));
      l[2] *= std::exp(-spec.off_locus * jitter(rng));
      if (!(l[0] > 0.0 && l[1] > 0.0 && l[2] > 0.0)) continue;
      cam.illuminants.push_back(normalized(vec(l)));
      cam.temperatures.push_back(q);
      break;
    }
  }
  return cam;
}

namespace {

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

}  // namespace

std::vector<Rgb> random_scene(const SceneSpec& spec, std::mt19937_64& rng) {
  if (spec.width < 2 || spec.height < 2 || spec.patches < 0) throw UsageError("invalid scene size");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto surface = [&]() -> Rgb {
    if (u01(rng) < 0.2) {
      const double v = 0.3 + 0.6 * u01(rng);
      return {v, v, v};
    }
    return hsv_to_rgb(u01(rng), 0.15 + 0.75 * u01(rng), 0.25 + 0.7 * u01(rng));
  };
  const int w = spec.width, h = spec.height;
  std::vector<Rgb> scene(static_cast<std::size_t>(w) * h, surface());
  for (int p = 0; p < spec.patches; ++p) {
    const Rgb c = surface();
    const double cx = u01(rng) * w, cy = u01(rng) * h;
    const double rx = (0.08 + 0.25 * u01(rng)) * w, ry = (0.08 + 0.25 * u01(rng)) * h;
    const bool ellipse = u01(rng) < 0.5;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside) scene[static_cast<std::size_t>(y) * w + x] = c;
      }
  }
  // Smooth shading ramp and mild per-pixel texture.
  const double gx = 0.4 * (u01(rng) - 0.5), gy = 0.4 * (u01(rng) - 0.5);
  std::normal_distribution<double> tex(0.0, 0.04);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double shade = (1.0 + gx * (2.0 * x / w - 1.0) + gy * (2.0 * y / h - 1.0)) * std::exp(tex(rng));
      for (double& v : scene[static_cast<std::size_t>(y) * w + x]) v *= shade;
    }
  return scene;
}

RawImage render_raw(const std::vector<Rgb>& scene, const SceneSpec& spec, const SyntheticCamera& cam,
                    const Rgb& illuminant, double q) {
  if (scene.size() != static_cast<std::size_t>(spec.width) * spec.height) throw DataError("scene size mismatch");
  const Mat3 inv = checked_inverse(cam.a_at(q), "camera cross-talk matrix");
  const double gmax = std::max({illuminant[0], illuminant[1], illuminant[2]});
  const Eigen::Vector3d l = vec(illuminant) / gmax;
  RawImage img(spec.width, spec.height);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Eigen::Vector3d c = (inv * vec(scene[i])).cwiseMax(0.0).cwiseProduct(l);
    for (int k = 0; k < 3; ++k) img.pixels[3 * i + k] = static_cast<float>(c[k]);
  }
  return img;
}

}  // namespace c5cc
