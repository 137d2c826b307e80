#pragma once

// Sensor-to-sensor augmentation: Planckian illuminants, CST interpolation,
// CCT search, raw <-> XYZ mapping, capture-metadata nearest neighbours and
// illuminant sampling around a cubic fit of the target camera's illuminants.

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "c5cc/image.hpp"

namespace c5cc {

using Mat3 = Eigen::Matrix3d;

// CSTs map white-balanced camera raw to CIE XYZ. c1 is calibrated at q1,
// c2 at q2, q1 < q2.
struct CameraProfile {
  std::string id;
  Mat3 c1 = Mat3::Identity();
  Mat3 c2 = Mat3::Identity();
  double q1 = 2850.0;
  double q2 = 6500.0;
  void validate() const;
};

struct CaptureMeta {
  double iso = 100.0;
  double aperture = 4.0;        // f-number
  double exposure_time = 0.01;  // seconds
  double baseline_exposure = 0.0;
  double baseline_noise = 1.0;
  void validate() const;
};

struct CmfTable {
  double step_nm = 5.0;
  std::vector<double> wavelength_nm, x, y, z;

  // CIE 1931 2-degree observer, 380-780 nm at 5 nm.
  static const CmfTable& cie1931();
  // Comma-separated wavelength,xbar,ybar,zbar rows; '#' lines are comments.
  static CmfTable load(const std::filesystem::path& path);
  void validate() const;
};

inline constexpr double kPlanckF1 = 3.741832e-16;  // W m^2
inline constexpr double kPlanckF2 = 1.4388e-2;     // m K

// Spectral power of a blackbody at temperature q (K) and wavelength (m).
double planck_spd(double q, double wavelength_m);

// (x, y, z) chromaticity with x + y + z = 1.
Eigen::Vector3d temp_to_xyz(double q, const CmfTable& cmf = CmfTable::cie1931());

// Interpolation weight of c1; 1 at q1, 0 at q2, linear in 1/q, clamped.
double cst_alpha(const CameraProfile& p, double q);
Mat3 interp_cst(const CameraProfile& p, double q);

// Unit-norm raw illuminant of a Planckian source: normalize(C_q^-1 xyz(q)).
Rgb planckian_raw_illuminant(const CameraProfile& p, double q, const CmfTable& cmf = CmfTable::cie1931());

struct CctSearch {
  double q_min = 2500.0;
  double q_max = 7500.0;
  double step = 10.0;
};

struct CctEstimate {
  double q = 0.0;
  Mat3 cst;
  double angular_error = 0.0;  // radians, between l_raw and the grid illuminant
};

// Grid search for the temperature whose raw illuminant is closest in angle;
// ties go to the lower temperature.
CctEstimate estimate_cct(const Rgb& l_raw, const CameraProfile& p, const CmfTable& cmf = CmfTable::cie1931(),
                         const CctSearch& grid = {});

// diag(l_g / l_r, 1, l_g / l_b)
Mat3 white_balance_matrix(const Rgb& l);

// Image with unconstrained values, interleaved like RawImage.
struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;
  std::vector<std::uint8_t> mask;
};

// Per pixel C * D_l * c.
ColorImage raw_to_xyz(const RawImage& img, const Rgb& l_raw, const Mat3& cst);
ColorImage raw_to_xyz(const RawImage& img, const Rgb& l_raw, const CameraProfile& p,
                      const CmfTable& cmf = CmfTable::cie1931());
// Per pixel D_j^-1 * M^-1 * c. Negative results are clipped to zero.
RawImage xyz_to_target_raw(const ColorImage& xyz, const Rgb& target_illuminant, const Mat3& target_cst);

using CaptureVector = std::array<double, 4>;  // temperature, gain, aperture, exposure

// Unnormalized [q, BLN * ISO, aperture, sqrt(2^BLE) * exposure_time].
CaptureVector raw_capture_feature(const CaptureMeta& meta, double q);

struct FeatureNorms {
  CaptureVector min{}, max{};
  static FeatureNorms from(const std::vector<CaptureVector>& raw);
};
// Min-max normalized feature; components with a degenerate range are 0.
CaptureVector capture_feature(const CaptureMeta& meta, double q, const FeatureNorms& norms);
CaptureVector normalize_feature(const CaptureVector& raw, const FeatureNorms& norms);

struct Neighbor {
  int index = 0;
  double distance = 0.0;  // normalized by the largest retrieved distance
  double weight = 0.0;
};

// K nearest by Euclidean distance with weights softmax(1 - d). K is clamped
// to the set size; ties keep the lower index first.
std::vector<Neighbor> knn_retrieve(const CaptureVector& query, const std::vector<CaptureVector>& targets, int k);

// rg chromaticity r = R / (R + G + B), g = G / (R + G + B).
std::array<double, 2> rg_chromaticity(const Rgb& c);

struct PlanckianCubic {
  std::array<double, 4> coef{};  // g = coef[0] + coef[1] r + coef[2] r^2 + coef[3] r^3
  double sigma_r = 0.0;
  double sigma_g = 0.0;
  double operator()(double r) const;
};

// Least-squares cubic through the rg chromaticities of the illuminants;
// sigma_r and sigma_g are the population standard deviations of the set.
PlanckianCubic fit_planckian_cubic(const std::vector<Rgb>& illuminants);

// Sampling: r from the weighted neighbour mean plus lambda_r
// noise, g from the cubic plus lambda_g noise, assembled as (r, g, 1-r-g)
// and normalized. Throws DataError after 100 rejected draws.
Rgb sample_illuminant(const std::vector<Neighbor>& neighbors, const std::vector<Rgb>& target_illuminants,
                      const PlanckianCubic& cubic, double lambda_r, double lambda_g, std::mt19937_64& rng);

// Everything about a target camera needed to map images into it.
struct TargetCamera {
  CameraProfile profile;
  std::vector<Rgb> illuminants;
  std::vector<CaptureMeta> metas;
  std::vector<double> temperatures;  // CCT of each illuminant
  PlanckianCubic cubic;

  static TargetCamera build(CameraProfile profile, std::vector<Rgb> illuminants, std::vector<CaptureMeta> metas,
                            const CmfTable& cmf = CmfTable::cie1931());
  std::vector<CaptureVector> raw_features() const;
};

struct AugmentConfig {
  int k = 4;
  double lambda_r = 0.7;
  double lambda_g = 1.0;
  bool crop = true;
  double crop_min_area = 0.8;
  int out_width = 0;  // 0 keeps the source size
  int out_height = 0;
};

struct AugmentSource {
  const RawImage* image = nullptr;
  Rgb illuminant{};
  CaptureMeta meta;
  const CameraProfile* profile = nullptr;
};

struct AugmentResult {
  RawImage image;
  Rgb illuminant{};
  double source_q = 0.0;
  double target_q = 0.0;
};

AugmentResult augment_image(const AugmentSource& src, const TargetCamera& target, const FeatureNorms& norms,
                            const AugmentConfig& cfg, std::mt19937_64& rng,
                            const CmfTable& cmf = CmfTable::cie1931());

// Random crop covering a uniform 80-100% (by default) of the area with the
// aspect ratio kept, resized back to (out_w, out_h).
RawImage random_crop(const RawImage& img, double min_area, int out_w, int out_h, std::mt19937_64& rng);

// Picks `count` source indices, cycling over 250 K temperature groups in
// 2500-7500 K in random order and drawing uniformly within each group.
std::vector<int> stratified_sources(const std::vector<double>& temperatures, int count, std::mt19937_64& rng,
                                    double group_width = 250.0);

// ---- synthetic cameras ----

// Linear sRGB (D65) to XYZ.
const Mat3& srgb_to_xyz();

struct SyntheticCameraSpec {
  std::string id = "synthetic";
  double perturbation = 0.0;  // scale of the off-diagonal cross-talk terms
  double q_min = 2500.0;      // illuminant temperature range of the camera's scenes
  double q_max = 7500.0;
  double off_locus = 0.0;  // std of log-chroma jitter added to each illuminant
  int illuminant_count = 100;
};

// CSTs are C_i = M_srgb * A_i with each A_i having unit row sums, so a
// white-balanced white always maps to D65 white. Zero perturbation gives
// A_1 = A_2 = I.
struct SyntheticCamera {
  CameraProfile profile;
  Mat3 a1 = Mat3::Identity();
  Mat3 a2 = Mat3::Identity();
  std::vector<Rgb> illuminants;
  std::vector<double> temperatures;  // Planckian temperature each one was drawn at

  Mat3 a_at(double q) const;  // interpolated like the CSTs
};

SyntheticCamera make_synthetic_camera(const SyntheticCameraSpec& spec, std::mt19937_64& rng,
                                      const CmfTable& cmf = CmfTable::cie1931());

struct SceneSpec {
  int width = 64;
  int height = 48;
  int patches = 6;
};

// Random Mondrian-like scene of surface colours (linear sRGB reflectances)
// with shading and texture.
std::vector<Rgb> random_scene(const SceneSpec& spec, std::mt19937_64& rng);

// Raw capture of a scene by a synthetic camera under `illuminant` drawn at
// temperature q: c = (A_q^-1 rho) * l, clipped at zero.
RawImage render_raw(const std::vector<Rgb>& scene, const SceneSpec& spec, const SyntheticCamera& cam,
                    const Rgb& illuminant, double q);

}  // namespace c5cc
