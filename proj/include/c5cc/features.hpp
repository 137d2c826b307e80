#pragma once

// Log-chroma histogram features.

#include <optional>
#include <span>
#include <vector>

#include "c5cc/image.hpp"

namespace c5cc {

struct HistogramConfig {
  int n = 64;
  double b_min = -2.85;
  double b_max = 2.85;

  double bin_width() const { return (b_max - b_min) / n; }
  double bin_center(int i) const { return b_min + (i + 0.5) * bin_width(); }
  void validate() const;
};

struct Uv {
  double u = 0.0;
  double v = 0.0;
};

// u = log(g/r), v = log(g/b). Returns nullopt when any component is not
// strictly positive; callers drop such pixels.
std::optional<Uv> compute_uv(const Rgb& c);

// Half-open bin containing (u, v): column index from u, row index from v.
struct BinIndex {
  int row = 0;
  int col = 0;
};
std::optional<BinIndex> bin_index(const Uv& uv, const HistogramConfig& cfg);

enum class HistogramSource { kPixels, kGradients };

struct ChromaSample {
  Uv uv;
  double weight = 0.0;
};

// Per-pixel (uv, weight) pairs before binning. Pixel samples are weighted by
// the pixel's L2 norm. Gradient samples use the per-channel sum of absolute
// forward differences in x and y, weighted by that triplet's L2 norm; a
// pixel contributes only if it and both forward neighbours are masked in.
std::vector<ChromaSample> chroma_samples(const RawImage& img, HistogramSource source);

// Unnormalized n x n histogram (row-major, rows indexed by v) of the samples
// that land in bounds.
std::vector<double> accumulate_histogram(std::span<const ChromaSample> samples, const HistogramConfig& cfg);

// L1-normalized histogram. Throws DataError when a pixel histogram has no
// mass; a gradient histogram with no mass is returned as all zeros.
std::vector<double> build_histogram(const RawImage& img, const HistogramConfig& cfg, HistogramSource source);

// n x n x 4 feature stack stored channel-major: pixel histogram, gradient
// histogram, u-coordinate plane, v-coordinate plane.
struct ChromaHistogram {
  HistogramConfig cfg;
  std::vector<double> data;

  static constexpr int kChannels = 4;
  std::span<const double> channel(int c) const {
    const std::size_t plane = static_cast<std::size_t>(cfg.n) * cfg.n;
    return std::span<const double>(data).subspan(c * plane, plane);
  }
  double at(int c, int row, int col) const {
    return data[(static_cast<std::size_t>(c) * cfg.n + row) * cfg.n + col];
  }
};

ChromaHistogram assemble_feature_stack(const RawImage& img, const HistogramConfig& cfg);

// Trace of the covariance of per-pixel (u, v) over valid pixels.
double uv_chroma_variance(const RawImage& img);

}  // namespace c5cc
