#pragma once

// Convolutional colour constancy evaluator: filters + bias (+ optional gain)
// applied to a log-chroma feature stack, softmax heat map, soft argmax and
// conversion back to an RGB illuminant.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "c5cc/features.hpp"
#include "c5cc/image.hpp"

namespace c5cc {

struct CccParams {
  int n = 0;
  std::array<std::vector<double>, 2> filters;  // pixel, gradient
  std::vector<double> bias;
  std::optional<std::vector<double>> gain;

  static CccParams zeros(int n, bool with_gain = false);
  // Throws DataError on size mismatch or non-finite entries.
  void validate() const;
};

struct HeatMap {
  int n = 0;
  std::vector<double> p;  // row-major, rows indexed by v
};

enum class ConvMode { kFft, kDirect };

// Linear same-size 2-D convolution with zero padding; the kernel is anchored
// at (rows/2, cols/2) so a delta there is the identity.
std::vector<double> convolve2d(std::span<const double> x, std::span<const double> kernel, int rows, int cols,
                               ConvMode mode = ConvMode::kFft);

std::vector<double> ccc_logits(const ChromaHistogram& h, const CccParams& params, ConvMode mode = ConvMode::kFft);
HeatMap evaluate_ccc(const ChromaHistogram& h, const CccParams& params, ConvMode mode = ConvMode::kFft);

// Max-subtracted softmax over all entries.
HeatMap softmax_heatmap(std::span<const double> logits, int n);

Uv soft_argmax(const HeatMap& p, const HistogramConfig& cfg);

// Unit-norm RGB whose log-chroma equals (u, v). Throws NumericalError when
// |u| or |v| exceeds 700.
Rgb uv_to_rgb(const Uv& uv);

Rgb estimate_illuminant(const ChromaHistogram& h, const CccParams& params, const HistogramConfig& cfg);

}  // namespace c5cc
