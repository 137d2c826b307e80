#include "c5cc/features.hpp"

#include <cmath>

#include "c5cc/error.hpp"

namespace c5cc {

void HistogramConfig::validate() const {
  if (n < 2) throw UsageError("histogram bin count must be at least 2");
  if (!(b_min < b_max)) throw UsageError("histogram bounds must satisfy b_min < b_max");
}

std::optional<Uv> compute_uv(const Rgb& c) {
  if (!(c[0] > 0.0) || !(c[1] > 0.0) || !(c[2] > 0.0)) return std::nullopt;
  return Uv{std::log(c[1] / c[0]), std::log(c[1] / c[2])};
}

std::optional<BinIndex> bin_index(const Uv& uv, const HistogramConfig& cfg) {
  const double eps = cfg.bin_width();
  const double fu = std::floor((uv.u - cfg.b_min) / eps);
  const double fv = std::floor((uv.v - cfg.b_min) / eps);
  if (!(fu >= 0.0 && fu < cfg.n && fv >= 0.0 && fv < cfg.n)) return std::nullopt;
  return BinIndex{static_cast<int>(fv), static_cast<int>(fu)};
}

std::vector<ChromaSample> chroma_samples(const RawImage& img, HistogramSource source) {
  std::vector<ChromaSample> out;
  auto norm = [](const Rgb& c) { return std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]); };
  if (source == HistogramSource::kPixels) {
    out.reserve(img.pixel_count());
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        if (!img.valid(x, y)) continue;
        const Rgb c = img.at(x, y);
        if (auto uv = compute_uv(c)) out.push_back({*uv, norm(c)});
      }
    return out;
  }
  for (int y = 0; y + 1 < img.height; ++y)
    for (int x = 0; x + 1 < img.width; ++x) {
      if (!img.valid(x, y) || !img.valid(x + 1, y) || !img.valid(x, y + 1)) continue;
      const Rgb c = img.at(x, y), right = img.at(x + 1, y), down = img.at(x, y + 1);
      Rgb g;
      for (int k = 0; k < 3; ++k) g[k] = std::abs(right[k] - c[k]) + std::abs(down[k] - c[k]);
      if (auto uv = compute_uv(g)) out.push_back({*uv, norm(g)});
    }
  return out;
}

std::vector<double> accumulate_histogram(std::span<const ChromaSample> samples, const HistogramConfig& cfg) {
  cfg.validate();
  std::vector<double> hist(static_cast<std::size_t>(cfg.n) * cfg.n, 0.0);
  for (const ChromaSample& s : samples) {
    if (auto bin = bin_index(s.uv, cfg)) hist[static_cast<std::size_t>(bin->row) * cfg.n + bin->col] += s.weight;
  }
  return hist;
}

std::vector<double> build_histogram(const RawImage& img, const HistogramConfig& cfg, HistogramSource source) {
  const std::vector<ChromaSample> samples = chroma_samples(img, source);
  std::vector<double> hist = accumulate_histogram(samples, cfg);
  double total = 0.0;
  for (double v : hist) total += v;
  if (total <= 0.0) {
    if (source == HistogramSource::kGradients) return hist;
    throw DataError("empty histogram: image has no valid in-bounds pixels");
  }
  for (double& v : hist) v /= total;
  return hist;
}

ChromaHistogram assemble_feature_stack(const RawImage& img, const HistogramConfig& cfg) {
  cfg.validate();
  const int n = cfg.n;
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  ChromaHistogram h{cfg, std::vector<double>(plane * ChromaHistogram::kChannels, 0.0)};
  const std::vector<double> pix = build_histogram(img, cfg, HistogramSource::kPixels);
  const std::vector<double> grad = build_histogram(img, cfg, HistogramSource::kGradients);
  std::copy(pix.begin(), pix.end(), h.data.begin());
  std::copy(grad.begin(), grad.end(), h.data.begin() + plane);
  for (int row = 0; row < n; ++row)
    for (int col = 0; col < n; ++col) {
      h.data[2 * plane + static_cast<std::size_t>(row) * n + col] = cfg.bin_center(col);
      h.data[3 * plane + static_cast<std::size_t>(row) * n + col] = cfg.bin_center(row);
    }
  return h;
}

double uv_chroma_variance(const RawImage& img) {
  double su = 0, sv = 0, suu = 0, svv = 0;
  std::size_t count = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (!img.valid(x, y)) continue;
      if (auto uv = compute_uv(img.at(x, y))) {
        su += uv->u;
        sv += uv->v;
        suu += uv->u * uv->u;
        svv += uv->v * uv->v;
        ++count;
      }
    }
  if (count == 0) throw DataError("no valid pixels for chroma variance");
  const double n = static_cast<double>(count);
  const double mu = su / n, mv = sv / n;
  return (suu / n - mu * mu) + (svv / n - mv * mv);
}

}  // namespace c5cc
