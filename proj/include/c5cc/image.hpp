#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace c5cc {

using Rgb = std::array<double, 3>;

// Linear raw image, black level already subtracted. Pixels are interleaved
// RGB, row-major, top row first. A mask entry of 1 marks a pixel that takes
// part in estimation (0 excludes e.g. a calibration chart).
struct RawImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;
  std::vector<std::uint8_t> mask;

  RawImage() = default;
  RawImage(int w, int h);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  Rgb at(int x, int y) const;
  void set(int x, int y, const Rgb& c);
  bool valid(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }

  // Throws DataError on negative or non-finite pixels or mask size mismatch.
  void validate() const;
};

RawImage scaled_channels(const RawImage& img, const Rgb& gains);

// Area-averaging resize over masked-in pixels. An output pixel stays valid
// when at least half of the input pixels it covers are valid.
RawImage resize(const RawImage& img, int width, int height);

// Crops the rectangle [x0, x0 + w) x [y0, y0 + h).
RawImage crop(const RawImage& img, int x0, int y0, int w, int h);

// Portable float map I/O. Colour images use the "PF" header, masks the
// single-channel "Pf" header; payloads are little-endian 32-bit floats
// stored bottom row first, as in the common PFM convention.
RawImage read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const RawImage& img);
std::vector<float> read_pfm_gray(const std::filesystem::path& path, int& width, int& height);
void write_pfm_gray(const std::filesystem::path& path, const std::vector<float>& values, int width, int height);
// Loads an image and, if `mask_path` is non-empty, applies its mask (values > 0.5 are kept).
RawImage load_image(const std::filesystem::path& image_path, const std::filesystem::path& mask_path);

}  // namespace c5cc
