#include "c5cc/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "c5cc/error.hpp"

namespace c5cc {

RawImage::RawImage(int w, int h) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw DataError("image dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(w) * h * 3, 0.0f);
  mask.assign(static_cast<std::size_t>(w) * h, 1);
}

Rgb RawImage::at(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void RawImage::set(int x, int y, const Rgb& c) {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  for (int k = 0; k < 3; ++k) pixels[i + k] = static_cast<float>(c[k]);
}

void RawImage::validate() const {
  if (width <= 0 || height <= 0) throw DataError("image has no pixels");
  if (pixels.size() != pixel_count() * 3) throw DataError("pixel buffer does not match dimensions");
  if (mask.size() != pixel_count()) throw DataError("mask dimensions differ from image dimensions");
  for (float v : pixels) {
    if (!std::isfinite(v) || v < 0.0f) throw DataError("raw pixels must be finite and non-negative");
  }
}

RawImage scaled_channels(const RawImage& img, const Rgb& gains) {
  RawImage out = img;
  for (std::size_t i = 0; i < out.pixel_count(); ++i)
    for (int c = 0; c < 3; ++c) out.pixels[3 * i + c] = static_cast<float>(img.pixels[3 * i + c] * gains[c]);
  return out;
}

RawImage resize(const RawImage& img, int width, int height) {
  if (width == img.width && height == img.height) return img;
  RawImage out(width, height);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const int y0 = static_cast<int>(std::floor(y * sy));
    const int y1 = std::max(y0 + 1, static_cast<int>(std::ceil((y + 1) * sy)));
    for (int x = 0; x < width; ++x) {
      const int x0 = static_cast<int>(std::floor(x * sx));
      const int x1 = std::max(x0 + 1, static_cast<int>(std::ceil((x + 1) * sx)));
      Rgb acc{0, 0, 0};
      int total = 0, valid = 0;
      for (int yy = y0; yy < std::min(y1, img.height); ++yy)
        for (int xx = x0; xx < std::min(x1, img.width); ++xx) {
          ++total;
          if (!img.valid(xx, yy)) continue;
          ++valid;
          const Rgb c = img.at(xx, yy);
          for (int k = 0; k < 3; ++k) acc[k] += c[k];
        }
      if (valid > 0) {
        for (double& v : acc) v /= valid;
        out.set(x, y, acc);
      }
      out.mask[static_cast<std::size_t>(y) * width + x] = (valid > 0 && 2 * valid >= total) ? 1 : 0;
    }
  }
  return out;
}

RawImage crop(const RawImage& img, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > img.width || y0 + h > img.height) {
    throw DataError("crop rectangle outside image");
  }
  RawImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      out.set(x, y, img.at(x0 + x, y0 + y));
      out.mask[static_cast<std::size_t>(y) * w + x] = img.mask[static_cast<std::size_t>(y0 + y) * img.width + x0 + x];
    }
  return out;
}

namespace {

struct PfmHeader {
  int channels = 0;
  int width = 0;
  int height = 0;
  bool little_endian = true;
};

PfmHeader read_header(std::istream& in, const std::filesystem::path& path) {
  std::string magic;
  PfmHeader h;
  double scale = 0.0;
  if (!(in >> magic >> h.width >> h.height >> scale)) throw DataError("malformed PFM header: " + path.string());
  in.get();  // single whitespace before payload
  if (magic == "PF") {
    h.channels = 3;
  } else if (magic == "Pf") {
    h.channels = 1;
  } else {
    throw DataError("not a PFM file: " + path.string());
  }
  if (h.width <= 0 || h.height <= 0 || scale == 0.0) throw DataError("malformed PFM header: " + path.string());
  h.little_endian = scale < 0.0;
  return h;
}

std::vector<float> read_payload(std::istream& in, const PfmHeader& h, const std::filesystem::path& path) {
  const std::size_t count = static_cast<std::size_t>(h.width) * h.height * h.channels;
  std::vector<std::uint32_t> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * 4));
  if (in.gcount() != static_cast<std::streamsize>(count * 4)) throw DataError("truncated PFM payload: " + path.string());
  const bool host_little = std::endian::native == std::endian::little;
  std::vector<float> values(count);
  const std::size_t row = static_cast<std::size_t>(h.width) * h.channels;
  for (int y = 0; y < h.height; ++y) {
    // File rows run bottom to top.
    const std::size_t src = static_cast<std::size_t>(h.height - 1 - y) * row;
    for (std::size_t i = 0; i < row; ++i) {
      std::uint32_t bits = raw[src + i];
      if (h.little_endian != host_little) bits = __builtin_bswap32(bits);
      values[static_cast<std::size_t>(y) * row + i] = std::bit_cast<float>(bits);
    }
  }
  return values;
}

void write_pfm_impl(const std::filesystem::path& path, const float* values, int width, int height, int channels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << (channels == 3 ? "PF" : "Pf") << '\n' << width << ' ' << height << '\n' << "-1.0" << '\n';
  const std::size_t row = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint32_t> buf(row);
  for (int y = height - 1; y >= 0; --y) {
    for (std::size_t i = 0; i < row; ++i) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(values[static_cast<std::size_t>(y) * row + i]);
      if constexpr (std::endian::native != std::endian::little) bits = __builtin_bswap32(bits);
      buf[i] = bits;
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(row * 4));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

RawImage read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const PfmHeader h = read_header(in, path);
  if (h.channels != 3) throw DataError("expected 3-channel PFM: " + path.string());
  RawImage img(h.width, h.height);
  img.pixels = read_payload(in, h, path);
  return img;
}

void write_pfm(const std::filesystem::path& path, const RawImage& img) {
  write_pfm_impl(path, img.pixels.data(), img.width, img.height, 3);
}

std::vector<float> read_pfm_gray(const std::filesystem::path& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const PfmHeader h = read_header(in, path);
  if (h.channels != 1) throw DataError("expected single-channel PFM: " + path.string());
  width = h.width;
  height = h.height;
  return read_payload(in, h, path);
}

void write_pfm_gray(const std::filesystem::path& path, const std::vector<float>& values, int width, int height) {
  if (values.size() != static_cast<std::size_t>(width) * height) throw DataError("gray map size mismatch");
  write_pfm_impl(path, values.data(), width, height, 1);
}

RawImage load_image(const std::filesystem::path& image_path, const std::filesystem::path& mask_path) {
  RawImage img = read_pfm(image_path);
  if (!mask_path.empty()) {
    int w = 0, h = 0;
    const std::vector<float> m = read_pfm_gray(mask_path, w, h);
    if (w != img.width || h != img.height) throw DataError("mask dimensions differ from image: " + mask_path.string());
    for (std::size_t i = 0; i < m.size(); ++i) img.mask[i] = m[i] > 0.5f ? 1 : 0;
  }
  img.validate();
  return img;
}

}  // namespace c5cc
