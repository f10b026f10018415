#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "actionrec/errors.hpp"

namespace actionrec {

// Row-major, interleaved channels, samples in [0,1].
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, int channels, double fill = 0.0)
      : width_(width), height_(height), channels_(channels) {
    if (width < 1 || height < 1) throw ShapeError("image dimensions must be >= 1");
    if (channels != 1 && channels != 3) throw ShapeError("channels must be 1 or 3");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }
  ImageBuffer(int width, int height, int channels, std::vector<double> data)
      : ImageBuffer(width, height, channels) {
    if (data.size() != data_.size())
      throw ShapeError("data length " + std::to_string(data.size()) + " != w*h*c " +
                       std::to_string(data_.size()));
    data_ = std::move(data);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int x, int y, int c = 0) noexcept {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  double at(int x, int y, int c = 0) const noexcept {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  // Clamp-to-edge access.
  double clamped(int x, int y, int c = 0) const noexcept {
    return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1), c);
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  // Single channel copy.
  ImageBuffer channel(int c) const {
    if (c < 0 || c >= channels_) throw DomainError("channel index out of range");
    ImageBuffer out(width_, height_, 1);
    for (std::size_t i = 0; i < pixel_count(); ++i) out.data_[i] = data_[i * channels_ + c];
    return out;
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void skip_pnm_whitespace(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(in, dummy);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline long read_pnm_int(std::istream& in, const std::string& what) {
  skip_pnm_whitespace(in);
  long v = 0;
  int digits = 0;
  while (std::isdigit(in.peek())) {
    v = v * 10 + (in.get() - '0');
    if (++digits > 9) throw FormatError("PNM header: " + what + " too large");
  }
  if (digits == 0) throw FormatError("PNM header: expected integer for " + what);
  return v;
}

}  // namespace detail

struct PnmHeader {
  char kind = 0;  // '5' or '6'
  int width = 0;
  int height = 0;
  int maxval = 0;
};

// Reads magic, dimensions and maxval, leaving the stream at the first payload
// byte.
inline PnmHeader read_pnm_header(std::istream& in) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw FormatError("not a binary PPM/PGM (expected P5 or P6)");
  PnmHeader h;
  h.kind = magic[1];
  h.width = static_cast<int>(detail::read_pnm_int(in, "width"));
  h.height = static_cast<int>(detail::read_pnm_int(in, "height"));
  h.maxval = static_cast<int>(detail::read_pnm_int(in, "maxval"));
  const int sep = in.get();
  if (sep != ' ' && sep != '\n' && sep != '\t' && sep != '\r')
    throw FormatError("PNM header: missing whitespace before payload");
  if (h.width < 1 || h.height < 1) throw FormatError("PNM header: zero dimension");
  return h;
}

inline ImageBuffer load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  PnmHeader h;
  try {
    h = read_pnm_header(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (h.maxval != 255)
    throw FormatError(path.string() + ": only maxval 255 is supported, got " +
                      std::to_string(h.maxval));
  const int channels = h.kind == '6' ? 3 : 1;
  ImageBuffer img(h.width, h.height, channels);
  std::vector<unsigned char> raw(img.data().size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw IoError(path.string() + ": truncated payload (" + std::to_string(in.gcount()) +
                  " of " + std::to_string(raw.size()) + " bytes)");
  auto out = img.data();
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / 255.0;
  return img;
}

// Writes P6 for 3 channels and P5 for 1 channel, maxval 255.
inline void save_ppm(const ImageBuffer& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << (img.channels() == 3 ? "P6" : "P5") << '\n'
      << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> raw(img.data().size());
  auto src = img.data();
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(src[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

enum class ColorSpace { RGB, LAB, YCrCb, GRAY };

namespace detail {

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

}  // namespace detail

// Output ranges, all in [0,1]:
//   GRAY   0.299 R + 0.587 G + 0.114 B
//   LAB    L/100, 0.5 + a/255, 0.5 + b/255 (sRGB -> XYZ D65 -> CIELAB)
//   YCrCb  BT.601: Y, 0.5 + 0.713 (R - Y), 0.5 + 0.564 (B - Y)
inline ImageBuffer convert_colorspace(const ImageBuffer& img, ColorSpace target) {
  if (img.channels() == 1) {
    if (target != ColorSpace::GRAY)
      throw ShapeError("single-channel input can only be converted to GRAY");
    return img;
  }
  if (target == ColorSpace::RGB) return img;

  const int out_channels = target == ColorSpace::GRAY ? 1 : 3;
  ImageBuffer out(img.width(), img.height(), out_channels);
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    const double r = src[3 * p], g = src[3 * p + 1], b = src[3 * p + 2];
    switch (target) {
      case ColorSpace::GRAY:
        dst[p] = std::clamp(0.299 * r + 0.587 * g + 0.114 * b, 0.0, 1.0);
        break;
      case ColorSpace::YCrCb: {
        const double y = 0.299 * r + 0.587 * g + 0.114 * b;
        dst[3 * p] = std::clamp(y, 0.0, 1.0);
        dst[3 * p + 1] = std::clamp(0.5 + 0.713 * (r - y), 0.0, 1.0);
        dst[3 * p + 2] = std::clamp(0.5 + 0.564 * (b - y), 0.0, 1.0);
        break;
      }
      case ColorSpace::LAB: {
        const double rl = detail::srgb_to_linear(r);
        const double gl = detail::srgb_to_linear(g);
        const double bl = detail::srgb_to_linear(b);
        const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
        const double yy = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
        const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
        const double fx = detail::lab_f(x / 0.95047);
        const double fy = detail::lab_f(yy / 1.0);
        const double fz = detail::lab_f(z / 1.08883);
        const double L = 116.0 * fy - 16.0;
        const double A = 500.0 * (fx - fy);
        const double B = 200.0 * (fy - fz);
        dst[3 * p] = std::clamp(L / 100.0, 0.0, 1.0);
        dst[3 * p + 1] = std::clamp(0.5 + A / 255.0, 0.0, 1.0);
        dst[3 * p + 2] = std::clamp(0.5 + B / 255.0, 0.0, 1.0);
        break;
      }
      case ColorSpace::RGB:
        break;
    }
  }
  return out;
}

struct Kernel2D {
  int width = 1;
  int height = 1;
  std::vector<double> coeffs{1.0};  // row-major

  double at(int x, int y) const { return coeffs[static_cast<std::size_t>(y) * width + x]; }

  static Kernel2D box(int size) {
    Kernel2D k;
    k.width = k.height = size;
    k.coeffs.assign(static_cast<std::size_t>(size) * size, 1.0 / (size * size));
    return k;
  }
};

// Correlation with clamp-to-edge borders. Kernel is centred on the output pixel.
inline ImageBuffer filter2d(const ImageBuffer& img, const Kernel2D& kernel) {
  if (img.channels() != 1) throw ShapeError("filter2d expects a single-channel image");
  if (kernel.width % 2 == 0 || kernel.height % 2 == 0)
    throw ShapeError("filter2d kernel dimensions must be odd");
  if (kernel.coeffs.size() != static_cast<std::size_t>(kernel.width) * kernel.height)
    throw ShapeError("kernel coefficient count does not match its dimensions");
  const int rx = kernel.width / 2, ry = kernel.height / 2;
  ImageBuffer out(img.width(), img.height(), 1);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double acc = 0.0;
      for (int ky = 0; ky < kernel.height; ++ky)
        for (int kx = 0; kx < kernel.width; ++kx)
          acc += kernel.at(kx, ky) * img.clamped(x + kx - rx, y + ky - ry);
      out.at(x, y) = acc;
    }
  }
  return out;
}

// Row pass with `kx` then column pass with `ky`, both odd length, clamp-to-edge.
// Applied to every channel independently.
inline ImageBuffer convolve_separable(const ImageBuffer& img, std::span<const double> kx,
                                      std::span<const double> ky) {
  if (kx.size() % 2 == 0 || ky.size() % 2 == 0)
    throw ShapeError("separable kernel lengths must be odd");
  const int rx = static_cast<int>(kx.size() / 2), ry = static_cast<int>(ky.size() / 2);
  const int w = img.width(), h = img.height(), nc = img.channels();
  ImageBuffer tmp(w, h, nc), out(w, h, nc);
  for (int c = 0; c < nc; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < static_cast<int>(kx.size()); ++i)
          acc += kx[i] * img.clamped(x + i - rx, y, c);
        tmp.at(x, y, c) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < static_cast<int>(ky.size()); ++i)
          acc += ky[i] * tmp.clamped(x, y + i - ry, c);
        out.at(x, y, c) = acc;
      }
  }
  return out;
}

// Normalized 1-D Gaussian, radius ceil(4 sigma). sigma == 0 gives [1].
inline std::vector<double> gaussian_kernel1d(double sigma) {
  if (sigma < 0) throw DomainError("sigma must be >= 0");
  if (sigma == 0) return {1.0};
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Second derivative of the Gaussian, scaled by sigma^2 and forced to sum to
// zero so flat regions respond with exactly 0.
inline std::vector<double> gaussian_second_derivative1d(double sigma) {
  if (sigma <= 0) throw DomainError("sigma must be > 0");
  auto g = gaussian_kernel1d(sigma);
  const int radius = static_cast<int>(g.size() / 2);
  std::vector<double> d(g.size());
  double mean = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    d[i + radius] = g[i + radius] * (i * i - sigma * sigma) / (sigma * sigma);
    mean += d[i + radius];
  }
  mean /= static_cast<double>(d.size());
  for (double& v : d) v -= mean;
  return d;
}

inline ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  if (sigma == 0) return img;
  const auto k = gaussian_kernel1d(sigma);
  return convolve_separable(img, k, k);
}

// Laplacian of Gaussian as the sum of two separable passes (d2/dx2 + d2/dy2).
inline ImageBuffer laplacian_of_gaussian(const ImageBuffer& img, double sigma) {
  if (img.channels() != 1) throw ShapeError("LoG expects a single-channel image");
  const auto g = gaussian_kernel1d(sigma);
  const auto d2 = gaussian_second_derivative1d(sigma);
  ImageBuffer a = convolve_separable(img, d2, g);
  const ImageBuffer b = convolve_separable(img, g, d2);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
  return a;
}

}  // namespace actionrec
