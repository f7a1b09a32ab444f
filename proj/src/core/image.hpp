#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace rada {

// RGB raster held as doubles in [0,1], row-major H x W x 3. Decoders expand
// grayscale/palette/alpha inputs to plain RGB; encoders emit 8-bit RGB.
struct Image {
  int height = 0, width = 0;
  std::vector<double> data;  // height*width*3

  static Image create(int height, int width, double fill = 0.0);

  double& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  // clamped bilinear sample of channel c at (u,v), pixel centers at integers
  double sample(double u, double v, int c) const;
};

// Single-channel 32-bit float raster (depth maps).
struct FloatRaster {
  int height = 0, width = 0;
  std::vector<float> data;  // height*width
};

// Sniffs the container from the file content: PNG signature or PPM "P6".
Image read_image(const std::string& path);
void write_png(const Image& img, const std::string& path);
void write_ppm(const Image& img, const std::string& path);

// PFM, single channel ("Pf"): dimensions line, scale line whose sign gives
// the byte order, rows stored bottom-up.
FloatRaster read_pfm(const std::string& path);
void write_pfm(const FloatRaster& raster, const std::string& path);

// (H,W,3) value-only tensor in [0,1] <-> Image
ad::Var image_to_var(const Image& img);
Image var_to_image(const ad::Var& v);

struct CropOffset {
  int x = 0, y = 0;
};
Image center_crop(const Image& img, int height, int width,
                  CropOffset* offset = nullptr);
// zero-pads bottom/right so both sides are divisible by `multiple`
Image pad_to_multiple(const Image& img, int multiple);

void draw_dot(Image& img, double x, double y,
              const std::array<double, 3>& rgb);
void draw_line(Image& img, double x0, double y0, double x1, double y1,
               const std::array<double, 3>& rgb);

struct MatchLine {
  double ua = 0, va = 0;  // endpoint in the left image
  double ub = 0, vb = 0;  // endpoint in the right image's own frame
  enum class Color { correct, incorrect, unknown } color = Color::unknown;
};

inline constexpr std::array<double, 3> kCorrectColor{0.0, 0.9, 0.0};
inline constexpr std::array<double, 3> kIncorrectColor{0.9, 0.0, 0.0};
inline constexpr std::array<double, 3> kUnknownColor{0.1, 0.3, 0.95};

// Side-by-side canvas with one line and two endpoint dots per match; the
// right image sits at x offset = width of the left image.
Image render_matches(const Image& a, const Image& b,
                     const std::vector<MatchLine>& lines);

}  // namespace rada
