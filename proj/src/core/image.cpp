#include "core/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "core/errors.hpp"

namespace rada {

namespace {

std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool host_little_endian() {
  const std::uint16_t probe = 1;
  std::uint8_t first;
  std::memcpy(&first, &probe, 1);
  return first == 1;
}

void swap_f32(float* data, size_t count) {
  auto* bytes = reinterpret_cast<std::uint8_t*>(data);
  for (size_t i = 0; i < count; ++i) {
    std::swap(bytes[4 * i + 0], bytes[4 * i + 3]);
    std::swap(bytes[4 * i + 1], bytes[4 * i + 2]);
  }
}

// next whitespace-delimited token, skipping '#' comments to end of line
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

Image read_ppm(std::ifstream& in, const std::string& path) {
  const std::string magic = next_token(in);
  check_arg(magic == "P6", "ppm: unsupported magic in " + path);
  const std::string ws = next_token(in), hs = next_token(in),
                    ms = next_token(in);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ws);
    h = std::stoi(hs);
    maxval = std::stoi(ms);
  } catch (const std::exception&) {
    throw Error(ErrorCode::io, "ppm: malformed header in " + path);
  }
  if (w <= 0 || h <= 0 || maxval != 255)
    throw Error(ErrorCode::io, "ppm: unsupported header in " + path);
  std::vector<std::uint8_t> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw Error(ErrorCode::io, "ppm: truncated pixel data in " + path);
  Image img = Image::create(h, w);
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0;
  return img;
}

Image read_png_file(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error(ErrorCode::io, "png: cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::io, "png: reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorCode::io, "png: info allocation failed");
  }
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::io, "png: decode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != static_cast<size_t>(w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::io, "png: unexpected channel layout in " + path);
  }
  pixels.resize(static_cast<size_t>(h) * rowbytes);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img = Image::create(static_cast<int>(h), static_cast<int>(w));
  for (size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0;
  return img;
}

void check_image(const Image& img, const char* who) {
  check_arg(img.width > 0 && img.height > 0 &&
                img.data.size() ==
                    static_cast<size_t>(img.width) * img.height * 3,
            std::string(who) + ": malformed image buffer");
}

}  // namespace

Image Image::create(int height, int width, double fill) {
  check_arg(height > 0 && width > 0, "image: sides must be positive");
  Image img;
  img.height = height;
  img.width = width;
  img.data.assign(static_cast<size_t>(height) * width * 3, fill);
  return img;
}

double Image::sample(double u, double v, int c) const {
  const double x = std::clamp(u, 0.0, static_cast<double>(width - 1));
  const double y = std::clamp(v, 0.0, static_cast<double>(height - 1));
  const int x0 = std::min(static_cast<int>(std::floor(x)), width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), height - 1);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0, fy = y - y0;
  return at(y0, x0, c) * (1 - fx) * (1 - fy) + at(y0, x1, c) * fx * (1 - fy) +
         at(y1, x0, c) * (1 - fx) * fy + at(y1, x1, c) * fx * fy;
}

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "image: cannot open " + path);
  std::uint8_t sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  if (in.gcount() >= 8 && png_sig_cmp(sig, 0, 8) == 0) {
    in.close();
    return read_png_file(path);
  }
  if (in.gcount() >= 2 && sig[0] == 'P' && sig[1] == '6') {
    in.clear();
    in.seekg(0);
    return read_ppm(in, path);
  }
  throw Error(ErrorCode::io, "image: unrecognized format in " + path);
}

void write_png(const Image& img, const std::string& path) {
  check_image(img, "write_png");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::io, "png: cannot write " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::io, "png: writer allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::io, "png: info allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::io, "png: encode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) row[3 * x + c] = to_byte(img.at(y, x, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_ppm(const Image& img, const std::string& path) {
  check_image(img, "write_ppm");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "ppm: cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(img.data.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.data[i]);
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw Error(ErrorCode::io, "ppm: write failed for " + path);
}

FloatRaster read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "pfm: cannot open " + path);
  const std::string magic = next_token(in);
  if (magic == "PF")
    throw Error(ErrorCode::io, "pfm: color rasters unsupported in " + path);
  check_arg(magic == "Pf", "pfm: bad magic in " + path);
  int w = 0, h = 0;
  double scale = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    scale = std::stod(next_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorCode::io, "pfm: malformed header in " + path);
  }
  if (w <= 0 || h <= 0 || scale == 0)
    throw Error(ErrorCode::io, "pfm: unsupported header in " + path);
  FloatRaster raster;
  raster.width = w;
  raster.height = h;
  raster.data.resize(static_cast<size_t>(w) * h);
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {  // stored bottom-up
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * 4));
    if (static_cast<size_t>(in.gcount()) != row.size() * 4)
      throw Error(ErrorCode::io, "pfm: truncated data in " + path);
    if ((scale < 0) != host_little_endian()) swap_f32(row.data(), row.size());
    std::copy(row.begin(), row.end(),
              raster.data.begin() + static_cast<size_t>(y) * w);
  }
  return raster;
}

void write_pfm(const FloatRaster& raster, const std::string& path) {
  check_arg(raster.width > 0 && raster.height > 0 &&
                raster.data.size() ==
                    static_cast<size_t>(raster.width) * raster.height,
            "write_pfm: malformed raster");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "pfm: cannot write " + path);
  out << "Pf\n"
      << raster.width << " " << raster.height << "\n"
      << (host_little_endian() ? "-1.0" : "1.0") << "\n";
  for (int y = raster.height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(raster.data.data() +
                                            static_cast<size_t>(y) *
                                                raster.width),
              static_cast<std::streamsize>(raster.width) * 4);
  if (!out) throw Error(ErrorCode::io, "pfm: write failed for " + path);
}

ad::Var image_to_var(const Image& img) {
  check_image(img, "image_to_var");
  return ad::constant(ad::Shape{img.height, img.width, 3}, img.data);
}

Image var_to_image(const ad::Var& v) {
  check_arg(v && v->shape.ndim() == 3 && v->shape[2] == 3,
            "var_to_image: expected (H,W,3)");
  Image img = Image::create(v->shape[0], v->shape[1]);
  std::copy(v->v(), v->v() + v->numel(), img.data.begin());
  return img;
}

Image center_crop(const Image& img, int height, int width, CropOffset* offset) {
  check_image(img, "center_crop");
  check_arg(height > 0 && width > 0 && height <= img.height &&
                width <= img.width,
            "center_crop: crop exceeds image");
  const int ox = (img.width - width) / 2;
  const int oy = (img.height - height) / 2;
  if (offset) *offset = {ox, oy};
  Image out = Image::create(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y + oy, x + ox, c);
  return out;
}

Image pad_to_multiple(const Image& img, int multiple) {
  check_image(img, "pad_to_multiple");
  check_arg(multiple > 0, "pad_to_multiple: multiple must be positive");
  const int h = ((img.height + multiple - 1) / multiple) * multiple;
  const int w = ((img.width + multiple - 1) / multiple) * multiple;
  if (h == img.height && w == img.width) return img;
  Image out = Image::create(h, w, 0.0);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

void draw_dot(Image& img, double x, double y,
              const std::array<double, 3>& rgb) {
  const int cx = static_cast<int>(std::lround(x));
  const int cy = static_cast<int>(std::lround(y));
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int px = cx + dx, py = cy + dy;
      if (px < 0 || px >= img.width || py < 0 || py >= img.height) continue;
      for (int c = 0; c < 3; ++c) img.at(py, px, c) = rgb[c];
    }
}

void draw_line(Image& img, double x0, double y0, double x1, double y1,
               const std::array<double, 3>& rgb) {
  const double dx = x1 - x0, dy = y1 - y0;
  const int steps =
      std::max(1, static_cast<int>(std::ceil(std::max(std::abs(dx),
                                                      std::abs(dy)))));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int px = static_cast<int>(std::lround(x0 + t * dx));
    const int py = static_cast<int>(std::lround(y0 + t * dy));
    if (px < 0 || px >= img.width || py < 0 || py >= img.height) continue;
    for (int c = 0; c < 3; ++c) img.at(py, px, c) = rgb[c];
  }
}

Image render_matches(const Image& a, const Image& b,
                     const std::vector<MatchLine>& lines) {
  check_image(a, "render_matches");
  check_image(b, "render_matches");
  Image canvas =
      Image::create(std::max(a.height, b.height), a.width + b.width, 0.0);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < 3; ++c) canvas.at(y, x, c) = a.at(y, x, c);
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x)
      for (int c = 0; c < 3; ++c) canvas.at(y, x + a.width, c) = b.at(y, x, c);
  for (const MatchLine& m : lines) {
    const std::array<double, 3>& rgb =
        m.color == MatchLine::Color::correct
            ? kCorrectColor
            : (m.color == MatchLine::Color::incorrect ? kIncorrectColor
                                                      : kUnknownColor);
    const double xb = m.ub + a.width;
    draw_line(canvas, m.ua, m.va, xb, m.vb, rgb);
    draw_dot(canvas, m.ua, m.va, rgb);
    draw_dot(canvas, xb, m.vb, rgb);
  }
  return canvas;
}

}  // namespace rada
