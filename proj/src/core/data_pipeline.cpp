#include "core/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "core/errors.hpp"
#include "core/rng.hpp"

namespace rada {

namespace {

namespace fs = std::filesystem;

std::string resolve(const std::string& base_dir, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(base_dir) / p).string();
}

Image crop_at(const Image& base, int ox, int oy, int side) {
  Image out = Image::create(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = base.at(y + oy, x + ox, c);
  return out;
}

Eigen::Matrix3d translation_matrix(double tx, double ty) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return m;
}

// crop-frame homography: recenter, scale+rotate, projective row, shift back
Eigen::Matrix3d sample_homography_matrix(Rng& rng,
                                         const SynthPairConfig& cfg) {
  const double c = (cfg.crop - 1) / 2.0;
  const double theta = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
  const double s = rng.uniform(1.0 - cfg.max_scale_jitter,
                               1.0 + cfg.max_scale_jitter);
  const double p0 = rng.uniform(-cfg.max_perspective, cfg.max_perspective);
  const double p1 = rng.uniform(-cfg.max_perspective, cfg.max_perspective);
  const double tx =
      rng.uniform(-cfg.max_translation, cfg.max_translation) * cfg.crop;
  const double ty =
      rng.uniform(-cfg.max_translation, cfg.max_translation) * cfg.crop;
  Eigen::Matrix3d core = Eigen::Matrix3d::Identity();
  core(0, 0) = s * std::cos(theta);
  core(0, 1) = -s * std::sin(theta);
  core(1, 0) = s * std::sin(theta);
  core(1, 1) = s * std::cos(theta);
  core(2, 0) = p0;
  core(2, 1) = p1;
  return translation_matrix(c + tx, c + ty) * core * translation_matrix(-c, -c);
}

Eigen::Matrix3d euler_rotation(double rx, double ry, double rz) {
  Eigen::Matrix3d mx, my, mz;
  mx = Eigen::AngleAxisd(rx, Eigen::Vector3d::UnitX());
  my = Eigen::AngleAxisd(ry, Eigen::Vector3d::UnitY());
  mz = Eigen::AngleAxisd(rz, Eigen::Vector3d::UnitZ());
  return mz * my * mx;
}

// scene = one tilted plane in front of camera A; depth maps are analytic and
// the induced pixel map (used for rendering) is the plane homography
struct PlaneWarp {
  WarpSpec spec{WarpSpec::homography(Eigen::Matrix3d::Identity(), 1, 1, 1, 1)};
  Eigen::Matrix3d pixel_map;  // A pixel -> B pixel
};

PlaneWarp sample_plane_warp(Rng& rng, const SynthPairConfig& cfg) {
  const int side = cfg.crop;
  const double f = 1.2 * side;
  const double cx = (side - 1) / 2.0, cy = (side - 1) / 2.0;
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = f;
  k(1, 1) = f;
  k(0, 2) = cx;
  k(1, 2) = cy;

  const double d0 = 4.0;
  const double pa = rng.uniform(-0.2, 0.2);
  const double pb = rng.uniform(-0.2, 0.2);

  const double rz = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
  const double tilt = 0.2 * cfg.max_rotation;
  const double rx = rng.uniform(-tilt, tilt);
  const double ry = rng.uniform(-tilt, tilt);
  const Eigen::Matrix3d r = euler_rotation(rx, ry, rz);

  Eigen::Vector3d t;
  t.x() = rng.uniform(-cfg.max_translation, cfg.max_translation) * side * d0 / f;
  t.y() = rng.uniform(-cfg.max_translation, cfg.max_translation) * side * d0 / f;
  t.z() = rng.uniform(-cfg.max_scale_jitter, cfg.max_scale_jitter) * d0;

  const Eigen::Vector3d normal(-pa, -pb, 1.0);  // plane: normal . X = d0

  Camera cam_a;
  cam_a.k = k;
  cam_a.width = side;
  cam_a.height = side;
  cam_a.depth.resize(static_cast<size_t>(side) * side);
  for (int v = 0; v < side; ++v)
    for (int u = 0; u < side; ++u) {
      const double rxn = (u - cx) / f, ryn = (v - cy) / f;
      const double denom = 1.0 - pa * rxn - pb * ryn;
      cam_a.depth[static_cast<size_t>(v) * side + u] =
          denom > 0.1 ? d0 / denom : 0.0;
    }

  Camera cam_b;
  cam_b.k = k;
  cam_b.r = r;
  cam_b.t = t;
  cam_b.width = side;
  cam_b.height = side;
  cam_b.depth.resize(static_cast<size_t>(side) * side);
  const Eigen::Vector3d normal_b = r * normal;
  const double rhs = d0 + normal_b.dot(t);
  for (int v = 0; v < side; ++v)
    for (int u = 0; u < side; ++u) {
      const double rxn = (u - cx) / f, ryn = (v - cy) / f;
      const double denom = normal_b.x() * rxn + normal_b.y() * ryn +
                           normal_b.z();
      const double d = denom > 0.1 ? rhs / denom : 0.0;
      cam_b.depth[static_cast<size_t>(v) * side + u] = d > 0.1 ? d : 0.0;
    }

  PlaneWarp out;
  out.spec = WarpSpec::pose_depth(cam_a, cam_b);
  out.pixel_map =
      k * (r + t * normal.transpose() / d0) * k.inverse();
  return out;
}

Image render_warped(const Image& base, int ox, int oy, int side,
                    const Eigen::Matrix3d& pixel_map_ab) {
  const Eigen::Matrix3d inv = pixel_map_ab.inverse();
  Image out = Image::create(side, side);
  for (int v = 0; v < side; ++v)
    for (int u = 0; u < side; ++u) {
      const Eigen::Vector3d q = inv * Eigen::Vector3d(u, v, 1.0);
      const double w = std::abs(q.z()) < 1e-12 ? 1e-12 : q.z();
      const double xs = q.x() / w + ox, ys = q.y() / w + oy;
      for (int c = 0; c < 3; ++c) out.at(v, u, c) = base.sample(xs, ys, c);
    }
  return out;
}

bool orthonormal(const Eigen::Matrix3d& r) {
  return (r * r.transpose() - Eigen::Matrix3d::Identity())
                 .cwiseAbs()
                 .maxCoeff() < 1e-6 &&
         r.determinant() > 0.5;
}

struct ManifestEntry {
  std::string image_path;
  Eigen::Matrix3d k, r;
  Eigen::Vector3d t;
  std::string depth_path;
  int line = 0;
};

void diag(std::ostream* log, const std::string& msg) {
  if (log) *log << msg << "\n";
}

// center-crop the camera's image and depth to side multiples of 32, shifting
// the principal point by the crop offset
bool crop_camera_to_multiple(Image& img, Camera& cam, std::ostream* log,
                             int line) {
  const int w32 = (img.width / 32) * 32, h32 = (img.height / 32) * 32;
  if (w32 <= 0 || h32 <= 0) {
    diag(log, "manifest line " + std::to_string(line) +
                  ": image smaller than 32x32, skipped");
    return false;
  }
  if (w32 == img.width && h32 == img.height) {
    cam.width = img.width;
    cam.height = img.height;
    return true;
  }
  CropOffset off;
  img = center_crop(img, h32, w32, &off);
  std::vector<double> depth(static_cast<size_t>(w32) * h32);
  for (int y = 0; y < h32; ++y)
    for (int x = 0; x < w32; ++x)
      depth[static_cast<size_t>(y) * w32 + x] =
          cam.depth[static_cast<size_t>(y + off.y) * cam.width + (x + off.x)];
  cam.depth = std::move(depth);
  cam.k(0, 2) -= off.x;
  cam.k(1, 2) -= off.y;
  cam.width = w32;
  cam.height = h32;
  return true;
}

void write_matrix(std::ostream& out, const char* tag,
                  const Eigen::Matrix3d& m) {
  out << tag;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out << " " << m(i, j);
  out << "\n";
}

}  // namespace

DomainShiftParams DomainShiftParams::night(std::uint64_t seed) {
  Rng rng(seed);
  DomainShiftParams p;
  p.brightness_scale = rng.uniform(0.3, 0.5);
  p.gamma = rng.uniform(1.1, 1.4);
  p.color_gains = {rng.uniform(0.7, 0.85), rng.uniform(0.8, 0.95),
                   rng.uniform(1.1, 1.3)};
  p.noise_sigma = rng.uniform(0.005, 0.015);
  p.noise_seed = seed ^ 0x517cc1b727220a95ULL;
  return p;
}

Image domain_shift(const Image& image, const DomainShiftParams& params) {
  check_arg(params.gamma > 0 && params.brightness_scale > 0 &&
                params.noise_sigma >= 0,
            "domain_shift: parameters out of range");
  for (double g : params.color_gains)
    check_arg(g > 0, "domain_shift: color gains must be positive");
  Image out = image;
  Rng noise(params.noise_seed);
  const bool add_noise = params.noise_sigma > 0;
  for (size_t i = 0; i < out.data.size(); ++i) {
    const double gain =
        params.brightness_scale * params.color_gains[i % 3];
    double v = std::pow(std::max(0.0, out.data[i] * gain), params.gamma);
    if (add_noise) v += noise.normal(0.0, params.noise_sigma);
    out.data[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

Image synth_base_image(int height, int width, std::uint64_t seed) {
  check_arg(height >= 8 && width >= 8, "synth_base_image: sides too small");
  Rng rng(seed);
  Image img = Image::create(height, width);

  double corner[4][3];
  for (auto& col : corner)
    for (double& ch : col) ch = rng.uniform(0.15, 0.85);
  for (int y = 0; y < height; ++y) {
    const double fy = height > 1 ? static_cast<double>(y) / (height - 1) : 0;
    for (int x = 0; x < width; ++x) {
      const double fx = width > 1 ? static_cast<double>(x) / (width - 1) : 0;
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = corner[0][c] * (1 - fx) * (1 - fy) +
                          corner[1][c] * fx * (1 - fy) +
                          corner[2][c] * (1 - fx) * fy + corner[3][c] * fx * fy;
    }
  }

  const double side = std::min(width, height);
  const int rects = rng.uniform_int(8, 14);
  for (int i = 0; i < rects; ++i) {
    const double cx = rng.uniform(0, width - 1), cy = rng.uniform(0, height - 1);
    const double a = rng.uniform(0.04, 0.22) * side;
    const double b = rng.uniform(0.04, 0.22) * side;
    const double ang = rng.uniform(0, 3.14159265358979);
    const double ca = std::cos(ang), sa = std::sin(ang);
    double col[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                     rng.uniform(0.05, 0.95)};
    const double alpha = rng.uniform(0.6, 1.0);
    const double reach = std::hypot(a, b);
    const int x0 = std::max(0, static_cast<int>(cx - reach));
    const int x1 = std::min(width - 1, static_cast<int>(cx + reach) + 1);
    const int y0 = std::max(0, static_cast<int>(cy - reach));
    const int y1 = std::min(height - 1, static_cast<int>(cy + reach) + 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
        if (std::abs(u) > a || std::abs(v) > b) continue;
        for (int c = 0; c < 3; ++c)
          img.at(y, x, c) = (1 - alpha) * img.at(y, x, c) + alpha * col[c];
      }
  }

  const int disks = rng.uniform_int(6, 12);
  for (int i = 0; i < disks; ++i) {
    const double cx = rng.uniform(0, width - 1), cy = rng.uniform(0, height - 1);
    const double r = rng.uniform(0.03, 0.14) * side;
    double col[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                     rng.uniform(0.05, 0.95)};
    const double alpha = rng.uniform(0.6, 1.0);
    const int x0 = std::max(0, static_cast<int>(cx - r));
    const int x1 = std::min(width - 1, static_cast<int>(cx + r) + 1);
    const int y0 = std::max(0, static_cast<int>(cy - r));
    const int y1 = std::min(height - 1, static_cast<int>(cy + r) + 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy > r * r) continue;
        for (int c = 0; c < 3; ++c)
          img.at(y, x, c) = (1 - alpha) * img.at(y, x, c) + alpha * col[c];
      }
  }

  const int waves = rng.uniform_int(2, 4);
  for (int i = 0; i < waves; ++i) {
    const double kx = rng.uniform(-0.5, 0.5), ky = rng.uniform(-0.5, 0.5);
    const double phase = rng.uniform(0, 6.28318530717959);
    const double amp = rng.uniform(0.04, 0.10);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double w = amp * std::sin(kx * x + ky * y + phase);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) += w;
      }
  }

  // two 3x3 box-blur passes soften aliasing on shape edges
  for (int pass = 0; pass < 2; ++pass) {
    Image src = img;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < 3; ++c) {
          double acc = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              acc += src.at(std::clamp(y + dy, 0, height - 1),
                            std::clamp(x + dx, 0, width - 1), c);
          img.at(y, x, c) = acc / 9.0;
        }
  }

  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

double overlap_fraction(const WarpSpec& spec, int stride) {
  check_arg(stride >= 1, "overlap_fraction: stride must be positive");
  const int w = spec.src_width(true), h = spec.src_height(true);
  std::int64_t total = 0, inside = 0;
  for (int v = 0; v < h; v += stride)
    for (int u = 0; u < w; u += stride) {
      ++total;
      if (warp_point(Eigen::Vector2d(u, v), spec)) ++inside;
    }
  return total ? static_cast<double>(inside) / static_cast<double>(total) : 0.0;
}

std::optional<TrainSample> synth_pair(const Image& base, std::uint64_t seed,
                                      const SynthPairConfig& config,
                                      std::ostream* log) {
  check_arg(config.crop > 0 && config.crop % 32 == 0,
            "synth_pair: crop must be a positive multiple of 32");
  check_arg(base.width >= config.crop && base.height >= config.crop,
            "synth_pair: base image smaller than the crop");
  check_arg(config.retry_budget >= 1, "synth_pair: retry budget must be >= 1");
  check_arg(config.min_overlap <= config.max_overlap,
            "synth_pair: empty overlap window");

  Rng rng(seed);
  double last_overlap = -1;
  for (int attempt = 0; attempt < config.retry_budget; ++attempt) {
    const int ox = rng.uniform_int(0, base.width - config.crop);
    const int oy = rng.uniform_int(0, base.height - config.crop);
    const bool use_pose = rng.uniform() < config.pose_depth_probability;

    WarpSpec spec = WarpSpec::homography(Eigen::Matrix3d::Identity(),
                                         config.crop, config.crop, config.crop,
                                         config.crop);
    Eigen::Matrix3d pixel_map;
    if (use_pose) {
      PlaneWarp plane = sample_plane_warp(rng, config);
      spec = plane.spec;
      pixel_map = plane.pixel_map;
    } else {
      pixel_map = sample_homography_matrix(rng, config);
      spec = WarpSpec::homography(pixel_map, config.crop, config.crop,
                                  config.crop, config.crop);
    }

    const int stride = std::max(1, config.crop / 64);
    last_overlap = overlap_fraction(spec, stride);
    if (last_overlap < config.min_overlap || last_overlap > config.max_overlap)
      continue;

    TrainSample sample;
    sample.spec = spec;
    sample.overlap = last_overlap;
    sample.image_a = crop_at(base, ox, oy, config.crop);
    sample.image_b = render_warped(base, ox, oy, config.crop, pixel_map);
    if (config.apply_domain_shift)
      sample.image_b = domain_shift(
          sample.image_b,
          DomainShiftParams::night(seed ^ 0x9e3779b97f4a7c15ULL));
    return sample;
  }
  if (log)
    *log << "synth_pair: retry budget exhausted (seed " << seed
         << ", last overlap " << last_overlap << ")\n";
  return std::nullopt;
}

std::vector<TrainSample> load_external_pairs(const std::string& manifest_path,
                                             std::ostream* log) {
  std::ifstream in(manifest_path);
  if (!in)
    throw Error(ErrorCode::io, "manifest: cannot open " + manifest_path);
  const std::string dir = fs::path(manifest_path).parent_path().string();

  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    e.line = line_no;
    double k[9], r[9], t[3];
    bool ok = static_cast<bool>(ls >> e.image_path);
    for (double& x : k) ok = ok && static_cast<bool>(ls >> x);
    for (double& x : r) ok = ok && static_cast<bool>(ls >> x);
    for (double& x : t) ok = ok && static_cast<bool>(ls >> x);
    ok = ok && static_cast<bool>(ls >> e.depth_path);
    if (!ok) {
      diag(log, "manifest line " + std::to_string(line_no) +
                    ": malformed record, skipped");
      continue;
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        e.k(i, j) = k[3 * i + j];
        e.r(i, j) = r[3 * i + j];
      }
    e.t = Eigen::Vector3d(t[0], t[1], t[2]);
    if (!orthonormal(e.r)) {
      diag(log, "manifest line " + std::to_string(line_no) +
                    ": rotation is not orthonormal, skipped");
      continue;
    }
    entries.push_back(std::move(e));
  }

  if (entries.size() % 2 != 0)
    diag(log, "manifest: trailing unpaired record at line " +
                  std::to_string(entries.back().line) + ", skipped");

  std::vector<TrainSample> samples;
  for (size_t i = 0; i + 1 < entries.size(); i += 2) {
    Image imgs[2];
    Camera cams[2];
    bool ok = true;
    for (int s = 0; s < 2 && ok; ++s) {
      const ManifestEntry& e = entries[i + s];
      try {
        imgs[s] = read_image(resolve(dir, e.image_path));
        const FloatRaster depth = read_pfm(resolve(dir, e.depth_path));
        if (depth.width != imgs[s].width || depth.height != imgs[s].height) {
          diag(log, "manifest line " + std::to_string(e.line) +
                        ": depth size differs from image, pair skipped");
          ok = false;
          break;
        }
        cams[s].k = e.k;
        cams[s].r = e.r;
        cams[s].t = e.t;
        cams[s].width = imgs[s].width;
        cams[s].height = imgs[s].height;
        cams[s].depth.assign(depth.data.begin(), depth.data.end());
        ok = crop_camera_to_multiple(imgs[s], cams[s], log, e.line);
      } catch (const Error& err) {
        diag(log, "manifest line " + std::to_string(e.line) + ": " +
                      err.what() + ", pair skipped");
        ok = false;
      }
    }
    if (!ok) continue;

    for (int dir_ab = 0; dir_ab < 2; ++dir_ab) {
      const int a = dir_ab == 0 ? 0 : 1, b = 1 - a;
      TrainSample sample;
      sample.spec = WarpSpec::pose_depth(cams[a], cams[b]);
      sample.image_a = imgs[a];
      sample.image_b = imgs[b];
      const int stride = std::max(1, cams[a].width / 64);
      sample.overlap = overlap_fraction(sample.spec, stride);
      if (sample.overlap < 0.3) {
        diag(log, "manifest lines " + std::to_string(entries[i].line) + "/" +
                      std::to_string(entries[i + 1].line) +
                      ": overlap below 0.3, direction skipped");
        continue;
      }
      samples.push_back(std::move(sample));
    }
  }
  return samples;
}

void write_warp_file(const WarpSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "warp file: cannot write " + path);
  out.precision(17);
  if (spec.kind() == WarpSpec::Kind::homography) {
    out << "warp homography\n";
    out << "size " << spec.src_width(true) << " " << spec.src_height(true)
        << " " << spec.dst_width(true) << " " << spec.dst_height(true) << "\n";
    write_matrix(out, "h", spec.h());
    return;
  }
  out << "warp pose_depth\n";
  const fs::path base(path);
  const char* names[2] = {"a", "b"};
  for (int s = 0; s < 2; ++s) {
    const Camera& cam = s == 0 ? spec.camera_a() : spec.camera_b();
    out << "camera_" << names[s] << " " << cam.width << " " << cam.height
        << "\n";
    write_matrix(out, ("k_" + std::string(names[s])).c_str(), cam.k);
    write_matrix(out, ("r_" + std::string(names[s])).c_str(), cam.r);
    out << "t_" << names[s] << " " << cam.t.x() << " " << cam.t.y() << " "
        << cam.t.z() << "\n";
    const std::string depth_name =
        base.filename().string() + ".depth_" + names[s] + ".pfm";
    FloatRaster raster;
    raster.width = cam.width;
    raster.height = cam.height;
    raster.data.assign(cam.depth.begin(), cam.depth.end());
    write_pfm(raster, (base.parent_path() / depth_name).string());
    out << "depth_" << names[s] << " " << depth_name << "\n";
  }
  if (!out) throw Error(ErrorCode::io, "warp file: write failed for " + path);
}

WarpSpec read_warp_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "warp file: cannot open " + path);
  const std::string dir = fs::path(path).parent_path().string();
  std::string tag, kind;
  if (!(in >> tag >> kind) || tag != "warp")
    throw Error(ErrorCode::io, "warp file: malformed header in " + path);

  auto need = [&](const std::string& expect) {
    std::string got;
    if (!(in >> got) || got != expect)
      throw Error(ErrorCode::io, "warp file: expected field '" + expect +
                                     "' in " + path);
  };
  auto read_mat = [&](const std::string& field) {
    need(field);
    Eigen::Matrix3d m;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (!(in >> m(i, j)))
          throw Error(ErrorCode::io, "warp file: truncated matrix in " + path);
    return m;
  };

  if (kind == "homography") {
    need("size");
    int wa, ha, wb, hb;
    if (!(in >> wa >> ha >> wb >> hb))
      throw Error(ErrorCode::io, "warp file: truncated size in " + path);
    const Eigen::Matrix3d h = read_mat("h");
    return WarpSpec::homography(h, wa, ha, wb, hb);
  }
  if (kind != "pose_depth")
    throw Error(ErrorCode::io, "warp file: unknown kind in " + path);

  Camera cams[2];
  const char* names[2] = {"a", "b"};
  for (int s = 0; s < 2; ++s) {
    need("camera_" + std::string(names[s]));
    if (!(in >> cams[s].width >> cams[s].height))
      throw Error(ErrorCode::io, "warp file: truncated camera in " + path);
    cams[s].k = read_mat("k_" + std::string(names[s]));
    cams[s].r = read_mat("r_" + std::string(names[s]));
    need("t_" + std::string(names[s]));
    if (!(in >> cams[s].t.x() >> cams[s].t.y() >> cams[s].t.z()))
      throw Error(ErrorCode::io, "warp file: truncated translation in " + path);
    need("depth_" + std::string(names[s]));
    std::string depth_path;
    if (!(in >> depth_path))
      throw Error(ErrorCode::io, "warp file: missing depth path in " + path);
    const FloatRaster raster = read_pfm(resolve(dir, depth_path));
    if (raster.width != cams[s].width || raster.height != cams[s].height)
      throw Error(ErrorCode::io, "warp file: depth size mismatch in " + path);
    cams[s].depth.assign(raster.data.begin(), raster.data.end());
  }
  return WarpSpec::pose_depth(cams[0], cams[1]);
}

}  // namespace rada
