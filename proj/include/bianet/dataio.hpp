#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "bianet/errors.hpp"
#include "bianet/pnm.hpp"
#include "bianet/rng.hpp"
#include "bianet/tensor.hpp"
#include "bianet/train.hpp"

namespace bianet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Manifest: UTF-8 CSV `name,rgb,depth,gt` with a header row. Relative paths
// resolve against the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestRow {
  std::string name;
  std::string rgb, depth, gt;
};

struct Manifest {
  fs::path base;
  std::vector<ManifestRow> rows;

  fs::path resolve(const std::string& p) const {
    fs::path q(p);
    return q.is_absolute() ? q : base / q;
  }
};

inline constexpr const char* kManifestHeader = "name,rgb,depth,gt";

inline Manifest read_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("manifest: cannot open " + path.string());
  Manifest m;
  m.base = path.parent_path();
  std::string line;
  if (!std::getline(f, line) || line != kManifestHeader) {
    throw IoError("manifest: missing header '" + std::string(kManifestHeader) +
                  "' in " + path.string());
  }
  std::vector<std::string> seen;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    ManifestRow row;
    std::string* fields[4] = {&row.name, &row.rgb, &row.depth, &row.gt};
    std::size_t start = 0;
    for (int i = 0; i < 4; ++i) {
      const std::size_t comma = line.find(',', start);
      if (i < 3 && comma == std::string::npos) {
        throw IoError("manifest: malformed row: " + line);
      }
      *fields[i] = line.substr(start, comma - start);
      start = comma + 1;
    }
    if (row.name.empty() || row.rgb.empty() || row.depth.empty() ||
        row.gt.empty()) {
      throw IoError("manifest: empty field in row: " + line);
    }
    if (std::find(seen.begin(), seen.end(), row.name) != seen.end()) {
      throw IoError("manifest: duplicate name " + row.name);
    }
    seen.push_back(row.name);
    m.rows.push_back(std::move(row));
  }
  return m;
}

inline void write_manifest(const fs::path& path,
                           const std::vector<ManifestRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("manifest: cannot write " + path.string());
  f << kManifestHeader << '\n';
  for (const auto& r : rows) {
    f << r.name << ',' << r.rgb << ',' << r.depth << ',' << r.gt << '\n';
  }
}

// ---------------------------------------------------------------------------
// Sample loading
// ---------------------------------------------------------------------------

struct Sample {
  std::string name;
  Tensor<float> rgb;    // [1,3,H,W] in [0,1]
  Tensor<float> depth;  // [1,3,H,W] in [0,1], single channel replicated
  Tensor<float> gt;     // [1,1,H,W] binary
  int original_h = 0, original_w = 0;
};

namespace detail {

inline Tensor<float> resize_map(const Tensor<float>& t, int h, int w) {
  NoGradGuard off;
  return upsample_bilinear(t, h, w);
}

inline Tensor<float> image_to_tensor(const PnmImage& img, int want_channels) {
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  std::vector<float> v(static_cast<std::size_t>(want_channels) * plane);
  const float scale = 1.0f / static_cast<float>(img.maxval);
  for (int c = 0; c < want_channels; ++c) {
    const int src_c = img.channels == 1 ? 0 : c;
    for (std::size_t i = 0; i < plane; ++i) {
      v[c * plane + i] =
          static_cast<float>(img.pixels[i * img.channels + src_c]) * scale;
    }
  }
  return Tensor<float>::from({1, want_channels, img.height, img.width},
                             std::move(v));
}

}  // namespace detail

// Loads one RGB-D-GT triplet at network resolution: values scaled to [0,1],
// depth min-max normalized per image and replicated to three channels, GT
// binarized at 0.5 before and after the resize.
inline Sample load_sample(const Manifest& m, const ManifestRow& row, int net_h,
                          int net_w) {
  Sample s;
  s.name = row.name;

  PnmImage rgb = read_pnm(m.resolve(row.rgb));
  if (rgb.channels != 3) throw IoError("sample: rgb must be 3-channel: " + row.rgb);
  PnmImage depth = read_pnm(m.resolve(row.depth));
  if (depth.channels != 1) {
    throw IoError("sample: depth must be single-channel: " + row.depth);
  }
  PnmImage gt = read_pnm(m.resolve(row.gt));
  if (gt.channels != 1) throw IoError("sample: gt must be single-channel: " + row.gt);
  s.original_h = gt.height;
  s.original_w = gt.width;

  s.rgb = detail::resize_map(detail::image_to_tensor(rgb, 3), net_h, net_w);

  Tensor<float> d = detail::image_to_tensor(depth, 1);
  float lo = d.values()[0], hi = d.values()[0];
  for (float v : d.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi > lo) {
    const float inv = 1.0f / (hi - lo);
    for (auto& v : d.values()) v = (v - lo) * inv;
  } else {
    for (auto& v : d.values()) v = 0.0f;
    std::cerr << "warning: constant depth map " << row.depth
              << " normalized to zeros\n";
  }
  d = detail::resize_map(d, net_h, net_w);
  s.depth = concat_channels<float>({d, d, d});

  Tensor<float> g = detail::image_to_tensor(gt, 1);
  for (auto& v : g.values()) v = v >= 0.5f ? 1.0f : 0.0f;
  g = detail::resize_map(g, net_h, net_w);
  for (auto& v : g.values()) v = v >= 0.5f ? 1.0f : 0.0f;
  s.gt = g;
  return s;
}

inline TrainSample<float> to_train_sample(const Sample& s) {
  return TrainSample<float>{s.rgb, s.depth, s.gt};
}

// Resizes a probability map back to the original extent and writes it as an
// 8-bit grayscale file (round-half-up quantization).
inline void save_saliency(const Tensor<float>& map, int out_h, int out_w,
                          const fs::path& path) {
  if (map.rank() != 4 || map.dim(0) != 1 || map.dim(1) != 1) {
    throw ConfigError("save_saliency: map must be [1,1,H,W]");
  }
  Tensor<float> sized = map;
  if (map.dim(2) != out_h || map.dim(3) != out_w) {
    sized = detail::resize_map(map, out_h, out_w);
  }
  PnmImage img = make_gray8(out_w, out_h);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const float v = std::min(std::max(sized.values()[i], 0.0f), 1.0f);
    img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * 255.0f));
  }
  write_pnm(path, img);
}

// ---------------------------------------------------------------------------
// Synthetic RGB-D dataset: soft-edged shapes over a textured background, with
// the foreground strictly closer (lower depth value) than the background.
// ---------------------------------------------------------------------------

namespace detail {

struct SoftShape {
  double cx, cy, rx, ry, rot;
  bool rectangle;

  double field(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double xr = dx * std::cos(rot) + dy * std::sin(rot);
    const double yr = -dx * std::sin(rot) + dy * std::cos(rot);
    double d;
    if (rectangle) {
      d = std::max(std::abs(xr) / rx, std::abs(yr) / ry);
    } else {
      d = std::sqrt((xr / rx) * (xr / rx) + (yr / ry) * (yr / ry));
    }
    const double edge = 0.18;  // soft rim width relative to the radius
    return std::clamp((1.0 + edge - d) / (2.0 * edge), 0.0, 1.0);
  }
};

}  // namespace detail

// Writes `n` samples and a manifest under out_dir; bit-identical files for a
// fixed seed. Returns the manifest.
inline Manifest synth_generate(std::uint64_t seed, int n, int size,
                               const fs::path& out_dir) {
  if (n < 1) throw ConfigError("synth: n must be >= 1");
  if (size < 8) throw ConfigError("synth: size must be >= 8");
  fs::create_directories(out_dir);
  Rng master(seed);
  std::vector<ManifestRow> rows;

  for (int idx = 0; idx < n; ++idx) {
    Rng rng = master.fork(idx + 1);
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    std::vector<double> field(plane);
    std::vector<int> owner(plane);
    double fg_fraction = 0.0;
    std::vector<detail::SoftShape> shapes;
    for (int attempt = 0; attempt < 32; ++attempt) {
      shapes.clear();
      const int count = rng.uniform_int(1, 3);
      for (int k = 0; k < count; ++k) {
        detail::SoftShape sh;
        sh.cx = rng.uniform(0.22, 0.78) * size;
        sh.cy = rng.uniform(0.22, 0.78) * size;
        sh.rx = rng.uniform(0.14, 0.30) * size;
        sh.ry = rng.uniform(0.14, 0.30) * size;
        sh.rot = rng.uniform(0.0, 3.14159265);
        sh.rectangle = rng.uniform() < 0.35;
        shapes.push_back(sh);
      }
      std::size_t fg = 0;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          double best = 0.0;
          int who = -1;
          for (std::size_t k = 0; k < shapes.size(); ++k) {
            const double v = shapes[k].field(x + 0.5, y + 0.5);
            if (v > best) {
              best = v;
              who = static_cast<int>(k);
            }
          }
          field[y * size + x] = best;
          owner[y * size + x] = who;
          if (best >= 0.5) ++fg;
        }
      }
      fg_fraction = static_cast<double>(fg) / plane;
      if (fg_fraction >= 0.05 && fg_fraction <= 0.55) break;
    }

    // colors and texture
    double bg_col[3], fg_col[3][3];
    for (double& c : bg_col) c = rng.uniform(0.15, 0.85);
    for (auto& shade : fg_col) {
      for (double& c : shade) c = rng.uniform(0.1, 0.9);
    }
    const double tex_fx = rng.uniform(1.0, 3.0), tex_fy = rng.uniform(1.0, 3.0);
    const double tex_phase = rng.uniform(0.0, 6.28);
    const double depth_fg = rng.uniform(0.10, 0.28);
    const double depth_bg = rng.uniform(0.62, 0.88);

    PnmImage rgb = make_rgb8(size, size);
    PnmImage gt = make_gray8(size, size);
    PnmImage depth = make_gray8(size, size);
    depth.maxval = 65535;

    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * size + x;
        const double a = field[i];
        const double tex =
            0.08 * std::sin(6.28318 * (tex_fx * x + tex_fy * y) / size + tex_phase);
        for (int c = 0; c < 3; ++c) {
          const double base = bg_col[c] + tex + rng.uniform(-0.03, 0.03);
          const double shade = owner[i] >= 0 ? fg_col[owner[i] % 3][c] : base;
          const double v = std::clamp(base * (1.0 - a) + shade * a, 0.0, 1.0);
          rgb.pixels[i * 3 + c] =
              static_cast<std::uint16_t>(std::lround(v * 255.0));
        }
        gt.pixels[i] = a >= 0.5 ? 255 : 0;
        const double dv = std::clamp(
            depth_bg + (depth_fg - depth_bg) * a + rng.uniform(-0.03, 0.03),
            0.0, 1.0);
        depth.pixels[i] = static_cast<std::uint16_t>(std::lround(dv * 65535.0));
      }
    }

    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", idx);
    ManifestRow row;
    row.name = name;
    row.rgb = std::string(name) + "_rgb.ppm";
    row.depth = std::string(name) + "_depth.pgm";
    row.gt = std::string(name) + "_gt.pgm";
    write_pnm(out_dir / row.rgb, rgb);
    write_pnm(out_dir / row.depth, depth);
    write_pnm(out_dir / row.gt, gt);
    rows.push_back(std::move(row));
  }

  write_manifest(out_dir / "manifest.csv", rows);
  Manifest m;
  m.base = out_dir;
  m.rows = std::move(rows);
  return m;
}

}  // namespace bianet
