#include "reshape/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "reshape/error.hpp"

namespace reshape {

namespace {

void validate(const Keypoints& kp) {
  for (const auto& p : kp.points) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
      throw GeometryError("keypoint coordinate is not finite");
  }
  const int n = static_cast<int>(kp.points.size());
  for (const auto& e : kp.edges) {
    if (e[0] < 0 || e[0] >= n || e[1] < 0 || e[1] >= n)
      throw GeometryError("edge index out of range");
  }
}

// Accumulates max(value, existing) over a window around the bump center.
// The window is anchored at floor(center) so the Gaussian argument depends
// only on the fractional part, which keeps integer translations bit-exact.
void splat_point(Tensor& map, int ch, double pr, double pc, double sigma, int H, int W) {
  if (sigma <= 0.0) {
    // Degenerate bump: a single impulse at the nearest pixel.
    int r = static_cast<int>(std::llround(pr));
    int c = static_cast<int>(std::llround(pc));
    if (r >= 0 && r < H && c >= 0 && c < W) map.at(ch, r, c) = 1.0f;
    return;
  }
  const int radius = static_cast<int>(std::ceil(4.0 * sigma)) + 1;
  const int br = static_cast<int>(std::floor(pr));
  const int bc = static_cast<int>(std::floor(pc));
  const double fr = pr - br;
  const double fc = pc - bc;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int dr = -radius; dr <= radius; ++dr) {
    const int r = br + dr;
    if (r < 0 || r >= H) continue;
    const double er = dr - fr;
    for (int dc = -radius; dc <= radius; ++dc) {
      const int c = bc + dc;
      if (c < 0 || c >= W) continue;
      const double ec = dc - fc;
      const float v = static_cast<float>(std::exp(-(er * er + ec * ec) * inv));
      float& px = map.at(ch, r, c);
      px = std::max(px, v);
    }
  }
}

void splat_edge(Tensor& map, int ch, std::array<double, 2> a, std::array<double, 2> b,
                double sigma, int H, int W) {
  const double se = std::max(sigma, 0.5);  // keep zero-blur edges visible
  const int radius = static_cast<int>(std::ceil(4.0 * se)) + 1;
  // Anchor all arithmetic at floor(a) so integer shifts stay bit-exact.
  const int br = static_cast<int>(std::floor(a[0]));
  const int bc = static_cast<int>(std::floor(a[1]));
  const double ar = a[0] - br, ac = a[1] - bc;
  const double vr = b[0] - a[0], vc = b[1] - a[1];
  const double len2 = vr * vr + vc * vc;
  const double inv = 1.0 / (2.0 * se * se);

  const int r0 = std::max(0, br + static_cast<int>(std::floor(std::min(0.0, vr))) - radius);
  const int r1 = std::min(H - 1, br + static_cast<int>(std::ceil(std::max(0.0, vr))) + radius);
  const int c0 = std::max(0, bc + static_cast<int>(std::floor(std::min(0.0, vc))) - radius);
  const int c1 = std::min(W - 1, bc + static_cast<int>(std::ceil(std::max(0.0, vc))) + radius);

  for (int r = r0; r <= r1; ++r) {
    const double pr = (r - br) - ar;
    for (int c = c0; c <= c1; ++c) {
      const double pc = (c - bc) - ac;
      double t = 0.0;
      if (len2 > 0.0) t = std::clamp((pr * vr + pc * vc) / len2, 0.0, 1.0);
      const double dr = pr - t * vr;
      const double dc = pc - t * vc;
      const float v = static_cast<float>(std::exp(-(dr * dr + dc * dc) * inv));
      float& px = map.at(ch, r, c);
      px = std::max(px, v);
    }
  }
}

}  // namespace

double default_blur_width(int height, int width) {
  return 1.5 * static_cast<double>(std::min(height, width)) / 64.0;
}

ShapeGuidance rasterize(const Keypoints& kp, int height, int width, double blur_width) {
  RasterizeOptions opts;
  opts.blur_width = blur_width;
  return rasterize(kp, height, width, opts);
}

ShapeGuidance rasterize(const Keypoints& kp, int height, int width,
                        const RasterizeOptions& opts) {
  if (height < 1 || width < 1) throw ShapeError("rasterize: image size must be positive");
  if (opts.blur_width < 0) throw GeometryError("rasterize: blur_width must be >= 0");
  validate(kp);

  const int n_points = static_cast<int>(kp.points.size());
  std::vector<std::vector<int>> groups = opts.groups;
  if (groups.empty()) {
    groups.emplace_back(n_points);
    for (int i = 0; i < n_points; ++i) groups[0][static_cast<size_t>(i)] = i;
  }
  std::vector<int> point_channel(static_cast<size_t>(n_points), -1);
  for (size_t g = 0; g < groups.size(); ++g) {
    for (int i : groups[g]) {
      if (i < 0 || i >= n_points) throw GeometryError("group index out of range");
      point_channel[static_cast<size_t>(i)] = static_cast<int>(g);
    }
  }

  ShapeGuidance out;
  out.keypoints = kp;
  out.map = Tensor({static_cast<int>(groups.size()), height, width});

  for (int i = 0; i < n_points; ++i) {
    const int ch = point_channel[static_cast<size_t>(i)];
    if (ch < 0) continue;  // point not in any group
    splat_point(out.map, ch, kp.points[static_cast<size_t>(i)][0],
                kp.points[static_cast<size_t>(i)][1], opts.blur_width, height, width);
  }
  for (const auto& e : kp.edges) {
    const int ca = point_channel[static_cast<size_t>(e[0])];
    const int cb = point_channel[static_cast<size_t>(e[1])];
    if (ca < 0 || ca != cb) continue;  // edges render only within a group
    splat_edge(out.map, ca, kp.points[static_cast<size_t>(e[0])],
               kp.points[static_cast<size_t>(e[1])], opts.blur_width, height, width);
  }
  for (int64_t i = 0; i < out.map.size(); ++i)
    out.map[i] = std::clamp(out.map[i], 0.0f, 1.0f);
  return out;
}

Tensor condition(const Tensor& image, const ShapeGuidance& guidance) {
  if (image.ndim() != 3) throw ShapeError("condition: image must be [C,H,W]");
  const Tensor& map = guidance.map;
  if (map.ndim() != 3) throw ShapeError("condition: guidance map must be [G,H,W]");
  if (image.dim(1) != map.dim(1) || image.dim(2) != map.dim(2))
    throw ShapeError("condition: spatial shapes differ, image " + image.shape_str() +
                     " vs map " + map.shape_str());
  const int C = image.dim(0), G = map.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor out({C + G, H, W});
  std::copy(image.data(), image.data() + image.size(), out.data());
  std::copy(map.data(), map.data() + map.size(), out.data() + image.size());
  return out;
}

Tensor condition_batch(const Tensor& images, const Tensor& maps) {
  if (images.ndim() != 4 || maps.ndim() != 4)
    throw ShapeError("condition_batch: expected [N,C,H,W] tensors");
  if (images.dim(0) != maps.dim(0) || images.dim(2) != maps.dim(2) ||
      images.dim(3) != maps.dim(3))
    throw ShapeError("condition_batch: shape mismatch " + images.shape_str() + " vs " +
                     maps.shape_str());
  const int N = images.dim(0), C = images.dim(1), G = maps.dim(1);
  const int H = images.dim(2), W = images.dim(3);
  Tensor out({N, C + G, H, W});
  const int64_t img_sz = static_cast<int64_t>(C) * H * W;
  const int64_t map_sz = static_cast<int64_t>(G) * H * W;
  for (int n = 0; n < N; ++n) {
    std::copy(images.data() + n * img_sz, images.data() + (n + 1) * img_sz,
              out.data() + n * (img_sz + map_sz));
    std::copy(maps.data() + n * map_sz, maps.data() + (n + 1) * map_sz,
              out.data() + n * (img_sz + map_sz) + img_sz);
  }
  return out;
}

Keypoints load_keypoints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open keypoint file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid keypoint JSON in " + path + ": " + e.what());
  }
  Keypoints kp;
  for (const auto& p : j.at("points"))
    kp.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  if (j.contains("edges"))
    for (const auto& e : j.at("edges"))
      kp.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
  validate(kp);
  return kp;
}

void save_keypoints(const std::string& path, const Keypoints& kp) {
  nlohmann::json j;
  j["points"] = nlohmann::json::array();
  for (const auto& p : kp.points) j["points"].push_back({p[0], p[1]});
  j["edges"] = nlohmann::json::array();
  for (const auto& e : kp.edges) j["edges"].push_back({e[0], e[1]});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write keypoint file: " + path);
  out << j.dump() << "\n";
}

}  // namespace reshape
