#pragma once

#include <array>
#include <string>
#include <vector>

#include "reshape/tensor.hpp"

namespace reshape {

/// Ordered landmark set in (row, col) pixel coordinates with optional
/// connectivity. Point k always denotes the same landmark role.
struct Keypoints {
  std::vector<std::array<double, 2>> points;  // (row, col), top-left pixel center origin
  std::vector<std::array<int, 2>> edges;      // index pairs into points
};

/// Keypoints plus their rasterized guidance map. The map has shape
/// [channels, H, W] with all values in [0,1]; one channel by default,
/// one per keypoint group when group rendering is configured.
struct ShapeGuidance {
  Keypoints keypoints;
  Tensor map;
};

struct RasterizeOptions {
  double blur_width = 1.5;                     // Gaussian sigma in pixels
  std::vector<std::vector<int>> groups;        // empty -> single channel
};

/// Renders keypoints into guidance channels: each point a Gaussian bump,
/// each edge an anti-aliased segment, per-pixel max over contributions.
ShapeGuidance rasterize(const Keypoints& kp, int height, int width, double blur_width);
ShapeGuidance rasterize(const Keypoints& kp, int height, int width,
                        const RasterizeOptions& opts);

/// Channel-wise concatenation of an image in [-1,1] and its guidance map.
Tensor condition(const Tensor& image, const ShapeGuidance& guidance);

/// Batched variant: image [N,C,H,W] + per-sample guidance maps [N,G,H,W].
Tensor condition_batch(const Tensor& images, const Tensor& maps);

/// Default blur width: 1.5 px at 64x64, scaling linearly with resolution.
double default_blur_width(int height, int width);

Keypoints load_keypoints(const std::string& path);
void save_keypoints(const std::string& path, const Keypoints& kp);

}  // namespace reshape
