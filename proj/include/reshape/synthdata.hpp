#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "reshape/guidance.hpp"
#include "reshape/metrics.hpp"
#include "reshape/tensor.hpp"

namespace reshape {

// Procedural blob dataset: identity (colors, texture) and shape (9 keypoints:
// 2 eyes, 1 mouth, 6 outline) are independent factors, so geometric and
// identity metrics have exact ground truth without external models.

struct IdentitySpec {
  std::array<double, 3> body_color;  // in [0.20, 0.65], luminance >= 0.40
  std::array<double, 3> eye_color;   // dark, in [0.02, 0.20]
  double tex_freq = 4.0;             // cycles across the image
  double tex_dir = 0.0;              // texture wave direction, radians
  double tex_phase = 0.0;
  int index = 0;
};

/// Resolution-independent shape parameters; keypoints materialize per (H,W).
struct ShapeSpec {
  std::array<double, 6> radius_scale{1, 1, 1, 1, 1, 1};  // outline r_k = R * scale_k
  double eye_row = -0.30;   // eye center row offset, units of R (negative = up)
  double eye_sep = 0.32;    // half separation between the eyes, units of R
  double mouth_row = 0.40;  // mouth row offset, units of R
  double mouth_col = 0.0;
  int index = 0;
};

struct DomainStyle {
  std::array<double, 3> bg_tint{0, 0, 0};  // additive on the background color
  double body_gamma = 1.0;                 // per-channel power on foreground colors
  double stroke = 0.0;                     // dark outline band strength, drawn inside
  int index = 0;
};

/// Deterministic identity set; all pairs differ in body color by at least
/// 0.15 in per-channel L-infinity distance.
std::vector<IdentitySpec> make_identities(uint64_t seed, int count);

ShapeSpec canonical_shape();
ShapeSpec make_shape(uint64_t seed, uint64_t index);
DomainStyle make_domain_style(uint64_t seed, int domain);

/// Keypoint order: [left eye, right eye, mouth, outline 0..5]; edges close
/// the outline loop.
Keypoints shape_keypoints(const ShapeSpec& shape, int height, int width);

/// Smooth blob render in [-1,1], fully deterministic. Throws GeometryError
/// if the keypoints leave the image margins.
Tensor render(const IdentitySpec& identity, const ShapeSpec& shape,
              const DomainStyle& style, int height, int width);

/// Recovers the 9 keypoints by silhouette ray casting (outline) and dark-blob
/// matched filtering (eyes, mouth). Throws GeometryError when detection
/// confidence is too low.
Keypoints analytic_extract(const Tensor& image);

/// Color descriptor of the detected body; calibrated so that same-identity
/// renders (any shape, same domain) sit below the 0.6 cutoff and different
/// identities above it.
std::vector<double> analytic_identity_embed(const Tensor& image);

/// analytic_identity_embed wrapped as a metrics::Embedder.
Embedder make_identity_embedder();

/// analytic_extract wrapped for the landmark-consistency metric.
ExtractFn make_analytic_extractor();

// ---------------------------------------------------------------------------
// Dataset builder
// ---------------------------------------------------------------------------

struct DatasetSizes {
  int n_identities = 24;
  int n_shapes = 8;       // training shapes per identity
  int n_test_shapes = 2;  // held-out shapes per identity
  int n_domains = 1;
  int image_size = 64;
};

struct DatasetRecord {
  std::string image_path;     // relative to the manifest directory
  std::string keypoint_path;
  int identity = 0;
  int domain = 0;
  int shape = 0;
  std::string split;  // "train" | "test"
  std::string role;   // "input" | "target" | "reference" | "both"
};

struct DatasetManifest {
  std::string regime;  // "paired" | "unpaired" | "multi_domain"
  DatasetSizes sizes;
  uint64_t seed = 0;
  std::vector<DatasetRecord> records;
  std::string root;  // directory holding the files; set on load/build
};

DatasetManifest build_dataset(const std::string& regime, const DatasetSizes& sizes,
                              uint64_t seed, const std::string& out_dir);
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

}  // namespace reshape
