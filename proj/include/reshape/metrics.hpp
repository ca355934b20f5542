#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "reshape/guidance.hpp"
#include "reshape/losses.hpp"
#include "reshape/tensor.hpp"

namespace reshape {

// ---------------------------------------------------------------------------
// Pixel metrics
// ---------------------------------------------------------------------------

double mse(const Tensor& a, const Tensor& b);
double rmse(const Tensor& a, const Tensor& b);

/// 10*log10(max_value^2 / mse); +infinity when mse == 0.
double psnr(const Tensor& a, const Tensor& b, double max_value);

/// Windowed SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// valid windows only, averaged over channels. Throws if the image is
/// smaller than the window.
double ssim(const Tensor& a, const Tensor& b, double dynamic_range);

// ---------------------------------------------------------------------------
// Distribution metrics
// ---------------------------------------------------------------------------

/// Mean/covariance summary of sample embeddings.
struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased (n-1) estimator
  int64_t n = 0;
};

/// Frechet distance between two Gaussian summaries; the matrix square root
/// uses a symmetric eigendecomposition and clamps eigenvalues in (-1e-8, 0)
/// to zero. More negative eigenvalues raise NumericError.
double fid(const GaussianStats& p, const GaussianStats& q);

/// Image -> fixed-dimension feature vector. Deterministic.
struct Embedder {
  std::string id;
  std::function<std::vector<double>(const Tensor& image)> embed;
};

/// Flattens the image, average-pooling by `pool` first to keep the embedding
/// dimension tractable (1 = raw pixels).
Embedder make_flatten_embedder(int pool);

/// Fixed-seed random-projection conv stack pooled into a feature vector.
Embedder make_randproj_embedder(int in_channels, uint64_t seed);

GaussianStats embed_stats(const std::vector<Tensor>& images, const Embedder& embedder);

// ---------------------------------------------------------------------------
// Perceptual metrics
// ---------------------------------------------------------------------------

/// Per level: unit-normalize features across channels, squared difference,
/// spatial mean; summed over levels.
double lpips(const Tensor& a, const Tensor& b, const FeatureExtractor& extractor);

using ExtractFn = std::function<Keypoints(const Tensor& image)>;

/// Extracts keypoints from both images, rasterizes them with the guidance
/// renderer and compares the renderings. Returns nullopt when extraction
/// fails on either image (the metric-undefined path).
std::optional<std::pair<double, double>> landmark_consistency(
    const Tensor& generated, const Tensor& reference, const ExtractFn& extract,
    double blur_width, const FeatureExtractor& lpips_extractor);

struct IdentResult {
  double distance;
  bool same_identity;  // distance < 0.6
};

IdentResult identification_distance(const Tensor& a, const Tensor& b,
                                    const Embedder& embedder);

/// Mean distance between matching keypoints, in pixels.
double keypoint_error(const Keypoints& a, const Keypoints& b);

// ---------------------------------------------------------------------------
// Reports and the evaluation driver
// ---------------------------------------------------------------------------

struct MetricReport {
  std::map<std::string, double> metrics;
  int n = 0;
  std::map<std::string, std::string> embedders;
  uint64_t seed = 0;
  std::map<std::string, int> undefined_counts;

  /// Non-finite values serialize as the "infinite"/"undefined" sentinels.
  std::string to_json() const;
  void save(const std::string& path) const;
};

struct EvalConfig {
  // Either a generated/reference directory pair ...
  std::string generated_dir;
  std::string reference_dir;
  // ... or a checkpoint plus dataset manifest.
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";

  std::vector<std::string> metric_names;  // empty list -> empty report
  uint64_t seed = 0;
  int flatten_pool = 8;
  double blur_width = -1.0;  // <0: default for the image size
  std::string out_path;      // optional JSON destination
};

MetricReport evaluate(const EvalConfig& cfg);

}  // namespace reshape
