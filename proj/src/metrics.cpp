#include "reshape/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "reshape/error.hpp"
#include "reshape/nets.hpp"
#include "reshape/rng.hpp"

namespace reshape {

// ---------------------------------------------------------------------------
// Pixel metrics
// ---------------------------------------------------------------------------

double mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double rmse(const Tensor& a, const Tensor& b) { return std::sqrt(mse(a, b)); }

double psnr(const Tensor& a, const Tensor& b, double max_value) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_value * max_value / m);
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimK1 = 0.01;
constexpr double kSsimK2 = 0.03;

const std::vector<double>& ssim_kernel() {
  static const std::vector<double> kernel = [] {
    std::vector<double> k(kSsimWindow * kSsimWindow);
    const int half = kSsimWindow / 2;
    double sum = 0.0;
    for (int r = 0; r < kSsimWindow; ++r)
      for (int c = 0; c < kSsimWindow; ++c) {
        const double dr = r - half, dc = c - half;
        k[static_cast<size_t>(r * kSsimWindow + c)] =
            std::exp(-(dr * dr + dc * dc) / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[static_cast<size_t>(r * kSsimWindow + c)];
      }
    for (double& v : k) v /= sum;
    return k;
  }();
  return kernel;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double dynamic_range) {
  check_same_shape(a, b, "ssim");
  if (a.ndim() != 3) throw ShapeError("ssim: expected [C,H,W] images");
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (H < kSsimWindow || W < kSsimWindow)
    throw ShapeError("ssim: image smaller than the 11x11 window");

  const double c1 = (kSsimK1 * dynamic_range) * (kSsimK1 * dynamic_range);
  const double c2 = (kSsimK2 * dynamic_range) * (kSsimK2 * dynamic_range);
  const auto& kernel = ssim_kernel();

  double total = 0.0;
  int64_t count = 0;
  for (int ch = 0; ch < C; ++ch) {
    for (int r = 0; r + kSsimWindow <= H; ++r) {
      for (int c = 0; c + kSsimWindow <= W; ++c) {
        double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
        for (int i = 0; i < kSsimWindow; ++i)
          for (int j = 0; j < kSsimWindow; ++j) {
            const double w = kernel[static_cast<size_t>(i * kSsimWindow + j)];
            const double va = a.at(ch, r + i, c + j);
            const double vb = b.at(ch, r + i, c + j);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        const double va = saa - ma * ma;
        const double vb = sbb - mb * mb;
        const double cov = sab - ma * mb;
        const double val = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                           ((ma * ma + mb * mb + c1) * (va + vb + c2));
        total += val;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

double fid(const GaussianStats& p, const GaussianStats& q) {
  if (p.mean.size() != q.mean.size()) throw ShapeError("fid: dimension mismatch");
  const auto d = p.mean.size();
  if (p.cov.rows() != d || q.cov.rows() != d) throw ShapeError("fid: covariance mismatch");
  // Identical summaries are at distance zero by definition; skip the
  // eigendecomposition and its rounding residue.
  if (p.mean == q.mean && p.cov == q.cov) return 0.0;

  auto clamp_eigs = [](Eigen::VectorXd v, const char* what) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (v[i] < -1e-8)
        throw NumericError(std::string("fid: ") + what + " has eigenvalue " +
                           std::to_string(v[i]));
      if (v[i] < 0.0) v[i] = 0.0;
    }
    return v;
  };

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_q(q.cov);
  Eigen::VectorXd eq = clamp_eigs(es_q.eigenvalues(), "covariance");
  Eigen::MatrixXd q_half =
      es_q.eigenvectors() * eq.cwiseSqrt().asDiagonal() * es_q.eigenvectors().transpose();

  Eigen::MatrixXd inner = q_half * p.cov * q_half;
  inner = 0.5 * (inner + inner.transpose());  // symmetrize numerical residue
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_i(inner);
  Eigen::VectorXd ei = clamp_eigs(es_i.eigenvalues(), "product");

  const double mean_term = (p.mean - q.mean).squaredNorm();
  const double trace_term = p.cov.trace() + q.cov.trace() - 2.0 * ei.cwiseSqrt().sum();
  return std::max(0.0, mean_term + trace_term);
}

// ---------------------------------------------------------------------------
// Embedders
// ---------------------------------------------------------------------------

Embedder make_flatten_embedder(int pool) {
  if (pool < 1) throw ConfigError("flatten embedder: pool must be >= 1");
  Embedder e;
  e.id = "flatten-p" + std::to_string(pool);
  e.embed = [pool](const Tensor& image) {
    if (image.ndim() != 3) throw ShapeError("flatten embedder: expected [C,H,W]");
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    const int Hp = H / pool, Wp = W / pool;
    if (Hp < 1 || Wp < 1) throw ShapeError("flatten embedder: pool larger than image");
    std::vector<double> out(static_cast<size_t>(C) * Hp * Wp, 0.0);
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < Hp * pool; ++r)
        for (int w = 0; w < Wp * pool; ++w)
          out[static_cast<size_t>((c * Hp + r / pool) * Wp + w / pool)] +=
              image.at(c, r, w) / static_cast<double>(pool * pool);
    return out;
  };
  return e;
}

Embedder make_randproj_embedder(int in_channels, uint64_t seed) {
  auto fx = std::make_shared<RandomProjectionExtractor>(in_channels, 4, seed);
  Embedder e;
  e.id = "randproj-embed-" + fx->id();
  e.embed = [fx](const Tensor& image) {
    Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
    std::copy(image.data(), image.data() + image.size(), batch.data());
    auto levels = fx->features(batch, nullptr);
    std::vector<double> out;
    for (const auto& f : levels) {
      const int C = f.dim(1);
      const int64_t hw = static_cast<int64_t>(f.dim(2)) * f.dim(3);
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        const float* p = f.data() + static_cast<int64_t>(c) * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
        out.push_back(s / static_cast<double>(hw));
      }
    }
    return out;
  };
  return e;
}

GaussianStats embed_stats(const std::vector<Tensor>& images, const Embedder& embedder) {
  if (images.empty()) throw ShapeError("embed_stats: no images");
  std::vector<std::vector<double>> rows;
  rows.reserve(images.size());
  for (const auto& img : images) rows.push_back(embedder.embed(img));
  const auto d = static_cast<Eigen::Index>(rows[0].size());

  GaussianStats stats;
  stats.n = static_cast<int64_t>(rows.size());
  stats.mean = Eigen::VectorXd::Zero(d);
  for (const auto& r : rows) {
    if (static_cast<Eigen::Index>(r.size()) != d)
      throw ShapeError("embed_stats: inconsistent embedding dimension");
    stats.mean += Eigen::Map<const Eigen::VectorXd>(r.data(), d);
  }
  stats.mean /= static_cast<double>(stats.n);

  stats.cov = Eigen::MatrixXd::Zero(d, d);
  if (stats.n > 1) {
    for (const auto& r : rows) {
      Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(r.data(), d) - stats.mean;
      stats.cov.noalias() += c * c.transpose();
    }
    stats.cov /= static_cast<double>(stats.n - 1);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// LPIPS
// ---------------------------------------------------------------------------

double lpips(const Tensor& a, const Tensor& b, const FeatureExtractor& extractor) {
  check_same_shape(a, b, "lpips");
  if (a.ndim() != 3) throw ShapeError("lpips: expected [C,H,W] images");
  Tensor ba({1, a.dim(0), a.dim(1), a.dim(2)});
  Tensor bb(ba.shape());
  std::copy(a.data(), a.data() + a.size(), ba.data());
  std::copy(b.data(), b.data() + b.size(), bb.data());

  auto fa = extractor.features(ba, nullptr);
  auto fb = extractor.features(bb, nullptr);

  double total = 0.0;
  for (size_t l = 0; l < fa.size(); ++l) {
    const int C = fa[l].dim(1), H = fa[l].dim(2), W = fa[l].dim(3);
    const int64_t hw = static_cast<int64_t>(H) * W;
    double level = 0.0;
    for (int64_t p = 0; p < hw; ++p) {
      double na = 0.0, nb = 0.0;
      for (int c = 0; c < C; ++c) {
        const double va = fa[l].data()[c * hw + p];
        const double vb = fb[l].data()[c * hw + p];
        na += va * va;
        nb += vb * vb;
      }
      na = std::sqrt(na) + 1e-10;
      nb = std::sqrt(nb) + 1e-10;
      for (int c = 0; c < C; ++c) {
        const double d = fa[l].data()[c * hw + p] / na - fb[l].data()[c * hw + p] / nb;
        level += d * d;
      }
    }
    total += level / static_cast<double>(hw);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Landmark consistency / identification
// ---------------------------------------------------------------------------

std::optional<std::pair<double, double>> landmark_consistency(
    const Tensor& generated, const Tensor& reference, const ExtractFn& extract,
    double blur_width, const FeatureExtractor& lpips_extractor) {
  Keypoints kg, kr;
  try {
    kg = extract(generated);
    kr = extract(reference);
  } catch (const GeometryError&) {
    return std::nullopt;
  }
  const int H = generated.dim(1), W = generated.dim(2);
  Tensor mg = rasterize(kg, H, W, blur_width).map;
  Tensor mr = rasterize(kr, H, W, blur_width).map;
  return std::make_pair(ssim(mg, mr, 1.0), lpips(mg, mr, lpips_extractor));
}

IdentResult identification_distance(const Tensor& a, const Tensor& b,
                                    const Embedder& embedder) {
  const std::vector<double> ea = embedder.embed(a);
  const std::vector<double> eb = embedder.embed(b);
  if (ea.size() != eb.size())
    throw ShapeError("identification_distance: embedding dimension mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < ea.size(); ++i) acc += (ea[i] - eb[i]) * (ea[i] - eb[i]);
  const double dist = std::sqrt(acc);
  return {dist, dist < 0.6};
}

double keypoint_error(const Keypoints& a, const Keypoints& b) {
  if (a.points.size() != b.points.size() || a.points.empty())
    throw GeometryError("keypoint_error: point counts differ");
  double acc = 0.0;
  for (size_t i = 0; i < a.points.size(); ++i) {
    const double dr = a.points[i][0] - b.points[i][0];
    const double dc = a.points[i][1] - b.points[i][1];
    acc += std::sqrt(dr * dr + dc * dc);
  }
  return acc / static_cast<double>(a.points.size());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["metrics"] = nlohmann::json::object();
  for (const auto& [name, value] : metrics) {
    if (std::isinf(value))
      j["metrics"][name] = "infinite";
    else if (std::isnan(value))
      j["metrics"][name] = "undefined";
    else
      j["metrics"][name] = value;
  }
  j["n"] = n;
  j["embedders"] = embedders;
  j["seed"] = seed;
  j["undefined_counts"] = undefined_counts;
  return j.dump(2);
}

void MetricReport::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << to_json() << "\n";
}

}  // namespace reshape
