#include "reshape/losses.hpp"

#include <algorithm>
#include <cmath>

#include "reshape/checkpoint.hpp"
#include "reshape/error.hpp"
#include "reshape/nets.hpp"
#include "reshape/rng.hpp"

namespace reshape {

namespace {

// log(sigmoid(v)) = -softplus(-v), stable for any finite v.
inline double log_sigmoid(double v) {
  return v < 0.0 ? v - std::log1p(std::exp(v)) : -std::log1p(std::exp(-v));
}

inline double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

void check_finite_logits(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string(where) + ": non-finite logits");
}

}  // namespace

bool LossWeights::valid() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!(ok(gamma) && ok(delta) && ok(sigma) && ok(lambda_cls))) return false;
  for (double l : lambda_layers)
    if (!ok(l)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Adversarial terms
// ---------------------------------------------------------------------------

double adv_loss_discriminator(const Tensor& real_logits, const Tensor& fake_logits) {
  check_finite_logits(real_logits, "adv_loss_discriminator");
  check_finite_logits(fake_logits, "adv_loss_discriminator");
  double real = 0.0, fake = 0.0;
  for (int64_t i = 0; i < real_logits.size(); ++i) real += log_sigmoid(real_logits[i]);
  for (int64_t i = 0; i < fake_logits.size(); ++i) fake += log_sigmoid(-fake_logits[i]);
  return -(real / static_cast<double>(real_logits.size()) +
           fake / static_cast<double>(fake_logits.size()));
}

void adv_loss_discriminator_grad(const Tensor& real_logits, const Tensor& fake_logits,
                                 Tensor& grad_real, Tensor& grad_fake) {
  grad_real = Tensor(real_logits.shape());
  grad_fake = Tensor(fake_logits.shape());
  const double nr = static_cast<double>(real_logits.size());
  const double nf = static_cast<double>(fake_logits.size());
  for (int64_t i = 0; i < real_logits.size(); ++i)
    grad_real[i] = static_cast<float>(-(1.0 - sigmoid(real_logits[i])) / nr);
  for (int64_t i = 0; i < fake_logits.size(); ++i)
    grad_fake[i] = static_cast<float>(sigmoid(fake_logits[i]) / nf);
}

double adv_loss_generator(const Tensor& fake_logits, bool saturating) {
  check_finite_logits(fake_logits, "adv_loss_generator");
  double acc = 0.0;
  for (int64_t i = 0; i < fake_logits.size(); ++i)
    acc += saturating ? log_sigmoid(-fake_logits[i]) : log_sigmoid(fake_logits[i]);
  const double mean = acc / static_cast<double>(fake_logits.size());
  return saturating ? mean : -mean;
}

Tensor adv_loss_generator_grad(const Tensor& fake_logits, bool saturating) {
  Tensor g(fake_logits.shape());
  const double n = static_cast<double>(fake_logits.size());
  for (int64_t i = 0; i < fake_logits.size(); ++i) {
    const double s = sigmoid(fake_logits[i]);
    g[i] = static_cast<float>(saturating ? -s / n : -(1.0 - s) / n);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Reconstruction terms
// ---------------------------------------------------------------------------

double pixel_loss_paired(const Tensor& generated, const Tensor& target) {
  check_same_shape(generated, target, "pixel_loss_paired");
  double acc = 0.0;
  for (int64_t i = 0; i < generated.size(); ++i)
    acc += std::abs(static_cast<double>(generated[i]) - target[i]);
  return acc / static_cast<double>(generated.size());
}

Tensor pixel_loss_paired_grad(const Tensor& generated, const Tensor& target) {
  check_same_shape(generated, target, "pixel_loss_paired");
  Tensor g(generated.shape());
  const float inv = 1.0f / static_cast<float>(generated.size());
  for (int64_t i = 0; i < generated.size(); ++i) {
    const float d = generated[i] - target[i];
    g[i] = d > 0.0f ? inv : (d < 0.0f ? -inv : 0.0f);
  }
  return g;
}

double cycle_loss(const GenFn& gen, const Tensor& x, const Tensor& sx_map,
                  const Tensor& sy_map) {
  Tensor once = gen(x, sy_map);
  Tensor back = gen(once, sx_map);
  return pixel_loss_paired(back, x);
}

// ---------------------------------------------------------------------------
// Feature extractor / perceptual loss
// ---------------------------------------------------------------------------

namespace {
// Widths of the random-projection pyramid; repeats the last one if more
// levels are requested.
constexpr int kExtractorWidths[] = {12, 16, 20, 24, 24};
constexpr float kExtractorLeak = 0.2f;
}  // namespace

RandomProjectionExtractor::RandomProjectionExtractor(int in_channels, int levels, uint64_t seed)
    : in_channels_(in_channels), levels_(levels), seed_(seed) {
  if (levels < 1) throw ConfigError("feature extractor needs at least one level");
  Rng rng(derive_seed(seed, "feature-extractor"));
  int in = in_channels;
  for (int l = 0; l < levels; ++l) {
    const int out = kExtractorWidths[std::min<size_t>(static_cast<size_t>(l),
                                                      std::size(kExtractorWidths) - 1)];
    Tensor w({out, in, 3, 3});
    // Variance-preserving scale keeps deep responses in a usable range.
    rng.fill_normal(w, 0.0f, std::sqrt(2.0f / static_cast<float>(in * 9)));
    weights_.push_back(std::move(w));
    strides_.push_back(l == 0 ? 1 : 2);
    in = out;
  }
}

std::vector<Tensor> RandomProjectionExtractor::features(const Tensor& x, ExtractorTrace* trace) const {
  if (x.dim(1) != in_channels_)
    throw ShapeError("feature extractor expects " + std::to_string(in_channels_) +
                     " channels, got " + std::to_string(x.dim(1)));
  std::vector<Tensor> out;
  Tensor cur = x;
  for (int l = 0; l < levels_; ++l) {
    if (trace) trace->conv_in.push_back(cur);
    cur = conv2d_forward(cur, weights_[static_cast<size_t>(l)], nullptr, strides_[static_cast<size_t>(l)], 1);
    if (trace) trace->preact.push_back(cur);
    for (int64_t i = 0; i < cur.size(); ++i)
      if (cur[i] < 0.0f) cur[i] *= kExtractorLeak;
    out.push_back(cur);
  }
  return out;
}

Tensor RandomProjectionExtractor::backward_input(const std::vector<Tensor>& grad_levels,
                                        const ExtractorTrace& trace) const {
  Tensor g;  // gradient flowing down the stack
  for (int l = levels_ - 1; l >= 0; --l) {
    const size_t li = static_cast<size_t>(l);
    Tensor cur = grad_levels[li];
    if (g.size() > 0)
      for (int64_t i = 0; i < cur.size(); ++i) cur[i] += g[i];
    const Tensor& pre = trace.preact[li];
    for (int64_t i = 0; i < cur.size(); ++i)
      if (pre[i] < 0.0f) cur[i] *= kExtractorLeak;
    const Tensor& in = trace.conv_in[li];
    g = conv2d_backward_input(cur, weights_[li], in.dim(2), in.dim(3), strides_[li], 1);
  }
  return g;
}

std::string RandomProjectionExtractor::id() const {
  return "randproj-c" + std::to_string(in_channels_) + "-l" + std::to_string(levels_) +
         "-s" + std::to_string(seed_);
}

void RandomProjectionExtractor::save(const std::string& path) const {
  CheckpointHeader h;
  h.kind = "feature_extractor";
  h.spec_json = "{\"in_channels\":" + std::to_string(in_channels_) +
                ",\"levels\":" + std::to_string(levels_) + "}";
  h.seed = seed_;
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (size_t l = 0; l < weights_.size(); ++l)
    tensors.emplace_back("level" + std::to_string(l) + ".w", &weights_[l]);
  save_checkpoint(path, h, tensors);
}

RandomProjectionExtractor RandomProjectionExtractor::load(const std::string& path) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.header.kind != "feature_extractor")
    throw IoError("expected a feature_extractor checkpoint");
  const size_t c_pos = ckpt.header.spec_json.find("\"in_channels\":");
  const size_t l_pos = ckpt.header.spec_json.find("\"levels\":");
  if (c_pos == std::string::npos || l_pos == std::string::npos)
    throw IoError("feature_extractor checkpoint has a malformed spec");
  const int in_channels = std::stoi(ckpt.header.spec_json.substr(c_pos + 14));
  const int levels = std::stoi(ckpt.header.spec_json.substr(l_pos + 9));
  RandomProjectionExtractor fx(in_channels, levels, ckpt.header.seed);
  for (int l = 0; l < levels; ++l) {
    const Tensor* w = ckpt.find("level" + std::to_string(l) + ".w");
    if (!w) throw IoError("feature_extractor checkpoint is missing level " + std::to_string(l));
    if (!w->same_shape(fx.weights_[static_cast<size_t>(l)]))
      throw IoError("feature_extractor weight shape mismatch at level " + std::to_string(l));
    fx.weights_[static_cast<size_t>(l)] = *w;
  }
  return fx;
}

double perceptual_loss(const FeatureExtractor& extractor, const std::vector<double>& lambda,
                       const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "perceptual_loss");
  std::vector<Tensor> fa = extractor.features(a, nullptr);
  std::vector<Tensor> fb = extractor.features(b, nullptr);
  double total = 0.0;
  for (size_t l = 0; l < fa.size(); ++l) {
    const double w = l < lambda.size() ? lambda[l] : 1.0;
    double acc = 0.0;
    for (int64_t i = 0; i < fa[l].size(); ++i)
      acc += std::abs(static_cast<double>(fa[l][i]) - fb[l][i]);
    total += w * acc / static_cast<double>(fa[l].size());
  }
  return total;
}

Tensor perceptual_loss_grad(const FeatureExtractor& extractor,
                            const std::vector<double>& lambda, const Tensor& a,
                            const Tensor& b) {
  ExtractorTrace trace;
  std::vector<Tensor> fa = extractor.features(a, &trace);
  std::vector<Tensor> fb = extractor.features(b, nullptr);
  std::vector<Tensor> grads;
  for (size_t l = 0; l < fa.size(); ++l) {
    const double w = l < lambda.size() ? lambda[l] : 1.0;
    Tensor g(fa[l].shape());
    const float scale = static_cast<float>(w / static_cast<double>(fa[l].size()));
    for (int64_t i = 0; i < fa[l].size(); ++i) {
      const float d = fa[l][i] - fb[l][i];
      g[i] = d > 0.0f ? scale : (d < 0.0f ? -scale : 0.0f);
    }
    grads.push_back(std::move(g));
  }
  return extractor.backward_input(grads, trace);
}

// ---------------------------------------------------------------------------
// Perturbed loss
// ---------------------------------------------------------------------------

double perturbed_loss(const InputGradFn& input_grad, const Tensor& x_images,
                      const PerturbConfig& cfg, uint64_t seed, Tensor* xhat_out,
                      std::vector<double>* norms_out) {
  if (cfg.noise_scale <= 0.0) throw ConfigError("perturbed_loss: noise_scale must be > 0");
  if (x_images.ndim() != 4) throw ShapeError("perturbed_loss: expected [N,C,H,W]");
  const int N = x_images.dim(0);
  const int64_t per = x_images.size() / N;

  Rng rng(derive_seed(seed, "perturb"));
  Tensor xhat(x_images.shape());
  for (int n = 0; n < N; ++n) {
    const double alpha = rng.uniform();
    const float a = static_cast<float>(alpha);
    float* dst = xhat.data() + n * per;
    const float* src = x_images.data() + n * per;
    for (int64_t i = 0; i < per; ++i) {
      const float z = static_cast<float>(rng.normal() * cfg.noise_scale);
      dst[i] = (1.0f - a) * src[i] + a * z;
    }
  }

  Tensor grad = input_grad(xhat);
  if (!grad.same_shape(xhat)) throw ShapeError("perturbed_loss: gradient shape mismatch");
  if (!grad.all_finite()) throw NumericError("perturbed_loss: non-finite gradient");

  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    double sq = 0.0;
    const float* g = grad.data() + n * per;
    for (int64_t i = 0; i < per; ++i) sq += static_cast<double>(g[i]) * g[i];
    const double norm = std::sqrt(sq);
    loss += (norm - 1.0) * (norm - 1.0);
    if (norms_out) norms_out->push_back(norm);
  }
  if (xhat_out) *xhat_out = std::move(xhat);
  return loss / static_cast<double>(N);
}

// ---------------------------------------------------------------------------
// Domain classification
// ---------------------------------------------------------------------------

double domain_cls_loss(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("domain_cls_loss: expected [N,D] logits");
  const int N = logits.dim(0), D = logits.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw ShapeError("domain_cls_loss: label count mismatch");
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const float* row = logits.data() + static_cast<int64_t>(n) * D;
    const int label = labels[static_cast<size_t>(n)];
    if (label < 0 || label >= D) throw ShapeError("domain_cls_loss: label out of range");
    double mx = row[0];
    for (int d = 1; d < D; ++d) mx = std::max(mx, static_cast<double>(row[d]));
    double lse = 0.0;
    for (int d = 0; d < D; ++d) lse += std::exp(row[d] - mx);
    total += -(row[label] - mx - std::log(lse));
  }
  return total / static_cast<double>(N);
}

Tensor domain_cls_loss_grad(const Tensor& logits, const std::vector<int>& labels) {
  const int N = logits.dim(0), D = logits.dim(1);
  Tensor g(logits.shape());
  for (int n = 0; n < N; ++n) {
    const float* row = logits.data() + static_cast<int64_t>(n) * D;
    float* grow = g.data() + static_cast<int64_t>(n) * D;
    double mx = row[0];
    for (int d = 1; d < D; ++d) mx = std::max(mx, static_cast<double>(row[d]));
    double lse = 0.0;
    for (int d = 0; d < D; ++d) lse += std::exp(row[d] - mx);
    for (int d = 0; d < D; ++d) {
      const double p = std::exp(row[d] - mx) / lse;
      grow[d] = static_cast<float>((p - (d == labels[static_cast<size_t>(n)] ? 1.0 : 0.0)) /
                                   static_cast<double>(N));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

namespace {
void check_components(const LossComponents& c) {
  if (!std::isfinite(c.adv) || !std::isfinite(c.perturb) || !std::isfinite(c.pixel) ||
      !std::isfinite(c.percep) || !std::isfinite(c.cls))
    throw NumericError("total loss: non-finite component");
}
}  // namespace

double total_paired(const LossComponents& c, const LossWeights& w) {
  check_components(c);
  return c.adv + w.gamma * c.perturb + w.delta * c.pixel + w.sigma * c.percep;
}

double total_unpaired(const LossComponents& c, const LossWeights& w) {
  check_components(c);
  return c.adv + w.gamma * c.perturb + w.delta * c.pixel + w.sigma * c.percep;
}

double total_cross_stage1(const LossComponents& c, const LossWeights& w) {
  return total_unpaired(c, w) + w.lambda_cls * c.cls;
}

double total_cross_stage2(const LossComponents& c, const LossWeights& w) {
  return total_unpaired(c, w);
}

}  // namespace reshape
