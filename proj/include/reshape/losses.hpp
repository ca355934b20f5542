#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "reshape/guidance.hpp"
#include "reshape/tensor.hpp"

namespace reshape {

/// Composite-objective coefficients.
struct LossWeights {
  double gamma = 1.0;       // perturbed (gradient penalty) weight
  double delta = 10.0;      // pixel / cycle weight
  double sigma = 1.0;       // perceptual weight
  double lambda_cls = 1.0;  // domain classification weight
  std::vector<double> lambda_layers;  // per-level perceptual weights; empty -> all 1

  bool valid() const;
};

// ---------------------------------------------------------------------------
// Adversarial terms (logistic, numerically stable)
// ---------------------------------------------------------------------------

/// -[mean log sigmoid(real) + mean log(1 - sigmoid(fake))] over all patches.
double adv_loss_discriminator(const Tensor& real_logits, const Tensor& fake_logits);
void adv_loss_discriminator_grad(const Tensor& real_logits, const Tensor& fake_logits,
                                 Tensor& grad_real, Tensor& grad_fake);

/// Non-saturating by default: -mean log sigmoid(fake). The saturating flag
/// gives the literal min-max form mean log(1 - sigmoid(fake)).
double adv_loss_generator(const Tensor& fake_logits, bool saturating = false);
Tensor adv_loss_generator_grad(const Tensor& fake_logits, bool saturating = false);

// ---------------------------------------------------------------------------
// Reconstruction terms
// ---------------------------------------------------------------------------

/// Mean absolute difference over all elements.
double pixel_loss_paired(const Tensor& generated, const Tensor& target);
Tensor pixel_loss_paired_grad(const Tensor& generated, const Tensor& target);

/// Two rounds of reshaping: mean |gen(gen(x, s_y), s_x) - x|. Value-only
/// convenience; training composes the rounds itself to reuse traces.
using GenFn = std::function<Tensor(const Tensor& image, const Tensor& guidance_map)>;
double cycle_loss(const GenFn& gen, const Tensor& x, const Tensor& sx_map,
                  const Tensor& sy_map);

// ---------------------------------------------------------------------------
// Perceptual loss
// ---------------------------------------------------------------------------

struct ExtractorTrace {
  std::vector<Tensor> conv_in;
  std::vector<Tensor> preact;
};

/// Multi-level feature pyramid interface: an ordered list of deterministic
/// feature-map functions. Pretrained backbones plug in as subclasses.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int levels() const = 0;
  virtual std::vector<Tensor> features(const Tensor& x, ExtractorTrace* trace) const = 0;
  /// Backpropagates per-level output gradients to the input.
  virtual Tensor backward_input(const std::vector<Tensor>& grad_levels,
                                const ExtractorTrace& trace) const = 0;
  virtual std::string id() const = 0;
};

/// Bundled default: a fixed-seed random-projection conv stack with strides
/// {1,2,2,...}. Runs offline; real backbone weights can be loaded through the
/// checkpoint container to stand in for a pretrained network.
class RandomProjectionExtractor final : public FeatureExtractor {
 public:
  RandomProjectionExtractor(int in_channels, int levels, uint64_t seed);

  int levels() const override { return levels_; }
  std::vector<Tensor> features(const Tensor& x, ExtractorTrace* trace) const override;
  Tensor backward_input(const std::vector<Tensor>& grad_levels,
                        const ExtractorTrace& trace) const override;
  std::string id() const override;

  int in_channels() const { return in_channels_; }
  uint64_t seed() const { return seed_; }

  void save(const std::string& path) const;
  static RandomProjectionExtractor load(const std::string& path);

 private:
  int in_channels_;
  int levels_;
  uint64_t seed_;
  std::vector<Tensor> weights_;  // one conv kernel per level
  std::vector<int> strides_;
};

/// sum_n lambda_n * mean|phi_n(a) - phi_n(b)|, each level averaged over its
/// own element count. Empty lambda means all ones.
double perceptual_loss(const FeatureExtractor& extractor, const std::vector<double>& lambda,
                       const Tensor& a, const Tensor& b);

/// Gradient of perceptual_loss w.r.t. `a`.
Tensor perceptual_loss_grad(const FeatureExtractor& extractor,
                            const std::vector<double>& lambda, const Tensor& a,
                            const Tensor& b);

// ---------------------------------------------------------------------------
// Perturbed loss (DRAGAN-style gradient penalty)
// ---------------------------------------------------------------------------

struct PerturbConfig {
  double noise_scale = 0.5;  // stddev of the Gaussian noise z
};

/// Maps a perturbed image batch to the gradient of the per-sample mean score
/// w.r.t. that batch (same shape as the input).
using InputGradFn = std::function<Tensor(const Tensor& xhat)>;

/// E[(||grad_xhat D(xhat)||_2 - 1)^2] with xhat = (1-alpha) x + alpha z,
/// alpha ~ U[0,1] per sample, z ~ N(0, noise_scale^2) per element.
/// Optionally returns the perturbed batch and per-sample gradient norms so a
/// training step can reuse them.
double perturbed_loss(const InputGradFn& input_grad, const Tensor& x_images,
                      const PerturbConfig& cfg, uint64_t seed, Tensor* xhat_out = nullptr,
                      std::vector<double>* norms_out = nullptr);

// ---------------------------------------------------------------------------
// Domain classification
// ---------------------------------------------------------------------------

/// -log softmax(logits)[label], averaged over the batch. logits [N,D].
double domain_cls_loss(const Tensor& logits, const std::vector<int>& labels);
Tensor domain_cls_loss_grad(const Tensor& logits, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Composite objectives
// ---------------------------------------------------------------------------

struct LossComponents {
  double adv = 0.0;
  double perturb = 0.0;
  double pixel = 0.0;   // paired pixel or unpaired cycle term
  double percep = 0.0;
  double cls = 0.0;     // domain classification, cross-domain stage 1 only
};

double total_paired(const LossComponents& c, const LossWeights& w);
double total_unpaired(const LossComponents& c, const LossWeights& w);
double total_cross_stage1(const LossComponents& c, const LossWeights& w);
double total_cross_stage2(const LossComponents& c, const LossWeights& w);

}  // namespace reshape
