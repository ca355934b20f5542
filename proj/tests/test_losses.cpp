#include <doctest.h>

#include <cmath>
#include <vector>

#include "reshape/losses.hpp"
#include "reshape/nets.hpp"
#include "reshape/rng.hpp"

using namespace reshape;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed, float scale = 1.0f) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = scale * static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// Pass-through extractor with a single level, for reduction checks.
class IdentityExtractor final : public FeatureExtractor {
 public:
  int levels() const override { return 1; }
  std::vector<Tensor> features(const Tensor& x, ExtractorTrace*) const override {
    return {x};
  }
  Tensor backward_input(const std::vector<Tensor>& grad_levels,
                        const ExtractorTrace&) const override {
    return grad_levels[0];
  }
  std::string id() const override { return "identity"; }
};

}  // namespace

TEST_CASE("adv_loss_discriminator: closed forms and patch oracle") {
  Tensor zeros({2, 1, 2, 2});
  CHECK(adv_loss_discriminator(zeros, zeros) ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));

  Tensor good = Tensor::full({1, 1, 2, 2}, 50.0f);
  Tensor bad = Tensor::full({1, 1, 2, 2}, -50.0f);
  CHECK(adv_loss_discriminator(good, bad) == doctest::Approx(0.0).epsilon(1e-9));

  // Scalar-by-scalar oracle on arbitrary patch maps.
  Tensor real = random_tensor({2, 1, 2, 2}, 1, 3.0f);
  Tensor fake = random_tensor({2, 1, 2, 2}, 2, 3.0f);
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double acc = 0.0;
  for (int64_t i = 0; i < real.size(); ++i) acc -= std::log(sigmoid(real[i])) / 8.0;
  for (int64_t i = 0; i < fake.size(); ++i) acc -= std::log(1.0 - sigmoid(fake[i])) / 8.0;
  CHECK(adv_loss_discriminator(real, fake) == doctest::Approx(acc).epsilon(1e-9));
}

TEST_CASE("adv_loss_discriminator: gradient matches the sigmoid identity") {
  Tensor real = random_tensor({1, 1, 2, 2}, 3, 2.0f);
  Tensor fake = random_tensor({1, 1, 2, 2}, 4, 2.0f);
  Tensor gr, gf;
  adv_loss_discriminator_grad(real, fake, gr, gf);
  const double eps = 1e-3;
  for (int64_t i = 0; i < real.size(); ++i) {
    Tensor rp = real, rm = real;
    rp[i] += static_cast<float>(eps);
    rm[i] -= static_cast<float>(eps);
    const double fd =
        (adv_loss_discriminator(rp, fake) - adv_loss_discriminator(rm, fake)) / (2 * eps);
    CHECK(gr[i] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("adv_loss_generator: closed forms, oracle, both formulations") {
  Tensor zero({1, 1, 1, 1});
  CHECK(adv_loss_generator(zero) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  Tensor fooled = Tensor::full({1, 1, 1, 1}, 50.0f);
  CHECK(adv_loss_generator(fooled) == doctest::Approx(0.0).epsilon(1e-9));

  Tensor fake = random_tensor({2, 1, 2, 2}, 5, 3.0f);
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double ns = 0.0, sat = 0.0;
  for (int64_t i = 0; i < fake.size(); ++i) {
    ns -= std::log(sigmoid(fake[i])) / 8.0;
    sat += std::log(1.0 - sigmoid(fake[i])) / 8.0;
  }
  CHECK(adv_loss_generator(fake, false) == doctest::Approx(ns).epsilon(1e-9));
  CHECK(adv_loss_generator(fake, true) == doctest::Approx(sat).epsilon(1e-9));
}

TEST_CASE("adversarial losses: numerically stable at extreme logits") {
  for (float v : {-1e6f, -1e3f, 0.0f, 1e3f, 1e6f}) {
    Tensor a = Tensor::full({1, 1, 1, 1}, v);
    Tensor b = Tensor::full({1, 1, 1, 1}, -v);
    const double l = adv_loss_discriminator(a, b) + adv_loss_generator(b);
    CHECK(std::isfinite(l));
    CHECK(l >= 0.0);
  }
}

TEST_CASE("pixel_loss_paired: closed forms and elementwise oracle") {
  Tensor a = random_tensor({3, 4, 4}, 6);
  CHECK(pixel_loss_paired(a, a) == doctest::Approx(0.0));

  Tensor b = a;
  for (int64_t i = 0; i < b.size(); ++i) b[i] += 0.5f;
  CHECK(pixel_loss_paired(a, b) == doctest::Approx(0.5).epsilon(1e-6));

  Tensor c = random_tensor({3, 4, 4}, 7);
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - c[i]);
  CHECK(pixel_loss_paired(a, c) == doctest::Approx(acc / a.size()).epsilon(1e-6));
  CHECK(pixel_loss_paired(a, c) == doctest::Approx(pixel_loss_paired(c, a)));
}

TEST_CASE("cycle_loss: identity generator and compose-and-compare oracle") {
  Tensor x = random_tensor({1, 3, 8, 8}, 8);
  Tensor sx = random_tensor({1, 1, 8, 8}, 9, 0.5f);
  Tensor sy = random_tensor({1, 1, 8, 8}, 10, 0.5f);

  GenFn identity = [](const Tensor& img, const Tensor&) { return img; };
  CHECK(cycle_loss(identity, x, sx, sy) == doctest::Approx(0.0));

  // Toy generator: shifts the image by the mean of the guidance map.
  GenFn toy = [](const Tensor& img, const Tensor& map) {
    double m = 0.0;
    for (int64_t i = 0; i < map.size(); ++i) m += map[i];
    m /= static_cast<double>(map.size());
    Tensor out = img;
    for (int64_t i = 0; i < out.size(); ++i) out[i] += static_cast<float>(m);
    return out;
  };
  Tensor manual = toy(toy(x, sy), sx);
  CHECK(cycle_loss(toy, x, sx, sy) ==
        doctest::Approx(pixel_loss_paired(manual, x)).epsilon(1e-7));
}

TEST_CASE("perceptual_loss: zero at equality, identity level reduces to pixel loss") {
  RandomProjectionExtractor fx(3, 5, 42);
  Tensor a = random_tensor({1, 3, 16, 16}, 11);
  CHECK(perceptual_loss(fx, {}, a, a) == doctest::Approx(0.0));

  IdentityExtractor idfx;
  Tensor b = random_tensor({1, 3, 16, 16}, 12);
  CHECK(perceptual_loss(idfx, {1.0}, a, b) ==
        doctest::Approx(pixel_loss_paired(a, b)).epsilon(1e-9));
  // Symmetry.
  CHECK(perceptual_loss(fx, {}, a, b) == doctest::Approx(perceptual_loss(fx, {}, b, a)));
}

TEST_CASE("perceptual_loss: matches a level-by-level oracle and its gradient checks out") {
  RandomProjectionExtractor fx(2, 2, 77);
  Tensor a = random_tensor({1, 2, 12, 12}, 13);
  Tensor b = random_tensor({1, 2, 12, 12}, 14);
  const std::vector<double> lam = {0.7, 1.3};

  auto fa = fx.features(a, nullptr);
  auto fb = fx.features(b, nullptr);
  double expect = 0.0;
  for (size_t l = 0; l < fa.size(); ++l) {
    double acc = 0.0;
    for (int64_t i = 0; i < fa[l].size(); ++i) acc += std::abs(fa[l][i] - fb[l][i]);
    expect += lam[l] * acc / static_cast<double>(fa[l].size());
  }
  CHECK(perceptual_loss(fx, lam, a, b) == doctest::Approx(expect).epsilon(1e-6));

  Tensor grad = perceptual_loss_grad(fx, lam, a, b);
  Rng rng(15);
  const float eps = 1e-2f;
  Tensor v(a.shape());
  for (int64_t i = 0; i < v.size(); ++i) v[i] = rng.uniform() < 0.5 ? -1.0f : 1.0f;
  Tensor ap = a, am = a;
  for (int64_t i = 0; i < a.size(); ++i) {
    ap[i] += eps * v[i];
    am[i] -= eps * v[i];
  }
  const double fd = (perceptual_loss(fx, lam, ap, b) - perceptual_loss(fx, lam, am, b)) /
                    (2.0 * eps);
  double ad = 0.0;
  for (int64_t i = 0; i < v.size(); ++i) ad += static_cast<double>(grad[i]) * v[i];
  CHECK(ad == doctest::Approx(fd).epsilon(5e-3));
}

TEST_CASE("perturbed_loss: linear discriminators hit the closed forms") {
  // D(v) = w . v with ||w|| = r has gradient w everywhere, so the penalty is
  // exactly (r-1)^2 regardless of the draw.
  const int C = 3, H = 4, W = 4;
  Tensor x = random_tensor({2, C, H, W}, 16);

  auto linear_grad = [&](double target_norm) {
    Tensor w = random_tensor({C, H, W}, 17);
    double nn = 0.0;
    for (int64_t i = 0; i < w.size(); ++i) nn += static_cast<double>(w[i]) * w[i];
    const double scale = target_norm / std::sqrt(nn);
    for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(w[i] * scale);
    return InputGradFn([w](const Tensor& xhat) {
      Tensor g(xhat.shape());
      const int64_t per = g.size() / g.dim(0);
      for (int n = 0; n < g.dim(0); ++n)
        for (int64_t i = 0; i < per; ++i) g[n * per + i] = w[i];
      return g;
    });
  };

  PerturbConfig cfg;
  CHECK(perturbed_loss(linear_grad(1.0), x, cfg, 5) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(perturbed_loss(linear_grad(2.0), x, cfg, 5) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("perturbed_loss: toy conv discriminator gradient matches finite differences") {
  DiscriminatorSpec spec;
  spec.in_channels = 1;
  spec.n_layers = 2;
  spec.base_width = 4;
  Discriminator d(spec, 19);

  Tensor x = random_tensor({1, 1, 8, 8}, 20, 0.5f);
  // Interior check: compare the closure's gradient against central finite
  // differences of the mean patch score.
  InputGradFn grad_fn = [&](const Tensor& xhat) {
    DiscTrace tr;
    d.forward(xhat, &tr);
    return d.input_gradient_patchmean(tr);
  };
  Tensor g = grad_fn(x);
  auto mean_score = [&](const Tensor& in) {
    auto out = d.forward(in, nullptr);
    double s = 0.0;
    for (int64_t i = 0; i < out.patch.size(); ++i) s += out.patch[i];
    return s / static_cast<double>(out.patch.size());
  };
  const float eps = 1e-2f;
  for (int64_t i = 0; i < x.size(); i += 7) {
    Tensor xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    const double fd = (mean_score(xp) - mean_score(xm)) / (2.0 * eps);
    CHECK(std::abs(g[i] - fd) < 1e-4);
  }

  // The loss itself is finite, non-negative, and deterministic in the seed.
  PerturbConfig cfg;
  const double l1 = perturbed_loss(grad_fn, x, cfg, 99);
  const double l2 = perturbed_loss(grad_fn, x, cfg, 99);
  CHECK(l1 == l2);
  CHECK(l1 >= 0.0);
}

TEST_CASE("domain_cls_loss: closed forms and softmax oracle") {
  Tensor uniform({1, 5});
  std::vector<int> label = {2};
  CHECK(domain_cls_loss(uniform, label) == doctest::Approx(std::log(5.0)).epsilon(1e-9));

  Tensor confident({1, 5});
  confident[3] = 50.0f;
  CHECK(domain_cls_loss(confident, {3}) == doctest::Approx(0.0).epsilon(1e-9));

  Tensor logits = random_tensor({3, 4}, 21, 2.0f);
  std::vector<int> labels = {1, 3, 0};
  double expect = 0.0;
  for (int n = 0; n < 3; ++n) {
    double denom = 0.0;
    for (int d = 0; d < 4; ++d) denom += std::exp(logits[n * 4 + d]);
    expect -= std::log(std::exp(logits[n * 4 + labels[static_cast<size_t>(n)]]) / denom);
  }
  CHECK(domain_cls_loss(logits, labels) == doctest::Approx(expect / 3.0).epsilon(1e-7));

  Tensor grad = domain_cls_loss_grad(logits, labels);
  const double eps = 1e-3;
  for (int64_t i = 0; i < logits.size(); ++i) {
    Tensor lp = logits, lm = logits;
    lp[i] += static_cast<float>(eps);
    lm[i] -= static_cast<float>(eps);
    const double fd = (domain_cls_loss(lp, labels) - domain_cls_loss(lm, labels)) / (2 * eps);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(2e-3));
  }
}

TEST_CASE("composite objectives") {
  LossWeights w;  // defaults gamma=1, delta=10, sigma=1, lambda_cls=1
  LossComponents zero;
  CHECK(total_paired(zero, w) == 0.0);
  CHECK(total_unpaired(zero, w) == 0.0);
  CHECK(total_cross_stage1(zero, w) == 0.0);

  LossComponents ones{1.0, 1.0, 1.0, 1.0, 0.0};
  CHECK(total_paired(ones, w) == doctest::Approx(13.0));

  LossComponents c{0.4, 0.2, 0.7, 0.3, 0.9};
  CHECK(total_cross_stage1(c, w) - w.lambda_cls * c.cls ==
        doctest::Approx(total_unpaired(c, w)));
  // Stage 2 is bit-identical to the unpaired composite.
  CHECK(total_cross_stage2(c, w) == total_unpaired(c, w));
}

TEST_CASE("losses are invariant to batch permutation") {
  Tensor a = random_tensor({2, 1, 2, 2}, 22, 2.0f);
  Tensor b = random_tensor({2, 1, 2, 2}, 23, 2.0f);
  // Swap the two samples in both tensors.
  auto swapped = [](const Tensor& t) {
    Tensor s(t.shape());
    const int64_t per = t.size() / 2;
    for (int64_t i = 0; i < per; ++i) {
      s[i] = t[per + i];
      s[per + i] = t[i];
    }
    return s;
  };
  CHECK(adv_loss_discriminator(a, b) ==
        doctest::Approx(adv_loss_discriminator(swapped(a), swapped(b))));
  CHECK(pixel_loss_paired(a, b) == doctest::Approx(pixel_loss_paired(swapped(a), swapped(b))));
}
