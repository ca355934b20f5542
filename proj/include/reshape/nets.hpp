#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "reshape/rng.hpp"
#include "reshape/tensor.hpp"

namespace reshape {

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

struct GeneratorSpec {
  int in_channels = 4;   // image channels + guidance channels
  int out_channels = 3;
  int base_width = 32;
  int n_downsample = 2;
  int n_residual = 6;
  bool instance_norm = true;

  uint64_t hash() const;
  std::string to_json() const;
  static GeneratorSpec from_json(const std::string& j);
};

struct DiscriminatorSpec {
  int in_channels = 4;   // image channels + guidance channels
  int n_layers = 6;      // stride-2 conv layers
  int base_width = 64;
  bool patch_output = true;  // false collapses the score map to 1x1 by averaging
  int n_domains = 0;         // 0 disables the domain head
  double leak = 0.01;

  uint64_t hash() const;
  std::string to_json() const;
  static DiscriminatorSpec from_json(const std::string& j);
};

// ---------------------------------------------------------------------------
// Parameter store: named tensors with paired gradient buffers
// ---------------------------------------------------------------------------

class ParamStore {
 public:
  int add(const std::string& name, Tensor init);
  int find(const std::string& name) const;  // -1 when absent

  int count() const { return static_cast<int>(entries_.size()); }
  int64_t scalar_count() const;

  const std::string& name(int i) const { return entries_[static_cast<size_t>(i)].name; }
  Tensor& value(int i) { return entries_[static_cast<size_t>(i)].value; }
  const Tensor& value(int i) const { return entries_[static_cast<size_t>(i)].value; }
  Tensor& grad(int i) { return entries_[static_cast<size_t>(i)].grad; }
  const Tensor& grad(int i) const { return entries_[static_cast<size_t>(i)].grad; }

  void zero_grads();
  bool values_finite() const;

  uint64_t spec_hash = 0;
  int64_t step = 0;
  uint64_t seed = 0;

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Convolution kernels (shared by the networks and the feature extractors)
// ---------------------------------------------------------------------------

// x [N,I,H,W], w [O,I,k,k] -> y [N,O,Ho,Wo]
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad);
Tensor conv2d_backward_input(const Tensor& gy, const Tensor& w, int in_h, int in_w,
                             int stride, int pad);
void conv2d_backward_params(const Tensor& x, const Tensor& gy, int stride, int pad,
                            Tensor& gw, Tensor* gb);

// Transposed convolution; weight layout [I,O,k,k], output (H-1)*s - 2p + k.
Tensor convt2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad);
Tensor convt2d_backward_input(const Tensor& gy, const Tensor& w, int stride, int pad);
void convt2d_backward_params(const Tensor& x, const Tensor& gy, int stride, int pad,
                             Tensor& gw, Tensor* gb);

Tensor slice_channels(const Tensor& x, int c0, int c1);  // [N,C,H,W] -> [N,c1-c0,H,W]

namespace detail {
// Instance normalization over spatial dims per (sample, channel), affine.
Tensor instnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        Tensor* xhat_out, Tensor* invstd_out);
Tensor instnorm_backward(const Tensor& gy, const Tensor& xhat, const Tensor& invstd,
                         const Tensor& gamma, Tensor& ggamma, Tensor& gbeta);
}  // namespace detail

// ---------------------------------------------------------------------------
// Generator: 7x7 head, strided downsampling, residual trunk, mirrored
// transposed-conv upsampling, 7x7 tail, tanh output in [-1,1].
// ---------------------------------------------------------------------------

struct GenTrace {
  std::vector<std::vector<Tensor>> per_op;
};

class Generator {
 public:
  Generator(GeneratorSpec spec, uint64_t seed);

  /// input [N,in_channels,H,W] -> [N,out_channels,H,W]; pass a trace to
  /// enable backward. Deterministic in (params, input).
  Tensor forward(const Tensor& input, GenTrace* trace) const;

  /// Accumulates parameter gradients and returns the gradient w.r.t. input.
  Tensor backward(const GenTrace& trace, const Tensor& grad_out);

  const GeneratorSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  enum class OpKind { Conv, ConvT, Norm, Relu, Tanh, ResBegin, ResEnd };
  struct Op {
    OpKind kind;
    int w = -1, b = -1, gamma = -1, beta = -1;
    int stride = 1, pad = 0, k = 0;
  };

  GeneratorSpec spec_;
  ParamStore params_;
  std::vector<Op> ops_;
};

// ---------------------------------------------------------------------------
// Discriminator: stride-2 leaky-ReLU conv stack (no normalization), 1-channel
// patch head; optional domain head (global average pool + linear).
// ---------------------------------------------------------------------------

struct DiscTrace {
  std::vector<Tensor> conv_in;  // input to each strided conv
  std::vector<Tensor> preact;   // pre-activation of each strided conv
  Tensor feat;                  // final features (input to the heads)
  Tensor pooled;                // [N,Cf] global average pool (domain head)
};

class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, uint64_t seed);

  struct Output {
    Tensor patch;   // [N,1,h,w] raw logits
    Tensor domain;  // [N,n_domains] logits; empty when n_domains == 0
  };

  Output forward(const Tensor& input, DiscTrace* trace) const;

  /// Accumulates parameter gradients and returns the gradient w.r.t. input.
  /// Either gradient may be null/empty to skip that head.
  Tensor backward(const DiscTrace& trace, const Tensor* grad_patch,
                  const Tensor* grad_domain);

  /// Gradient of the per-sample mean patch score w.r.t. the input, with no
  /// parameter gradient accumulation. Samples are independent, so the result
  /// holds each sample's own gradient.
  Tensor input_gradient_patchmean(const DiscTrace& trace) const;

  /// Directional-derivative machinery for the gradient penalty: propagates an
  /// input tangent through the frozen activation masks of a primal trace.
  /// h[i] is the tangent of sample i's mean patch score.
  struct Tangent {
    DiscTrace trace;
    std::vector<double> h;
  };
  Tangent tangent_forward(const Tensor& tangent_in, const DiscTrace& primal) const;

  /// Accumulates d(sum_i coeff[i] * h[i])/d(params). Activations are read from
  /// the tangent trace, masks from the primal trace; bias gradients vanish.
  void tangent_backward(const std::vector<double>& coeff, const Tangent& tangent,
                        const DiscTrace& primal);

  const DiscriminatorSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  Tensor backward_core(const DiscTrace& acts, const DiscTrace& masks,
                       const Tensor* grad_patch, const Tensor* grad_domain,
                       bool param_grads, bool bias_grads);

  DiscriminatorSpec spec_;
  ParamStore params_;
  std::vector<int> conv_w_, conv_b_;  // per strided layer
  int patch_w_ = -1, patch_b_ = -1;
  int dom_w_ = -1, dom_b_ = -1;
};

}  // namespace reshape
