#include "reshape/nets.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "reshape/error.hpp"

namespace reshape {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatF>;
using CMapMat = Eigen::Map<const MatF>;

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string GeneratorSpec::to_json() const {
  nlohmann::json j;
  j["in_channels"] = in_channels;
  j["out_channels"] = out_channels;
  j["base_width"] = base_width;
  j["n_downsample"] = n_downsample;
  j["n_residual"] = n_residual;
  j["instance_norm"] = instance_norm;
  return j.dump();
}

GeneratorSpec GeneratorSpec::from_json(const std::string& s) {
  nlohmann::json j = nlohmann::json::parse(s);
  GeneratorSpec spec;
  spec.in_channels = j.at("in_channels").get<int>();
  spec.out_channels = j.at("out_channels").get<int>();
  spec.base_width = j.at("base_width").get<int>();
  spec.n_downsample = j.at("n_downsample").get<int>();
  spec.n_residual = j.at("n_residual").get<int>();
  spec.instance_norm = j.at("instance_norm").get<bool>();
  return spec;
}

uint64_t GeneratorSpec::hash() const { return fnv1a(to_json()); }

std::string DiscriminatorSpec::to_json() const {
  nlohmann::json j;
  j["in_channels"] = in_channels;
  j["n_layers"] = n_layers;
  j["base_width"] = base_width;
  j["patch_output"] = patch_output;
  j["n_domains"] = n_domains;
  j["leak"] = leak;
  return j.dump();
}

DiscriminatorSpec DiscriminatorSpec::from_json(const std::string& s) {
  nlohmann::json j = nlohmann::json::parse(s);
  DiscriminatorSpec spec;
  spec.in_channels = j.at("in_channels").get<int>();
  spec.n_layers = j.at("n_layers").get<int>();
  spec.base_width = j.at("base_width").get<int>();
  spec.patch_output = j.at("patch_output").get<bool>();
  spec.n_domains = j.at("n_domains").get<int>();
  spec.leak = j.at("leak").get<double>();
  return spec;
}

uint64_t DiscriminatorSpec::hash() const { return fnv1a(to_json()); }

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

int ParamStore::add(const std::string& name, Tensor init) {
  Entry e;
  e.name = name;
  e.grad = Tensor(init.shape());
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
  for (size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return static_cast<int>(i);
  return -1;
}

int64_t ParamStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) e.grad.fill(0.0f);
}

bool ParamStore::values_finite() const {
  for (const auto& e : entries_)
    if (!e.value.all_finite()) return false;
  return true;
}

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

namespace {

// Gathers src[c, gh*stride-pad+kh, gw*stride-pad+kw] into col[(c*k+kh)*k+kw, gh*Gw+gw].
void im2col(const float* src, int C, int Hs, int Ws, int k, int stride, int pad,
            int Gh, int Gw, float* col) {
  const int64_t plane = static_cast<int64_t>(Hs) * Ws;
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        float* dst = col + (static_cast<int64_t>((c * k + kh) * k + kw)) * Gh * Gw;
        for (int gh = 0; gh < Gh; ++gh) {
          const int h = gh * stride - pad + kh;
          float* drow = dst + static_cast<int64_t>(gh) * Gw;
          if (h < 0 || h >= Hs) {
            std::memset(drow, 0, sizeof(float) * static_cast<size_t>(Gw));
            continue;
          }
          const float* srow = src + c * plane + static_cast<int64_t>(h) * Ws;
          // valid gw range: 0 <= gw*stride - pad + kw < Ws
          int lo = 0, hi = Gw;  // [lo, hi)
          while (lo < Gw && lo * stride - pad + kw < 0) ++lo;
          while (hi > lo && (hi - 1) * stride - pad + kw >= Ws) --hi;
          if (lo > 0) std::memset(drow, 0, sizeof(float) * static_cast<size_t>(lo));
          if (hi < Gw) std::memset(drow + hi, 0, sizeof(float) * static_cast<size_t>(Gw - hi));
          if (stride == 1) {
            const float* s0 = srow + (lo - pad + kw);
            std::memcpy(drow + lo, s0, sizeof(float) * static_cast<size_t>(hi - lo));
          } else {
            for (int gw = lo; gw < hi; ++gw) drow[gw] = srow[gw * stride - pad + kw];
          }
        }
      }
    }
  }
}

// Scatter-add: dst[c, gh*stride-pad+kh, gw*stride-pad+kw] += col[(c*k+kh)*k+kw, gh*Gw+gw].
void col2im_add(float* dst, int C, int Hd, int Wd, int k, int stride, int pad,
                int Gh, int Gw, const float* col) {
  const int64_t plane = static_cast<int64_t>(Hd) * Wd;
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const float* srow0 = col + (static_cast<int64_t>((c * k + kh) * k + kw)) * Gh * Gw;
        for (int gh = 0; gh < Gh; ++gh) {
          const int h = gh * stride - pad + kh;
          if (h < 0 || h >= Hd) continue;
          float* drow = dst + c * plane + static_cast<int64_t>(h) * Wd;
          const float* srow = srow0 + static_cast<int64_t>(gh) * Gw;
          int lo = 0, hi = Gw;
          while (lo < Gw && lo * stride - pad + kw < 0) ++lo;
          while (hi > lo && (hi - 1) * stride - pad + kw >= Wd) --hi;
          for (int gw = lo; gw < hi; ++gw) drow[gw * stride - pad + kw] += srow[gw];
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4) throw ShapeError("conv2d: expected 4-d tensors");
  const int N = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), k = w.dim(2);
  if (w.dim(1) != I)
    throw ShapeError("conv2d: input channels " + std::to_string(I) + " do not match weight " +
                     w.shape_str());
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: output would be empty");

  Tensor y({N, O, Ho, Wo});
  const int ikk = I * k * k;
  const int64_t xs = static_cast<int64_t>(I) * H * W;
  const int64_t ys = static_cast<int64_t>(O) * Ho * Wo;

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    MatF col(ikk, Ho * Wo);
    im2col(x.data() + n * xs, I, H, W, k, stride, pad, Ho, Wo, col.data());
    CMapMat wm(w.data(), O, ikk);
    MapMat ym(y.data() + n * ys, O, Ho * Wo);
    ym.noalias() = wm * col;
    if (b) {
      for (int o = 0; o < O; ++o) ym.row(o).array() += (*b)[o];
    }
  }
  return y;
}

Tensor conv2d_backward_input(const Tensor& gy, const Tensor& w, int in_h, int in_w,
                             int stride, int pad) {
  const int N = gy.dim(0), O = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int I = w.dim(1), k = w.dim(2);
  Tensor gx({N, I, in_h, in_w});
  const int ikk = I * k * k;
  const int64_t gxs = static_cast<int64_t>(I) * in_h * in_w;
  const int64_t gys = static_cast<int64_t>(O) * Ho * Wo;

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    CMapMat wm(w.data(), O, ikk);
    CMapMat gym(gy.data() + n * gys, O, Ho * Wo);
    MatF colg(ikk, Ho * Wo);
    colg.noalias() = wm.transpose() * gym;
    col2im_add(gx.data() + n * gxs, I, in_h, in_w, k, stride, pad, Ho, Wo, colg.data());
  }
  return gx;
}

void conv2d_backward_params(const Tensor& x, const Tensor& gy, int stride, int pad,
                            Tensor& gw, Tensor* gb) {
  const int N = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int k = gw.dim(2);
  const int ikk = I * k * k;
  const int64_t xs = static_cast<int64_t>(I) * H * W;
  const int64_t gys = static_cast<int64_t>(O) * Ho * Wo;

  std::vector<MatF> parts(static_cast<size_t>(N));
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    MatF col(ikk, Ho * Wo);
    im2col(x.data() + n * xs, I, H, W, k, stride, pad, Ho, Wo, col.data());
    CMapMat gym(gy.data() + n * gys, O, Ho * Wo);
    parts[static_cast<size_t>(n)].noalias() = gym * col.transpose();
  }
  MapMat gwm(gw.data(), O, ikk);
  for (int n = 0; n < N; ++n) gwm += parts[static_cast<size_t>(n)];

  if (gb) {
    for (int n = 0; n < N; ++n) {
      CMapMat gym(gy.data() + n * gys, O, Ho * Wo);
      for (int o = 0; o < O; ++o) (*gb)[o] += gym.row(o).sum();
    }
  }
}

Tensor convt2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4) throw ShapeError("convt2d: expected 4-d tensors");
  const int N = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(1), k = w.dim(2);
  if (w.dim(0) != I) throw ShapeError("convt2d: channel mismatch");
  const int Ho = (H - 1) * stride - 2 * pad + k;
  const int Wo = (W - 1) * stride - 2 * pad + k;

  Tensor y({N, O, Ho, Wo});
  const int okk = O * k * k;
  const int64_t xs = static_cast<int64_t>(I) * H * W;
  const int64_t ys = static_cast<int64_t>(O) * Ho * Wo;

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    CMapMat wm(w.data(), I, okk);
    CMapMat xm(x.data() + n * xs, I, H * W);
    MatF col(okk, H * W);
    col.noalias() = wm.transpose() * xm;
    col2im_add(y.data() + n * ys, O, Ho, Wo, k, stride, pad, H, W, col.data());
    if (b) {
      MapMat ym(y.data() + n * ys, O, Ho * Wo);
      for (int o = 0; o < O; ++o) ym.row(o).array() += (*b)[o];
    }
  }
  return y;
}

Tensor convt2d_backward_input(const Tensor& gy, const Tensor& w, int stride, int pad) {
  const int N = gy.dim(0), O = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int I = w.dim(0), k = w.dim(2);
  const int H = (Ho + 2 * pad - k) / stride + 1;
  const int W = (Wo + 2 * pad - k) / stride + 1;
  Tensor gx({N, I, H, W});
  const int okk = O * k * k;
  const int64_t gys = static_cast<int64_t>(O) * Ho * Wo;
  const int64_t gxs = static_cast<int64_t>(I) * H * W;

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    MatF col(okk, H * W);
    im2col(gy.data() + n * gys, O, Ho, Wo, k, stride, pad, H, W, col.data());
    CMapMat wm(w.data(), I, okk);
    MapMat gxm(gx.data() + n * gxs, I, H * W);
    gxm.noalias() = wm * col;
  }
  return gx;
}

void convt2d_backward_params(const Tensor& x, const Tensor& gy, int stride, int pad,
                             Tensor& gw, Tensor* gb) {
  const int N = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int k = gw.dim(2);
  const int okk = O * k * k;
  const int64_t xs = static_cast<int64_t>(I) * H * W;
  const int64_t gys = static_cast<int64_t>(O) * Ho * Wo;

  std::vector<MatF> parts(static_cast<size_t>(N));
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    MatF col(okk, H * W);
    im2col(gy.data() + n * gys, O, Ho, Wo, k, stride, pad, H, W, col.data());
    CMapMat xm(x.data() + n * xs, I, H * W);
    parts[static_cast<size_t>(n)].noalias() = xm * col.transpose();
  }
  MapMat gwm(gw.data(), I, okk);
  for (int n = 0; n < N; ++n) gwm += parts[static_cast<size_t>(n)];

  if (gb) {
    for (int n = 0; n < N; ++n) {
      CMapMat gym(gy.data() + n * gys, O, Ho * Wo);
      for (int o = 0; o < O; ++o) (*gb)[o] += gym.row(o).sum();
    }
  }
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c0 < 0 || c1 > C || c0 >= c1) throw ShapeError("slice_channels: bad range");
  Tensor out({N, c1 - c0, H, W});
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int n = 0; n < N; ++n)
    std::memcpy(out.data() + static_cast<int64_t>(n) * (c1 - c0) * plane,
                x.data() + (static_cast<int64_t>(n) * C + c0) * plane,
                sizeof(float) * static_cast<size_t>((c1 - c0) * plane));
  return out;
}

// ---------------------------------------------------------------------------
// Instance normalization
// ---------------------------------------------------------------------------

namespace detail {

constexpr float kNormEps = 1e-5f;

// Returns y; fills xhat and invstd ([N,C]) when provided.
Tensor instnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        Tensor* xhat_out, Tensor* invstd_out) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t hw = static_cast<int64_t>(H) * W;
  Tensor y(x.shape());
  Tensor xhat = xhat_out ? Tensor(x.shape()) : Tensor();
  Tensor invstd = invstd_out ? Tensor({N, C}) : Tensor();

  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float* px = x.data() + (static_cast<int64_t>(n) * C + c) * hw;
      float* py = y.data() + (static_cast<int64_t>(n) * C + c) * hw;
      double sum = 0.0, sq = 0.0;
      for (int64_t i = 0; i < hw; ++i) sum += px[i];
      const float mean = static_cast<float>(sum / static_cast<double>(hw));
      for (int64_t i = 0; i < hw; ++i) {
        const double d = px[i] - mean;
        sq += d * d;
      }
      const float inv =
          1.0f / std::sqrt(static_cast<float>(sq / static_cast<double>(hw)) + kNormEps);
      const float g = gamma[c], b = beta[c];
      if (xhat_out) {
        float* ph = xhat.data() + (static_cast<int64_t>(n) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const float xh = (px[i] - mean) * inv;
          ph[i] = xh;
          py[i] = g * xh + b;
        }
        invstd[static_cast<int64_t>(n) * C + c] = inv;
      } else {
        for (int64_t i = 0; i < hw; ++i) py[i] = g * ((px[i] - mean) * inv) + b;
      }
    }
  }
  if (xhat_out) *xhat_out = std::move(xhat);
  if (invstd_out) *invstd_out = std::move(invstd);
  return y;
}

Tensor instnorm_backward(const Tensor& gy, const Tensor& xhat, const Tensor& invstd,
                         const Tensor& gamma, Tensor& ggamma, Tensor& gbeta) {
  const int N = gy.dim(0), C = gy.dim(1), H = gy.dim(2), W = gy.dim(3);
  const int64_t hw = static_cast<int64_t>(H) * W;
  Tensor gx(gy.shape());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float* pg = gy.data() + (static_cast<int64_t>(n) * C + c) * hw;
      const float* ph = xhat.data() + (static_cast<int64_t>(n) * C + c) * hw;
      float* pgx = gx.data() + (static_cast<int64_t>(n) * C + c) * hw;
      double sg = 0.0, sgh = 0.0;
      for (int64_t i = 0; i < hw; ++i) {
        sg += pg[i];
        sgh += static_cast<double>(pg[i]) * ph[i];
      }
      ggamma[c] += static_cast<float>(sgh);
      gbeta[c] += static_cast<float>(sg);
      const float mg = static_cast<float>(sg / static_cast<double>(hw));
      const float mgh = static_cast<float>(sgh / static_cast<double>(hw));
      const float scale = gamma[c] * invstd[static_cast<int64_t>(n) * C + c];
      for (int64_t i = 0; i < hw; ++i) pgx[i] = scale * (pg[i] - mg - ph[i] * mgh);
    }
  }
  return gx;
}

}  // namespace detail

using detail::instnorm_backward;
using detail::instnorm_forward;

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

Generator::Generator(GeneratorSpec spec, uint64_t seed) : spec_(spec) {
  if (spec.in_channels < 1 || spec.out_channels < 1 || spec.base_width < 1 ||
      spec.n_downsample < 0 || spec.n_residual < 0)
    throw ConfigError("invalid generator spec");
  params_.seed = seed;
  params_.spec_hash = spec.hash();
  Rng rng(derive_seed(seed, "generator-init"));

  auto add_conv = [&](const std::string& name, OpKind kind, int in, int out, int k,
                      int stride, int pad) {
    Op op;
    op.kind = kind;
    op.k = k;
    op.stride = stride;
    op.pad = pad;
    Tensor w(kind == OpKind::Conv ? std::vector<int>{out, in, k, k}
                                  : std::vector<int>{in, out, k, k});
    rng.fill_normal(w, 0.0f, 0.02f);
    op.w = params_.add(name + ".w", std::move(w));
    op.b = params_.add(name + ".b", Tensor({out}));
    ops_.push_back(op);
  };
  auto add_norm = [&](const std::string& name, int ch) {
    if (!spec_.instance_norm) return;
    Op op;
    op.kind = OpKind::Norm;
    op.gamma = params_.add(name + ".gamma", Tensor::full({ch}, 1.0f));
    op.beta = params_.add(name + ".beta", Tensor({ch}));
    ops_.push_back(op);
  };
  auto add_simple = [&](OpKind kind) { ops_.push_back(Op{kind}); };

  int w = spec.base_width;
  add_conv("head", OpKind::Conv, spec.in_channels, w, 7, 1, 3);
  add_norm("head.norm", w);
  add_simple(OpKind::Relu);

  for (int i = 0; i < spec.n_downsample; ++i) {
    add_conv("down" + std::to_string(i), OpKind::Conv, w, w * 2, 4, 2, 1);
    add_norm("down" + std::to_string(i) + ".norm", w * 2);
    add_simple(OpKind::Relu);
    w *= 2;
  }

  for (int r = 0; r < spec.n_residual; ++r) {
    const std::string base = "res" + std::to_string(r);
    add_simple(OpKind::ResBegin);
    add_conv(base + ".conv0", OpKind::Conv, w, w, 3, 1, 1);
    add_norm(base + ".norm0", w);
    add_simple(OpKind::Relu);
    add_conv(base + ".conv1", OpKind::Conv, w, w, 3, 1, 1);
    add_norm(base + ".norm1", w);
    add_simple(OpKind::ResEnd);
  }

  for (int i = 0; i < spec.n_downsample; ++i) {
    add_conv("up" + std::to_string(i), OpKind::ConvT, w, w / 2, 4, 2, 1);
    add_norm("up" + std::to_string(i) + ".norm", w / 2);
    add_simple(OpKind::Relu);
    w /= 2;
  }

  add_conv("tail", OpKind::Conv, w, spec.out_channels, 7, 1, 3);
  add_simple(OpKind::Tanh);
}

Tensor Generator::forward(const Tensor& input, GenTrace* trace) const {
  if (input.ndim() != 4) throw ShapeError("generator: expected [N,C,H,W] input");
  if (input.dim(1) != spec_.in_channels)
    throw ShapeError("generator: expected " + std::to_string(spec_.in_channels) +
                     " input channels, got " + std::to_string(input.dim(1)));
  if (trace) {
    trace->per_op.clear();
    trace->per_op.resize(ops_.size());
  }

  Tensor cur = input;
  std::vector<Tensor> skips;
  for (size_t i = 0; i < ops_.size(); ++i) {
    const Op& op = ops_[i];
    switch (op.kind) {
      case OpKind::Conv: {
        if (trace) trace->per_op[i].push_back(cur);
        cur = conv2d_forward(cur, params_.value(op.w), &params_.value(op.b), op.stride,
                             op.pad);
        break;
      }
      case OpKind::ConvT: {
        if (trace) trace->per_op[i].push_back(cur);
        cur = convt2d_forward(cur, params_.value(op.w), &params_.value(op.b), op.stride,
                              op.pad);
        break;
      }
      case OpKind::Norm: {
        Tensor xhat, invstd;
        cur = instnorm_forward(cur, params_.value(op.gamma), params_.value(op.beta),
                               trace ? &xhat : nullptr, trace ? &invstd : nullptr);
        if (trace) {
          trace->per_op[i].push_back(std::move(xhat));
          trace->per_op[i].push_back(std::move(invstd));
        }
        break;
      }
      case OpKind::Relu: {
        if (trace) trace->per_op[i].push_back(cur);
        for (int64_t j = 0; j < cur.size(); ++j) cur[j] = cur[j] > 0.0f ? cur[j] : 0.0f;
        break;
      }
      case OpKind::Tanh: {
        for (int64_t j = 0; j < cur.size(); ++j) cur[j] = std::tanh(cur[j]);
        if (trace) trace->per_op[i].push_back(cur);
        break;
      }
      case OpKind::ResBegin:
        skips.push_back(cur);
        break;
      case OpKind::ResEnd: {
        const Tensor& skip = skips.back();
        for (int64_t j = 0; j < cur.size(); ++j) cur[j] += skip[j];
        skips.pop_back();
        break;
      }
    }
  }
  return cur;
}

Tensor Generator::backward(const GenTrace& trace, const Tensor& grad_out) {
  if (trace.per_op.size() != ops_.size())
    throw ShapeError("generator backward: trace does not match network");
  Tensor g = grad_out;
  std::vector<Tensor> skip_grads;
  for (size_t ri = ops_.size(); ri-- > 0;) {
    const Op& op = ops_[ri];
    const auto& saved = trace.per_op[ri];
    switch (op.kind) {
      case OpKind::Conv: {
        const Tensor& x = saved[0];
        conv2d_backward_params(x, g, op.stride, op.pad, params_.grad(op.w),
                               &params_.grad(op.b));
        g = conv2d_backward_input(g, params_.value(op.w), x.dim(2), x.dim(3), op.stride,
                                  op.pad);
        break;
      }
      case OpKind::ConvT: {
        const Tensor& x = saved[0];
        convt2d_backward_params(x, g, op.stride, op.pad, params_.grad(op.w),
                                &params_.grad(op.b));
        g = convt2d_backward_input(g, params_.value(op.w), op.stride, op.pad);
        break;
      }
      case OpKind::Norm: {
        g = instnorm_backward(g, saved[0], saved[1], params_.value(op.gamma),
                              params_.grad(op.gamma), params_.grad(op.beta));
        break;
      }
      case OpKind::Relu: {
        const Tensor& x = saved[0];
        for (int64_t j = 0; j < g.size(); ++j)
          if (x[j] <= 0.0f) g[j] = 0.0f;
        break;
      }
      case OpKind::Tanh: {
        const Tensor& y = saved[0];
        for (int64_t j = 0; j < g.size(); ++j) g[j] *= 1.0f - y[j] * y[j];
        break;
      }
      case OpKind::ResEnd:
        skip_grads.push_back(g);
        break;
      case OpKind::ResBegin: {
        const Tensor& sg = skip_grads.back();
        for (int64_t j = 0; j < g.size(); ++j) g[j] += sg[j];
        skip_grads.pop_back();
        break;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

Discriminator::Discriminator(DiscriminatorSpec spec, uint64_t seed) : spec_(spec) {
  if (spec.in_channels < 1 || spec.n_layers < 1 || spec.base_width < 1 || spec.n_domains < 0)
    throw ConfigError("invalid discriminator spec");
  params_.seed = seed;
  params_.spec_hash = spec.hash();
  Rng rng(derive_seed(seed, "discriminator-init"));

  auto add_conv = [&](const std::string& name, int in, int out, int k) {
    Tensor w({out, in, k, k});
    rng.fill_normal(w, 0.0f, 0.02f);
    conv_w_.push_back(params_.add(name + ".w", std::move(w)));
    conv_b_.push_back(params_.add(name + ".b", Tensor({out})));
  };

  int in = spec.in_channels;
  int width = spec.base_width;
  for (int i = 0; i < spec.n_layers; ++i) {
    add_conv("layer" + std::to_string(i), in, width, 4);
    in = width;
    width = std::min(width * 2, spec.base_width * 8);
  }
  {
    Tensor w({1, in, 3, 3});
    rng.fill_normal(w, 0.0f, 0.02f);
    patch_w_ = params_.add("patch.w", std::move(w));
    patch_b_ = params_.add("patch.b", Tensor({1}));
  }
  if (spec.n_domains > 0) {
    Tensor w({spec.n_domains, in});
    rng.fill_normal(w, 0.0f, 0.02f);
    dom_w_ = params_.add("domain.w", std::move(w));
    dom_b_ = params_.add("domain.b", Tensor({spec.n_domains}));
  }
}

Discriminator::Output Discriminator::forward(const Tensor& input, DiscTrace* trace) const {
  if (input.ndim() != 4) throw ShapeError("discriminator: expected [N,C,H,W] input");
  if (input.dim(1) != spec_.in_channels)
    throw ShapeError("discriminator: expected " + std::to_string(spec_.in_channels) +
                     " input channels, got " + std::to_string(input.dim(1)));
  const float leak = static_cast<float>(spec_.leak);
  if (trace) {
    trace->conv_in.clear();
    trace->preact.clear();
  }

  Tensor cur = input;
  for (size_t i = 0; i < conv_w_.size(); ++i) {
    if (trace) trace->conv_in.push_back(cur);
    cur = conv2d_forward(cur, params_.value(conv_w_[i]), &params_.value(conv_b_[i]), 2, 1);
    if (trace) trace->preact.push_back(cur);
    for (int64_t j = 0; j < cur.size(); ++j)
      if (cur[j] < 0.0f) cur[j] *= leak;
  }
  if (trace) trace->feat = cur;

  Output out;
  out.patch = conv2d_forward(cur, params_.value(patch_w_), &params_.value(patch_b_), 1, 1);
  if (!spec_.patch_output) {
    const int N = out.patch.dim(0), h = out.patch.dim(2), w = out.patch.dim(3);
    Tensor collapsed({N, 1, 1, 1});
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int n = 0; n < N; ++n) {
      double s = 0.0;
      for (int64_t j = 0; j < hw; ++j) s += out.patch.data()[n * hw + j];
      collapsed[n] = static_cast<float>(s / static_cast<double>(hw));
    }
    out.patch = std::move(collapsed);
  }

  if (spec_.n_domains > 0) {
    const int N = cur.dim(0), Cf = cur.dim(1);
    const int64_t hw = static_cast<int64_t>(cur.dim(2)) * cur.dim(3);
    Tensor pooled({N, Cf});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Cf; ++c) {
        const float* p = cur.data() + (static_cast<int64_t>(n) * Cf + c) * hw;
        double s = 0.0;
        for (int64_t j = 0; j < hw; ++j) s += p[j];
        pooled.data()[n * Cf + c] = static_cast<float>(s / static_cast<double>(hw));
      }
    const Tensor& wd = params_.value(dom_w_);
    const Tensor& bd = params_.value(dom_b_);
    out.domain = Tensor({N, spec_.n_domains});
    for (int n = 0; n < N; ++n)
      for (int d = 0; d < spec_.n_domains; ++d) {
        double s = bd[d];
        for (int c = 0; c < Cf; ++c)
          s += static_cast<double>(wd.data()[d * Cf + c]) * pooled.data()[n * Cf + c];
        out.domain.data()[n * spec_.n_domains + d] = static_cast<float>(s);
      }
    if (trace) trace->pooled = std::move(pooled);
  }
  return out;
}

Tensor Discriminator::backward_core(const DiscTrace& acts, const DiscTrace& masks,
                                    const Tensor* grad_patch, const Tensor* grad_domain,
                                    bool param_grads, bool bias_grads) {
  const Tensor& feat = acts.feat;
  const int N = feat.dim(0), Cf = feat.dim(1), hf = feat.dim(2), wf = feat.dim(3);
  const int64_t hw = static_cast<int64_t>(hf) * wf;
  Tensor gfeat(feat.shape());

  if (grad_patch && grad_patch->size() > 0) {
    Tensor gp = *grad_patch;
    if (!spec_.patch_output) {
      // Collapsed head: spread the scalar gradient uniformly over the map.
      Tensor spread({N, 1, hf, wf});
      for (int n = 0; n < N; ++n) {
        const float v = (*grad_patch)[n] / static_cast<float>(hw);
        for (int64_t j = 0; j < hw; ++j) spread.data()[n * hw + j] = v;
      }
      gp = std::move(spread);
    }
    if (param_grads)
      conv2d_backward_params(feat, gp, 1, 1, params_.grad(patch_w_),
                             bias_grads ? &params_.grad(patch_b_) : nullptr);
    Tensor g = conv2d_backward_input(gp, params_.value(patch_w_), hf, wf, 1, 1);
    for (int64_t j = 0; j < gfeat.size(); ++j) gfeat[j] += g[j];
  }

  if (grad_domain && grad_domain->size() > 0 && spec_.n_domains > 0) {
    const Tensor& wd = params_.value(dom_w_);
    if (param_grads) {
      Tensor& gwd = params_.grad(dom_w_);
      Tensor& gbd = params_.grad(dom_b_);
      for (int n = 0; n < N; ++n)
        for (int d = 0; d < spec_.n_domains; ++d) {
          const float gd = grad_domain->data()[n * spec_.n_domains + d];
          if (bias_grads) gbd[d] += gd;
          for (int c = 0; c < Cf; ++c)
            gwd.data()[d * Cf + c] += gd * acts.pooled.data()[n * Cf + c];
        }
    }
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Cf; ++c) {
        double s = 0.0;
        for (int d = 0; d < spec_.n_domains; ++d)
          s += static_cast<double>(grad_domain->data()[n * spec_.n_domains + d]) *
               wd.data()[d * Cf + c];
        const float add = static_cast<float>(s / static_cast<double>(hw));
        float* p = gfeat.data() + (static_cast<int64_t>(n) * Cf + c) * hw;
        for (int64_t j = 0; j < hw; ++j) p[j] += add;
      }
  }

  const float leak = static_cast<float>(spec_.leak);
  Tensor g = std::move(gfeat);
  for (size_t ri = conv_w_.size(); ri-- > 0;) {
    const Tensor& pre = masks.preact[ri];
    for (int64_t j = 0; j < g.size(); ++j)
      if (pre[j] < 0.0f) g[j] *= leak;
    const Tensor& x = acts.conv_in[ri];
    if (param_grads)
      conv2d_backward_params(x, g, 2, 1, params_.grad(conv_w_[ri]),
                             bias_grads ? &params_.grad(conv_b_[ri]) : nullptr);
    g = conv2d_backward_input(g, params_.value(conv_w_[ri]), x.dim(2), x.dim(3), 2, 1);
  }
  return g;
}

Tensor Discriminator::backward(const DiscTrace& trace, const Tensor* grad_patch,
                               const Tensor* grad_domain) {
  return backward_core(trace, trace, grad_patch, grad_domain, true, true);
}

Tensor Discriminator::input_gradient_patchmean(const DiscTrace& trace) const {
  const int N = trace.feat.dim(0), hf = trace.feat.dim(2), wf = trace.feat.dim(3);
  Tensor gp;
  if (spec_.patch_output) {
    gp = Tensor::full({N, 1, hf, wf}, 1.0f / static_cast<float>(hf * wf));
  } else {
    gp = Tensor::full({N, 1, 1, 1}, 1.0f);
  }
  // No parameter accumulation happens on this path.
  return const_cast<Discriminator*>(this)->backward_core(trace, trace, &gp, nullptr, false,
                                                         false);
}

Discriminator::Tangent Discriminator::tangent_forward(const Tensor& tangent_in,
                                                      const DiscTrace& primal) const {
  Tangent tg;
  const float leak = static_cast<float>(spec_.leak);
  Tensor cur = tangent_in;
  for (size_t i = 0; i < conv_w_.size(); ++i) {
    tg.trace.conv_in.push_back(cur);
    cur = conv2d_forward(cur, params_.value(conv_w_[i]), nullptr, 2, 1);
    const Tensor& pre = primal.preact[i];
    for (int64_t j = 0; j < cur.size(); ++j)
      if (pre[j] < 0.0f) cur[j] *= leak;
  }
  tg.trace.feat = cur;

  Tensor patch = conv2d_forward(cur, params_.value(patch_w_), nullptr, 1, 1);
  const int N = patch.dim(0);
  const int64_t hw = static_cast<int64_t>(patch.dim(2)) * patch.dim(3);
  tg.h.resize(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    double s = 0.0;
    for (int64_t j = 0; j < hw; ++j) s += patch.data()[n * hw + j];
    tg.h[static_cast<size_t>(n)] = s / static_cast<double>(hw);
  }
  return tg;
}

void Discriminator::tangent_backward(const std::vector<double>& coeff, const Tangent& tangent,
                                     const DiscTrace& primal) {
  const Tensor& feat = tangent.trace.feat;
  const int N = feat.dim(0), hf = feat.dim(2), wf = feat.dim(3);
  const int64_t hw = static_cast<int64_t>(hf) * wf;
  Tensor gp({N, 1, hf, wf});
  for (int n = 0; n < N; ++n) {
    const float v = static_cast<float>(coeff[static_cast<size_t>(n)] / static_cast<double>(hw));
    for (int64_t j = 0; j < hw; ++j) gp.data()[n * hw + j] = v;
  }
  backward_core(tangent.trace, primal, &gp, nullptr, true, /*bias_grads=*/false);
}

}  // namespace reshape
