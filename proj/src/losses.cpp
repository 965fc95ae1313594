#include "glann/losses.hpp"

#include <algorithm>
#include <cmath>

#include "glann/checkpoint.hpp"
#include "glann/errors.hpp"

namespace glann {

namespace {

// 5-tap binomial kernel used by the pyramid; the paper-era standard choice.
constexpr float kBlur[5] = {1.0f / 16, 4.0f / 16, 6.0f / 16, 4.0f / 16, 1.0f / 16};

int64_t clampi(int64_t i, int64_t n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

// 1D blur along rows (w axis) of an (h,w) plane, replicate borders.
void blur_rows(const float* src, float* dst, int64_t h, int64_t w, float scale) {
  for (int64_t i = 0; i < h; ++i) {
    const float* s = src + i * w;
    float* d = dst + i * w;
    for (int64_t j = 0; j < w; ++j) {
      float acc = 0.0f;
      for (int k = 0; k < 5; ++k) acc += kBlur[k] * s[clampi(j + k - 2, w)];
      d[j] = acc * scale;
    }
  }
}

void blur_cols(const float* src, float* dst, int64_t h, int64_t w, float scale) {
  for (int64_t j = 0; j < w; ++j) {
    for (int64_t i = 0; i < h; ++i) {
      float acc = 0.0f;
      for (int k = 0; k < 5; ++k) acc += kBlur[k] * src[clampi(i + k - 2, h) * w + j];
      dst[i * w + j] = acc * scale;
    }
  }
}

// Adjoints of the clamped blurs: scatter instead of gather, so border
// duplication transposes correctly.
void blur_rows_adj(const float* g, float* dst, int64_t h, int64_t w, float scale) {
  std::fill(dst, dst + h * w, 0.0f);
  for (int64_t i = 0; i < h; ++i) {
    const float* gi = g + i * w;
    float* d = dst + i * w;
    for (int64_t j = 0; j < w; ++j)
      for (int k = 0; k < 5; ++k) d[clampi(j + k - 2, w)] += kBlur[k] * gi[j] * scale;
  }
}

void blur_cols_adj(const float* g, float* dst, int64_t h, int64_t w, float scale) {
  std::fill(dst, dst + h * w, 0.0f);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int k = 0; k < 5; ++k) dst[clampi(i + k - 2, h) * w + j] += kBlur[k] * g[i * w + j] * scale;
}

void blur_plane(const float* src, float* dst, int64_t h, int64_t w, float axis_scale,
                std::vector<float>& tmp) {
  tmp.resize(static_cast<size_t>(h * w));
  blur_rows(src, tmp.data(), h, w, axis_scale);
  blur_cols(tmp.data(), dst, h, w, axis_scale);
}

void blur_plane_adj(const float* g, float* dst, int64_t h, int64_t w, float axis_scale,
                    std::vector<float>& tmp) {
  tmp.resize(static_cast<size_t>(h * w));
  blur_cols_adj(g, tmp.data(), h, w, axis_scale);
  blur_rows_adj(tmp.data(), dst, h, w, axis_scale);
}

int64_t half_up(int64_t n) { return (n + 1) / 2; }

// Per-plane pyramid primitives acting on (N,C,h,w) tensors.

Tensor blur4(const Tensor& x, float axis_scale) {
  int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y(x.shape());
  std::vector<float> tmp;
  for (int64_t p = 0; p < planes; ++p)
    blur_plane(x.data() + p * h * w, y.data() + p * h * w, h, w, axis_scale, tmp);
  return y;
}

Tensor blur4_adj(const Tensor& g, float axis_scale) {
  int64_t planes = g.dim(0) * g.dim(1), h = g.dim(2), w = g.dim(3);
  Tensor y(g.shape());
  std::vector<float> tmp;
  for (int64_t p = 0; p < planes; ++p)
    blur_plane_adj(g.data() + p * h * w, y.data() + p * h * w, h, w, axis_scale, tmp);
  return y;
}

// Even-index decimation.
Tensor decimate(const Tensor& x) {
  int64_t N = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t ho = half_up(h), wo = half_up(w);
  Tensor y({N, C, ho, wo});
  for (int64_t p = 0; p < N * C; ++p) {
    const float* s = x.data() + p * h * w;
    float* d = y.data() + p * ho * wo;
    for (int64_t i = 0; i < ho; ++i)
      for (int64_t j = 0; j < wo; ++j) d[i * wo + j] = s[(2 * i) * w + 2 * j];
  }
  return y;
}

// Adjoint of decimation: zero-stuff even indices into an (h,w) grid.
Tensor stuff(const Tensor& x, int64_t h, int64_t w) {
  int64_t N = x.dim(0), C = x.dim(1), ho = x.dim(2), wo = x.dim(3);
  Tensor y({N, C, h, w});
  for (int64_t p = 0; p < N * C; ++p) {
    const float* s = x.data() + p * ho * wo;
    float* d = y.data() + p * h * w;
    for (int64_t i = 0; i < ho; ++i)
      for (int64_t j = 0; j < wo; ++j) d[(2 * i) * w + 2 * j] = s[i * wo + j];
  }
  return y;
}

Tensor pyr_down(const Tensor& x) { return decimate(blur4(x, 1.0f)); }

// Expand to (h,w): zero-stuff then blur with doubled kernel per axis.
Tensor pyr_up(const Tensor& x, int64_t h, int64_t w) { return blur4(stuff(x, h, w), 2.0f); }

Tensor pyr_down_adj(const Tensor& g, int64_t h, int64_t w) {
  return blur4_adj(stuff(g, h, w), 1.0f);
}

Tensor pyr_up_adj(const Tensor& g) { return decimate(blur4_adj(g, 2.0f)); }

std::vector<Tensor> gaussian_pyramid(const Tensor& x, int levels) {
  std::vector<Tensor> g;
  g.push_back(x);
  for (int j = 1; j < levels; ++j) g.push_back(pyr_down(g.back()));
  return g;
}

std::vector<Tensor> laplacian_pyramid(const std::vector<Tensor>& g) {
  std::vector<Tensor> lap;
  for (size_t j = 0; j + 1 < g.size(); ++j) {
    Tensor up = pyr_up(g[j + 1], g[j].dim(2), g[j].dim(3));
    Tensor l = g[j];
    for (int64_t i = 0; i < l.numel(); ++i) l[i] -= up[i];
    lap.push_back(std::move(l));
  }
  lap.push_back(g.back());  // low-pass residue
  return lap;
}

void check_pyramid_args(const Tensor& a, const Tensor& b, int levels) {
  check_same_shape(a, b, "laplacian_pyramid_loss");
  if (a.ndim() != 4) throw ArgumentError("laplacian_pyramid_loss: expected (N,C,H,W)");
  if (levels < 1) throw ArgumentError("laplacian_pyramid_loss: levels must be >= 1");
  int64_t min_side = std::min(a.dim(2), a.dim(3));
  int64_t need = int64_t{1} << (levels - 1);
  if (min_side < need)
    throw ArgumentError("laplacian_pyramid_loss: image sides " + std::to_string(a.dim(2)) + "x" +
                        std::to_string(a.dim(3)) + " too small for " + std::to_string(levels) +
                        " levels");
}

std::vector<double> resolve_layer_weights(const std::vector<double>& w, int taps) {
  if (w.empty()) return std::vector<double>(static_cast<size_t>(taps), 1.0 / taps);
  if (static_cast<int>(w.size()) != taps)
    throw ConfigError("perceptual loss: " + std::to_string(w.size()) + " layer weights for " +
                      std::to_string(taps) + " taps");
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureExtractor
// ---------------------------------------------------------------------------

FeatureExtractor FeatureExtractor::identity() { return FeatureExtractor(); }

FeatureExtractor FeatureExtractor::random_conv(int64_t cin, uint64_t seed, int levels,
                                               int64_t base_width) {
  if (levels < 1) throw ConfigError("random_conv extractor: levels must be >= 1");
  Rng rng(derive_seed(seed, "feature-extractor"));
  FeatureExtractor fx;
  int64_t c = cin;
  int64_t width = base_width;
  for (int l = 0; l < levels; ++l) {
    ConvLayer layer;
    layer.spec = nn::ConvSpec{c, width, 3, 2, 1};
    float s = std::sqrt(2.0f / static_cast<float>(c * 9));
    layer.W = Tensor({width, c * 9});
    for (int64_t i = 0; i < layer.W.numel(); ++i) layer.W[i] = s * rng.normal_f();
    layer.b = Tensor({width});
    fx.layers_.push_back(std::move(layer));
    c = width;
    width *= 2;
  }
  fx.id_ = "randconv-c" + std::to_string(cin) + "-l" + std::to_string(levels) + "-w" +
           std::to_string(base_width) + "-s" + std::to_string(seed);
  return fx;
}

FeatureExtractor FeatureExtractor::from_layers(std::vector<ConvLayer> layers, std::string id) {
  FeatureExtractor fx;
  fx.layers_ = std::move(layers);
  fx.id_ = std::move(id);
  return fx;
}

Tensor FeatureExtractor::adapt_channels(const Tensor& x) const {
  int64_t want = input_channels();
  if (want == 0 || x.dim(1) == want) return x;
  if (x.dim(1) == 1 && want == 3) {
    int64_t N = x.dim(0), hw = x.dim(2) * x.dim(3);
    Tensor y({N, 3, x.dim(2), x.dim(3)});
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < 3; ++c)
        std::copy(x.data() + n * hw, x.data() + (n + 1) * hw, y.data() + (n * 3 + c) * hw);
    return y;
  }
  throw ConfigError("feature extractor expects " + std::to_string(want) +
                    " channels, input has " + std::to_string(x.dim(1)));
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& x) const {
  if (layers_.empty()) return {x};
  std::vector<Tensor> taps;
  Tensor h = adapt_channels(x);
  for (const auto& l : layers_) {
    h = nn::relu_fwd(nn::conv2d_fwd(h, l.W, &l.b, l.spec));
    taps.push_back(h);
  }
  return taps;
}

Tensor FeatureExtractor::input_grad(const Tensor& x, const std::vector<Tensor>& tap_grads) const {
  if (layers_.empty()) {
    if (tap_grads.size() != 1) throw ArgumentError("identity extractor expects 1 tap grad");
    return tap_grads[0];
  }
  if (tap_grads.size() != layers_.size())
    throw ArgumentError("input_grad: need one grad per tap");

  // Recompute the activation chain, then walk it backwards accumulating the
  // tap gradients as they are passed.
  Tensor adapted = adapt_channels(x);
  std::vector<Tensor> pre;   // conv outputs (pre-ReLU)
  std::vector<Tensor> post;  // ReLU outputs (the taps)
  Tensor h = adapted;
  for (const auto& l : layers_) {
    pre.push_back(nn::conv2d_fwd(h, l.W, &l.b, l.spec));
    post.push_back(nn::relu_fwd(pre.back()));
    h = post.back();
  }

  Tensor g = tap_grads.back();
  for (int64_t l = static_cast<int64_t>(layers_.size()) - 1; l >= 0; --l) {
    // through the ReLU at tap l
    Tensor gpre = g;
    const Tensor& p = pre[static_cast<size_t>(l)];
    for (int64_t i = 0; i < gpre.numel(); ++i)
      if (p[i] <= 0.0f) gpre[i] = 0.0f;
    // through the conv
    const Tensor& in = l == 0 ? adapted : post[static_cast<size_t>(l - 1)];
    Tensor gin(in.shape());
    nn::conv2d_bwd(in, layers_[static_cast<size_t>(l)].W, gpre,
                   layers_[static_cast<size_t>(l)].spec, &gin, nullptr, nullptr);
    if (l > 0) {
      g = tap_grads[static_cast<size_t>(l - 1)];
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += gin[i];
    } else {
      g = std::move(gin);
    }
  }

  // fold replicated-channel grads back to the single input channel
  if (input_channels() == 3 && x.dim(1) == 1) {
    int64_t N = x.dim(0), hw = x.dim(2) * x.dim(3);
    Tensor out(x.shape());
    for (int64_t n = 0; n < N; ++n)
      for (int64_t j = 0; j < hw; ++j) {
        float acc = 0.0f;
        for (int64_t c = 0; c < 3; ++c) acc += g[(n * 3 + c) * hw + j];
        out[n * hw + j] = acc;
      }
    return out;
  }
  return g;
}

void FeatureExtractor::save(const std::string& path) const {
  Checkpoint ck;
  std::string meta = "{\"id\":\"" + id_ + "\",\"layers\":" + std::to_string(layers_.size()) + "}";
  ck.config_json = meta;
  for (size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Tensor spec({5});
    spec[0] = static_cast<float>(layer.spec.cin);
    spec[1] = static_cast<float>(layer.spec.cout);
    spec[2] = static_cast<float>(layer.spec.k);
    spec[3] = static_cast<float>(layer.spec.stride);
    spec[4] = static_cast<float>(layer.spec.pad);
    std::string p = "layer" + std::to_string(l);
    ck.add(p + "/spec", spec);
    ck.add(p + "/weight", layer.W);
    ck.add(p + "/bias", layer.b);
  }
  ck.save(path);
}

FeatureExtractor FeatureExtractor::load(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  std::vector<ConvLayer> layers;
  for (size_t l = 0;; ++l) {
    std::string p = "layer" + std::to_string(l);
    if (!ck.has(p + "/spec")) break;
    const Tensor& spec = ck.get(p + "/spec");
    ConvLayer layer;
    layer.spec = nn::ConvSpec{static_cast<int64_t>(spec[0]), static_cast<int64_t>(spec[1]),
                              static_cast<int64_t>(spec[2]), static_cast<int64_t>(spec[3]),
                              static_cast<int64_t>(spec[4])};
    layer.W = ck.get(p + "/weight");
    layer.b = ck.get(p + "/bias");
    layers.push_back(std::move(layer));
  }
  return from_layers(std::move(layers), "file:" + path);
}

// ---------------------------------------------------------------------------
// L2
// ---------------------------------------------------------------------------

double l2_loss(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "l2_loss");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

LossValueGrad l2_loss_grad(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "l2_loss");
  LossValueGrad r;
  r.grad = Tensor(a.shape());
  double acc = 0.0;
  float scale = 2.0f / static_cast<float>(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
    r.grad[i] = scale * static_cast<float>(d);
  }
  r.value = acc / static_cast<double>(a.numel());
  return r;
}

// ---------------------------------------------------------------------------
// Laplacian pyramid: sum_j 2^(-2j) * mean|Lap_j(a) - Lap_j(b)|
// ---------------------------------------------------------------------------

double laplacian_pyramid_loss(const Tensor& a, const Tensor& b, int levels) {
  check_pyramid_args(a, b, levels);
  auto la = laplacian_pyramid(gaussian_pyramid(a, levels));
  auto lb = laplacian_pyramid(gaussian_pyramid(b, levels));
  double total = 0.0;
  for (int j = 0; j < levels; ++j) {
    double acc = 0.0;
    for (int64_t i = 0; i < la[j].numel(); ++i)
      acc += std::abs(static_cast<double>(la[j][i]) - lb[j][i]);
    total += std::ldexp(acc / static_cast<double>(la[j].numel()), -2 * j);
  }
  return total;
}

LossValueGrad laplacian_pyramid_loss_grad(const Tensor& a, const Tensor& b, int levels) {
  check_pyramid_args(a, b, levels);
  auto ga = gaussian_pyramid(a, levels);
  auto la = laplacian_pyramid(ga);
  auto lb = laplacian_pyramid(gaussian_pyramid(b, levels));

  LossValueGrad r;
  double total = 0.0;
  std::vector<Tensor> glap(static_cast<size_t>(levels));
  for (int j = 0; j < levels; ++j) {
    int64_t n = la[j].numel();
    double w = std::ldexp(1.0, -2 * j);
    Tensor g(la[j].shape());
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double d = static_cast<double>(la[j][i]) - lb[j][i];
      acc += std::abs(d);
      g[i] = static_cast<float>(w / n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)));
    }
    total += w * acc / static_cast<double>(n);
    glap[static_cast<size_t>(j)] = std::move(g);
  }
  r.value = total;

  // Backprop: Lap_j = G_j - up(G_{j+1}), G_{j+1} = down(blur(G_j)).
  std::vector<Tensor> gG(static_cast<size_t>(levels));
  for (int j = levels - 1; j >= 0; --j) {
    Tensor acc = glap[static_cast<size_t>(j)];
    if (j >= 1) {
      Tensor t = pyr_up_adj(glap[static_cast<size_t>(j - 1)]);
      for (int64_t i = 0; i < acc.numel(); ++i) acc[i] -= t[i];
    }
    if (j + 1 <= levels - 1) {
      Tensor t = pyr_down_adj(gG[static_cast<size_t>(j + 1)], ga[j].dim(2), ga[j].dim(3));
      for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += t[i];
    }
    gG[static_cast<size_t>(j)] = std::move(acc);
  }
  r.grad = std::move(gG[0]);
  return r;
}

// ---------------------------------------------------------------------------
// Perceptual
// ---------------------------------------------------------------------------

double perceptual_feature_loss(const Tensor& a, const Tensor& b, const FeatureExtractor& fx,
                               double w_pix, const std::vector<double>& layer_weights) {
  check_same_shape(a, b, "perceptual_feature_loss");
  auto fa = fx.features(a);
  auto fb = fx.features(b);
  auto w = resolve_layer_weights(layer_weights, static_cast<int>(fa.size()));
  double total = w_pix > 0.0 ? w_pix * l2_loss(a, b) : 0.0;
  for (size_t l = 0; l < fa.size(); ++l) total += w[l] * l2_loss(fa[l], fb[l]);
  return total;
}

LossValueGrad perceptual_feature_loss_grad(const Tensor& a, const Tensor& b,
                                           const FeatureExtractor& fx, double w_pix,
                                           const std::vector<double>& layer_weights) {
  check_same_shape(a, b, "perceptual_feature_loss");
  auto fa = fx.features(a);
  auto fb = fx.features(b);
  auto w = resolve_layer_weights(layer_weights, static_cast<int>(fa.size()));

  LossValueGrad r;
  double total = 0.0;
  std::vector<Tensor> tap_grads;
  for (size_t l = 0; l < fa.size(); ++l) {
    int64_t n = fa[l].numel();
    Tensor g(fa[l].shape());
    double acc = 0.0;
    float scale = static_cast<float>(2.0 * w[l] / n);
    for (int64_t i = 0; i < n; ++i) {
      double d = static_cast<double>(fa[l][i]) - fb[l][i];
      acc += d * d;
      g[i] = scale * static_cast<float>(d);
    }
    total += w[l] * acc / static_cast<double>(n);
    tap_grads.push_back(std::move(g));
  }
  r.grad = fx.input_grad(a, tap_grads);
  if (w_pix > 0.0) {
    auto pix = l2_loss_grad(a, b);
    total += w_pix * pix.value;
    for (int64_t i = 0; i < r.grad.numel(); ++i)
      r.grad[i] += static_cast<float>(w_pix) * pix.grad[i];
  }
  r.value = total;
  return r;
}

// ---------------------------------------------------------------------------
// Multiscale
// ---------------------------------------------------------------------------

Tensor downsample2x(const Tensor& x) {
  if (x.ndim() != 4) throw ArgumentError("downsample2x: expected (N,C,H,W)");
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
    throw ArgumentError("downsample2x: sides must be even, got " + x.shape_string());
  int64_t N = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t ho = h / 2, wo = w / 2;
  Tensor y({N, C, ho, wo});
  for (int64_t p = 0; p < N * C; ++p) {
    const float* s = x.data() + p * h * w;
    float* d = y.data() + p * ho * wo;
    for (int64_t i = 0; i < ho; ++i)
      for (int64_t j = 0; j < wo; ++j)
        d[i * wo + j] = 0.25f * (s[2 * i * w + 2 * j] + s[2 * i * w + 2 * j + 1] +
                                 s[(2 * i + 1) * w + 2 * j] + s[(2 * i + 1) * w + 2 * j + 1]);
  }
  return y;
}

namespace {

Tensor upsample2x_adj(const Tensor& g, int64_t h, int64_t w) {
  int64_t N = g.dim(0), C = g.dim(1), ho = g.dim(2), wo = g.dim(3);
  Tensor y({N, C, h, w});
  for (int64_t p = 0; p < N * C; ++p) {
    const float* s = g.data() + p * ho * wo;
    float* d = y.data() + p * h * w;
    for (int64_t i = 0; i < ho; ++i)
      for (int64_t j = 0; j < wo; ++j) {
        float v = 0.25f * s[i * wo + j];
        d[2 * i * w + 2 * j] = v;
        d[2 * i * w + 2 * j + 1] = v;
        d[(2 * i + 1) * w + 2 * j] = v;
        d[(2 * i + 1) * w + 2 * j + 1] = v;
      }
  }
  return y;
}

double base_loss_value(const LossSpec& base, const FeatureExtractor* fx, const Tensor& a,
                       const Tensor& b) {
  switch (base.kind) {
    case LossKind::L2:
      return l2_loss(a, b);
    case LossKind::LapPyramid:
      return laplacian_pyramid_loss(a, b, base.levels);
    case LossKind::Perceptual:
    case LossKind::MultiscalePerceptual:
      if (!fx) throw ConfigError("perceptual loss requires a feature extractor");
      return perceptual_feature_loss(a, b, *fx, base.w_pix, base.layer_weights);
  }
  throw ConfigError("unknown loss kind");
}

LossValueGrad base_loss_grad(const LossSpec& base, const FeatureExtractor* fx, const Tensor& a,
                             const Tensor& b) {
  switch (base.kind) {
    case LossKind::L2:
      return l2_loss_grad(a, b);
    case LossKind::LapPyramid:
      return laplacian_pyramid_loss_grad(a, b, base.levels);
    case LossKind::Perceptual:
    case LossKind::MultiscalePerceptual:
      if (!fx) throw ConfigError("perceptual loss requires a feature extractor");
      return perceptual_feature_loss_grad(a, b, *fx, base.w_pix, base.layer_weights);
  }
  throw ConfigError("unknown loss kind");
}

void check_multiscale_args(const Tensor& a, int subsample_levels) {
  if (subsample_levels < 1) throw ArgumentError("multiscale_loss: subsample_levels must be >= 1");
  int64_t div = int64_t{1} << (subsample_levels - 1);
  if (a.dim(2) % div != 0 || a.dim(3) % div != 0)
    throw ArgumentError("multiscale_loss: sides " + a.shape_string() + " not divisible by " +
                        std::to_string(div));
}

}  // namespace

double multiscale_loss(const Tensor& a, const Tensor& b, const LossSpec& base,
                       const FeatureExtractor* fx, int subsample_levels) {
  check_same_shape(a, b, "multiscale_loss");
  check_multiscale_args(a, subsample_levels);
  Tensor sa = a, sb = b;
  double total = 0.0;
  for (int s = 0; s < subsample_levels; ++s) {
    if (s > 0) {
      sa = downsample2x(sa);
      sb = downsample2x(sb);
    }
    total += base_loss_value(base, fx, sa, sb);
  }
  return total / subsample_levels;
}

LossValueGrad multiscale_loss_grad(const Tensor& a, const Tensor& b, const LossSpec& base,
                                   const FeatureExtractor* fx, int subsample_levels) {
  check_same_shape(a, b, "multiscale_loss");
  check_multiscale_args(a, subsample_levels);
  std::vector<Tensor> as{a}, bs{b};
  for (int s = 1; s < subsample_levels; ++s) {
    as.push_back(downsample2x(as.back()));
    bs.push_back(downsample2x(bs.back()));
  }
  LossValueGrad r;
  r.grad = Tensor(a.shape());
  double total = 0.0;
  for (int s = subsample_levels - 1; s >= 0; --s) {
    auto g = base_loss_grad(base, fx, as[static_cast<size_t>(s)], bs[static_cast<size_t>(s)]);
    total += g.value;
    Tensor up = std::move(g.grad);
    for (int t = s; t >= 1; --t)
      up = upsample2x_adj(up, as[static_cast<size_t>(t - 1)].dim(2),
                          as[static_cast<size_t>(t - 1)].dim(3));
    for (int64_t i = 0; i < r.grad.numel(); ++i) r.grad[i] += up[i];
  }
  float inv = 1.0f / static_cast<float>(subsample_levels);
  for (int64_t i = 0; i < r.grad.numel(); ++i) r.grad[i] *= inv;
  r.value = total / subsample_levels;
  return r;
}

// ---------------------------------------------------------------------------
// ReconLoss
// ---------------------------------------------------------------------------

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::L2:
      return "l2";
    case LossKind::LapPyramid:
      return "lap_pyramid";
    case LossKind::Perceptual:
      return "perceptual";
    case LossKind::MultiscalePerceptual:
      return "multiscale-perceptual";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "l2") return LossKind::L2;
  if (s == "lap_pyramid") return LossKind::LapPyramid;
  if (s == "perceptual") return LossKind::Perceptual;
  if (s == "multiscale-perceptual") return LossKind::MultiscalePerceptual;
  throw ConfigError("unknown loss kind '" + s + "'");
}

ReconLoss::ReconLoss(LossSpec spec, std::shared_ptr<const FeatureExtractor> fx)
    : spec_(std::move(spec)), fx_(std::move(fx)) {}

double ReconLoss::value(const Tensor& a, const Tensor& b) const {
  if (spec_.kind == LossKind::MultiscalePerceptual) {
    LossSpec base = spec_;
    base.kind = LossKind::Perceptual;
    return multiscale_loss(a, b, base, fx_.get(), spec_.subsample_levels);
  }
  return base_loss_value(spec_, fx_.get(), a, b);
}

LossValueGrad ReconLoss::value_grad(const Tensor& a, const Tensor& b) const {
  if (spec_.kind == LossKind::MultiscalePerceptual) {
    LossSpec base = spec_;
    base.kind = LossKind::Perceptual;
    return multiscale_loss_grad(a, b, base, fx_.get(), spec_.subsample_levels);
  }
  return base_loss_grad(spec_, fx_.get(), a, b);
}

ReconLoss make_recon_loss(const LossSpec& spec, int64_t image_channels) {
  std::shared_ptr<const FeatureExtractor> fx;
  if (spec.kind == LossKind::Perceptual || spec.kind == LossKind::MultiscalePerceptual) {
    if (spec.extractor_kind == "identity") {
      fx = std::make_shared<FeatureExtractor>(FeatureExtractor::identity());
    } else if (spec.extractor_kind == "randconv") {
      fx = std::make_shared<FeatureExtractor>(FeatureExtractor::random_conv(
          image_channels, spec.extractor_seed, spec.extractor_levels));
    } else if (spec.extractor_kind == "file") {
      fx = std::make_shared<FeatureExtractor>(FeatureExtractor::load(spec.extractor_path));
    } else {
      throw ConfigError("unknown extractor kind '" + spec.extractor_kind + "'");
    }
  }
  return ReconLoss(spec, std::move(fx));
}

}  // namespace glann
