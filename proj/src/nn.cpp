#include "glann/nn.hpp"

#include <Eigen/Core>

#include <cmath>

namespace glann::nn {

using MatMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace {

void check_rank(const Tensor& x, int rank, const char* what) {
  if (x.ndim() != rank)
    throw ArgumentError(std::string(what) + ": expected rank " + std::to_string(rank) +
                        ", got shape " + x.shape_string());
}

float he_std(int64_t fan_in) { return std::sqrt(2.0f / static_cast<float>(fan_in)); }

Tensor random_weights(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor W(std::move(shape));
  float s = he_std(fan_in);
  for (int64_t i = 0; i < W.numel(); ++i) W[i] = s * rng.normal_f();
  return W;
}

// Gathers K*K patches of one image plane set into a (Cin*K*K, Ho*Wo) matrix.
void im2col(const float* x, int64_t C, int64_t H, int64_t W, const ConvSpec& s,
            int64_t Ho, int64_t Wo, float* cols) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < s.k; ++ki) {
      for (int64_t kj = 0; kj < s.k; ++kj) {
        float* row = cols + ((c * s.k + ki) * s.k + kj) * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          int64_t ih = oh * s.stride - s.pad + ki;
          if (ih < 0 || ih >= H) {
            std::fill(row + oh * Wo, row + (oh + 1) * Wo, 0.0f);
            continue;
          }
          const float* src = x + (c * H + ih) * W;
          for (int64_t ow = 0; ow < Wo; ++ow) {
            int64_t iw = ow * s.stride - s.pad + kj;
            row[oh * Wo + ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds a (Cin*K*K, Ho*Wo) matrix back into the image.
void col2im(const float* cols, int64_t C, int64_t H, int64_t W, const ConvSpec& s,
            int64_t Ho, int64_t Wo, float* x) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < s.k; ++ki) {
      for (int64_t kj = 0; kj < s.k; ++kj) {
        const float* row = cols + ((c * s.k + ki) * s.k + kj) * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          int64_t ih = oh * s.stride - s.pad + ki;
          if (ih < 0 || ih >= H) continue;
          float* dst = x + (c * H + ih) * W;
          for (int64_t ow = 0; ow < Wo; ++ow) {
            int64_t iw = ow * s.stride - s.pad + kj;
            if (iw >= 0 && iw < W) dst[iw] += row[oh * Wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

Tensor dense_fwd(const Tensor& x, const Tensor& W, const Tensor* b) {
  check_rank(x, 2, "dense");
  int64_t n = x.dim(0), in = x.dim(1), out = W.dim(0);
  if (W.dim(1) != in)
    throw ArgumentError("dense: weight expects " + std::to_string(W.dim(1)) +
                        " inputs, got " + std::to_string(in));
  Tensor y({n, out});
  ConstMatMap X(x.data(), n, in), Wm(W.data(), out, in);
  MatMap Y(y.data(), n, out);
  Y.noalias() = X * Wm.transpose();
  if (b) {
    ConstMatMap B(b->data(), 1, out);
    Y.rowwise() += B.row(0);
  }
  return y;
}

void dense_bwd(const Tensor& x, const Tensor& W, const Tensor& gy, Tensor* gx,
               Tensor* gW, Tensor* gb) {
  int64_t n = x.dim(0), in = x.dim(1), out = W.dim(0);
  ConstMatMap X(x.data(), n, in), Wm(W.data(), out, in), Gy(gy.data(), n, out);
  if (gW) {
    MatMap G(gW->data(), out, in);
    G.noalias() = Gy.transpose() * X;
  }
  if (gb) {
    MatMap G(gb->data(), 1, out);
    G.row(0) = Gy.colwise().sum();
  }
  if (gx) {
    MatMap G(gx->data(), n, in);
    G.noalias() = Gy * Wm;
  }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Tensor conv2d_fwd(const Tensor& x, const Tensor& W, const Tensor* b, const ConvSpec& s) {
  check_rank(x, 4, "conv2d");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  if (C != s.cin) throw ArgumentError("conv2d: channel mismatch");
  int64_t Ho = s.out_size(H), Wo = s.out_size(Wd);
  if (Ho <= 0 || Wo <= 0) throw ArgumentError("conv2d: input too small for kernel");
  Tensor y({N, s.cout, Ho, Wo});
  std::vector<float> cols(static_cast<size_t>(s.cin * s.k * s.k * Ho * Wo));
  ConstMatMap Wm(W.data(), s.cout, s.cin * s.k * s.k);
  for (int64_t i = 0; i < N; ++i) {
    im2col(x.data() + i * C * H * Wd, C, H, Wd, s, Ho, Wo, cols.data());
    ConstMatMap Cm(cols.data(), s.cin * s.k * s.k, Ho * Wo);
    MatMap Y(y.data() + i * s.cout * Ho * Wo, s.cout, Ho * Wo);
    Y.noalias() = Wm * Cm;
    if (b)
      for (int64_t co = 0; co < s.cout; ++co) Y.row(co).array() += (*b)[co];
  }
  return y;
}

void conv2d_bwd(const Tensor& x, const Tensor& W, const Tensor& gy, const ConvSpec& s,
                Tensor* gx, Tensor* gW, Tensor* gb) {
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  int64_t Ho = s.out_size(H), Wo = s.out_size(Wd);
  std::vector<float> cols(static_cast<size_t>(s.cin * s.k * s.k * Ho * Wo));
  ConstMatMap Wm(W.data(), s.cout, s.cin * s.k * s.k);
  if (gx) gx->fill(0.0f);
  if (gW) gW->fill(0.0f);
  if (gb) gb->fill(0.0f);
  for (int64_t i = 0; i < N; ++i) {
    ConstMatMap Gy(gy.data() + i * s.cout * Ho * Wo, s.cout, Ho * Wo);
    if (gW || gb) im2col(x.data() + i * C * H * Wd, C, H, Wd, s, Ho, Wo, cols.data());
    if (gW) {
      ConstMatMap Cm(cols.data(), s.cin * s.k * s.k, Ho * Wo);
      MatMap G(gW->data(), s.cout, s.cin * s.k * s.k);
      G.noalias() += Gy * Cm.transpose();
    }
    if (gb)
      for (int64_t co = 0; co < s.cout; ++co) (*gb)[co] += Gy.row(co).sum();
    if (gx) {
      MatMap Cm(cols.data(), s.cin * s.k * s.k, Ho * Wo);
      Cm.noalias() = Wm.transpose() * Gy;
      col2im(cols.data(), C, H, Wd, s, Ho, Wo, gx->data() + i * C * H * Wd);
    }
  }
}

// ---------------------------------------------------------------------------
// ConvTranspose2d. Weight layout (Cin, Cout*K*K); forward scatters K*K
// patches, which is exactly col2im of W^T x, so the conv helpers are reused
// with the output taking the "image" role.
// ---------------------------------------------------------------------------

Tensor convt2d_fwd(const Tensor& x, const Tensor& W, const Tensor* b, const ConvSpec& s) {
  check_rank(x, 4, "convt2d");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  if (C != s.cin) throw ArgumentError("convt2d: channel mismatch");
  int64_t Ho = s.tout_size(H), Wo = s.tout_size(Wd);
  if (Ho <= 0 || Wo <= 0) throw ArgumentError("convt2d: degenerate output size");
  Tensor y({N, s.cout, Ho, Wo});
  ConvSpec rs;  // role-swapped spec: output plane is the col2im target
  rs.cin = s.cout, rs.cout = s.cin, rs.k = s.k, rs.stride = s.stride, rs.pad = s.pad;
  std::vector<float> cols(static_cast<size_t>(s.cout * s.k * s.k * H * Wd));
  ConstMatMap Wm(W.data(), s.cin, s.cout * s.k * s.k);
  for (int64_t i = 0; i < N; ++i) {
    ConstMatMap X(x.data() + i * C * H * Wd, s.cin, H * Wd);
    MatMap Cm(cols.data(), s.cout * s.k * s.k, H * Wd);
    Cm.noalias() = Wm.transpose() * X;
    float* out = y.data() + i * s.cout * Ho * Wo;
    col2im(cols.data(), s.cout, Ho, Wo, rs, H, Wd, out);
    if (b) {
      MatMap Y(out, s.cout, Ho * Wo);
      for (int64_t co = 0; co < s.cout; ++co) Y.row(co).array() += (*b)[co];
    }
  }
  return y;
}

void convt2d_bwd(const Tensor& x, const Tensor& W, const Tensor& gy, const ConvSpec& s,
                 Tensor* gx, Tensor* gW, Tensor* gb) {
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  int64_t Ho = s.tout_size(H), Wo = s.tout_size(Wd);
  ConvSpec rs;
  rs.cin = s.cout, rs.cout = s.cin, rs.k = s.k, rs.stride = s.stride, rs.pad = s.pad;
  std::vector<float> cols(static_cast<size_t>(s.cout * s.k * s.k * H * Wd));
  ConstMatMap Wm(W.data(), s.cin, s.cout * s.k * s.k);
  if (gx) gx->fill(0.0f);
  if (gW) gW->fill(0.0f);
  if (gb) gb->fill(0.0f);
  for (int64_t i = 0; i < N; ++i) {
    const float* gyp = gy.data() + i * s.cout * Ho * Wo;
    im2col(gyp, s.cout, Ho, Wo, rs, H, Wd, cols.data());
    ConstMatMap Cm(cols.data(), s.cout * s.k * s.k, H * Wd);
    if (gx) {
      MatMap Gx(gx->data() + i * C * H * Wd, s.cin, H * Wd);
      Gx.noalias() = Wm * Cm;
    }
    if (gW) {
      ConstMatMap X(x.data() + i * C * H * Wd, s.cin, H * Wd);
      MatMap G(gW->data(), s.cin, s.cout * s.k * s.k);
      G.noalias() += X * Cm.transpose();
    }
    if (gb) {
      ConstMatMap Gy(gyp, s.cout, Ho * Wo);
      for (int64_t co = 0; co < s.cout; ++co) (*gb)[co] += Gy.row(co).sum();
    }
  }
}

// ---------------------------------------------------------------------------
// Pointwise
// ---------------------------------------------------------------------------

Tensor relu_fwd(const Tensor& x) {
  Tensor y = x;
  for (int64_t i = 0; i < y.numel(); ++i)
    if (y[i] < 0.0f) y[i] = 0.0f;
  return y;
}

Tensor tanh_fwd(const Tensor& x) {
  Tensor y = x;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::tanh(y[i]);
  return y;
}

Tensor global_avg_pool_fwd(const Tensor& x) {
  check_rank(x, 4, "global_avg_pool");
  int64_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({N, C});
  for (int64_t i = 0; i < N * C; ++i) {
    double acc = 0.0;
    const float* p = x.data() + i * hw;
    for (int64_t j = 0; j < hw; ++j) acc += p[j];
    y[i] = static_cast<float>(acc / static_cast<double>(hw));
  }
  return y;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Dense::Dense(int64_t in, int64_t out, bool bias, Rng& rng)
    : W(random_weights({out, in}, in, rng)),
      b({out}),
      gW({out, in}),
      gb({out}),
      has_bias(bias) {}

Tensor Dense::forward(const Tensor& x, bool) {
  x_ = x;
  return dense_fwd(x, W, has_bias ? &b : nullptr);
}

Tensor Dense::backward(const Tensor& gy) {
  Tensor gx({x_.dim(0), x_.dim(1)});
  dense_bwd(x_, W, gy, &gx, &gW, has_bias ? &gb : nullptr);
  return gx;
}

void Dense::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "/weight", &W, &gW});
  if (has_bias) out.push_back({prefix + "/bias", &b, &gb});
}

Conv2d::Conv2d(const ConvSpec& s, Rng& rng)
    : spec(s),
      W(random_weights({s.cout, s.cin * s.k * s.k}, s.cin * s.k * s.k, rng)),
      b({s.cout}),
      gW({s.cout, s.cin * s.k * s.k}),
      gb({s.cout}) {}

Tensor Conv2d::forward(const Tensor& x, bool) {
  x_ = x;
  return conv2d_fwd(x, W, &b, spec);
}

Tensor Conv2d::backward(const Tensor& gy) {
  Tensor gx(x_.shape());
  conv2d_bwd(x_, W, gy, spec, &gx, &gW, &gb);
  return gx;
}

void Conv2d::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "/weight", &W, &gW});
  out.push_back({prefix + "/bias", &b, &gb});
}

ConvTranspose2d::ConvTranspose2d(const ConvSpec& s, Rng& rng)
    : spec(s),
      // effective fan-in per output element of a stride-s transposed conv
      W(random_weights({s.cin, s.cout * s.k * s.k},
                       std::max<int64_t>(1, s.cin * s.k * s.k / (s.stride * s.stride)), rng)),
      b({s.cout}),
      gW({s.cin, s.cout * s.k * s.k}),
      gb({s.cout}) {}

Tensor ConvTranspose2d::forward(const Tensor& x, bool) {
  x_ = x;
  return convt2d_fwd(x, W, &b, spec);
}

Tensor ConvTranspose2d::backward(const Tensor& gy) {
  Tensor gx(x_.shape());
  convt2d_bwd(x_, W, gy, spec, &gx, &gW, &gb);
  return gx;
}

void ConvTranspose2d::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "/weight", &W, &gW});
  out.push_back({prefix + "/bias", &b, &gb});
}

BatchNorm::BatchNorm(int64_t channels, float momentum_, float eps_)
    : gamma(Tensor::full({channels}, 1.0f)),
      beta({channels}),
      ggamma({channels}),
      gbeta({channels}),
      running_mean({channels}),
      running_var(Tensor::full({channels}, 1.0f)),
      momentum(momentum_),
      eps(eps_) {}

Tensor BatchNorm::forward(const Tensor& x, bool train) {
  if (x.ndim() != 2 && x.ndim() != 4)
    throw ArgumentError("batchnorm: expected rank 2 or 4, got " + x.shape_string());
  int64_t C = x.dim(1);
  if (C != gamma.dim(0)) throw ArgumentError("batchnorm: channel mismatch");
  int64_t N = x.dim(0);
  int64_t hw = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
  int64_t count = N * hw;
  in_shape_ = x.shape();
  train_mode_ = train;
  xhat_ = Tensor(x.shape());
  invstd_.assign(static_cast<size_t>(C), 0.0f);
  Tensor y(x.shape());

  auto idx = [&](int64_t n, int64_t c, int64_t j) { return (n * C + c) * hw + j; };

  for (int64_t c = 0; c < C; ++c) {
    float mean, var;
    if (train) {
      double acc = 0.0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t j = 0; j < hw; ++j) acc += x[idx(n, c, j)];
      mean = static_cast<float>(acc / count);
      double vacc = 0.0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t j = 0; j < hw; ++j) {
          double d = x[idx(n, c, j)] - mean;
          vacc += d * d;
        }
      var = static_cast<float>(vacc / count);  // biased, used for normalization
      float unbiased = count > 1 ? static_cast<float>(vacc / (count - 1)) : var;
      running_mean[c] = (1.0f - momentum) * running_mean[c] + momentum * mean;
      running_var[c] = (1.0f - momentum) * running_var[c] + momentum * unbiased;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    float inv = 1.0f / std::sqrt(var + eps);
    invstd_[static_cast<size_t>(c)] = inv;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t j = 0; j < hw; ++j) {
        int64_t i = idx(n, c, j);
        xhat_[i] = (x[i] - mean) * inv;
        y[i] = gamma[c] * xhat_[i] + beta[c];
      }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& gy) {
  int64_t C = gamma.dim(0);
  int64_t N = in_shape_[0];
  int64_t hw = in_shape_.size() == 4 ? in_shape_[2] * in_shape_[3] : 1;
  int64_t count = N * hw;
  Tensor gx(in_shape_);
  auto idx = [&](int64_t n, int64_t c, int64_t j) { return (n * C + c) * hw + j; };

  for (int64_t c = 0; c < C; ++c) {
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t j = 0; j < hw; ++j) {
        int64_t i = idx(n, c, j);
        sum_gy += gy[i];
        sum_gy_xhat += gy[i] * xhat_[i];
      }
    ggamma[c] = static_cast<float>(sum_gy_xhat);
    gbeta[c] = static_cast<float>(sum_gy);
    float inv = invstd_[static_cast<size_t>(c)];
    if (train_mode_) {
      float m = static_cast<float>(count);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t j = 0; j < hw; ++j) {
          int64_t i = idx(n, c, j);
          gx[i] = gamma[c] * inv / m *
                  (m * gy[i] - static_cast<float>(sum_gy) -
                   xhat_[i] * static_cast<float>(sum_gy_xhat));
        }
    } else {
      // running stats are constants in eval mode
      for (int64_t n = 0; n < N; ++n)
        for (int64_t j = 0; j < hw; ++j) {
          int64_t i = idx(n, c, j);
          gx[i] = gamma[c] * inv * gy[i];
        }
    }
  }
  return gx;
}

void BatchNorm::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "/gamma", &gamma, &ggamma});
  out.push_back({prefix + "/beta", &beta, &gbeta});
}

void BatchNorm::state(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "/running_mean", &running_mean, nullptr});
  out.push_back({prefix + "/running_var", &running_var, nullptr});
}

Tensor ReLU::forward(const Tensor& x, bool) {
  x_ = x;
  return relu_fwd(x);
}

Tensor ReLU::backward(const Tensor& gy) {
  Tensor gx = gy;
  for (int64_t i = 0; i < gx.numel(); ++i)
    if (x_[i] <= 0.0f) gx[i] = 0.0f;
  return gx;
}

Tensor Tanh::forward(const Tensor& x, bool) {
  y_ = tanh_fwd(x);
  return y_;
}

Tensor Tanh::backward(const Tensor& gy) {
  Tensor gx = gy;
  for (int64_t i = 0; i < gx.numel(); ++i) gx[i] *= 1.0f - y_[i] * y_[i];
  return gx;
}

Tensor Reshape::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  std::vector<int64_t> shape{x.dim(0)};
  shape.insert(shape.end(), dims_.begin(), dims_.end());
  return x.reshaped(std::move(shape));
}

Tensor Reshape::backward(const Tensor& gy) { return gy.reshaped(in_shape_); }

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  in_shape_ = x.shape();
  return global_avg_pool_fwd(x);
}

Tensor GlobalAvgPool::backward(const Tensor& gy) {
  Tensor gx(in_shape_);
  int64_t hw = in_shape_[2] * in_shape_[3];
  float scale = 1.0f / static_cast<float>(hw);
  for (int64_t i = 0; i < gy.numel(); ++i) {
    float g = gy[i] * scale;
    float* p = gx.data() + i * hw;
    for (int64_t j = 0; j < hw; ++j) p[j] = g;
  }
  return gx;
}

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h, train);
  return h;
}

Tensor Sequential::backward(const Tensor& gy) {
  Tensor g = gy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<ParamRef> Sequential::params() {
  std::vector<ParamRef> out;
  for (size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->params(std::to_string(i) + "_" + layers_[i]->kind(), out);
  return out;
}

std::vector<ParamRef> Sequential::all_tensors() {
  std::vector<ParamRef> out = params();
  for (size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->state(std::to_string(i) + "_" + layers_[i]->kind(), out);
  return out;
}

int64_t param_count(const std::vector<ParamRef>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.value->numel();
  return n;
}

}  // namespace glann::nn
