#pragma once

#include <memory>
#include <string>
#include <vector>

#include "glann/rng.hpp"
#include "glann/tensor.hpp"

namespace glann::nn {

// ---------------------------------------------------------------------------
// Stateless kernels. These are const-safe building blocks; the Layer classes
// below add activation caching for training, while frozen networks (feature
// extractors, embedders) call the kernels directly and stay thread-safe.
// ---------------------------------------------------------------------------

struct ConvSpec {
  int64_t cin = 0, cout = 0, k = 3, stride = 1, pad = 0;
  int64_t out_size(int64_t in) const { return (in + 2 * pad - k) / stride + 1; }
  int64_t tout_size(int64_t in) const { return (in - 1) * stride - 2 * pad + k; }
};

// x (N,in) @ W(out,in)^T + b -> (N,out)
Tensor dense_fwd(const Tensor& x, const Tensor& W, const Tensor* b);
void dense_bwd(const Tensor& x, const Tensor& W, const Tensor& gy, Tensor* gx,
               Tensor* gW, Tensor* gb);

// x (N,Cin,H,W), W (Cout, Cin*K*K) -> (N,Cout,Ho,Wo)
Tensor conv2d_fwd(const Tensor& x, const Tensor& W, const Tensor* b, const ConvSpec& s);
void conv2d_bwd(const Tensor& x, const Tensor& W, const Tensor& gy, const ConvSpec& s,
                Tensor* gx, Tensor* gW, Tensor* gb);

// Transposed conv: x (N,Cin,H,W), W (Cin, Cout*K*K) -> (N,Cout,Ho,Wo)
Tensor convt2d_fwd(const Tensor& x, const Tensor& W, const Tensor* b, const ConvSpec& s);
void convt2d_bwd(const Tensor& x, const Tensor& W, const Tensor& gy, const ConvSpec& s,
                 Tensor* gx, Tensor* gW, Tensor* gb);

Tensor relu_fwd(const Tensor& x);
Tensor tanh_fwd(const Tensor& x);

// Mean over each (C,H,W) channel plane -> (N,C)
Tensor global_avg_pool_fwd(const Tensor& x);

// ---------------------------------------------------------------------------
// Trainable layers
// ---------------------------------------------------------------------------

struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;  // null for non-trainable state (running stats)
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& gy) = 0;
  virtual void params(const std::string& prefix, std::vector<ParamRef>& out) { (void)prefix, (void)out; }
  virtual void state(const std::string& prefix, std::vector<ParamRef>& out) { (void)prefix, (void)out; }
  virtual std::string kind() const = 0;
};

class Dense : public Layer {
 public:
  Dense(int64_t in, int64_t out, bool bias, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::string kind() const override { return "dense"; }

  Tensor W, b, gW, gb;
  bool has_bias;

 private:
  Tensor x_;
};

class Conv2d : public Layer {
 public:
  Conv2d(const ConvSpec& s, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::string kind() const override { return "conv"; }

  ConvSpec spec;
  Tensor W, b, gW, gb;

 private:
  Tensor x_;
};

class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(const ConvSpec& s, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::string kind() const override { return "convt"; }

  ConvSpec spec;
  Tensor W, b, gW, gb;

 private:
  Tensor x_;
};

// Per-channel batch normalization; accepts (N,C) or (N,C,H,W).
// Training mode normalizes by batch statistics and updates running stats;
// inference mode uses the running stats only.
class BatchNorm : public Layer {
 public:
  explicit BatchNorm(int64_t channels, float momentum = 0.1f, float eps = 1e-5f);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void state(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::string kind() const override { return "bn"; }

  Tensor gamma, beta, ggamma, gbeta;
  Tensor running_mean, running_var;
  float momentum, eps;

 private:
  Tensor xhat_;
  std::vector<float> invstd_;
  std::vector<int64_t> in_shape_;
  bool train_mode_ = false;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "relu"; }

 private:
  Tensor x_;
};

class Tanh : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "tanh"; }

 private:
  Tensor y_;
};

// Reshapes (N, ...) to (N, dims...); batch dimension passes through.
class Reshape : public Layer {
 public:
  explicit Reshape(std::vector<int64_t> dims) : dims_(std::move(dims)) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "reshape"; }

 private:
  std::vector<int64_t> dims_;
  std::vector<int64_t> in_shape_;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "gap"; }

 private:
  std::vector<int64_t> in_shape_;
};

class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  L* add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& gy);
  std::vector<ParamRef> params();         // trainable
  std::vector<ParamRef> all_tensors();    // trainable + running state, for checkpoints
  size_t size() const { return layers_.size(); }
  Layer& layer(size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

int64_t param_count(const std::vector<ParamRef>& params);

}  // namespace glann::nn
