#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "glann/nn.hpp"
#include "glann/tensor.hpp"

namespace glann {

// Frozen feature stack for perceptual losses. Weights are fixed at
// construction (or loaded) and never touched by any training loop. All
// methods are const and thread-safe; grayscale inputs are replicated to
// three channels when the stack expects three.
class FeatureExtractor {
 public:
  struct ConvLayer {
    nn::ConvSpec spec;
    Tensor W, b;
  };

  // Taps the input itself; turns the perceptual loss into plain L2.
  static FeatureExtractor identity();

  // Small random conv stack (stride-2 conv + ReLU per level), tapped after
  // every ReLU. Deterministic given seed.
  static FeatureExtractor random_conv(int64_t cin, uint64_t seed, int levels = 3,
                                      int64_t base_width = 8);

  // Custom stack; taps after each layer's ReLU.
  static FeatureExtractor from_layers(std::vector<ConvLayer> layers, std::string id);

  // Feature tensors, one per tap, for a (N,C,H,W) batch.
  std::vector<Tensor> features(const Tensor& x) const;

  // Gradient of sum_l <tap_grads[l], f_l(x)> with respect to x.
  Tensor input_grad(const Tensor& x, const std::vector<Tensor>& tap_grads) const;

  int num_taps() const { return layers_.empty() ? 1 : static_cast<int>(layers_.size()); }
  int64_t input_channels() const { return layers_.empty() ? 0 : layers_.front().spec.cin; }
  const std::string& id() const { return id_; }

  void save(const std::string& path) const;
  static FeatureExtractor load(const std::string& path);

 private:
  Tensor adapt_channels(const Tensor& x) const;

  std::vector<ConvLayer> layers_;  // empty = identity extractor
  std::string id_ = "identity";
};

enum class LossKind { L2, LapPyramid, Perceptual, MultiscalePerceptual };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

// Which loss to build and its parameters; fields not read by `kind` are
// ignored. The extractor reference is resolved by make_recon_loss.
struct LossSpec {
  LossKind kind = LossKind::L2;
  int levels = 3;            // laplacian pyramid levels
  int subsample_levels = 2;  // multiscale scales
  double w_pix = 1.0;
  std::vector<double> layer_weights;      // empty = uniform 1/num_taps
  std::string extractor_kind = "randconv";  // identity | randconv | file
  std::string extractor_path;
  uint64_t extractor_seed = 7;
  int extractor_levels = 3;
};

struct LossValueGrad {
  double value = 0.0;
  Tensor grad;  // d value / d a
};

// --- individual losses; `a` is the generated batch, `b` the target ---

double l2_loss(const Tensor& a, const Tensor& b);
LossValueGrad l2_loss_grad(const Tensor& a, const Tensor& b);

double laplacian_pyramid_loss(const Tensor& a, const Tensor& b, int levels);
LossValueGrad laplacian_pyramid_loss_grad(const Tensor& a, const Tensor& b, int levels);

double perceptual_feature_loss(const Tensor& a, const Tensor& b, const FeatureExtractor& fx,
                               double w_pix = 1.0,
                               const std::vector<double>& layer_weights = {});
LossValueGrad perceptual_feature_loss_grad(const Tensor& a, const Tensor& b,
                                           const FeatureExtractor& fx, double w_pix = 1.0,
                                           const std::vector<double>& layer_weights = {});

// Base loss averaged over bilinear half-resolution scales 1, 1/2, ...
double multiscale_loss(const Tensor& a, const Tensor& b, const LossSpec& base,
                       const FeatureExtractor* fx, int subsample_levels);
LossValueGrad multiscale_loss_grad(const Tensor& a, const Tensor& b, const LossSpec& base,
                                   const FeatureExtractor* fx, int subsample_levels);

// Factor-2 bilinear subsample of a (N,C,H,W) batch (2x2 block means).
Tensor downsample2x(const Tensor& x);

// A LossSpec bound to its extractor, ready to evaluate.
class ReconLoss {
 public:
  ReconLoss(LossSpec spec, std::shared_ptr<const FeatureExtractor> fx);

  double value(const Tensor& a, const Tensor& b) const;
  LossValueGrad value_grad(const Tensor& a, const Tensor& b) const;

  const LossSpec& spec() const { return spec_; }
  const FeatureExtractor* extractor() const { return fx_.get(); }

 private:
  LossSpec spec_;
  std::shared_ptr<const FeatureExtractor> fx_;
};

// Builds the extractor demanded by the spec (shared across losses) and binds it.
ReconLoss make_recon_loss(const LossSpec& spec, int64_t image_channels);

}  // namespace glann
