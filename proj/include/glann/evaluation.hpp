#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "glann/dataset.hpp"
#include "glann/losses.hpp"
#include "glann/synthesis.hpp"
#include "glann/tensor.hpp"

namespace glann {

// Frozen map from image batches to fixed-width feature rows. Both flavors
// pool a convolutional stack's post-ReLU taps with per-channel global means;
// the stack is either random (fixed projector) or borrowed from a small
// classifier trained once on the target data. The identifier travels with
// every report, since absolute metric values only mean something relative to
// their embedder.
class Embedder {
 public:
  static Embedder random_projection(int64_t channels, uint64_t seed, int levels = 3,
                                    int64_t base_width = 8);
  static Embedder from_extractor(FeatureExtractor fx, std::string id);

  Tensor embed(const Tensor& images) const;  // (n,C,H,W) -> (n,D)
  Tensor embed(const ImageBatch& batch) const { return embed(batch.pixels); }

  int64_t dim() const { return dim_; }
  const std::string& id() const { return id_; }

 private:
  FeatureExtractor fx_;
  std::string id_;
  int64_t dim_ = 0;
};

// Mean softmax cross-entropy over logit rows; grad is with respect to the
// logits.
struct SoftmaxCe {
  double value = 0.0;
  Tensor grad;
};

SoftmaxCe softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

struct ClassifierTrainConfig {
  int64_t classes = 10;
  int64_t epochs = 5;
  int64_t batch = 64;
  float lr = 0.001f;
  uint64_t seed = 0;
};

struct ClassifierResult {
  Embedder embedder;
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
  double train_accuracy = 0.0;
};

// Trains conv(3x3/2) x3 + pool + dense on (data, labels) and freezes the
// conv stack as an embedder.
ClassifierResult train_classifier_embedder(const DatasetHandle& data,
                                           const std::vector<int>& labels,
                                           const ClassifierTrainConfig& cfg);

// First and second moments of a feature matrix.
struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased, symmetrized
  int64_t count = 0;
};

GaussianStats gaussian_stats(const Tensor& features);

// Principal square root of S1*S2 via the similarity transform
// S1*S2 = A (A S2 A) A^{-1} with A = S1^{1/2}: both factorizations are
// symmetric eigendecompositions. Eigenvalues in [-1e-6, 0) clamp to zero;
// anything lower is a domain error.
Eigen::MatrixXd matrix_sqrt_product(const Eigen::MatrixXd& s1, const Eigen::MatrixXd& s2);

// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}), clamped to zero when
// roundoff leaves a tiny negative.
double fid(const GaussianStats& real, const GaussianStats& gen);

// Joint k-means binning of real and generated features (equal counts), with
// the per-bin mass histograms P (real) and Q (generated). Centroids and
// assignments are exposed for inspection; empty bins carry zero mass.
struct PrdHistograms {
  Eigen::VectorXd p, q;
  Eigen::MatrixXd centroids;  // (B, D)
  std::vector<int> assign_real, assign_gen;
};

PrdHistograms prd_histograms(const Tensor& feat_real, const Tensor& feat_gen, int64_t bins,
                             uint64_t seed);

struct PrdCurve {
  std::vector<double> lambda, alpha, beta;
  int64_t bins = 0;
  uint64_t cluster_seed = 0;

  size_t size() const { return lambda.size(); }
};

// alpha(l) = sum_w min(l P(w), Q(w)), beta(l) = sum_w min(P(w), Q(w)/l) over
// the equiangular grid l_i = tan(i pi / (2 (N+1))), i = 1..N (endpoints
// excluded; odd N puts l = 1 exactly mid-grid).
PrdCurve prd_curve(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                   int64_t num_angles = 1001);

// Best weighted harmonic mean over the curve for b = 8 and b = 1/8;
// F_b = (1+b^2) a b / (b^2 a + b), with 0/0 -> 0.
std::pair<double, double> f_beta_summary(const PrdCurve& curve);

struct EvalConfig {
  int64_t bins = 20;
  int64_t angles = 1001;
  uint64_t seed = 0;
  std::string config_hash;
};

struct EvalReport {
  double fid = 0.0;
  PrdCurve curve;
  double f8 = 0.0;
  double f1_8 = 0.0;
  std::string embedder_id;
  int64_t real_count = 0;
  int64_t gen_count = 0;
  std::string config_hash;

  std::string to_text() const;   // key-value block followed by the curve table
  std::string curve_csv() const;  // "lambda,alpha,beta" rows
};

// Core protocol on two equal-size image batches: embed, fit Gaussians, FID,
// PRD histograms and curve, F-scores.
EvalReport evaluate_batches(const Tensor& real_images, const Tensor& gen_images,
                            const Embedder& emb, const EvalConfig& cfg);

// Samples n model images, draws n real images (seeded shuffle), and runs the
// protocol with the default bins/angles.
EvalReport evaluate_model(TrainedModel& model, const DatasetHandle& data, const Embedder& emb,
                          int64_t n, uint64_t seed);

// Raster of the curve on the unit square, recall horizontal and precision
// vertical, with the F8 / F1-8 maximizers marked.
void save_prd_plot(const PrdCurve& curve, const std::string& path, int64_t size = 512);

}  // namespace glann
