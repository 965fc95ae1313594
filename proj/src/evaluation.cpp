#include "glann/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "glann/errors.hpp"
#include "glann/image_io.hpp"
#include "glann/nn.hpp"
#include "glann/optim.hpp"
#include "glann/rng.hpp"

namespace glann {

namespace {

Eigen::MatrixXd rows_as_double(const Tensor& t) {
  using MapRowsF =
      Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  return MapRowsF(t.data(), t.dim(0), t.dim(1)).cast<double>();
}

void check_feature_matrix(const Tensor& t, const char* what) {
  if (t.ndim() != 2)
    throw ArgumentError(std::string(what) + ": expected a (count, D) feature matrix, got " +
                        t.shape_string());
}

// Symmetric eigendecomposition with the PSD domain check shared by both
// halves of the square-root route. Eigenvalues at the roundoff floor are
// zeroed before the square root: sqrt(eps * ||S||) would otherwise inflate
// pure noise by seven orders of magnitude on rank-deficient covariances.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  if (es.info() != Eigen::Success)
    throw NumericError(std::string(what) + ": eigendecomposition failed");
  Eigen::VectorXd lam = es.eigenvalues();
  double floor = std::max(lam.maxCoeff(), 0.0) * 1e-13;
  for (int64_t i = 0; i < lam.size(); ++i) {
    if (lam(i) < -1e-6)
      throw NumericError(std::string(what) + ": eigenvalue " + std::to_string(lam(i)) +
                         " is negative beyond tolerance; input is not PSD");
    if (lam(i) < floor) lam(i) = 0.0;
  }
  return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

struct KmeansResult {
  Eigen::MatrixXd centroids;
  std::vector<int> assign;
};

// Seeded k-means++ then Lloyd iterations; ties in assignment go to the
// lowest centroid index, empty clusters keep their previous centroid.
// Seeding and Lloyd run on a lexicographically sorted copy of the points, so
// the partition depends only on the point multiset and the seed — swapping
// the real/generated halves of the concatenation must not change the bins.
KmeansResult kmeans(const Eigen::MatrixXd& raw, int64_t k, uint64_t seed) {
  int64_t n = raw.rows(), d = raw.cols();
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    for (int64_t j = 0; j < d; ++j)
      if (raw(a, j) != raw(b, j)) return raw(a, j) < raw(b, j);
    return false;
  });
  Eigen::MatrixXd pts(n, d);
  for (int64_t i = 0; i < n; ++i) pts.row(i) = raw.row(order[static_cast<size_t>(i)]);

  Rng rng(seed);
  Eigen::MatrixXd centroids(k, d);

  centroids.row(0) = pts.row(static_cast<int64_t>(rng.below(static_cast<uint64_t>(n))));
  Eigen::VectorXd d2 = (pts.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int64_t c = 1; c < k; ++c) {
    double total = d2.sum();
    int64_t pick;
    if (total <= 0.0) {
      pick = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
    } else {
      double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int64_t i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    centroids.row(c) = pts.row(pick);
    d2 = d2.cwiseMin((pts.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }

  KmeansResult out;
  out.assign.assign(static_cast<size_t>(n), 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (int64_t i = 0; i < n; ++i) {
      int64_t best = 0;
      double best_d2 = (pts.row(i) - centroids.row(0)).squaredNorm();
      for (int64_t c = 1; c < k; ++c) {
        double dist = (pts.row(i) - centroids.row(c)).squaredNorm();
        if (dist < best_d2) {
          best_d2 = dist;
          best = c;
        }
      }
      out.assign[static_cast<size_t>(i)] = static_cast<int>(best);
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (int64_t i = 0; i < n; ++i) {
      sums.row(out.assign[static_cast<size_t>(i)]) += pts.row(i);
      counts(out.assign[static_cast<size_t>(i)]) += 1.0;
    }
    Eigen::MatrixXd next = centroids;
    for (int64_t c = 0; c < k; ++c)
      if (counts(c) > 0.0) next.row(c) = sums.row(c) / counts(c);
    double shift = (next - centroids).norm();
    double scale = std::max(next.norm(), 1e-12);
    centroids = next;
    if (shift <= 1e-6 * scale) break;
  }
  // final assignment against the returned centroids, in the caller's row order
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    double best_d2 = (raw.row(i) - centroids.row(0)).squaredNorm();
    for (int64_t c = 1; c < k; ++c) {
      double dist = (raw.row(i) - centroids.row(c)).squaredNorm();
      if (dist < best_d2) {
        best_d2 = dist;
        best = c;
      }
    }
    out.assign[static_cast<size_t>(i)] = static_cast<int>(best);
  }
  out.centroids = std::move(centroids);
  return out;
}

}  // namespace

Embedder Embedder::from_extractor(FeatureExtractor fx, std::string id) {
  if (fx.num_taps() < 1 || fx.input_channels() < 1)
    throw ConfigError("embedder needs a convolutional stack with at least one tap");
  Embedder e;
  e.fx_ = std::move(fx);
  e.id_ = std::move(id);
  // D is the total channel count across taps; probe with a single pixel-less
  // forward? cheaper: the taps are the conv layer widths.
  e.dim_ = 0;
  Tensor probe({1, e.fx_.input_channels(), 8, 8});
  for (const Tensor& tap : e.fx_.features(probe)) e.dim_ += tap.dim(1);
  return e;
}

Embedder Embedder::random_projection(int64_t channels, uint64_t seed, int levels,
                                     int64_t base_width) {
  FeatureExtractor fx = FeatureExtractor::random_conv(channels, seed, levels, base_width);
  std::string id = "randproj-c" + std::to_string(channels) + "-l" + std::to_string(levels) +
                   "-w" + std::to_string(base_width) + "-s" + std::to_string(seed);
  return from_extractor(std::move(fx), std::move(id));
}

Tensor Embedder::embed(const Tensor& images) const {
  if (images.ndim() != 4)
    throw ArgumentError("embedder expects (n,C,H,W) images, got " + images.shape_string());
  int64_t n = images.dim(0);
  Tensor out({n, dim_});
  if (n == 0) return out;

  std::vector<Tensor> taps = fx_.features(images);
  int64_t at = 0;
  for (const Tensor& tap : taps) {
    int64_t c = tap.dim(1), hw = tap.dim(2) * tap.dim(3);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const float* base = tap.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) acc += base[j];
        out[i * dim_ + at + ch] = static_cast<float>(acc / static_cast<double>(hw));
      }
    at += c;
  }
  return out;
}

SoftmaxCe softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2)
    throw ArgumentError("cross entropy expects (n, classes) logits, got " +
                        logits.shape_string());
  int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ArgumentError("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " logit rows");

  SoftmaxCe out;
  out.grad = Tensor(logits.shape());
  double total = 0.0;
  float inv_n = 1.0f / static_cast<float>(n);
  for (int64_t i = 0; i < n; ++i) {
    int label = labels[static_cast<size_t>(i)];
    if (label < 0 || label >= k)
      throw ArgumentError("cross entropy: label " + std::to_string(label) +
                          " outside [0," + std::to_string(k) + ")");
    const float* row = logits.data() + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - m);
    double lse = m + std::log(sum);
    total += lse - row[label];
    for (int64_t j = 0; j < k; ++j) {
      double p = std::exp(row[j] - m) / sum;
      out.grad[i * k + j] = static_cast<float>(p) * inv_n;
    }
    out.grad[i * k + label] -= inv_n;
  }
  out.value = total / static_cast<double>(n);
  return out;
}

ClassifierResult train_classifier_embedder(const DatasetHandle& data,
                                           const std::vector<int>& labels,
                                           const ClassifierTrainConfig& cfg) {
  if (static_cast<int64_t>(labels.size()) != data.count())
    throw ArgumentError("classifier: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(data.count()) + " images");
  if (cfg.classes < 2) throw ConfigError("classifier needs at least two classes");
  if (cfg.epochs < 1) throw ConfigError("classifier epochs must be >= 1");
  if (cfg.batch < 1) throw ConfigError("classifier batch must be >= 1");
  if (cfg.lr <= 0) throw ConfigError("classifier learning rate must be > 0");

  Rng rng(derive_seed(cfg.seed, "classifier"));
  nn::Sequential net;
  auto* c1 = net.add<nn::Conv2d>(nn::ConvSpec{data.channels(), 8, 3, 2, 1}, rng);
  net.add<nn::ReLU>();
  auto* c2 = net.add<nn::Conv2d>(nn::ConvSpec{8, 16, 3, 2, 1}, rng);
  net.add<nn::ReLU>();
  auto* c3 = net.add<nn::Conv2d>(nn::ConvSpec{16, 32, 3, 2, 1}, rng);
  net.add<nn::ReLU>();
  net.add<nn::GlobalAvgPool>();
  net.add<nn::Dense>(32, cfg.classes, true, rng);

  Adam adam;
  ClassifierResult out;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (const auto& b : minibatches(data, std::min(cfg.batch, data.count()), epoch)) {
      std::vector<int> batch_labels(b.ids.size());
      for (size_t i = 0; i < b.ids.size(); ++i)
        batch_labels[i] = labels[static_cast<size_t>(b.ids[i])];
      Tensor logits = net.forward(b.pixels, true);
      SoftmaxCe ce = softmax_cross_entropy(logits, batch_labels);
      if (!std::isfinite(ce.value))
        throw NumericError("non-finite classifier loss in epoch " + std::to_string(epoch));
      net.backward(ce.grad);
      adam.step(net.params(), cfg.lr);
      epoch_loss += ce.value;
      ++batches;
    }
    out.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }

  // training accuracy of the finished classifier
  int64_t hits = 0;
  Tensor logits = net.forward(data.images(), false);
  for (int64_t i = 0; i < data.count(); ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < cfg.classes; ++j)
      if (logits[i * cfg.classes + j] > logits[i * cfg.classes + best]) best = j;
    if (static_cast<int>(best) == labels[static_cast<size_t>(i)]) ++hits;
  }
  out.train_accuracy = static_cast<double>(hits) / static_cast<double>(data.count());

  // freeze the conv stack as the embedding function
  std::vector<FeatureExtractor::ConvLayer> frozen;
  for (nn::Conv2d* conv : {c1, c2, c3})
    frozen.push_back(FeatureExtractor::ConvLayer{conv->spec, conv->W, conv->b});
  std::string id = "classifier-c" + std::to_string(data.channels()) + "-k" +
                   std::to_string(cfg.classes) + "-e" + std::to_string(cfg.epochs) + "-s" +
                   std::to_string(cfg.seed);
  out.embedder =
      Embedder::from_extractor(FeatureExtractor::from_layers(std::move(frozen), id), id);
  return out;
}

GaussianStats gaussian_stats(const Tensor& features) {
  check_feature_matrix(features, "gaussian_stats");
  int64_t n = features.dim(0);
  if (n < 2)
    throw ArgumentError("gaussian_stats needs at least two rows, got " + std::to_string(n));
  Eigen::MatrixXd x = rows_as_double(features);
  GaussianStats s;
  s.count = n;
  s.mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  s.cov = (0.5 * (s.cov + s.cov.transpose())).eval();
  return s;
}

Eigen::MatrixXd matrix_sqrt_product(const Eigen::MatrixXd& s1, const Eigen::MatrixXd& s2) {
  if (s1.rows() != s1.cols() || s2.rows() != s2.cols() || s1.rows() != s2.rows())
    throw ArgumentError("matrix_sqrt_product expects square matrices of equal size");
  if ((s1 - s1.transpose()).cwiseAbs().maxCoeff() > 1e-8 ||
      (s2 - s2.transpose()).cwiseAbs().maxCoeff() > 1e-8)
    throw ArgumentError("matrix_sqrt_product expects symmetric inputs");

  Eigen::MatrixXd a = psd_sqrt(0.5 * (s1 + s1.transpose()), "matrix_sqrt_product: S1");

  Eigen::MatrixXd inner = a * (0.5 * (s2 + s2.transpose())) * a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::MatrixXd inner_sqrt = psd_sqrt(inner, "matrix_sqrt_product: S1*S2");

  // pseudo-inverse of A on its numerical range
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  Eigen::VectorXd lam = es.eigenvalues();
  double tol = std::max(lam.cwiseAbs().maxCoeff(), 1.0) * 1e-12;
  Eigen::VectorXd inv = lam;
  for (int64_t i = 0; i < inv.size(); ++i) inv(i) = lam(i) > tol ? 1.0 / lam(i) : 0.0;
  Eigen::MatrixXd a_pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();

  return a * inner_sqrt * a_pinv;
}

double fid(const GaussianStats& real, const GaussianStats& gen) {
  if (real.mean.size() != gen.mean.size())
    throw ArgumentError("fid: dimension mismatch " + std::to_string(real.mean.size()) +
                        " vs " + std::to_string(gen.mean.size()));
  double mean_term = (real.mean - gen.mean).squaredNorm();
  double trace_term =
      real.cov.trace() + gen.cov.trace() - 2.0 * matrix_sqrt_product(real.cov, gen.cov).trace();
  double value = mean_term + trace_term;
  if (value < 0.0) {
    if (value < -1e-6)
      throw NumericError("fid came out negative beyond tolerance: " + std::to_string(value));
    value = 0.0;
  }
  return value;
}

PrdHistograms prd_histograms(const Tensor& feat_real, const Tensor& feat_gen, int64_t bins,
                             uint64_t seed) {
  check_feature_matrix(feat_real, "prd_histograms real");
  check_feature_matrix(feat_gen, "prd_histograms generated");
  int64_t n = feat_real.dim(0);
  if (feat_gen.dim(0) != n)
    throw ArgumentError("prd_histograms needs equal counts, got " + std::to_string(n) +
                        " real vs " + std::to_string(feat_gen.dim(0)) + " generated");
  if (n < 1) throw ArgumentError("prd_histograms: empty feature sets");
  if (feat_gen.dim(1) != feat_real.dim(1))
    throw ArgumentError("prd_histograms: feature width mismatch");
  if (bins < 2) throw ArgumentError("prd_histograms needs at least 2 bins");

  Eigen::MatrixXd pts(2 * n, feat_real.dim(1));
  pts.topRows(n) = rows_as_double(feat_real);
  pts.bottomRows(n) = rows_as_double(feat_gen);

  KmeansResult km = kmeans(pts, bins, derive_seed(seed, "prd-kmeans"));

  PrdHistograms out;
  out.p = Eigen::VectorXd::Zero(bins);
  out.q = Eigen::VectorXd::Zero(bins);
  out.centroids = std::move(km.centroids);
  out.assign_real.assign(km.assign.begin(), km.assign.begin() + n);
  out.assign_gen.assign(km.assign.begin() + n, km.assign.end());
  for (int a : out.assign_real) out.p(a) += 1.0;
  for (int a : out.assign_gen) out.q(a) += 1.0;
  out.p /= static_cast<double>(n);
  out.q /= static_cast<double>(n);
  return out;
}

PrdCurve prd_curve(const Eigen::VectorXd& p, const Eigen::VectorXd& q, int64_t num_angles) {
  if (p.size() != q.size())
    throw ArgumentError("prd_curve: histogram sizes differ");
  if (num_angles < 2) throw ArgumentError("prd_curve needs at least 2 angles");
  for (const Eigen::VectorXd* h : {&p, &q}) {
    if (h->minCoeff() < -1e-12)
      throw ArgumentError("prd_curve: negative histogram mass");
    if (std::abs(h->sum() - 1.0) > 1e-6)
      throw ArgumentError("prd_curve: histogram sums to " + std::to_string(h->sum()) +
                          ", expected 1");
  }

  PrdCurve curve;
  curve.bins = p.size();
  curve.lambda.reserve(static_cast<size_t>(num_angles));
  curve.alpha.reserve(static_cast<size_t>(num_angles));
  curve.beta.reserve(static_cast<size_t>(num_angles));
  for (int64_t i = 1; i <= num_angles; ++i) {
    double theta = M_PI * static_cast<double>(i) / (2.0 * static_cast<double>(num_angles + 1));
    double lam = std::tan(theta);
    double a = 0.0, b = 0.0;
    for (int64_t w = 0; w < p.size(); ++w) {
      a += std::min(lam * p(w), q(w));
      b += std::min(p(w), q(w) / lam);
    }
    curve.lambda.push_back(lam);
    curve.alpha.push_back(std::clamp(a, 0.0, 1.0));
    curve.beta.push_back(std::clamp(b, 0.0, 1.0));
  }
  return curve;
}

std::pair<double, double> f_beta_summary(const PrdCurve& curve) {
  if (curve.size() == 0) throw ArgumentError("f_beta_summary: empty curve");
  auto best = [&](double b) {
    double b2 = b * b, top = 0.0;
    for (size_t i = 0; i < curve.size(); ++i) {
      double a = curve.alpha[i], r = curve.beta[i];
      double denom = b2 * a + r;
      double f = denom > 0.0 ? (1.0 + b2) * a * r / denom : 0.0;
      top = std::max(top, f);
    }
    return top;
  };
  return {best(8.0), best(0.125)};
}

EvalReport evaluate_batches(const Tensor& real_images, const Tensor& gen_images,
                            const Embedder& emb, const EvalConfig& cfg) {
  if (real_images.ndim() != 4 || gen_images.ndim() != 4)
    throw ArgumentError("evaluate_batches expects (n,C,H,W) image batches");
  if (real_images.dim(0) != gen_images.dim(0))
    throw ArgumentError("evaluate_batches needs equal counts, got " +
                        std::to_string(real_images.dim(0)) + " real vs " +
                        std::to_string(gen_images.dim(0)) + " generated");

  Tensor feat_real = emb.embed(real_images);
  Tensor feat_gen = emb.embed(gen_images);

  EvalReport report;
  report.fid = fid(gaussian_stats(feat_real), gaussian_stats(feat_gen));
  PrdHistograms h = prd_histograms(feat_real, feat_gen, cfg.bins, cfg.seed);
  report.curve = prd_curve(h.p, h.q, cfg.angles);
  report.curve.cluster_seed = cfg.seed;
  std::tie(report.f8, report.f1_8) = f_beta_summary(report.curve);
  report.embedder_id = emb.id();
  report.real_count = real_images.dim(0);
  report.gen_count = gen_images.dim(0);
  report.config_hash = cfg.config_hash;
  return report;
}

EvalReport evaluate_model(TrainedModel& model, const DatasetHandle& data, const Embedder& emb,
                          int64_t n, uint64_t seed) {
  if (n < 2) throw ArgumentError("evaluation needs at least 2 samples");
  if (n > data.count())
    throw ArgumentError("evaluation wants " + std::to_string(n) + " real images, dataset has " +
                        std::to_string(data.count()));

  std::vector<int64_t> ids(static_cast<size_t>(data.count()));
  for (int64_t i = 0; i < data.count(); ++i) ids[static_cast<size_t>(i)] = i;
  Rng rng(derive_seed(seed, "eval-real"));
  rng.shuffle(ids);
  ids.resize(static_cast<size_t>(n));

  ImageBatch real = data.batch(ids);
  ImageBatch gen = sample_images(model, n, derive_seed(seed, "eval-gen"));

  EvalConfig cfg;
  cfg.seed = seed;
  return evaluate_batches(real.pixels, gen.pixels, emb, cfg);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(10);
  os << "fid: " << fid << "\n";
  os << "f8: " << f8 << "\n";
  os << "f1_8: " << f1_8 << "\n";
  os << "embedder: " << embedder_id << "\n";
  os << "real_count: " << real_count << "\n";
  os << "gen_count: " << gen_count << "\n";
  os << "bins: " << curve.bins << "\n";
  os << "angles: " << curve.size() << "\n";
  os << "config_hash: " << config_hash << "\n";
  os << "curve:\n";
  for (size_t i = 0; i < curve.size(); ++i)
    os << "  " << curve.lambda[i] << " " << curve.alpha[i] << " " << curve.beta[i] << "\n";
  return os.str();
}

std::string EvalReport::curve_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "lambda,alpha,beta\n";
  for (size_t i = 0; i < curve.size(); ++i)
    os << curve.lambda[i] << "," << curve.alpha[i] << "," << curve.beta[i] << "\n";
  return os.str();
}

void save_prd_plot(const PrdCurve& curve, const std::string& path, int64_t size) {
  if (curve.size() == 0) throw ArgumentError("save_prd_plot: empty curve");
  std::vector<std::pair<double, double>> pts;  // (recall, precision)
  pts.reserve(curve.size());
  for (size_t i = 0; i < curve.size(); ++i) pts.emplace_back(curve.beta[i], curve.alpha[i]);

  auto argbest = [&](double b) {
    double b2 = b * b, top = -1.0;
    size_t at = 0;
    for (size_t i = 0; i < curve.size(); ++i) {
      double denom = b2 * curve.alpha[i] + curve.beta[i];
      double f = denom > 0.0 ? (1.0 + b2) * curve.alpha[i] * curve.beta[i] / denom : 0.0;
      if (f > top) {
        top = f;
        at = i;
      }
    }
    return at;
  };
  size_t i8 = argbest(8.0), i18 = argbest(0.125);
  std::vector<std::pair<double, double>> marks = {{curve.beta[i8], curve.alpha[i8]},
                                                  {curve.beta[i18], curve.alpha[i18]}};
  save_unit_square_plot(path, pts, marks, size);
}

}  // namespace glann
