#pragma once

// Base LER regressor (classical edge detector), difficulty models that
// regress -ln|residual| from noise-image features, and the per-edge
// residual quantile network with its pinball training loop.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lercp/imaging.hpp"

namespace lercp {

/// Raised when a training loop cannot proceed (too little data, divergence).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Edge : int { left = 0, right = 1 };
inline constexpr Edge kEdges[] = {Edge::left, Edge::right};
inline const char* to_string(Edge e) { return e == Edge::left ? "left" : "right"; }

// ---------------------------------------------------------------------------
// Edge detection and LER estimation

struct DetectorOptions {
  double smoothing_sigma_px = 2.0;  ///< horizontal, per row
  /// Rows whose peak gradient is below this fraction of the image's median
  /// peak gradient are flagged as failures and imputed.
  double min_contrast_fraction = 0.25;
};

struct EdgeDetection {
  std::vector<double> left_nm;
  std::vector<double> right_nm;
  int failed_rows = 0;
};

EdgeDetection detect_edges(const SemImage& img, const ImageGeometry& geom,
                           const DetectorOptions& opts = {});

struct LerPrediction {
  double left_ler = 0.0;
  double right_ler = 0.0;
  int failed_rows = 0;

  double operator[](Edge e) const { return e == Edge::left ? left_ler : right_ler; }
};

LerPrediction estimate_ler(const SemImage& img, const ImageGeometry& geom,
                           const DetectorOptions& opts = {});
LerPrediction estimate_ler(const EdgeDetection& detection);

// ---------------------------------------------------------------------------
// Difficulty features

/// Layout of the full feature vector.
enum FeatureIndex : std::size_t {
  kNoiseMean = 0,
  kNoiseStd,
  kNoiseMax,
  kLeftBandMean,
  kLeftBandStd,
  kRightBandMean,
  kRightBandStd,
  kLeftIncrementStd,
  kRightIncrementStd,
  kDoseProxy,
  kBias,
  kFeatureCount
};

struct DifficultyFeatures {
  std::vector<double> values;  ///< kFeatureCount entries
};

std::vector<std::string> feature_names();

/// Features of a noise image given edges detected on the companion image.
DifficultyFeatures difficulty_features(const SemImage& noise, const EdgeDetection& edges,
                                       const ImageGeometry& geom);

/// Two feature views feed the two difficulty-model variants: the pooled
/// view uses every feature, the edge-track view only the edge-local ones.
enum class FeatureView { pooled, edge_track };
std::vector<double> select_view(const DifficultyFeatures& f, FeatureView view);
std::string to_string(FeatureView view);

// ---------------------------------------------------------------------------
// Networks

/// Fully connected layer, weights row-major (out x in).
struct DenseLayer {
  int inputs = 0;
  int outputs = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  DenseLayer() = default;
  DenseLayer(int in, int out) : inputs(in), outputs(out), weights(in * out, 0.0), bias(out, 0.0) {}
};

/// Per-feature affine standardization (x - mean) / scale.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const std::vector<std::vector<double>>& rows);
  std::vector<double> apply(std::span<const double> x) const;
};

struct TrainOptions {
  int epochs = 200;
  int batch_size = 18;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

struct DifficultySample {
  std::vector<double> features;
  double target = 0.0;  ///< -ln(max(|y - yhat|, eps))
};

inline constexpr double kResidualFloor = 1e-6;  ///< nm
inline constexpr double kMaeSmoothing = 1e-8;   ///< sqrt(e^2 + d^2)
inline constexpr int kDifficultyHidden = 16;

/// -ln(max(|y - yhat|, kResidualFloor)).
double difficulty_target(double y, double yhat);

/// phi: standardize -> dense(16) -> ReLU -> dense(1).
struct DifficultyModel {
  Standardizer standardizer;
  DenseLayer hidden;
  DenseLayer output;
  TrainOptions training;
  std::vector<double> loss_curve;  ///< train loss per epoch
  double final_train_mae = 0.0;

  int input_dim() const noexcept { return hidden.inputs; }
  double predict_phi(std::span<const double> features) const;

  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> p);
};

/// Mean smoothed-absolute error of the model on samples. Fills grad (with
/// respect to parameters()) when non-null.
double difficulty_objective(const DifficultyModel& model, std::span<const DifficultySample> samples,
                            std::vector<double>* grad);

DifficultyModel fit_difficulty(std::span<const DifficultySample> train, const TrainOptions& opts);

/// exp(-phi_hat).
double gamma_from_phi(double phi) noexcept;
double predict_gamma(const DifficultyModel& model, std::span<const double> features);

/// Pinball loss rho_eps(y, yhat).
double pinball_loss(double eps, double y, double yhat);

struct QuantileSample {
  std::vector<double> inputs;  ///< inputs[0] is the base prediction yhat
  double y = 0.0;
};

/// Residual quantile network: inputs (yhat, phi_1[, phi_2]), one ReLU hidden
/// layer of 2 x inputs units, two linear outputs (lo, hi), each plus yhat.
struct QuantileNet {
  Standardizer standardizer;
  DenseLayer hidden;
  DenseLayer output;  ///< 2 outputs: row 0 = lo, row 1 = hi
  double alpha = 0.1;
  TrainOptions training;
  std::vector<double> loss_curve;

  QuantileNet() = default;
  /// Zero weights, identity standardization: predicts (yhat, yhat).
  static QuantileNet zero(int inputs, double alpha);

  int input_dim() const noexcept { return hidden.inputs; }
  double lower_level() const noexcept { return 0.5 * alpha; }
  double upper_level() const noexcept { return 1.0 - 0.5 * alpha; }

  /// Unordered head outputs (lo, hi).
  std::pair<double, double> raw(std::span<const double> inputs) const;

  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> p);
};

/// Ensures lo <= hi by swapping.
std::pair<double, double> order_outputs(double lo, double hi) noexcept;

/// Mean of pinball(lower, y, lo) + pinball(upper, y, hi). Fills grad when
/// non-null.
double quantile_objective(const QuantileNet& net, std::span<const QuantileSample> samples,
                          std::vector<double>* grad);

QuantileNet fit_quantile_net(std::span<const QuantileSample> train, double alpha,
                             const TrainOptions& opts);

/// Ordered (lo, hi).
std::pair<double, double> predict_quantiles(const QuantileNet& net, std::span<const double> inputs);

}  // namespace lercp
