#pragma once

// Dataset generation and persistence, group-aware splitting, and the
// end-to-end calibrate/evaluate experiment with its coverage metrics.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lercp/conformal.hpp"
#include "lercp/estimation.hpp"
#include "lercp/imaging.hpp"
#include "lercp/roughness.hpp"

namespace lercp {

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";

/// Raised for filesystem problems while generating or loading datasets.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string preset = "desk";  ///< paper | desk | custom
  std::vector<double> sigmas;
  std::vector<double> hursts;
  std::vector<double> xis;
  /// Each original image consumes two fresh edges, so the full-scale set
  /// (eight edges per combination) uses four images per combination.
  int images_per_combination = 2;
  std::vector<double> line_widths{10.0, 15.0};
  std::vector<double> doses;
  ImageGeometry geometry;
  RenderStyle style;
  DetectorOptions detector;
  DenoiseOptions denoiser;
  std::uint64_t root_seed = 20210101;
  std::filesystem::path output_root;
  bool store_images = true;
  int jobs = 1;  ///< worker threads; never affects outputs

  /// 8 x 9 x 35 combinations, 4 images each, 10 doses.
  static DatasetConfig paper();
  /// 2 sigmas x 2 hursts x 4 xis x 2 images x 5 doses = 160 noisy images.
  static DatasetConfig desk();

  std::size_t group_count() const noexcept;
  std::size_t example_count() const noexcept;

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
};

struct ImagePaths {
  std::string clean;
  std::string noisy;
  std::string denoised;
  std::string noise;
};

struct ExampleRecord {
  std::size_t id = 0;
  std::size_t group = 0;  ///< original-image id, shared by all dose variants
  std::size_t sigma_index = 0;
  std::size_t hurst_index = 0;
  std::size_t xi_index = 0;
  std::size_t image_index = 0;
  std::size_t dose_index = 0;
  PalasantzasParams params;
  double dose = 0.0;
  double line_width = 0.0;
  double center_offset = 0.0;
  double left_label = 0.0;  ///< LER of the continuous left edge, nm
  double right_label = 0.0;
  std::uint64_t seed = 0;
  ImagePaths paths;
  // Base-regressor outputs cached at generation time.
  double left_prediction = 0.0;
  double right_prediction = 0.0;
  int failed_rows = 0;
  std::vector<double> features;

  double label(Edge e) const { return e == Edge::left ? left_label : right_label; }
  double prediction(Edge e) const { return e == Edge::left ? left_prediction : right_prediction; }
};

struct DatasetManifest {
  int version = kManifestVersion;
  DatasetConfig config;
  std::vector<ExampleRecord> examples;

  std::size_t group_count() const;
};

/// Seed token shared by the edges and rendering of one original image.
std::uint64_t group_seed(std::uint64_t root, std::size_t si, std::size_t hi, std::size_t xi,
                         std::size_t image);
/// Per-example seed: hash of (root, sigma, hurst, xi, image, dose) indices.
std::uint64_t example_seed(std::uint64_t root, std::size_t si, std::size_t hi, std::size_t xi,
                           std::size_t image, std::size_t dose);

/// Enumerates records (ids, groups, params, seeds) without rendering.
DatasetManifest plan_manifest(const DatasetConfig& config);

/// Everything the base regressor derives from one noisy image.
struct NoisyAnalysis {
  SemImage denoised;
  SemImage noise;
  EdgeDetection detection;
  LerPrediction prediction;
  DifficultyFeatures features;
};

/// Base regressor g plus difficulty features: detect edges on the noisy
/// image, denoise, and summarize the noise image around those edges.
NoisyAnalysis analyze_noisy(const SemImage& noisy, const DatasetConfig& config);

/// The line (edges, width, placement) of one original image.
LineSpec make_line(const DatasetConfig& config, std::size_t si, std::size_t hi, std::size_t xi,
                   std::size_t image);

/// Generates images, labels and cached predictions, writes them under
/// config.output_root (images only when store_images) and writes the
/// manifest last, atomically. Without an output root nothing is written.
DatasetManifest generate_dataset(const DatasetConfig& config);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(std::string_view text);
/// Writes <dir>/manifest.json through a temporary file and rename.
void write_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest);
/// Reads a manifest file; with check_files, every referenced image must exist.
DatasetManifest load_manifest(const std::filesystem::path& path, bool check_files = true);
/// FNV-1a of the serialized manifest, as 16 hex digits.
std::string manifest_hash(const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  /// Correlation lengths whose groups form the calibration + test pool.
  /// Empty selects {10, 20, 30, 40} for the paper preset and the upper half
  /// of the configured xi list otherwise.
  std::vector<double> holdout_xis;
  std::uint64_t seed = 0;
};

struct Splits {
  std::vector<std::size_t> train;  ///< indices into manifest.examples
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> test;
};

std::vector<double> effective_holdout(const DatasetManifest& manifest, const SplitSpec& spec);

/// Whole groups go to one split; pool groups are shuffled by spec.seed and
/// halved (calibration gets the smaller half).
Splits split_dataset(const DatasetManifest& manifest, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Experiments

enum class Method { cp, ncp, cqr_2in, cqr_3in };
std::string to_string(Method m);
Method parse_method(std::string_view name);
inline constexpr Method kAllMethods[] = {Method::cp, Method::ncp, Method::cqr_2in, Method::cqr_3in};

struct ExperimentOptions {
  TrainOptions difficulty{200, 18, 1e-3, 11};
  TrainOptions quantile{200, 18, 1e-3, 13};
  /// Replace gamma by 1 in normalized CP (reduces it to plain CP).
  bool unit_gamma = false;
};

/// Per-edge models trained on the proper training split.
struct EdgeModels {
  std::optional<DifficultyModel> pooled;      ///< feeds NCP and both CQR nets
  std::optional<DifficultyModel> edge_track;  ///< second estimate for cqr-3in
  std::optional<QuantileNet> two_input;
  std::optional<QuantileNet> three_input;
};

struct TrainedModels {
  double alpha = 0.1;
  std::array<EdgeModels, 2> edges;

  const EdgeModels& operator[](Edge e) const { return edges[static_cast<int>(e)]; }
};

/// Trains whatever `methods` need. Throws TrainingError on failure.
TrainedModels train_models(const DatasetManifest& manifest, const std::vector<std::size_t>& train,
                           std::span<const Method> methods, double alpha,
                           const ExperimentOptions& options);

struct CoverageSummary {
  double coverage_pct = 0.0;
  double mean_length = 0.0;
};

/// Inclusive endpoints: lo <= y <= hi counts as covered.
CoverageSummary coverage_and_length(std::span<const PredictionInterval> intervals,
                                    std::span<const double> labels);

struct Breakdown {
  double key = 0.0;  ///< dose or sigma
  std::size_t n = 0;
  double coverage_pct = 0.0;
  double avg_len_nm = 0.0;
};

struct TestPoint {
  std::size_t example = 0;
  double y = 0.0;
  double yhat = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double dose = 0.0;
};

struct EdgeReport {
  Edge edge = Edge::left;
  double coverage_pct = 0.0;
  double avg_len_nm = 0.0;
  std::size_t n_test = 0;
  std::size_t degenerate_count = 0;
  IntervalModel calibration;
  /// Raw quantile-net coverage before conformalization (CQR only).
  std::optional<double> uncalibrated_coverage_pct;
  std::optional<double> uncalibrated_avg_len_nm;
  std::vector<Breakdown> by_dose;
  std::vector<Breakdown> by_sigma;
  std::vector<TestPoint> points;
};

struct EvaluationReport {
  std::string method;
  double alpha = 0.1;
  std::string manifest_hash;
  std::uint64_t split_seed = 0;
  std::uint64_t difficulty_seed = 0;
  std::uint64_t quantile_seed = 0;
  std::size_t n_train = 0;
  std::size_t n_calibration = 0;
  std::array<EdgeReport, 2> edges;

  const EdgeReport& operator[](Edge e) const { return edges[static_cast<int>(e)]; }
};

/// Calibrates on splits.calibration and evaluates on splits.test.
EvaluationReport evaluate_method(const DatasetManifest& manifest, const Splits& splits,
                                 const TrainedModels& models, Method method,
                                 const ExperimentOptions& options);

/// split -> train -> calibrate -> evaluate.
EvaluationReport run_experiment(const DatasetManifest& manifest, const SplitSpec& spec,
                                Method method, double alpha, const ExperimentOptions& options = {});

std::string report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(std::string_view text);
/// method,edge,alpha,coverage_pct,avg_len_nm,n_test,degenerate_count
std::string report_csv_header();
std::string report_csv_rows(const EvaluationReport& report);

}  // namespace lercp
