#pragma once

// Split conformal calibration: plain residual scores, difficulty-normalized
// scores and conformalized quantile regression (CQR).
//
// Every calibrator sorts its scores in nonincreasing order (stable) and takes
// the m-th entry, m = floor(alpha * (n + 1)). Validity needs the calibration
// and test examples to be exchangeable; the pipeline approximates this by
// splitting whole groups (all dose variants of one original image) together.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lercp {

class CalibrationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// floor(alpha * (n + 1)); throws CalibrationError when it is below 1.
std::size_t quantile_index(std::size_t n, double alpha);

double residual_score(double y, double yhat);

/// max(lo - y, y - hi). Negative iff y lies strictly inside (lo, hi).
double cqr_score(double y, double lo, double hi);

class CalibrationScores {
 public:
  explicit CalibrationScores(std::vector<double> scores);

  std::size_t size() const noexcept { return sorted_.size(); }
  /// Nonincreasing.
  std::span<const double> sorted() const noexcept { return sorted_; }
  /// m-th largest, 1-indexed.
  double kth_largest(std::size_t m) const;

 private:
  std::vector<double> sorted_;
};

enum class ConformalMethod { plain, normalized, cqr };
std::string to_string(ConformalMethod m);

/// Calibrated interval constructor. The constant is r_m (plain), rho_m
/// (normalized) or eps_m (CQR); the difficulty model or quantile network that
/// produced the scores is held by the caller.
struct IntervalModel {
  ConformalMethod method = ConformalMethod::plain;
  double alpha = 0.1;
  std::size_t n_calib = 0;
  std::size_t m = 0;
  double constant = 0.0;
};

struct PredictionInterval {
  double lo = 0.0;
  double hi = 0.0;
  double center = 0.0;
  bool degenerate = false;  ///< CQR interval collapsed to its midpoint

  double width() const noexcept { return hi - lo; }
  bool contains(double y) const noexcept { return lo <= y && y <= hi; }
};

IntervalModel calibrate_cp(std::span<const double> residuals, double alpha);
PredictionInterval interval_cp(double yhat, const IntervalModel& model);

struct NormalizedPair {
  double residual = 0.0;
  double gamma = 1.0;
};

IntervalModel calibrate_ncp(std::span<const NormalizedPair> pairs, double alpha);
PredictionInterval interval_ncp(double yhat, double gamma, const IntervalModel& model);

struct CqrSample {
  double y = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

IntervalModel calibrate_cqr(std::span<const CqrSample> calib, double alpha);

/// [lo - eps_m, hi + eps_m]; an empty result collapses to the midpoint with
/// `degenerate` set, and increments *degenerate_count when given.
PredictionInterval interval_cqr(double lo, double hi, const IntervalModel& model,
                                std::size_t* degenerate_count = nullptr);

}  // namespace lercp
