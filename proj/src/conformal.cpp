#include "lercp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace lercp {

std::size_t quantile_index(std::size_t n, double alpha) {
  if (n == 0) throw CalibrationError("calibration set is empty");
  if (!(alpha > 0.0 && alpha < 1.0)) throw CalibrationError("alpha must lie in (0, 1)");
  const double m = std::floor(alpha * (static_cast<double>(n) + 1.0));
  if (m < 1.0) throw CalibrationError("calibration set too small for requested miscoverage");
  return static_cast<std::size_t>(m);
}

double residual_score(double y, double yhat) { return std::abs(y - yhat); }

double cqr_score(double y, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("cqr_score: lo > hi");
  return std::max(lo - y, y - hi);
}

CalibrationScores::CalibrationScores(std::vector<double> scores) : sorted_(std::move(scores)) {
  for (double s : sorted_)
    if (!std::isfinite(s)) throw CalibrationError("non-finite calibration score");
  std::stable_sort(sorted_.begin(), sorted_.end(), std::greater<>());
}

double CalibrationScores::kth_largest(std::size_t m) const {
  if (m < 1 || m > sorted_.size()) throw CalibrationError("quantile index out of range");
  return sorted_[m - 1];
}

std::string to_string(ConformalMethod m) {
  switch (m) {
    case ConformalMethod::plain: return "cp";
    case ConformalMethod::normalized: return "ncp";
    case ConformalMethod::cqr: return "cqr";
  }
  return "unknown";
}

namespace {

IntervalModel calibrate(ConformalMethod method, std::vector<double> scores, double alpha) {
  const std::size_t n = scores.size();
  const std::size_t m = quantile_index(n, alpha);
  const CalibrationScores sorted(std::move(scores));
  return {method, alpha, n, m, sorted.kth_largest(m)};
}

}  // namespace

IntervalModel calibrate_cp(std::span<const double> residuals, double alpha) {
  for (double r : residuals)
    if (r < 0.0) throw CalibrationError("residual scores must be nonnegative");
  return calibrate(ConformalMethod::plain, {residuals.begin(), residuals.end()}, alpha);
}

PredictionInterval interval_cp(double yhat, const IntervalModel& model) {
  if (model.method != ConformalMethod::plain)
    throw std::invalid_argument("interval_cp: model is not plain CP");
  return {yhat - model.constant, yhat + model.constant, yhat, false};
}

IntervalModel calibrate_ncp(std::span<const NormalizedPair> pairs, double alpha) {
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (!(p.gamma > 0.0)) throw CalibrationError("normalizer gamma must be positive");
    if (p.residual < 0.0) throw CalibrationError("residual scores must be nonnegative");
    scores.push_back(p.residual / p.gamma);
  }
  return calibrate(ConformalMethod::normalized, std::move(scores), alpha);
}

PredictionInterval interval_ncp(double yhat, double gamma, const IntervalModel& model) {
  if (model.method != ConformalMethod::normalized)
    throw std::invalid_argument("interval_ncp: model is not normalized CP");
  if (!(gamma > 0.0)) throw std::invalid_argument("interval_ncp: gamma must be positive");
  const double half = model.constant * gamma;
  return {yhat - half, yhat + half, yhat, false};
}

IntervalModel calibrate_cqr(std::span<const CqrSample> calib, double alpha) {
  std::vector<double> scores;
  scores.reserve(calib.size());
  for (const auto& c : calib) scores.push_back(cqr_score(c.y, c.lo, c.hi));
  return calibrate(ConformalMethod::cqr, std::move(scores), alpha);
}

PredictionInterval interval_cqr(double lo, double hi, const IntervalModel& model,
                                std::size_t* degenerate_count) {
  if (model.method != ConformalMethod::cqr)
    throw std::invalid_argument("interval_cqr: model is not CQR");
  if (lo > hi) throw std::invalid_argument("interval_cqr: lo > hi");
  const double mid = 0.5 * (lo + hi);
  PredictionInterval out{lo - model.constant, hi + model.constant, mid, false};
  if (out.lo > out.hi) {
    out.lo = out.hi = mid;
    out.degenerate = true;
    if (degenerate_count) ++*degenerate_count;
  }
  return out;
}

}  // namespace lercp
