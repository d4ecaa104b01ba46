#include "lercp/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace lercp {

// ---------------------------------------------------------------------------
// Edge detection

namespace {

std::vector<double> smooth_row(std::span<const float> row, double sigma) {
  const int w = static_cast<int>(row.size());
  std::vector<double> out(row.begin(), row.end());
  if (sigma <= 0.0) return out;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) sum += taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  for (int c = 0; c < w; ++c) {
    double acc = 0.0;
    for (int k = -radius; k <= radius; ++k)
      acc += taps[k + radius] * row[std::clamp(c + k, 0, w - 1)];
    out[c] = acc / sum;
  }
  return out;
}

// Parabolic vertex offset in [-0.5, 0.5] around a peak of |g|.
double parabolic_offset(double gm, double g0, double gp) {
  const double denom = gm - 2.0 * g0 + gp;
  if (!(std::abs(denom) > 1e-15)) return 0.0;
  return std::clamp(0.5 * (gm - gp) / denom, -0.5, 0.5);
}

struct PeakResult {
  double column = 0.0;  // subpixel, in pixel-center units
  double strength = 0.0;
};

// Argmax of sign * g over [lo, hi], refined by a parabola.
PeakResult find_peak(const std::vector<double>& g, int lo, int hi, double sign) {
  int best = lo;
  for (int c = lo; c <= hi; ++c)
    if (sign * g[c] > sign * g[best]) best = c;
  PeakResult p;
  p.strength = sign * g[best];
  p.column = best;
  const int last = static_cast<int>(g.size()) - 2;
  if (best - 1 >= 1 && best + 1 <= last)
    p.column += parabolic_offset(sign * g[best - 1], sign * g[best], sign * g[best + 1]);
  return p;
}

void impute_failures(std::vector<double>& pos, const std::vector<char>& ok) {
  const int n = static_cast<int>(pos.size());
  if (std::none_of(ok.begin(), ok.end(), [](char v) { return v != 0; })) return;
  for (int r = 0; r < n; ++r) {
    if (ok[r]) continue;
    for (int d = 1; d < n; ++d) {
      if (r - d >= 0 && ok[r - d]) { pos[r] = pos[r - d]; break; }
      if (r + d < n && ok[r + d]) { pos[r] = pos[r + d]; break; }
    }
  }
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

EdgeDetection detect_edges(const SemImage& img, const ImageGeometry& geom,
                           const DetectorOptions& opts) {
  if (img.width != geom.width_px || img.height != geom.height_px)
    throw std::invalid_argument("detect_edges: image does not match geometry");
  const int w = img.width;
  const int h = img.height;
  if (w < 5) throw std::invalid_argument("detect_edges: image too narrow");

  // Line location from the row-averaged column profile.
  std::vector<double> profile(w, 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) profile[c] += img.at(r, c);
  const auto [mn, mx] = std::minmax_element(profile.begin(), profile.end());
  const double mid = 0.5 * (*mn + *mx);
  int first = 0, last = w - 1;
  while (first < w - 1 && profile[first] < mid) ++first;
  while (last > 0 && profile[last] < mid) --last;
  const int split = std::clamp((first + last + 1) / 2, 2, w - 3);

  EdgeDetection det;
  det.left_nm.resize(h);
  det.right_nm.resize(h);
  std::vector<double> left_strength(h), right_strength(h);
  std::vector<double> g(w, 0.0);
  for (int r = 0; r < h; ++r) {
    const auto s = smooth_row(img.row(r), opts.smoothing_sigma_px);
    for (int c = 1; c < w - 1; ++c) g[c] = 0.5 * (s[c + 1] - s[c - 1]);
    const auto lp = find_peak(g, 1, split - 1, +1.0);
    const auto rp = find_peak(g, split, w - 2, -1.0);
    det.left_nm[r] = (lp.column + 0.5) * geom.px_w;
    det.right_nm[r] = (rp.column + 0.5) * geom.px_w;
    left_strength[r] = lp.strength;
    right_strength[r] = rp.strength;
  }

  const double lthr = opts.min_contrast_fraction * median_of(left_strength);
  const double rthr = opts.min_contrast_fraction * median_of(right_strength);
  std::vector<char> lok(h), rok(h);
  for (int r = 0; r < h; ++r) {
    lok[r] = left_strength[r] > lthr && left_strength[r] > 0.0;
    rok[r] = right_strength[r] > rthr && right_strength[r] > 0.0;
    det.failed_rows += (lok[r] ? 0 : 1) + (rok[r] ? 0 : 1);
  }
  impute_failures(det.left_nm, lok);
  impute_failures(det.right_nm, rok);
  return det;
}

LerPrediction estimate_ler(const EdgeDetection& detection) {
  return {compute_ler(detection.left_nm), compute_ler(detection.right_nm), detection.failed_rows};
}

LerPrediction estimate_ler(const SemImage& img, const ImageGeometry& geom,
                           const DetectorOptions& opts) {
  return estimate_ler(detect_edges(img, geom, opts));
}

// ---------------------------------------------------------------------------
// Features

std::vector<std::string> feature_names() {
  return {"noise_mean",      "noise_std",        "noise_max",          "left_band_mean",
          "left_band_std",   "right_band_mean",  "right_band_std",     "left_increment_std",
          "right_increment_std", "dose_proxy",   "bias"};
}

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

template <typename Range>
MeanStd mean_std(const Range& values) {
  MeanStd m;
  double n = 0.0;
  for (double v : values) { m.mean += v; n += 1.0; }
  if (n == 0.0) return m;
  m.mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(ss / n);
  return m;
}

MeanStd band_stats(const SemImage& noise, const std::vector<double>& pos_nm, double px_w) {
  constexpr int kBand = 3;
  std::vector<double> values;
  values.reserve(pos_nm.size() * (2 * kBand + 1));
  for (int r = 0; r < noise.height; ++r) {
    const int col = static_cast<int>(std::floor(pos_nm[r] / px_w));
    for (int c = std::max(0, col - kBand); c <= std::min(noise.width - 1, col + kBand); ++c)
      values.push_back(noise.at(r, c));
  }
  return mean_std(values);
}

double increment_std(const std::vector<double>& pos) {
  std::vector<double> inc;
  inc.reserve(pos.size());
  for (std::size_t i = 1; i < pos.size(); ++i) inc.push_back(pos[i] - pos[i - 1]);
  return mean_std(inc).std;
}

}  // namespace

DifficultyFeatures difficulty_features(const SemImage& noise, const EdgeDetection& edges,
                                       const ImageGeometry& geom) {
  if (noise.width != geom.width_px || noise.height != geom.height_px)
    throw std::invalid_argument("difficulty_features: image does not match geometry");
  DifficultyFeatures f;
  f.values.assign(kFeatureCount, 0.0);
  const auto global = mean_std(noise.pixels);
  f.values[kNoiseMean] = global.mean;
  f.values[kNoiseStd] = global.std;
  f.values[kNoiseMax] = noise.pixels.empty()
                            ? 0.0
                            : *std::max_element(noise.pixels.begin(), noise.pixels.end());
  const auto lb = band_stats(noise, edges.left_nm, geom.px_w);
  const auto rb = band_stats(noise, edges.right_nm, geom.px_w);
  f.values[kLeftBandMean] = lb.mean;
  f.values[kLeftBandStd] = lb.std;
  f.values[kRightBandMean] = rb.mean;
  f.values[kRightBandStd] = rb.std;
  f.values[kLeftIncrementStd] = increment_std(edges.left_nm);
  f.values[kRightIncrementStd] = increment_std(edges.right_nm);
  f.values[kDoseProxy] = 1.0 / std::max(global.mean, 1e-6);
  f.values[kBias] = 1.0;
  return f;
}

std::vector<double> select_view(const DifficultyFeatures& f, FeatureView view) {
  if (f.values.size() != kFeatureCount)
    throw std::invalid_argument("difficulty features have the wrong dimension");
  if (view == FeatureView::pooled) return f.values;
  return {f.values[kLeftBandMean],      f.values[kLeftBandStd],
          f.values[kRightBandMean],     f.values[kRightBandStd],
          f.values[kLeftIncrementStd],  f.values[kRightIncrementStd],
          f.values[kBias]};
}

std::string to_string(FeatureView view) {
  return view == FeatureView::pooled ? "pooled" : "edge_track";
}

// ---------------------------------------------------------------------------
// Shared network plumbing

Standardizer Standardizer::fit(const std::vector<std::vector<double>>& rows) {
  Standardizer s;
  if (rows.empty()) return s;
  const std::size_t d = rows.front().size();
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j] / n;
  std::vector<double> var(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) var[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]) / n;
  for (std::size_t j = 0; j < d; ++j) {
    if (var[j] > 1e-24) {
      s.scale[j] = std::sqrt(var[j]);
    } else {
      // Constant column (e.g. the bias feature) passes through unchanged.
      s.mean[j] = 0.0;
      s.scale[j] = 1.0;
    }
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> x) const {
  if (x.size() != mean.size()) throw std::invalid_argument("standardizer: dimension mismatch");
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
  return out;
}

namespace {

void xavier_init(DenseLayer& layer, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / (layer.inputs + layer.outputs));
  std::uniform_real_distribution<double> u(-a, a);
  for (double& w : layer.weights) w = u(rng);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

std::size_t layer_size(const DenseLayer& l) { return l.weights.size() + l.bias.size(); }

void append(std::vector<double>& out, const DenseLayer& l) {
  out.insert(out.end(), l.weights.begin(), l.weights.end());
  out.insert(out.end(), l.bias.begin(), l.bias.end());
}

std::size_t load(DenseLayer& l, std::span<const double> p, std::size_t at) {
  std::copy_n(p.begin() + at, l.weights.size(), l.weights.begin());
  at += l.weights.size();
  std::copy_n(p.begin() + at, l.bias.size(), l.bias.begin());
  return at + l.bias.size();
}

// Forward pass through hidden (ReLU) into a linear output layer.
struct Activations {
  std::vector<double> input;   // standardized
  std::vector<double> pre;     // hidden pre-activations
  std::vector<double> hidden;  // ReLU(pre)
  std::vector<double> out;
};

void forward(const DenseLayer& hid, const DenseLayer& out, std::vector<double> x, Activations& a) {
  a.input = std::move(x);
  a.pre.assign(hid.outputs, 0.0);
  a.hidden.assign(hid.outputs, 0.0);
  for (int i = 0; i < hid.outputs; ++i) {
    double z = hid.bias[i];
    for (int j = 0; j < hid.inputs; ++j) z += hid.weights[i * hid.inputs + j] * a.input[j];
    a.pre[i] = z;
    a.hidden[i] = z > 0.0 ? z : 0.0;
  }
  a.out.assign(out.outputs, 0.0);
  for (int k = 0; k < out.outputs; ++k) {
    double z = out.bias[k];
    for (int i = 0; i < out.inputs; ++i) z += out.weights[k * out.inputs + i] * a.hidden[i];
    a.out[k] = z;
  }
}

// Accumulates d(loss)/d(params) given d(loss)/d(out), parameter layout as
// append(hidden) then append(output).
void backward(const DenseLayer& hid, const DenseLayer& out, const Activations& a,
              std::span<const double> dout, std::vector<double>& grad, double weight) {
  const std::size_t hw = hid.weights.size();
  const std::size_t hb = hw + hid.bias.size();
  const std::size_t ow = hb + out.weights.size();
  std::vector<double> dh(hid.outputs, 0.0);
  for (int k = 0; k < out.outputs; ++k) {
    const double d = weight * dout[k];
    if (d == 0.0) continue;
    for (int i = 0; i < out.inputs; ++i) {
      grad[hb + k * out.inputs + i] += d * a.hidden[i];
      dh[i] += d * out.weights[k * out.inputs + i];
    }
    grad[ow + k] += d;
  }
  for (int i = 0; i < hid.outputs; ++i) {
    if (!(a.pre[i] > 0.0)) continue;
    for (int j = 0; j < hid.inputs; ++j) grad[i * hid.inputs + j] += dh[i] * a.input[j];
    grad[hw + i] += dh[i];
  }
}

// Adam with a linearly decaying step size.
class Adam {
 public:
  Adam(std::size_t n, double lr, long long total_steps)
      : m_(n, 0.0), v_(n, 0.0), lr_(lr), total_(std::max(1LL, total_steps)) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t_;
    const double lr = lr_ * std::max(0.0, 1.0 - static_cast<double>(t_ - 1) / total_);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  std::vector<double> m_, v_;
  double lr_;
  long long total_;
  long long t_ = 0;
};

void check_options(const TrainOptions& opts) {
  if (opts.epochs < 1 || opts.batch_size < 1 || !(opts.learning_rate > 0.0))
    throw std::invalid_argument("training options must be positive");
}

// Generic minibatch loop. objective(indices, grad) returns the batch loss.
template <typename Model, typename Objective>
void train_loop(Model& model, std::size_t n, const TrainOptions& opts, Objective&& objective,
                std::vector<double>& loss_curve) {
  std::mt19937_64 rng(opts.seed ^ 0x5bd1e995ULL);
  const std::size_t batches = (n + opts.batch_size - 1) / opts.batch_size;
  Adam adam(model.parameters().size(), opts.learning_rate,
            static_cast<long long>(batches) * opts.epochs);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * opts.batch_size;
      const std::size_t hi = std::min(n, lo + opts.batch_size);
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      std::vector<double> grad;
      const double loss = objective(model, idx, &grad);
      if (!std::isfinite(loss))
        throw TrainingError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch));
      auto p = model.parameters();
      adam.step(p, grad);
      model.set_parameters(p);
    }
    const double epoch_loss = objective(model, std::span<const std::size_t>(order), nullptr);
    if (!std::isfinite(epoch_loss))
      throw TrainingError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
    loss_curve.push_back(epoch_loss);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Difficulty model

double difficulty_target(double y, double yhat) {
  return -std::log(std::max(std::abs(y - yhat), kResidualFloor));
}

double DifficultyModel::predict_phi(std::span<const double> features) const {
  Activations a;
  forward(hidden, output, standardizer.apply(features), a);
  return a.out[0];
}

std::vector<double> DifficultyModel::parameters() const {
  std::vector<double> p;
  p.reserve(layer_size(hidden) + layer_size(output));
  append(p, hidden);
  append(p, output);
  return p;
}

void DifficultyModel::set_parameters(std::span<const double> p) {
  if (p.size() != layer_size(hidden) + layer_size(output))
    throw std::invalid_argument("difficulty model: parameter count mismatch");
  load(output, p, load(hidden, p, 0));
}

namespace {

double difficulty_batch(const DifficultyModel& model, std::span<const DifficultySample> samples,
                        std::span<const std::size_t> idx, std::vector<double>* grad) {
  if (grad) grad->assign(layer_size(model.hidden) + layer_size(model.output), 0.0);
  const double w = 1.0 / static_cast<double>(idx.size());
  double loss = 0.0;
  Activations a;
  for (std::size_t i : idx) {
    const auto& s = samples[i];
    forward(model.hidden, model.output, model.standardizer.apply(s.features), a);
    const double e = a.out[0] - s.target;
    const double smooth = std::sqrt(e * e + kMaeSmoothing * kMaeSmoothing);
    loss += w * smooth;
    if (grad) {
      const double d = e / smooth;
      backward(model.hidden, model.output, a, std::span<const double>(&d, 1), *grad, w);
    }
  }
  return loss;
}

}  // namespace

double difficulty_objective(const DifficultyModel& model, std::span<const DifficultySample> samples,
                            std::vector<double>* grad) {
  if (samples.empty()) throw std::invalid_argument("difficulty_objective: no samples");
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return difficulty_batch(model, samples, idx, grad);
}

DifficultyModel fit_difficulty(std::span<const DifficultySample> train, const TrainOptions& opts) {
  check_options(opts);
  if (train.size() < 10) throw TrainingError("fit_difficulty: need at least 10 training examples");
  const std::size_t d = train.front().features.size();
  std::vector<std::vector<double>> rows;
  rows.reserve(train.size());
  for (const auto& s : train) {
    if (s.features.size() != d)
      throw std::invalid_argument("fit_difficulty: inconsistent feature dimension");
    if (!std::isfinite(s.target)) throw TrainingError("fit_difficulty: non-finite target");
    for (double v : s.features)
      if (!std::isfinite(v)) throw TrainingError("fit_difficulty: non-finite feature");
    rows.push_back(s.features);
  }

  DifficultyModel model;
  model.training = opts;
  model.standardizer = Standardizer::fit(rows);
  model.hidden = DenseLayer(static_cast<int>(d), kDifficultyHidden);
  model.output = DenseLayer(kDifficultyHidden, 1);
  std::mt19937_64 rng(opts.seed);
  xavier_init(model.hidden, rng);
  xavier_init(model.output, rng);

  train_loop(
      model, train.size(), opts,
      [&train](const DifficultyModel& m, std::span<const std::size_t> idx, std::vector<double>* g) {
        return difficulty_batch(m, train, idx, g);
      },
      model.loss_curve);

  double mae = 0.0;
  for (const auto& s : train) mae += std::abs(model.predict_phi(s.features) - s.target);
  model.final_train_mae = mae / static_cast<double>(train.size());
  return model;
}

double gamma_from_phi(double phi) noexcept { return std::exp(-phi); }

double predict_gamma(const DifficultyModel& model, std::span<const double> features) {
  const double phi = model.predict_phi(features);
  const double g = gamma_from_phi(phi);
  // Saturate so the guarantee gamma > 0 survives extreme phi.
  return std::clamp(g, std::numeric_limits<double>::min(), std::numeric_limits<double>::max());
}

// ---------------------------------------------------------------------------
// Quantile network

double pinball_loss(double eps, double y, double yhat) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("pinball_loss: eps must lie in (0, 1)");
  const double diff = y - yhat;
  return diff >= 0.0 ? eps * diff : (1.0 - eps) * (-diff);
}

namespace {

// d pinball / d yhat.
double pinball_slope(double eps, double y, double yhat) {
  return y - yhat >= 0.0 ? -eps : 1.0 - eps;
}

}  // namespace

QuantileNet QuantileNet::zero(int inputs, double alpha) {
  if (inputs < 1) throw std::invalid_argument("QuantileNet: need at least one input");
  QuantileNet net;
  net.alpha = alpha;
  net.standardizer.mean.assign(inputs, 0.0);
  net.standardizer.scale.assign(inputs, 1.0);
  net.hidden = DenseLayer(inputs, 2 * inputs);
  net.output = DenseLayer(2 * inputs, 2);
  return net;
}

std::pair<double, double> QuantileNet::raw(std::span<const double> inputs) const {
  if (inputs.size() != static_cast<std::size_t>(input_dim()))
    throw std::invalid_argument("QuantileNet: input dimension mismatch");
  Activations a;
  forward(hidden, output, standardizer.apply(inputs), a);
  return {a.out[0] + inputs[0], a.out[1] + inputs[0]};
}

std::vector<double> QuantileNet::parameters() const {
  std::vector<double> p;
  p.reserve(layer_size(hidden) + layer_size(output));
  append(p, hidden);
  append(p, output);
  return p;
}

void QuantileNet::set_parameters(std::span<const double> p) {
  if (p.size() != layer_size(hidden) + layer_size(output))
    throw std::invalid_argument("quantile net: parameter count mismatch");
  load(output, p, load(hidden, p, 0));
}

std::pair<double, double> order_outputs(double lo, double hi) noexcept {
  return lo <= hi ? std::make_pair(lo, hi) : std::make_pair(hi, lo);
}

namespace {

double quantile_batch(const QuantileNet& net, std::span<const QuantileSample> samples,
                      std::span<const std::size_t> idx, std::vector<double>* grad) {
  if (grad) grad->assign(layer_size(net.hidden) + layer_size(net.output), 0.0);
  const double w = 1.0 / static_cast<double>(idx.size());
  const double lo_level = net.lower_level();
  const double hi_level = net.upper_level();
  double loss = 0.0;
  Activations a;
  for (std::size_t i : idx) {
    const auto& s = samples[i];
    forward(net.hidden, net.output, net.standardizer.apply(s.inputs), a);
    const double lo = a.out[0] + s.inputs[0];
    const double hi = a.out[1] + s.inputs[0];
    loss += w * (pinball_loss(lo_level, s.y, lo) + pinball_loss(hi_level, s.y, hi));
    if (grad) {
      const double d[2] = {pinball_slope(lo_level, s.y, lo), pinball_slope(hi_level, s.y, hi)};
      backward(net.hidden, net.output, a, d, *grad, w);
    }
  }
  return loss;
}

}  // namespace

double quantile_objective(const QuantileNet& net, std::span<const QuantileSample> samples,
                          std::vector<double>* grad) {
  if (samples.empty()) throw std::invalid_argument("quantile_objective: no samples");
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return quantile_batch(net, samples, idx, grad);
}

QuantileNet fit_quantile_net(std::span<const QuantileSample> train, double alpha,
                             const TrainOptions& opts) {
  check_options(opts);
  if (!(alpha > 0.0 && alpha < 0.5))
    throw std::invalid_argument("fit_quantile_net: alpha must lie in (0, 0.5)");
  if (train.size() < 10) throw TrainingError("fit_quantile_net: need at least 10 training examples");
  const std::size_t d = train.front().inputs.size();
  if (d < 2 || d > 3)
    throw std::invalid_argument("fit_quantile_net: expected 2 or 3 inputs (yhat plus difficulty)");
  std::vector<std::vector<double>> rows;
  for (const auto& s : train) {
    if (s.inputs.size() != d) throw std::invalid_argument("fit_quantile_net: inconsistent inputs");
    if (!std::isfinite(s.y)) throw TrainingError("fit_quantile_net: non-finite label");
    for (double v : s.inputs)
      if (!std::isfinite(v)) throw TrainingError("fit_quantile_net: non-finite input");
    rows.push_back(s.inputs);
  }

  QuantileNet net = QuantileNet::zero(static_cast<int>(d), alpha);
  net.training = opts;
  net.standardizer = Standardizer::fit(rows);
  std::mt19937_64 rng(opts.seed);
  xavier_init(net.hidden, rng);
  xavier_init(net.output, rng);

  train_loop(
      net, train.size(), opts,
      [&train](const QuantileNet& n, std::span<const std::size_t> idx, std::vector<double>* g) {
        return quantile_batch(n, train, idx, g);
      },
      net.loss_curve);
  return net;
}

std::pair<double, double> predict_quantiles(const QuantileNet& net, std::span<const double> inputs) {
  const auto [lo, hi] = net.raw(inputs);
  return order_outputs(lo, hi);
}

}  // namespace lercp
