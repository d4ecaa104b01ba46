#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "lercp/checkpoint.hpp"
#include "lercp/estimation.hpp"

using namespace lercp;

namespace {

EdgeProfile flat_edge(std::size_t n) {
  EdgeProfile e;
  e.displacements.assign(n, 0.0);
  return e;
}

LineSpec rough_line(const ImageGeometry& g, std::uint64_t seed, double sigma) {
  const PalasantzasParams p{sigma, 0.5, 15.0};
  return {synthesize_edge(p, g.height_px, g.px_h, 2 * seed), synthesize_edge(p, g.height_px, g.px_h, 2 * seed + 1),
          16.0, 12.0};
}

double detection_rms(const EdgeDetection& d, const LineSpec& line) {
  double s = 0.0;
  for (std::size_t r = 0; r < d.left_nm.size(); ++r)
    s += std::pow(d.left_nm[r] - line.left_position(r), 2) + std::pow(d.right_nm[r] - line.right_position(r), 2);
  return std::sqrt(s / (2.0 * d.left_nm.size()));
}

std::vector<DifficultySample> random_difficulty_set(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<DifficultySample> out(n);
  for (auto& s : out) {
    s.features.resize(dim);
    for (double& v : s.features) v = g(rng);
    s.target = 0.5 * s.features[0] - 0.3 * s.features[1] * s.features[1] + 0.2 * g(rng);
  }
  return out;
}

std::vector<QuantileSample> random_quantile_set(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<QuantileSample> out(n);
  for (auto& s : out) {
    s.inputs.resize(dim);
    s.inputs[0] = 2.0 + 2.0 * u(rng);
    for (std::size_t j = 1; j < dim; ++j) s.inputs[j] = u(rng);
    s.y = s.inputs[0] + u(rng);
  }
  return out;
}

// Central differences with h = 1e-6 carry ~1e-10 * |loss| of round-off, so
// gradients below 1e-5 * max(1, |loss|) (dead units) are compared against that floor.
double rel_err(double a, double b, double loss) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5 * std::max(1.0, std::abs(loss))});
}

// Smallest |pre-activation| of the hidden ReLUs over a set of standardized inputs.
template <class Model>
double min_preactivation(const Model& m, const std::vector<std::vector<double>>& xs) {
  double best = 1e300;
  for (const auto& x : xs) {
    const auto z = m.standardizer.apply(x);
    for (int o = 0; o < m.hidden.outputs; ++o) {
      double a = m.hidden.bias[o];
      for (int i = 0; i < m.hidden.inputs; ++i) a += m.hidden.weights[o * m.hidden.inputs + i] * z[i];
      best = std::min(best, std::abs(a));
    }
  }
  return best;
}

}  // namespace

TEST_CASE("detection on a noiseless binary stripe") {
  const ImageGeometry g;
  const LineSpec line{flat_edge(g.height_px), flat_edge(g.height_px), 16.1, 10.0};
  const auto img = render_clean(line, g, RenderStyle::binary(), 1);
  const auto d = detect_edges(img, g);
  REQUIRE(d.left_nm.size() == 1024u);
  CHECK(d.failed_rows == 0);
  for (std::size_t r = 0; r < 1024; ++r) {
    CHECK(std::abs(d.left_nm[r] - line.left_position(r)) <= 0.25);
    CHECK(std::abs(d.right_nm[r] - line.right_position(r)) <= 0.25);
  }
  const auto p = estimate_ler(img, g);
  CHECK(p.left_ler <= 0.05);
  CHECK(p.right_ler <= 0.05);
}

TEST_CASE("a +2 px shift moves detections by exactly 1 nm") {
  const ImageGeometry g;
  for (double center : {15.3, 16.0, 17.75}) {
    auto line = rough_line(g, 4, 0.6);
    line.center_offset = center;
    LineSpec shifted = line;
    shifted.center_offset += 2 * g.px_w;
    const auto a = detect_edges(render_clean(line, g, RenderStyle::binary(), 1), g);
    const auto b = detect_edges(render_clean(shifted, g, RenderStyle::binary(), 1), g);
    for (std::size_t r = 0; r < a.left_nm.size(); ++r) {
      CHECK(b.left_nm[r] - a.left_nm[r] == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(b.right_nm[r] - a.right_nm[r] == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("detection rejects mismatched images") {
  const ImageGeometry g;
  CHECK_THROWS(detect_edges(SemImage(32, 1024, ImageKind::noisy), g));
}

TEST_CASE("high-dose LER estimate of a binary stripe") {
  const ImageGeometry g;
  int within = 0;
  const int n = 20;
  for (int i = 0; i < n; ++i) {
    const auto line = rough_line(g, 40 + i, 1.2);
    const auto noisy = apply_poisson(render_clean(line, g, RenderStyle::binary(), i), 200.0, 77 + i);
    const auto p = estimate_ler(noisy, g);
    const double s = compute_ler(line.left);
    within += std::abs(p.left_ler - s) <= 0.1 * s ? 1 : 0;
  }
  CHECK(within == n);
}

TEST_CASE("detection and LER errors shrink with dose (paired, 100 images)") {
  const ImageGeometry g;
  double rms_lo = 0.0, rms_hi = 0.0, err_lo = 0.0, err_hi = 0.0;
  int paired_rms_wins = 0;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    const auto line = rough_line(g, 300 + i, 0.4 + 0.014 * i);
    const auto clean = render_clean(line, g, RenderStyle{}, 600 + i);
    const auto lo = apply_poisson(clean, 2.0, 3 * i);
    const auto hi = apply_poisson(clean, 200.0, 3 * i + 1);
    const auto dl = detect_edges(lo, g), dh = detect_edges(hi, g);
    const double a = detection_rms(dl, line), b = detection_rms(dh, line);
    rms_lo += a / n;
    rms_hi += b / n;
    paired_rms_wins += b < a ? 1 : 0;
    err_lo += std::abs(estimate_ler(dl).left_ler - compute_ler(line.left)) / n;
    err_hi += std::abs(estimate_ler(dh).left_ler - compute_ler(line.left)) / n;
  }
  CHECK(rms_hi < rms_lo);
  CHECK(paired_rms_wins == n);
  CHECK(err_lo > err_hi);
}

TEST_CASE("difficulty features") {
  const ImageGeometry g;
  const auto line = rough_line(g, 1, 1.0);
  const auto noisy = apply_poisson(render_clean(line, g, RenderStyle{}, 1), 10.0, 1);
  const auto noise = noise_image(noisy, denoise(noisy));
  const auto det = detect_edges(noisy, g);
  const auto f = difficulty_features(noise, det, g);
  REQUIRE(f.values.size() == kFeatureCount);
  CHECK(feature_names().size() == kFeatureCount);
  for (double v : f.values) CHECK(std::isfinite(v));
  CHECK(f.values[kBias] == 1.0);
  CHECK(select_view(f, FeatureView::pooled).size() == kFeatureCount);
  CHECK(select_view(f, FeatureView::edge_track).size() == 7u);
}

TEST_CASE("gamma from phi") {
  CHECK(gamma_from_phi(0.0) == 1.0);
  CHECK(gamma_from_phi(std::log(2.0)) == doctest::Approx(0.5).epsilon(1e-15));
  double prev = gamma_from_phi(-5.0);
  for (double phi = -4.9; phi < 5.0; phi += 0.1) {
    const double g = gamma_from_phi(phi);
    CHECK(g > 0.0);
    CHECK(g < prev);
    prev = g;
  }
  CHECK(difficulty_target(1.0, 1.0) == doctest::Approx(-std::log(kResidualFloor)));
  CHECK(difficulty_target(1.5, 1.0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("pinball loss") {
  CHECK(pinball_loss(0.9, 1.0, 0.0) == doctest::Approx(0.9));
  CHECK(pinball_loss(0.9, 0.0, 1.0) == doctest::Approx(0.1));
  CHECK(pinball_loss(0.05, 2.0, 2.0) == 0.0);
  CHECK_THROWS(pinball_loss(0.0, 1.0, 1.0));
  CHECK_THROWS(pinball_loss(1.0, 1.0, 1.0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 5.0), e(0.01, 0.99);
  for (int i = 0; i < 1000; ++i) {
    const double eps = e(rng), y = u(rng), a = u(rng), b = u(rng);
    CHECK(pinball_loss(eps, y, a) >= 0.0);
    CHECK(pinball_loss(eps, y, 0.5 * (a + b)) <=
          0.5 * (pinball_loss(eps, y, a) + pinball_loss(eps, y, b)) + 1e-12);
  }
}

TEST_CASE("standardizer") {
  const std::vector<std::vector<double>> rows{{1.0, 5.0}, {3.0, 5.0}};
  const auto s = Standardizer::fit(rows);
  const std::vector<double> x{2.0, 7.0};
  const auto z = s.apply(x);
  CHECK(z[0] == doctest::Approx(0.0));
  CHECK(z[1] == doctest::Approx(7.0));  // constant column passes through
}

TEST_CASE("difficulty objective gradient matches finite differences") {
  const auto samples = random_difficulty_set(25, 5, 11);
  std::vector<std::vector<double>> xs;
  for (const auto& s : samples) xs.push_back(s.features);
  auto model = fit_difficulty(samples, {1, 25, 1e-3, 1});
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 0.7);
  int points = 0;
  double worst = 0.0;
  while (points < 100) {
    auto p = model.parameters();
    for (double& v : p) v = g(rng);
    model.set_parameters(p);
    if (min_preactivation(model, xs) < 1e-3) continue;
    std::vector<double> grad;
    const double loss = difficulty_objective(model, samples, &grad);
    REQUIRE(grad.size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double h = 1e-6;
      auto q = p;
      q[i] = p[i] + h;
      model.set_parameters(q);
      const double up = difficulty_objective(model, samples, nullptr);
      q[i] = p[i] - h;
      model.set_parameters(q);
      const double dn = difficulty_objective(model, samples, nullptr);
      worst = std::max(worst, rel_err(grad[i], (up - dn) / (2 * h), loss));
    }
    model.set_parameters(p);
    ++points;
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("quantile objective gradient matches finite differences away from kinks") {
  for (int dim : {2, 3}) {
    const auto samples = random_quantile_set(25, dim, 20 + dim);
    std::vector<std::vector<double>> xs;
    for (const auto& s : samples) xs.push_back(s.inputs);
    auto net = fit_quantile_net(samples, 0.1, {1, 25, 1e-3, 1});
    std::mt19937_64 rng(30 + dim);
    std::normal_distribution<double> g(0.0, 0.7);
    int points = 0;
    double worst = 0.0;
    while (points < 100) {
      auto p = net.parameters();
      for (double& v : p) v = g(rng);
      net.set_parameters(p);
      bool near_kink = min_preactivation(net, xs) < 1e-3;
      for (const auto& s : samples) {
        const auto [lo, hi] = net.raw(s.inputs);
        near_kink |= std::abs(s.y - lo) < 1e-3 || std::abs(s.y - hi) < 1e-3;
      }
      if (near_kink) continue;
      std::vector<double> grad;
      const double loss = quantile_objective(net, samples, &grad);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double h = 1e-6;
        auto q = p;
        q[i] = p[i] + h;
        net.set_parameters(q);
        const double up = quantile_objective(net, samples, nullptr);
        q[i] = p[i] - h;
        net.set_parameters(q);
        const double dn = quantile_objective(net, samples, nullptr);
        worst = std::max(worst, rel_err(grad[i], (up - dn) / (2 * h), loss));
      }
      net.set_parameters(p);
      ++points;
    }
    INFO("inputs " << dim);
  CHECK(worst < 1e-4);
  }
}

TEST_CASE("difficulty model fits a constant target") {
  auto samples = random_difficulty_set(200, 4, 5);
  for (auto& s : samples) s.target = 2.5;
  const auto m = fit_difficulty(samples, {300, 18, 1e-2, 3});
  for (const auto& s : samples) CHECK(m.predict_phi(s.features) == doctest::Approx(2.5).epsilon(1e-3 / 2.5));
  CHECK(m.loss_curve.size() == 300u);
}

TEST_CASE("duplicated training set reaches a similar final MAE") {
  const auto samples = random_difficulty_set(300, 4, 8);
  std::vector<DifficultySample> doubled;
  for (const auto& s : samples) {
    doubled.push_back(s);
    doubled.push_back(s);
  }
  const auto a = fit_difficulty(samples, {200, 18, 1e-3, 4});
  const auto b = fit_difficulty(doubled, {100, 36, 1e-3, 4});
  CHECK(b.final_train_mae == doctest::Approx(a.final_train_mae).epsilon(0.05));
}

TEST_CASE("training is deterministic and validates input") {
  const auto samples = random_difficulty_set(100, 3, 1);
  const auto a = fit_difficulty(samples, {20, 18, 1e-3, 9});
  const auto b = fit_difficulty(samples, {20, 18, 1e-3, 9});
  CHECK(a.parameters() == b.parameters());
  const auto c = fit_difficulty(samples, {20, 18, 1e-3, 10});
  CHECK(a.parameters() != c.parameters());

  CHECK_THROWS_AS(fit_difficulty(random_difficulty_set(9, 3, 1), {}), TrainingError);
  auto bad = samples;
  bad[3].target = std::nan("");
  CHECK_THROWS_AS(fit_difficulty(bad, {}), TrainingError);
  bad = samples;
  bad[3].features[0] = INFINITY;
  CHECK_THROWS_AS(fit_difficulty(bad, {}), TrainingError);
  CHECK(predict_gamma(a, samples[0].features) > 0.0);
}

TEST_CASE("quantile net on uniform noise learns the analytic quantiles") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.0, 4.0);
  std::vector<QuantileSample> train(3000);
  for (auto& s : train) {
    s.inputs = {pos(rng), u(rng)};
    s.y = s.inputs[0] + u(rng);
  }
  const auto net = fit_quantile_net(train, 0.2, {200, 18, 1e-3, 2});
  for (double yhat = 0.2; yhat < 3.9; yhat += 0.25)
    for (double phi : {-0.8, 0.0, 0.8}) {
      const std::vector<double> x{yhat, phi};
      const auto [lo, hi] = predict_quantiles(net, x);
      CHECK(std::abs(lo - (yhat - 0.8)) < 0.1);
      CHECK(std::abs(hi - (yhat + 0.8)) < 0.1);
    }
}

TEST_CASE("quantile net on a zero-error regressor collapses onto yhat") {
  auto train = random_quantile_set(500, 3, 4);
  for (auto& s : train) s.y = s.inputs[0];
  const auto net = fit_quantile_net(train, 0.1, {300, 18, 1e-2, 5});
  double widest = 0.0;
  for (const auto& s : train) {
    const auto [lo, hi] = predict_quantiles(net, s.inputs);
    CHECK(std::abs(lo - s.y) < 1e-2);
    CHECK(std::abs(hi - s.y) < 1e-2);
    widest = std::max(widest, hi - lo);
  }
  CHECK(widest <= 0.05);
}

TEST_CASE("zero network, output ordering and validation") {
  for (int dim : {2, 3}) {
    const auto net = QuantileNet::zero(dim, 0.1);
    std::vector<double> x(dim, 0.3);
    x[0] = 1.234;
    const auto [lo, hi] = predict_quantiles(net, x);
    CHECK(lo == 1.234);
    CHECK(hi == 1.234);
  }
  const auto [a, b] = order_outputs(3.0, 1.0);
  CHECK(a == 1.0);
  CHECK(b == 3.0);

  const auto train = random_quantile_set(50, 2, 1);
  CHECK_THROWS(fit_quantile_net(train, 0.5, {}));
  CHECK_THROWS(fit_quantile_net(train, 0.0, {}));
  CHECK_THROWS_AS(fit_quantile_net(random_quantile_set(5, 2, 1), 0.1, {}), TrainingError);
  CHECK_THROWS(fit_quantile_net(random_quantile_set(50, 1, 1), 0.1, {}));
  CHECK_THROWS(fit_quantile_net(random_quantile_set(50, 4, 1), 0.1, {}));

  // Whatever the raw heads do, predictions are ordered.
  auto net = fit_quantile_net(train, 0.1, {2, 18, 1e-3, 1});
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int t = 0; t < 50; ++t) {
    auto p = net.parameters();
    for (double& v : p) v = g(rng);
    net.set_parameters(p);
    for (const auto& s : train) {
      const auto [lo, hi] = predict_quantiles(net, s.inputs);
      CHECK(lo <= hi);
    }
  }
}

TEST_CASE("checkpoint round trips") {
  const auto ds = random_difficulty_set(60, 4, 2);
  const auto m = fit_difficulty(ds, {10, 18, 1e-3, 1});
  const auto m2 = difficulty_from_checkpoint(to_checkpoint(m));
  CHECK(m2.parameters() == m.parameters());
  CHECK(m2.predict_phi(ds[0].features) == m.predict_phi(ds[0].features));
  CHECK(to_checkpoint(m2) == to_checkpoint(m));

  const auto qs = random_quantile_set(60, 3, 2);
  const auto q = fit_quantile_net(qs, 0.1, {10, 18, 1e-3, 1});
  const auto q2 = quantile_from_checkpoint(to_checkpoint(q));
  CHECK(q2.parameters() == q.parameters());
  CHECK(q2.alpha == q.alpha);
  CHECK(predict_quantiles(q2, qs[0].inputs) == predict_quantiles(q, qs[0].inputs));

  CHECK_THROWS(quantile_from_checkpoint(to_checkpoint(m)));
  CHECK_THROWS(difficulty_from_checkpoint("{\"format\":\"other\"}"));
  CHECK_THROWS(difficulty_from_checkpoint("not json"));
}
