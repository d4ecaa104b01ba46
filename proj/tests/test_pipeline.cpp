#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "lercp/pipeline.hpp"

using namespace lercp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("lercp_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

DatasetConfig tiny(const fs::path& out) {
  DatasetConfig c = DatasetConfig::desk();
  c.preset = "custom";
  c.sigmas = {1.0};
  c.hursts = {0.5};
  c.xis = {10, 30};
  c.images_per_combination = 2;
  c.doses = {2, 50};
  c.output_root = out;
  return c;
}

// The desk dataset is generated once and shared by the experiment tests.
const DatasetManifest& desk_manifest() {
  static const DatasetManifest m = [] {
    DatasetConfig c = DatasetConfig::desk();
    c.store_images = false;
    return generate_dataset(c);
  }();
  return m;
}

void check_split_invariants(const DatasetManifest& m, const Splits& s, const std::vector<double>& holdout) {
  std::map<std::size_t, int> group_split;
  std::set<std::size_t> seen;
  const std::vector<const std::vector<std::size_t>*> parts{&s.train, &s.calibration, &s.test};
  for (int k = 0; k < 3; ++k)
    for (std::size_t i : *parts[k]) {
      CHECK(seen.insert(i).second);
      const auto& r = m.examples[i];
      auto [it, inserted] = group_split.emplace(r.group, k);
      CHECK(it->second == k);
      const bool pooled = std::find(holdout.begin(), holdout.end(), r.params.xi) != holdout.end();
      CHECK(pooled == (k != 0));
    }
  CHECK(seen.size() == m.examples.size());
  std::set<std::size_t> cg, tg;
  for (std::size_t i : s.calibration) cg.insert(m.examples[i].group);
  for (std::size_t i : s.test) tg.insert(m.examples[i].group);
  CHECK(cg.size() <= tg.size());
  CHECK(tg.size() - cg.size() <= 1);
}

}  // namespace

TEST_CASE("preset arithmetic") {
  const auto desk = DatasetConfig::desk();
  CHECK(desk.example_count() == 160u);
  CHECK(desk.group_count() == 32u);
  const auto dm = plan_manifest(desk);
  CHECK(dm.examples.size() == 160u);
  CHECK(dm.group_count() == 32u);

  const auto paper = DatasetConfig::paper();
  CHECK(paper.group_count() == 10080u);
  CHECK(paper.example_count() == 100800u);
  const auto pm = plan_manifest(paper);
  CHECK(pm.group_count() == 10080u);
  const auto s = split_dataset(pm, {{}, 0});
  CHECK(s.calibration.size() == 5760u);
  CHECK(s.test.size() == 5760u);
  CHECK(s.train.size() == 100800u - 11520u);
  check_split_invariants(pm, s, {10, 20, 30, 40});
}

TEST_CASE("config validation names the key") {
  auto c = DatasetConfig::desk();
  c.sigmas = {0.8, 0.0};
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("'sigmas'"), std::invalid_argument);
  c = DatasetConfig::desk();
  c.hursts = {1.0};
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("'hursts'"), std::invalid_argument);
  c = DatasetConfig::desk();
  c.jobs = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("'jobs'"), std::invalid_argument);
  c = DatasetConfig::desk();
  c.doses = {};
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("'doses'"), std::invalid_argument);
}

TEST_CASE("seeds are stable and distinct") {
  CHECK(example_seed(1, 0, 0, 0, 0, 0) == example_seed(1, 0, 0, 0, 0, 0));
  std::set<std::uint64_t> seeds;
  for (const auto& r : plan_manifest(DatasetConfig::desk()).examples) seeds.insert(r.seed);
  CHECK(seeds.size() == 160u);
  CHECK(example_seed(1, 0, 0, 0, 0, 0) != example_seed(2, 0, 0, 0, 0, 0));
}

TEST_CASE("dose variants of a group share one split; splits vary with the seed") {
  const auto m = plan_manifest(DatasetConfig::desk());
  const auto holdout = effective_holdout(m, {});
  CHECK(holdout == std::vector<double>{30, 40});
  std::set<std::vector<std::size_t>> calibrations;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = split_dataset(m, {{}, seed});
    check_split_invariants(m, s, holdout);
    calibrations.insert(s.calibration);
    CHECK(split_dataset(m, {{}, seed}).calibration == s.calibration);
  }
  CHECK(calibrations.size() > 40u);
}

TEST_CASE("split errors") {
  const auto m = plan_manifest(DatasetConfig::desk());
  CHECK_THROWS(split_dataset(m, {{25.0}, 0}));
  auto c = DatasetConfig::desk();
  c.images_per_combination = 1;
  c.sigmas = {1.0};
  c.hursts = {0.5};
  const auto one = plan_manifest(c);
  CHECK_THROWS(split_dataset(one, {{40.0}, 0}));  // one pooled group: empty calibration
}

TEST_CASE("generation writes images and manifest; reruns are byte-identical") {
  const auto dir_a = scratch("gen_a"), dir_b = scratch("gen_b");
  auto ca = tiny(dir_a), cb = tiny(dir_b);
  cb.jobs = 3;
  const auto ma = generate_dataset(ca);
  const auto mb = generate_dataset(cb);
  REQUIRE(ma.examples.size() == 8u);
  CHECK(ma.group_count() == 4u);
  CHECK(fs::exists(dir_a / kManifestFile));
  CHECK_FALSE(fs::exists(dir_a / "manifest.json.tmp"));
  CHECK(slurp(dir_a / kManifestFile) == slurp(dir_b / kManifestFile));
  for (const auto& r : ma.examples)
    for (const std::string* f : {&r.paths.clean, &r.paths.noisy, &r.paths.denoised, &r.paths.noise}) {
      REQUIRE_FALSE(f->empty());
      CHECK(slurp(dir_a / *f) == slurp(dir_b / *f));
    }
  // Same directory again.
  const std::string before = slurp(dir_a / kManifestFile);
  const std::string image_before = slurp(dir_a / ma.examples[3].paths.noisy);
  generate_dataset(ca);
  CHECK(slurp(dir_a / kManifestFile) == before);
  CHECK(slurp(dir_a / ma.examples[3].paths.noisy) == image_before);
  CHECK(manifest_hash(ma) == manifest_hash(mb));
  CHECK(manifest_hash(ma).size() == 16u);

  // Labels come from the continuous edges; noisy images decode with their dose kind.
  for (const auto& r : ma.examples) {
    const auto line = make_line(ca, r.sigma_index, r.hurst_index, r.xi_index, r.image_index);
    CHECK(r.left_label == compute_ler(line.left));
    CHECK(r.right_label == compute_ler(line.right));
    CHECK(read_semf(dir_a / r.paths.noisy).kind == ImageKind::noisy);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("manifest round trip and load checks") {
  const auto dir = scratch("roundtrip");
  const auto m = generate_dataset(tiny(dir));
  const std::string first = slurp(dir / kManifestFile);
  const auto loaded = load_manifest(dir / kManifestFile);
  CHECK(manifest_to_json(loaded) == first);
  const auto other = scratch("roundtrip2");
  fs::create_directories(other);
  write_manifest(other, loaded);
  CHECK(slurp(other / kManifestFile) == first);

  CHECK_THROWS_WITH_AS(load_manifest(dir / "absent.json"), doctest::Contains("absent.json"), IoError);
  fs::remove(dir / m.examples[5].paths.noise);
  CHECK_THROWS_AS(load_manifest(dir / kManifestFile), IoError);
  CHECK_NOTHROW(load_manifest(dir / kManifestFile, false));
  CHECK_THROWS(manifest_from_json("{\"manifest_version\": 99}"));
  CHECK_THROWS(manifest_from_json("[1, 2"));
  fs::remove_all(dir);
  fs::remove_all(other);
}

TEST_CASE("a failed regeneration leaves no manifest behind") {
  const auto dir = scratch("partial");
  auto c = tiny(dir);
  generate_dataset(c);
  REQUIRE(fs::exists(dir / kManifestFile));
  // Make one image path unwritable by occupying it with a directory.
  const auto blocker = dir / "images" / "g000002_d01_noise.semf";
  fs::remove(blocker);
  fs::create_directories(blocker);
  CHECK_THROWS_AS(generate_dataset(c), IoError);
  CHECK_FALSE(fs::exists(dir / kManifestFile));
  fs::remove_all(dir);
}

TEST_CASE("coverage_and_length") {
  const std::vector<PredictionInterval> iv{{0, 1, 0.5, false}, {1, 3, 2, false}, {2, 2, 2, false}};
  const std::vector<double> inside{0.5, 2.0, 2.0};
  auto s = coverage_and_length(iv, inside);
  CHECK(s.coverage_pct == 100.0);
  CHECK(s.mean_length == doctest::Approx(1.0));
  const std::vector<double> ends{1.0, 1.0, 2.0};
  CHECK(coverage_and_length(iv, ends).coverage_pct == 100.0);

  // Ten intervals by hand: covered = 1, 2, 4, 5, 7, 10 -> 60 %; widths sum to 15.
  std::vector<PredictionInterval> ten;
  std::vector<double> y;
  const double lo[] = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const double hi[] = {1, 1, 1, 2, 2, 2, 2, 2, 2, 2};
  const double lab[] = {0.0, 1.0, 1.5, 2.0, 0.3, 2.5, 1.7, 0.99, 3.0, 1.0};
  for (int i = 0; i < 10; ++i) {
    ten.push_back({lo[i], hi[i], 0.5 * (lo[i] + hi[i]), false});
    y.push_back(lab[i]);
  }
  s = coverage_and_length(ten, y);
  CHECK(s.coverage_pct == doctest::Approx(60.0));
  CHECK(s.mean_length == doctest::Approx(1.2));

  CHECK_THROWS(coverage_and_length(iv, std::vector<double>{1.0}));
  CHECK_THROWS(coverage_and_length(std::vector<PredictionInterval>{}, std::vector<double>{}));
}

TEST_CASE("method names") {
  for (Method m : kAllMethods) CHECK(parse_method(to_string(m)) == m);
  CHECK(to_string(Method::cqr_2in) == "cqr-2in");
  CHECK_THROWS_AS(parse_method("qr"), std::invalid_argument);
}

TEST_CASE("plain CP on the desk dataset") {
  const auto& m = desk_manifest();
  double cov[2] = {0, 0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = run_experiment(m, {{}, seed}, Method::cp, 0.1);
    for (int e = 0; e < 2; ++e) {
      cov[e] += r.edges[e].coverage_pct / 20.0;
      CHECK(r.edges[e].n_test == 40u);
      CHECK_FALSE(r.edges[e].uncalibrated_coverage_pct.has_value());
      for (const auto& p : r.edges[e].points) CHECK(p.lo <= p.hi);
    }
  }
  // 40 calibration points: the rank argument gives (41 - 4) / 41 = 90.2 %;
  // a 16-group pool leaves several points of split-to-split noise.
  for (double c : cov) {
    CHECK(c > 80.0);
    CHECK(c < 97.5);
  }
}

TEST_CASE("NCP with unit gamma reproduces CP") {
  const auto& m = desk_manifest();
  ExperimentOptions unit;
  unit.unit_gamma = true;
  auto cp = run_experiment(m, {{}, 3}, Method::cp, 0.1);
  auto ncp = run_experiment(m, {{}, 3}, Method::ncp, 0.1, unit);
  std::string rows = report_csv_rows(ncp);
  for (auto at = rows.find("ncp,"); at != std::string::npos; at = rows.find("ncp,", at)) rows.erase(at, 1);
  CHECK(rows == report_csv_rows(cp));
  for (int e = 0; e < 2; ++e) {
    CHECK(ncp.edges[e].coverage_pct == cp.edges[e].coverage_pct);
    CHECK(ncp.edges[e].avg_len_nm == cp.edges[e].avg_len_nm);
    CHECK(ncp.edges[e].calibration.constant == cp.edges[e].calibration.constant);
  }
}

TEST_CASE("every method runs deterministically and reports sane intervals") {
  const auto& m = desk_manifest();
  for (Method method : kAllMethods) {
    INFO(to_string(method));
    const auto a = run_experiment(m, {{}, 1}, method, 0.1);
    const auto b = run_experiment(m, {{}, 1}, method, 0.1);
    CHECK(report_to_json(a) == report_to_json(b));
    const bool cqr = method == Method::cqr_2in || method == Method::cqr_3in;
    for (const auto& e : a.edges) {
      CHECK(e.uncalibrated_coverage_pct.has_value() == cqr);
      CHECK(e.degenerate_count <= e.n_test);
      for (const auto& p : e.points) CHECK(p.lo <= p.hi);
      CHECK(e.points.size() == e.n_test);
    }
    CHECK(report_from_json(report_to_json(a)).edges[1].coverage_pct == a.edges[1].coverage_pct);
    CHECK(report_to_json(report_from_json(report_to_json(a))) == report_to_json(a));
  }
  CHECK_THROWS(run_experiment(m, {{}, 1}, Method::cp, 0.5));
  CHECK_THROWS(run_experiment(m, {{}, 1}, Method::cp, 0.0));
}

TEST_CASE("evaluating a method without its models is an error") {
  const auto& m = desk_manifest();
  const auto splits = split_dataset(m, {{}, 0});
  const Method only_cp[] = {Method::cp};
  const auto models = train_models(m, splits.train, only_cp, 0.1, {});
  CHECK_NOTHROW(evaluate_method(m, splits, models, Method::cp, {}));
  CHECK_THROWS_AS(evaluate_method(m, splits, models, Method::ncp, {}), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_method(m, splits, models, Method::cqr_3in, {}), std::invalid_argument);
}

TEST_CASE("CSV layout") {
  CHECK(report_csv_header() == "method,edge,alpha,coverage_pct,avg_len_nm,n_test,degenerate_count\n");
  EvaluationReport r;
  r.method = "cp";
  r.alpha = 0.1;
  r.edges[0] = {Edge::left, 90.22, 0.135, 5760, 0, {}, {}, {}, {}, {}, {}};
  r.edges[1] = {Edge::right, 89.22, 0.186, 5760, 2, {}, {}, {}, {}, {}, {}};
  CHECK(report_csv_rows(r) ==
        "cp,left,0.1000,90.2200,0.135000,5760,0\n"
        "cp,right,0.1000,89.2200,0.186000,5760,2\n");
}
