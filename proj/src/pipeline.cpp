#include "lercp/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "lercp/checkpoint.hpp"
#include "lercp/seeding.hpp"

namespace lercp {

using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

DatasetConfig DatasetConfig::paper() {
  DatasetConfig c;
  c.preset = "paper";
  c.sigmas = sigma_grid();
  c.hursts = hurst_grid();
  c.xis = xi_grid();
  c.images_per_combination = 4;
  c.doses = paper_doses();
  return c;
}

DatasetConfig DatasetConfig::desk() {
  DatasetConfig c;
  c.preset = "desk";
  c.sigmas = {0.8, 1.4};
  c.hursts = {0.3, 0.7};
  c.xis = {10, 20, 30, 40};
  c.images_per_combination = 2;
  c.doses = {2, 5, 10, 50, 200};
  return c;
}

std::size_t DatasetConfig::group_count() const noexcept {
  return sigmas.size() * hursts.size() * xis.size() *
         static_cast<std::size_t>(std::max(0, images_per_combination));
}

std::size_t DatasetConfig::example_count() const noexcept { return group_count() * doses.size(); }

void DatasetConfig::validate() const {
  auto require = [](bool ok, const std::string& key, const std::string& why) {
    if (!ok) throw std::invalid_argument("invalid config key '" + key + "': " + why);
  };
  require(!sigmas.empty(), "sigmas", "must not be empty");
  require(!hursts.empty(), "hursts", "must not be empty");
  require(!xis.empty(), "xis", "must not be empty");
  require(!doses.empty(), "doses", "must not be empty");
  require(!line_widths.empty(), "line_widths", "must not be empty");
  for (double s : sigmas) require(s > 0.0 && std::isfinite(s), "sigmas", "values must be > 0");
  for (double h : hursts) require(h > 0.0 && h < 1.0, "hursts", "values must lie in (0, 1)");
  for (double x : xis) require(x > 0.0 && std::isfinite(x), "xis", "values must be > 0");
  for (double d : doses) require(d > 0.0 && std::isfinite(d), "doses", "values must be > 0");
  for (double w : line_widths)
    require(w > 0.0 && w + 2.0 * kBorderMargin < geometry.width_nm(), "line_widths",
            "line plus margins must fit inside the image");
  require(images_per_combination >= 1, "images_per_combination", "must be >= 1");
  require(jobs >= 1, "jobs", "must be >= 1");
  const int h = geometry.height_px;
  require(h >= 2 && (h & (h - 1)) == 0, "height_px", "must be a power of two");
  geometry.validate();
}

// ---------------------------------------------------------------------------
// Planning and generation

namespace {

constexpr std::uint64_t kGroupTag = 0xffffffffffffffffULL;

std::string group_name(std::size_t g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "g%06zu", g);
  return buf;
}

}  // namespace

std::uint64_t group_seed(std::uint64_t root, std::size_t si, std::size_t hi, std::size_t xi,
                         std::size_t image) {
  return derive_seed({root, si, hi, xi, image, kGroupTag});
}

std::uint64_t example_seed(std::uint64_t root, std::size_t si, std::size_t hi, std::size_t xi,
                           std::size_t image, std::size_t dose) {
  return derive_seed({root, si, hi, xi, image, dose});
}

std::size_t DatasetManifest::group_count() const {
  std::set<std::size_t> groups;
  for (const auto& e : examples) groups.insert(e.group);
  return groups.size();
}

DatasetManifest plan_manifest(const DatasetConfig& config) {
  config.validate();
  DatasetManifest m;
  m.config = config;
  m.examples.reserve(config.example_count());
  std::size_t group = 0;
  for (std::size_t si = 0; si < config.sigmas.size(); ++si)
    for (std::size_t hi = 0; hi < config.hursts.size(); ++hi)
      for (std::size_t xi = 0; xi < config.xis.size(); ++xi)
        for (std::size_t im = 0; im < static_cast<std::size_t>(config.images_per_combination);
             ++im, ++group)
          for (std::size_t di = 0; di < config.doses.size(); ++di) {
            ExampleRecord r;
            r.id = m.examples.size();
            r.group = group;
            r.sigma_index = si;
            r.hurst_index = hi;
            r.xi_index = xi;
            r.image_index = im;
            r.dose_index = di;
            r.params = {config.sigmas[si], config.hursts[hi], config.xis[xi]};
            r.dose = config.doses[di];
            r.seed = example_seed(config.root_seed, si, hi, xi, im, di);
            m.examples.push_back(std::move(r));
          }
  return m;
}

LineSpec make_line(const DatasetConfig& config, std::size_t si, std::size_t hi, std::size_t xi,
                   std::size_t image) {
  const auto& g = config.geometry;
  const PalasantzasParams params{config.sigmas[si], config.hursts[hi], config.xis[xi]};
  const std::uint64_t base = group_seed(config.root_seed, si, hi, xi, image);
  // Redraw on the (rare) realizations that cannot be placed inside the image.
  for (std::uint64_t attempt = 0; attempt < 32; ++attempt) {
    LineSpec line;
    const auto n = static_cast<std::size_t>(g.height_px);
    line.left = synthesize_edge(params, n, g.px_h, derive_seed({base, attempt, 1}));
    line.right = synthesize_edge(params, n, g.px_h, derive_seed({base, attempt, 2}));
    std::mt19937_64 rng(derive_seed({base, attempt, 4}));
    std::uniform_int_distribution<std::size_t> pick(0, config.line_widths.size() - 1);
    line.width = config.line_widths[pick(rng)];
    const auto lmin =
        std::min_element(line.left.displacements.begin(), line.left.displacements.end());
    const auto rmax =
        std::max_element(line.right.displacements.begin(), line.right.displacements.end());
    const double lo = kBorderMargin + 0.5 * line.width - *lmin + 0.25;
    const double hi_c = g.width_nm() - kBorderMargin - 0.5 * line.width - *rmax - 0.25;
    if (lo > hi_c) continue;
    std::uniform_real_distribution<double> place(lo, hi_c);
    line.center_offset = place(rng);
    bool crossing = false;
    for (std::size_t r = 0; r < n && !crossing; ++r)
      crossing = !(line.left_position(r) + 4.0 * g.px_w < line.right_position(r));
    if (crossing) continue;
    return line;
  }
  throw std::runtime_error("could not place a line inside the image for group seed " +
                           std::to_string(base));
}

NoisyAnalysis analyze_noisy(const SemImage& noisy, const DatasetConfig& config) {
  NoisyAnalysis a;
  a.denoised = denoise(noisy, config.denoiser);
  a.noise = noise_image(noisy, a.denoised);
  a.detection = detect_edges(noisy, config.geometry, config.detector);
  a.prediction = estimate_ler(a.detection);
  a.features = difficulty_features(a.noise, a.detection, config.geometry);
  return a;
}

namespace {

std::string image_file(std::size_t group, std::size_t dose_index, ImageKind kind) {
  std::string name = "images/" + group_name(group);
  if (kind != ImageKind::clean) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "_d%02zu", dose_index);
    name += buf;
  }
  return name + "_" + to_string(kind) + ".semf";
}

void generate_group(const DatasetConfig& config, std::vector<ExampleRecord>& records,
                    std::size_t first) {
  const ExampleRecord& head = records[first];
  const LineSpec line = make_line(config, head.sigma_index, head.hurst_index, head.xi_index,
                                  head.image_index);
  const std::uint64_t gseed = group_seed(config.root_seed, head.sigma_index, head.hurst_index,
                                         head.xi_index, head.image_index);
  const SemImage clean = render_clean(line, config.geometry, config.style, derive_seed({gseed, 3}));
  const double left_label = compute_ler(line.left);
  const double right_label = compute_ler(line.right);
  const bool store = config.store_images && !config.output_root.empty();
  const std::string clean_path = store ? image_file(head.group, 0, ImageKind::clean) : "";
  if (store) write_semf(config.output_root / clean_path, clean);

  for (std::size_t k = 0; k < config.doses.size(); ++k) {
    ExampleRecord& r = records[first + k];
    const SemImage noisy = apply_poisson(clean, r.dose, r.seed);
    const NoisyAnalysis a = analyze_noisy(noisy, config);
    r.line_width = line.width;
    r.center_offset = line.center_offset;
    r.left_label = left_label;
    r.right_label = right_label;
    r.left_prediction = a.prediction.left_ler;
    r.right_prediction = a.prediction.right_ler;
    r.failed_rows = a.prediction.failed_rows;
    r.features = a.features.values;
    if (store) {
      r.paths.clean = clean_path;
      r.paths.noisy = image_file(r.group, r.dose_index, ImageKind::noisy);
      r.paths.denoised = image_file(r.group, r.dose_index, ImageKind::denoised);
      r.paths.noise = image_file(r.group, r.dose_index, ImageKind::noise);
      write_semf(config.output_root / r.paths.noisy, noisy);
      write_semf(config.output_root / r.paths.denoised, a.denoised);
      write_semf(config.output_root / r.paths.noise, a.noise);
    }
  }
}

}  // namespace

DatasetManifest generate_dataset(const DatasetConfig& config) {
  DatasetManifest manifest = plan_manifest(config);
  const bool write = !config.output_root.empty();
  if (write) {
    std::error_code ec;
    std::filesystem::create_directories(config.store_images ? config.output_root / "images" : config.output_root, ec);
    if (ec) throw IoError("cannot create " + config.output_root.string() + ": " + ec.message());
    // A stale manifest would make a partial regeneration look complete.
    std::filesystem::remove(config.output_root / kManifestFile, ec);
  }

  const std::size_t per_group = config.doses.size();
  const std::size_t groups = config.group_count();
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t g = next++; g < groups; g = next++) {
      try {
        generate_group(config, manifest.examples, g * per_group);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = groups;
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(config.jobs, static_cast<int>(groups)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (error) {
    try {
      std::rethrow_exception(error);
    } catch (const std::filesystem::filesystem_error& e) {
      throw IoError(e.what());
    } catch (const std::runtime_error& e) {
      if (write && std::string_view(e.what()).find("cannot open") != std::string_view::npos)
        throw IoError(e.what());
      throw;
    }
  }
  if (write) write_manifest(config.output_root, manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// Manifest serialization

namespace {

ordered_json style_json(const RenderStyle& s) {
  return {{"background", s.background},
          {"background_jitter", s.background_jitter},
          {"line", s.line},
          {"bloom", s.bloom},
          {"bloom_half_width_px", s.bloom_half_width_px},
          {"texture_amplitude", s.texture_amplitude},
          {"texture_scale_px", s.texture_scale_px},
          {"blur", s.blur},
          {"blur_sigma_major_px", s.blur_sigma_major_px},
          {"blur_sigma_minor_px", s.blur_sigma_minor_px},
          {"blur_angle_deg", s.blur_angle_deg}};
}

RenderStyle style_from(const ordered_json& j) {
  RenderStyle s;
  s.background = j.at("background").get<double>();
  s.background_jitter = j.at("background_jitter").get<double>();
  s.line = j.at("line").get<double>();
  s.bloom = j.at("bloom").get<double>();
  s.bloom_half_width_px = j.at("bloom_half_width_px").get<double>();
  s.texture_amplitude = j.at("texture_amplitude").get<double>();
  s.texture_scale_px = j.at("texture_scale_px").get<double>();
  s.blur = j.at("blur").get<bool>();
  s.blur_sigma_major_px = j.at("blur_sigma_major_px").get<double>();
  s.blur_sigma_minor_px = j.at("blur_sigma_minor_px").get<double>();
  s.blur_angle_deg = j.at("blur_angle_deg").get<double>();
  return s;
}

ordered_json config_json(const DatasetConfig& c) {
  return {{"preset", c.preset},
          {"sigmas", c.sigmas},
          {"hursts", c.hursts},
          {"xis", c.xis},
          {"images_per_combination", c.images_per_combination},
          {"line_widths", c.line_widths},
          {"doses", c.doses},
          {"geometry",
           {{"width_px", c.geometry.width_px},
            {"height_px", c.geometry.height_px},
            {"px_w", c.geometry.px_w},
            {"px_h", c.geometry.px_h}}},
          {"style", style_json(c.style)},
          {"detector",
           {{"smoothing_sigma_px", c.detector.smoothing_sigma_px},
            {"min_contrast_fraction", c.detector.min_contrast_fraction}}},
          {"denoiser", {{"sigma_px", c.denoiser.sigma_px}, {"radius_px", c.denoiser.radius_px}}},
          {"root_seed", c.root_seed},
          {"store_images", c.store_images}};
}

DatasetConfig config_from(const ordered_json& j) {
  DatasetConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.sigmas = j.at("sigmas").get<std::vector<double>>();
  c.hursts = j.at("hursts").get<std::vector<double>>();
  c.xis = j.at("xis").get<std::vector<double>>();
  c.images_per_combination = j.at("images_per_combination").get<int>();
  c.line_widths = j.at("line_widths").get<std::vector<double>>();
  c.doses = j.at("doses").get<std::vector<double>>();
  const auto& g = j.at("geometry");
  c.geometry = {g.at("width_px").get<int>(), g.at("height_px").get<int>(),
                g.at("px_w").get<double>(), g.at("px_h").get<double>()};
  c.style = style_from(j.at("style"));
  const auto& d = j.at("detector");
  c.detector.smoothing_sigma_px = d.at("smoothing_sigma_px").get<double>();
  c.detector.min_contrast_fraction = d.at("min_contrast_fraction").get<double>();
  const auto& n = j.at("denoiser");
  c.denoiser.sigma_px = n.at("sigma_px").get<double>();
  c.denoiser.radius_px = n.at("radius_px").get<int>();
  c.root_seed = j.at("root_seed").get<std::uint64_t>();
  c.store_images = j.at("store_images").get<bool>();
  return c;
}

ordered_json record_json(const ExampleRecord& r) {
  return {{"id", r.id},
          {"group", r.group},
          {"indices",
           {{"sigma", r.sigma_index},
            {"hurst", r.hurst_index},
            {"xi", r.xi_index},
            {"image", r.image_index},
            {"dose", r.dose_index}}},
          {"params", {{"sigma", r.params.sigma}, {"hurst", r.params.hurst}, {"xi", r.params.xi}}},
          {"dose", r.dose},
          {"line_width", r.line_width},
          {"center_offset", r.center_offset},
          {"labels", {{"left", r.left_label}, {"right", r.right_label}}},
          {"seed", r.seed},
          {"files",
           {{"clean", r.paths.clean},
            {"noisy", r.paths.noisy},
            {"denoised", r.paths.denoised},
            {"noise", r.paths.noise}}},
          {"prediction",
           {{"left", r.left_prediction},
            {"right", r.right_prediction},
            {"failed_rows", r.failed_rows}}},
          {"features", r.features}};
}

ExampleRecord record_from(const ordered_json& j) {
  ExampleRecord r;
  r.id = j.at("id").get<std::size_t>();
  r.group = j.at("group").get<std::size_t>();
  const auto& idx = j.at("indices");
  r.sigma_index = idx.at("sigma").get<std::size_t>();
  r.hurst_index = idx.at("hurst").get<std::size_t>();
  r.xi_index = idx.at("xi").get<std::size_t>();
  r.image_index = idx.at("image").get<std::size_t>();
  r.dose_index = idx.at("dose").get<std::size_t>();
  const auto& p = j.at("params");
  r.params = {p.at("sigma").get<double>(), p.at("hurst").get<double>(), p.at("xi").get<double>()};
  r.dose = j.at("dose").get<double>();
  r.line_width = j.at("line_width").get<double>();
  r.center_offset = j.at("center_offset").get<double>();
  r.left_label = j.at("labels").at("left").get<double>();
  r.right_label = j.at("labels").at("right").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  const auto& f = j.at("files");
  r.paths = {f.at("clean").get<std::string>(), f.at("noisy").get<std::string>(),
             f.at("denoised").get<std::string>(), f.at("noise").get<std::string>()};
  const auto& pr = j.at("prediction");
  r.left_prediction = pr.at("left").get<double>();
  r.right_prediction = pr.at("right").get<double>();
  r.failed_rows = pr.at("failed_rows").get<int>();
  r.features = j.at("features").get<std::vector<double>>();
  return r;
}

}  // namespace

std::string manifest_to_json(const DatasetManifest& m) {
  ordered_json j;
  j["manifest_version"] = m.version;
  j["config"] = config_json(m.config);
  j["feature_names"] = feature_names();
  ordered_json examples = ordered_json::array();
  for (const auto& r : m.examples) examples.push_back(record_json(r));
  j["examples"] = std::move(examples);
  return j.dump(1) + "\n";
}

DatasetManifest manifest_from_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw std::runtime_error(std::string("manifest: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.version = j.at("manifest_version").get<int>();
    if (m.version != kManifestVersion)
      throw std::runtime_error("manifest: unsupported manifest_version " +
                               std::to_string(m.version));
    m.config = config_from(j.at("config"));
    for (const auto& e : j.at("examples")) m.examples.push_back(record_from(e));
  } catch (const ordered_json::exception& e) {
    throw std::runtime_error(std::string("manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest) {
  const auto target = dir / kManifestFile;
  const auto tmp = dir / (std::string(kManifestFile) + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f << manifest_to_json(manifest);
    f.flush();
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw IoError("cannot move manifest into place: " + ec.message());
}

DatasetManifest load_manifest(const std::filesystem::path& path, bool check_files) {
  if (!std::filesystem::exists(path)) throw IoError("manifest not found: " + path.string());
  std::string text;
  try {
    text = load_text(path);
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
  DatasetManifest m = manifest_from_json(text);
  std::map<std::size_t, std::uint64_t> group_key;
  for (const auto& r : m.examples) {
    if (!(r.left_label > 0.0) || !(r.right_label > 0.0) || !std::isfinite(r.left_label) ||
        !std::isfinite(r.right_label))
      throw std::runtime_error("manifest: example " + std::to_string(r.id) +
                               " has a non-positive label");
    const std::uint64_t key = derive_seed({r.sigma_index, r.hurst_index, r.xi_index, r.image_index});
    auto [it, inserted] = group_key.emplace(r.group, key);
    if (!inserted && it->second != key)
      throw std::runtime_error("manifest: group " + std::to_string(r.group) +
                               " mixes different original images");
    if (check_files) {
      const auto dir = path.parent_path();
      for (const std::string* f : {&r.paths.clean, &r.paths.noisy, &r.paths.denoised,
                                   &r.paths.noise}) {
        if (!f->empty() && !std::filesystem::exists(dir / *f))
          throw IoError("manifest references a missing file: " + (dir / *f).string());
      }
    }
  }
  return m;
}

std::string manifest_hash(const DatasetManifest& manifest) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(manifest_to_json(manifest))));
  return buf;
}

// ---------------------------------------------------------------------------
// Splitting

std::vector<double> effective_holdout(const DatasetManifest& manifest, const SplitSpec& spec) {
  if (!spec.holdout_xis.empty()) return spec.holdout_xis;
  if (manifest.config.preset == "paper") return {10.0, 20.0, 30.0, 40.0};
  auto xis = manifest.config.xis;
  std::sort(xis.begin(), xis.end());
  xis.erase(std::unique(xis.begin(), xis.end()), xis.end());
  const std::size_t keep = std::max<std::size_t>(1, xis.size() / 2);
  return {xis.end() - static_cast<std::ptrdiff_t>(keep), xis.end()};
}

Splits split_dataset(const DatasetManifest& manifest, const SplitSpec& spec) {
  const auto holdout = effective_holdout(manifest, spec);
  auto in_holdout = [&holdout](double xi) {
    return std::any_of(holdout.begin(), holdout.end(),
                       [xi](double h) { return std::abs(h - xi) < 1e-9; });
  };
  for (double h : holdout) {
    const bool present = std::any_of(manifest.examples.begin(), manifest.examples.end(),
                                     [h](const ExampleRecord& r) { return std::abs(r.params.xi - h) < 1e-9; });
    if (!present)
      throw std::invalid_argument("holdout xi " + std::to_string(h) + " not present in manifest");
  }

  std::vector<std::size_t> pool_groups;
  std::set<std::size_t> seen;
  for (const auto& r : manifest.examples)
    if (in_holdout(r.params.xi) && seen.insert(r.group).second) pool_groups.push_back(r.group);
  std::sort(pool_groups.begin(), pool_groups.end());
  std::mt19937_64 rng(derive_seed({spec.seed, 0x5117ULL}));
  std::shuffle(pool_groups.begin(), pool_groups.end(), rng);
  const std::size_t n_calib = pool_groups.size() / 2;
  const std::set<std::size_t> calib(pool_groups.begin(),
                                    pool_groups.begin() + static_cast<std::ptrdiff_t>(n_calib));

  Splits s;
  for (std::size_t i = 0; i < manifest.examples.size(); ++i) {
    const auto& r = manifest.examples[i];
    if (!in_holdout(r.params.xi))
      s.train.push_back(i);
    else if (calib.count(r.group))
      s.calibration.push_back(i);
    else
      s.test.push_back(i);
  }
  if (s.calibration.empty() || s.test.empty())
    throw std::invalid_argument("split produced an empty calibration or test set");
  return s;
}

// ---------------------------------------------------------------------------
// Experiments

std::string to_string(Method m) {
  switch (m) {
    case Method::cp: return "cp";
    case Method::ncp: return "ncp";
    case Method::cqr_2in: return "cqr-2in";
    case Method::cqr_3in: return "cqr-3in";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : kAllMethods)
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

namespace {

bool needs_difficulty(Method m) { return m != Method::cp; }

DifficultyFeatures features_of(const ExampleRecord& r) { return {r.features}; }

std::vector<double> quantile_inputs(const ExampleRecord& r, Edge e, const EdgeModels& m,
                                    bool three) {
  const auto f = features_of(r);
  std::vector<double> in{r.prediction(e), m.pooled->predict_phi(select_view(f, FeatureView::pooled))};
  if (three) in.push_back(m.edge_track->predict_phi(select_view(f, FeatureView::edge_track)));
  return in;
}

TrainOptions seeded(TrainOptions t, Edge e, std::uint64_t tag) {
  t.seed = derive_seed({t.seed, static_cast<std::uint64_t>(e), tag});
  return t;
}

}  // namespace

TrainedModels train_models(const DatasetManifest& manifest, const std::vector<std::size_t>& train,
                           std::span<const Method> methods, double alpha,
                           const ExperimentOptions& options) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("alpha must lie in (0, 0.5)");
  bool want_pooled = false, want_track = false, want_2 = false, want_3 = false;
  for (Method m : methods) {
    want_pooled |= needs_difficulty(m);
    want_2 |= m == Method::cqr_2in;
    want_3 |= m == Method::cqr_3in;
    want_track |= m == Method::cqr_3in;
  }
  TrainedModels out;
  out.alpha = alpha;
  for (Edge e : kEdges) {
    EdgeModels& em = out.edges[static_cast<int>(e)];
    auto difficulty = [&](FeatureView view, std::uint64_t tag) {
      std::vector<DifficultySample> samples;
      samples.reserve(train.size());
      for (std::size_t i : train) {
        const auto& r = manifest.examples[i];
        samples.push_back({select_view(features_of(r), view), difficulty_target(r.label(e), r.prediction(e))});
      }
      return fit_difficulty(samples, seeded(options.difficulty, e, tag));
    };
    if (want_pooled) em.pooled = difficulty(FeatureView::pooled, 1);
    if (want_track) em.edge_track = difficulty(FeatureView::edge_track, 2);
    auto quantile = [&](bool three, std::uint64_t tag) {
      std::vector<QuantileSample> samples;
      samples.reserve(train.size());
      for (std::size_t i : train) {
        const auto& r = manifest.examples[i];
        samples.push_back({quantile_inputs(r, e, em, three), r.label(e)});
      }
      return fit_quantile_net(samples, alpha, seeded(options.quantile, e, tag));
    };
    if (want_2) em.two_input = quantile(false, 3);
    if (want_3) em.three_input = quantile(true, 4);
  }
  return out;
}

CoverageSummary coverage_and_length(std::span<const PredictionInterval> intervals,
                                    std::span<const double> labels) {
  if (intervals.size() != labels.size())
    throw std::invalid_argument("coverage_and_length: length mismatch");
  if (intervals.empty()) throw std::invalid_argument("coverage_and_length: no intervals");
  std::size_t covered = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    covered += intervals[i].contains(labels[i]) ? 1 : 0;
    total += intervals[i].width();
  }
  const double n = static_cast<double>(intervals.size());
  return {100.0 * static_cast<double>(covered) / n, total / n};
}

namespace {

std::vector<Breakdown> breakdown(const std::vector<double>& keys,
                                 const std::vector<PredictionInterval>& intervals,
                                 const std::vector<double>& labels) {
  std::map<double, std::pair<std::vector<PredictionInterval>, std::vector<double>>> groups;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    groups[keys[i]].first.push_back(intervals[i]);
    groups[keys[i]].second.push_back(labels[i]);
  }
  std::vector<Breakdown> out;
  for (const auto& [key, g] : groups) {
    const auto s = coverage_and_length(g.first, g.second);
    out.push_back({key, g.first.size(), s.coverage_pct, s.mean_length});
  }
  return out;
}

}  // namespace

EvaluationReport evaluate_method(const DatasetManifest& manifest, const Splits& splits,
                                 const TrainedModels& models, Method method,
                                 const ExperimentOptions& options) {
  const double alpha = models.alpha;
  EvaluationReport rep;
  rep.method = to_string(method);
  rep.alpha = alpha;
  rep.difficulty_seed = options.difficulty.seed;
  rep.quantile_seed = options.quantile.seed;
  rep.n_train = splits.train.size();
  rep.n_calibration = splits.calibration.size();

  for (Edge e : kEdges) {
    const EdgeModels& em = models[e];
    auto require = [&](bool ok, const char* what) {
      if (!ok)
        throw std::invalid_argument("method " + to_string(method) + " needs a trained " + what);
    };
    if (needs_difficulty(method) && !(method == Method::ncp && options.unit_gamma))
      require(em.pooled.has_value(), "difficulty model");
    if (method == Method::cqr_2in) require(em.two_input.has_value(), "2-input quantile net");
    if (method == Method::cqr_3in)
      require(em.three_input.has_value() && em.edge_track.has_value(), "3-input quantile net");

    auto gamma_of = [&](const ExampleRecord& r) {
      if (options.unit_gamma) return 1.0;
      return predict_gamma(*em.pooled, select_view(features_of(r), FeatureView::pooled));
    };
    auto raw_quantiles = [&](const ExampleRecord& r) {
      const bool three = method == Method::cqr_3in;
      const QuantileNet& net = three ? *em.three_input : *em.two_input;
      return predict_quantiles(net, quantile_inputs(r, e, em, three));
    };

    IntervalModel cal;
    if (method == Method::cp) {
      std::vector<double> scores;
      for (std::size_t i : splits.calibration) {
        const auto& r = manifest.examples[i];
        scores.push_back(residual_score(r.label(e), r.prediction(e)));
      }
      cal = calibrate_cp(scores, alpha);
    } else if (method == Method::ncp) {
      std::vector<NormalizedPair> pairs;
      for (std::size_t i : splits.calibration) {
        const auto& r = manifest.examples[i];
        pairs.push_back({residual_score(r.label(e), r.prediction(e)), gamma_of(r)});
      }
      cal = calibrate_ncp(pairs, alpha);
    } else {
      std::vector<CqrSample> samples;
      for (std::size_t i : splits.calibration) {
        const auto& r = manifest.examples[i];
        const auto [lo, hi] = raw_quantiles(r);
        samples.push_back({r.label(e), lo, hi});
      }
      cal = calibrate_cqr(samples, alpha);
    }

    EdgeReport er;
    er.edge = e;
    er.calibration = cal;
    std::vector<PredictionInterval> intervals, raw;
    std::vector<double> labels, doses, sigmas;
    for (std::size_t i : splits.test) {
      const auto& r = manifest.examples[i];
      const double yhat = r.prediction(e);
      PredictionInterval iv;
      if (method == Method::cp) {
        iv = interval_cp(yhat, cal);
      } else if (method == Method::ncp) {
        iv = interval_ncp(yhat, gamma_of(r), cal);
      } else {
        const auto [lo, hi] = raw_quantiles(r);
        raw.push_back({lo, hi, yhat, false});
        iv = interval_cqr(lo, hi, cal, &er.degenerate_count);
        iv.center = yhat;
      }
      intervals.push_back(iv);
      labels.push_back(r.label(e));
      doses.push_back(r.dose);
      sigmas.push_back(r.params.sigma);
      er.points.push_back({r.id, r.label(e), yhat, iv.lo, iv.hi, r.dose});
    }
    const auto summary = coverage_and_length(intervals, labels);
    er.coverage_pct = summary.coverage_pct;
    er.avg_len_nm = summary.mean_length;
    er.n_test = intervals.size();
    if (!raw.empty()) {
      const auto uncal = coverage_and_length(raw, labels);
      er.uncalibrated_coverage_pct = uncal.coverage_pct;
      er.uncalibrated_avg_len_nm = uncal.mean_length;
    }
    er.by_dose = breakdown(doses, intervals, labels);
    er.by_sigma = breakdown(sigmas, intervals, labels);
    rep.edges[static_cast<int>(e)] = std::move(er);
  }
  return rep;
}

EvaluationReport run_experiment(const DatasetManifest& manifest, const SplitSpec& spec,
                                Method method, double alpha, const ExperimentOptions& options) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("alpha must lie in (0, 0.5)");
  const Splits splits = split_dataset(manifest, spec);
  const Method methods[] = {method};
  const TrainedModels models = train_models(manifest, splits.train, methods, alpha, options);
  EvaluationReport rep = evaluate_method(manifest, splits, models, method, options);
  rep.manifest_hash = manifest_hash(manifest);
  rep.split_seed = spec.seed;
  return rep;
}

// ---------------------------------------------------------------------------
// Report serialization

namespace {

ordered_json breakdown_json(const std::vector<Breakdown>& b) {
  ordered_json a = ordered_json::array();
  for (const auto& x : b)
    a.push_back({{"key", x.key}, {"n", x.n}, {"coverage_pct", x.coverage_pct}, {"avg_len_nm", x.avg_len_nm}});
  return a;
}

std::vector<Breakdown> breakdown_from(const ordered_json& a) {
  std::vector<Breakdown> out;
  for (const auto& x : a)
    out.push_back({x.at("key").get<double>(), x.at("n").get<std::size_t>(),
                   x.at("coverage_pct").get<double>(), x.at("avg_len_nm").get<double>()});
  return out;
}

ConformalMethod conformal_from(const std::string& s) {
  if (s == "cp") return ConformalMethod::plain;
  if (s == "ncp") return ConformalMethod::normalized;
  if (s == "cqr") return ConformalMethod::cqr;
  throw std::runtime_error("report: unknown calibration method " + s);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string report_to_json(const EvaluationReport& r) {
  ordered_json j;
  j["report_version"] = 1;
  j["method"] = r.method;
  j["alpha"] = r.alpha;
  j["manifest_hash"] = r.manifest_hash;
  j["seeds"] = {{"split", r.split_seed}, {"difficulty", r.difficulty_seed}, {"quantile", r.quantile_seed}};
  j["n_train"] = r.n_train;
  j["n_calibration"] = r.n_calibration;
  ordered_json edges = ordered_json::array();
  for (const auto& e : r.edges) {
    ordered_json ej;
    ej["edge"] = to_string(e.edge);
    ej["coverage_pct"] = e.coverage_pct;
    ej["avg_len_nm"] = e.avg_len_nm;
    ej["n_test"] = e.n_test;
    ej["degenerate_count"] = e.degenerate_count;
    ej["calibration"] = {{"method", to_string(e.calibration.method)},
                         {"alpha", e.calibration.alpha},
                         {"n_calib", e.calibration.n_calib},
                         {"m", e.calibration.m},
                         {"constant", e.calibration.constant}};
    ej["uncalibrated_coverage_pct"] =
        e.uncalibrated_coverage_pct ? ordered_json(*e.uncalibrated_coverage_pct) : ordered_json();
    ej["uncalibrated_avg_len_nm"] =
        e.uncalibrated_avg_len_nm ? ordered_json(*e.uncalibrated_avg_len_nm) : ordered_json();
    ej["by_dose"] = breakdown_json(e.by_dose);
    ej["by_sigma"] = breakdown_json(e.by_sigma);
    ordered_json pts = ordered_json::array();
    for (const auto& p : e.points)
      pts.push_back({p.example, p.y, p.yhat, p.lo, p.hi, p.dose});
    ej["points"] = std::move(pts);
    edges.push_back(std::move(ej));
  }
  j["edges"] = std::move(edges);
  return j.dump(1) + "\n";
}

EvaluationReport report_from_json(std::string_view text) {
  EvaluationReport r;
  try {
    const auto j = ordered_json::parse(text);
    if (j.value("report_version", 0) != 1) throw std::runtime_error("report: unsupported version");
    r.method = j.at("method").get<std::string>();
    r.alpha = j.at("alpha").get<double>();
    r.manifest_hash = j.at("manifest_hash").get<std::string>();
    r.split_seed = j.at("seeds").at("split").get<std::uint64_t>();
    r.difficulty_seed = j.at("seeds").at("difficulty").get<std::uint64_t>();
    r.quantile_seed = j.at("seeds").at("quantile").get<std::uint64_t>();
    r.n_train = j.at("n_train").get<std::size_t>();
    r.n_calibration = j.at("n_calibration").get<std::size_t>();
    const auto& edges = j.at("edges");
    if (edges.size() != 2) throw std::runtime_error("report: expected two edges");
    for (int k = 0; k < 2; ++k) {
      const auto& ej = edges[k];
      EdgeReport& e = r.edges[k];
      const auto name = ej.at("edge").get<std::string>();
      if (name != "left" && name != "right") throw std::runtime_error("report: bad edge " + name);
      e.edge = name == "left" ? Edge::left : Edge::right;
      e.coverage_pct = ej.at("coverage_pct").get<double>();
      e.avg_len_nm = ej.at("avg_len_nm").get<double>();
      e.n_test = ej.at("n_test").get<std::size_t>();
      e.degenerate_count = ej.at("degenerate_count").get<std::size_t>();
      const auto& c = ej.at("calibration");
      e.calibration = {conformal_from(c.at("method").get<std::string>()), c.at("alpha").get<double>(),
                       c.at("n_calib").get<std::size_t>(), c.at("m").get<std::size_t>(),
                       c.at("constant").get<double>()};
      if (!ej.at("uncalibrated_coverage_pct").is_null())
        e.uncalibrated_coverage_pct = ej.at("uncalibrated_coverage_pct").get<double>();
      if (!ej.at("uncalibrated_avg_len_nm").is_null())
        e.uncalibrated_avg_len_nm = ej.at("uncalibrated_avg_len_nm").get<double>();
      e.by_dose = breakdown_from(ej.at("by_dose"));
      e.by_sigma = breakdown_from(ej.at("by_sigma"));
      for (const auto& p : ej.at("points"))
        e.points.push_back({p.at(0).get<std::size_t>(), p.at(1).get<double>(), p.at(2).get<double>(),
                            p.at(3).get<double>(), p.at(4).get<double>(), p.at(5).get<double>()});
    }
  } catch (const ordered_json::exception& e) {
    throw std::runtime_error(std::string("report: ") + e.what());
  }
  return r;
}

std::string report_csv_header() {
  return "method,edge,alpha,coverage_pct,avg_len_nm,n_test,degenerate_count\n";
}

std::string report_csv_rows(const EvaluationReport& r) {
  std::string out;
  for (const auto& e : r.edges) {
    out += r.method + "," + to_string(e.edge) + "," + fixed(r.alpha, 4) + "," +
           fixed(e.coverage_pct, 4) + "," + fixed(e.avg_len_nm, 6) + "," +
           std::to_string(e.n_test) + "," + std::to_string(e.degenerate_count) + "\n";
  }
  return out;
}

}  // namespace lercp
