#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "lercp/pipeline.hpp"
#include "lercp/seeding.hpp"

namespace fs = std::filesystem;

namespace lercp::cli {

namespace {

std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
  return s + "]";
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

/// Effective configuration as a config-file section; `--config` accepts it back.
struct ConfigLog {
  std::string section;
  std::vector<std::pair<std::string, std::string>> entries;

  void add(std::string key, std::string value) { entries.emplace_back(std::move(key), std::move(value)); }
  std::string text() const {
    std::string s = "[" + section + "]\n";
    for (const auto& [k, v] : entries) s += k + " = " + v + "\n";
    return s;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  f.flush();
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct GenerateArgs {
  std::string preset = "desk";
  std::vector<double> sigmas, hursts, xis, doses, line_widths;
  int images_per_combination = 0;
  std::uint64_t seed = 20210101;
  std::string out = "lercp-data";
  int jobs = 1;
  bool store_images = true;
};

struct RunArgs {
  std::string manifest = "lercp-data";
  std::vector<std::string> methods{"cp"};
  double alpha = 0.1;
  std::uint64_t seed = 0;
  std::vector<double> holdout_xis;
  std::string out = "lercp-results";
  bool emit_plot_data = false;
  bool unit_gamma = false;
  int epochs = 200;
  int batch_size = 18;
  double learning_rate = 1e-3;
  std::uint64_t train_seed = 11;
};

int cmd_generate(const GenerateArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err,
                 int verbosity) {
  DatasetConfig c;
  if (a.preset == "paper") {
    c = DatasetConfig::paper();
  } else if (a.preset == "desk" || a.preset == "custom") {
    c = DatasetConfig::desk();
    c.preset = a.preset;
  } else {
    err << "error: invalid config key 'preset': expected paper, desk or custom, got '" << a.preset << "'\n";
    return kConfigError;
  }
  auto given = [&sub](const char* name) { return sub.get_option(name)->count() > 0; };
  const DatasetConfig base = c;
  if (given("--sigmas")) c.sigmas = a.sigmas;
  if (given("--hursts")) c.hursts = a.hursts;
  if (given("--xis")) c.xis = a.xis;
  if (given("--doses")) c.doses = a.doses;
  if (given("--images-per-combination")) c.images_per_combination = a.images_per_combination;
  if (given("--line-widths")) c.line_widths = a.line_widths;
  // Restating a preset's own values keeps the preset name.
  if (c.sigmas != base.sigmas || c.hursts != base.hursts || c.xis != base.xis || c.doses != base.doses ||
      c.images_per_combination != base.images_per_combination)
    c.preset = "custom";
  c.root_seed = a.seed;
  c.output_root = a.out;
  c.jobs = a.jobs;
  c.store_images = a.store_images;

  ConfigLog log{"generate", {}};
  log.add("preset", quote(c.preset));
  log.add("sigmas", list(c.sigmas));
  log.add("hursts", list(c.hursts));
  log.add("xis", list(c.xis));
  log.add("images-per-combination", std::to_string(c.images_per_combination));
  log.add("line-widths", list(c.line_widths));
  log.add("doses", list(c.doses));
  log.add("seed", std::to_string(c.root_seed));
  log.add("out", quote(a.out));
  log.add("jobs", std::to_string(c.jobs));
  log.add("store-images", c.store_images ? "true" : "false");
  if (verbosity >= 0) err << log.text();

  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  std::optional<std::string> previous;
  const fs::path manifest_path = fs::path(a.out) / kManifestFile;
  std::error_code ec;
  if (fs::exists(manifest_path, ec)) {
    try {
      previous = manifest_hash(load_manifest(manifest_path, false));
    } catch (const std::exception&) {
      // unreadable earlier manifest: treated as absent
    }
  }

  DatasetManifest m;
  try {
    m = generate_dataset(c);
    write_text(fs::path(a.out) / "generate_config.toml", log.text());
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  }
  const std::string hash = manifest_hash(m);
  out << m.examples.size() << " examples, " << m.group_count() << " groups\n";
  out << "manifest " << manifest_path.string() << "\n";
  out << "manifest hash " << hash << "\n";
  if (previous) {
    if (*previous == hash)
      out << "manifest hash unchanged\n";
    else
      out << "manifest hash changed (was " << *previous << ")\n";
  }
  return kOk;
}

int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err, int verbosity) {
  std::vector<Method> methods;
  try {
    for (const auto& name : a.methods) {
      if (name == "all") {
        methods.assign(std::begin(kAllMethods), std::end(kAllMethods));
        break;
      }
      const Method m = parse_method(name);
      if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    }
  } catch (const std::invalid_argument& e) {
    err << "error: invalid config key 'method': " << e.what() << "\n";
    return kConfigError;
  }
  if (!(a.alpha > 0.0 && a.alpha < 0.5)) {
    err << "error: invalid config key 'alpha': must lie in (0, 0.5)\n";
    return kConfigError;
  }
  if (a.epochs < 1 || a.batch_size < 1 || !(a.learning_rate > 0.0)) {
    err << "error: invalid config key 'epochs/batch_size/learning_rate': must be positive\n";
    return kConfigError;
  }

  std::string method_list = "[";
  for (std::size_t i = 0; i < methods.size(); ++i)
    method_list += (i ? ", " : "") + quote(to_string(methods[i]));
  method_list += "]";
  ConfigLog log{"run", {}};
  log.add("manifest", quote(a.manifest));
  log.add("method", method_list);
  log.add("alpha", num(a.alpha));
  log.add("seed", std::to_string(a.seed));
  if (!a.holdout_xis.empty()) log.add("holdout-xis", list(a.holdout_xis));
  log.add("out", quote(a.out));
  log.add("emit-plot-data", a.emit_plot_data ? "true" : "false");
  log.add("unit-gamma", a.unit_gamma ? "true" : "false");
  log.add("epochs", std::to_string(a.epochs));
  log.add("batch-size", std::to_string(a.batch_size));
  log.add("learning-rate", num(a.learning_rate));
  log.add("train-seed", std::to_string(a.train_seed));
  if (verbosity >= 0) err << log.text();

  fs::path manifest_path = a.manifest;
  std::error_code ec;
  if (fs::is_directory(manifest_path, ec)) manifest_path /= kManifestFile;
  if (!fs::exists(manifest_path, ec)) {
    err << "error: manifest not found: " << manifest_path.string() << "\n";
    return kConfigError;
  }

  DatasetManifest manifest;
  try {
    manifest = load_manifest(manifest_path, false);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  }

  ExperimentOptions opts;
  opts.difficulty = {a.epochs, a.batch_size, a.learning_rate, a.train_seed};
  opts.quantile = {a.epochs, a.batch_size, a.learning_rate, derive_seed({a.train_seed, 2})};
  opts.unit_gamma = a.unit_gamma;
  const SplitSpec spec{a.holdout_xis, a.seed};

  std::vector<EvaluationReport> reports;
  try {
    const Splits splits = split_dataset(manifest, spec);
    const TrainedModels models = train_models(manifest, splits.train, methods, a.alpha, opts);
    const std::string hash = manifest_hash(manifest);
    for (Method m : methods) {
      EvaluationReport r = evaluate_method(manifest, splits, models, m, opts);
      r.manifest_hash = hash;
      r.split_seed = spec.seed;
      reports.push_back(std::move(r));
    }
  } catch (const TrainingError& e) {
    err << "error: training failed: " << e.what() << "\n";
    return kTrainingError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  std::string csv = report_csv_header();
  for (const auto& r : reports) csv += report_csv_rows(r);
  try {
    const fs::path dir = a.out;
    fs::create_directories(dir);
    write_text(dir / "run_config.toml", log.text());
    for (const auto& r : reports) write_text(dir / ("report_" + r.method + ".json"), report_to_json(r));
    write_text(dir / "coverage.csv", csv);
    if (a.emit_plot_data) {
      const fs::path plots = dir / "plot";
      fs::create_directories(plots);
      for (const auto& r : reports)
        for (const auto& e : r.edges) {
          const std::string stem = r.method + "_" + to_string(e.edge);
          std::string pairs = "# width_nm abs_error_nm\n";
          for (const auto& p : e.points) pairs += num(p.hi - p.lo) + " " + num(std::abs(p.y - p.yhat)) + "\n";
          write_text(plots / (stem + "_width_vs_error.dat"), pairs);
          std::string series = "# dose coverage_pct\n";
          for (const auto& b : e.by_dose) series += num(b.key) + " " + num(b.coverage_pct) + "\n";
          write_text(plots / (stem + "_coverage_by_dose.dat"), series);
        }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kWriteError;
  }
  out << csv;
  return kOk;
}

struct TableRow {
  std::string run;
  std::string method;
  std::string edge;
  double alpha = 0.0;
  double coverage = 0.0;
  double length = 0.0;
};

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> f;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      f.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  f.push_back(cur);
  return f;
}

double parse_number(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error("not a number: '" + s + "'");
  return v;
}

void load_csv(const std::string& text, const std::string& run, std::vector<TableRow>& rows) {
  std::istringstream in(text);
  std::string line;
  const std::string header = report_csv_header();
  if (!std::getline(in, line) || line + "\n" != header)
    throw std::runtime_error("missing or unexpected CSV header");
  int n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 7) throw std::runtime_error("expected 7 fields, got " + std::to_string(f.size()));
    if (f[1] != "left" && f[1] != "right") throw std::runtime_error("bad edge '" + f[1] + "'");
    if (f[0].empty()) throw std::runtime_error("empty method");
    rows.push_back({run, f[0], f[1], parse_number(f[2]), parse_number(f[3]), parse_number(f[4])});
    parse_number(f[5]);
    parse_number(f[6]);
    ++n;
  }
  if (n == 0) throw std::runtime_error("no report rows");
}

void load_json(const std::string& text, const std::string& run, std::vector<TableRow>& rows) {
  const EvaluationReport r = report_from_json(text);
  for (const auto& e : r.edges) {
    // The raw quantile net precedes its conformalized version, as in the tables.
    if (e.uncalibrated_coverage_pct && e.uncalibrated_avg_len_nm)
      rows.push_back({run, r.method.substr(1), to_string(e.edge), r.alpha, *e.uncalibrated_coverage_pct,
                      *e.uncalibrated_avg_len_nm});
    rows.push_back({run, r.method, to_string(e.edge), r.alpha, e.coverage_pct, e.avg_len_nm});
  }
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string render_reports(const std::vector<std::string>& paths) {
  std::vector<TableRow> rows;
  for (const auto& p : paths) {
    const fs::path path = p;
    // Files written by `run` share names across runs; their directory tells them apart.
    std::string run = path.stem().string();
    if ((run == "coverage" || run.rfind("report_", 0) == 0) && !path.parent_path().filename().empty())
      run = path.parent_path().filename().string();
    try {
      const std::string text = read_text(path);
      const auto first = text.find_first_not_of(" \t\r\n");
      if (first != std::string::npos && text[first] == '{')
        load_json(text, run, rows);
      else
        load_csv(text, run, rows);
    } catch (const std::exception& e) {
      throw std::runtime_error("malformed report " + p + ": " + e.what());
    }
  }

  std::size_t run_w = 3, method_w = 6;
  for (const auto& r : rows) {
    run_w = std::max(run_w, r.run.size());
    method_w = std::max(method_w, r.method.size());
  }
  std::string s;
  for (const char* edge : {"left", "right"}) {
    s += std::string(edge) + " edge\n";
    s += pad("run", run_w + 2) + pad("method", method_w + 2) + pad("alpha", 8) + pad("coverage (%)", 14) +
         "avg interval length (nm)\n";
    for (const auto& r : rows) {
      if (r.edge != edge) continue;
      s += pad(r.run, run_w + 2) + pad(r.method, method_w + 2) + pad(fmt(r.alpha, 2), 8) +
           pad(fmt(r.coverage, 2), 14) + fmt(r.length, 3) + "\n";
    }
    if (edge[0] == 'l') s += "\n";
  }
  return s;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic CD-SEM line-edge-roughness data and conformal prediction intervals", "lercp"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Config file with [generate] / [run] sections");
  app.allow_config_extras(CLI::config_extras_mode::error);
  int verbose = 0;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "More log output");
  app.add_flag("-q,--quiet", quiet, "Do not log the effective configuration");

  GenerateArgs g;
  auto* gen = app.add_subcommand("generate", "Render a dataset and write its manifest");
  gen->fallthrough();
  gen->add_option("--preset", g.preset, "paper | desk | custom")->capture_default_str();
  gen->add_option("--sigmas", g.sigmas, "LER values (nm)")->delimiter(',');
  gen->add_option("--hursts", g.hursts, "Hurst exponents")->delimiter(',');
  gen->add_option("--xis", g.xis, "Correlation lengths (nm)")->delimiter(',');
  gen->add_option("--doses", g.doses, "Electron doses")->delimiter(',');
  gen->add_option("--line-widths", g.line_widths, "Candidate line widths (nm)")->delimiter(',');
  gen->add_option("--images-per-combination", g.images_per_combination, "Original images per grid point");
  gen->add_option("--seed", g.seed, "Root seed")->capture_default_str();
  gen->add_option("--out", g.out, "Output directory")->capture_default_str();
  gen->add_option("--jobs", g.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--store-images", g.store_images, "Write SEMF image files")->capture_default_str();

  RunArgs r;
  auto* run = app.add_subcommand("run", "Train, calibrate and evaluate on a dataset");
  run->fallthrough();
  run->add_option("--manifest", r.manifest, "Manifest file or dataset directory")->capture_default_str();
  run->add_option("--method", r.methods, "cp | ncp | cqr-2in | cqr-3in | all")->delimiter(',');
  run->add_option("--alpha", r.alpha, "Miscoverage rate")->capture_default_str();
  run->add_option("--seed", r.seed, "Calibration/test split seed")->capture_default_str();
  run->add_option("--holdout-xis", r.holdout_xis, "Correlation lengths of the calibration/test pool")
      ->delimiter(',');
  run->add_option("--out", r.out, "Output directory")->capture_default_str();
  run->add_flag("--emit-plot-data", r.emit_plot_data, "Write two-column plot data files");
  run->add_flag("--unit-gamma", r.unit_gamma, "Use gamma = 1 in normalized CP");
  run->add_option("--epochs", r.epochs, "Training epochs")->capture_default_str();
  run->add_option("--batch-size", r.batch_size, "Mini-batch size")->capture_default_str();
  run->add_option("--learning-rate", r.learning_rate, "Adam learning rate")->capture_default_str();
  run->add_option("--train-seed", r.train_seed, "Network initialization and shuffling seed")
      ->capture_default_str();

  std::vector<std::string> report_paths;
  auto* rep = app.add_subcommand("report", "Render per-edge summary tables from report files");
  rep->add_option("paths", report_paths, "Report files (.json or .csv)")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }
  const int verbosity = quiet ? -1 : verbose;

  if (gen->parsed()) return cmd_generate(g, *gen, out, err, verbosity);
  if (run->parsed()) return cmd_run(r, out, err, verbosity);
  try {
    out << render_reports(report_paths);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kOk;
}

}  // namespace lercp::cli
