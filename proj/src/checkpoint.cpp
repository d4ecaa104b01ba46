#include "lercp/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace lercp {
namespace {

using nlohmann::ordered_json;

ordered_json layer_json(const DenseLayer& l) {
  return {{"inputs", l.inputs}, {"outputs", l.outputs}, {"weights", l.weights}, {"bias", l.bias}};
}

DenseLayer layer_from(const ordered_json& j) {
  DenseLayer l(j.at("inputs").get<int>(), j.at("outputs").get<int>());
  l.weights = j.at("weights").get<std::vector<double>>();
  l.bias = j.at("bias").get<std::vector<double>>();
  if (l.weights.size() != static_cast<std::size_t>(l.inputs * l.outputs) ||
      l.bias.size() != static_cast<std::size_t>(l.outputs))
    throw std::runtime_error("checkpoint: layer shape does not match its weights");
  return l;
}

ordered_json training_json(const TrainOptions& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"seed", t.seed}};
}

TrainOptions training_from(const ordered_json& j) {
  TrainOptions t;
  t.epochs = j.at("epochs").get<int>();
  t.batch_size = j.at("batch_size").get<int>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

ordered_json header(const char* kind) {
  return {{"format", "lercp-model"}, {"version", kCheckpointVersion}, {"kind", kind}};
}

ordered_json parse_checked(const std::string& text, const char* kind) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "lercp-model") throw std::runtime_error("checkpoint: bad format tag");
  if (j.value("version", 0) != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  if (j.value("kind", "") != kind)
    throw std::runtime_error(std::string("checkpoint: expected kind ") + kind);
  return j;
}

}  // namespace

std::string to_checkpoint(const DifficultyModel& m) {
  auto j = header("difficulty");
  j["training"] = training_json(m.training);
  j["standardization"] = {{"mean", m.standardizer.mean}, {"scale", m.standardizer.scale}};
  j["layers"] = {layer_json(m.hidden), layer_json(m.output)};
  j["final_train_mae"] = m.final_train_mae;
  j["loss_curve"] = m.loss_curve;
  return j.dump(1);
}

std::string to_checkpoint(const QuantileNet& n) {
  auto j = header("quantile");
  j["training"] = training_json(n.training);
  j["alpha"] = n.alpha;
  j["standardization"] = {{"mean", n.standardizer.mean}, {"scale", n.standardizer.scale}};
  j["layers"] = {layer_json(n.hidden), layer_json(n.output)};
  j["loss_curve"] = n.loss_curve;
  return j.dump(1);
}

DifficultyModel difficulty_from_checkpoint(const std::string& text) {
  const auto j = parse_checked(text, "difficulty");
  DifficultyModel m;
  m.training = training_from(j.at("training"));
  m.standardizer.mean = j.at("standardization").at("mean").get<std::vector<double>>();
  m.standardizer.scale = j.at("standardization").at("scale").get<std::vector<double>>();
  const auto& layers = j.at("layers");
  if (layers.size() != 2) throw std::runtime_error("checkpoint: expected two layers");
  m.hidden = layer_from(layers[0]);
  m.output = layer_from(layers[1]);
  if (m.output.outputs != 1 || m.output.inputs != m.hidden.outputs ||
      m.standardizer.mean.size() != static_cast<std::size_t>(m.hidden.inputs))
    throw std::runtime_error("checkpoint: inconsistent difficulty model shapes");
  m.final_train_mae = j.value("final_train_mae", 0.0);
  m.loss_curve = j.value("loss_curve", std::vector<double>{});
  return m;
}

QuantileNet quantile_from_checkpoint(const std::string& text) {
  const auto j = parse_checked(text, "quantile");
  QuantileNet n;
  n.training = training_from(j.at("training"));
  n.alpha = j.at("alpha").get<double>();
  n.standardizer.mean = j.at("standardization").at("mean").get<std::vector<double>>();
  n.standardizer.scale = j.at("standardization").at("scale").get<std::vector<double>>();
  const auto& layers = j.at("layers");
  if (layers.size() != 2) throw std::runtime_error("checkpoint: expected two layers");
  n.hidden = layer_from(layers[0]);
  n.output = layer_from(layers[1]);
  if (n.output.outputs != 2 || n.output.inputs != n.hidden.outputs ||
      n.hidden.outputs != 2 * n.hidden.inputs ||
      n.standardizer.mean.size() != static_cast<std::size_t>(n.hidden.inputs))
    throw std::runtime_error("checkpoint: inconsistent quantile net shapes");
  n.loss_curve = j.value("loss_curve", std::vector<double>{});
  return n;
}

void save_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string load_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace lercp
