#include "vadforge/config.hpp"

#include <fstream>

#include "vadforge/error.hpp"

namespace vadforge {

void to_json(nlohmann::json& j, const PathConfig& p) {
  j = nlohmann::json{{"data_dir", p.data_dir}, {"manifest", p.manifest}, {"run_dir", p.run_dir}};
}

void from_json(const nlohmann::json& j, PathConfig& p) {
  for (const auto& [key, value] : j.items()) {
    if (key != "data_dir" && key != "manifest" && key != "run_dir")
      fail(ErrorCode::kConfig, "unknown paths key '" + key + "'");
  }
  p.data_dir = j.value("data_dir", std::string());
  p.manifest = j.value("manifest", std::string());
  p.run_dir = j.value("run_dir", std::string());
}

void to_json(nlohmann::json& j, const RunConfig& cfg) {
  j = nlohmann::json{{"model", cfg.model},
                     {"train", cfg.train},
                     {"synth", cfg.synth},
                     {"frontend", cfg.frontend},
                     {"paths", cfg.paths}};
}

void from_json(const nlohmann::json& j, RunConfig& cfg) {
  if (!j.is_object()) fail(ErrorCode::kConfig, "run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "model" && key != "train" && key != "synth" && key != "frontend" && key != "paths")
      fail(ErrorCode::kConfig, "unknown config section '" + key + "'");
  }
  try {
    if (j.contains("model")) cfg.model = j.at("model").get<model::ModelConfig>();
    if (j.contains("train")) cfg.train = j.at("train").get<training::TrainConfig>();
    if (j.contains("synth")) cfg.synth = j.at("synth").get<corpus::SynthConfig>();
    if (j.contains("frontend")) cfg.frontend = j.at("frontend").get<dsp::FrontendConfig>();
    if (j.contains("paths")) cfg.paths = j.at("paths").get<PathConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("invalid config value: ") + e.what());
  }
  if (cfg.frontend.n_mels != cfg.model.n_mels) {
    fail(ErrorCode::kConfig, "frontend.n_mels and model.n_mels differ");
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfig, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return j.get<RunConfig>();
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << nlohmann::json(cfg).dump(2) << '\n';
}

}  // namespace vadforge
