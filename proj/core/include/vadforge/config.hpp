#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "vadforge/corpus.hpp"
#include "vadforge/frontend.hpp"
#include "vadforge/model.hpp"
#include "vadforge/training.hpp"

namespace vadforge {

struct PathConfig {
  std::string data_dir;  // synth output
  std::string manifest;  // train/eval input
  std::string run_dir;   // train output
};

/// Everything a run needs, as one declarative JSON document with the
/// sections "model", "train", "synth", "frontend" and "paths". Every section
/// and key is optional; unknown keys are rejected.
struct RunConfig {
  model::ModelConfig model;
  training::TrainConfig train;
  corpus::SynthConfig synth;
  dsp::FrontendConfig frontend;
  PathConfig paths;
};

void to_json(nlohmann::json& j, const PathConfig& p);
void from_json(const nlohmann::json& j, PathConfig& p);
void to_json(nlohmann::json& j, const RunConfig& cfg);
void from_json(const nlohmann::json& j, RunConfig& cfg);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace vadforge
