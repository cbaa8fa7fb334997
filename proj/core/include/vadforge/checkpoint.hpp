#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "vadforge/frontend.hpp"
#include "vadforge/model.hpp"

namespace vadforge::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

/// File layout (all integers little-endian):
///   "VADF" | u32 version | u32 header_len | JSON header | u32 blob_count |
///   blobs { u32 name_len | name | u32 rank | u32 dims[rank] | u64 count |
///           f32 data[count] | u32 crc32(blob bytes before this field) } |
///   u32 crc32(everything before the trailer)
/// The header holds the model and frontend configuration plus free-form
/// metadata, so a checkpoint is self-contained.
struct LoadedModel {
  std::unique_ptr<model::VadModel<float>> model;
  dsp::FrontendConfig frontend;
  nlohmann::json metadata;
};

void save(const std::filesystem::path& path, const model::VadModel<float>& model,
          const dsp::FrontendConfig& frontend, const nlohmann::json& metadata = nlohmann::json::object());

/// Errors: kIo (unreadable), kCheckpointMagic, kCheckpointVersion,
/// kCheckpointTruncated, kCheckpointChecksum.
LoadedModel load(const std::filesystem::path& path);

/// Copies parameter and buffer values from src into dst (same config).
void copy_state(const model::VadModel<float>& src, model::VadModel<float>& dst);

}  // namespace vadforge::checkpoint
