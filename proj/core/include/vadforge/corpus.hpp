#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vadforge/acoustics.hpp"
#include "vadforge/frontend.hpp"
#include "vadforge/rng.hpp"

namespace vadforge::corpus {

// Built-in desk-scale sources ----------------------------------------------------

/// Speech stand-in: phrases of voiced "syllables" (harmonic complexes with a
/// gliding f0 and two formant resonances) separated by pauses of digital silence.
dsp::Waveform synth_speech(Rng& rng, double seconds);

/// Noise stand-in: coloured, slowly modulated Gaussian noise plus decaying
/// broadband transient bursts. Contains no harmonic structure.
dsp::Waveform synth_noise(Rng& rng, double seconds);

// On-disk dataset ---------------------------------------------------------------------

enum class Split { kTrain, kVal, kTest };

const char* to_string(Split split);
Split split_from_string(const std::string& name);

/// One JSON line of the manifest. Paths are relative to the manifest directory.
struct ManifestRecord {
  std::string id;
  std::string wav_path;
  std::string label_path;
  acoustics::RoomSpec room_spec;
  double snr_db = 0.0;
  Split split = Split::kTrain;
  std::string speech_id;
  std::string noise_id;
};

void to_json(nlohmann::json& j, const ManifestRecord& r);
void from_json(const nlohmann::json& j, ManifestRecord& r);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

/// One ASCII line of '0'/'1', one character per frame.
void write_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);
std::vector<std::uint8_t> read_labels(const std::filesystem::path& path);

struct SynthConfig {
  std::size_t n_train = 200;
  std::size_t n_val = 20;
  std::size_t n_test = 40;
  std::uint64_t seed = 0;
  /// Duration range of built-in clean utterances before silence balancing.
  double min_seconds = 17.0;
  double max_seconds = 22.0;
  /// Optional external pools: directories of 16-bit mono WAVs (8 or 16 kHz).
  std::string speech_dir;
  std::string noise_dir;
  acoustics::SceneOptions scene;
};

void to_json(nlohmann::json& j, const SynthConfig& cfg);
void from_json(const nlohmann::json& j, SynthConfig& cfg);

/// Writes wav/<id>.wav, labels/<id>.txt and manifest.jsonl under out_dir.
/// Every example draws from its own RNG stream (seed, split, index), and
/// speech/noise sources are partitioned by split before generation, so the
/// splits never share a source. Returns the manifest records in file order.
std::vector<ManifestRecord> build_dataset(const SynthConfig& cfg,
                                          const std::filesystem::path& out_dir);

}  // namespace vadforge::corpus
