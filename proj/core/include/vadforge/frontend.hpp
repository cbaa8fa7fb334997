#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace vadforge::dsp {

inline constexpr int kSampleRate = 8000;
inline constexpr std::size_t kFrameLength = 1024;
inline constexpr std::size_t kHop = 512;
inline constexpr std::size_t kBins = kFrameLength / 2 + 1;
inline constexpr std::size_t kMelBands = 256;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

struct ComplexSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> values;  // [frames, bins]

  const std::complex<double>& at(std::size_t frame, std::size_t bin) const {
    return values[frame * bins + bin];
  }
};

/// Log-mel features, row-major [frames, bands].
struct MelFrames {
  std::size_t frames = 0;
  std::size_t bands = 0;
  std::vector<float> values;

  float at(std::size_t frame, std::size_t band) const { return values[frame * bands + band]; }
  std::span<const float> row(std::size_t frame) const {
    return {values.data() + frame * bands, bands};
  }
};

/// Everything needed to reproduce the model input from a waveform. Stored in
/// checkpoints so training and inference always agree.
struct FrontendConfig {
  int sample_rate = kSampleRate;
  std::size_t frame_length = kFrameLength;
  std::size_t hop = kHop;
  std::size_t n_mels = kMelBands;
  double f_min = 0.0;
  double f_max = 4000.0;
  double log_floor = 1e-6;
  std::string window = "hann_periodic";
  std::string mel_scale = "htk";
  std::string spectrum = "power";
  /// Per-band standardization with statistics from the training split.
  bool normalize = true;
  std::vector<float> norm_mean;
  std::vector<float> norm_std;

  bool normalization_fitted() const { return !norm_mean.empty(); }
};

void to_json(nlohmann::json& j, const FrontendConfig& cfg);
void from_json(const nlohmann::json& j, FrontendConfig& cfg);

/// 1 + floor((T - frame_length) / hop) for T >= frame_length, else 0.
std::size_t frame_count(std::size_t samples, const FrontendConfig& cfg = {});

/// Periodic Hann window (sums to N/2).
std::vector<double> hann_window(std::size_t length);

/// Hann-windowed one-sided STFT; frame l covers samples [l*hop, l*hop + frame_length).
ComplexSpectrogram stft(std::span<const float> samples, const FrontendConfig& cfg = {});

struct MelFilterbank {
  std::size_t bands = 0;
  std::size_t bins = 0;
  std::vector<double> weights;     // [bands, bins]
  std::vector<double> centers_hz;  // [bands]

  double weight(std::size_t band, std::size_t bin) const { return weights[band * bins + bin]; }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular HTK-mel filters whose centers are equally spaced on the mel
/// axis from f_min to f_max inclusive; each triangle spans its neighbours'
/// centers. Peak weight is 1, no area normalization.
MelFilterbank mel_filterbank(const FrontendConfig& cfg = {});

/// ln(mel(|X|^2) + log_floor). Does not standardize.
MelFrames log_mel(const ComplexSpectrogram& spec, const FrontendConfig& cfg = {});

/// (x - mean_f) / std_f per band, when the config carries fitted statistics.
void apply_normalization(MelFrames& mel, const FrontendConfig& cfg);

/// Fits per-band mean/std over all frames of the given utterances.
void fit_normalization(FrontendConfig& cfg, std::span<const MelFrames> corpus);

/// Full waveform -> model input path: checks the sample rate, then
/// stft -> log_mel -> standardization (if enabled and fitted).
MelFrames features(const Waveform& wave, const FrontendConfig& cfg = {});

}  // namespace vadforge::dsp
