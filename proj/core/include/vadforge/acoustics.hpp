#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vadforge/frontend.hpp"
#include "vadforge/rng.hpp"

namespace vadforge::acoustics {

inline constexpr double kSpeedOfSound = 343.0;
inline constexpr double kWallClearance = 0.1;
inline constexpr double kMicHeight = 1.5;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Randomized acoustic scene. Ranges of the room sampler:
///   room x,y ~ U[4,8] m, z ~ U[2.5,3] m, t60 ~ U[0.15,0.6] s,
///   mic = (x/2 + U[-.5,.5], y/2 + U[-.5,.5], 1.5),
///   source at angle U[0,180] deg and distance 1 + U[-.5,.5] m from the mic
///   in the horizontal plane, snr ~ U[-3,20] dB.
struct RoomSpec {
  Vec3 room;
  double t60 = 0.3;
  Vec3 mic;
  double source_angle_deg = 90.0;
  double source_distance = 1.0;
  double snr_db = 10.0;

  Vec3 source_position() const;
  /// True when the source is at least `clearance` metres from every wall.
  bool source_inside(double clearance = kWallClearance) const;
};

void to_json(nlohmann::json& j, const RoomSpec& spec);
void from_json(const nlohmann::json& j, RoomSpec& spec);

/// Draws a room; out-of-room source positions are redrawn (at most 100 times).
RoomSpec sample_room(Rng& rng);

struct RirOptions {
  int sample_rate = dsp::kSampleRate;
  double speed_of_sound = kSpeedOfSound;
  /// Replaces the Sabine-derived wall reflection coefficient (0 = free field).
  std::optional<double> reflection_override;
  /// Allen-Berkley 100 Hz high-pass on the reflections. Without it the
  /// all-positive image taps pile up a DC offset that stretches the decay.
  bool high_pass = true;
};

struct Rir {
  std::vector<double> taps;
  std::size_t direct_delay_samples = 0;
  double reflection = 0.0;
};

/// Uniform wall reflection coefficient beta = sqrt(1 - alpha), with the
/// absorption alpha from Sabine's formula T60 = 24 ln(10) V / (c S alpha).
double sabine_reflection(const RoomSpec& spec, double speed_of_sound = kSpeedOfSound);

/// Image-source impulse response. Each image contributes beta^order / r at
/// round(r / c * fs); images are enumerated until the path length covers the
/// response duration (direct delay + t60). The direct tap is never filtered.
Rir simulate_rir(const RoomSpec& spec, const RirOptions& options = {});

struct MixResult {
  dsp::Waveform mixture;
  double noise_gain = 0.0;  // applied to the (tiled) noise before peak scaling
  double peak_scale = 1.0;  // < 1 when the mixture was rescaled to avoid clipping
};

/// reverb_speech + g * noise with g chosen so 10 log10(E_s / E_{g n}) = snr_db.
/// Noise is tiled or cropped to the speech length. snr_db = +inf adds no noise.
MixResult mix_at_snr(const dsp::Waveform& reverb_speech, const dsp::Waveform& noise, double snr_db);

/// Per-frame energy sum_f |S(l,f)|^2 over the full two-sided spectrum,
/// evaluated through Parseval as N * sum_n (w[n] x[n])^2.
std::vector<double> frame_energies(std::span<const float> samples,
                                   const dsp::FrontendConfig& cfg = {});

/// I(l) = 1 iff 10 log10 e(l) >= 10 log10 max_l e(l) + th_db. Silence gives all zeros.
std::vector<std::uint8_t> energy_vad_labels(const dsp::Waveform& clean, double th_db = -40.0,
                                            const dsp::FrontendConfig& cfg = {});

struct BalancedSpeech {
  dsp::Waveform speech;
  std::vector<std::uint8_t> labels;
  std::size_t inserted_frames = 0;
};

/// Inserts hop-aligned digital silence at random frame boundaries until the
/// speech-frame fraction is <= target_ratio + 0.05. Labels of frames touched
/// by an insertion are re-evaluated against the original reference maximum;
/// the loudest frame is never split, so the reference stays valid.
BalancedSpeech balance_silence(const dsp::Waveform& speech, std::span<const std::uint8_t> labels,
                               Rng& rng, double target_ratio, double th_db = -40.0,
                               const dsp::FrontendConfig& cfg = {});

struct SceneOptions {
  double th_db = -40.0;
  double target_ratio = 0.5;
  bool balance = true;
  /// Convolve the noise with the room response too (default: dry noise).
  bool reverberant_noise = false;
  std::optional<double> snr_override;
  std::optional<double> reflection_override;
  /// Allen-Berkley 100 Hz high-pass on the reflections. Without it the
  /// all-positive image taps pile up a DC offset that stretches the decay.
  bool high_pass = true;
};

struct SceneMetadata {
  RoomSpec room;
  double snr_db = 0.0;
  std::string speech_id;
  std::string noise_id;
  double noise_gain = 0.0;
  double peak_scale = 1.0;
  std::size_t inserted_silence_frames = 0;
  std::size_t direct_delay_samples = 0;
};

struct LabeledExample {
  dsp::Waveform mixture;
  std::vector<std::uint8_t> labels;
  SceneMetadata meta;
  dsp::Waveform clean;  // balanced, dry speech the labels were computed on
};

/// Builds x = s * h + n: labels from the dry clean speech, silence balancing,
/// a sampled room, reverberation, then noise at the room's SNR.
LabeledExample synthesize_scene(const dsp::Waveform& clean, const dsp::Waveform& noise, Rng& rng,
                                const SceneOptions& options = {});

}  // namespace vadforge::acoustics
