#pragma once

#include <filesystem>

#include "vadforge/frontend.hpp"

namespace vadforge::dsp {

/// Reads a 16-bit PCM mono WAV file; samples are scaled by 1/32768.
Waveform read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are clipped to [-1, 1) before quantization.
void write_wav(const std::filesystem::path& path, const Waveform& wave);

/// Polyphase rational resampler (windowed-sinc anti-aliasing filter).
Waveform resample(const Waveform& wave, int target_rate);

}  // namespace vadforge::dsp
