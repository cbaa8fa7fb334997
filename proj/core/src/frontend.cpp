#include "vadforge/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vadforge/error.hpp"
#include "vadforge/fft.hpp"

namespace vadforge::dsp {

void to_json(nlohmann::json& j, const FrontendConfig& cfg) {
  j = nlohmann::json{{"sample_rate", cfg.sample_rate},
                     {"frame_length", cfg.frame_length},
                     {"hop", cfg.hop},
                     {"n_mels", cfg.n_mels},
                     {"f_min", cfg.f_min},
                     {"f_max", cfg.f_max},
                     {"log_floor", cfg.log_floor},
                     {"window", cfg.window},
                     {"mel_scale", cfg.mel_scale},
                     {"spectrum", cfg.spectrum},
                     {"normalize", cfg.normalize}};
}

void from_json(const nlohmann::json& j, FrontendConfig& cfg) {
  static const char* kKeys[] = {"sample_rate", "frame_length", "hop",       "n_mels",
                                "f_min",       "f_max",        "log_floor", "window",
                                "mel_scale",   "spectrum",     "normalize"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
      fail(ErrorCode::kConfig, "unknown frontend key '" + key + "'");
  }
  FrontendConfig d;
  cfg.sample_rate = j.value("sample_rate", d.sample_rate);
  cfg.frame_length = j.value("frame_length", d.frame_length);
  cfg.hop = j.value("hop", d.hop);
  cfg.n_mels = j.value("n_mels", d.n_mels);
  cfg.f_min = j.value("f_min", d.f_min);
  cfg.f_max = j.value("f_max", d.f_max);
  cfg.log_floor = j.value("log_floor", d.log_floor);
  cfg.window = j.value("window", d.window);
  cfg.mel_scale = j.value("mel_scale", d.mel_scale);
  cfg.spectrum = j.value("spectrum", d.spectrum);
  cfg.normalize = j.value("normalize", d.normalize);
  if (cfg.window != "hann_periodic" || cfg.mel_scale != "htk" || cfg.spectrum != "power") {
    fail(ErrorCode::kConfig, "only window=hann_periodic, mel_scale=htk, spectrum=power are supported");
  }
  if (cfg.frame_length == 0 || (cfg.frame_length & (cfg.frame_length - 1)) != 0 || cfg.hop == 0) {
    fail(ErrorCode::kConfig, "frame_length must be a power of two and hop positive");
  }
}

std::size_t frame_count(std::size_t samples, const FrontendConfig& cfg) {
  if (samples < cfg.frame_length) return 0;
  return 1 + (samples - cfg.frame_length) / cfg.hop;
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(n) / double(length));
  return w;
}

ComplexSpectrogram stft(std::span<const float> samples, const FrontendConfig& cfg) {
  if (samples.size() < cfg.frame_length) {
    fail(ErrorCode::kInput, "signal has " + std::to_string(samples.size()) +
                                " samples; at least " + std::to_string(cfg.frame_length) +
                                " are needed for one frame");
  }
  const std::size_t frames = frame_count(samples.size(), cfg);
  const std::size_t bins = cfg.frame_length / 2 + 1;
  const std::vector<double> window = hann_window(cfg.frame_length);
  Fft fft(cfg.frame_length);
  ComplexSpectrogram spec{frames, bins, std::vector<std::complex<double>>(frames * bins)};
  std::vector<std::complex<double>> buf(cfg.frame_length);
  for (std::size_t l = 0; l < frames; ++l) {
    const float* x = samples.data() + l * cfg.hop;
    for (std::size_t n = 0; n < cfg.frame_length; ++n) buf[n] = double(x[n]) * window[n];
    fft.forward(buf);
    std::copy(buf.begin(), buf.begin() + long(bins), spec.values.begin() + long(l * bins));
  }
  return spec;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(const FrontendConfig& cfg) {
  const std::size_t bands = cfg.n_mels;
  const std::size_t bins = cfg.frame_length / 2 + 1;
  if (bands < 2) fail(ErrorCode::kConfig, "need at least two mel bands");
  MelFilterbank fb{bands, bins, std::vector<double>(bands * bins, 0.0), std::vector<double>(bands)};
  const double mel_lo = hz_to_mel(cfg.f_min);
  const double mel_hi = hz_to_mel(cfg.f_max);
  const double step = (mel_hi - mel_lo) / double(bands - 1);
  const double bin_hz = double(cfg.sample_rate) / double(cfg.frame_length);
  for (std::size_t m = 0; m < bands; ++m) {
    const double center_mel = mel_lo + step * double(m);
    const double lower = mel_to_hz(center_mel - step);
    const double center = mel_to_hz(center_mel);
    const double upper = mel_to_hz(center_mel + step);
    fb.centers_hz[m] = center;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = bin_hz * double(k);
      double w = 0.0;
      if (f > lower && f <= center) w = (f - lower) / (center - lower);
      else if (f > center && f < upper) w = (upper - f) / (upper - center);
      fb.weights[m * bins + k] = w;
    }
  }
  return fb;
}

MelFrames log_mel(const ComplexSpectrogram& spec, const FrontendConfig& cfg) {
  const MelFilterbank fb = mel_filterbank(cfg);
  if (spec.bins != fb.bins) {
    fail(ErrorCode::kDimension, "spectrogram has " + std::to_string(spec.bins) +
                                    " bins, filterbank expects " + std::to_string(fb.bins));
  }
  // Filters are narrow; restrict each to its support.
  std::vector<std::size_t> first(fb.bands, 0), last(fb.bands, 0);
  for (std::size_t m = 0; m < fb.bands; ++m) {
    std::size_t k0 = fb.bins, k1 = 0;
    for (std::size_t k = 0; k < fb.bins; ++k)
      if (fb.weight(m, k) > 0.0) {
        k0 = std::min(k0, k);
        k1 = k + 1;
      }
    first[m] = k0;
    last[m] = std::max(k0, k1);
  }
  MelFrames mel{spec.frames, fb.bands, std::vector<float>(spec.frames * fb.bands)};
  std::vector<double> power(spec.bins);
  for (std::size_t l = 0; l < spec.frames; ++l) {
    for (std::size_t k = 0; k < spec.bins; ++k) power[k] = std::norm(spec.at(l, k));
    for (std::size_t m = 0; m < fb.bands; ++m) {
      double e = 0.0;
      for (std::size_t k = first[m]; k < last[m]; ++k) e += fb.weight(m, k) * power[k];
      mel.values[l * fb.bands + m] = float(std::log(e + cfg.log_floor));
    }
  }
  return mel;
}

void apply_normalization(MelFrames& mel, const FrontendConfig& cfg) {
  if (!cfg.normalize || !cfg.normalization_fitted()) return;
  if (cfg.norm_mean.size() != mel.bands || cfg.norm_std.size() != mel.bands) {
    fail(ErrorCode::kConfig, "normalization statistics do not match " +
                                 std::to_string(mel.bands) + " bands");
  }
  for (std::size_t l = 0; l < mel.frames; ++l)
    for (std::size_t f = 0; f < mel.bands; ++f) {
      float& v = mel.values[l * mel.bands + f];
      v = (v - cfg.norm_mean[f]) / cfg.norm_std[f];
    }
}

void fit_normalization(FrontendConfig& cfg, std::span<const MelFrames> corpus) {
  const std::size_t bands = cfg.n_mels;
  std::vector<double> s(bands, 0.0), s2(bands, 0.0);
  std::size_t count = 0;
  for (const MelFrames& m : corpus) {
    if (m.bands != bands) fail(ErrorCode::kDimension, "mel band count mismatch in corpus");
    for (std::size_t l = 0; l < m.frames; ++l)
      for (std::size_t f = 0; f < bands; ++f) {
        const double v = m.at(l, f);
        s[f] += v;
        s2[f] += v * v;
      }
    count += m.frames;
  }
  if (count == 0) fail(ErrorCode::kInput, "cannot fit normalization on an empty corpus");
  cfg.norm_mean.assign(bands, 0.0f);
  cfg.norm_std.assign(bands, 1.0f);
  for (std::size_t f = 0; f < bands; ++f) {
    const double mu = s[f] / double(count);
    const double var = std::max(0.0, s2[f] / double(count) - mu * mu);
    cfg.norm_mean[f] = float(mu);
    cfg.norm_std[f] = float(std::max(std::sqrt(var), 1e-3));
  }
}

MelFrames features(const Waveform& wave, const FrontendConfig& cfg) {
  if (wave.sample_rate != cfg.sample_rate) {
    fail(ErrorCode::kInput, "waveform sampled at " + std::to_string(wave.sample_rate) +
                                " Hz; the frontend expects " + std::to_string(cfg.sample_rate) +
                                " Hz (resample first)");
  }
  for (float v : wave.samples)
    if (!std::isfinite(v)) fail(ErrorCode::kInput, "waveform contains non-finite samples");
  MelFrames mel = log_mel(stft(wave.samples, cfg), cfg);
  apply_normalization(mel, cfg);
  return mel;
}

}  // namespace vadforge::dsp
