#include "vadforge/acoustics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "vadforge/error.hpp"
#include "vadforge/fft.hpp"

namespace vadforge::acoustics {

Vec3 RoomSpec::source_position() const {
  const double theta = source_angle_deg * std::numbers::pi / 180.0;
  return {mic.x + source_distance * std::cos(theta), mic.y + source_distance * std::sin(theta),
          mic.z};
}

bool RoomSpec::source_inside(double clearance) const {
  const Vec3 s = source_position();
  return s.x >= clearance && s.x <= room.x - clearance && s.y >= clearance &&
         s.y <= room.y - clearance && s.z >= clearance && s.z <= room.z - clearance;
}

void to_json(nlohmann::json& j, const RoomSpec& spec) {
  j = nlohmann::json{{"room", {spec.room.x, spec.room.y, spec.room.z}},
                     {"t60", spec.t60},
                     {"mic", {spec.mic.x, spec.mic.y, spec.mic.z}},
                     {"source_angle_deg", spec.source_angle_deg},
                     {"source_distance", spec.source_distance},
                     {"snr_db", spec.snr_db}};
}

void from_json(const nlohmann::json& j, RoomSpec& spec) {
  const auto room = j.at("room").get<std::vector<double>>();
  const auto mic = j.at("mic").get<std::vector<double>>();
  if (room.size() != 3 || mic.size() != 3) fail(ErrorCode::kInput, "room/mic must have 3 coordinates");
  spec.room = {room[0], room[1], room[2]};
  spec.mic = {mic[0], mic[1], mic[2]};
  spec.t60 = j.at("t60").get<double>();
  spec.source_angle_deg = j.at("source_angle_deg").get<double>();
  spec.source_distance = j.at("source_distance").get<double>();
  spec.snr_db = j.at("snr_db").get<double>();
}

RoomSpec sample_room(Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    RoomSpec s;
    s.room = {rng.uniform(4.0, 8.0), rng.uniform(4.0, 8.0), rng.uniform(2.5, 3.0)};
    s.t60 = rng.uniform(0.15, 0.6);
    s.mic = {s.room.x / 2.0 + rng.uniform(-0.5, 0.5), s.room.y / 2.0 + rng.uniform(-0.5, 0.5),
             kMicHeight};
    s.source_angle_deg = rng.uniform(0.0, 180.0);
    s.source_distance = 1.0 + rng.uniform(-0.5, 0.5);
    s.snr_db = rng.uniform(-3.0, 20.0);
    if (s.source_inside()) return s;
  }
  fail(ErrorCode::kInput, "could not place a source inside the room after 100 draws");
}

double sabine_reflection(const RoomSpec& spec, double speed_of_sound) {
  const double volume = spec.room.x * spec.room.y * spec.room.z;
  const double surface =
      2.0 * (spec.room.x * spec.room.y + spec.room.x * spec.room.z + spec.room.y * spec.room.z);
  if (spec.t60 <= 0.0) return 0.0;
  const double alpha = 24.0 * std::log(10.0) * volume / (speed_of_sound * surface * spec.t60);
  return std::sqrt(std::max(0.0, 1.0 - std::min(alpha, 1.0)));
}

Rir simulate_rir(const RoomSpec& spec, const RirOptions& options) {
  const Vec3 src = spec.source_position();
  const Vec3 mic = spec.mic;
  const double fs = options.sample_rate;
  const double c = options.speed_of_sound;
  const double dx = src.x - mic.x, dy = src.y - mic.y, dz = src.z - mic.z;
  const double direct = std::sqrt(dx * dx + dy * dy + dz * dz);
  if (direct < 1e-6) fail(ErrorCode::kInput, "source and microphone coincide");
  if (spec.room.x <= 0 || spec.room.y <= 0 || spec.room.z <= 0) {
    fail(ErrorCode::kInput, "room dimensions must be positive");
  }
  const double beta = options.reflection_override ? *options.reflection_override
                                                  : sabine_reflection(spec, c);
  if (beta < 0.0 || beta > 1.0) fail(ErrorCode::kParameter, "reflection coefficient outside [0,1]");

  Rir rir;
  rir.reflection = beta;
  rir.direct_delay_samples = std::size_t(std::lround(direct / c * fs));
  const std::size_t length =
      rir.direct_delay_samples + std::size_t(std::ceil(std::max(spec.t60, 0.0) * fs)) + 1;
  rir.taps.assign(length, 0.0);
  const double max_path = double(length) / fs * c;

  const Vec3 dims = spec.room;
  const auto range = [&](double extent) { return long(std::ceil(max_path / (2.0 * extent))) + 1; };
  const long nx = range(dims.x), ny = range(dims.y), nz = range(dims.z);
  const long max_order = 2 * (nx + ny + nz) + 3;
  std::vector<double> beta_pow(std::size_t(max_order) + 1, 0.0);
  beta_pow[0] = 1.0;
  for (long k = 1; k <= max_order; ++k) beta_pow[std::size_t(k)] = beta_pow[std::size_t(k - 1)] * beta;

  for (int px = 0; px <= 1; ++px)
    for (int py = 0; py <= 1; ++py)
      for (int pz = 0; pz <= 1; ++pz)
        for (long ix = -nx; ix <= nx; ++ix) {
          const double ex = (1 - 2 * px) * src.x + 2.0 * double(ix) * dims.x - mic.x;
          const long ox = std::labs(ix - px) + std::labs(ix);
          if (std::abs(ex) > max_path) continue;
          for (long iy = -ny; iy <= ny; ++iy) {
            const double ey = (1 - 2 * py) * src.y + 2.0 * double(iy) * dims.y - mic.y;
            const long oy = std::labs(iy - py) + std::labs(iy);
            if (std::hypot(ex, ey) > max_path) continue;
            for (long iz = -nz; iz <= nz; ++iz) {
              const double ez = (1 - 2 * pz) * src.z + 2.0 * double(iz) * dims.z - mic.z;
              const long order = ox + oy + std::labs(iz - pz) + std::labs(iz);
              const double gain = beta_pow[std::size_t(order)];
              if (gain == 0.0) continue;
              const double r = std::sqrt(ex * ex + ey * ey + ez * ez);
              const auto delay = std::size_t(std::lround(r / c * fs));
              if (delay >= length) continue;
              rir.taps[delay] += gain / r;
            }
          }
        }
  if (options.high_pass && beta > 0.0) {
    const double direct_tap = 1.0 / direct;
    rir.taps[rir.direct_delay_samples] -= direct_tap;
    const double w = 2.0 * std::numbers::pi * 100.0 / fs;
    const double r1 = std::exp(-w), b1 = 2.0 * r1 * std::cos(w), b2 = -r1 * r1, a1 = -(1.0 + r1);
    double y0 = 0.0, y1 = 0.0, y2 = 0.0;
    for (double& t : rir.taps) {
      y2 = y1;
      y1 = y0;
      y0 = b1 * y1 + b2 * y2 + t;
      t = y0 + a1 * y1 + r1 * y2;
    }
    rir.taps[rir.direct_delay_samples] += direct_tap;
  }
  return rir;
}

MixResult mix_at_snr(const dsp::Waveform& reverb_speech, const dsp::Waveform& noise,
                     double snr_db) {
  const std::size_t n = reverb_speech.samples.size();
  double es = 0.0;
  for (float v : reverb_speech.samples) es += double(v) * v;
  if (n == 0 || es <= 0.0) fail(ErrorCode::kInput, "speech has zero energy");
  MixResult result;
  result.mixture.sample_rate = reverb_speech.sample_rate;
  result.mixture.samples.resize(n);
  std::vector<double> mix(reverb_speech.samples.begin(), reverb_speech.samples.end());
  if (!(std::isinf(snr_db) && snr_db > 0)) {
    if (noise.samples.empty()) fail(ErrorCode::kInput, "noise is empty");
    std::vector<double> tiled(n);
    for (std::size_t i = 0; i < n; ++i) tiled[i] = noise.samples[i % noise.samples.size()];
    double en = 0.0;
    for (double v : tiled) en += v * v;
    if (en <= 0.0) fail(ErrorCode::kInput, "noise has zero energy");
    result.noise_gain = std::sqrt(es / (en * std::pow(10.0, snr_db / 10.0)));
    for (std::size_t i = 0; i < n; ++i) mix[i] += result.noise_gain * tiled[i];
  }
  double peak = 0.0;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  if (peak > 0.99) result.peak_scale = 0.99 / peak;
  for (std::size_t i = 0; i < n; ++i) result.mixture.samples[i] = float(mix[i] * result.peak_scale);
  return result;
}

std::vector<double> frame_energies(std::span<const float> samples, const dsp::FrontendConfig& cfg) {
  const std::size_t frames = dsp::frame_count(samples.size(), cfg);
  if (frames == 0) {
    fail(ErrorCode::kInput, "signal has " + std::to_string(samples.size()) +
                                " samples; at least " + std::to_string(cfg.frame_length) +
                                " are needed for one frame");
  }
  const std::vector<double> w = dsp::hann_window(cfg.frame_length);
  std::vector<double> e(frames, 0.0);
  for (std::size_t l = 0; l < frames; ++l) {
    const float* x = samples.data() + l * cfg.hop;
    double acc = 0.0;
    for (std::size_t k = 0; k < cfg.frame_length; ++k) {
      const double v = w[k] * x[k];
      acc += v * v;
    }
    e[l] = acc * double(cfg.frame_length);
  }
  return e;
}

namespace {

std::uint8_t label_for(double energy, double reference_db, double th_db) {
  if (energy <= 0.0) return 0;
  return 10.0 * std::log10(energy) >= reference_db + th_db ? 1 : 0;
}

}  // namespace

std::vector<std::uint8_t> energy_vad_labels(const dsp::Waveform& clean, double th_db,
                                            const dsp::FrontendConfig& cfg) {
  const std::vector<double> e = frame_energies(clean.samples, cfg);
  std::vector<std::uint8_t> labels(e.size(), 0);
  const double peak = *std::max_element(e.begin(), e.end());
  if (peak <= 0.0) return labels;
  const double reference_db = 10.0 * std::log10(peak);
  for (std::size_t l = 0; l < e.size(); ++l) labels[l] = label_for(e[l], reference_db, th_db);
  return labels;
}

BalancedSpeech balance_silence(const dsp::Waveform& speech, std::span<const std::uint8_t> labels,
                               Rng& rng, double target_ratio, double th_db,
                               const dsp::FrontendConfig& cfg) {
  if (!(target_ratio > 0.0 && target_ratio < 1.0)) {
    fail(ErrorCode::kParameter, "target ratio must lie in (0,1)");
  }
  BalancedSpeech out{speech, std::vector<std::uint8_t>(labels.begin(), labels.end()), 0};
  const auto speech_frames = [&] {
    return std::size_t(std::count(out.labels.begin(), out.labels.end(), std::uint8_t(1)));
  };
  const auto over_target = [&] {
    return out.labels.empty() ||
           double(speech_frames()) / double(out.labels.size()) > target_ratio + 0.05;
  };
  if (out.labels.empty() || !over_target()) return out;

  const std::vector<double> energies = frame_energies(speech.samples, cfg);
  if (energies.size() != out.labels.size()) {
    fail(ErrorCode::kDimension, "labels do not match the frame count of the speech");
  }
  const auto peak_it = std::max_element(energies.begin(), energies.end());
  if (*peak_it <= 0.0) return out;
  const double reference_db = 10.0 * std::log10(*peak_it);
  std::size_t peak_frame = std::size_t(peak_it - energies.begin());
  const std::vector<double> window = dsp::hann_window(cfg.frame_length);
  const std::size_t hop = cfg.hop;

  const auto insert_segment = [&](std::size_t frames_to_insert) {
    const std::size_t frames = out.labels.size();
    // Boundary b splits old frame b-1; never split the reference (loudest) frame.
    std::size_t b = 0;
    do {
      b = std::size_t(rng.uniform_int(0, std::int64_t(frames) - 1));
    } while (frames > 1 && b == peak_frame + 1);
    auto& x = out.speech.samples;
    x.insert(x.begin() + long(b * hop), frames_to_insert * hop, 0.0f);
    std::vector<std::uint8_t> relabeled(frames + frames_to_insert, 0);
    for (std::size_t l = 0; l + 1 < b; ++l) relabeled[l] = out.labels[l];
    for (std::size_t l = b; l < frames; ++l) relabeled[l + frames_to_insert] = out.labels[l];
    const std::size_t first_touched = b == 0 ? 0 : b - 1;
    for (std::size_t l = first_touched; l < b + frames_to_insert; ++l) {
      double acc = 0.0;
      for (std::size_t k = 0; k < cfg.frame_length; ++k) {
        const double v = window[k] * x[l * hop + k];
        acc += v * v;
      }
      relabeled[l] = label_for(acc * double(cfg.frame_length), reference_db, th_db);
    }
    if (peak_frame >= b) peak_frame += frames_to_insert;
    out.labels = std::move(relabeled);
    out.inserted_frames += frames_to_insert;
  };

  for (int round = 0; round < 64 && over_target(); ++round) {
    const double s = double(speech_frames());
    const auto needed = std::size_t(std::max(
        1.0, std::ceil(s / target_ratio) - double(out.labels.size())));
    const auto segments = std::size_t(rng.uniform_int(1, std::int64_t(std::min<std::size_t>(3, needed))));
    // Random composition of `needed` into `segments` positive parts.
    std::vector<std::size_t> cuts{0, needed};
    while (cuts.size() < segments + 1) {
      const auto c = std::size_t(rng.uniform_int(1, std::int64_t(needed) - 1));
      if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
    }
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) insert_segment(cuts[i + 1] - cuts[i]);
  }
  return out;
}

LabeledExample synthesize_scene(const dsp::Waveform& clean, const dsp::Waveform& noise, Rng& rng,
                                const SceneOptions& options) {
  if (clean.sample_rate != dsp::kSampleRate || noise.sample_rate != dsp::kSampleRate) {
    fail(ErrorCode::kInput, "scene sources must be sampled at 8000 Hz");
  }
  LabeledExample ex;
  ex.labels = energy_vad_labels(clean, options.th_db);
  ex.clean = clean;
  if (options.balance) {
    BalancedSpeech b = balance_silence(clean, ex.labels, rng, options.target_ratio, options.th_db);
    ex.clean = std::move(b.speech);
    ex.labels = std::move(b.labels);
    ex.meta.inserted_silence_frames = b.inserted_frames;
  }
  ex.meta.room = sample_room(rng);
  const double snr = options.snr_override ? *options.snr_override : ex.meta.room.snr_db;
  ex.meta.snr_db = snr;
  RirOptions rir_opts;
  rir_opts.reflection_override = options.reflection_override;
  const Rir rir = simulate_rir(ex.meta.room, rir_opts);
  ex.meta.direct_delay_samples = rir.direct_delay_samples;

  const std::size_t n = ex.clean.samples.size();
  const auto reverberate = [&](const std::vector<float>& dry) {
    std::vector<double> d(dry.begin(), dry.end());
    std::vector<double> wet = dsp::fft_convolve(d, rir.taps);
    dsp::Waveform w;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = float(wet[i]);
    return w;
  };
  const dsp::Waveform wet_speech = reverberate(ex.clean.samples);
  dsp::Waveform noise_in = noise;
  if (options.reverberant_noise && !noise.samples.empty()) {
    std::vector<float> tiled(n);
    for (std::size_t i = 0; i < n; ++i) tiled[i] = noise.samples[i % noise.samples.size()];
    noise_in = reverberate(tiled);
  }
  MixResult mix = mix_at_snr(wet_speech, noise_in, snr);
  ex.mixture = std::move(mix.mixture);
  ex.meta.noise_gain = mix.noise_gain;
  ex.meta.peak_scale = mix.peak_scale;
  return ex;
}

}  // namespace vadforge::acoustics
