#include "vadforge/corpus.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numbers>

#include "vadforge/error.hpp"
#include "vadforge/parallel.hpp"
#include "vadforge/wav.hpp"

namespace vadforge::corpus {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void render_syllable(std::vector<double>& x, std::size_t start, std::size_t length, double f0_a,
                     double f0_b, double f1, double f2, double bw1, double bw2, double fs) {
  const double f0_mid = 0.5 * (f0_a + f0_b);
  const auto harmonics = std::size_t(3800.0 / std::max(f0_a, f0_b));
  std::vector<double> amp(harmonics + 1, 0.0);
  for (std::size_t h = 1; h <= harmonics; ++h) {
    const double f = double(h) * f0_mid;
    const double g1 = std::exp(-0.5 * std::pow((f - f1) / bw1, 2.0));
    const double g2 = std::exp(-0.5 * std::pow((f - f2) / bw2, 2.0));
    amp[h] = (g1 + 0.7 * g2 + 0.05) / std::pow(double(h), 0.6);
  }
  double phase = 0.0;
  for (std::size_t i = 0; i < length && start + i < x.size(); ++i) {
    const double u = double(i) / double(length);
    const double f0 = f0_a + (f0_b - f0_a) * u;
    phase += kTwoPi * f0 / fs;
    double v = 0.0;
    for (std::size_t h = 1; h <= harmonics; ++h) v += amp[h] * std::sin(double(h) * phase);
    x[start + i] += std::pow(std::sin(std::numbers::pi * u), 0.7) * v;
  }
}

std::size_t split_code(Split s) { return static_cast<std::size_t>(s); }

std::vector<std::filesystem::path> list_wavs(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::kInput, "source pool '" + dir + "' is not a directory");
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 3) {
    fail(ErrorCode::kInput, "source pool '" + dir + "' needs at least 3 WAV files (one per split)");
  }
  return files;
}

// Shuffles once, then carves disjoint train/val/test pools (80/10/10, each non-empty).
std::array<std::vector<std::filesystem::path>, 3> partition_pool(std::vector<std::filesystem::path> files,
                                                                 Rng rng) {
  std::shuffle(files.begin(), files.end(), rng.engine());
  const std::size_t n = files.size();
  const std::size_t n_val = std::max<std::size_t>(1, n / 10);
  const std::size_t n_test = std::max<std::size_t>(1, n / 10);
  const std::size_t n_train = n - n_val - n_test;
  std::array<std::vector<std::filesystem::path>, 3> pools;
  pools[0].assign(files.begin(), files.begin() + long(n_train));
  pools[1].assign(files.begin() + long(n_train), files.begin() + long(n_train + n_val));
  pools[2].assign(files.begin() + long(n_train + n_val), files.end());
  return pools;
}

dsp::Waveform load_source(const std::filesystem::path& path) {
  dsp::Waveform w = dsp::read_wav(path);
  if (w.sample_rate != dsp::kSampleRate) w = dsp::resample(w, dsp::kSampleRate);
  return w;
}

}  // namespace

dsp::Waveform synth_speech(Rng& rng, double seconds) {
  const double fs = dsp::kSampleRate;
  std::vector<double> x(std::size_t(seconds * fs), 0.0);
  const double f0_speaker = rng.uniform(90.0, 220.0);
  double t = rng.uniform(0.2, 1.0);
  bool room_left = true;
  while (room_left) {
    const auto syllables = rng.uniform_int(2, 7);
    for (std::int64_t s = 0; s < syllables; ++s) {
      const double dur = rng.uniform(0.12, 0.35);
      if (t + dur > seconds - 0.1) {
        room_left = false;
        break;
      }
      const double f0_a = f0_speaker * rng.uniform(0.85, 1.2);
      const double f0_b = f0_a * rng.uniform(0.8, 1.25);
      const double f1 = rng.uniform(300.0, 900.0);
      const double f2 = rng.uniform(900.0, 2600.0);
      render_syllable(x, std::size_t(t * fs), std::size_t(dur * fs), f0_a, f0_b, f1, f2,
                      rng.uniform(80.0, 200.0), rng.uniform(120.0, 250.0), fs);
      t += dur + rng.uniform(0.02, 0.07);
    }
    t += rng.uniform(0.25, 1.2);
    if (t > seconds - 0.3) room_left = false;
  }
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const double level = rng.uniform(0.1, 0.5);
  dsp::Waveform w;
  w.samples.resize(x.size());
  const double g = peak > 0.0 ? level / peak : 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) w.samples[i] = float(x[i] * g);
  return w;
}

dsp::Waveform synth_noise(Rng& rng, double seconds) {
  const double fs = dsp::kSampleRate;
  const std::size_t n = std::size_t(seconds * fs);
  std::vector<double> white(n), coloured(n);
  for (double& v : white) v = rng.normal();
  const double pole = rng.uniform(0.0, 0.95);
  double state = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    state = pole * state + (1.0 - pole) * white[i];
    coloured[i] = state;
  }
  const auto rms = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double a : v) s += a * a;
    return std::sqrt(s / double(std::max<std::size_t>(1, v.size())));
  };
  const double rw = rms(white), rc = rms(coloured);
  const double blend = rng.uniform(0.0, 1.0);
  const double depth = rng.uniform(0.0, 0.6);
  const double fm = rng.uniform(0.1, 2.0);
  const double phase = rng.uniform(0.0, kTwoPi);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double base = blend * white[i] / rw + (1.0 - blend) * coloured[i] / std::max(rc, 1e-12);
    x[i] = base * (1.0 + depth * std::sin(kTwoPi * fm * double(i) / fs + phase));
  }
  const double rate = rng.uniform(0.1, 0.8);
  const auto bursts = rng.uniform_int(0, std::int64_t(std::ceil(rate * seconds)));
  for (std::int64_t b = 0; b < bursts; ++b) {
    const auto start = std::size_t(rng.uniform_int(0, std::int64_t(n) - 1));
    const double dur = rng.uniform(0.01, 0.15);
    const double amp = rng.uniform(2.0, 6.0);
    const bool bright = rng.bernoulli(0.5);
    const auto len = std::size_t(dur * fs);
    double prev = 0.0;
    for (std::size_t i = 0; i < len && start + i < n; ++i) {
      const double g = rng.normal();
      const double v = bright ? g - prev : g;
      prev = g;
      x[start + i] += amp * std::exp(-3.0 * double(i) / double(len)) * v;
    }
  }
  const double r = rms(x);
  dsp::Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = float(0.1 * x[i] / std::max(r, 1e-12));
  return w;
}

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  fail(ErrorCode::kInput, "unknown split '" + name + "'");
}

void to_json(nlohmann::json& j, const ManifestRecord& r) {
  j = nlohmann::json{{"id", r.id},
                     {"wav_path", r.wav_path},
                     {"label_path", r.label_path},
                     {"room_spec", r.room_spec},
                     {"snr_db", r.snr_db},
                     {"split", to_string(r.split)},
                     {"speech_id", r.speech_id},
                     {"noise_id", r.noise_id}};
}

void from_json(const nlohmann::json& j, ManifestRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.wav_path = j.at("wav_path").get<std::string>();
  r.label_path = j.at("label_path").get<std::string>();
  if (j.contains("room_spec") && !j.at("room_spec").is_null())
    r.room_spec = j.at("room_spec").get<acoustics::RoomSpec>();
  r.snr_db = j.value("snr_db", 0.0);
  r.split = split_from_string(j.at("split").get<std::string>());
  r.speech_id = j.value("speech_id", std::string());
  r.noise_id = j.value("noise_id", std::string());
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write manifest " + path.string());
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(nlohmann::json::parse(line).get<ManifestRecord>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kInput, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void write_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write labels " + path.string());
  std::string line(labels.size(), '0');
  for (std::size_t i = 0; i < labels.size(); ++i) line[i] = labels[i] ? '1' : '0';
  out << line << '\n';
}

std::vector<std::uint8_t> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open labels " + path.string());
  std::string line;
  std::getline(in, line);
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
  std::vector<std::uint8_t> labels(line.size());
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] != '0' && line[i] != '1') {
      fail(ErrorCode::kInput, path.string() + ": label characters must be '0' or '1'");
    }
    labels[i] = line[i] == '1';
  }
  return labels;
}

void to_json(nlohmann::json& j, const SynthConfig& cfg) {
  j = nlohmann::json{{"n_train", cfg.n_train},
                     {"n_val", cfg.n_val},
                     {"n_test", cfg.n_test},
                     {"seed", cfg.seed},
                     {"min_seconds", cfg.min_seconds},
                     {"max_seconds", cfg.max_seconds},
                     {"speech_dir", cfg.speech_dir},
                     {"noise_dir", cfg.noise_dir},
                     {"th_db", cfg.scene.th_db},
                     {"target_ratio", cfg.scene.target_ratio},
                     {"balance", cfg.scene.balance},
                     {"reverberant_noise", cfg.scene.reverberant_noise}};
}

void from_json(const nlohmann::json& j, SynthConfig& cfg) {
  static const char* kKeys[] = {"n_train",    "n_val",     "n_test", "seed",
                                "min_seconds", "max_seconds", "speech_dir", "noise_dir",
                                "th_db",      "target_ratio", "balance", "reverberant_noise"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
      fail(ErrorCode::kConfig, "unknown synth key '" + key + "'");
  }
  SynthConfig d;
  cfg.n_train = j.value("n_train", d.n_train);
  cfg.n_val = j.value("n_val", d.n_val);
  cfg.n_test = j.value("n_test", d.n_test);
  cfg.seed = j.value("seed", d.seed);
  cfg.min_seconds = j.value("min_seconds", d.min_seconds);
  cfg.max_seconds = j.value("max_seconds", d.max_seconds);
  cfg.speech_dir = j.value("speech_dir", d.speech_dir);
  cfg.noise_dir = j.value("noise_dir", d.noise_dir);
  cfg.scene.th_db = j.value("th_db", d.scene.th_db);
  cfg.scene.target_ratio = j.value("target_ratio", d.scene.target_ratio);
  cfg.scene.balance = j.value("balance", d.scene.balance);
  cfg.scene.reverberant_noise = j.value("reverberant_noise", d.scene.reverberant_noise);
  if (cfg.min_seconds <= 0.2 || cfg.max_seconds < cfg.min_seconds) {
    fail(ErrorCode::kConfig, "invalid utterance duration range");
  }
}

std::vector<ManifestRecord> build_dataset(const SynthConfig& cfg,
                                          const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "wav", ec);
  fs::create_directories(out_dir / "labels", ec);
  if (ec || !fs::is_directory(out_dir / "wav")) {
    fail(ErrorCode::kIo, "cannot create dataset directory " + out_dir.string());
  }
  const bool external_speech = !cfg.speech_dir.empty();
  const bool external_noise = !cfg.noise_dir.empty();
  std::array<std::vector<fs::path>, 3> speech_pools, noise_pools;
  if (external_speech) speech_pools = partition_pool(list_wavs(cfg.speech_dir), Rng::derive(cfg.seed, {101}));
  if (external_noise) noise_pools = partition_pool(list_wavs(cfg.noise_dir), Rng::derive(cfg.seed, {202}));

  struct Job {
    Split split;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < cfg.n_train; ++i) jobs.push_back({Split::kTrain, i});
  for (std::size_t i = 0; i < cfg.n_val; ++i) jobs.push_back({Split::kVal, i});
  for (std::size_t i = 0; i < cfg.n_test; ++i) jobs.push_back({Split::kTest, i});

  std::vector<ManifestRecord> records(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t k) {
    const Job job = jobs[k];
    const std::size_t sc = split_code(job.split);
    char id_buf[32];
    std::snprintf(id_buf, sizeof(id_buf), "%s-%05zu", to_string(job.split), job.index);
    const std::string id = id_buf;

    Rng speech_rng = Rng::derive(cfg.seed, {sc, job.index, 1});
    Rng noise_rng = Rng::derive(cfg.seed, {sc, job.index, 2});
    Rng scene_rng = Rng::derive(cfg.seed, {sc, job.index, 3});

    dsp::Waveform speech, noise;
    std::string speech_id, noise_id;
    if (external_speech) {
      const auto& pool = speech_pools[sc];
      const auto& file = pool[std::size_t(speech_rng.uniform_int(0, std::int64_t(pool.size()) - 1))];
      speech = load_source(file);
      speech_id = file.stem().string();
    } else {
      speech = synth_speech(speech_rng, speech_rng.uniform(cfg.min_seconds, cfg.max_seconds));
      speech_id = "synth-speech-" + id;
    }
    if (external_noise) {
      const auto& pool = noise_pools[sc];
      const auto& file = pool[std::size_t(noise_rng.uniform_int(0, std::int64_t(pool.size()) - 1))];
      noise = load_source(file);
      noise_id = file.stem().string();
    } else {
      noise = synth_noise(noise_rng, 20.0);
      noise_id = "synth-noise-" + id;
    }
    acoustics::LabeledExample ex = acoustics::synthesize_scene(speech, noise, scene_rng, cfg.scene);

    ManifestRecord r;
    r.id = id;
    r.wav_path = "wav/" + id + ".wav";
    r.label_path = "labels/" + id + ".txt";
    r.room_spec = ex.meta.room;
    r.snr_db = ex.meta.snr_db;
    r.split = job.split;
    r.speech_id = speech_id;
    r.noise_id = noise_id;
    dsp::write_wav(out_dir / r.wav_path, ex.mixture);
    write_labels(out_dir / r.label_path, ex.labels);
    records[k] = std::move(r);
  });
  write_manifest(out_dir / "manifest.jsonl", records);
  return records;
}

}  // namespace vadforge::corpus
