#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <algorithm>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "vadforge/corpus.hpp"
#include "vadforge/error.hpp"
#include "vadforge/wav.hpp"

using namespace vadforge;
using namespace vadforge::corpus;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("vadforge_corpus_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SynthConfig small_config(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_train = 3;
  cfg.n_val = 1;
  cfg.n_test = 2;
  cfg.seed = seed;
  cfg.min_seconds = 3.0;
  cfg.max_seconds = 4.0;
  return cfg;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no vadforge::Error thrown";
  return ErrorCode::kNumeric;
}

}  // namespace

TEST(Sources, SpeechHasPausesAndVoicedRegions) {
  Rng rng(1);
  const auto w = synth_speech(rng, 8.0);
  EXPECT_EQ(w.sample_rate, 8000);
  EXPECT_NEAR(double(w.samples.size()), 8.0 * 8000.0, 8000.0);
  std::size_t zeros = 0;
  float peak = 0.0f;
  for (float v : w.samples) {
    zeros += v == 0.0f;
    peak = std::max(peak, std::abs(v));
  }
  EXPECT_GT(zeros, w.samples.size() / 10);
  EXPECT_LT(zeros, w.samples.size() * 9 / 10);
  EXPECT_GE(peak, 0.1f - 1e-6f);
  EXPECT_LE(peak, 0.5f + 1e-6f);
}

TEST(Sources, NoiseIsContinuousAtFixedRms) {
  Rng rng(2);
  const auto w = synth_noise(rng, 5.0);
  double s = 0.0;
  std::size_t zeros = 0;
  for (float v : w.samples) {
    s += double(v) * v;
    zeros += v == 0.0f;
  }
  EXPECT_NEAR(std::sqrt(s / double(w.samples.size())), 0.1, 1e-3);
  EXPECT_LT(zeros, w.samples.size() / 1000 + 1);
}

TEST(Sources, SeededStreamsAreReproducible) {
  Rng a(9), b(9);
  EXPECT_EQ(synth_speech(a, 2.0).samples, synth_speech(b, 2.0).samples);
}

TEST(Labels, RoundTripAndValidation) {
  const auto dir = temp_dir("labels");
  const std::vector<std::uint8_t> labels{0, 1, 1, 0, 1};
  write_labels(dir / "a.txt", labels);
  EXPECT_EQ(slurp(dir / "a.txt"), "01101\n");
  EXPECT_EQ(read_labels(dir / "a.txt"), labels);
  std::ofstream(dir / "bad.txt") << "0102\n";
  EXPECT_EQ(code_of([&] { read_labels(dir / "bad.txt"); }), ErrorCode::kInput);
  EXPECT_EQ(code_of([&] { read_labels(dir / "missing.txt"); }), ErrorCode::kIo);
}

TEST(Manifest, SplitNames) {
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) EXPECT_EQ(split_from_string(to_string(s)), s);
  EXPECT_EQ(code_of([] { split_from_string("dev"); }), ErrorCode::kInput);
}

TEST(Manifest, RoundTripAndMalformedLine) {
  const auto dir = temp_dir("manifest");
  ManifestRecord r;
  r.id = "test-00001";
  r.wav_path = "wav/test-00001.wav";
  r.label_path = "labels/test-00001.txt";
  r.snr_db = 4.5;
  r.split = Split::kTest;
  r.speech_id = "s";
  r.noise_id = "n";
  r.room_spec.t60 = 0.33;
  write_manifest(dir / "m.jsonl", {r, r});
  const auto back = read_manifest(dir / "m.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].id, r.id);
  EXPECT_EQ(back[1].split, Split::kTest);
  EXPECT_EQ(back[1].snr_db, 4.5);
  EXPECT_EQ(back[1].room_spec.t60, 0.33);

  std::ofstream(dir / "bad.jsonl") << "{\"id\": 3\n";
  EXPECT_EQ(code_of([&] { read_manifest(dir / "bad.jsonl"); }), ErrorCode::kInput);
}

TEST(SynthConfig, StrictKeys) {
  nlohmann::json j = small_config(4);
  EXPECT_EQ(j.get<SynthConfig>().n_train, 3u);
  j["n_trian"] = 5;
  EXPECT_EQ(code_of([&] { j.get<SynthConfig>(); }), ErrorCode::kConfig);
}

TEST(Dataset, LayoutAndLabelCounts) {
  const auto dir = temp_dir("layout");
  const auto records = build_dataset(small_config(5), dir);
  ASSERT_EQ(records.size(), 6u);
  EXPECT_EQ(records[0].id, "train-00000");
  EXPECT_EQ(records[3].id, "val-00000");
  EXPECT_EQ(records[5].id, "test-00001");
  const auto manifest = read_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(manifest.size(), records.size());
  for (const auto& r : manifest) {
    const auto wave = dsp::read_wav(dir / r.wav_path);
    const auto labels = read_labels(dir / r.label_path);
    EXPECT_EQ(labels.size(), dsp::frame_count(wave.samples.size())) << r.id;
    const double speech = double(std::count(labels.begin(), labels.end(), std::uint8_t(1)));
    EXPECT_GT(speech, 0.0);
    EXPECT_LE(speech / double(labels.size()), 0.55 + 1e-9);
    EXPECT_GE(r.snr_db, -3.0);
    EXPECT_LE(r.snr_db, 20.0);
  }
}

TEST(Dataset, DeterministicPerSeed) {
  const auto a = temp_dir("det_a");
  const auto b = temp_dir("det_b");
  const auto c = temp_dir("det_c");
  build_dataset(small_config(7), a);
  build_dataset(small_config(7), b);
  build_dataset(small_config(8), c);
  EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
  EXPECT_EQ(slurp(a / "wav/train-00001.wav"), slurp(b / "wav/train-00001.wav"));
  EXPECT_EQ(slurp(a / "labels/test-00000.txt"), slurp(b / "labels/test-00000.txt"));
  EXPECT_NE(slurp(a / "wav/train-00001.wav"), slurp(c / "wav/train-00001.wav"));
}

TEST(Dataset, ExamplesDoNotDependOnSplitSizes) {
  // Each example has its own stream, so growing one split leaves the others intact.
  const auto a = temp_dir("sizes_a");
  const auto b = temp_dir("sizes_b");
  auto cfg = small_config(3);
  build_dataset(cfg, a);
  cfg.n_train = 1;
  build_dataset(cfg, b);
  EXPECT_EQ(slurp(a / "wav/test-00001.wav"), slurp(b / "wav/test-00001.wav"));
  EXPECT_EQ(slurp(a / "wav/train-00000.wav"), slurp(b / "wav/train-00000.wav"));
}

TEST(Dataset, ExternalPoolsAreDisjointAcrossSplits) {
  const auto root = temp_dir("pools");
  fs::create_directories(root / "speech");
  fs::create_directories(root / "noise");
  for (int i = 0; i < 10; ++i) {
    Rng rng(std::uint64_t(100 + i));
    auto s = synth_speech(rng, 3.0);
    if (i % 3 == 0) {
      // A 16 kHz source: crude 2x upsampling is enough to exercise resampling.
      dsp::Waveform up{{}, 16000};
      for (float v : s.samples) up.samples.insert(up.samples.end(), {v, v});
      s = up;
    }
    dsp::write_wav(root / "speech" / ("spk" + std::to_string(i) + ".wav"), s);
    dsp::write_wav(root / "noise" / ("nz" + std::to_string(i) + ".wav"), synth_noise(rng, 2.0));
  }
  SynthConfig cfg = small_config(11);
  cfg.n_train = 6;
  cfg.n_val = 3;
  cfg.n_test = 3;
  cfg.speech_dir = (root / "speech").string();
  cfg.noise_dir = (root / "noise").string();
  const auto records = build_dataset(cfg, root / "out");
  std::map<Split, std::set<std::string>> speech, noise;
  for (const auto& r : records) {
    speech[r.split].insert(r.speech_id);
    noise[r.split].insert(r.noise_id);
  }
  for (Split x : {Split::kTrain, Split::kVal, Split::kTest})
    for (Split y : {Split::kTrain, Split::kVal, Split::kTest}) {
      if (x == y) continue;
      for (const auto& id : speech[x]) EXPECT_EQ(speech[y].count(id), 0u) << id;
      for (const auto& id : noise[x]) EXPECT_EQ(noise[y].count(id), 0u) << id;
    }
}

TEST(Dataset, MissingPoolIsInputError) {
  SynthConfig cfg = small_config(1);
  cfg.speech_dir = "/nonexistent/pool";
  const auto dir = temp_dir("missing_pool");
  EXPECT_EQ(code_of([&] { build_dataset(cfg, dir); }), ErrorCode::kInput);
}
