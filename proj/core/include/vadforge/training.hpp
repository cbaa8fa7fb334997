#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vadforge/corpus.hpp"
#include "vadforge/frontend.hpp"
#include "vadforge/metrics.hpp"
#include "vadforge/model.hpp"
#include "vadforge/rng.hpp"

namespace vadforge::training {

struct SpecAugmentConfig {
  std::size_t freq_masks = 2;
  std::size_t freq_width = 20;
  std::size_t time_masks = 2;
  std::size_t time_width = 30;
};

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 1e-5;
  double momentum = 0.0;
  std::size_t batch_size = 128;
  std::size_t crop_frames = 256;
  std::size_t epochs = 100;
  /// Stop after this many epochs without a new best validation AUC (0 = never).
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  bool augment = true;
  SpecAugmentConfig spec_augment;

  void validate() const;
};

void to_json(nlohmann::json& j, const SpecAugmentConfig& cfg);
void from_json(const nlohmann::json& j, SpecAugmentConfig& cfg);
void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

/// Log-mel features and frame labels of one manifest entry.
struct Utterance {
  std::string id;
  dsp::MelFrames mel;
  std::vector<std::uint8_t> labels;
};

/// Loads every record of `split` with un-normalized features (the frontend's
/// statistics are ignored). Label count must match the frame count.
std::vector<Utterance> load_split(const std::filesystem::path& manifest, corpus::Split split,
                                  const dsp::FrontendConfig& frontend);

/// Fits per-band statistics on `train` and stores them in `frontend`.
void fit_normalization(dsp::FrontendConfig& frontend, std::span<const Utterance> train);
void normalize(std::span<Utterance> utterances, const dsp::FrontendConfig& frontend);

struct Crop {
  std::vector<float> mel;  // [frames, bands]
  std::vector<std::uint8_t> labels;
  std::size_t start = 0;
  bool padded = false;  // utterance was shorter than the crop; tail is zeros labelled 0
};

/// Contiguous window of `frames` frames at a uniform random start.
Crop crop_random(const Utterance& u, Rng& rng, std::size_t frames);

/// Masks random frequency and time bands of a [frames, bands] block with its
/// mean value. Mask widths are drawn from U{0..width} and clamped to the axis.
void spec_augment(std::span<float> mel, std::size_t frames, std::size_t bands, Rng& rng,
                  const SpecAugmentConfig& cfg);

/// Plain SGD with the L2 term folded into the gradient and optional momentum:
/// g' = g + wd w;  v = mu v + g';  w -= lr v   (v = g' when mu = 0).
template <typename T>
class Sgd {
 public:
  Sgd(model::Named<T> params, double lr, double weight_decay, double momentum = 0.0);
  void step();
  void set_lr(double lr) { lr_ = lr; }

 private:
  model::Named<T> params_;
  std::vector<std::vector<T>> velocity_;
  double lr_, weight_decay_, momentum_;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

/// Whole-sequence probabilities, or independent chunks of segment_frames
/// frames when segment_frames > 0.
std::vector<float> infer(model::VadModel<float>& model, const dsp::MelFrames& mel,
                         std::size_t segment_frames = 0);

struct EvalOptions {
  std::size_t segment_frames = 0;
  std::size_t smooth_window = 1;
};

struct UtteranceScore {
  std::string id;
  double auc = 0.0;  // NaN when the utterance has a single class
  double eer = 0.0;
};

struct EvalResult {
  double auc = 0.0;  // pooled over all frames
  double eer = 0.0;
  std::vector<metrics::RocPoint> roc;
  double mean_utterance_auc = 0.0;  // over utterances with both classes
  double mean_utterance_eer = 0.0;
  std::vector<UtteranceScore> per_utterance;
  std::size_t frames = 0;
};

EvalResult evaluate(model::VadModel<float>& model, std::span<const Utterance> utterances,
                    const EvalOptions& options = {});

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  double val_eer = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
  std::unique_ptr<model::VadModel<float>> model;  // best-validation weights
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Epoch loop: shuffle, crop, augment, forward, BCE, backward, SGD step; then
/// whole-sequence validation. Inputs must already be normalized. Throws
/// kNumeric (with the epoch and batch) if the loss becomes non-finite.
TrainResult train(const model::ModelConfig& model_cfg, const TrainConfig& cfg,
                  std::span<const Utterance> train_set, std::span<const Utterance> val_set,
                  const EpochCallback& on_epoch = {});

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> history);

}  // namespace vadforge::training
