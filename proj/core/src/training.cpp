#include "vadforge/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "vadforge/checkpoint.hpp"
#include "vadforge/error.hpp"
#include "vadforge/ops.hpp"
#include "vadforge/parallel.hpp"
#include "vadforge/wav.hpp"

namespace vadforge::training {

void TrainConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::kConfig, "train config: " + msg); };
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr must be positive");
  if (weight_decay < 0.0) bad("weight_decay must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) bad("momentum must lie in [0,1)");
  if (batch_size == 0 || crop_frames == 0 || epochs == 0) bad("batch_size, crop_frames and epochs must be positive");
}

void to_json(nlohmann::json& j, const SpecAugmentConfig& cfg) {
  j = nlohmann::json{{"freq_masks", cfg.freq_masks},
                     {"freq_width", cfg.freq_width},
                     {"time_masks", cfg.time_masks},
                     {"time_width", cfg.time_width}};
}

void from_json(const nlohmann::json& j, SpecAugmentConfig& cfg) {
  for (const auto& [key, value] : j.items()) {
    if (key != "freq_masks" && key != "freq_width" && key != "time_masks" && key != "time_width")
      fail(ErrorCode::kConfig, "unknown spec_augment key '" + key + "'");
  }
  SpecAugmentConfig d;
  cfg.freq_masks = j.value("freq_masks", d.freq_masks);
  cfg.freq_width = j.value("freq_width", d.freq_width);
  cfg.time_masks = j.value("time_masks", d.time_masks);
  cfg.time_width = j.value("time_width", d.time_width);
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"lr", cfg.lr},
                     {"weight_decay", cfg.weight_decay},
                     {"momentum", cfg.momentum},
                     {"batch_size", cfg.batch_size},
                     {"crop_frames", cfg.crop_frames},
                     {"epochs", cfg.epochs},
                     {"patience", cfg.patience},
                     {"seed", cfg.seed},
                     {"augment", cfg.augment},
                     {"spec_augment", cfg.spec_augment}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  static const char* kKeys[] = {"lr",     "weight_decay", "momentum", "batch_size", "crop_frames",
                                "epochs", "patience",     "seed",     "augment",    "spec_augment"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
      fail(ErrorCode::kConfig, "unknown train key '" + key + "'");
  }
  TrainConfig d;
  cfg.lr = j.value("lr", d.lr);
  cfg.weight_decay = j.value("weight_decay", d.weight_decay);
  cfg.momentum = j.value("momentum", d.momentum);
  cfg.batch_size = j.value("batch_size", d.batch_size);
  cfg.crop_frames = j.value("crop_frames", d.crop_frames);
  cfg.epochs = j.value("epochs", d.epochs);
  cfg.patience = j.value("patience", d.patience);
  cfg.seed = j.value("seed", d.seed);
  cfg.augment = j.value("augment", d.augment);
  cfg.spec_augment = j.value("spec_augment", d.spec_augment);
  cfg.validate();
}

std::vector<Utterance> load_split(const std::filesystem::path& manifest, corpus::Split split,
                                  const dsp::FrontendConfig& frontend) {
  const auto records = corpus::read_manifest(manifest);
  const std::filesystem::path root = manifest.parent_path();
  std::vector<const corpus::ManifestRecord*> selected;
  for (const auto& r : records)
    if (r.split == split) selected.push_back(&r);
  dsp::FrontendConfig raw = frontend;
  raw.normalize = false;
  std::vector<Utterance> out(selected.size());
  parallel_for(selected.size(), [&](std::size_t i) {
    const auto& r = *selected[i];
    dsp::Waveform w = dsp::read_wav(root / r.wav_path);
    if (w.sample_rate != raw.sample_rate) w = dsp::resample(w, raw.sample_rate);
    Utterance u;
    u.id = r.id;
    u.mel = dsp::features(w, raw);
    u.labels = corpus::read_labels(root / r.label_path);
    if (u.labels.size() != u.mel.frames) {
      fail(ErrorCode::kInput, r.id + ": " + std::to_string(u.labels.size()) + " labels for " +
                                  std::to_string(u.mel.frames) + " frames");
    }
    out[i] = std::move(u);
  });
  return out;
}

void fit_normalization(dsp::FrontendConfig& frontend, std::span<const Utterance> train) {
  std::vector<dsp::MelFrames> mels;
  mels.reserve(train.size());
  for (const auto& u : train) mels.push_back(u.mel);
  dsp::fit_normalization(frontend, mels);
}

void normalize(std::span<Utterance> utterances, const dsp::FrontendConfig& frontend) {
  for (auto& u : utterances) dsp::apply_normalization(u.mel, frontend);
}

Crop crop_random(const Utterance& u, Rng& rng, std::size_t frames) {
  const std::size_t bands = u.mel.bands;
  Crop c;
  c.mel.assign(frames * bands, 0.0f);
  c.labels.assign(frames, 0);
  const std::size_t avail = u.mel.frames;
  if (avail >= frames) {
    c.start = std::size_t(rng.uniform_int(0, std::int64_t(avail - frames)));
  } else {
    c.padded = true;
  }
  const std::size_t n = std::min(frames, avail);
  std::copy(u.mel.values.begin() + long(c.start * bands),
            u.mel.values.begin() + long((c.start + n) * bands), c.mel.begin());
  std::copy(u.labels.begin() + long(c.start), u.labels.begin() + long(c.start + n), c.labels.begin());
  return c;
}

void spec_augment(std::span<float> mel, std::size_t frames, std::size_t bands, Rng& rng,
                  const SpecAugmentConfig& cfg) {
  if (mel.size() != frames * bands) {
    fail(ErrorCode::kDimension, "spec_augment: buffer does not match [frames, bands]");
  }
  if (mel.empty()) return;
  double total = 0.0;
  for (float v : mel) total += v;
  const auto fill = float(total / double(mel.size()));
  for (std::size_t m = 0; m < cfg.freq_masks; ++m) {
    const auto w = std::min<std::size_t>(std::size_t(rng.uniform_int(0, std::int64_t(cfg.freq_width))), bands);
    const auto f0 = std::size_t(rng.uniform_int(0, std::int64_t(bands - w)));
    for (std::size_t l = 0; l < frames; ++l)
      std::fill_n(mel.begin() + long(l * bands + f0), w, fill);
  }
  for (std::size_t m = 0; m < cfg.time_masks; ++m) {
    const auto w = std::min<std::size_t>(std::size_t(rng.uniform_int(0, std::int64_t(cfg.time_width))), frames);
    const auto t0 = std::size_t(rng.uniform_int(0, std::int64_t(frames - w)));
    std::fill_n(mel.begin() + long(t0 * bands), w * bands, fill);
  }
}

template <typename T>
Sgd<T>::Sgd(model::Named<T> params, double lr, double weight_decay, double momentum)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay), momentum_(momentum) {
  if (momentum_ > 0.0)
    for (const auto& [name, t] : params_) velocity_.emplace_back(t.numel(), T(0));
}

template <typename T>
void Sgd<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor<T>& t = params_[i].second;
    if (!t.has_grad()) continue;
    auto w = t.data();
    const auto g = t.grad();
    if (momentum_ > 0.0) {
      auto& v = velocity_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = T(momentum_) * v[k] + g[k] + T(weight_decay_) * w[k];
        w[k] -= T(lr_) * v[k];
      }
    } else {
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= T(lr_) * (g[k] + T(weight_decay_) * w[k]);
    }
  }
}

template class Sgd<float>;
template class Sgd<double>;

std::vector<float> infer(model::VadModel<float>& model, const dsp::MelFrames& mel,
                         std::size_t segment_frames) {
  if (segment_frames == 0 || segment_frames >= mel.frames) return model.predict(mel).probs;
  std::vector<float> probs;
  probs.reserve(mel.frames);
  for (std::size_t s = 0; s < mel.frames; s += segment_frames) {
    const std::size_t n = std::min(segment_frames, mel.frames - s);
    dsp::MelFrames chunk{n, mel.bands,
                         std::vector<float>(mel.values.begin() + long(s * mel.bands),
                                            mel.values.begin() + long((s + n) * mel.bands))};
    const auto p = model.predict(chunk).probs;
    probs.insert(probs.end(), p.begin(), p.end());
  }
  return probs;
}

EvalResult evaluate(model::VadModel<float>& model, std::span<const Utterance> utterances,
                    const EvalOptions& options) {
  const bool was_training = model.training();
  model.set_training(false);
  std::vector<std::vector<float>> scores(utterances.size());
  parallel_for(utterances.size(), [&](std::size_t i) {
    auto p = infer(model, utterances[i].mel, options.segment_frames);
    if (options.smooth_window > 1) p = model::smooth(p, options.smooth_window);
    scores[i] = std::move(p);
  });
  model.set_training(was_training);

  EvalResult r;
  metrics::ScoredFrames pooled;
  double auc_sum = 0.0, eer_sum = 0.0;
  std::size_t scored = 0;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const Utterance& u = utterances[i];
    pooled.append(scores[i], u.labels);
    metrics::ScoredFrames one;
    one.append(scores[i], u.labels);
    UtteranceScore us{u.id, std::numeric_limits<double>::quiet_NaN(),
                      std::numeric_limits<double>::quiet_NaN()};
    const std::size_t pos = one.positives();
    if (pos > 0 && pos < one.labels.size()) {
      const auto roc = metrics::roc_curve(one);
      us.auc = metrics::auc(roc);
      us.eer = metrics::eer(roc);
      auc_sum += us.auc;
      eer_sum += us.eer;
      ++scored;
    }
    r.per_utterance.push_back(us);
  }
  r.frames = pooled.scores.size();
  r.roc = metrics::roc_curve(pooled);
  r.auc = metrics::auc(r.roc);
  r.eer = metrics::eer(r.roc);
  r.mean_utterance_auc = scored ? auc_sum / double(scored) : std::numeric_limits<double>::quiet_NaN();
  r.mean_utterance_eer = scored ? eer_sum / double(scored) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

TrainResult train(const model::ModelConfig& model_cfg, const TrainConfig& cfg,
                  std::span<const Utterance> train_set, std::span<const Utterance> val_set,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) fail(ErrorCode::kInput, "training split is empty");
  if (val_set.empty()) fail(ErrorCode::kInput, "validation split is empty");
  const std::size_t bands = model_cfg.n_mels;
  for (const auto& u : train_set)
    if (u.mel.bands != bands) fail(ErrorCode::kConfig, u.id + ": feature band count differs from the model");

  model::VadModel<float> net(model_cfg, Rng::derive(cfg.seed, {0}).next());
  TrainResult result;
  result.model = std::make_unique<model::VadModel<float>>(model_cfg);
  checkpoint::copy_state(net, *result.model);
  result.best_val_auc = -1.0;

  Sgd<float> opt(net.parameters(), cfg.lr, cfg.weight_decay, cfg.momentum);
  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t frames = cfg.crop_frames;
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng::derive(cfg.seed, {1, epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    net.set_training(true);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t first = b * cfg.batch_size;
      const std::size_t count = std::min(cfg.batch_size, n - first);
      Tensor<float> x(Shape{count, frames, bands});
      Tensor<float> y(Shape{count, frames});
      auto xd = x.data();
      auto yd = y.data();
      parallel_for(count, [&](std::size_t slot) {
        Rng rng = Rng::derive(cfg.seed, {2, epoch, b, slot});
        Crop c = crop_random(train_set[order[first + slot]], rng, frames);
        if (cfg.augment) spec_augment(c.mel, frames, bands, rng, cfg.spec_augment);
        std::copy(c.mel.begin(), c.mel.end(), xd.begin() + long(slot * frames * bands));
        for (std::size_t l = 0; l < frames; ++l) yd[slot * frames + l] = float(c.labels[l]);
      });

      net.set_dropout_rng(Rng::derive(cfg.seed, {3, epoch, b}));
      GradTape<float> tape;
      Tensor<float> loss;
      {
        TapeScope<float> scope(tape);
        loss = ops::bce_with_logits(net.forward(x).logits, y);
      }
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        std::string ids;
        for (std::size_t s = 0; s < count; ++s) ids += (s ? "," : "") + train_set[order[first + s]].id;
        fail(ErrorCode::kNumeric, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(b) + " (examples: " + ids + ")");
      }
      net.zero_grad();
      tape.backward(loss);
      opt.step();
      loss_sum += lv * double(count);
    }
    net.set_training(false);

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / double(n);
    const EvalResult val = evaluate(net, val_set);
    m.val_auc = val.auc;
    m.val_eer = val.eer;
    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(m);
    if (m.val_auc > result.best_val_auc) {
      result.best_val_auc = m.val_auc;
      result.best_epoch = epoch;
      checkpoint::copy_state(net, *result.model);
    }
    if (on_epoch) on_epoch(m);
    if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience) break;
  }
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> history) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "epoch,train_loss,val_auc,val_eer,wall_seconds\n";
  char line[160];
  for (const auto& m : history) {
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%.3f\n", m.epoch, m.train_loss, m.val_auc,
                  m.val_eer, m.wall_seconds);
    out << line;
  }
}

}  // namespace vadforge::training
