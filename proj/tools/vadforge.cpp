// vadforge: synthesize scenes, train, evaluate, run inference and export
// attention maps. Exit codes: 0 ok, 2 usage/config, 3 data, 4 numeric abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vadforge/checkpoint.hpp"
#include "vadforge/config.hpp"
#include "vadforge/corpus.hpp"
#include "vadforge/error.hpp"
#include "vadforge/metrics.hpp"
#include "vadforge/parallel.hpp"
#include "vadforge/training.hpp"
#include "vadforge/wav.hpp"

namespace fs = std::filesystem;
using namespace vadforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUsage:
    case ErrorCode::kConfig:
    case ErrorCode::kParameter:
      return kExitUsage;
    case ErrorCode::kNumeric:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

RunConfig base_config(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

dsp::Waveform load_audio(const std::string& path, int rate) {
  dsp::Waveform w = dsp::read_wav(path);
  if (w.sample_rate != rate) {
    std::cerr << "notice: resampling " << path << " from " << w.sample_rate << " Hz to " << rate
              << " Hz\n";
    w = dsp::resample(w, rate);
  }
  return w;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) fail(ErrorCode::kIo, "cannot create directory " + dir.string());
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
  std::string config, out, speech_dir, noise_dir;
  std::optional<std::size_t> n_train, n_val, n_test;
  std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
  RunConfig cfg = base_config(a.config);
  if (a.n_train) cfg.synth.n_train = *a.n_train;
  if (a.n_val) cfg.synth.n_val = *a.n_val;
  if (a.n_test) cfg.synth.n_test = *a.n_test;
  if (a.seed) cfg.synth.seed = *a.seed;
  if (!a.speech_dir.empty()) cfg.synth.speech_dir = a.speech_dir;
  if (!a.noise_dir.empty()) cfg.synth.noise_dir = a.noise_dir;
  if (!a.out.empty()) cfg.paths.data_dir = a.out;
  if (cfg.paths.data_dir.empty()) fail(ErrorCode::kUsage, "synth needs --out (or paths.data_dir)");
  const fs::path out = cfg.paths.data_dir;
  ensure_dir(out);
  const auto records = corpus::build_dataset(cfg.synth, out);
  save_run_config(out / "config.json", cfg);
  std::cerr << "wrote " << records.size() << " scenes (" << cfg.synth.n_train << " train, "
            << cfg.synth.n_val << " val, " << cfg.synth.n_test << " test) to "
            << (out / "manifest.jsonl").string() << '\n';
  return kExitOk;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config, manifest, out;
  std::optional<std::size_t> epochs, batch_size, patience, encoder_layers;
  std::optional<double> lr, momentum, weight_decay;
  std::optional<std::uint64_t> seed;
  bool no_positional = false, no_augment = false;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = base_config(a.config);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.patience) cfg.train.patience = *a.patience;
  if (a.lr) cfg.train.lr = *a.lr;
  if (a.momentum) cfg.train.momentum = *a.momentum;
  if (a.weight_decay) cfg.train.weight_decay = *a.weight_decay;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.encoder_layers) cfg.model.encoder_layers = *a.encoder_layers;
  if (a.no_positional) cfg.model.positional_encoding = false;
  if (a.no_augment) cfg.train.augment = false;
  if (!a.manifest.empty()) cfg.paths.manifest = a.manifest;
  if (!a.out.empty()) cfg.paths.run_dir = a.out;
  if (cfg.paths.manifest.empty() || cfg.paths.run_dir.empty()) {
    fail(ErrorCode::kUsage, "train needs --manifest and --out (or the matching paths keys)");
  }
  cfg.train.validate();
  cfg.model.validate();
  const fs::path run = cfg.paths.run_dir;
  ensure_dir(run);
  save_run_config(run / "config.json", cfg);

  auto train_set = training::load_split(cfg.paths.manifest, corpus::Split::kTrain, cfg.frontend);
  auto val_set = training::load_split(cfg.paths.manifest, corpus::Split::kVal, cfg.frontend);
  if (train_set.empty()) fail(ErrorCode::kInput, "manifest has no train split");
  if (val_set.empty()) fail(ErrorCode::kInput, "manifest has no val split");
  dsp::FrontendConfig frontend = cfg.frontend;
  if (frontend.normalize) {
    training::fit_normalization(frontend, train_set);
    training::normalize(train_set, frontend);
    training::normalize(val_set, frontend);
  }
  std::cerr << "training on " << train_set.size() << " utterances, validating on "
            << val_set.size() << '\n';

  std::vector<training::EpochMetrics> history;
  const auto result = training::train(
      cfg.model, cfg.train, train_set, val_set, [&](const training::EpochMetrics& m) {
        history.push_back(m);
        training::write_metrics_csv(run / "metrics.csv", history);
        std::fprintf(stderr, "epoch %3zu  loss %.4f  val AUC %.4f  EER %.4f  (%.1fs)\n", m.epoch,
                     m.train_loss, m.val_auc, m.val_eer, m.wall_seconds);
      });
  const nlohmann::json meta{{"best_epoch", result.best_epoch},
                            {"best_val_auc", result.best_val_auc},
                            {"parameter_count", result.model->parameter_count()},
                            {"train", cfg.train}};
  checkpoint::save(run / "checkpoint.vadf", *result.model, frontend, meta);
  const auto val = training::evaluate(*result.model, val_set);
  metrics::write_roc_csv(run / "roc.csv", val.roc);
  std::fprintf(stderr, "best epoch %zu: val AUC %.4f, EER %.4f; %zu parameters\n",
               result.best_epoch, val.auc, val.eer, result.model->parameter_count());
  return kExitOk;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, manifest, split = "test", roc_out, roc_json;
  std::optional<std::size_t> smooth_window;
  std::size_t segment_frames = 0;
  bool per_utterance = false;
};

int run_eval(const EvalArgs& a) {
  auto loaded = checkpoint::load(a.checkpoint);
  auto& net = *loaded.model;
  auto utts = training::load_split(a.manifest, corpus::split_from_string(a.split), loaded.frontend);
  if (utts.empty()) fail(ErrorCode::kInput, "manifest has no '" + a.split + "' records");
  training::normalize(utts, loaded.frontend);
  training::EvalOptions opts;
  opts.segment_frames = a.segment_frames;
  opts.smooth_window = a.smooth_window.value_or(net.config().smoothing_window);
  const auto r = training::evaluate(net, utts, opts);
  const fs::path roc_path =
      a.roc_out.empty() ? fs::path(a.checkpoint).parent_path() / "roc.csv" : fs::path(a.roc_out);
  metrics::write_roc_csv(roc_path, r.roc);
  if (!a.roc_json.empty()) metrics::write_roc_json(a.roc_json, r.roc);

  std::printf("%-10s %8s %8s %8s %10s %10s\n", "dataset", "frames", "AUC(%)", "EER(%)",
              "uttAUC(%)", "uttEER(%)");
  std::printf("%-10s %8zu %8.2f %8.2f %10.2f %10.2f\n", a.split.c_str(), r.frames, 100.0 * r.auc,
              100.0 * r.eer, 100.0 * r.mean_utterance_auc, 100.0 * r.mean_utterance_eer);
  if (a.per_utterance) {
    for (const auto& u : r.per_utterance)
      std::printf("  %-20s AUC %7.2f  EER %7.2f\n", u.id.c_str(), 100.0 * u.auc, 100.0 * u.eer);
  }
  return kExitOk;
}

// --- infer -------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, wav, out;
  std::size_t segment_frames = 0;
  std::optional<std::size_t> smooth_window;
  double threshold = 0.5;
};

int run_infer(const InferArgs& a) {
  auto loaded = checkpoint::load(a.checkpoint);
  const dsp::Waveform w = load_audio(a.wav, loaded.frontend.sample_rate);
  const dsp::MelFrames mel = dsp::features(w, loaded.frontend);
  auto probs = training::infer(*loaded.model, mel, a.segment_frames);
  const std::size_t window = a.smooth_window.value_or(loaded.model->config().smoothing_window);
  if (window > 1) probs = model::smooth(probs, window);

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) fail(ErrorCode::kIo, "cannot write " + a.out);
  }
  std::ostream& os = a.out.empty() ? std::cout : file;
  char line[64];
  for (std::size_t l = 0; l < probs.size(); ++l) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%d\n", l, double(probs[l]),
                  probs[l] >= a.threshold ? 1 : 0);
    os << line;
  }
  return kExitOk;
}

// --- attn --------------------------------------------------------------------

struct AttnArgs {
  std::string checkpoint, wav, labels, frames, out, json;
};

std::vector<std::size_t> parse_frames(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(std::size_t(v));
    } catch (const std::logic_error&) {
      fail(ErrorCode::kUsage, "--frames expects comma-separated non-negative integers, got '" +
                                  item + "'");
    }
  }
  if (out.empty()) fail(ErrorCode::kUsage, "--frames is empty");
  return out;
}

int run_attn(const AttnArgs& a) {
  const auto frames = parse_frames(a.frames);
  auto loaded = checkpoint::load(a.checkpoint);
  const dsp::Waveform w = load_audio(a.wav, loaded.frontend.sample_rate);
  const dsp::MelFrames mel = dsp::features(w, loaded.frontend);
  std::vector<std::uint8_t> labels;
  if (!a.labels.empty()) labels = corpus::read_labels(a.labels);
  const auto report = metrics::attention_report(*loaded.model, mel, labels, frames);
  if (!a.out.empty()) metrics::write_attention_csv(a.out, report);
  if (!a.json.empty()) metrics::write_attention_json(a.json, report);
  if (a.out.empty() && a.json.empty()) {
    for (const auto& row : report.rows) {
      std::cout << row.frame;
      for (float v : row.weights) std::cout << ',' << v;
      std::cout << '\n';
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vadforge: attention-based voice activity detection lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "vadforge 0.1.0");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Synthesize a labelled dataset of noisy reverberant scenes");
  s->add_option("--config", synth.config, "Run config JSON")->check(CLI::ExistingFile);
  s->add_option("--out", synth.out, "Output directory (wav/, labels/, manifest.jsonl)");
  s->add_option("--n-train", synth.n_train, "Number of training scenes");
  s->add_option("--n-val", synth.n_val, "Number of validation scenes");
  s->add_option("--n-test", synth.n_test, "Number of test scenes");
  s->add_option("--seed", synth.seed, "Master seed");
  s->add_option("--speech-dir", synth.speech_dir, "Directory of clean speech WAVs (default: built-in generator)");
  s->add_option("--noise-dir", synth.noise_dir, "Directory of noise WAVs (default: built-in generator)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model; writes config.json, checkpoint.vadf, metrics.csv, roc.csv");
  t->add_option("--config", train.config, "Run config JSON")->check(CLI::ExistingFile);
  t->add_option("--manifest", train.manifest, "Dataset manifest (manifest.jsonl)");
  t->add_option("--out", train.out, "Run directory");
  t->add_option("--epochs", train.epochs, "Maximum number of epochs");
  t->add_option("--batch-size", train.batch_size, "Crops per SGD step");
  t->add_option("--patience", train.patience, "Early-stopping patience in epochs (0 = off)");
  t->add_option("--lr", train.lr, "Learning rate");
  t->add_option("--momentum", train.momentum, "SGD momentum");
  t->add_option("--weight-decay", train.weight_decay, "L2 weight decay");
  t->add_option("--seed", train.seed, "Training seed");
  t->add_option("--encoder-layers", train.encoder_layers, "Number of self-attention layers");
  t->add_flag("--no-positional-encoding", train.no_positional, "Disable the sinusoidal positional encoding");
  t->add_flag("--no-augment", train.no_augment, "Disable SpecAugment");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Report AUC/EER on a manifest split and write the ROC curve");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--manifest", eval.manifest, "Dataset manifest")->required();
  e->add_option("--split", eval.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--smooth-window", eval.smooth_window, "Odd moving-average window (default: from checkpoint)");
  e->add_option("--segment-frames", eval.segment_frames, "Evaluate in independent N-frame chunks (0 = whole)");
  e->add_option("--roc-out", eval.roc_out, "ROC CSV path (default: roc.csv next to the checkpoint)");
  e->add_option("--roc-json", eval.roc_json, "Also write the ROC curve as JSON");
  e->add_flag("--per-utterance", eval.per_utterance, "Print per-utterance AUC/EER");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Per-frame speech probabilities for one WAV (frame,prob,label)");
  i->add_option("--checkpoint", infer.checkpoint, "Checkpoint file")->required();
  i->add_option("--wav", infer.wav, "Input WAV (16-bit mono; 16 kHz is resampled)")->required();
  i->add_option("--out", infer.out, "Output file (default: stdout)");
  i->add_option("--segment-frames", infer.segment_frames, "Process N-frame chunks sequentially (0 = whole sequence)");
  i->add_option("--smooth-window", infer.smooth_window, "Odd moving-average window (default: from checkpoint)");
  i->add_option("--threshold", infer.threshold, "Decision threshold for the label column");

  AttnArgs attn;
  auto* at = app.add_subcommand("attn", "Export head-averaged attention rows for query frames");
  at->add_option("--checkpoint", attn.checkpoint, "Checkpoint file")->required();
  at->add_option("--wav", attn.wav, "Input WAV")->required();
  at->add_option("--frames", attn.frames, "Comma-separated query frames, e.g. 10,42")->required();
  at->add_option("--labels", attn.labels, "Reference label file to include");
  at->add_option("--out", attn.out, "CSV output (query_frame,key_frame,weight,key_label,key_prob)");
  at->add_option("--json", attn.json, "JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(train);
    if (*e) return run_eval(eval);
    if (*i) return run_infer(infer);
    if (*at) return run_attn(attn);
  } catch (const Error& err) {
    std::cerr << "error (" << to_string(err.code()) << "): " << err.what() << '\n';
    return exit_code(err.code());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
