#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>

#include "vadforge/corpus.hpp"
#include "vadforge/error.hpp"
#include "vadforge/ops.hpp"
#include "vadforge/training.hpp"

using namespace vadforge;
using namespace vadforge::training;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "no vadforge::Error thrown";
  return ErrorCode::kUsage;
}

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.n_mels = 16;
  cfg.conv_layers = 2;
  cfg.channels = 4;
  cfg.d = 16;
  cfg.d_ff = 32;
  cfg.heads = 2;
  return cfg;
}

/// Speech frames lift the lower half of the bands; everything else is noise.
Utterance toy_utterance(const std::string& id, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  Utterance u;
  u.id = id;
  u.mel = {frames, 16, std::vector<float>(frames * 16)};
  u.labels.resize(frames);
  bool on = false;
  for (std::size_t l = 0; l < frames; ++l) {
    if (l % 6 == 0) on = rng.bernoulli(0.5);
    u.labels[l] = on;
    for (std::size_t f = 0; f < 16; ++f)
      u.mel.values[l * 16 + f] = float(0.5 * rng.normal() + (on && f < 8 ? 1.5 : 0.0));
  }
  u.labels[0] = 0;
  u.labels[1] = 1;
  return u;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST(Bce, HalfProbabilityGivesLn2) {
  Tensor<double> z(Shape{2, 5}, 0.0), y(Shape{2, 5});
  for (std::size_t i = 0; i < 10; ++i) y.data()[i] = double(i % 3 == 0);
  EXPECT_NEAR(ops::bce_with_logits(z, y).item(), std::log(2.0), 1e-15);
}

TEST(Bce, SaturatedCorrectLogitsGiveZeroAndStayFinite) {
  Tensor<double> z(Shape{4}, std::vector<double>{800, -800, 40, -40});
  Tensor<double> y(Shape{4}, std::vector<double>{1, 0, 1, 0});
  EXPECT_LT(ops::bce_with_logits(z, y).item(), 1e-17);
  Tensor<double> wrong(Shape{4}, std::vector<double>{-800, 800, -40, 40});
  const double l = ops::bce_with_logits(wrong, y).item();
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, (800 + 800 + 40 + 40) / 4.0, 1e-9);
}

TEST(Bce, GradientIsSigmoidMinusLabel) {
  const std::vector<double> zs{-3.0, -0.2, 0.0, 0.7, 4.0};
  const std::vector<double> ys{1, 0, 1, 1, 0};
  const double n = double(zs.size());
  Tensor<double> z(Shape{5}, zs), y(Shape{5}, ys);
  z.set_requires_grad(true);
  GradTape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = ops::bce_with_logits(z, y);
  }
  tape.backward(loss);
  auto plain = [&](std::size_t i, double zi) {
    const double p = sigmoid(zi);
    return -(ys[i] * std::log(p) + (1 - ys[i]) * std::log(1 - p)) / n;
  };
  for (std::size_t i = 0; i < zs.size(); ++i) {
    EXPECT_NEAR(z.grad()[i], (sigmoid(zs[i]) - ys[i]) / n, 1e-14);
    const double h = 1e-6;
    EXPECT_NEAR(z.grad()[i], (plain(i, zs[i] + h) - plain(i, zs[i] - h)) / (2 * h), 1e-8);
  }
}

TEST(Sgd, ClosedFormSteps) {
  Tensor<double> w(Shape{3}, std::vector<double>{1.0, -2.0, 0.5});
  w.set_requires_grad(true);
  model::Named<double> params{{"w", w}};

  // grad 0, wd 0: unchanged.
  w.ensure_grad();
  w.zero_grad();
  Sgd<double>(params, 0.1, 0.0).step();
  EXPECT_EQ(w.data()[1], -2.0);

  // grad 0, wd > 0: shrink by (1 - lr wd).
  Sgd<double>(params, 0.1, 0.2).step();
  EXPECT_NEAR(w.data()[1], -2.0 * (1 - 0.02), 1e-15);

  // Momentum: v1 = g, v2 = mu g + g.
  Tensor<double> m(Shape{1}, std::vector<double>{0.0});
  m.set_requires_grad(true);
  m.ensure_grad()[0] = 2.0;
  Sgd<double> opt({{"m", m}}, 0.5, 0.0, 0.9);
  opt.step();
  EXPECT_NEAR(m.data()[0], -1.0, 1e-15);
  opt.step();
  EXPECT_NEAR(m.data()[0], -1.0 - 0.5 * (0.9 * 2.0 + 2.0), 1e-15);
}

TEST(Sgd, SkipsParametersWithoutGradient) {
  Tensor<float> w(Shape{2}, 1.0f);
  Sgd<float>({{"w", w}}, 0.1, 0.5).step();
  EXPECT_EQ(w.data()[0], 1.0f);
}

TEST(Sgd, QuadraticConvergesToMinimum) {
  Tensor<double> w(Shape{1}, std::vector<double>{-7.0});
  w.set_requires_grad(true);
  Sgd<double> opt({{"w", w}}, 0.1, 0.0);
  for (int k = 0; k < 500; ++k) {
    GradTape<double> tape;
    Tensor<double> loss;
    {
      TapeScope<double> scope(tape);
      const auto d = ops::add(w, Tensor<double>(Shape{1}, -3.0));
      loss = ops::sum(ops::mul(d, d));
    }
    w.zero_grad();
    tape.backward(loss);
    opt.step();
  }
  EXPECT_NEAR(w.data()[0], 3.0, 1e-4);
  // The iteration contracts the error by (1 - 2 lr) each step.
  EXPECT_NEAR(w.data()[0] - 3.0, -10.0 * std::pow(0.8, 500), 1e-12);
}

TEST(Crop, WholeWindowWhenLengthsMatch) {
  const auto u = toy_utterance("u", 40, 1);
  Rng rng(3);
  const auto c = crop_random(u, rng, 40);
  EXPECT_EQ(c.start, 0u);
  EXPECT_FALSE(c.padded);
  EXPECT_EQ(c.mel, u.mel.values);
  EXPECT_EQ(c.labels, u.labels);
}

TEST(Crop, ShortUtterancesArePaddedAsSilence) {
  const auto u = toy_utterance("u", 10, 1);
  Rng rng(3);
  const auto c = crop_random(u, rng, 16);
  EXPECT_TRUE(c.padded);
  ASSERT_EQ(c.labels.size(), 16u);
  for (std::size_t l = 0; l < 10; ++l) EXPECT_EQ(c.labels[l], u.labels[l]);
  for (std::size_t l = 10; l < 16; ++l) {
    EXPECT_EQ(c.labels[l], 0);
    for (std::size_t f = 0; f < 16; ++f) EXPECT_EQ(c.mel[l * 16 + f], 0.0f);
  }
}

TEST(Crop, AlignedAndDeterministic) {
  const auto u = toy_utterance("u", 100, 2);
  Rng a(5), b(5);
  const auto ca = crop_random(u, a, 30);
  const auto cb = crop_random(u, b, 30);
  EXPECT_EQ(ca.start, cb.start);
  EXPECT_EQ(ca.mel, cb.mel);
  for (std::size_t l = 0; l < 30; ++l) {
    EXPECT_EQ(ca.labels[l], u.labels[ca.start + l]);
    EXPECT_EQ(ca.mel[l * 16 + 3], u.mel.at(ca.start + l, 3));
  }
}

TEST(Crop, StartIsUniform) {
  Utterance u;
  u.mel = {512, 1, std::vector<float>(512)};
  u.labels.assign(512, 0);
  std::vector<double> counts(257, 0.0);
  Rng rng(2024);
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) counts[crop_random(u, rng, 256).start] += 1.0;
  const double expect = double(draws) / 257.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
  const boost::math::chi_squared dist(256.0);
  const double p = boost::math::cdf(boost::math::complement(dist, chi2));
  EXPECT_GT(p, 0.01) << "chi2 " << chi2;
}

TEST(SpecAugment, ZeroMasksIsIdentity) {
  auto u = toy_utterance("u", 20, 3);
  const auto before = u.mel.values;
  Rng rng(1);
  spec_augment(u.mel.values, 20, 16, rng, SpecAugmentConfig{0, 20, 0, 30});
  EXPECT_EQ(u.mel.values, before);
}

TEST(SpecAugment, MaskedFractionMatchesExpectation) {
  const std::size_t frames = 64, bands = 32;
  const SpecAugmentConfig cfg{2, 10, 2, 12};

  // P(a single mask of width U{0..W} with uniform start covers index i).
  auto cover = [](std::size_t n, std::size_t width, std::size_t i) {
    double p = 0.0;
    for (std::size_t w = 1; w <= width; ++w) {
      const std::size_t ww = std::min(w, n);
      const std::size_t lo = i + 1 >= ww ? i + 1 - ww : 0, hi = std::min(i, n - ww);
      p += double(hi - lo + 1) / double(n - ww + 1);
    }
    return p / double(width + 1);
  };
  double free_f = 0.0, free_t = 0.0;
  for (std::size_t f = 0; f < bands; ++f) free_f += std::pow(1 - cover(bands, cfg.freq_width, f), 2);
  for (std::size_t l = 0; l < frames; ++l) free_t += std::pow(1 - cover(frames, cfg.time_width, l), 2);
  const double expected = 1.0 - (free_f / double(bands)) * (free_t / double(frames));

  std::vector<float> base(frames * bands);
  Rng init(7);
  for (float& v : base) v = float(init.normal());
  const float mean = float(std::accumulate(base.begin(), base.end(), 0.0) / double(base.size()));

  Rng rng(8);
  double masked = 0.0;
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) {
    auto mel = base;
    spec_augment(mel, frames, bands, rng, cfg);
    for (std::size_t i = 0; i < mel.size(); ++i) {
      if (mel[i] != base[i]) {
        ASSERT_EQ(mel[i], mean);
        masked += 1.0;
      }
    }
  }
  masked /= double(draws) * double(base.size());
  EXPECT_NEAR(masked, expected, 0.1 * expected);
  EXPECT_NEAR(masked, expected, 0.01 * expected);
}

TEST(SpecAugment, WidthsClampToTheAxis) {
  std::vector<float> mel(4 * 3);
  std::iota(mel.begin(), mel.end(), 0.0f);
  Rng rng(1);
  EXPECT_NO_THROW(spec_augment(mel, 4, 3, rng, SpecAugmentConfig{3, 50, 3, 50}));
  EXPECT_EQ(code_of([&] { spec_augment(mel, 5, 3, rng, SpecAugmentConfig{}); }), ErrorCode::kDimension);
}

TEST(TrainConfig, StrictJsonAndValidation) {
  nlohmann::json j = TrainConfig{};
  EXPECT_EQ(j.get<TrainConfig>().batch_size, 128u);
  EXPECT_EQ(j.at("spec_augment").at("time_width"), 30);
  auto typo = j;
  typo["learning_rate"] = 0.1;
  EXPECT_EQ(code_of([&] { typo.get<TrainConfig>(); }), ErrorCode::kConfig);
  auto nested = j;
  nested["spec_augment"]["masks"] = 1;
  EXPECT_EQ(code_of([&] { nested.get<TrainConfig>(); }), ErrorCode::kConfig);
  auto bad = j;
  bad["lr"] = 0.0;
  EXPECT_EQ(code_of([&] { bad.get<TrainConfig>(); }), ErrorCode::kConfig);
}

TEST(Gradients, BatchGradientIsMeanOfPerExampleGradients) {
  model::ModelConfig cfg = tiny_config();
  cfg.dropout = 0.0;
  cfg.zero_init_head = false;
  model::VadModel<double> net(cfg, 3);  // eval mode: batch norm uses running statistics
  const auto a = toy_utterance("a", 12, 1), b = toy_utterance("b", 12, 2);

  auto grads = [&](std::vector<const Utterance*> us) {
    const std::size_t n = us.size();
    Tensor<double> x(Shape{n, 12, 16}), y(Shape{n, 12});
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t i = 0; i < 12 * 16; ++i) x.data()[s * 192 + i] = us[s]->mel.values[i];
      for (std::size_t l = 0; l < 12; ++l) y.data()[s * 12 + l] = us[s]->labels[l];
    }
    GradTape<double> tape;
    Tensor<double> loss;
    {
      TapeScope<double> scope(tape);
      loss = ops::bce_with_logits(net.forward(x).logits, y);
    }
    net.zero_grad();
    tape.backward(loss);
    std::vector<double> out;
    for (const auto& [name, p] : net.parameters()) out.insert(out.end(), p.grad().begin(), p.grad().end());
    return out;
  };
  const auto ga = grads({&a}), gb = grads({&b}), gab = grads({&a, &b});
  ASSERT_EQ(ga.size(), gab.size());
  double scale = 0.0;
  for (double g : gab) scale = std::max(scale, std::abs(g));
  ASSERT_GT(scale, 0.0);
  for (std::size_t i = 0; i < gab.size(); ++i) EXPECT_NEAR(gab[i], 0.5 * (ga[i] + gb[i]), 1e-12 * scale) << i;
}

TEST(Gradients, VanishingStepLeavesPredictionsUnchanged) {
  model::ModelConfig cfg = tiny_config();
  cfg.dropout = 0.0;
  cfg.zero_init_head = false;
  const auto u = toy_utterance("u", 20, 4);
  const auto val = toy_utterance("v", 30, 5);

  auto step_with = [&](double lr) {
    model::VadModel<float> net(cfg, 8);
    Tensor<float> x(Shape{1, 20, 16}, u.mel.values), y(Shape{1, 20});
    for (std::size_t l = 0; l < 20; ++l) y.data()[l] = u.labels[l];
    GradTape<float> tape;
    Tensor<float> loss;
    {
      TapeScope<float> scope(tape);
      loss = ops::bce_with_logits(net.forward(x).logits, y);
    }
    tape.backward(loss);
    Sgd<float>(net.parameters(), lr, 0.0).step();
    return net.predict(val.mel).probs;
  };
  const auto before = model::VadModel<float>(cfg, 8).predict(val.mel).probs;
  EXPECT_EQ(step_with(1e-30), before);
  EXPECT_NE(step_with(0.5), before);
}

TEST(Infer, ChunkedMatchesIndependentSegments) {
  model::ModelConfig cfg = tiny_config();
  cfg.zero_init_head = false;
  model::VadModel<float> net(cfg, 2);
  const auto u = toy_utterance("u", 25, 6);
  EXPECT_EQ(infer(net, u.mel), net.predict(u.mel).probs);
  EXPECT_EQ(infer(net, u.mel, 25), net.predict(u.mel).probs);
  const auto chunked = infer(net, u.mel, 10);
  ASSERT_EQ(chunked.size(), 25u);
  for (std::size_t s = 0; s < 25; s += 10) {
    const std::size_t n = std::min<std::size_t>(10, 25 - s);
    dsp::MelFrames part{n, 16, {u.mel.values.begin() + long(s * 16), u.mel.values.begin() + long((s + n) * 16)}};
    const auto p = net.predict(part).probs;
    for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(chunked[s + k], p[k]);
  }
}

TEST(Evaluate, SingleClassUtterancesHaveNoPerUtteranceScore) {
  model::ModelConfig cfg = tiny_config();
  cfg.zero_init_head = false;
  model::VadModel<float> net(cfg, 2);
  std::vector<Utterance> us{toy_utterance("a", 30, 1), toy_utterance("b", 30, 2)};
  us[1].labels.assign(30, 0);
  const auto r = evaluate(net, us);
  ASSERT_EQ(r.per_utterance.size(), 2u);
  EXPECT_FALSE(std::isnan(r.per_utterance[0].auc));
  EXPECT_TRUE(std::isnan(r.per_utterance[1].auc));
  EXPECT_DOUBLE_EQ(r.mean_utterance_auc, r.per_utterance[0].auc);
  EXPECT_EQ(r.frames, 60u);

  metrics::ScoredFrames pooled;
  for (const auto& u : us) pooled.append(net.predict(u.mel).probs, u.labels);
  EXPECT_DOUBLE_EQ(r.auc, metrics::auc(pooled));
}

TEST(Train, OverfitsTwoExamples) {
  std::vector<Utterance> data{toy_utterance("a", 48, 11), toy_utterance("b", 48, 12)};
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  cfg.batch_size = 2;
  cfg.crop_frames = 48;
  cfg.epochs = 200;
  cfg.patience = 0;
  cfg.augment = false;
  cfg.seed = 3;
  std::size_t calls = 0;
  const auto r = train(tiny_config(), cfg, data, data, [&](const EpochMetrics&) { ++calls; });
  ASSERT_EQ(r.history.size(), 200u);
  EXPECT_EQ(calls, 200u);
  // Zero-initialized head: the first batch is scored at exactly p = 0.5.
  EXPECT_NEAR(r.history[0].train_loss, std::log(2.0), 1e-6);
  EXPECT_LT(r.history.back().train_loss, 0.1);
  EXPECT_EQ(evaluate(*r.model, data).auc, 1.0);
  EXPECT_EQ(r.best_val_auc, 1.0);
}

TEST(Train, SameSeedSameHistoryAndWeights) {
  std::vector<Utterance> data{toy_utterance("a", 40, 1), toy_utterance("b", 50, 2), toy_utterance("c", 45, 3)};
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch_size = 2;
  cfg.crop_frames = 32;
  cfg.epochs = 3;
  cfg.seed = 9;
  cfg.spec_augment = {1, 4, 1, 6};
  const auto a = train(tiny_config(), cfg, data, data);
  const auto b = train(tiny_config(), cfg, data, data);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
    EXPECT_EQ(a.history[e].val_auc, b.history[e].val_auc);
  }
  EXPECT_EQ(a.model->predict(data[1].mel).probs, b.model->predict(data[1].mel).probs);
  cfg.seed = 10;
  const auto c = train(tiny_config(), cfg, data, data);
  EXPECT_NE(a.history.back().train_loss, c.history.back().train_loss);
}

TEST(Train, EarlyStoppingKeepsBestWeights) {
  std::vector<Utterance> data{toy_utterance("a", 40, 1), toy_utterance("b", 40, 2)};
  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.batch_size = 2;
  cfg.crop_frames = 40;
  cfg.epochs = 40;
  cfg.patience = 2;
  cfg.augment = false;
  const auto r = train(tiny_config(), cfg, data, data);
  ASSERT_GE(r.history.size(), r.best_epoch);
  EXPECT_LE(r.history.size(), r.best_epoch + 2);
  double best = -1.0;
  for (const auto& m : r.history) best = std::max(best, m.val_auc);
  EXPECT_EQ(r.best_val_auc, best);
  EXPECT_EQ(evaluate(*r.model, data).auc, r.history[r.best_epoch - 1].val_auc);
}

TEST(Train, NonFiniteLossNamesTheBatch) {
  std::vector<Utterance> data{toy_utterance("a", 40, 1), toy_utterance("poisoned", 40, 2)};
  data[1].mel.values[5] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.crop_frames = 40;
  cfg.epochs = 1;
  cfg.augment = false;
  std::string msg;
  EXPECT_EQ(code_of([&] { train(tiny_config(), cfg, data, data); }, &msg), ErrorCode::kNumeric);
  EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("poisoned"), std::string::npos) << msg;
}

TEST(Train, RejectsEmptySplitsAndBandMismatch) {
  std::vector<Utterance> data{toy_utterance("a", 40, 1)};
  TrainConfig cfg;
  cfg.crop_frames = 32;
  cfg.epochs = 1;
  EXPECT_EQ(code_of([&] { train(tiny_config(), cfg, {}, data); }), ErrorCode::kInput);
  EXPECT_EQ(code_of([&] { train(tiny_config(), cfg, data, {}); }), ErrorCode::kInput);
  model::ModelConfig wide = tiny_config();
  wide.n_mels = 32;
  EXPECT_EQ(code_of([&] { train(wide, cfg, data, data); }), ErrorCode::kConfig);
}

TEST(MetricsLog, CsvColumns) {
  const auto dir = fs::temp_directory_path() / "vadforge_training_csv";
  fs::create_directories(dir);
  const std::vector<EpochMetrics> h{{1, 0.5, 0.75, 0.25, 1.5}, {2, 0.4, 0.8, 0.2, 1.25}};
  write_metrics_csv(dir / "m.csv", h);
  std::ifstream in(dir / "m.csv");
  std::string l0, l1, l2, extra;
  std::getline(in, l0);
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_EQ(l0, "epoch,train_loss,val_auc,val_eer,wall_seconds");
  EXPECT_EQ(l1, "1,0.5,0.75,0.25,1.500");
  EXPECT_EQ(l2, "2,0.4,0.8,0.2,1.250");
  EXPECT_FALSE(std::getline(in, extra));
}

TEST(LoadSplit, FeaturesAndLabelMismatch) {
  const auto dir = fs::temp_directory_path() / "vadforge_training_split";
  fs::remove_all(dir);
  corpus::SynthConfig sc;
  sc.n_train = 2;
  sc.n_val = 1;
  sc.n_test = 0;
  sc.min_seconds = 3.0;
  sc.max_seconds = 3.5;
  sc.seed = 4;
  const auto records = corpus::build_dataset(sc, dir);
  dsp::FrontendConfig fe;
  const auto train_set = load_split(dir / "manifest.jsonl", corpus::Split::kTrain, fe);
  ASSERT_EQ(train_set.size(), 2u);
  EXPECT_EQ(train_set[0].id, "train-00000");
  EXPECT_EQ(train_set[0].mel.bands, fe.n_mels);
  EXPECT_EQ(train_set[0].labels.size(), train_set[0].mel.frames);
  EXPECT_EQ(load_split(dir / "manifest.jsonl", corpus::Split::kTest, fe).size(), 0u);

  corpus::write_labels(dir / records[2].label_path, {0, 1, 1});
  EXPECT_EQ(code_of([&] { load_split(dir / "manifest.jsonl", corpus::Split::kVal, fe); }), ErrorCode::kInput);
}
