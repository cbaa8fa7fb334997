#pragma once

// Central-difference gradient checking shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vadforge/model.hpp"
#include "vadforge/ops.hpp"
#include "vadforge/rng.hpp"
#include "vadforge/tensor.hpp"

namespace vadforge::check {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0,
                                    bool grad = true) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) v = scale * rng.normal();
  t.set_requires_grad(grad);
  return t;
}

/// Values bounded away from zero so kinks (relu, prelu) sit outside the FD stencil.
inline Tensor<double> away_from_zero(Shape shape, std::uint64_t seed, double margin = 0.05) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) {
    const double mag = margin + rng.uniform();
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  t.set_requires_grad(true);
  return t;
}

struct GradReport {
  double max_rel_error = 0.0;
  std::string worst;  // name of the input with the largest error
};

/// Compares tape gradients of sum(f() * R) against central differences, for a
/// fixed random projection R. The error of each input is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor). The floor
/// keeps gradients that vanish identically (e.g. a key bias under softmax)
/// from dividing round-off noise by round-off noise.
inline GradReport check_gradients(const std::function<Tensor<double>()>& f,
                                  const std::vector<std::pair<std::string, Tensor<double>>>& inputs,
                                  double eps = 1e-5, std::uint64_t seed = 99) {
  Tensor<double> probe = f();
  Tensor<double> proj(probe.shape());
  Rng rng(seed);
  for (double& v : proj.data()) v = rng.normal();

  auto objective = [&]() {
    NoGradScope<double> off;
    const auto out = f();
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out.data()[i] * proj.data()[i];
    return s;
  };

  for (const auto& [name, t] : inputs) t.zero_grad();
  {
    GradTape<double> tape;
    Tensor<double> loss;
    {
      TapeScope<double> scope(tape);
      loss = ops::sum(ops::mul(f(), proj));
    }
    tape.backward(loss);
  }

  GradReport report;
  for (const auto& [name, t] : inputs) {
    const std::vector<double> analytic(t.ensure_grad().begin(), t.ensure_grad().end());
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      double& x = t.data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = objective();
      x = saved - eps;
      const double down = objective();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
    const double rel = std::sqrt(diff) / denom;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = name;
    }
  }
  return report;
}

inline constexpr double kKernelTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;

struct GradCase {
  std::string name;
  std::function<GradReport()> run;
};

/// One case per differentiable kernel (and per distinct code path).
inline std::vector<GradCase> kernel_cases() {
  using Inputs = std::vector<std::pair<std::string, Tensor<double>>>;
  auto simple = [](std::string name, std::function<Tensor<double>(const Inputs&)> f,
                   std::function<Inputs()> make) {
    return GradCase{std::move(name), [f, make] {
                      const Inputs in = make();
                      return check_gradients([&] { return f(in); }, in);
                    }};
  };
  std::vector<GradCase> cases;
  cases.push_back(simple(
      "matmul", [](const Inputs& in) { return ops::matmul(in[0].second, in[1].second); },
      [] { return Inputs{{"a", random_tensor({5, 7}, 1)}, {"b", random_tensor({7, 3}, 2)}}; }));
  cases.push_back(simple(
      "batched_matmul", [](const Inputs& in) { return ops::batched_matmul(in[0].second, in[1].second); },
      [] { return Inputs{{"a", random_tensor({3, 4, 5}, 1)}, {"b", random_tensor({3, 5, 6}, 2)}}; }));
  cases.push_back(simple(
      "batched_matmul_transposed",
      [](const Inputs& in) { return ops::batched_matmul(in[0].second, in[1].second, true); },
      [] { return Inputs{{"a", random_tensor({3, 4, 5}, 1)}, {"bt", random_tensor({3, 6, 5}, 3)}}; }));
  cases.push_back(simple(
      "linear", [](const Inputs& in) { return ops::linear(in[0].second, in[1].second, in[2].second); },
      [] {
        return Inputs{{"x", random_tensor({2, 4, 6}, 1)}, {"w", random_tensor({5, 6}, 2)},
                      {"b", random_tensor({5}, 3)}};
      }));
  cases.push_back(simple(
      "linear_no_bias",
      [](const Inputs& in) { return ops::linear(in[0].second, in[1].second, Tensor<double>()); },
      [] { return Inputs{{"x", random_tensor({2, 4, 6}, 1)}, {"w", random_tensor({5, 6}, 2)}}; }));
  cases.push_back(simple(
      "conv2d_same", [](const Inputs& in) { return ops::conv2d(in[0].second, in[1].second, in[2].second); },
      [] {
        return Inputs{{"x", random_tensor({2, 3, 6, 5}, 1)}, {"k", random_tensor({4, 3, 3, 3}, 2)},
                      {"b", random_tensor({4}, 3)}};
      }));
  cases.push_back(simple(
      "conv2d_valid_unbatched",
      [](const Inputs& in) { return ops::conv2d(in[0].second, in[1].second, Tensor<double>(), false); },
      [] { return Inputs{{"x", random_tensor({2, 7, 6}, 1)}, {"k", random_tensor({3, 2, 3, 3}, 2)}}; }));
  // Continuous random values: pooling ties have probability zero.
  cases.push_back(simple(
      "maxpool_2x1", [](const Inputs& in) { return ops::maxpool2d(in[0].second, {2, 1}); },
      [] { return Inputs{{"x", random_tensor({2, 3, 8, 6}, 1)}}; }));
  cases.push_back(simple(
      "maxpool_2x2", [](const Inputs& in) { return ops::maxpool2d(in[0].second, {2, 2}); },
      [] { return Inputs{{"x", random_tensor({2, 3, 8, 6}, 1)}}; }));
  cases.push_back({"batchnorm_training", [] {
                     auto x = random_tensor({3, 2, 4, 5}, 1);
                     auto g = random_tensor({2}, 2);
                     auto b = random_tensor({2}, 3);
                     ops::BatchNormStats<double> stats(2);
                     return check_gradients([&] { return ops::batchnorm2d(x, g, b, stats, true); },
                                            {{"x", x}, {"gamma", g}, {"beta", b}});
                   }});
  cases.push_back({"batchnorm_eval", [] {
                     auto x = random_tensor({2, 3, 4, 2}, 1);
                     auto g = random_tensor({3}, 2);
                     auto b = random_tensor({3}, 3);
                     ops::BatchNormStats<double> stats(3);
                     stats.running_mean.data()[1] = 0.4;
                     stats.running_var.data()[2] = 2.5;
                     return check_gradients([&] { return ops::batchnorm2d(x, g, b, stats, false); },
                                            {{"x", x}, {"gamma", g}, {"beta", b}});
                   }});
  cases.push_back(simple(
      "prelu", [](const Inputs& in) { return ops::prelu(in[0].second, in[1].second); },
      [] { return Inputs{{"x", away_from_zero({2, 3, 4, 3}, 1)}, {"slope", random_tensor({3}, 2, 0.3)}}; }));
  cases.push_back(simple(
      "layernorm", [](const Inputs& in) { return ops::layernorm(in[0].second, in[1].second, in[2].second); },
      [] {
        return Inputs{{"x", random_tensor({3, 4, 8}, 1)}, {"gamma", random_tensor({8}, 2)},
                      {"beta", random_tensor({8}, 3)}};
      }));
  cases.push_back(simple(
      "softmax", [](const Inputs& in) { return ops::softmax(in[0].second); },
      [] { return Inputs{{"x", random_tensor({2, 3, 7}, 1, 2.0)}}; }));
  cases.push_back(simple(
      "dropout",
      [](const Inputs& in) {
        Rng rng(5);
        return ops::dropout(in[0].second, 0.3, rng, true);
      },
      [] { return Inputs{{"x", random_tensor({4, 9}, 1)}}; }));
  cases.push_back(simple(
      "sigmoid", [](const Inputs& in) { return ops::sigmoid(in[0].second); },
      [] { return Inputs{{"x", random_tensor({3, 5}, 1)}}; }));
  cases.push_back(simple(
      "relu", [](const Inputs& in) { return ops::relu(in[0].second); },
      [] { return Inputs{{"z", away_from_zero({3, 5}, 3)}}; }));
  cases.push_back(simple(
      "add", [](const Inputs& in) { return ops::add(in[0].second, in[1].second); },
      [] { return Inputs{{"x", random_tensor({3, 5}, 1)}, {"y", random_tensor({3, 5}, 2)}}; }));
  cases.push_back(simple(
      "mul", [](const Inputs& in) { return ops::mul(in[0].second, in[1].second); },
      [] { return Inputs{{"x", random_tensor({3, 5}, 1)}, {"y", random_tensor({3, 5}, 2)}}; }));
  cases.push_back(simple(
      "mul_aliased", [](const Inputs& in) { return ops::mul(in[0].second, in[0].second); },
      [] { return Inputs{{"x", random_tensor({3, 5}, 1)}}; }));
  cases.push_back(simple(
      "scale", [](const Inputs& in) { return ops::scale(in[0].second, -1.7); },
      [] { return Inputs{{"x", random_tensor({3, 5}, 1)}}; }));
  cases.push_back(simple(
      "sum", [](const Inputs& in) { return ops::sum(in[0].second); },
      [] { return Inputs{{"x", random_tensor({3, 5}, 1)}}; }));
  cases.push_back(simple(
      "mean", [](const Inputs& in) { return ops::mean(in[0].second); },
      [] { return Inputs{{"x", random_tensor({3, 5}, 1)}}; }));
  cases.push_back(simple(
      "reshape", [](const Inputs& in) { return ops::reshape(in[0].second, {6, 20}); },
      [] { return Inputs{{"x", random_tensor({2, 3, 4, 5}, 1)}}; }));
  cases.push_back(simple(
      "permute", [](const Inputs& in) { return ops::permute(in[0].second, {0, 3, 1, 2}); },
      [] { return Inputs{{"x", random_tensor({2, 3, 4, 5}, 1)}}; }));
  cases.push_back(simple(
      "permute_scattered", [](const Inputs& in) { return ops::permute(in[0].second, {2, 0, 3, 1}); },
      [] { return Inputs{{"x", random_tensor({2, 3, 4, 5}, 1)}}; }));
  cases.push_back({"bce_with_logits", [] {
                     auto z = random_tensor({3, 6}, 1, 3.0);
                     Tensor<double> y({3, 6});
                     Rng rng(2);
                     for (double& v : y.data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
                     return check_gradients([&] { return ops::bce_with_logits(z, y); }, {{"z", z}});
                   }});
  return cases;
}

/// Whole network in training mode (batch statistics, fixed dropout mask):
/// d=8, two heads, 16 mel bands, 16 frames, float64.
inline GradReport full_model_report() {
  model::ModelConfig cfg;
  cfg.n_mels = 16;
  cfg.conv_layers = 2;
  cfg.channels = 2;
  cfg.d = 8;
  cfg.d_ff = 16;
  cfg.heads = 2;
  cfg.dropout = 0.1;
  cfg.zero_init_head = false;
  model::VadModel<double> net(cfg, 3);
  net.set_training(true);

  auto mel = random_tensor({2, 16, 16}, 4);
  std::vector<std::pair<std::string, Tensor<double>>> inputs{{"mel", mel}};
  for (const auto& p : net.parameters()) inputs.push_back(p);
  return check_gradients(
      [&] {
        net.set_dropout_rng(Rng(11));
        return net.forward(mel).logits;
      },
      inputs);
}

}  // namespace vadforge::check
