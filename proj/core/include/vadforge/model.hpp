#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vadforge/frontend.hpp"
#include "vadforge/ops.hpp"
#include "vadforge/rng.hpp"
#include "vadforge/tensor.hpp"

namespace vadforge::model {

struct ModelConfig {
  std::size_t n_mels = dsp::kMelBands;
  std::size_t conv_layers = 4;
  std::size_t channels = 32;
  std::size_t d = 256;
  std::size_t d_ff = 512;
  std::size_t heads = 16;
  double dropout = 0.1;
  std::size_t encoder_layers = 1;
  bool positional_encoding = true;
  std::size_t smoothing_window = 5;
  /// Start the output layer at zero so an untrained model predicts 0.5.
  bool zero_init_head = true;

  /// F' = n_mels / 2^conv_layers.
  std::size_t reduced_bands() const { return n_mels >> conv_layers; }
  std::size_t head_dim() const { return d / heads; }
  /// Throws kConfig when the fields are inconsistent.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

template <typename T>
using Named = std::vector<std::pair<std::string, Tensor<T>>>;

enum class AttentionCapture { kNone, kAverage, kPerHead };

template <typename T>
struct ForwardResult {
  Tensor<T> logits;          // [N,L]
  std::vector<T> attention;  // [N,L,L] head average of the final layer, if captured
  std::vector<T> per_head;   // [N,H,L,L], if captured
};

/// Output of a single-utterance inference call.
struct Prediction {
  std::vector<float> probs;      // [L]
  std::vector<float> attention;  // [L,L] when requested
  std::vector<float> per_head;   // [H,L,L] when requested
  std::size_t frames = 0;
};

/// CNN embedder, self-attention encoder and frame-wise sigmoid head.
/// Inputs are log-mel batches [N,L,F]; any L >= 1 works with the same weights.
template <typename T>
class VadModel {
 public:
  explicit VadModel(ModelConfig cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }

  /// [N,L,F] -> [N,L,d]. Each 3x3 block adds one frame of context, so with
  /// four blocks embedding l only sees mel frames l-4 .. l+4 (in eval mode).
  Tensor<T> embed(const Tensor<T>& mel);
  /// [N,L,d] -> [N,L,d].
  Tensor<T> encode(const Tensor<T>& embedding, AttentionCapture capture = AttentionCapture::kNone,
                   std::vector<T>* attention = nullptr, std::vector<T>* per_head = nullptr);
  ForwardResult<T> forward(const Tensor<T>& mel,
                           AttentionCapture capture = AttentionCapture::kNone);

  /// Eval-mode probabilities for one utterance, without recording gradients.
  Prediction predict(const dsp::MelFrames& mel, AttentionCapture capture = AttentionCapture::kNone);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  /// Stream used by dropout in training mode.
  void set_dropout_rng(Rng rng) { dropout_rng_ = std::move(rng); }

  /// Trainable tensors, in a fixed order.
  Named<T> parameters() const;
  /// Non-trainable state (batch-norm running statistics).
  Named<T> buffers() const;
  std::size_t parameter_count() const;
  void zero_grad() const;

 private:
  struct ConvBlock {
    Tensor<T> kernel, bias, gamma, beta, slope;
    ops::BatchNormStats<T> stats;
  };
  struct EncoderLayer {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> ff1_w, ff1_b, ff2_w, ff2_b;
    Tensor<T> ln2_gamma, ln2_beta;
  };

  Tensor<T> attention_block(const EncoderLayer& layer, const Tensor<T>& x, bool capture,
                            std::vector<T>* attention, std::vector<T>* per_head);

  ModelConfig cfg_;
  std::vector<ConvBlock> conv_;
  Tensor<T> embed_w_, embed_b_;
  std::vector<EncoderLayer> encoder_;
  Tensor<T> head_w_, head_b_;
  bool training_ = false;
  Rng dropout_rng_;
};

extern template class VadModel<float>;
extern template class VadModel<double>;

/// Sinusoidal positional encoding [L,d].
std::vector<double> positional_encoding(std::size_t frames, std::size_t d);

/// Centered moving average; near the edges the window is truncated and the
/// average is taken over the frames that exist. window must be odd.
std::vector<float> smooth(std::span<const float> probs, std::size_t window);

/// Mean over heads of per-head maps laid out [H,L,L].
std::vector<float> average_attention(std::span<const float> per_head, std::size_t heads,
                                     std::size_t frames);

}  // namespace vadforge::model
