#include "vadforge/model.hpp"

#include <algorithm>
#include <cmath>

#include "vadforge/error.hpp"

namespace vadforge::model {

void ModelConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::kConfig, "model config: " + msg); };
  if (n_mels == 0 || conv_layers == 0 || channels == 0 || d == 0 || d_ff == 0 || heads == 0)
    bad("sizes must be positive");
  if (conv_layers >= 32 || (n_mels % (std::size_t(1) << conv_layers)) != 0)
    bad("n_mels (" + std::to_string(n_mels) + ") must be divisible by 2^conv_layers");
  if (d % heads != 0) bad("d must be divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0,1)");
  if (encoder_layers == 0) bad("need at least one encoder layer");
  if (smoothing_window == 0 || smoothing_window % 2 == 0) bad("smoothing_window must be odd");
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"n_mels", cfg.n_mels},
                     {"conv_layers", cfg.conv_layers},
                     {"channels", cfg.channels},
                     {"d", cfg.d},
                     {"d_ff", cfg.d_ff},
                     {"heads", cfg.heads},
                     {"dropout", cfg.dropout},
                     {"encoder_layers", cfg.encoder_layers},
                     {"positional_encoding", cfg.positional_encoding},
                     {"smoothing_window", cfg.smoothing_window},
                     {"zero_init_head", cfg.zero_init_head}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  static const char* kKeys[] = {"n_mels",         "conv_layers",         "channels",
                                "d",              "d_ff",                "heads",
                                "dropout",        "encoder_layers",      "positional_encoding",
                                "smoothing_window", "zero_init_head"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
      fail(ErrorCode::kConfig, "unknown model key '" + key + "'");
  }
  ModelConfig d;
  cfg.n_mels = j.value("n_mels", d.n_mels);
  cfg.conv_layers = j.value("conv_layers", d.conv_layers);
  cfg.channels = j.value("channels", d.channels);
  cfg.d = j.value("d", d.d);
  cfg.d_ff = j.value("d_ff", d.d_ff);
  cfg.heads = j.value("heads", d.heads);
  cfg.dropout = j.value("dropout", d.dropout);
  cfg.encoder_layers = j.value("encoder_layers", d.encoder_layers);
  cfg.positional_encoding = j.value("positional_encoding", d.positional_encoding);
  cfg.smoothing_window = j.value("smoothing_window", d.smoothing_window);
  cfg.zero_init_head = j.value("zero_init_head", d.zero_init_head);
  cfg.validate();
}

namespace {

template <typename T>
Tensor<T> kaiming(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / double(fan_in));
  for (T& v : t.data()) v = T(rng.uniform(-bound, bound));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> filled(Shape shape, T value) {
  Tensor<T> t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

template <typename T>
VadModel<T>::VadModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t c = cfg_.channels, d = cfg_.d;
  for (std::size_t i = 0; i < cfg_.conv_layers; ++i) {
    const std::size_t cin = i == 0 ? 1 : c;
    ConvBlock b{kaiming<T>(rng, {c, cin, 3, 3}, cin * 9),
                filled<T>({c}, T(0)),
                filled<T>({c}, T(1)),
                filled<T>({c}, T(0)),
                filled<T>({c}, T(0.25)),
                ops::BatchNormStats<T>(c)};
    conv_.push_back(std::move(b));
  }
  const std::size_t flat = c * cfg_.reduced_bands();
  embed_w_ = kaiming<T>(rng, {d, flat}, flat);
  embed_b_ = filled<T>({d}, T(0));
  for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) {
    EncoderLayer e;
    e.wq = kaiming<T>(rng, {d, d}, d);
    e.bq = filled<T>({d}, T(0));
    e.wk = kaiming<T>(rng, {d, d}, d);
    e.bk = filled<T>({d}, T(0));
    e.wv = kaiming<T>(rng, {d, d}, d);
    e.bv = filled<T>({d}, T(0));
    e.wo = kaiming<T>(rng, {d, d}, d);
    e.bo = filled<T>({d}, T(0));
    e.ln1_gamma = filled<T>({d}, T(1));
    e.ln1_beta = filled<T>({d}, T(0));
    e.ff1_w = kaiming<T>(rng, {cfg_.d_ff, d}, d);
    e.ff1_b = filled<T>({cfg_.d_ff}, T(0));
    e.ff2_w = kaiming<T>(rng, {d, cfg_.d_ff}, cfg_.d_ff);
    e.ff2_b = filled<T>({d}, T(0));
    e.ln2_gamma = filled<T>({d}, T(1));
    e.ln2_beta = filled<T>({d}, T(0));
    encoder_.push_back(std::move(e));
  }
  head_w_ = cfg_.zero_init_head ? filled<T>({1, d}, T(0)) : kaiming<T>(rng, {1, d}, d);
  head_b_ = filled<T>({1}, T(0));
}

template <typename T>
Tensor<T> VadModel<T>::embed(const Tensor<T>& mel) {
  if (mel.rank() != 3) {
    fail(ErrorCode::kDimension, "model input must be [N,L,F], got " + shape_str(mel.shape()));
  }
  if (mel.dim(2) != cfg_.n_mels) {
    fail(ErrorCode::kConfig, "model expects " + std::to_string(cfg_.n_mels) +
                                 " mel bands, input has " + std::to_string(mel.dim(2)));
  }
  const std::size_t n = mel.dim(0), frames = mel.dim(1);
  if (frames == 0) fail(ErrorCode::kDimension, "model input has no frames");
  // Frequency is the height axis and time the width axis, so pooling [2,1]
  // halves frequency and keeps one column per frame.
  Tensor<T> x = ops::reshape(ops::permute(mel, {0, 2, 1}), {n, 1, cfg_.n_mels, frames});
  for (ConvBlock& b : conv_) {
    x = ops::conv2d(x, b.kernel, b.bias);
    x = ops::batchnorm2d(x, b.gamma, b.beta, b.stats, training_);
    x = ops::prelu(x, b.slope);
    x = ops::maxpool2d(x, ops::PoolSize{2, 1});
  }
  x = ops::reshape(ops::permute(x, {0, 3, 1, 2}), {n, frames, cfg_.channels * cfg_.reduced_bands()});
  return ops::linear(x, embed_w_, embed_b_);
}

template <typename T>
Tensor<T> VadModel<T>::attention_block(const EncoderLayer& layer, const Tensor<T>& x, bool capture,
                                       std::vector<T>* attention, std::vector<T>* per_head) {
  const std::size_t n = x.dim(0), frames = x.dim(1), d = cfg_.d, h = cfg_.heads;
  const std::size_t dh = cfg_.head_dim();
  auto split = [&](const Tensor<T>& t) {
    return ops::reshape(ops::permute(ops::reshape(t, {n, frames, h, dh}), {0, 2, 1, 3}),
                        {n * h, frames, dh});
  };
  const Tensor<T> q = split(ops::linear(x, layer.wq, layer.bq));
  const Tensor<T> k = split(ops::linear(x, layer.wk, layer.bk));
  const Tensor<T> v = split(ops::linear(x, layer.wv, layer.bv));
  // Scaled by the model width d rather than the head width.
  const Tensor<T> scores =
      ops::scale(ops::batched_matmul(q, k, true), T(1.0 / std::sqrt(double(d))));
  const Tensor<T> probs = ops::softmax(scores);
  if (capture) {
    const auto p = probs.data();
    const std::size_t map = frames * frames;
    if (per_head) per_head->assign(p.begin(), p.end());
    if (attention) {
      attention->assign(n * map, T(0));
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t hi = 0; hi < h; ++hi) {
          const T* src = p.data() + (b * h + hi) * map;
          T* dst = attention->data() + b * map;
          for (std::size_t i = 0; i < map; ++i) dst[i] += src[i];
        }
      for (T& a : *attention) a /= T(h);
    }
  }
  Tensor<T> ctx =
      ops::batched_matmul(ops::dropout(probs, cfg_.dropout, dropout_rng_, training_), v);
  ctx = ops::reshape(ops::permute(ops::reshape(ctx, {n, h, frames, dh}), {0, 2, 1, 3}),
                     {n, frames, d});
  return ops::linear(ctx, layer.wo, layer.bo);
}

template <typename T>
Tensor<T> VadModel<T>::encode(const Tensor<T>& embedding, AttentionCapture capture,
                              std::vector<T>* attention, std::vector<T>* per_head) {
  if (embedding.rank() != 3 || embedding.dim(2) != cfg_.d) {
    fail(ErrorCode::kDimension, "encoder input must be [N,L," + std::to_string(cfg_.d) +
                                    "], got " + shape_str(embedding.shape()));
  }
  const std::size_t n = embedding.dim(0), frames = embedding.dim(1);
  Tensor<T> x = embedding;
  if (cfg_.positional_encoding) {
    const std::vector<double> pe = positional_encoding(frames, cfg_.d);
    Tensor<T> pos(embedding.shape());
    auto pd = pos.data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < pe.size(); ++i) pd[b * pe.size() + i] = T(pe[i]);
    x = ops::add(x, pos);
  }
  const double p = cfg_.dropout;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const EncoderLayer& e = encoder_[i];
    const bool last = i + 1 == encoder_.size();
    const bool want = last && capture != AttentionCapture::kNone;
    const Tensor<T> a = attention_block(e, x, want, attention,
                                        capture == AttentionCapture::kPerHead ? per_head : nullptr);
    x = ops::layernorm(ops::add(x, ops::dropout(a, p, dropout_rng_, training_)), e.ln1_gamma,
                       e.ln1_beta);
    Tensor<T> f = ops::relu(ops::linear(x, e.ff1_w, e.ff1_b));
    f = ops::linear(ops::dropout(f, p, dropout_rng_, training_), e.ff2_w, e.ff2_b);
    x = ops::layernorm(ops::add(x, ops::dropout(f, p, dropout_rng_, training_)), e.ln2_gamma,
                       e.ln2_beta);
  }
  return x;
}

template <typename T>
ForwardResult<T> VadModel<T>::forward(const Tensor<T>& mel, AttentionCapture capture) {
  ForwardResult<T> out;
  const Tensor<T> e = encode(embed(mel), capture, &out.attention, &out.per_head);
  const Tensor<T> z = ops::linear(e, head_w_, head_b_);
  out.logits = ops::reshape(z, {z.dim(0), z.dim(1)});
  return out;
}

template <typename T>
Prediction VadModel<T>::predict(const dsp::MelFrames& mel, AttentionCapture capture) {
  NoGradScope<T> no_grad;
  Tensor<T> x(Shape{1, mel.frames, mel.bands});
  auto xd = x.data();
  for (std::size_t i = 0; i < mel.values.size(); ++i) xd[i] = T(mel.values[i]);
  ForwardResult<T> r;
  if (training_) {
    // Only touch the flag when needed so concurrent eval-mode calls never write.
    training_ = false;
    try {
      r = forward(x, capture);
    } catch (...) {
      training_ = true;
      throw;
    }
    training_ = true;
  } else {
    r = forward(x, capture);
  }
  Prediction p;
  p.frames = mel.frames;
  p.probs.resize(mel.frames);
  const auto z = r.logits.data();
  for (std::size_t l = 0; l < mel.frames; ++l) {
    const double v = double(z[l]);
    p.probs[l] = float(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
  }
  p.attention.assign(r.attention.begin(), r.attention.end());
  p.per_head.assign(r.per_head.begin(), r.per_head.end());
  return p;
}

template <typename T>
Named<T> VadModel<T>::parameters() const {
  Named<T> out;
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    const std::string p = "cnn." + std::to_string(i) + ".";
    out.emplace_back(p + "kernel", conv_[i].kernel);
    out.emplace_back(p + "bias", conv_[i].bias);
    out.emplace_back(p + "bn.gamma", conv_[i].gamma);
    out.emplace_back(p + "bn.beta", conv_[i].beta);
    out.emplace_back(p + "prelu", conv_[i].slope);
  }
  out.emplace_back("embed.weight", embed_w_);
  out.emplace_back("embed.bias", embed_b_);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i) + ".";
    const EncoderLayer& e = encoder_[i];
    out.emplace_back(p + "attn.wq", e.wq);
    out.emplace_back(p + "attn.bq", e.bq);
    out.emplace_back(p + "attn.wk", e.wk);
    out.emplace_back(p + "attn.bk", e.bk);
    out.emplace_back(p + "attn.wv", e.wv);
    out.emplace_back(p + "attn.bv", e.bv);
    out.emplace_back(p + "attn.wo", e.wo);
    out.emplace_back(p + "attn.bo", e.bo);
    out.emplace_back(p + "ln1.gamma", e.ln1_gamma);
    out.emplace_back(p + "ln1.beta", e.ln1_beta);
    out.emplace_back(p + "ff1.weight", e.ff1_w);
    out.emplace_back(p + "ff1.bias", e.ff1_b);
    out.emplace_back(p + "ff2.weight", e.ff2_w);
    out.emplace_back(p + "ff2.bias", e.ff2_b);
    out.emplace_back(p + "ln2.gamma", e.ln2_gamma);
    out.emplace_back(p + "ln2.beta", e.ln2_beta);
  }
  out.emplace_back("head.weight", head_w_);
  out.emplace_back("head.bias", head_b_);
  return out;
}

template <typename T>
Named<T> VadModel<T>::buffers() const {
  Named<T> out;
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    const std::string p = "cnn." + std::to_string(i) + ".bn.";
    out.emplace_back(p + "running_mean", conv_[i].stats.running_mean);
    out.emplace_back(p + "running_var", conv_[i].stats.running_var);
  }
  return out;
}

template <typename T>
std::size_t VadModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

template <typename T>
void VadModel<T>::zero_grad() const {
  for (const auto& [name, t] : parameters()) t.zero_grad();
}

template class VadModel<float>;
template class VadModel<double>;

std::vector<double> positional_encoding(std::size_t frames, std::size_t d) {
  std::vector<double> pe(frames * d);
  for (std::size_t l = 0; l < frames; ++l)
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = double(l) / std::pow(10000.0, double(i) / double(d));
      pe[l * d + i] = std::sin(angle);
      if (i + 1 < d) pe[l * d + i + 1] = std::cos(angle);
    }
  return pe;
}

std::vector<float> smooth(std::span<const float> probs, std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    fail(ErrorCode::kConfig, "smoothing window must be odd, got " + std::to_string(window));
  }
  const std::size_t half = window / 2, n = probs.size();
  std::vector<float> out(n);
  for (std::size_t l = 0; l < n; ++l) {
    const std::size_t lo = l >= half ? l - half : 0;
    const std::size_t hi = std::min(n - 1, l + half);
    double s = 0.0;
    for (std::size_t i = lo; i <= hi; ++i) s += probs[i];
    out[l] = float(s / double(hi - lo + 1));
  }
  return out;
}

std::vector<float> average_attention(std::span<const float> per_head, std::size_t heads,
                                     std::size_t frames) {
  const std::size_t map = frames * frames;
  if (heads == 0 || per_head.size() != heads * map) {
    fail(ErrorCode::kDimension, "per-head attention has " + std::to_string(per_head.size()) +
                                    " entries, expected " + std::to_string(heads) + "x" +
                                    std::to_string(frames) + "x" + std::to_string(frames));
  }
  std::vector<double> acc(map, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < map; ++i) acc[i] += per_head[h * map + i];
  std::vector<float> out(map);
  for (std::size_t i = 0; i < map; ++i) out[i] = float(acc[i] / double(heads));
  return out;
}

}  // namespace vadforge::model
