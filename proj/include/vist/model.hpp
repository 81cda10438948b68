#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vist/image.hpp"
#include "vist/init.hpp"
#include "vist/mogrifier.hpp"
#include "vist/ops.hpp"
#include "vist/patch_encoder.hpp"
#include "vist/sequence_encoder.hpp"

namespace vist {

struct ModelConfig {
  PatchGeometry geometry;
  std::size_t patch_dim = 32;    // D
  std::size_t blocks = 2;        // L
  std::size_t enc_hidden = 32;   // h_dim
  std::size_t attn_dim = 32;
  std::size_t dec_hidden = 64;   // dec_h
  std::size_t embed_dim = 32;
  std::size_t rounds = 5;        // r
  std::size_t vocab_size = 0;    // V

  friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.geometry.height == b.geometry.height && a.geometry.width == b.geometry.width &&
           a.geometry.channels == b.geometry.channels && a.geometry.patch == b.geometry.patch &&
           a.patch_dim == b.patch_dim && a.blocks == b.blocks && a.enc_hidden == b.enc_hidden &&
           a.attn_dim == b.attn_dim && a.dec_hidden == b.dec_hidden &&
           a.embed_dim == b.embed_dim && a.rounds == b.rounds && a.vocab_size == b.vocab_size;
  }
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Every trainable tensor of the storytelling model.
template <typename T>
struct ModelParams {
  ModelConfig config;
  PatchEmbeddingParams<T> patch;
  LSTMCellParams<T> encoder_forward;
  LSTMCellParams<T> encoder_backward;
  AttentionParams<T> attention;
  MogrifierParams<T> decoder;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.vocab_size == 0) throw ShapeError("model needs a non-empty vocabulary");
    ParamInit rng(seed);
    ModelParams p;
    p.config = cfg;
    p.patch = PatchEmbeddingParams<T>::init(cfg.geometry, cfg.patch_dim, cfg.blocks, rng);
    p.encoder_forward = LSTMCellParams<T>::init(cfg.patch_dim, cfg.enc_hidden, rng);
    p.encoder_backward = LSTMCellParams<T>::init(cfg.patch_dim, cfg.enc_hidden, rng);
    p.attention = AttentionParams<T>::init(cfg.patch_dim, cfg.enc_hidden, cfg.attn_dim,
                                           cfg.dec_hidden, rng);
    p.decoder = MogrifierParams<T>::init(cfg.vocab_size, cfg.embed_dim, cfg.dec_hidden,
                                         cfg.rounds, rng);
    return p;
  }

  template <typename F>
  void for_each(F&& f) {
    patch.for_each("patch/", f);
    encoder_forward.for_each("encoder/forward/", f);
    encoder_backward.for_each("encoder/backward/", f);
    attention.for_each("attention/", f);
    decoder.for_each("decoder/", f);
  }

  /// Parameter handles sorted by name.
  NamedTensors<T> named() {
    NamedTensors<T> out;
    for_each([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each([&](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
  }

  void zero_grad() {
    for_each([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }
};

/// Story-level encoder outputs: patch features, Bi-LSTM states and the five
/// decoder initializers ζ.
template <typename T>
struct StoryEncoding {
  std::array<Tensor<T>, kImagesPerStory> patches;
  EncoderState<T> encoder;
  std::array<Tensor<T>, kImagesPerStory> zetas;
};

template <typename T>
StoryEncoding<T> encode_story(const ImageSet& set, const ModelParams<T>& params) {
  const auto& geo = params.config.geometry;
  StoryEncoding<T> out;
  std::array<Tensor<T>, kImagesPerStory> features;
  for (std::size_t i = 0; i < kImagesPerStory; ++i) {
    const Image& img = set.images[i];
    if (img.channels != geo.channels) {
      throw ShapeError("image " + std::to_string(i + 1) + " of story '" + set.story_id + "' has " +
                       std::to_string(img.channels) + " channels, model expects " +
                       std::to_string(geo.channels));
    }
    const Image input = normalize_pixels(resize_nearest(img, geo.height, geo.width));
    out.patches[i] = embed_patches(extract_patches<T>(input, geo.patch), params.patch);
    features[i] = image_feature(out.patches[i]);
  }
  out.encoder = encode_sequence<T>(features, params.encoder_forward, params.encoder_backward);
  for (std::size_t i = 0; i < kImagesPerStory; ++i) {
    out.zetas[i] = make_zeta<T>(i, out.encoder, out.patches, params.attention);
  }
  return out;
}

/// Token ids of one sentence, without start/end markers.
using TokenIds = std::vector<int>;
using StoryTokens = std::array<TokenIds, kImagesPerStory>;

/// Teacher-forced logits for every sentence of a story. Sentence i is fed
/// [start, t₁..tₙ] from h₀ = ζ_i, c₀ = 0 and must predict [t₁..tₙ, end].
/// Rows and targets are appended to the given accumulators.
template <typename T>
void teacher_forced_rows(const ImageSet& set, const StoryTokens& sentences,
                         const ModelParams<T>& params, const DecodeConfig& cfg,
                         std::vector<Tensor<T>>& logits, std::vector<int>& targets) {
  const auto enc = encode_story(set, params);
  for (std::size_t i = 0; i < kImagesPerStory; ++i) {
    Tensor<T> h = enc.zetas[i];
    auto c = Tensor<T>::zeros({params.decoder.hidden()});
    int input = cfg.start_id;
    for (std::size_t t = 0; t <= sentences[i].size(); ++t) {
      auto step = decoder_step(input, h, c, params.decoder);
      logits.push_back(step.logits);
      const int target = t < sentences[i].size() ? sentences[i][t] : cfg.end_id;
      targets.push_back(target);
      h = step.h;
      c = step.c;
      input = target;
    }
  }
}

template <typename T>
Tensor<T> teacher_forced_loss(const ImageSet& set, const StoryTokens& sentences,
                              const ModelParams<T>& params, const DecodeConfig& cfg = {}) {
  std::vector<Tensor<T>> logits;
  std::vector<int> targets;
  teacher_forced_rows(set, sentences, params, cfg, logits, targets);
  return cross_entropy(stack_rows(logits), std::span<const int>(targets), cfg.pad_id);
}

template <typename T>
std::array<TokenIds, kImagesPerStory> generate_story(const ImageSet& set,
                                                     const ModelParams<T>& params,
                                                     const DecodeConfig& cfg) {
  const auto enc = encode_story(set, params);
  std::array<TokenIds, kImagesPerStory> out;
  for (std::size_t i = 0; i < kImagesPerStory; ++i) {
    out[i] = generate_sentence(enc.zetas[i], params.decoder, cfg);
  }
  return out;
}

}  // namespace vist
