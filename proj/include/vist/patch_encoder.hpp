#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vist/image.hpp"
#include "vist/init.hpp"
#include "vist/ops.hpp"

namespace vist {

struct PatchGeometry {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
  std::size_t patch = 16;

  std::size_t patch_length() const { return patch * patch * channels; }
  std::size_t num_patches() const { return (height / patch) * (width / patch); }

  void validate() const {
    if (patch == 0 || height % patch != 0 || width % patch != 0) {
      throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                       " is not divisible into " + std::to_string(patch) + "x" +
                       std::to_string(patch) + " patches");
    }
  }
};

/// Pre-norm single-head self-attention block with a GELU MLP. Linear weights
/// are stored input-major ([in×out]) and applied as rows·W.
template <typename T>
struct TransformerBlockParams {
  Tensor<T> norm1_gain, norm1_bias;
  Tensor<T> query, key, value, out;
  Tensor<T> norm2_gain, norm2_bias;
  Tensor<T> mlp_in, mlp_in_bias, mlp_out, mlp_out_bias;

  static TransformerBlockParams init(std::size_t dim, std::size_t mlp_ratio, ParamInit& rng) {
    TransformerBlockParams p;
    const std::size_t hidden = dim * mlp_ratio;
    p.norm1_gain = rng.constant<T>({dim}, 1.0);
    p.norm1_bias = rng.constant<T>({dim}, 0.0);
    p.query = rng.fan_in<T>({dim, dim}, dim);
    p.key = rng.fan_in<T>({dim, dim}, dim);
    p.value = rng.fan_in<T>({dim, dim}, dim);
    p.out = rng.fan_in<T>({dim, dim}, dim);
    p.norm2_gain = rng.constant<T>({dim}, 1.0);
    p.norm2_bias = rng.constant<T>({dim}, 0.0);
    p.mlp_in = rng.fan_in<T>({dim, hidden}, dim);
    p.mlp_in_bias = rng.constant<T>({hidden}, 0.0);
    p.mlp_out = rng.fan_in<T>({hidden, dim}, hidden);
    p.mlp_out_bias = rng.constant<T>({dim}, 0.0);
    return p;
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "norm1_gain", norm1_gain);
    f(prefix + "norm1_bias", norm1_bias);
    f(prefix + "query", query);
    f(prefix + "key", key);
    f(prefix + "value", value);
    f(prefix + "out", out);
    f(prefix + "norm2_gain", norm2_gain);
    f(prefix + "norm2_bias", norm2_bias);
    f(prefix + "mlp_in", mlp_in);
    f(prefix + "mlp_in_bias", mlp_in_bias);
    f(prefix + "mlp_out", mlp_out);
    f(prefix + "mlp_out_bias", mlp_out_bias);
  }
};

template <typename T>
struct PatchEmbeddingParams {
  Tensor<T> projection;  // E: [(P²·C)×D], no bias
  Tensor<T> positional;  // [N×D]
  std::vector<TransformerBlockParams<T>> blocks;
  Tensor<T> final_norm_gain;  // [D], closes the block stack; unused when there are no blocks
  Tensor<T> final_norm_bias;

  static PatchEmbeddingParams init(const PatchGeometry& geo, std::size_t dim, std::size_t depth,
                                   ParamInit& rng) {
    geo.validate();
    PatchEmbeddingParams p;
    p.projection = rng.fan_in<T>({geo.patch_length(), dim}, geo.patch_length());
    p.positional = rng.uniform<T>({geo.num_patches(), dim}, 0.02);
    for (std::size_t i = 0; i < depth; ++i) {
      p.blocks.push_back(TransformerBlockParams<T>::init(dim, 2, rng));
    }
    if (depth > 0) {
      p.final_norm_gain = rng.constant<T>({dim}, 1);
      p.final_norm_bias = rng.constant<T>({dim}, 0);
    }
    return p;
  }

  std::size_t dim() const { return projection.dim(1); }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "projection", projection);
    f(prefix + "positional", positional);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].for_each(prefix + "block" + std::to_string(i) + "/", f);
    }
    if (!blocks.empty()) {
      f(prefix + "final_norm_gain", final_norm_gain);
      f(prefix + "final_norm_bias", final_norm_bias);
    }
  }
};

/// Splits an image into non-overlapping P×P patches in grid order (left to
/// right, top to bottom). Row n of the result is patch n flattened row-major
/// with channels innermost.
template <typename T>
Tensor<T> extract_patches(const Image& image, std::size_t patch) {
  PatchGeometry{image.height, image.width, image.channels, patch}.validate();
  const std::size_t rows = image.height / patch, cols = image.width / patch;
  const std::size_t len = patch * patch * image.channels;
  std::vector<T> out;
  out.reserve(rows * cols * len);
  for (std::size_t gy = 0; gy < rows; ++gy)
    for (std::size_t gx = 0; gx < cols; ++gx)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t c = 0; c < image.channels; ++c)
            out.push_back(static_cast<T>(image.at(gy * patch + y, gx * patch + x, c)));
  return Tensor<T>({rows * cols, len}, std::move(out));
}

/// Inverse of extract_patches.
template <typename T>
Image assemble_patches(const Tensor<T>& patches, const PatchGeometry& geo) {
  geo.validate();
  if (patches.shape() != Shape{geo.num_patches(), geo.patch_length()}) {
    throw ShapeError("assemble_patches: got " + shape_str(patches.shape()));
  }
  Image img(geo.height, geo.width, geo.channels);
  const std::size_t cols = geo.width / geo.patch;
  std::size_t k = 0;
  for (std::size_t n = 0; n < geo.num_patches(); ++n) {
    const std::size_t gy = n / cols, gx = n % cols;
    for (std::size_t y = 0; y < geo.patch; ++y)
      for (std::size_t x = 0; x < geo.patch; ++x)
        for (std::size_t c = 0; c < geo.channels; ++c)
          img.at(gy * geo.patch + y, gx * geo.patch + x, c) = static_cast<float>(patches[k++]);
  }
  return img;
}

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerBlockParams<T>& b) {
  const T inv_sqrt_dim = T{1} / std::sqrt(static_cast<T>(x.dim(1)));
  auto h = layer_norm_rows(x, b.norm1_gain, b.norm1_bias);
  auto q = matmul(h, b.query);
  auto k = matmul(h, b.key);
  auto v = matmul(h, b.value);
  auto weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt_dim), 1);
  auto y = add(x, matmul(matmul(weights, v), b.out));
  auto h2 = layer_norm_rows(y, b.norm2_gain, b.norm2_bias);
  auto hidden = gelu(add_rowwise(matmul(h2, b.mlp_in), b.mlp_in_bias));
  return add(y, add_rowwise(matmul(hidden, b.mlp_out), b.mlp_out_bias));
}

/// Row i = patch_i · E + positional_i, then the attention blocks.
template <typename T>
Tensor<T> embed_patches(const Tensor<T>& patches, const PatchEmbeddingParams<T>& params) {
  if (patches.rank() != 2 || patches.dim(1) != params.projection.dim(0)) {
    throw ShapeError("embed_patches: patches " + shape_str(patches.shape()) +
                     " do not match projection " + shape_str(params.projection.shape()));
  }
  if (patches.dim(0) != params.positional.dim(0)) {
    throw ShapeError("embed_patches: " + std::to_string(patches.dim(0)) +
                     " patches but positional table " + shape_str(params.positional.shape()));
  }
  auto x = add(matmul(patches, params.projection), params.positional);
  if (params.blocks.empty()) return x;
  for (const auto& block : params.blocks) x = transformer_block(x, block);
  return layer_norm_rows(x, params.final_norm_gain, params.final_norm_bias);
}

template <typename T>
std::array<Tensor<T>, kImagesPerStory> encode_image_set(const ImageSet& set,
                                                         const PatchEmbeddingParams<T>& params,
                                                         std::size_t patch) {
  std::array<Tensor<T>, kImagesPerStory> out;
  for (std::size_t i = 0; i < kImagesPerStory; ++i) {
    out[i] = embed_patches(extract_patches<T>(set.images[i], patch), params);
  }
  return out;
}

}  // namespace vist
