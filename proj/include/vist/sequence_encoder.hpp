#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vist/image.hpp"
#include "vist/init.hpp"
#include "vist/ops.hpp"

namespace vist {

/// Gate matrices act on [h_prev; w] (previous hidden state first).
template <typename T>
struct LSTMCellParams {
  Tensor<T> M_f, M_i, M_c, M_o;  // [hidden × (hidden + input)]
  Tensor<T> B_f, B_i, B_c, B_o;  // [hidden]

  static LSTMCellParams init(std::size_t input, std::size_t hidden, ParamInit& rng) {
    LSTMCellParams p;
    const std::size_t cols = hidden + input;
    p.M_f = rng.fan_in<T>({hidden, cols}, cols);
    p.M_i = rng.fan_in<T>({hidden, cols}, cols);
    p.M_c = rng.fan_in<T>({hidden, cols}, cols);
    p.M_o = rng.fan_in<T>({hidden, cols}, cols);
    p.B_f = rng.constant<T>({hidden}, 1.0);
    p.B_i = rng.constant<T>({hidden}, 0.0);
    p.B_c = rng.constant<T>({hidden}, 0.0);
    p.B_o = rng.constant<T>({hidden}, 0.0);
    return p;
  }

  std::size_t hidden() const { return M_f.dim(0); }
  std::size_t input() const { return M_f.dim(1) - M_f.dim(0); }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "M_f", M_f);
    f(prefix + "M_i", M_i);
    f(prefix + "M_c", M_c);
    f(prefix + "M_o", M_o);
    f(prefix + "B_f", B_f);
    f(prefix + "B_i", B_i);
    f(prefix + "B_c", B_c);
    f(prefix + "B_o", B_o);
  }
};

template <typename T>
struct LSTMState {
  Tensor<T> h;
  Tensor<T> c;
};

template <typename T>
LSTMState<T> lstm_step(const Tensor<T>& w, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                       const LSTMCellParams<T>& p) {
  const std::size_t hidden = p.hidden();
  if (w.rank() != 1 || h_prev.shape() != Shape{hidden} || c_prev.shape() != Shape{hidden} ||
      w.dim(0) != p.input()) {
    throw ShapeError("lstm_step: input " + shape_str(w.shape()) + ", h " +
                     shape_str(h_prev.shape()) + ", c " + shape_str(c_prev.shape()) +
                     " against gate matrix " + shape_str(p.M_f.shape()));
  }
  auto hw = concat<T>({h_prev, w});
  auto forget = sigmoid(add(matvec(p.M_f, hw), p.B_f));
  auto input = sigmoid(add(matvec(p.M_i, hw), p.B_i));
  auto candidate = tanh(add(matvec(p.M_c, hw), p.B_c));
  auto c = add(mul(forget, c_prev), mul(input, candidate));
  auto output = sigmoid(add(matvec(p.M_o, hw), p.B_o));
  auto h = mul(output, tanh(c));
  return {std::move(h), std::move(c)};
}

/// Mean over patch rows.
template <typename T>
Tensor<T> image_feature(const Tensor<T>& patch_features) {
  return mean_rows(patch_features);
}

template <typename T>
struct EncoderState {
  std::array<Tensor<T>, kImagesPerStory> forward_states;
  std::array<Tensor<T>, kImagesPerStory> backward_states;  // indexed by original time step
  Tensor<T> h_se;  // [forward_states[4]; backward_states[0]]

  /// [→h_t; ←h_t] for time step t (0-based).
  Tensor<T> step_state(std::size_t t) const {
    return concat<T>({forward_states.at(t), backward_states.at(t)});
  }
};

template <typename T>
EncoderState<T> encode_sequence(std::span<const Tensor<T>> features, const LSTMCellParams<T>& fwd,
                                const LSTMCellParams<T>& bwd) {
  if (features.size() != kImagesPerStory) {
    throw ShapeError("encode_sequence: expected 5 feature vectors, got " +
                     std::to_string(features.size()));
  }
  EncoderState<T> st;
  auto h = Tensor<T>::zeros({fwd.hidden()});
  auto c = Tensor<T>::zeros({fwd.hidden()});
  for (std::size_t t = 0; t < kImagesPerStory; ++t) {
    auto next = lstm_step(features[t], h, c, fwd);
    h = next.h;
    c = next.c;
    st.forward_states[t] = h;
  }
  h = Tensor<T>::zeros({bwd.hidden()});
  c = Tensor<T>::zeros({bwd.hidden()});
  for (std::size_t t = kImagesPerStory; t-- > 0;) {
    auto next = lstm_step(features[t], h, c, bwd);
    h = next.h;
    c = next.c;
    st.backward_states[t] = h;
  }
  st.h_se = concat<T>({st.forward_states[kImagesPerStory - 1], st.backward_states[0]});
  return st;
}

// ---------------------------------------------------------------- attention

/// Additive attention: s_n = v·tanh(W_q·query + W_k·value_n).
template <typename T>
struct AttentionLevelParams {
  Tensor<T> W_q;  // [attn × query_dim]
  Tensor<T> W_k;  // [attn × value_dim]
  Tensor<T> v;    // [attn]

  static AttentionLevelParams init(std::size_t attn, std::size_t query_dim, std::size_t value_dim,
                                   ParamInit& rng) {
    return {rng.fan_in<T>({attn, query_dim}, query_dim), rng.fan_in<T>({attn, value_dim}, value_dim),
            rng.fan_in<T>({attn}, attn)};
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "W_q", W_q);
    f(prefix + "W_k", W_k);
    f(prefix + "v", v);
  }
};

template <typename T>
struct AttentionParams {
  AttentionLevelParams<T> patch;
  AttentionLevelParams<T> set;
  Tensor<T> W_zeta;  // [dec_h × (D + 2h + 2h)]

  static AttentionParams init(std::size_t patch_dim, std::size_t enc_hidden, std::size_t attn,
                              std::size_t dec_hidden, ParamInit& rng) {
    AttentionParams p;
    const std::size_t query = 2 * enc_hidden;
    p.patch = AttentionLevelParams<T>::init(attn, query, patch_dim, rng);
    p.set = AttentionLevelParams<T>::init(attn, query, query, rng);
    const std::size_t fused = patch_dim + 2 * query;
    p.W_zeta = rng.fan_in<T>({dec_hidden, fused}, fused);
    return p;
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    patch.for_each(prefix + "patch/", f);
    set.for_each(prefix + "set/", f);
    f(prefix + "W_zeta", W_zeta);
  }
};

template <typename T>
struct AttentionResult {
  Tensor<T> weights;  // [N], sums to 1
  Tensor<T> context;  // [value_dim], convex combination of the value rows
};

/// Attends over the rows of values[N×d].
template <typename T>
AttentionResult<T> additive_attention(const Tensor<T>& query, const Tensor<T>& values,
                                      const AttentionLevelParams<T>& p) {
  if (query.rank() != 1 || query.dim(0) != p.W_q.dim(1)) {
    throw ShapeError("attention: query " + shape_str(query.shape()) + " vs W_q " +
                     shape_str(p.W_q.shape()));
  }
  if (values.rank() != 2 || values.dim(1) != p.W_k.dim(1)) {
    throw ShapeError("attention: values " + shape_str(values.shape()) + " vs W_k " +
                     shape_str(p.W_k.shape()));
  }
  auto projected_query = matvec(p.W_q, query);
  auto keys = matmul(values, transpose(p.W_k));  // [N×attn]
  auto scores = matvec(tanh(add_rowwise(keys, projected_query)), p.v);
  auto weights = softmax(scores, 0);
  auto context = matvec(transpose(values), weights);
  return {std::move(weights), std::move(context)};
}

template <typename T>
AttentionResult<T> attend_patches(const Tensor<T>& query, const Tensor<T>& patch_features,
                                  const AttentionParams<T>& p) {
  return additive_attention(query, patch_features, p.patch);
}

template <typename T>
AttentionResult<T> attend_set(const Tensor<T>& query, const EncoderState<T>& enc,
                              const AttentionParams<T>& p) {
  std::vector<Tensor<T>> rows;
  for (std::size_t t = 0; t < kImagesPerStory; ++t) rows.push_back(enc.step_state(t));
  return additive_attention(query, stack_rows(rows), p.set);
}

/// ζ for image `index` (0-based): tanh(W_ζ · [g_i; query_i; s]).
template <typename T>
Tensor<T> make_zeta(std::size_t index, const EncoderState<T>& enc,
                    std::span<const Tensor<T>> patch_features, const AttentionParams<T>& p) {
  if (index >= kImagesPerStory || patch_features.size() != kImagesPerStory) {
    throw ShapeError("make_zeta: image index " + std::to_string(index + 1) +
                     " outside 1..5 or wrong patch set count");
  }
  auto query = enc.step_state(index);
  auto g = attend_patches(query, patch_features[index], p).context;
  auto s = attend_set(query, enc, p).context;
  return tanh(matvec(p.W_zeta, concat<T>({g, query, s})));
}

}  // namespace vist
