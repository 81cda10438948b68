#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "vist/init.hpp"
#include "vist/ops.hpp"
#include "vist/sequence_encoder.hpp"

namespace vist {

/// Special token ids shared by the vocabulary and the decoder.
inline constexpr int kPadId = 0;
inline constexpr int kStartId = 1;
inline constexpr int kEndId = 2;
inline constexpr int kUnkId = 3;

struct DecodeConfig {
  std::size_t max_tokens = 30;
  int start_id = kStartId;
  int end_id = kEndId;
  int pad_id = kPadId;
  int unk_id = kUnkId;
};

template <typename T>
struct MogrifierParams {
  std::size_t rounds = 5;
  std::vector<Tensor<T>> M_xh;  // odd rounds 1,3,5,...: [emb × dec_h]
  std::vector<Tensor<T>> M_hx;  // even rounds 2,4,...:  [dec_h × emb]
  LSTMCellParams<T> cell;
  Tensor<T> embed;     // [V × emb]
  Tensor<T> out_proj;  // [V × dec_h]
  Tensor<T> out_bias;  // [V]

  static MogrifierParams init(std::size_t vocab, std::size_t emb, std::size_t hidden,
                              std::size_t rounds, ParamInit& rng) {
    MogrifierParams p;
    p.rounds = rounds;
    for (std::size_t i = 1; i <= rounds; ++i) {
      if (i % 2 == 1) {
        p.M_xh.push_back(rng.fan_in<T>({emb, hidden}, hidden));
      } else {
        p.M_hx.push_back(rng.fan_in<T>({hidden, emb}, emb));
      }
    }
    p.cell = LSTMCellParams<T>::init(emb, hidden, rng);
    // A lookup reads one row of the table, so its fan-in is 1.
    p.embed = rng.fan_in<T>({vocab, emb}, 1);
    p.out_proj = rng.fan_in<T>({vocab, hidden}, hidden);
    p.out_bias = rng.constant<T>({vocab}, 0.0);
    return p;
  }

  std::size_t vocab_size() const { return embed.dim(0); }
  std::size_t embed_dim() const { return embed.dim(1); }
  std::size_t hidden() const { return cell.hidden(); }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    for (std::size_t k = 0; k < M_xh.size(); ++k) f(prefix + "M_xh" + std::to_string(2 * k + 1), M_xh[k]);
    for (std::size_t k = 0; k < M_hx.size(); ++k) f(prefix + "M_hx" + std::to_string(2 * k + 2), M_hx[k]);
    cell.for_each(prefix + "cell/", f);
    f(prefix + "embed", embed);
    f(prefix + "out_proj", out_proj);
    f(prefix + "out_bias", out_bias);
  }
};

/// r rounds of mutual gating. Odd round i rescales the input by
/// 2σ(M_xh^i · h), even round i rescales the hidden state by 2σ(M_hx^i · w);
/// each round reads the value the other operand holds after the previous round.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> mogrify(const Tensor<T>& w, const Tensor<T>& h_prev,
                                        const MogrifierParams<T>& p) {
  if (p.M_xh.size() != (p.rounds + 1) / 2 || p.M_hx.size() != p.rounds / 2) {
    throw ShapeError("mogrify: " + std::to_string(p.rounds) + " rounds need " +
                     std::to_string((p.rounds + 1) / 2) + " M_xh and " +
                     std::to_string(p.rounds / 2) + " M_hx matrices");
  }
  Tensor<T> x = w, h = h_prev;
  for (std::size_t i = 1; i <= p.rounds; ++i) {
    if (i % 2 == 1) {
      const auto& M = p.M_xh[i / 2];
      if (M.dim(0) != x.size() || M.dim(1) != h.size()) {
        throw ShapeError("mogrify: M_xh" + std::to_string(i) + " " + shape_str(M.shape()) +
                         " vs w " + shape_str(x.shape()) + ", h " + shape_str(h.shape()));
      }
      x = mul(scale(sigmoid(matvec(M, h)), T{2}), x);
    } else {
      const auto& M = p.M_hx[i / 2 - 1];
      if (M.dim(0) != h.size() || M.dim(1) != x.size()) {
        throw ShapeError("mogrify: M_hx" + std::to_string(i) + " " + shape_str(M.shape()) +
                         " vs w " + shape_str(x.shape()) + ", h " + shape_str(h.shape()));
      }
      h = mul(scale(sigmoid(matvec(M, x)), T{2}), h);
    }
  }
  return {std::move(x), std::move(h)};
}

template <typename T>
struct DecoderStep {
  Tensor<T> logits;  // [V]
  Tensor<T> h;
  Tensor<T> c;
};

template <typename T>
DecoderStep<T> decoder_step(int token_id, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                            const MogrifierParams<T>& p) {
  if (token_id < 0 || static_cast<std::size_t>(token_id) >= p.vocab_size()) {
    throw ShapeError("decoder_step: token id " + std::to_string(token_id) +
                     " outside vocabulary of size " + std::to_string(p.vocab_size()));
  }
  auto w = row(p.embed, static_cast<std::size_t>(token_id));
  auto [w_up, h_up] = mogrify(w, h_prev, p);
  auto state = lstm_step(w_up, h_up, c_prev, p.cell);
  auto logits = add(matvec(p.out_proj, state.h), p.out_bias);
  return {std::move(logits), std::move(state.h), std::move(state.c)};
}

/// Index of the largest value; ties go to the lowest index.
template <typename T>
int argmax(const Tensor<T>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

/// Greedy decoding from the start token with h₀ = ζ and c₀ = 0. The result
/// excludes the start and end tokens.
template <typename T>
std::vector<int> generate_sentence(const Tensor<T>& zeta, const MogrifierParams<T>& p,
                                   const DecodeConfig& cfg) {
  std::vector<int> tokens;
  Tensor<T> h = zeta;
  auto c = Tensor<T>::zeros({p.hidden()});
  int token = cfg.start_id;
  for (std::size_t step = 0; step < cfg.max_tokens; ++step) {
    auto out = decoder_step(token, h, c, p);
    token = argmax(out.logits);
    if (token == cfg.end_id) break;
    tokens.push_back(token);
    h = out.h;
    c = out.c;
  }
  return tokens;
}

}  // namespace vist
