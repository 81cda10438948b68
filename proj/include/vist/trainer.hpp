#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vist/adam.hpp"
#include "vist/corpus.hpp"
#include "vist/model.hpp"

namespace vist {

struct TrainingExample {
  std::string story_id;
  ImageSet images;
  StoryTokens tokens;
};

inline std::vector<TrainingExample> make_examples(const std::vector<StorySample>& samples,
                                                  const Vocabulary& vocab) {
  std::vector<TrainingExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.story_id, load_image_set(s), encode_story_tokens(s, vocab)});
  return out;
}

/// Mean cross-entropy over every supervised position of a batch of stories.
template <typename T>
Tensor<T> batch_loss(std::span<const TrainingExample* const> batch, const ModelParams<T>& params,
                     const DecodeConfig& cfg = {}) {
  std::vector<Tensor<T>> logits;
  std::vector<int> targets;
  for (const auto* ex : batch) teacher_forced_rows(ex->images, ex->tokens, params, cfg, logits, targets);
  return cross_entropy(stack_rows(logits), std::span<const int>(targets), cfg.pad_id);
}

/// Position-pooled loss over a set of stories, without recording gradients.
template <typename T>
double evaluate_loss(const std::vector<TrainingExample>& examples, const ModelParams<T>& params) {
  double total = 0.0;
  std::size_t positions = 0;
  for (const auto& ex : examples) {
    const TrainingExample* one[] = {&ex};
    std::size_t n = 0;
    for (const auto& s : ex.tokens) n += s.size() + 1;
    total += static_cast<double>(batch_loss<T>(one, params).item()) * static_cast<double>(n);
    positions += n;
  }
  return positions == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(positions);
}

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps completed at the end of the epoch
  double train_loss = 0.0;
  std::optional<double> heldout_loss;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  OptimizerState<T> optimizer;
  std::vector<EpochLog> log;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
  ModelParams<T> best_params;  // lowest held-out loss, or final when nothing is held out
};

template <typename T>
struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(std::size_t step, ModelParams<T>&, const OptimizerState<T>&)> on_checkpoint;
};

namespace detail {

template <typename T>
std::vector<std::string> non_finite_parameters(ModelParams<T>& params) {
  std::vector<std::string> bad;
  params.for_each([&](const std::string& name, Tensor<T>& t) {
    for (T v : t.data()) {
      if (!std::isfinite(static_cast<double>(v))) {
        bad.push_back(name);
        return;
      }
    }
  });
  return bad;
}

template <typename T>
ModelParams<T> copy_params(ModelParams<T> params) {
  params.for_each([](const std::string&, Tensor<T>& t) { t = t.clone(true); });
  return params;
}

}  // namespace detail

/// Teacher-forced Adam training. Deterministic for a fixed config: the
/// initialization and per-epoch shuffles both derive from cfg.seed.
template <typename T>
TrainResult<T> train(const std::vector<TrainingExample>& train_set,
                     const std::vector<TrainingExample>& heldout, const ModelConfig& model_cfg,
                     const TrainConfig& cfg, const TrainHooks<T>& hooks = {},
                     std::optional<ModelParams<T>> initial = std::nullopt) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  TrainResult<T> result{initial ? std::move(*initial) : ModelParams<T>::init(model_cfg, cfg.seed),
                        {}, {}, 0, 0, {}};
  auto& params = result.params;
  const auto named = params.named();
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_heldout = std::numeric_limits<double>::infinity();
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    bool step_limit = false;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        step_limit = true;
        break;
      }
      std::vector<const TrainingExample*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        batch.push_back(&train_set[order[k]]);
      }
      params.zero_grad();
      Tape<T> tape;
      Tensor<T> loss;
      {
        auto rec = tape.record();
        loss = batch_loss<T>(batch, params);
      }
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        auto bad = detail::non_finite_parameters(params);
        std::string names;
        for (const auto& b : bad) names += (names.empty() ? "" : ", ") + b;
        throw NumericError("non-finite loss at step " + std::to_string(result.steps + 1) +
                           (bad.empty() ? std::string(" (all parameters finite)")
                                        : "; non-finite parameter(s): " + names));
      }
      tape.backward(loss);
      if (cfg.grad_clip > 0.0) clip_grad_norm(named, cfg.grad_clip);
      adam_step(named, result.optimizer, cfg);
      ++result.steps;
      loss_sum += value;
      ++batches;
      if (cfg.checkpoint_every > 0 && result.steps % cfg.checkpoint_every == 0 && hooks.on_checkpoint) {
        hooks.on_checkpoint(result.steps, params, result.optimizer);
      }
    }
    if (batches == 0) break;

    EpochLog entry;
    entry.epoch = epoch;
    entry.step = result.steps;
    entry.train_loss = loss_sum / static_cast<double>(batches);
    if (!heldout.empty()) {
      entry.heldout_loss = evaluate_loss(heldout, params);
      if (*entry.heldout_loss < best_heldout) {
        best_heldout = *entry.heldout_loss;
        result.best_epoch = epoch;
        result.best_params = detail::copy_params(params);
        have_best = true;
      }
    }
    result.log.push_back(entry);
    if (hooks.on_epoch) hooks.on_epoch(entry);
    if (step_limit) break;
    if (cfg.target_loss > 0.0 && entry.train_loss < cfg.target_loss) break;
    if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
  }
  if (!have_best) {
    result.best_epoch = result.log.empty() ? 0 : result.log.back().epoch;
    result.best_params = detail::copy_params(params);
  }
  return result;
}

}  // namespace vist
