#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vist/checkpoint.hpp"
#include "vist/config.hpp"
#include "vist/corpus.hpp"
#include "vist/gradcheck.hpp"
#include "vist/metrics.hpp"
#include "vist/model.hpp"
#include "vist/stories_io.hpp"
#include "vist/trainer.hpp"
#include "vist/vocabulary.hpp"

// Pipeline commands behind the `vist` command-line tool.

namespace vist::app {

namespace fs = std::filesystem;

inline std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

/// Toy corpus directory (manifest.json + images.bin) or a SIS annotation file
/// whose images live in image_root (default: <annotation dir>/images).
inline std::vector<StorySample> load_samples(const fs::path& data,
                                             const std::optional<fs::path>& image_root = {}) {
  if (!fs::exists(data)) throw DataError("data path does not exist: " + data.string());
  if (fs::is_directory(data)) return load_toy_corpus(data).samples;
  return parse_sis(data, image_root.value_or(data.parent_path() / "images"));
}

// ------------------------------------------------------------ make-toy-data

struct ToyDataSummary {
  std::size_t stories = 0;
  std::size_t images = 0;
  std::size_t sentences = 0;
};

inline ToyDataSummary make_toy_data(const fs::path& out, std::size_t stories, std::uint64_t seed,
                                    std::size_t image_size, std::ostream& log) {
  if (stories == 0) throw UsageError("--stories must be at least 1");
  ToyCorpusSpec spec{stories, image_size, seed};
  const auto corpus = make_toy_corpus(spec);
  save_toy_corpus(corpus, out,
                  {{"stories", std::to_string(stories)},
                   {"seed", std::to_string(seed)},
                   {"image_size", std::to_string(image_size)}});
  ToyDataSummary s{corpus.samples.size(), corpus.samples.size() * kImagesPerStory,
                   corpus.samples.size() * kImagesPerStory};
  log << "wrote " << s.stories << " stories, " << s.images << " images, " << s.sentences
      << " sentences to " << out.string() << '\n';
  return s;
}

// -------------------------------------------------------------------- train

struct TrainOptions {
  fs::path data;
  std::optional<fs::path> config_file;
  fs::path out;
  std::map<std::string, std::string> overrides;  // flag values, highest precedence
  std::optional<fs::path> image_root;
};

struct TrainSummary {
  RunConfig config;
  std::size_t vocab_size = 0;
  std::size_t train_stories = 0;
  std::size_t heldout_stories = 0;
  std::vector<EpochLog> log;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
};

inline RunConfig resolve_config(const std::optional<fs::path>& file,
                                const std::map<std::string, std::string>& overrides) {
  RunConfig cfg;
  if (file) cfg.load_file(*file);
  for (const auto& [k, v] : overrides) cfg.set(k, v, "--" + k);
  return cfg;
}

inline std::string loss_log_line(const EpochLog& e) {
  std::ostringstream os;
  os << e.epoch << ' ' << format_real(e.train_loss) << ' '
     << (e.heldout_loss ? format_real(*e.heldout_loss) : std::string("-"));
  return os.str();
}

inline TrainSummary run_train(const TrainOptions& opts, std::ostream& log) {
  TrainSummary summary;
  summary.config = resolve_config(opts.config_file, opts.overrides);
  const auto& cfg = summary.config;
  const auto train_cfg = cfg.train_config();

  const auto samples = load_samples(opts.data, opts.image_root);
  const auto split = split_corpus(samples);
  if (split.train.empty()) throw DataError("no training stories in " + opts.data.string());
  const auto vocab = Vocabulary::build(all_sentences(split.train), cfg.integer("min_count"));
  const auto model_cfg = cfg.model_config(vocab.size());
  summary.vocab_size = vocab.size();
  summary.train_stories = split.train.size();
  summary.heldout_stories = split.heldout.size();

  fs::create_directories(opts.out);
  vocab.save(opts.out / "vocab.txt");
  {
    std::ofstream echo(opts.out / "config.txt");
    echo << cfg.echo();
  }
  const auto echo = cfg.resolved();
  log << "training on " << split.train.size() << " stories (" << split.heldout.size()
      << " held out), vocabulary " << vocab.size() << ", lr " << cfg.get("lr") << ", weight_decay "
      << cfg.get("weight_decay") << ", batch_size " << cfg.get("batch_size") << '\n';

  const auto train_set = make_examples(split.train, vocab);
  const auto heldout_set = make_examples(split.heldout, vocab);

  std::ofstream loss_log(opts.out / "loss_log.txt");
  for (const auto& [k, v] : echo) loss_log << "# " << k << '=' << v << '\n';
  loss_log << "# epoch train_loss heldout_loss\n";

  std::size_t current_epoch = 0;
  TrainHooks<float> hooks;
  hooks.on_epoch = [&](const EpochLog& e) {
    current_epoch = e.epoch;
    loss_log << loss_log_line(e) << '\n';
    log << "epoch " << loss_log_line(e) << " (step " << e.step << ")\n";
  };
  hooks.on_checkpoint = [&](std::size_t step, ModelParams<float>& params,
                            const OptimizerState<float>& opt) {
    save_checkpoint(make_checkpoint(params, &opt, current_epoch, step, echo),
                    opts.out / ("step_" + std::to_string(step) + ".ckpt"));
  };

  auto result = train<float>(train_set, heldout_set, model_cfg, train_cfg, hooks);
  const std::size_t last_epoch = result.log.empty() ? 0 : result.log.back().epoch;
  save_checkpoint(make_checkpoint(result.params, &result.optimizer, last_epoch, result.steps, echo),
                  opts.out / "final.ckpt");
  save_checkpoint(make_checkpoint(result.best_params, nullptr, result.best_epoch, result.steps, echo),
                  opts.out / "best.ckpt");
  log << "finished after " << result.steps << " steps; best epoch " << result.best_epoch << '\n';
  summary.log = std::move(result.log);
  summary.steps = result.steps;
  summary.best_epoch = result.best_epoch;
  return summary;
}

// ----------------------------------------------------------------- generate

struct GenerateOptions {
  fs::path checkpoint;
  fs::path data;
  fs::path out;
  std::string split = "train";  // train | heldout | all
  std::optional<fs::path> vocab;
  std::optional<fs::path> image_root;
};

inline std::vector<StoryRecord> run_generate(const GenerateOptions& opts, std::ostream& log) {
  if (opts.split != "train" && opts.split != "heldout" && opts.split != "all") {
    throw UsageError("--split must be train, heldout or all");
  }
  const auto ck = load_checkpoint(opts.checkpoint);
  const auto vocab_path = opts.vocab.value_or(opts.checkpoint.parent_path() / "vocab.txt");
  const auto vocab = Vocabulary::load(vocab_path);
  const auto model_cfg = checkpoint_model_config(ck);
  if (vocab.size() != model_cfg.vocab_size) {
    throw DataError("vocabulary mismatch: checkpoint has " + std::to_string(model_cfg.vocab_size) +
                    " tokens, " + vocab_path.string() + " has " + std::to_string(vocab.size()));
  }
  const auto params = restore_model<float>(ck);

  RunConfig cfg;
  for (const auto& [k, v] : ck.config_echo) {
    if (RunConfig::defaults().count(k)) cfg.set(k, v, "checkpoint");
  }
  const auto decode = cfg.decode_config();

  const auto samples = load_samples(opts.data, opts.image_root);
  const auto split = split_corpus(samples);
  const auto& chosen = opts.split == "train" ? split.train : (opts.split == "heldout" ? split.heldout : samples);
  std::vector<StoryRecord> out;
  for (const auto& s : chosen) {
    const auto story = generate_story(load_image_set(s), params, decode);
    StoryRecord rec{s.story_id, {}};
    for (const auto& sent : story) rec.sentences.push_back(detokenize(vocab.decode(sent)));
    out.push_back(std::move(rec));
  }
  auto echo = cfg.resolved();
  echo["checkpoint"] = opts.checkpoint.string();
  echo["split"] = opts.split;
  write_stories(opts.out, out, echo);
  log << "generated " << out.size() << " stories to " << opts.out.string() << '\n';
  return out;
}

/// Reference stories file built from a corpus split, in the generator's format.
inline std::vector<StoryRecord> reference_stories(const std::vector<StorySample>& samples) {
  std::vector<StoryRecord> out;
  for (const auto& s : samples) {
    StoryRecord rec{s.story_id, {}};
    for (const auto& sent : s.sentences) rec.sentences.push_back(detokenize(sent));
    out.push_back(std::move(rec));
  }
  return out;
}

// ----------------------------------------------------------------- evaluate

inline metrics::Tokens story_tokens(const StoryRecord& r) {
  metrics::Tokens out;
  for (const auto& s : r.sentences) {
    auto t = tokenize(s);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

inline metrics::MetricsReport run_evaluate(const fs::path& candidates, const fs::path& references,
                                           const std::optional<fs::path>& out, std::ostream& log) {
  std::map<std::string, metrics::Tokens> cands;
  for (const auto& r : read_stories(candidates)) {
    if (!cands.emplace(r.story_id, story_tokens(r)).second) {
      throw DataError("duplicate candidate story id " + r.story_id);
    }
  }
  std::map<std::string, std::vector<metrics::Tokens>> refs;
  for (const auto& r : read_stories(references)) refs[r.story_id].push_back(story_tokens(r));
  auto report = metrics::evaluate_corpus(cands, refs);
  log << report.table();
  if (out) {
    if (out->has_parent_path()) fs::create_directories(out->parent_path());
    nlohmann::json doc = report.to_json();
    doc["config"] = {{"candidates", candidates.string()}, {"references", references.string()}};
    std::ofstream f(*out);
    if (!f) throw DataError("cannot write report " + out->string());
    f << doc.dump(2) << '\n';
  }
  return report;
}

// ---------------------------------------------------------------- gradcheck

struct TinyDims {
  std::size_t patch_dim = 8;   // D
  std::size_t enc_hidden = 8;  // h_dim
  std::size_t dec_hidden = 8;  // dec_h
  std::size_t vocab = 12;      // V
  std::size_t patches = 2;
  std::size_t blocks = 1;      // L
  std::size_t rounds = 5;      // r
  std::size_t embed_dim = 8;
  std::size_t attn_dim = 8;

  /// "D=8,h_dim=8,dec_h=8,V=12,patches=2,L=1,r=5[,emb=8][,attn=8]"
  static TinyDims parse(const std::string& spec) {
    TinyDims d;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw UsageError("--dims entry '" + item + "' is not key=value");
      const std::string key = item.substr(0, eq);
      std::size_t value = 0;
      try {
        value = std::stoul(item.substr(eq + 1));
      } catch (const std::exception&) {
        throw UsageError("--dims value for '" + key + "' is not an integer");
      }
      if (key == "D") d.patch_dim = value;
      else if (key == "h_dim") d.enc_hidden = value;
      else if (key == "dec_h") d.dec_hidden = value;
      else if (key == "V") d.vocab = value;
      else if (key == "patches") d.patches = value;
      else if (key == "L") d.blocks = value;
      else if (key == "r") d.rounds = value;
      else if (key == "emb") d.embed_dim = value;
      else if (key == "attn") d.attn_dim = value;
      else throw UsageError("unknown --dims key '" + key + "'");
    }
    if (d.vocab <= 4) throw UsageError("--dims V must exceed the 4 special tokens");
    if (d.patches == 0 || d.patch_dim == 0 || d.enc_hidden == 0 || d.dec_hidden == 0 ||
        d.embed_dim == 0 || d.attn_dim == 0) {
      throw UsageError("--dims sizes must be positive");
    }
    return d;
  }

  ModelConfig model_config() const {
    ModelConfig c;
    c.geometry = {2, 2 * patches, 3, 2};  // a 2 × 2N × 3 image cut into N 2×2 patches
    c.patch_dim = patch_dim;
    c.blocks = blocks;
    c.enc_hidden = enc_hidden;
    c.attn_dim = attn_dim;
    c.dec_hidden = dec_hidden;
    c.embed_dim = embed_dim;
    c.rounds = rounds;
    c.vocab_size = vocab;
    return c;
  }
};

/// A random story sized for `cfg`: five images with uniform pixels and
/// sentences of one to three non-special tokens.
inline std::pair<ImageSet, StoryTokens> random_story(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> pixel(0.0f, 1.0f);
  std::uniform_int_distribution<int> token(4, static_cast<int>(cfg.vocab_size) - 1);
  std::uniform_int_distribution<int> length(1, 3);
  ImageSet set;
  set.story_id = "gradcheck";
  for (auto& img : set.images) {
    img = Image(cfg.geometry.height, cfg.geometry.width, cfg.geometry.channels);
    for (auto& v : img.pixels) v = pixel(rng);
  }
  StoryTokens tokens;
  for (auto& s : tokens) {
    const int n = length(rng);
    for (int k = 0; k < n; ++k) s.push_back(token(rng));
  }
  return {std::move(set), std::move(tokens)};
}

/// Finite-difference check of every parameter tensor of a tiny model on the
/// teacher-forced story loss.
inline GradCheckReport model_gradcheck(const TinyDims& dims, std::uint64_t seed, double tolerance) {
  const auto cfg = dims.model_config();
  auto params = ModelParams<double>::init(cfg, seed);
  const auto story = random_story(cfg, seed + 1);
  GradCheckOptions opts;
  opts.tolerance = tolerance;
  return check_gradients(
      params.named(), [&] { return teacher_forced_loss<double>(story.first, story.second, params); },
      opts);
}

inline GradCheckReport run_gradcheck(const std::string& dims, std::uint64_t seed, double tolerance,
                                     std::ostream& log) {
  const auto report = model_gradcheck(TinyDims::parse(dims), seed, tolerance);
  for (const auto& t : report.tensors) {
    log << (t.passed ? "PASS " : "FAIL ") << std::left << std::setw(40) << t.name << " n=" << std::setw(5)
        << t.elements << " worst_rel=" << std::scientific << std::setprecision(3) << t.worst_relative
        << std::defaultfloat << '\n';
  }
  log << (report.passed ? "gradcheck passed" : "gradcheck FAILED") << ": worst relative error "
      << std::scientific << std::setprecision(3) << report.worst_relative << " (tolerance "
      << tolerance << ")" << std::defaultfloat << '\n';
  return report;
}

}  // namespace vist::app
