// vist: toy data generation, training, story generation, evaluation and
// gradient checking for the visual storytelling model.
//
// Exit codes: 0 ok, 1 usage error, 2 data/checkpoint error, 3 verification failure.

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vist/app.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kVerify = 3 };

// Hyperparameter flags forwarded to the run config; they override --config.
const char* const kTrainKeys[] = {"lr",          "weight_decay", "batch_size", "max_epochs", "max_steps",
                                  "beta1",       "beta2",        "eps",        "seed",       "checkpoint_every",
                                  "grad_clip",   "target_loss",  "max_tokens", "image_size", "patch",
                                  "patch_dim",   "blocks",       "enc_hidden", "attn_dim",   "dec_hidden",
                                  "embed_dim",   "rounds",       "min_count"};

std::string flag_name(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Visual storytelling: patch encoder, Bi-LSTM attention, Mogrifier decoder"};
  cli.require_subcommand(1);

  // make-toy-data
  auto* toy = cli.add_subcommand("make-toy-data", "Write a synthetic shapes corpus");
  std::string toy_out;
  std::size_t toy_stories = 20, toy_size = 32;
  std::uint64_t toy_seed = 7;
  toy->add_option("--out", toy_out, "Output directory")->required();
  toy->add_option("--stories", toy_stories, "Number of stories")->capture_default_str();
  toy->add_option("--seed", toy_seed, "Random seed")->capture_default_str();
  toy->add_option("--image-size", toy_size, "Image side in pixels")->capture_default_str();

  // train
  auto* train = cli.add_subcommand("train", "Train a model");
  vist::app::TrainOptions train_opts;
  std::string train_data, train_out, train_config, train_images;
  std::map<std::string, std::string> train_flags;
  train->add_option("--data", train_data, "Toy corpus directory or SIS annotation file")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--config", train_config, "key=value config file");
  train->add_option("--image-root", train_images, "Image directory for SIS data");
  for (const char* key : kTrainKeys) {
    train->add_option(flag_name(key), train_flags[key], std::string("Override ") + key);
  }

  // generate
  auto* gen = cli.add_subcommand("generate", "Generate stories from a checkpoint");
  vist::app::GenerateOptions gen_opts;
  std::string gen_ckpt, gen_data, gen_out, gen_vocab, gen_images;
  gen->add_option("--checkpoint", gen_ckpt, "Checkpoint file")->required();
  gen->add_option("--data", gen_data, "Toy corpus directory or SIS annotation file")->required();
  gen->add_option("--out", gen_out, "Output stories file (JSON)")->required();
  gen->add_option("--split", gen_opts.split, "train, heldout or all")->capture_default_str();
  gen->add_option("--vocab", gen_vocab, "Vocabulary file (default: next to the checkpoint)");
  gen->add_option("--image-root", gen_images, "Image directory for SIS data");

  // evaluate
  auto* eval = cli.add_subcommand("evaluate", "Score candidate stories against references");
  std::string eval_cands, eval_refs, eval_out, eval_data, eval_split = "all";
  eval->add_option("--candidates", eval_cands, "Candidate stories file")->required();
  auto* refs_opt = eval->add_option("--references", eval_refs, "Reference stories file");
  auto* data_opt = eval->add_option("--data", eval_data, "Corpus to take references from");
  refs_opt->excludes(data_opt);
  eval->add_option("--split", eval_split, "Corpus split used with --data")->capture_default_str();
  eval->add_option("--out", eval_out, "Write the metrics report as JSON");

  // gradcheck
  auto* grad = cli.add_subcommand("gradcheck", "Finite-difference check of every parameter");
  std::string grad_dims = "D=8,h_dim=8,dec_h=8,V=12,patches=2,L=1,r=5";
  std::uint64_t grad_seed = 1;
  double grad_tol = 1e-4;
  grad->add_option("--dims", grad_dims, "Tiny model sizes")->capture_default_str();
  grad->add_option("--seed", grad_seed, "Initialisation seed")->capture_default_str();
  grad->add_option("--tolerance", grad_tol, "Maximum relative error")->capture_default_str();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*toy) {
      vist::app::make_toy_data(toy_out, toy_stories, toy_seed, toy_size, std::cout);
    } else if (*train) {
      train_opts.data = train_data;
      train_opts.out = train_out;
      if (!train_config.empty()) train_opts.config_file = train_config;
      if (!train_images.empty()) train_opts.image_root = train_images;
      for (const auto& [k, v] : train_flags)
        if (!v.empty()) train_opts.overrides[k] = v;
      vist::app::run_train(train_opts, std::cout);
    } else if (*gen) {
      gen_opts.checkpoint = gen_ckpt;
      gen_opts.data = gen_data;
      gen_opts.out = gen_out;
      if (!gen_vocab.empty()) gen_opts.vocab = gen_vocab;
      if (!gen_images.empty()) gen_opts.image_root = gen_images;
      vist::app::run_generate(gen_opts, std::cout);
    } else if (*eval) {
      std::optional<std::filesystem::path> out;
      if (!eval_out.empty()) out = eval_out;
      std::filesystem::path refs = eval_refs;
      if (refs.empty()) {
        if (eval_data.empty()) throw vist::UsageError("evaluate needs --references or --data");
        // Write the corpus references next to the candidates.
        const auto samples = vist::app::load_samples(eval_data);
        const auto split = vist::split_corpus(samples);
        const auto& chosen = eval_split == "train" ? split.train
                             : eval_split == "heldout" ? split.heldout
                                                       : samples;
        refs = std::filesystem::path(eval_cands).string() + ".references.json";
        vist::write_stories(refs, vist::app::reference_stories(chosen));
      }
      vist::app::run_evaluate(eval_cands, refs, out, std::cout);
    } else if (*grad) {
      const auto report = vist::app::run_gradcheck(grad_dims, grad_seed, grad_tol, std::cout);
      if (!report.passed) return kVerify;
    }
  } catch (const vist::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const vist::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kVerify;
  } catch (const std::exception& e) {
    // DataError, CheckpointError, ShapeError, filesystem failures
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
