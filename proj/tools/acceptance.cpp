// Acceptance checks: one PASS/FAIL line per criterion, exit code 1 if any fail.
//
//   vist_acceptance [--only N] [--work DIR]

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include <CLI11.hpp>

#include "metrics_fixture.hpp"
#include "oracles.hpp"
#include "test_util.hpp"
#include "vist/app.hpp"

using namespace vist;
using testing_util::TD;
using testing_util::to_vec;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// 1 ---------------------------------------------------------------------

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  const auto report = app::model_gradcheck(app::TinyDims::parse("D=8,h_dim=8,dec_h=8,V=12,patches=2,L=1,r=5"), 1, 1e-4);
  const double secs = seconds_since(t0);
  // every equation family must be among the checked tensors
  const char* required[] = {"patch/projection", "encoder/forward/M_f", "encoder/backward/M_o", "decoder/M_xh1",
                            "decoder/M_hx4",    "attention/patch/W_q", "attention/set/W_k",   "attention/W_zeta"};
  std::string missing;
  for (const char* name : required) {
    bool found = false;
    for (const auto& t : report.tensors) found = found || t.name == name;
    if (!found) missing += std::string(" ") + name;
  }
  std::string failed;
  for (const auto& t : report.tensors)
    if (!t.passed) failed += " " + t.name;
  Outcome o;
  o.pass = report.passed && missing.empty() && secs < 60.0;
  o.detail = std::to_string(report.tensors.size()) + " tensors, worst relative error " + fmt(report.worst_relative) +
             ", " + fmt(secs) + " s";
  if (!failed.empty()) o.detail += "; failing:" + failed;
  if (!missing.empty()) o.detail += "; not covered:" + missing;
  return o;
}

// 2 ---------------------------------------------------------------------

Outcome mogrifier_identities() {
  std::mt19937_64 rng(2);
  std::size_t violations = 0;
  auto params = [](std::size_t r, std::uint64_t seed) {
    ParamInit init(seed);
    return MogrifierParams<double>::init(9, 4, 5, r, init);
  };
  // (a) zero rounds against the plain LSTM decoder step
  const auto p0 = params(0, 30);
  for (int token = 0; token < 9; ++token) {
    const auto h = TD::vector(oracle::random_vec(rng, 5)), c = TD::vector(oracle::random_vec(rng, 5));
    const auto step = decoder_step(token, h, c, p0);
    const auto state = lstm_step(row(p0.embed, static_cast<std::size_t>(token)), h, c, p0.cell);
    const auto logits = add(matvec(p0.out_proj, state.h), p0.out_bias);
    violations += step.logits.values() != logits.values() || step.h.values() != state.h.values() ||
                  step.c.values() != state.c.values();
  }
  // (b) zero gates are the identity for r = 1..6
  for (std::size_t r = 1; r <= 6; ++r) {
    auto p = params(r, r);
    for (auto* group : {&p.M_xh, &p.M_hx})
      for (auto& m : *group)
        for (auto& v : m.mutable_data()) v = 0.0;
    const auto w = TD::vector(oracle::random_vec(rng, 4)), h = TD::vector(oracle::random_vec(rng, 5));
    const auto [w2, h2] = mogrify(w, h, p);
    violations += w2.values() != w.values() || h2.values() != h.values();
  }
  // (c) round parity: r = 1 gates w only, r = 2 gates each once
  {
    const auto p = params(1, 3);
    const auto w = oracle::random_vec(rng, 4), h = oracle::random_vec(rng, 5);
    const auto [w2, h2] = mogrify(TD::vector(w), TD::vector(h), p);
    violations += to_vec(h2) != h;
    const auto z = oracle::matvec(testing_util::to_mat(p.M_xh[0]), h);
    for (std::size_t j = 0; j < 4; ++j) violations += std::abs(w2[j] - 2 * oracle::sigmoid(z[j]) * w[j]) > 1e-15;
  }
  {
    const auto p = params(2, 4);
    const auto w = oracle::random_vec(rng, 4), h = oracle::random_vec(rng, 5);
    const auto [w2, h2] = mogrify(TD::vector(w), TD::vector(h), p);
    const auto z1 = oracle::matvec(testing_util::to_mat(p.M_xh[0]), h);
    oracle::Vec w1(4);
    for (std::size_t j = 0; j < 4; ++j) w1[j] = 2 * oracle::sigmoid(z1[j]) * w[j];
    const auto z2 = oracle::matvec(testing_util::to_mat(p.M_hx[0]), w1);
    for (std::size_t j = 0; j < 4; ++j) violations += std::abs(w2[j] - w1[j]) > 1e-15;
    for (std::size_t j = 0; j < 5; ++j) violations += std::abs(h2[j] - 2 * oracle::sigmoid(z2[j]) * h[j]) > 1e-15;
  }
  return {violations == 0, std::to_string(violations) + " violations"};
}

// 3 ---------------------------------------------------------------------

LSTMCellParams<double> random_cell(std::size_t in, std::size_t hidden, std::uint64_t seed) {
  ParamInit init(seed);
  auto p = LSTMCellParams<double>::init(in, hidden, init);
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  p.for_each("", [&](const std::string&, TD& t) {
    for (auto& v : t.mutable_data()) v = d(g);
  });
  return p;
}

std::array<TD, 5> random_features(std::mt19937_64& rng, std::size_t dim) {
  std::array<TD, 5> f;
  for (auto& x : f) x = TD::vector(oracle::random_vec(rng, dim, -1.5, 1.5));
  return f;
}

Outcome bilstm_reversal() {
  std::mt19937_64 rng(77);
  std::size_t violations = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const auto fwd = random_cell(4, 3, 1000 + draw), bwd = random_cell(4, 3, 2000 + draw);
    const auto x = random_features(rng, 4);
    std::array<TD, 5> reversed;
    for (std::size_t t = 0; t < 5; ++t) reversed[t] = x[4 - t];
    const auto a = encode_sequence<double>(x, fwd, bwd);
    const auto b = encode_sequence<double>(reversed, bwd, fwd);
    for (std::size_t t = 0; t < 5; ++t) {
      violations += a.backward_states[t].values() != b.forward_states[4 - t].values();
      violations += a.forward_states[t].values() != b.backward_states[4 - t].values();
    }
  }
  return {violations == 0, "100 draws, " + std::to_string(violations) + " mismatched states"};
}

// 4 ---------------------------------------------------------------------

AttentionLevelParams<double> random_level(std::size_t attn, std::size_t q, std::size_t v, std::mt19937_64& rng) {
  return {testing_util::from_mat(oracle::random_mat(rng, attn, q, -2, 2)),
          testing_util::from_mat(oracle::random_mat(rng, attn, v, -2, 2)),
          TD::vector(oracle::random_vec(rng, attn, -2, 2))};
}

Outcome attention_normalization() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> count(1, 12);
  double worst_sum = 0.0, worst_hull = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    AttentionParams<double> params{random_level(4, 6, 5, rng), random_level(4, 6, 6, rng), TD::zeros({2, 17})};
    const auto query = TD::vector(oracle::random_vec(rng, 6, -3, 3));
    const auto patches = oracle::random_mat(rng, count(rng), 5, -3, 3);
    const auto a = attend_patches(query, testing_util::from_mat(patches), params);
    const auto st = encode_sequence<double>(random_features(rng, 5), random_cell(5, 3, trial), random_cell(5, 3, trial + 1));
    const auto s = attend_set(query, st, params);
    oracle::Mat states;
    for (std::size_t t = 0; t < 5; ++t) states.push_back(to_vec(st.step_state(t)));
    for (const auto& [res, values] : {std::pair{a, patches}, std::pair{s, states}}) {
      double total = 0.0;
      for (double w : res.weights.values()) {
        if (w < 0.0) worst_sum = std::max(worst_sum, 1.0);
        total += w;
      }
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      for (std::size_t j = 0; j < values[0].size(); ++j) {
        double lo = values[0][j], hi = values[0][j];
        for (const auto& r : values) {
          lo = std::min(lo, r[j]);
          hi = std::max(hi, r[j]);
        }
        worst_hull = std::max({worst_hull, lo - res.context[j], res.context[j] - hi});
      }
    }
  }
  return {worst_sum <= 1e-6 && worst_hull <= 1e-12,
          "1000 inputs, worst |sum-1| " + fmt(worst_sum) + ", worst hull excess " + fmt(worst_hull)};
}

// 5 ---------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(VIST_CLI_PATH) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome toy_overfit(const fs::path& work) {
  fs::remove_all(work);
  fs::create_directories(work);
  const auto log = work / "pipeline.log";
  const auto t0 = Clock::now();
  const auto toy = work / "toy", run = work / "run", gen = work / "generated.json";
  if (run_cli("make-toy-data --stories 20 --seed 7 --out " + toy.string(), log) != 0)
    return {false, "make-toy-data failed, see " + log.string()};
  // Defaults apart from the step budget (the epoch cap is lifted so max_steps
  // decides) and gradient clipping at norm 1.
  if (run_cli("train --data " + toy.string() + " --out " + run.string() +
                  " --max-steps 2000 --max-epochs 100000 --grad-clip 1",
              log) != 0)
    return {false, "train failed, see " + log.string()};
  if (run_cli("generate --checkpoint " + (run / "final.ckpt").string() + " --data " + toy.string() +
                  " --split train --out " + gen.string(),
              log) != 0)
    return {false, "generate failed, see " + log.string()};
  const double secs = seconds_since(t0);

  // last logged epoch
  std::istringstream lines(slurp(run / "loss_log.txt"));
  std::string line, last;
  while (std::getline(lines, line))
    if (!line.empty() && line[0] != '#') last = line;
  std::size_t epoch = 0;
  double loss = 0.0;
  std::istringstream(last) >> epoch >> loss;
  std::size_t steps = 0;
  {
    std::istringstream text(slurp(log));
    while (std::getline(text, line)) {
      const std::string prefix = "finished after ";
      if (line.rfind(prefix, 0) == 0) std::istringstream(line.substr(prefix.size())) >> steps;
    }
  }

  // position-wise token reproduction against the training references
  const auto samples = app::load_samples(toy);
  const auto refs = app::reference_stories(split_corpus(samples).train);
  std::map<std::string, StoryRecord> generated;
  for (auto& s : read_stories(gen)) generated[s.story_id] = s;
  std::size_t matched = 0, total = 0;
  for (const auto& r : refs) {
    const auto it = generated.find(r.story_id);
    for (std::size_t i = 0; i < r.sentences.size(); ++i) {
      const auto ref = tokenize(r.sentences[i]);
      total += ref.size();
      if (it == generated.end()) continue;
      const auto cand = tokenize(it->second.sentences[i]);
      for (std::size_t k = 0; k < ref.size() && k < cand.size(); ++k) matched += ref[k] == cand[k];
    }
  }
  const double share = total ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
  Outcome o;
  o.pass = loss < 0.05 && share >= 0.95 && secs < 600.0 && steps <= 2000;
  o.detail = "loss " + fmt(loss, 4) + " after " + std::to_string(steps) + " steps, tokens reproduced " +
             fmt(100.0 * share, 4) + "%, " + fmt(secs) + " s";
  return o;
}

// 6 ---------------------------------------------------------------------

Outcome initialization_loss() {
  const auto corpus = make_toy_corpus({4, 16, 7});
  const auto vocab = Vocabulary::build(all_sentences(corpus.samples), 1);
  auto examples = make_examples(corpus.samples, vocab);
  for (auto& ex : examples)
    for (auto& s : ex.tokens)
      for (auto& id : s) id = 4 + id % 8;  // fold into a 12-token vocabulary
  ModelConfig cfg;
  cfg.geometry = {16, 16, 3, 8};
  cfg.patch_dim = 6;
  cfg.blocks = 1;
  cfg.enc_hidden = 5;
  cfg.attn_dim = 4;
  cfg.dec_hidden = 7;
  cfg.embed_dim = 4;
  cfg.vocab_size = 12;
  auto params = ModelParams<double>::init(cfg, 11);
  for (auto& v : params.decoder.out_proj.mutable_data()) v *= 1e-3;
  const double loss = evaluate_loss(examples, params);
  const double rel = std::abs(loss - std::log(12.0)) / std::log(12.0);
  return {rel <= 0.02, "loss " + fmt(loss, 6) + " vs ln 12 = " + fmt(std::log(12.0), 6) + " (" + fmt(100 * rel) + "%)"};
}

// 7 ---------------------------------------------------------------------

Outcome metrics_oracles() {
  using namespace metrics_fixture;
  namespace m = vist::metrics;
  const auto f = fixture();
  const auto cases = as_cases(f);
  double worst = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(m::bleu(f, n) - oracle::bleu(cases, n)));
  double rouge = 0.0, meteor = 0.0;
  for (const auto& p : f) {
    rouge += oracle::rouge_l(p.candidate, p.references) / static_cast<double>(f.size());
    meteor += oracle::meteor(p.candidate, p.references) / static_cast<double>(f.size());
  }
  worst = std::max({worst, std::abs(m::rouge_l(f) - rouge), std::abs(m::meteor_lite(f) - meteor),
                    std::abs(m::cider(f) - oracle::cider(cases))});

  std::vector<EvalPair> identity;
  for (const auto& p : f) identity.push_back({p.story_id, p.references[0], {p.references[0]}});
  double identity_gap = std::abs(m::rouge_l(identity) - 1.0);
  for (std::size_t n = 1; n <= 4; ++n) identity_gap = std::max(identity_gap, std::abs(m::bleu(identity, n) - 1.0));

  const std::vector<EvalPair> cat{pair("x", "the cat sat", {"the cat sat on the mat"})};
  const double cat_gap = std::abs(m::bleu(cat, 1) - std::exp(-1.0));
  return {worst <= 1e-6 && identity_gap <= 1e-12 && cat_gap <= 1e-6,
          "oracle gap " + fmt(worst) + ", identity gap " + fmt(identity_gap) + ", BLEU-1(the cat sat) gap " +
              fmt(cat_gap)};
}

// 8 ---------------------------------------------------------------------

Outcome patch_arithmetic() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  Image img(224, 224, 3);
  for (auto& v : img.pixels) v = d(rng);
  const PatchGeometry geo{224, 224, 3, 16};
  const auto patches = extract_patches<float>(img, 16);
  const bool shape_ok = patches.shape() == Shape{196, 768} && geo.num_patches() == 196 && geo.patch_length() == 768;
  const bool exact = assemble_patches(patches, geo) == img;
  return {shape_ok && exact, std::to_string(patches.dim(0)) + " patches of length " + std::to_string(patches.dim(1)) +
                                 (exact ? ", reassembly exact" : ", reassembly differs")};
}

// 9 ---------------------------------------------------------------------

Outcome determinism_and_persistence(const fs::path& work) {
  const auto corpus = make_toy_corpus({6, 16, 7});
  const auto vocab = Vocabulary::build(all_sentences(corpus.samples), 1);
  const auto examples = make_examples(corpus.samples, vocab);
  ModelConfig cfg;
  cfg.geometry = {16, 16, 3, 8};
  cfg.patch_dim = 6;
  cfg.blocks = 1;
  cfg.enc_hidden = 5;
  cfg.attn_dim = 4;
  cfg.dec_hidden = 7;
  cfg.embed_dim = 4;
  cfg.vocab_size = vocab.size();
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.batch_size = 4;
  const std::vector<TrainingExample> heldout(examples.begin(), examples.begin() + 2);
  auto r1 = train<float>(examples, heldout, cfg, tc), r2 = train<float>(examples, heldout, cfg, tc);
  std::vector<std::string> problems;
  for (std::size_t e = 0; e < r1.log.size(); ++e)
    if (app::loss_log_line(r1.log[e]) != app::loss_log_line(r2.log[e])) problems.push_back("loss log differs");
  for (const auto& ex : examples)
    if (generate_story(ex.images, r1.params, {}) != generate_story(ex.images, r2.params, {}))
      problems.push_back("generated story differs");

  fs::create_directories(work);
  const auto ck = make_checkpoint(r1.params, &r1.optimizer, 3u, r1.steps);
  save_checkpoint(ck, work / "model.ckpt");
  const auto back = load_checkpoint(work / "model.ckpt");
  if (!(back == ck) || encode_checkpoint(back) != encode_checkpoint(ck)) problems.push_back("round trip differs");
  auto restored = restore_model<float>(back);
  const auto a = r1.params.named(), b = restored.named();
  for (std::size_t k = 0; k < a.size() && k < b.size(); ++k)
    if (a[k].second.values() != b[k].second.values()) problems.push_back("restored " + a[k].first + " differs");

  const auto bytes = encode_checkpoint(ck);
  auto message = [](const std::string& blob) {
    try {
      decode_checkpoint(blob);
    } catch (const CheckpointError& e) {
      return std::string(e.what());
    }
    return std::string("accepted");
  };
  auto bad_magic = bytes, bad_version = bytes;
  bad_magic[0] = 'X';
  bad_version[4] = 2;
  const std::pair<std::string, std::string> corruptions[] = {{bytes.substr(0, bytes.size() / 2), std::string("truncated")},
                                                             {bad_magic, "magic"},
                                                             {bad_version, "unsupported version"},
                                                             {bytes + "x", "trailing"}};
  for (const auto& [blob, expect] : corruptions)
    if (message(blob).find(expect) == std::string::npos) problems.push_back("corruption not reported as " + expect);

  std::string detail = problems.empty() ? "logs, stories and checkpoints identical; 4 corruptions rejected" : "";
  for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  return {problems.empty(), detail};
}

// 10 --------------------------------------------------------------------

Outcome optimizer_identity() {
  std::mt19937_64 rng(10);
  auto t = testing_util::random_tensor(rng, {6, 7});
  for (auto& g : t.mutable_grad()) g = 0.0;
  const auto before = t.values();
  NamedTensors<double> params{{"w", t}};
  OptimizerState<double> state;
  TrainConfig cfg;
  adam_step(params, state, cfg);
  std::size_t mismatched = 0;
  for (std::size_t i = 0; i < before.size(); ++i) mismatched += t[i] != before[i] * (1.0 - 0.001 * 1e-5);
  return {mismatched == 0 && cfg.lr == 0.001 && cfg.weight_decay == 1e-5,
          std::to_string(before.size() - mismatched) + "/" + std::to_string(before.size()) +
              " parameters shrunk by exactly (1 - 0.001*1e-5)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Acceptance checks"};
  int only = 0;
  std::string work = (fs::temp_directory_path() / "vist_acceptance").string();
  cli.add_option("--only", only, "Run a single criterion");
  cli.add_option("--work", work, "Scratch directory")->capture_default_str();
  CLI11_PARSE(cli, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"mogrifier identities", mogrifier_identities},
      {"bi-lstm reversal", bilstm_reversal},
      {"attention normalization", attention_normalization},
      {"toy corpus overfit", [&] { return toy_overfit(fs::path(work) / "toy_overfit"); }},
      {"initialization loss", initialization_loss},
      {"metrics oracles", metrics_oracles},
      {"patch arithmetic", patch_arithmetic},
      {"determinism and persistence", [&] { return determinism_and_persistence(fs::path(work) / "persistence"); }},
      {"optimizer identity", optimizer_identity},
  };

  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (only != 0 && static_cast<std::size_t>(only) != k + 1) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << k + 1 << " " << criteria[k].first << ": " << o.detail
              << std::endl;
  }
  return all ? 0 : 1;
}
