#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "test_util.hpp"
#include "vist/app.hpp"

using namespace vist;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct CliResult {
  int code = -1;
  std::string out, err;
};

/// Runs the vist binary with `args`, capturing stdout and stderr.
CliResult vist_cli(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(VIST_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

const char* kTinyModel =
    " --image-size 32 --patch-dim 4 --enc-hidden 4 --attn-dim 4 --dec-hidden 8 --embed-dim 4 --blocks 0 --min-count 1";

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(RunConfig, DefaultsFollowTrainingSetup) {
  const RunConfig c;
  const auto t = c.train_config();
  EXPECT_EQ(t.lr, 0.001);
  EXPECT_EQ(t.weight_decay, 1e-5);
  EXPECT_EQ(t.batch_size, 8u);
  EXPECT_EQ(t.max_epochs, 83u);
  EXPECT_EQ(c.source("lr"), "default");
  EXPECT_EQ(c.model_config(12).rounds, 5u);
}

TEST(RunConfig, FlagBeatsFileBeatsDefault) {
  const auto dir = testing_util::temp_dir("cfg_prec");
  write_file(dir / "run.cfg", "# comment\nlr = 0.005\nbatch_size=4  # trailing\n");
  RunConfig c;
  c.load_file(dir / "run.cfg");
  EXPECT_EQ(c.get("lr"), "0.005");
  EXPECT_EQ(c.source("batch_size"), (dir / "run.cfg").string() + ":3");
  c.set("lr", "0.01", "--lr");
  EXPECT_EQ(c.train_config().lr, 0.01);
  EXPECT_EQ(c.train_config().batch_size, 4u);
  EXPECT_EQ(c.get("weight_decay"), "1e-5");

  const auto r = app::resolve_config(dir / "run.cfg", {{"lr", "0.02"}});
  EXPECT_EQ(r.get("lr"), "0.02");
  EXPECT_EQ(r.source("lr"), "--lr");
}

TEST(RunConfig, ConflictingFileEntriesNameBothLines) {
  const auto dir = testing_util::temp_dir("cfg_conflict");
  write_file(dir / "run.cfg", "lr=0.001\nseed=3\nlr=0.002\n");
  RunConfig c;
  try {
    c.load_file(dir / "run.cfg");
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("run.cfg:1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("run.cfg:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'lr'"), std::string::npos) << msg;
  }
  // repeating the same value is not a conflict
  write_file(dir / "same.cfg", "lr=0.001\nlr=0.001\n");
  EXPECT_NO_THROW(RunConfig().load_file(dir / "same.cfg"));
}

TEST(RunConfig, BadEntriesAreUsageErrors) {
  const auto dir = testing_util::temp_dir("cfg_bad");
  write_file(dir / "unknown.cfg", "learning_rate=0.1\n");
  EXPECT_THROW(RunConfig().load_file(dir / "unknown.cfg"), UsageError);
  write_file(dir / "noeq.cfg", "lr 0.1\n");
  EXPECT_THROW(RunConfig().load_file(dir / "noeq.cfg"), UsageError);
  EXPECT_THROW(RunConfig().load_file(dir / "missing.cfg"), UsageError);
  RunConfig c;
  c.set("batch_size", "-3");
  EXPECT_THROW(c.train_config(), UsageError);
  c.set("batch_size", "8");
  c.set("lr", "fast", "--lr");
  try {
    c.train_config();
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("--lr"), std::string::npos);
  }
  RunConfig g;
  g.set("image_size", "30");
  EXPECT_THROW(g.model_config(12), UsageError);
}

TEST(Cli, UsageErrors) {
  const auto dir = testing_util::temp_dir("cli_usage");
  EXPECT_EQ(vist_cli("", dir).code, 1);
  EXPECT_EQ(vist_cli("frobnicate", dir).code, 1);
  EXPECT_EQ(vist_cli("make-toy-data --out " + (dir / "t").string() + " --stories 0", dir).code, 1);
  EXPECT_EQ(vist_cli("train --data x", dir).code, 1);  // --out missing
  EXPECT_EQ(vist_cli("--help", dir).code, 0);
}

TEST(Cli, MakeToyDataIsReproducible) {
  const auto dir = testing_util::temp_dir("cli_toy");
  auto r = vist_cli("make-toy-data --out " + (dir / "a").string() + " --stories 5 --seed 7", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 5 stories, 25 images, 25 sentences"), std::string::npos) << r.out;
  ASSERT_EQ(vist_cli("make-toy-data --out " + (dir / "b").string() + " --stories 5 --seed 7", dir).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  EXPECT_EQ(slurp(dir / "a" / "images.bin"), slurp(dir / "b" / "images.bin"));
  EXPECT_NE(slurp(dir / "a" / "manifest.json").find("\"seed\": 7"), std::string::npos);
}

TEST(Cli, MissingDataIsNamed) {
  const auto dir = testing_util::temp_dir("cli_missing");
  const auto r = vist_cli("train --data /nonexistent/corpus --out " + (dir / "run").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/nonexistent/corpus"), std::string::npos) << r.err;
}

TEST(Cli, GradcheckExitCodes) {
  const auto dir = testing_util::temp_dir("cli_grad");
  const auto ok = vist_cli("gradcheck", dir);
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("gradcheck passed"), std::string::npos);
  EXPECT_NE(ok.out.find("decoder/M_xh5"), std::string::npos);
  EXPECT_EQ(vist_cli("gradcheck --tolerance 1e-12", dir).code, 3);
  EXPECT_EQ(vist_cli("gradcheck --dims D=8,V=3", dir).code, 1);
  EXPECT_EQ(vist_cli("gradcheck --dims bogus=1", dir).code, 1);
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing_util::temp_dir("cli_pipeline");
    ASSERT_EQ(vist_cli("make-toy-data --out " + (dir_ / "toy").string() + " --stories 6 --seed 3", dir_).code, 0);
    write_file(dir_ / "run.cfg", "lr=0.005\nmax_epochs=2\n");
    train_ = vist_cli("train --data " + (dir_ / "toy").string() + " --out " + (dir_ / "run").string() +
                          " --config " + (dir_ / "run.cfg").string() + " --lr 0.001" + kTinyModel,
                      dir_);
  }

  static fs::path dir_;
  static CliResult train_;
};

fs::path CliPipeline::dir_;
CliResult CliPipeline::train_;

TEST_F(CliPipeline, TrainEchoesResolvedHyperparameters) {
  ASSERT_EQ(train_.code, 0) << train_.err;
  EXPECT_NE(train_.out.find("lr 0.001, weight_decay 1e-5, batch_size 8"), std::string::npos) << train_.out;
  for (const char* f : {"final.ckpt", "best.ckpt", "vocab.txt", "config.txt", "loss_log.txt", "final.ckpt.config"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  const auto cfg = slurp(dir_ / "run" / "config.txt");
  EXPECT_NE(cfg.find("lr=0.001\n"), std::string::npos);
  EXPECT_NE(cfg.find("max_epochs=2\n"), std::string::npos);
  const auto log = slurp(dir_ / "run" / "loss_log.txt");
  EXPECT_NE(log.find("# epoch train_loss heldout_loss"), std::string::npos);
  EXPECT_NE(log.find("\n2 "), std::string::npos);
}

TEST_F(CliPipeline, GenerateIsDeterministic) {
  ASSERT_EQ(train_.code, 0);
  const auto ck = (dir_ / "run" / "final.ckpt").string();
  for (const char* name : {"a.json", "b.json"}) {
    const auto r = vist_cli("generate --checkpoint " + ck + " --data " + (dir_ / "toy").string() + " --split all --out " +
                                (dir_ / name).string(),
                            dir_);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(dir_ / "a.json"), slurp(dir_ / "b.json"));
  const auto stories = read_stories(dir_ / "a.json");
  ASSERT_EQ(stories.size(), 6u);
  for (const auto& s : stories) EXPECT_EQ(s.sentences.size(), 5u);
  EXPECT_EQ(vist_cli("generate --checkpoint " + ck + " --data " + (dir_ / "toy").string() + " --split nope --out " +
                         (dir_ / "c.json").string(),
                     dir_)
                .code,
            1);
}

TEST_F(CliPipeline, VocabularyMismatchIsDataError) {
  ASSERT_EQ(train_.code, 0);
  std::ofstream(dir_ / "small_vocab.txt") << "#min_count=1\n<pad>\n<start>\n<end>\n<unk>\nthe\n";
  const auto r = vist_cli("generate --checkpoint " + (dir_ / "run" / "final.ckpt").string() + " --data " +
                              (dir_ / "toy").string() + " --vocab " + (dir_ / "small_vocab.txt").string() +
                              " --out " + (dir_ / "x.json").string(),
                          dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("vocabulary mismatch"), std::string::npos) << r.err;
}

TEST_F(CliPipeline, CorruptCheckpointIsDataError) {
  ASSERT_EQ(train_.code, 0);
  auto bytes = slurp(dir_ / "run" / "final.ckpt");
  std::ofstream(dir_ / "broken.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  fs::copy_file(dir_ / "run" / "vocab.txt", dir_ / "vocab.txt", fs::copy_options::overwrite_existing);
  const auto r = vist_cli("generate --checkpoint " + (dir_ / "broken.ckpt").string() + " --data " +
                              (dir_ / "toy").string() + " --out " + (dir_ / "y.json").string(),
                          dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("truncated"), std::string::npos) << r.err;
}

TEST_F(CliPipeline, EvaluateAgainstCorpus) {
  ASSERT_EQ(train_.code, 0);
  // references scored against themselves
  write_stories(dir_ / "refs.json", app::reference_stories(app::load_samples(dir_ / "toy")));
  const auto self = vist_cli("evaluate --candidates " + (dir_ / "refs.json").string() + " --data " +
                                 (dir_ / "toy").string() + " --out " + (dir_ / "report.json").string(),
                             dir_);
  ASSERT_EQ(self.code, 0) << self.err;
  EXPECT_NE(self.out.find("B-1"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(dir_ / "report.json"));
  EXPECT_NEAR(report["corpus"]["B-4"].get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(report["corpus"]["ROUGE-L"].get<double>(), 1.0, 1e-12);
}

TEST_F(CliPipeline, EvaluateWithMissingStoryId) {
  ASSERT_EQ(train_.code, 0);
  auto refs = app::reference_stories(app::load_samples(dir_ / "toy"));
  write_stories(dir_ / "all.json", refs);
  const std::string dropped = refs.back().story_id;
  refs.pop_back();
  write_stories(dir_ / "partial.json", refs);
  const auto r = vist_cli("evaluate --candidates " + (dir_ / "partial.json").string() + " --references " +
                              (dir_ / "all.json").string(),
                          dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(dropped), std::string::npos) << r.err;
  EXPECT_EQ(vist_cli("evaluate --candidates " + (dir_ / "partial.json").string(), dir_).code, 1);
}

TEST_F(CliPipeline, ConflictingConfigIsUsageError) {
  write_file(dir_ / "conflict.cfg", "lr=0.001\nlr=0.1\n");
  const auto r = vist_cli("train --data " + (dir_ / "toy").string() + " --out " + (dir_ / "c").string() +
                              " --config " + (dir_ / "conflict.cfg").string(),
                          dir_);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("conflict.cfg:2"), std::string::npos) << r.err;
}
