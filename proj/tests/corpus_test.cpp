#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "vist/corpus.hpp"

using namespace vist;
using Tokens = std::vector<std::string>;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_ppm(const std::filesystem::path& p, float value) {
  Image img(4, 4, 3, value);
  save_ppm(img, p);
}

nlohmann::json storylet(const std::string& story, const std::string& photo, int order, const std::string& text) {
  return nlohmann::json::array({{{"story_id", story},
                                 {"album_id", "a1"},
                                 {"photo_flickr_id", photo},
                                 {"worker_arranged_photo_order", order},
                                 {"text", text}}});
}

struct SisFixture {
  std::filesystem::path dir, file;
};

/// Writes an annotation file and 4×4 images for the given stories, skipping
/// images listed in `absent`.
SisFixture write_sis(const std::string& name, const nlohmann::json& annotations,
                     const std::vector<std::string>& photos, const std::vector<std::string>& absent = {}) {
  SisFixture f;
  f.dir = testing_util::temp_dir(name);
  std::filesystem::create_directories(f.dir / "images");
  for (const auto& p : photos) {
    if (std::find(absent.begin(), absent.end(), p) == absent.end()) write_ppm(f.dir / "images" / (p + ".ppm"), 0.5f);
  }
  f.file = f.dir / "sis.json";
  std::ofstream(f.file) << nlohmann::json{{"annotations", annotations}}.dump();
  return f;
}

}  // namespace

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("The Car is parked."), (Tokens{"the", "car", "is", "parked", "."}));
  EXPECT_EQ(tokenize("[male] smiled!"), (Tokens{"[male]", "smiled", "!"}));
  EXPECT_EQ(tokenize(""), Tokens{});
  EXPECT_EQ(tokenize("[female] went to [location] ."), (Tokens{"[female]", "went", "to", "[location]", "."}));
  EXPECT_EQ(tokenize("[Organization],  ok"), (Tokens{"[organization]", ",", "ok"}));
}

TEST(Detokenize, SingleSpaces) { EXPECT_EQ(detokenize({"a", "b", "."}), "a b ."); }

TEST(Vocabulary, SpecialsOnlyWhenEverythingIsRare) {
  const auto v = Vocabulary::build({{"a", "b", "c"}, {"d"}}, 8);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id("<pad>"), 0);
  EXPECT_EQ(v.id("<start>"), 1);
  EXPECT_EQ(v.id("<end>"), 2);
  EXPECT_EQ(v.id("<unk>"), 3);
  EXPECT_EQ(v.id("a"), kUnkId);
}

TEST(Vocabulary, ThresholdBoundary) {
  EXPECT_EQ(Vocabulary::build({Tokens(8, "x")}, 8).size(), 5u);
  EXPECT_EQ(Vocabulary::build({Tokens(7, "x")}, 8).size(), 4u);
}

TEST(Vocabulary, OrderByFrequencyThenLexicographic) {
  const auto v = Vocabulary::build({{"b", "b", "a", "a", "c", "c", "c", "d"}}, 2);
  EXPECT_EQ(v.tokens(), (Tokens{"<pad>", "<start>", "<end>", "<unk>", "c", "a", "b"}));
}

TEST(Vocabulary, EmptyCorpusIsAnError) { EXPECT_THROW(Vocabulary::build({}, 8), DataError); }

TEST(Vocabulary, EncodeDecodeRoundTrip) {
  const auto corpus = make_toy_corpus({20, 16, 7});
  const auto v = Vocabulary::build(all_sentences(corpus.samples), 1);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> id(0, static_cast<int>(v.size()) - 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> ids(12);
    for (auto& i : ids) i = id(rng);
    EXPECT_EQ(v.encode(v.decode(ids)), ids);
  }
}

TEST(Vocabulary, DeterministicAndPersistent) {
  const auto corpus = make_toy_corpus({20, 16, 7});
  const auto a = Vocabulary::build(all_sentences(corpus.samples), 8);
  const auto b = Vocabulary::build(all_sentences(corpus.samples), 8);
  EXPECT_EQ(a, b);
  const auto dir = testing_util::temp_dir("vocab");
  a.save(dir / "vocab.txt");
  EXPECT_EQ(Vocabulary::load(dir / "vocab.txt"), a);
}

TEST(ParseSis, OneCompleteStory) {
  nlohmann::json ann = nlohmann::json::array();
  std::vector<std::string> photos;
  // Shuffled order on input; the parser sorts by the order field.
  for (int i : {3, 0, 4, 1, 2}) {
    photos.push_back("p" + std::to_string(i));
    ann.push_back(storylet("s1", "p" + std::to_string(i), i, i == 0 ? "[female] went to [location] ." : "Sentence " + std::to_string(i) + "."));
  }
  const auto f = write_sis("sis_one", ann, photos);
  const auto samples = parse_sis(f.file, f.dir / "images");
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_EQ(samples[0].story_id, "s1");
  EXPECT_EQ(samples[0].sentences[0], (Tokens{"[female]", "went", "to", "[location]", "."}));
  EXPECT_EQ(samples[0].sentences[3], (Tokens{"sentence", "3", "."}));
  EXPECT_EQ(samples[0].photo_ids[4], "p4");
  const auto set = load_image_set(samples[0]);
  EXPECT_EQ(set.images[2].height, 4u);
  EXPECT_FLOAT_EQ(set.images[2].pixels[0], 128.0f / 255.0f);
}

TEST(ParseSis, IncompleteStoryIsDroppedWithWarning) {
  nlohmann::json ann = nlohmann::json::array();
  std::vector<std::string> photos;
  for (int i = 0; i < 5; ++i) {
    photos.push_back("a" + std::to_string(i));
    ann.push_back(storylet("good", "a" + std::to_string(i), i, "fine ."));
  }
  for (int i = 0; i < 4; ++i) {
    photos.push_back("b" + std::to_string(i));
    ann.push_back(storylet("short", "b" + std::to_string(i), i, "too short ."));
  }
  const auto f = write_sis("sis_short", ann, photos);
  std::vector<std::string> warnings;
  const auto samples = parse_sis(f.file, f.dir / "images", [&](const std::string& w) { warnings.push_back(w); });
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_EQ(samples[0].story_id, "good");
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("short"), std::string::npos);
}

TEST(ParseSis, MissingImageDropsStory) {
  nlohmann::json ann = nlohmann::json::array();
  std::vector<std::string> photos;
  for (const std::string story : {"x", "y"})
    for (int i = 0; i < 5; ++i) {
      photos.push_back(story + std::to_string(i));
      ann.push_back(storylet(story, story + std::to_string(i), i, "words ."));
    }
  const auto f = write_sis("sis_missing", ann, photos, {"y3"});
  std::vector<std::string> warnings;
  const auto samples = parse_sis(f.file, f.dir / "images", [&](const std::string& w) { warnings.push_back(w); });
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_EQ(samples[0].story_id, "x");
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("y3"), std::string::npos);
}

TEST(ParseSis, MalformedDocuments) {
  const auto dir = testing_util::temp_dir("sis_bad");
  std::ofstream(dir / "a.json") << "{\"stories\": []}";
  EXPECT_THROW(parse_sis(dir / "a.json", dir), DataError);
  std::ofstream(dir / "b.json") << "{not json";
  EXPECT_THROW(parse_sis(dir / "b.json", dir), DataError);
  std::ofstream(dir / "c.json") << "{\"annotations\": []}";
  EXPECT_THROW(parse_sis(dir / "c.json", dir), DataError);  // empty result
  std::ofstream(dir / "d.json") << "{\"annotations\": [[{\"story_id\": \"s\"}]]}";
  EXPECT_THROW(parse_sis(dir / "d.json", dir), DataError);
}

TEST(ToyCorpus, CountsAndShape) {
  const auto c = make_toy_corpus({20, 64, 7});
  ASSERT_EQ(c.samples.size(), 20u);
  std::size_t images = 0, sentences = 0;
  for (const auto& s : c.samples) {
    for (std::size_t i = 0; i < 5; ++i) {
      const auto img = resolve_image(s.images[i]);
      EXPECT_EQ(img.height, 64u);
      EXPECT_EQ(img.channels, 3u);
      for (float v : img.pixels) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
      ++images;
      sentences += s.sentences[i].empty() ? 0 : 1;
    }
  }
  EXPECT_EQ(images, 100u);
  EXPECT_EQ(sentences, 100u);
}

TEST(ToyCorpus, ZeroStoriesIsUsageError) { EXPECT_THROW(make_toy_corpus({0, 64, 7}), UsageError); }

TEST(ToyCorpus, SameSeedSameBytes) {
  const auto a = testing_util::temp_dir("toy_a"), b = testing_util::temp_dir("toy_b");
  save_toy_corpus(make_toy_corpus({20, 64, 7}), a);
  save_toy_corpus(make_toy_corpus({20, 64, 7}), b);
  EXPECT_EQ(read_bytes(a / "manifest.json"), read_bytes(b / "manifest.json"));
  EXPECT_EQ(read_bytes(a / "images.bin"), read_bytes(b / "images.bin"));
  const auto c = testing_util::temp_dir("toy_c");
  save_toy_corpus(make_toy_corpus({20, 64, 8}), c);
  EXPECT_NE(read_bytes(a / "images.bin"), read_bytes(c / "images.bin"));
}

TEST(ToyCorpus, SaveLoadRoundTrip) {
  const auto c = make_toy_corpus({6, 32, 3});
  const auto dir = testing_util::temp_dir("toy_rt");
  save_toy_corpus(c, dir);
  const auto back = load_toy_corpus(dir);
  ASSERT_EQ(back.samples.size(), c.samples.size());
  for (std::size_t k = 0; k < c.samples.size(); ++k) {
    EXPECT_EQ(back.samples[k].story_id, c.samples[k].story_id);
    EXPECT_EQ(back.samples[k].sentences, c.samples[k].sentences);
    EXPECT_EQ(back.info[k].theme, c.info[k].theme);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(resolve_image(back.samples[k].images[i]), resolve_image(c.samples[k].images[i]));
  }
}

TEST(ToyCorpus, BlobFormat) {
  const auto dir = testing_util::temp_dir("toy_blob");
  save_toy_corpus(make_toy_corpus({1, 8, 1}), dir);
  const auto bytes = read_bytes(dir / "images.bin");
  EXPECT_EQ(bytes.substr(0, 4), "TOYC");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 5u);  // u32 count, little-endian
  EXPECT_EQ(bytes.size(), 8u + 5u * (12u + 8u * 8u * 3u * 4u));
}

TEST(ToyCorpus, CorruptBlobIsRejected) {
  const auto dir = testing_util::temp_dir("toy_corrupt");
  save_toy_corpus(make_toy_corpus({2, 8, 1}), dir);
  auto bytes = read_bytes(dir / "images.bin");
  std::ofstream(dir / "images.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(load_toy_corpus(dir), DataError);
  std::ofstream(dir / "images.bin", std::ios::binary) << "XXXX" << bytes.substr(4);
  EXPECT_THROW(load_toy_corpus(dir), DataError);
}

TEST(ToyCorpus, SentenceNamesThemeAndShapesOfItsImage) {
  const auto c = make_toy_corpus({20, 64, 7});
  bool saw_red_circle = false;
  for (std::size_t k = 0; k < c.samples.size(); ++k) {
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& words = c.samples[k].sentences[i];
      const auto& shapes = c.info[k].shapes[i];
      ASSERT_FALSE(shapes.empty());
      ASSERT_LE(shapes.size(), 3u);
      EXPECT_NE(std::find(words.begin(), words.end(), c.info[k].theme), words.end());
      // colour and shape tokens appear in slot order
      auto pos = words.begin();
      for (const auto& s : shapes) {
        pos = std::find(pos, words.end(), s.color);
        ASSERT_NE(pos, words.end());
        ASSERT_NE(pos + 1, words.end());
        EXPECT_EQ(*(pos + 1), s.shape);
        saw_red_circle = saw_red_circle || (s.color == "red" && s.shape == "circle");
        ++pos;
      }
      // the rendered image shows each shape's colour at its slot centre
      const auto img = resolve_image(c.samples[k].images[i]);
      for (const auto& s : shapes) {
        const auto y = static_cast<std::size_t>(toy::kSlotY[s.slot] * 64), x = static_cast<std::size_t>(toy::kSlotX[s.slot] * 64);
        toy::Rgb want{};
        for (const auto& col : toy::kColors)
          if (s.color == col.name) want = col.rgb;
        EXPECT_EQ(img.at(y, x, 0), want.r);
        EXPECT_EQ(img.at(y, x, 1), want.g);
        EXPECT_EQ(img.at(y, x, 2), want.b);
      }
    }
  }
  EXPECT_TRUE(saw_red_circle);
}

TEST(ToyCorpus, RedCircleSentence) {
  const std::vector<ToyShape> shapes{{"red", "circle", 0}};
  const auto words = tokenize(toy::describe("park", shapes));
  EXPECT_NE(std::find(words.begin(), words.end(), "red"), words.end());
  EXPECT_NE(std::find(words.begin(), words.end(), "circle"), words.end());
  EXPECT_NE(std::find(words.begin(), words.end(), "park"), words.end());
}

TEST(ToyCorpus, ShufflingImagesBreaksTheContentMatch) {
  // Sentence i matches image i; pairing it with a different image of the same
  // story mismatches somewhere in every story with distinct contents.
  const auto c = make_toy_corpus({20, 64, 7});
  std::size_t mismatched = 0;
  for (const auto& info : c.info) {
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& a = info.shapes[i];
      const auto& b = info.shapes[(i + 1) % 5];
      bool same = a.size() == b.size();
      for (std::size_t s = 0; same && s < a.size(); ++s) same = a[s].color == b[s].color && a[s].shape == b[s].shape;
      mismatched += same ? 0 : 1;
    }
  }
  EXPECT_GT(mismatched, 90u);
}

TEST(Split, HeldOutByHashIsStable) {
  const auto c = make_toy_corpus({200, 8, 7});
  const auto split = split_corpus(c.samples);
  EXPECT_EQ(split.train.size() + split.heldout.size(), 200u);
  EXPECT_GT(split.heldout.size(), 5u);
  EXPECT_LT(split.heldout.size(), 40u);
  for (const auto& s : split.heldout) EXPECT_TRUE(is_heldout(s.story_id));
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}
