#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vist/binary_io.hpp"
#include "vist/errors.hpp"
#include "vist/image.hpp"
#include "vist/model.hpp"
#include "vist/vocabulary.hpp"

namespace vist {

/// An image on disk or already in memory.
using ImageRef = std::variant<std::filesystem::path, std::shared_ptr<const Image>>;

struct StorySample {
  std::string story_id;
  std::string album_id;
  std::array<std::string, kImagesPerStory> photo_ids;
  std::array<ImageRef, kImagesPerStory> images;
  std::array<std::vector<std::string>, kImagesPerStory> sentences;  // tokens, photo order
};

inline Image resolve_image(const ImageRef& ref) {
  if (const auto* inline_image = std::get_if<std::shared_ptr<const Image>>(&ref)) {
    return **inline_image;
  }
  return load_ppm(std::get<std::filesystem::path>(ref));
}

inline ImageSet load_image_set(const StorySample& sample) {
  ImageSet set;
  set.story_id = sample.story_id;
  set.album_id = sample.album_id;
  for (std::size_t i = 0; i < kImagesPerStory; ++i) set.images[i] = resolve_image(sample.images[i]);
  return set;
}

inline StoryTokens encode_story_tokens(const StorySample& sample, const Vocabulary& vocab) {
  StoryTokens out;
  for (std::size_t i = 0; i < kImagesPerStory; ++i) out[i] = vocab.encode(sample.sentences[i]);
  return out;
}

inline std::vector<std::vector<std::string>> all_sentences(const std::vector<StorySample>& samples) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : samples)
    for (const auto& sent : s.sentences) out.push_back(sent);
  return out;
}

/// FNV-1a, used for the held-out split.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Roughly one story in ten, selected by hash of the story id.
inline bool is_heldout(const std::string& story_id) { return fnv1a(story_id) % 10 == 0; }

struct CorpusSplit {
  std::vector<StorySample> train;
  std::vector<StorySample> heldout;
};

inline CorpusSplit split_corpus(const std::vector<StorySample>& samples) {
  CorpusSplit split;
  for (const auto& s : samples) (is_heldout(s.story_id) ? split.heldout : split.train).push_back(s);
  return split;
}

// -------------------------------------------------------------------- SIS

using WarningSink = std::function<void(const std::string&)>;

inline void log_warning(const std::string& msg) { std::clog << "warning: " << msg << '\n'; }

/// Reads a VIST Story-In-Sequence annotation file. Images are expected at
/// <image_root>/<photo_id>.ppm. Stories with other than five storylets, a
/// non-contiguous photo order, or missing images are dropped with a warning.
inline std::vector<StorySample> parse_sis(const std::filesystem::path& annotations,
                                          const std::filesystem::path& image_root,
                                          const WarningSink& warn = log_warning) {
  std::ifstream in(annotations);
  if (!in) throw DataError("cannot open annotation file " + annotations.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed annotation file " + annotations.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("annotations") || !doc["annotations"].is_array()) {
    throw DataError("annotation file " + annotations.string() +
                    " has no \"annotations\" collection");
  }

  struct Entry {
    std::string album_id, photo_id, text;
    int order = 0;
  };
  std::map<std::string, std::vector<Entry>> by_story;
  std::vector<std::string> story_order;
  auto as_string = [](const nlohmann::json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  };
  for (const auto& item : doc["annotations"]) {
    const nlohmann::json& e = item.is_array() && !item.empty() ? item[0] : item;
    if (!e.is_object() || !e.contains("story_id") || !e.contains("photo_flickr_id") ||
        !e.contains("worker_arranged_photo_order") ||
        !(e.contains("text") || e.contains("original_text"))) {
      throw DataError("annotation entry lacks story_id, photo_flickr_id, text or "
                      "worker_arranged_photo_order: " + e.dump());
    }
    Entry entry;
    entry.album_id = e.contains("album_id") ? as_string(e["album_id"]) : "";
    entry.photo_id = as_string(e["photo_flickr_id"]);
    entry.text = e.contains("text") ? e["text"].get<std::string>()
                                    : e["original_text"].get<std::string>();
    const auto& order = e["worker_arranged_photo_order"];
    entry.order = order.is_string() ? std::stoi(order.get<std::string>()) : order.get<int>();
    const std::string story_id = as_string(e["story_id"]);
    if (!by_story.count(story_id)) story_order.push_back(story_id);
    by_story[story_id].push_back(std::move(entry));
  }

  std::vector<StorySample> samples;
  for (const auto& story_id : story_order) {
    auto entries = by_story[story_id];
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.order < b.order; });
    bool contiguous = entries.size() == kImagesPerStory;
    for (std::size_t i = 0; contiguous && i < entries.size(); ++i) {
      contiguous = entries[i].order == static_cast<int>(i);
    }
    if (!contiguous) {
      warn("story " + story_id + " has " + std::to_string(entries.size()) +
           " storylets (or a non-contiguous photo order); dropped");
      continue;
    }
    StorySample s;
    s.story_id = story_id;
    s.album_id = entries[0].album_id;
    bool missing = false;
    for (std::size_t i = 0; i < kImagesPerStory; ++i) {
      s.photo_ids[i] = entries[i].photo_id;
      auto path = image_root / (entries[i].photo_id + ".ppm");
      if (!std::filesystem::exists(path)) {
        warn("story " + story_id + " references missing image " + path.string() + "; dropped");
        missing = true;
        break;
      }
      s.images[i] = path;
      s.sentences[i] = tokenize(entries[i].text);
    }
    if (!missing) samples.push_back(std::move(s));
  }
  if (samples.empty()) {
    throw DataError("no complete five-image stories in " + annotations.string());
  }
  return samples;
}

// ------------------------------------------------------------ toy corpus

struct ToyCorpusSpec {
  std::size_t num_stories = 20;
  std::size_t image_size = 32;
  std::uint64_t seed = 7;
};

struct ToyShape {
  std::string color;
  std::string shape;
  std::size_t slot = 0;
};

struct ToyStoryInfo {
  std::string theme;
  std::array<std::vector<ToyShape>, kImagesPerStory> shapes;
};

struct ToyCorpus {
  ToyCorpusSpec spec;
  std::vector<StorySample> samples;
  std::vector<ToyStoryInfo> info;  // parallel to samples
};

namespace toy {

struct Rgb {
  float r, g, b;
};

struct Named {
  const char* name;
  Rgb rgb;
};

inline constexpr Named kThemes[] = {{"beach", {0.90f, 0.85f, 0.60f}},
                                    {"city", {0.50f, 0.50f, 0.50f}},
                                    {"park", {0.60f, 0.85f, 0.60f}},
                                    {"party", {0.85f, 0.60f, 0.85f}}};
inline constexpr Named kColors[] = {{"red", {0.90f, 0.10f, 0.10f}},
                                    {"green", {0.05f, 0.55f, 0.05f}},
                                    {"blue", {0.10f, 0.20f, 0.90f}},
                                    {"yellow", {0.95f, 0.90f, 0.10f}}};
inline constexpr const char* kShapes[] = {"circle", "square", "triangle"};
inline constexpr std::size_t kSlots = 3;

// Slot centres as fractions of the image side. At 32 pixels with 16-pixel
// patches each shape lies inside one patch and the three shapes cover
// disjoint offsets within their patches, so a mean over patches still
// tells the slots apart.
inline constexpr double kSlotY[kSlots] = {0.125, 0.125, 0.875};
inline constexpr double kSlotX[kSlots] = {0.125, 0.875, 0.75};
inline constexpr double kRadius = 0.1;

inline bool inside(const std::string& shape, double dy, double dx, double radius) {
  if (shape == "circle") return dy * dy + dx * dx <= radius * radius;
  if (shape == "square") return std::abs(dy) <= radius * 0.8 && std::abs(dx) <= radius * 0.8;
  // Upward triangle: apex at top, base at bottom.
  if (dy < -radius || dy > radius) return false;
  const double half_width = (dy + radius) / 2.0;
  return std::abs(dx) <= half_width;
}

inline Image render(const Rgb& background, const std::vector<ToyShape>& shapes, std::size_t size) {
  Image img(size, size, 3);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      img.at(y, x, 0) = background.r;
      img.at(y, x, 1) = background.g;
      img.at(y, x, 2) = background.b;
    }
  const double radius = kRadius * static_cast<double>(size);
  for (const auto& s : shapes) {
    Rgb color{};
    for (const auto& c : kColors)
      if (s.color == c.name) color = c.rgb;
    const double cy = kSlotY[s.slot] * static_cast<double>(size);
    const double cx = kSlotX[s.slot] * static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        if (!inside(s.shape, static_cast<double>(y) + 0.5 - cy, static_cast<double>(x) + 0.5 - cx,
                    radius)) {
          continue;
        }
        img.at(y, x, 0) = color.r;
        img.at(y, x, 1) = color.g;
        img.at(y, x, 2) = color.b;
      }
  }
  return img;
}

inline std::string describe(const std::string& theme, const std::vector<ToyShape>& shapes) {
  std::string text = "the " + theme + " had";
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (k > 0) text += (k + 1 == shapes.size()) ? " and" : " ,";
    text += " a " + shapes[k].color + " " + shapes[k].shape;
  }
  return text + " .";
}

}  // namespace toy

/// Synthetic stories: each image shows a theme-coloured background with one
/// to three coloured shapes in fixed slots, and its sentence names the theme
/// and the shapes in slot order. Identical specs give identical corpora.
inline ToyCorpus make_toy_corpus(const ToyCorpusSpec& spec) {
  if (spec.num_stories == 0) throw UsageError("toy corpus needs at least one story");
  if (spec.image_size < 8) throw UsageError("toy image size must be at least 8");
  std::mt19937_64 rng(spec.seed);
  auto pick = [&](std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  };

  // Themes are dealt from a shuffled deck so every theme recurs evenly.
  std::vector<std::size_t> deck;
  for (std::size_t i = 0; deck.size() < spec.num_stories; ++i) deck.push_back(i % std::size(toy::kThemes));
  std::shuffle(deck.begin(), deck.end(), rng);

  ToyCorpus corpus;
  corpus.spec = spec;
  for (std::size_t k = 0; k < spec.num_stories; ++k) {
    const auto& theme = toy::kThemes[deck[k]];
    std::ostringstream id;
    id << "toy-" << std::setw(4) << std::setfill('0') << k;
    StorySample sample;
    sample.story_id = id.str();
    sample.album_id = "album-" + id.str();
    ToyStoryInfo info;
    info.theme = theme.name;
    for (std::size_t i = 0; i < kImagesPerStory; ++i) {
      const std::size_t count = 1 + pick(toy::kSlots);
      std::vector<ToyShape> shapes;
      for (std::size_t s = 0; s < count; ++s) {
        shapes.push_back({toy::kColors[pick(std::size(toy::kColors))].name,
                          toy::kShapes[pick(std::size(toy::kShapes))], s});
      }
      sample.photo_ids[i] = sample.story_id + "-" + std::to_string(i);
      sample.images[i] = std::make_shared<const Image>(toy::render(theme.rgb, shapes, spec.image_size));
      sample.sentences[i] = tokenize(toy::describe(theme.name, shapes));
      info.shapes[i] = std::move(shapes);
    }
    corpus.samples.push_back(std::move(sample));
    corpus.info.push_back(std::move(info));
  }
  return corpus;
}

// --------------------------------------------------------- toy corpus I/O

inline constexpr char kToyMagic[4] = {'T', 'O', 'Y', 'C'};

inline void write_image_blob(const std::vector<Image>& images, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kToyMagic, 4);
  binary::put_u32(out, static_cast<std::uint32_t>(images.size()));
  for (const auto& img : images) {
    binary::put_u32(out, static_cast<std::uint32_t>(img.height));
    binary::put_u32(out, static_cast<std::uint32_t>(img.width));
    binary::put_u32(out, static_cast<std::uint32_t>(img.channels));
    for (float v : img.pixels) binary::put_f32(out, v);
  }
  if (!out) throw DataError("failed writing " + path.string());
}

inline std::vector<Image> read_image_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image blob " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  binary::Reader r(bytes);
  std::string magic;
  if (!r.bytes(4, magic) || magic != std::string(kToyMagic, 4)) {
    throw DataError("image blob " + path.string() + " lacks TOYC magic");
  }
  std::uint32_t count = 0;
  if (!r.u32(count)) throw DataError("truncated image blob " + path.string());
  std::vector<Image> images;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint32_t h = 0, w = 0, c = 0;
    if (!r.u32(h) || !r.u32(w) || !r.u32(c)) throw DataError("truncated image blob " + path.string());
    Image img(h, w, c);
    for (auto& v : img.pixels) {
      if (!r.f32(v)) throw DataError("truncated image blob " + path.string());
    }
    images.push_back(std::move(img));
  }
  return images;
}

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kImageBlobName = "images.bin";

/// Writes manifest.json and images.bin into `dir`. `config_echo` is embedded
/// verbatim in the manifest.
inline void save_toy_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir,
                            const std::map<std::string, std::string>& config_echo = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "vist-toy-corpus";
  manifest["version"] = 1;
  manifest["spec"] = {{"num_stories", corpus.spec.num_stories},
                      {"image_size", corpus.spec.image_size},
                      {"seed", corpus.spec.seed}};
  manifest["config"] = config_echo;
  std::vector<Image> images;
  nlohmann::json stories = nlohmann::json::array();
  for (std::size_t k = 0; k < corpus.samples.size(); ++k) {
    const auto& s = corpus.samples[k];
    nlohmann::json story;
    story["story_id"] = s.story_id;
    story["album_id"] = s.album_id;
    if (k < corpus.info.size()) story["theme"] = corpus.info[k].theme;
    nlohmann::json imgs = nlohmann::json::array();
    nlohmann::json sentences = nlohmann::json::array();
    for (std::size_t i = 0; i < kImagesPerStory; ++i) {
      nlohmann::json entry;
      entry["photo_id"] = s.photo_ids[i];
      entry["blob_index"] = images.size();
      if (k < corpus.info.size()) {
        nlohmann::json shapes = nlohmann::json::array();
        for (const auto& sh : corpus.info[k].shapes[i]) {
          shapes.push_back({{"color", sh.color}, {"shape", sh.shape}, {"slot", sh.slot}});
        }
        entry["shapes"] = shapes;
      }
      imgs.push_back(entry);
      images.push_back(resolve_image(s.images[i]));
      sentences.push_back(detokenize(s.sentences[i]));
    }
    story["images"] = imgs;
    story["sentences"] = sentences;
    stories.push_back(story);
  }
  manifest["stories"] = stories;
  std::ofstream out(dir / kManifestName);
  if (!out) throw DataError("cannot write " + (dir / kManifestName).string());
  out << manifest.dump(2) << '\n';
  write_image_blob(images, dir / kImageBlobName);
}

inline ToyCorpus load_toy_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestName;
  std::ifstream in(manifest_path);
  if (!in) throw DataError("no toy corpus manifest at " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto images = read_image_blob(dir / kImageBlobName);
  ToyCorpus corpus;
  try {
    corpus.spec.num_stories = manifest.at("spec").at("num_stories").get<std::size_t>();
    corpus.spec.image_size = manifest.at("spec").at("image_size").get<std::size_t>();
    corpus.spec.seed = manifest.at("spec").at("seed").get<std::uint64_t>();
    for (const auto& story : manifest.at("stories")) {
      StorySample s;
      ToyStoryInfo info;
      s.story_id = story.at("story_id").get<std::string>();
      s.album_id = story.value("album_id", "");
      info.theme = story.value("theme", "");
      const auto& imgs = story.at("images");
      const auto& sentences = story.at("sentences");
      if (imgs.size() != kImagesPerStory || sentences.size() != kImagesPerStory) {
        throw DataError("story " + s.story_id + " in manifest does not have five images");
      }
      for (std::size_t i = 0; i < kImagesPerStory; ++i) {
        s.photo_ids[i] = imgs[i].at("photo_id").get<std::string>();
        const auto index = imgs[i].at("blob_index").get<std::size_t>();
        if (index >= images.size()) {
          throw DataError("story " + s.story_id + " references image " + std::to_string(index) +
                          " beyond the blob");
        }
        s.images[i] = std::make_shared<const Image>(images[index]);
        s.sentences[i] = tokenize(sentences[i].get<std::string>());
        if (imgs[i].contains("shapes")) {
          for (const auto& sh : imgs[i]["shapes"]) {
            info.shapes[i].push_back({sh.at("color").get<std::string>(),
                                      sh.at("shape").get<std::string>(),
                                      sh.at("slot").get<std::size_t>()});
          }
        }
      }
      corpus.samples.push_back(std::move(s));
      corpus.info.push_back(std::move(info));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return corpus;
}

}  // namespace vist
