#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vist/errors.hpp"

namespace vist {

/// One story: its id and the five sentence strings in image order.
struct StoryRecord {
  std::string story_id;
  std::vector<std::string> sentences;

  friend bool operator==(const StoryRecord&, const StoryRecord&) = default;
};

/// Stories file: {"config": {...}, "stories": [{"story_id", "sentences": [...]}, ...]}
inline void write_stories(const std::filesystem::path& path, const std::vector<StoryRecord>& stories,
                          const std::map<std::string, std::string>& config_echo = {}) {
  nlohmann::json doc;
  doc["config"] = config_echo;
  doc["stories"] = nlohmann::json::array();
  for (const auto& s : stories) {
    doc["stories"].push_back({{"story_id", s.story_id}, {"sentences", s.sentences}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write stories file " + path.string());
  out << doc.dump(2) << '\n';
}

/// Reads a stories file. A bare top-level array of records is also accepted.
inline std::vector<StoryRecord> read_stories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stories file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
    const auto& list = doc.is_array() ? doc : doc.at("stories");
    std::vector<StoryRecord> out;
    for (const auto& rec : list) {
      out.push_back({rec.at("story_id").get<std::string>(),
                     rec.at("sentences").get<std::vector<std::string>>()});
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed stories file " + path.string() + ": " + e.what());
  }
}

}  // namespace vist
