#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vist/errors.hpp"
#include "vist/mogrifier.hpp"

namespace vist {

/// Lowercases, keeps bracketed placeholders such as "[female]" atomic, and
/// splits every ASCII punctuation character into its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char ch = static_cast<unsigned char>(text[i]);
    if (ch == '[') {
      const auto close = text.find(']', i + 1);
      if (close != std::string_view::npos && close > i + 1) {
        const auto inner = text.substr(i + 1, close - i - 1);
        const bool word = std::all_of(inner.begin(), inner.end(), [](char c) {
          return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
        });
        if (word) {
          flush();
          std::string tok = "[";
          for (char c : inner) tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
          tok.push_back(']');
          tokens.push_back(std::move(tok));
          i = close;
          continue;
        }
      }
    }
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch)) {
      flush();
      tokens.emplace_back(1, static_cast<char>(ch));
    } else {
      current.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return tokens;
}

/// Joins tokens with single spaces.
inline std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

class Vocabulary {
 public:
  static constexpr std::string_view kSpecials[] = {"<pad>", "<start>", "<end>", "<unk>"};

  Vocabulary() {
    for (auto s : kSpecials) add(std::string(s));
  }

  /// Tokens seen at least `min_count` times, ordered by descending frequency
  /// and then lexicographically.
  static Vocabulary build(const std::vector<std::vector<std::string>>& sentences,
                          std::size_t min_count) {
    if (sentences.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
    std::map<std::string, std::size_t> counts;
    for (const auto& s : sentences)
      for (const auto& tok : s) ++counts[tok];
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [tok, n] : counts) {
      if (n >= min_count && !is_special(tok)) kept.emplace_back(tok, n);
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    v.min_count_ = min_count;
    for (const auto& [tok, n] : kept) v.add(tok);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t min_count() const { return min_count_; }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
  }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token(i));
    return out;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  /// One token per line in id order; the first line records min_count.
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary " + path.string());
    out << "#min_count=" << min_count_ << '\n';
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read vocabulary " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("#min_count=", 0) != 0) {
      throw DataError("vocabulary file " + path.string() + " lacks a #min_count header");
    }
    Vocabulary v;
    v.min_count_ = std::stoul(line.substr(11));
    v.tokens_.clear();
    v.ids_.clear();
    while (std::getline(in, line)) v.add(line);
    for (std::size_t i = 0; i < std::size(kSpecials); ++i) {
      if (v.tokens_.size() <= i || v.tokens_[i] != kSpecials[i]) {
        throw DataError("vocabulary file " + path.string() + " has wrong special tokens");
      }
    }
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.min_count_ == b.min_count_;
  }

 private:
  static bool is_special(const std::string& tok) {
    return std::find(std::begin(kSpecials), std::end(kSpecials), tok) != std::end(kSpecials);
  }

  void add(const std::string& tok) {
    if (ids_.count(tok)) throw DataError("duplicate vocabulary token '" + tok + "'");
    ids_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(tok);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::size_t min_count_ = 0;
};

}  // namespace vist
