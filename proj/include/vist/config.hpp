#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vist/adam.hpp"
#include "vist/errors.hpp"
#include "vist/mogrifier.hpp"
#include "vist/model.hpp"

namespace vist {

/// Flat key=value run configuration. Precedence: command-line flag, then
/// config file, then built-in default.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& [k, v] : defaults()) entries_[k] = {v, "default"};
  }

  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"lr", "0.001"},          {"weight_decay", "1e-5"}, {"batch_size", "8"},
        {"max_epochs", "83"},     {"max_steps", "0"},       {"beta1", "0.9"},
        {"beta2", "0.999"},       {"eps", "1e-8"},          {"seed", "1"},
        {"checkpoint_every", "0"}, {"grad_clip", "0"},      {"target_loss", "0"},
        {"max_tokens", "30"},     {"image_size", "32"},     {"channels", "3"},
        {"patch", "16"},          {"patch_dim", "16"},      {"blocks", "2"},
        {"enc_hidden", "16"},     {"attn_dim", "16"},       {"dec_hidden", "128"},
        {"embed_dim", "64"},      {"rounds", "5"},          {"min_count", "8"},
    };
    return d;
  }

  /// Reads key=value lines ('#' starts a comment). A key assigned twice with
  /// different values is a conflict and names both lines.
  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path.string());
    std::map<std::string, std::pair<std::string, std::string>> seen;  // key -> (value, source)
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      const std::string source = path.string() + ":" + std::to_string(lineno);
      check_known(key, source);
      if (auto it = seen.find(key); it != seen.end() && it->second.first != value) {
        throw UsageError("conflicting values for '" + key + "': " + it->second.second + " sets " +
                         it->second.first + ", " + source + " sets " + value);
      }
      seen[key] = {value, source};
      entries_[key] = {value, source};
    }
  }

  void set(const std::string& key, const std::string& value, const std::string& source = "flag") {
    check_known(key, source);
    entries_[key] = {value, source};
  }

  const std::string& get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second.value;
  }

  const std::string& source(const std::string& key) const { return entries_.at(key).source; }

  double real(const std::string& key) const {
    const auto& v = get(key);
    try {
      std::size_t used = 0;
      double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "' (" + source(key) + ") is not a number: " + v);
    }
  }

  std::uint64_t integer(const std::string& key) const {
    const auto& v = get(key);
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw UsageError("config key '" + key + "' (" + source(key) +
                       ") is not a non-negative integer: " + v);
    }
    return out;
  }

  std::map<std::string, std::string> resolved() const {
    std::map<std::string, std::string> out;
    for (const auto& [k, e] : entries_) out[k] = e.value;
    return out;
  }

  std::string echo() const {
    std::string out;
    for (const auto& [k, e] : entries_) out += k + "=" + e.value + "\n";
    return out;
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.lr = real("lr");
    c.weight_decay = real("weight_decay");
    c.batch_size = integer("batch_size");
    c.max_epochs = integer("max_epochs");
    c.max_steps = integer("max_steps");
    c.beta1 = real("beta1");
    c.beta2 = real("beta2");
    c.eps = real("eps");
    c.seed = integer("seed");
    c.checkpoint_every = integer("checkpoint_every");
    c.grad_clip = real("grad_clip");
    c.target_loss = real("target_loss");
    c.validate();
    return c;
  }

  ModelConfig model_config(std::size_t vocab_size) const {
    ModelConfig m;
    m.geometry.height = integer("image_size");
    m.geometry.width = integer("image_size");
    m.geometry.channels = integer("channels");
    m.geometry.patch = integer("patch");
    m.patch_dim = integer("patch_dim");
    m.blocks = integer("blocks");
    m.enc_hidden = integer("enc_hidden");
    m.attn_dim = integer("attn_dim");
    m.dec_hidden = integer("dec_hidden");
    m.embed_dim = integer("embed_dim");
    m.rounds = integer("rounds");
    m.vocab_size = vocab_size;
    try {
      m.geometry.validate();
    } catch (const ShapeError& e) {
      throw UsageError(e.what());
    }
    for (auto v : {m.patch_dim, m.enc_hidden, m.attn_dim, m.dec_hidden, m.embed_dim}) {
      if (v == 0) throw UsageError("model dimensions must be positive");
    }
    return m;
  }

  DecodeConfig decode_config() const {
    DecodeConfig d;
    d.max_tokens = integer("max_tokens");
    if (d.max_tokens == 0) throw UsageError("max_tokens must be at least 1");
    return d;
  }

 private:
  struct Entry {
    std::string value;
    std::string source;
  };

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static void check_known(const std::string& key, const std::string& source) {
    if (!defaults().count(key)) throw UsageError(source + ": unknown config key '" + key + "'");
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace vist
