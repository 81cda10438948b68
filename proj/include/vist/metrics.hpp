#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "vist/errors.hpp"

namespace vist::metrics {

using Tokens = std::vector<std::string>;

/// One candidate story scored against one or more reference stories.
struct EvalPair {
  std::string story_id;
  Tokens candidate;
  std::vector<Tokens> references;

  void validate() const {
    const bool any = std::any_of(references.begin(), references.end(),
                                 [](const Tokens& r) { return !r.empty(); });
    if (!any) throw DataError("story " + story_id + " has no non-empty reference");
  }
};

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts ngram_counts(const Tokens& tokens, std::size_t n) {
  NgramCounts out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

// ------------------------------------------------------------------ BLEU

/// Corpus BLEU-n: clipped k-gram precisions summed over the corpus, brevity
/// penalty against the closest reference length (ties to the shorter one).
inline double bleu(std::span<const EvalPair> pairs, std::size_t n) {
  if (n < 1 || n > 4) throw UsageError("BLEU order must be 1..4");
  if (pairs.empty()) throw DataError("BLEU over an empty candidate set");
  std::array<double, 4> matched{}, total{};
  double cand_len = 0.0, ref_len = 0.0;
  for (const auto& p : pairs) {
    p.validate();
    const double c = static_cast<double>(p.candidate.size());
    cand_len += c;
    double best = std::numeric_limits<double>::infinity(), best_len = 0.0;
    for (const auto& r : p.references) {
      const double len = static_cast<double>(r.size());
      const double diff = std::abs(len - c);
      if (diff < best || (diff == best && len < best_len)) {
        best = diff;
        best_len = len;
      }
    }
    ref_len += best_len;
    for (std::size_t k = 1; k <= n; ++k) {
      const auto cand = ngram_counts(p.candidate, k);
      NgramCounts max_ref;
      for (const auto& r : p.references)
        for (const auto& [g, cnt] : ngram_counts(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
      for (const auto& [g, cnt] : cand) {
        auto it = max_ref.find(g);
        matched[k - 1] += static_cast<double>(std::min(cnt, it == max_ref.end() ? 0 : it->second));
        total[k - 1] += static_cast<double>(cnt);
      }
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (matched[k] == 0.0 || total[k] == 0.0) return 0.0;
    log_sum += std::log(matched[k] / total[k]);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / static_cast<double>(n));
}

// --------------------------------------------------------------- ROUGE-L

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l_pair(const EvalPair& p, double beta = 1.2) {
  p.validate();
  if (p.candidate.empty()) return 0.0;
  double best = 0.0;
  for (const auto& r : p.references) {
    if (r.empty()) continue;
    const double l = static_cast<double>(lcs_length(p.candidate, r));
    const double prec = l / static_cast<double>(p.candidate.size());
    const double rec = l / static_cast<double>(r.size());
    const double b2 = beta * beta;
    const double f = (prec == 0.0 && rec == 0.0) ? 0.0 : (1.0 + b2) * prec * rec / (rec + b2 * prec);
    best = std::max(best, f);
  }
  return best;
}

inline double rouge_l(std::span<const EvalPair> pairs, double beta = 1.2) {
  if (pairs.empty()) throw DataError("ROUGE-L over an empty candidate set");
  double s = 0.0;
  for (const auto& p : pairs) s += rouge_l_pair(p, beta);
  return s / static_cast<double>(pairs.size());
}

// ----------------------------------------------------------- METEOR-lite

struct Alignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  bool exhaustive = true;  // false if the search budget ran out before proving optimality
};

namespace detail {

// Depth-first search over exact-match alignments that keep the maximum
// number of matches, minimizing the number of chunks. Extending the current
// chunk is tried first, so the first leaf reached is already a good bound.
class ChunkSearch {
 public:
  ChunkSearch(const Tokens& cand, const Tokens& ref, std::size_t budget) : budget_(budget) {
    std::unordered_map<std::string, int> ids;
    auto id = [&](const std::string& s) {
      auto [it, inserted] = ids.emplace(s, static_cast<int>(ids.size()));
      return it->second;
    };
    for (const auto& t : cand) cand_.push_back(id(t));
    for (const auto& t : ref) ref_.push_back(id(t));
    const std::size_t vocab = ids.size();
    positions_.resize(vocab);
    for (std::size_t j = 0; j < ref_.size(); ++j) positions_[ref_[j]].push_back(j);
    std::vector<std::size_t> cand_count(vocab, 0);
    for (int w : cand_) ++cand_count[w];
    need_.assign(vocab, 0);
    for (std::size_t w = 0; w < vocab; ++w) {
      need_[w] = std::min(cand_count[w], positions_[w].size());
      target_ += need_[w];
    }
    // after_[i] = occurrences of cand_[i] strictly after position i
    after_.assign(cand_.size(), 0);
    std::vector<std::size_t> seen(vocab, 0);
    for (std::size_t i = cand_.size(); i-- > 0;) {
      after_[i] = seen[cand_[i]];
      ++seen[cand_[i]];
    }
    used_.assign(ref_.size(), false);
  }

  Alignment run() {
    if (target_ == 0) return {0, 0, true};
    best_ = std::numeric_limits<std::size_t>::max();
    dfs(0, -1, 0);
    return {target_, best_, !exhausted_};
  }

 private:
  void dfs(std::size_t i, long prev_j, std::size_t chunks) {
    if (chunks >= best_) return;
    if (++nodes_ > budget_ && best_ != std::numeric_limits<std::size_t>::max()) {
      exhausted_ = true;
      return;
    }
    if (i == cand_.size()) {
      best_ = chunks;  // need_ all zero here by construction
      return;
    }
    const int w = cand_[i];
    if (need_[w] > 0) {
      const std::size_t next = static_cast<std::size_t>(prev_j + 1);
      const bool can_extend = prev_j >= 0 && next < ref_.size() && !used_[next] && ref_[next] == w;
      if (can_extend) take(i, next, chunks);
      for (std::size_t j : positions_[w]) {
        if (used_[j] || (can_extend && j == next)) continue;
        take(i, j, chunks + 1);
        if (exhausted_) return;
      }
    }
    if (after_[i] >= need_[w]) dfs(i + 1, -1, chunks);
  }

  void take(std::size_t i, std::size_t j, std::size_t chunks) {
    used_[j] = true;
    --need_[cand_[i]];
    dfs(i + 1, static_cast<long>(j), chunks);
    ++need_[cand_[i]];
    used_[j] = false;
  }

  std::vector<int> cand_, ref_;
  std::vector<std::vector<std::size_t>> positions_;
  std::vector<std::size_t> need_, after_;
  std::vector<bool> used_;
  std::size_t target_ = 0;
  std::size_t best_ = 0;
  std::size_t nodes_ = 0;
  std::size_t budget_;
  bool exhausted_ = false;
};

}  // namespace detail

/// Exact-match unigram alignment with the most matches and, among those, the
/// fewest chunks. The search is exhaustive unless it exceeds `budget` nodes.
inline Alignment align(const Tokens& cand, const Tokens& ref, std::size_t budget = 2'000'000) {
  return detail::ChunkSearch(cand, ref, budget).run();
}

inline double meteor_score(std::size_t matches, std::size_t chunks, std::size_t cand_len,
                           std::size_t ref_len) {
  if (matches == 0) return 0.0;
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(cand_len);
  const double r = m / static_cast<double>(ref_len);
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(chunks) / m;
  return f_mean * (1.0 - 0.5 * frag * frag * frag);
}

inline double meteor_lite_pair(const EvalPair& p) {
  p.validate();
  double best = 0.0;
  for (const auto& r : p.references) {
    if (r.empty() || p.candidate.empty()) continue;
    const auto a = align(p.candidate, r);
    best = std::max(best, meteor_score(a.matches, a.chunks, p.candidate.size(), r.size()));
  }
  return best;
}

inline double meteor_lite(std::span<const EvalPair> pairs) {
  if (pairs.empty()) throw DataError("METEOR over an empty candidate set");
  double s = 0.0;
  for (const auto& p : pairs) s += meteor_lite_pair(p);
  return s / static_cast<double>(pairs.size());
}

// ------------------------------------------------------------------ CIDEr

/// Document frequencies over the reference stories of an evaluation corpus.
class CiderContext {
 public:
  explicit CiderContext(std::span<const EvalPair> pairs) : stories_(pairs.size()) {
    if (pairs.empty()) throw DataError("CIDEr needs a non-empty reference corpus");
    for (const auto& p : pairs) {
      p.validate();
      for (std::size_t n = 1; n <= 4; ++n) {
        std::set<std::vector<std::string>> seen;
        for (const auto& r : p.references)
          for (const auto& [g, c] : ngram_counts(r, n)) seen.insert(g);
        for (const auto& g : seen) ++df_[g];
      }
    }
  }

  /// ln(N / max(df, 1)); with a single reference story every n-gram gets
  /// weight 1, since the log ratio is identically zero there.
  double idf(const std::vector<std::string>& gram) const {
    if (stories_ == 1) return 1.0;
    auto it = df_.find(gram);
    const double df = it == df_.end() ? 1.0 : static_cast<double>(it->second);
    return std::log(static_cast<double>(stories_) / df);
  }

  std::map<std::vector<std::string>, double> vectorize(const Tokens& tokens, std::size_t n) const {
    std::map<std::vector<std::string>, double> out;
    const auto counts = ngram_counts(tokens, n);
    if (counts.empty()) return out;
    const double total = static_cast<double>(tokens.size() - n + 1);
    for (const auto& [g, c] : counts) out[g] = static_cast<double>(c) / total * idf(g);
    return out;
  }

  double pair_score(const EvalPair& p) const {
    double score = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cand = vectorize(p.candidate, n);
      double sum = 0.0;
      for (const auto& r : p.references) sum += cosine(cand, vectorize(r, n));
      score += 10.0 * sum / static_cast<double>(p.references.size());
    }
    return score / 4.0;
  }

 private:
  static double cosine(const std::map<std::vector<std::string>, double>& a,
                       const std::map<std::vector<std::string>, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, v] : a) {
      na += v * v;
      auto it = b.find(g);
      if (it != b.end()) dot += v * it->second;
    }
    for (const auto& [g, v] : b) nb += v * v;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  }

  std::size_t stories_;
  std::map<std::vector<std::string>, std::size_t> df_;
};

inline double cider(std::span<const EvalPair> pairs) {
  CiderContext ctx(pairs);
  double s = 0.0;
  for (const auto& p : pairs) s += ctx.pair_score(p);
  return s / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------- report

struct MetricsRow {
  std::string story_id;
  std::array<double, 4> bleu{};
  double cider = 0.0;
  double rouge_l = 0.0;
  double meteor = 0.0;
};

inline constexpr const char* kColumnNames[] = {"B-1", "B-2", "B-3", "B-4", "CIDEr", "ROUGE-L", "METEOR"};

struct MetricsReport {
  MetricsRow corpus;
  std::vector<MetricsRow> stories;

  static std::array<double, 7> columns(const MetricsRow& r) {
    return {r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.cider, r.rouge_l, r.meteor};
  }

  std::string table() const {
    std::ostringstream os;
    os << std::left << std::setw(16) << "story";
    for (auto c : kColumnNames) os << std::right << std::setw(9) << c;
    os << '\n';
    auto line = [&](const MetricsRow& r) {
      os << std::left << std::setw(16) << r.story_id << std::fixed << std::setprecision(4);
      for (double v : columns(r)) os << std::right << std::setw(9) << v;
      os << '\n';
    };
    for (const auto& r : stories) line(r);
    line(corpus);
    return os.str();
  }

  nlohmann::json to_json() const {
    auto row = [](const MetricsRow& r) {
      nlohmann::json j;
      j["story_id"] = r.story_id;
      const auto vals = columns(r);
      for (std::size_t k = 0; k < vals.size(); ++k) j[kColumnNames[k]] = vals[k];
      return j;
    };
    nlohmann::json j;
    j["columns"] = std::vector<std::string>(std::begin(kColumnNames), std::end(kColumnNames));
    j["corpus"] = row(corpus);
    j["stories"] = nlohmann::json::array();
    for (const auto& r : stories) j["stories"].push_back(row(r));
    return j;
  }
};

/// Scores candidate stories against references keyed by story id. Every
/// candidate needs references and every reference needs a candidate.
inline MetricsReport evaluate_corpus(const std::map<std::string, Tokens>& candidates,
                                     const std::map<std::string, std::vector<Tokens>>& references) {
  std::vector<std::string> missing;
  for (const auto& [id, c] : candidates)
    if (!references.count(id)) missing.push_back(id);
  for (const auto& [id, r] : references)
    if (!candidates.count(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::string ids;
    for (const auto& id : missing) ids += (ids.empty() ? "" : ", ") + id;
    throw DataError("story ids without a candidate/reference counterpart: " + ids);
  }
  if (candidates.empty()) throw DataError("no stories to evaluate");
  std::vector<EvalPair> pairs;
  for (const auto& [id, c] : candidates) pairs.push_back({id, c, references.at(id)});

  MetricsReport report;
  CiderContext ctx(pairs);
  for (const auto& p : pairs) {
    MetricsRow row;
    row.story_id = p.story_id;
    std::span<const EvalPair> one(&p, 1);
    for (std::size_t n = 1; n <= 4; ++n) row.bleu[n - 1] = bleu(one, n);
    row.cider = ctx.pair_score(p);
    row.rouge_l = rouge_l_pair(p);
    row.meteor = meteor_lite_pair(p);
    report.stories.push_back(row);
  }
  report.corpus.story_id = "corpus";
  for (std::size_t n = 1; n <= 4; ++n) report.corpus.bleu[n - 1] = bleu(pairs, n);
  report.corpus.cider = cider(pairs);
  report.corpus.rouge_l = rouge_l(pairs);
  report.corpus.meteor = meteor_lite(pairs);
  return report;
}

}  // namespace vist::metrics
