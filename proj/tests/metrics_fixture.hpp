#pragma once

// Shared metrics fixture: ten hand-written candidate/reference pairs.

#include <string>
#include <vector>

#include "oracles.hpp"
#include "vist/metrics.hpp"
#include "vist/vocabulary.hpp"

namespace metrics_fixture {

using vist::metrics::EvalPair;
using vist::metrics::Tokens;

inline Tokens words(const std::string& s) { return vist::tokenize(s); }

inline EvalPair pair(const std::string& id, const std::string& cand, std::vector<std::string> refs) {
  EvalPair p{id, words(cand), {}};
  for (const auto& r : refs) p.references.push_back(words(r));
  return p;
}

/// Ten hand-written stories covering partial overlap, repeated words,
/// multiple references, reordering and short candidates.
inline std::vector<EvalPair> fixture() {
  return {
      pair("s01", "the family went to the beach . they swam all day .",
           {"the family went to the beach and swam .", "we spent the day at the beach ."}),
      pair("s02", "the the the cat .", {"the cat sat on the mat ."}),
      pair("s03", "a big party with friends and cake .", {"friends came to the party . there was cake ."}),
      pair("s04", "the city was busy at night .", {"at night the city was busy .", "the busy city at night ."}),
      pair("s05", "[male] smiled at the camera .", {"[male] smiled for the camera .", "[female] took a photo ."}),
      pair("s06", "we saw a red car and a blue car .", {"there was a blue car next to a red car ."}),
      pair("s07", "the dog ran .", {"the dog ran across the big green park to catch the ball ."}),
      pair("s08", "everyone danced until the music stopped and then everyone went home .",
           {"everyone danced until late .", "the music stopped and everyone went home ."}),
      pair("s09", "the park had trees .", {"the park had trees ."}),
      pair("s10", "snow covered the mountains .", {"the kids played in the sun ."}),
  };
}

inline std::vector<oracle::BleuCase> as_cases(const std::vector<EvalPair>& pairs) {
  std::vector<oracle::BleuCase> out;
  for (const auto& p : pairs) out.push_back({p.candidate, p.references});
  return out;
}

}  // namespace metrics_fixture
