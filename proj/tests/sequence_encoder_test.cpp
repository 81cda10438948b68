#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"
#include "vist/gradcheck.hpp"
#include "vist/sequence_encoder.hpp"

using namespace vist;
using testing_util::TD;
using testing_util::to_vec;

namespace {

LSTMCellParams<double> random_cell(std::size_t in, std::size_t hidden, std::uint64_t seed) {
  ParamInit rng(seed);
  auto p = LSTMCellParams<double>::init(in, hidden, rng);
  // Non-trivial biases too.
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

AttentionLevelParams<double> random_level(std::size_t attn, std::size_t q, std::size_t v, std::mt19937_64& rng) {
  return {testing_util::from_mat(oracle::random_mat(rng, attn, q, -2, 2)),
          testing_util::from_mat(oracle::random_mat(rng, attn, v, -2, 2)),
          TD::vector(oracle::random_vec(rng, attn, -2, 2))};
}

}  // namespace

TEST(LstmStep, ZeroParamsZeroState) {
  auto p = random_cell(3, 2, 1);
  testing_util::fill_params(p, 0.0);
  const auto s = lstm_step(TD::vector({1, -2, 3}), TD::zeros({2}), TD::zeros({2}), p);
  EXPECT_EQ(s.c.values(), (std::vector<double>{0, 0}));
  EXPECT_EQ(s.h.values(), (std::vector<double>{0, 0}));
}

TEST(LstmStep, ZeroParamsHalveCell) {
  auto p = random_cell(3, 2, 1);
  testing_util::fill_params(p, 0.0);
  const auto s = lstm_step(TD::vector({1, -2, 3}), TD::vector({0.3, 0.1}), TD::vector({0.8, -1.4}), p);
  EXPECT_DOUBLE_EQ(s.c[0], 0.4);
  EXPECT_DOUBLE_EQ(s.c[1], -0.7);
  EXPECT_DOUBLE_EQ(s.h[0], 0.5 * std::tanh(0.4));
  EXPECT_DOUBLE_EQ(s.h[1], 0.5 * std::tanh(-0.7));
}

TEST(LstmStep, MatchesScalarOracle) {
  std::mt19937_64 rng(3);
  const auto p = random_cell(3, 3, 7);
  const auto w = oracle::random_vec(rng, 3), h = oracle::random_vec(rng, 3), c = oracle::random_vec(rng, 3);
  const auto got = lstm_step(TD::vector(w), TD::vector(h), TD::vector(c), p);
  const auto [oh, oc] = oracle::lstm_step(w, h, c, testing_util::to_cell(p));
  EXPECT_LE(testing_util::max_abs_diff(to_vec(got.h), oh), 1e-14);
  EXPECT_LE(testing_util::max_abs_diff(to_vec(got.c), oc), 1e-14);
}

TEST(LstmStep, ShapeMismatch) {
  const auto p = random_cell(3, 2, 1);
  EXPECT_THROW(lstm_step(TD::zeros({4}), TD::zeros({2}), TD::zeros({2}), p), ShapeError);
  EXPECT_THROW(lstm_step(TD::zeros({3}), TD::zeros({3}), TD::zeros({2}), p), ShapeError);
}

TEST(ImageFeature, MeanOverRows) {
  EXPECT_EQ(image_feature(TD::matrix(3, 2, {1, 2, 1, 2, 1, 2})).values(), (std::vector<double>{1, 2}));
  EXPECT_EQ(image_feature(TD::matrix(2, 3, {0, 0, 0, 2, -4, 6})).values(), (std::vector<double>{1, -2, 3}));
}

TEST(ImageFeature, ColumnMeanOracleAtVitScale) {
  std::mt19937_64 rng(5);
  const auto m = oracle::random_mat(rng, 196, 256);
  const auto got = image_feature(testing_util::from_mat(m));
  for (std::size_t j = 0; j < 256; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 196; ++i) s += m[i][j];
    EXPECT_NEAR(got[j], s / 196.0, 1e-12);
  }
}

TEST(EncodeSequence, ZeroParamsGiveZeroSummary) {
  auto fwd = random_cell(4, 3, 1), bwd = random_cell(4, 3, 2);
  testing_util::fill_params(fwd, 0.0);
  testing_util::fill_params(bwd, 0.0);
  std::mt19937_64 rng(1);
  const auto f = random_features(rng, 4);
  const auto st = encode_sequence<double>(f, fwd, bwd);
  EXPECT_EQ(st.h_se.values(), std::vector<double>(6, 0.0));
}

TEST(EncodeSequence, SummaryIsFinalStateOfEachDirection) {
  std::mt19937_64 rng(2);
  const auto f = random_features(rng, 4);
  const auto st = encode_sequence<double>(f, random_cell(4, 3, 1), random_cell(4, 3, 2));
  auto expected = to_vec(st.forward_states[4]);
  const auto back = to_vec(st.backward_states[0]);
  expected.insert(expected.end(), back.begin(), back.end());
  EXPECT_EQ(to_vec(st.h_se), expected);
}

TEST(EncodeSequence, ReversalIdentityOverRandomDraws) {
  std::mt19937_64 rng(77);
  for (int draw = 0; draw < 100; ++draw) {
    const auto fwd = random_cell(4, 3, 1000 + draw), bwd = random_cell(4, 3, 2000 + draw);
    const auto x = random_features(rng, 4);
    std::array<TD, 5> reversed;
    for (std::size_t t = 0; t < 5; ++t) reversed[t] = x[4 - t];
    const auto a = encode_sequence<double>(x, fwd, bwd);
    const auto b = encode_sequence<double>(reversed, bwd, fwd);
    for (std::size_t t = 0; t < 5; ++t) ASSERT_EQ(a.backward_states[t].values(), b.forward_states[4 - t].values());
  }
}

TEST(EncodeSequence, MatchesTenOracleSteps) {
  std::mt19937_64 rng(9);
  const auto fwd = random_cell(4, 3, 11), bwd = random_cell(4, 3, 12);
  const auto x = random_features(rng, 4);
  const auto st = encode_sequence<double>(x, fwd, bwd);
  oracle::Vec h(3, 0.0), c(3, 0.0);
  for (std::size_t t = 0; t < 5; ++t) std::tie(h, c) = oracle::lstm_step(to_vec(x[t]), h, c, testing_util::to_cell(fwd));
  oracle::Vec hb(3, 0.0), cb(3, 0.0);
  for (std::size_t t = 5; t-- > 0;) std::tie(hb, cb) = oracle::lstm_step(to_vec(x[t]), hb, cb, testing_util::to_cell(bwd));
  EXPECT_LE(testing_util::max_abs_diff(to_vec(st.h_se), oracle::cat(h, hb)), 1e-13);
}

TEST(EncodeSequence, WrongLength) {
  std::vector<TD> four(4, TD::zeros({4}));
  EXPECT_THROW(encode_sequence<double>(four, random_cell(4, 3, 1), random_cell(4, 3, 2)), ShapeError);
}

TEST(Attention, IdenticalValuesReturnThatValue) {
  std::mt19937_64 rng(4);
  const auto level = random_level(3, 4, 2, rng);
  const auto out = additive_attention(TD::vector(oracle::random_vec(rng, 4)),
                                      TD::matrix(3, 2, {0.5, -1, 0.5, -1, 0.5, -1}), level);
  EXPECT_NEAR(out.context[0], 0.5, 1e-15);
  EXPECT_NEAR(out.context[1], -1.0, 1e-15);
}

TEST(Attention, ZeroScoreVectorGivesMean) {
  std::mt19937_64 rng(6);
  auto level = random_level(3, 4, 2, rng);
  for (auto& v : level.v.mutable_data()) v = 0.0;
  const auto values = oracle::random_mat(rng, 5, 2);
  const auto out = additive_attention(TD::vector(oracle::random_vec(rng, 4)), testing_util::from_mat(values), level);
  for (double w : out.weights.values()) EXPECT_DOUBLE_EQ(w, 0.2);
  for (std::size_t j = 0; j < 2; ++j) {
    double m = 0.0;
    for (const auto& r : values) m += r[j] / 5.0;
    EXPECT_NEAR(out.context[j], m, 1e-15);
  }
}

TEST(Attention, FourScalarPatchesByHand) {
  // attn = query = value = 1: s_n = v·tanh(W_q·q + W_k·p_n)
  const AttentionLevelParams<double> level{TD::matrix(1, 1, {0.7}), TD::matrix(1, 1, {-1.3}), TD::vector({2.0})};
  const std::vector<double> p = {0.2, -0.5, 1.1, 0.0};
  const double q = 0.4;
  const auto out = additive_attention(TD::vector({q}), TD::matrix(4, 1, p), level);
  double s[4], z = 0.0, g = 0.0;
  for (int n = 0; n < 4; ++n) z += std::exp(s[n] = 2.0 * std::tanh(0.7 * q - 1.3 * p[n]));
  for (int n = 0; n < 4; ++n) {
    EXPECT_NEAR(out.weights[n], std::exp(s[n]) / z, 1e-15);
    g += std::exp(s[n]) / z * p[n];
  }
  EXPECT_NEAR(out.context[0], g, 1e-15);
}

TEST(Attention, BothLevelsMatchOracle) {
  std::mt19937_64 rng(13);
  AttentionParams<double> params{random_level(4, 6, 5, rng), random_level(4, 6, 6, rng), TD::zeros({2, 17})};
  const auto patches = oracle::random_mat(rng, 7, 5);
  const auto query = oracle::random_vec(rng, 6);
  const auto a = attend_patches(TD::vector(query), testing_util::from_mat(patches), params);
  const auto o = oracle::attend(query, patches, testing_util::to_attention(params.patch));
  EXPECT_LE(testing_util::max_abs_diff(to_vec(a.context), o.context), 1e-14);

  const auto fwd = random_cell(5, 3, 1), bwd = random_cell(5, 3, 2);
  const auto st = encode_sequence<double>(random_features(rng, 5), fwd, bwd);
  oracle::Mat states;
  for (std::size_t t = 0; t < 5; ++t) states.push_back(oracle::cat(to_vec(st.forward_states[t]), to_vec(st.backward_states[t])));
  const auto s = attend_set(TD::vector(query), st, params);
  const auto os = oracle::attend(query, states, testing_util::to_attention(params.set));
  EXPECT_LE(testing_util::max_abs_diff(to_vec(s.context), os.context), 1e-14);
  EXPECT_LE(testing_util::max_abs_diff(to_vec(s.weights), os.weights), 1e-14);
}

TEST(Attention, NormalizedAndInsideValueHullOnRandomInputs) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> count(1, 12);
  for (int trial = 0; trial < 1000; ++trial) {
    AttentionParams<double> params{random_level(4, 6, 5, rng), random_level(4, 6, 6, rng), TD::zeros({2, 17})};
    const auto query = TD::vector(oracle::random_vec(rng, 6, -3, 3));
    const auto patches = oracle::random_mat(rng, count(rng), 5, -3, 3);
    const auto a = attend_patches(query, testing_util::from_mat(patches), params);

    const auto fwd = random_cell(5, 3, trial), bwd = random_cell(5, 3, trial + 1);
    const auto st = encode_sequence<double>(random_features(rng, 5), fwd, bwd);
    const auto s = attend_set(query, st, params);
    oracle::Mat states;
    for (std::size_t t = 0; t < 5; ++t) states.push_back(to_vec(st.step_state(t)));

    for (const auto& [res, values] : {std::pair{a, patches}, std::pair{s, states}}) {
      double total = 0.0;
      for (double w : res.weights.values()) {
        ASSERT_GE(w, 0.0);
        total += w;
      }
      ASSERT_NEAR(total, 1.0, 1e-6);
      for (std::size_t j = 0; j < values[0].size(); ++j) {
        double lo = values[0][j], hi = values[0][j];
        for (const auto& r : values) {
          lo = std::min(lo, r[j]);
          hi = std::max(hi, r[j]);
        }
        ASSERT_GE(res.context[j], lo - 1e-12);
        ASSERT_LE(res.context[j], hi + 1e-12);
      }
    }
  }
}

TEST(MakeZeta, ZeroParamsGiveZero) {
  std::mt19937_64 rng(1);
  ParamInit init(1);
  auto params = AttentionParams<double>::init(4, 3, 5, 6, init);
  testing_util::fill_params(params, 0.0);
  const auto st = encode_sequence<double>(random_features(rng, 4), random_cell(4, 3, 1), random_cell(4, 3, 2));
  std::array<TD, 5> patches;
  for (auto& p : patches) p = testing_util::from_mat(oracle::random_mat(rng, 3, 4));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(make_zeta<double>(i, st, patches, params).values(), std::vector<double>(6, 0.0));
}

TEST(MakeZeta, MatchesComposedOracles) {
  std::mt19937_64 rng(31);
  ParamInit init(31);
  const auto params = AttentionParams<double>::init(4, 3, 5, 6, init);
  const auto st = encode_sequence<double>(random_features(rng, 4), random_cell(4, 3, 1), random_cell(4, 3, 2));
  std::array<TD, 5> patches;
  for (auto& p : patches) p = testing_util::from_mat(oracle::random_mat(rng, 3, 4));
  oracle::Mat states;
  for (std::size_t t = 0; t < 5; ++t) states.push_back(to_vec(st.step_state(t)));
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& q = states[i];
    const auto g = oracle::attend(q, testing_util::to_mat(patches[i]), testing_util::to_attention(params.patch)).context;
    const auto s = oracle::attend(q, states, testing_util::to_attention(params.set)).context;
    auto z = oracle::matvec(testing_util::to_mat(params.W_zeta), oracle::cat(oracle::cat(g, q), s));
    for (auto& v : z) v = std::tanh(v);
    EXPECT_LE(testing_util::max_abs_diff(to_vec(make_zeta<double>(i, st, patches, params)), z), 1e-14) << i;
  }
}

TEST(MakeZeta, SwappingOtherImagesIsDeterministic) {
  std::mt19937_64 rng(8);
  ParamInit init(8);
  const auto params = AttentionParams<double>::init(4, 3, 5, 6, init);
  auto feats = random_features(rng, 4);
  std::array<TD, 5> patches;
  for (auto& p : patches) p = testing_util::from_mat(oracle::random_mat(rng, 3, 4));
  std::swap(feats[1], feats[3]);
  std::swap(patches[1], patches[3]);
  const auto f = random_cell(4, 3, 1), b = random_cell(4, 3, 2);
  const auto z1 = make_zeta<double>(0, encode_sequence<double>(feats, f, b), patches, params);
  const auto z2 = make_zeta<double>(0, encode_sequence<double>(feats, f, b), patches, params);
  EXPECT_EQ(z1.values(), z2.values());
}

TEST(MakeZeta, IndexOutOfRange) {
  std::mt19937_64 rng(1);
  ParamInit init(1);
  const auto params = AttentionParams<double>::init(4, 3, 5, 6, init);
  const auto st = encode_sequence<double>(random_features(rng, 4), random_cell(4, 3, 1), random_cell(4, 3, 2));
  std::array<TD, 5> patches;
  for (auto& p : patches) p = TD::zeros({3, 4});
  EXPECT_THROW(make_zeta<double>(5, st, patches, params), ShapeError);
}

TEST(EncoderGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(55);
  ParamInit init(55);
  auto fwd = LSTMCellParams<double>::init(4, 3, init);
  auto bwd = LSTMCellParams<double>::init(4, 3, init);
  auto attn = AttentionParams<double>::init(4, 3, 5, 6, init);
  std::array<TD, 5> feats, patches;
  for (auto& f : feats) f = TD::vector(oracle::random_vec(rng, 4), true);
  for (auto& p : patches) p = TD({3, 4}, oracle::random_vec(rng, 12), true);
  NamedTensors<double> named;
  fwd.for_each("fwd/", [&](const std::string& n, TD& t) { named.emplace_back(n, t); });
  bwd.for_each("bwd/", [&](const std::string& n, TD& t) { named.emplace_back(n, t); });
  attn.for_each("attn/", [&](const std::string& n, TD& t) { named.emplace_back(n, t); });
  for (std::size_t i = 0; i < 5; ++i) {
    named.emplace_back("feature" + std::to_string(i), feats[i]);
    named.emplace_back("patches" + std::to_string(i), patches[i]);
  }
  const auto w = oracle::random_vec(rng, 6);
  const auto report = check_gradients(named, [&] {
    const auto st = encode_sequence<double>(feats, fwd, bwd);
    TD total = TD::scalar(0.0);
    for (std::size_t i = 0; i < 5; ++i) total = add(total, sum(mul(make_zeta<double>(i, st, patches, attn), TD::vector(w))));
    return add(total, sum(mul(st.h_se, st.h_se)));
  });
  for (const auto& t : report.tensors) EXPECT_LE(t.worst_relative, 1e-4) << t.name;
}
