#include <gtest/gtest.h>

#include <random>

#include "oracles/oracles.hpp"
#include "repdetect/error.hpp"
#include "repdetect/fgws.hpp"
#include "repdetect/repstore.hpp"
#include "repdetect/synthgen.hpp"
#include "test_util.hpp"

using namespace repdetect;
using testutil::TempDir;

namespace {

FrequencyTable table_of(std::initializer_list<std::pair<const char*, std::uint64_t>> items) {
  FrequencyTable t;
  for (const auto& [w, c] : items) {
    t.counts[w] = c;
    t.total_tokens += c;
  }
  return t;
}

Tokens toks(std::initializer_list<const char*> words) { return Tokens(words.begin(), words.end()); }

}  // namespace

TEST(Threshold, MinimumAndMaximum) {
  const FrequencyTable t = table_of({{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}, {"e", 5}});
  EXPECT_EQ(frequency_threshold(t, 0), 1u);
  EXPECT_EQ(frequency_threshold(t, 100), 5u);
  EXPECT_THROW(frequency_threshold(t, 15), DomainError);
  EXPECT_THROW(frequency_threshold(t, 110), DomainError);
  EXPECT_THROW(frequency_threshold(FrequencyTable{}, 50), DataError);
}

TEST(Threshold, MatchesSortAndIndexOracle) {
  std::mt19937_64 rng(8);
  FrequencyTable t;
  std::vector<std::uint64_t> counts;
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t c = 1 + rng() % 5000;
    t.counts["w" + std::to_string(i)] = c;
    counts.push_back(c);
  }
  for (int delta = 0; delta <= 100; delta += 10) {
    EXPECT_EQ(frequency_threshold(t, delta), oracle::percentile(counts, delta)) << delta;
  }
}

TEST(Substitute, NothingBelowThresholdIsNoOp) {
  const FrequencyTable t = table_of({{"a", 100}, {"b", 200}});
  SynonymMap s;
  s.neighbors["a"] = {"b"};
  const auto r = substitute_infrequent(toks({"a", "b", "a"}), t, 50, s);
  EXPECT_EQ(r.tokens, toks({"a", "b", "a"}));
  EXPECT_TRUE(r.log.empty());
}

TEST(Substitute, TieBreaksLexicographically) {
  const FrequencyTable t = table_of({{"Profits", 300}, {"dipped", 45}, {"duck", 500}, {"fell", 500}});
  SynonymMap s;
  s.neighbors["dipped"] = {"fell", "duck"};
  const auto r = substitute_infrequent(toks({"Profits", "dipped"}), t, 92, s);
  EXPECT_EQ(r.tokens, toks({"Profits", "duck"}));
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.log[0], (Substitution{1, "dipped", "duck"}));
}

TEST(Substitute, RarerSynonymsAreIgnored) {
  const FrequencyTable t = table_of({{"odd", 10}, {"odder", 5}, {"oddest", 10}});
  SynonymMap s;
  s.neighbors["odd"] = {"odder", "oddest"};
  const auto r = substitute_infrequent(toks({"odd"}), t, 50, s);
  EXPECT_EQ(r.tokens, toks({"odd"}));
  EXPECT_TRUE(r.log.empty());
}

TEST(Substitute, UnknownWordsAreInfrequent) {
  const FrequencyTable t = table_of({{"good", 900}});
  SynonymMap s;
  s.neighbors["g00d"] = {"good"};
  const auto r = substitute_infrequent(toks({"g00d"}), t, 1, s);
  EXPECT_EQ(r.tokens, toks({"good"}));
}

TEST(Substitute, SinglePassDoesNotCascade) {
  // x -> y, and y itself is still below threshold with a synonym z.
  const FrequencyTable t = table_of({{"x", 1}, {"y", 5}, {"z", 100}});
  SynonymMap s;
  s.neighbors["x"] = {"y"};
  s.neighbors["y"] = {"z"};
  const auto r = substitute_infrequent(toks({"x", "y"}), t, 50, s);
  EXPECT_EQ(r.tokens, toks({"y", "z"}));
  // A second pass would move on; the contract is exactly one pass.
  EXPECT_EQ(substitute_infrequent(r.tokens, t, 50, s).tokens, toks({"z", "z"}));
}

TEST(Substitute, IdempotentWhenReplacementsAreFrequent) {
  std::mt19937_64 rng(4);
  FrequencyTable t;
  SynonymMap s;
  for (int i = 0; i < 200; ++i) t.counts["w" + std::to_string(i)] = 1 + rng() % 1000;
  for (int i = 0; i < 200; ++i) {
    for (int j = 0; j < 3; ++j) s.neighbors["w" + std::to_string(i)].push_back("w" + std::to_string(rng() % 200));
  }
  for (int trial = 0; trial < 100; ++trial) {
    Tokens seq;
    for (int i = 0; i < 12; ++i) seq.push_back("w" + std::to_string(rng() % 200));
    const std::uint64_t thr = frequency_threshold(t, 50);
    const auto once = substitute_infrequent(seq, t, thr, s);
    bool all_frequent = true;
    for (const auto& sub : once.log) all_frequent = all_frequent && t.count(sub.to) >= thr;
    if (all_frequent) EXPECT_EQ(substitute_infrequent(once.tokens, t, thr, s).tokens, once.tokens);
  }
}

TEST(Substitute, RaisingDeltaNeverSubstitutesLess) {
  std::mt19937_64 rng(6);
  FrequencyTable t;
  SynonymMap s;
  for (int i = 0; i < 300; ++i) t.counts["w" + std::to_string(i)] = 1 + rng() % 2000;
  for (int i = 0; i < 300; ++i) {
    for (int j = 0; j < 4; ++j) s.neighbors["w" + std::to_string(i)].push_back("w" + std::to_string(rng() % 300));
  }
  std::vector<Tokens> corpus(200);
  for (auto& seq : corpus) {
    for (int i = 0; i < 10; ++i) seq.push_back("w" + std::to_string(rng() % 300));
  }
  std::size_t previous = 0;
  for (int delta = 0; delta <= 100; delta += 10) {
    std::size_t total = 0;
    for (const auto& seq : corpus) total += substitute_infrequent(seq, t, frequency_threshold(t, delta), s).log.size();
    EXPECT_GE(total, previous) << delta;
    previous = total;
  }
}

TEST(Oracle, KeyIsSha256OfSpaceJoinedTokens) {
  TempDir tmp("fgws");
  write_text_file(tmp / "seq.txt", "Profits dipped because");
  EXPECT_EQ(ConfidenceOracle::key(toks({"Profits", "dipped", "because"})), oracle::sha256sum(tmp / "seq.txt"));
  EXPECT_NE(ConfidenceOracle::key(toks({"profits"})), ConfidenceOracle::key(toks({"Profits"})));
}

TEST(Oracle, RejectsBadProbabilitiesAndNamesMissingHash) {
  ConfidenceOracle o(2);
  EXPECT_THROW(o.add(toks({"a"}), {0.5, 0.6}), DataError);
  EXPECT_THROW(o.add(toks({"a"}), {1.0}), DataError);
  EXPECT_THROW(o.add(toks({"a"}), {-0.1, 1.1}), DataError);
  o.add(toks({"a"}), {0.3, 0.7});
  EXPECT_EQ(o.lookup(toks({"a"}))[1], 0.7);
  try {
    o.lookup(toks({"b"}));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(ConfidenceOracle::key(toks({"b"}))), std::string::npos);
  }
  const ConfidenceOracle back = ConfidenceOracle::from_json(o.to_json());
  EXPECT_EQ(back.lookup(toks({"a"})), o.lookup(toks({"a"})));
}

TEST(Gamma, NoChangeGivesZero) {
  const FrequencyTable t = table_of({{"a", 100}});
  ConfidenceOracle o(2);
  std::vector<Tokens> val{toks({"a"}), toks({"a", "a"})};
  o.add(val[0], {0.8, 0.2});
  o.add(val[1], {0.1, 0.9});
  EXPECT_EQ(calibrate_gamma(val, o, t, 50, SynonymMap{}), 0.0);
}

TEST(Gamma, NinetiethOfTenItems) {
  // Nine sequences with no change, one that drops by exactly 1.0.
  const FrequencyTable t = table_of({{"good", 100}});
  SynonymMap s;
  s.neighbors["gud"] = {"good"};
  ConfidenceOracle o(2);
  std::vector<Tokens> val;
  for (int i = 0; i < 9; ++i) {
    val.push_back(toks({"good"}));
  }
  o.add(toks({"good"}), {1.0, 0.0});
  val.push_back(toks({"gud"}));
  o.add(toks({"gud"}), {0.0, 1.0});
  EXPECT_EQ(calibrate_gamma(val, o, t, 50, s), 1.0);
}

TEST(Gamma, MatchesPercentileOracleAndFloorsNegatives) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FrequencyTable t;
  t.counts["common"] = 1000;
  SynonymMap s;
  ConfidenceOracle o(2);
  std::vector<Tokens> val;
  std::vector<double> expected;
  for (int i = 0; i < 250; ++i) {
    const std::string rare = "rare" + std::to_string(i);
    s.neighbors[rare] = {"common"};
    const Tokens seq{rare, "x" + std::to_string(i)};
    const Tokens fixed{"common", "x" + std::to_string(i)};
    const double before = 0.5 + 0.5 * u(rng);  // class 0 predicted
    const double after = u(rng);
    o.add(seq, {before, 1.0 - before});
    o.add(fixed, {after, 1.0 - after});
    val.push_back(seq);
    expected.push_back(std::max(0.0, before - after));
  }
  EXPECT_EQ(calibrate_gamma(val, o, t, 500, s), oracle::percentile(expected, 90));
}

TEST(Detect, StrictInequalityAndNoOp) {
  const FrequencyTable t = table_of({{"good", 100}});
  SynonymMap s;
  s.neighbors["gud"] = {"good"};
  ConfidenceOracle o(2);
  o.add(toks({"good"}), {0.75, 0.25});
  o.add(toks({"gud"}), {1.0, 0.0});
  const auto noop = fgws_detect(toks({"good"}), o, t, 50, s, 0.1);
  EXPECT_FALSE(noop.adversarial);
  EXPECT_EQ(noop.shift.difference, 0.0);
  const auto at = fgws_detect(toks({"gud"}), o, t, 50, s, 0.25);
  EXPECT_EQ(at.shift.difference, 0.25);
  EXPECT_FALSE(at.adversarial);
  EXPECT_TRUE(fgws_detect(toks({"gud"}), o, t, 50, s, 0.2499).adversarial);
}

TEST(EndToEnd, RareWordAdversariesAgainstFrequentNormals) {
  // Normals use count-1000 words only; adversaries swap in a count-30 word
  // and the oracle moves 0.5 of confidence when the swap is undone.
  FgwsDataset d;
  d.dataset_name = "constructed";
  d.oracle = ConfidenceOracle(2);
  for (int i = 0; i < 20; ++i) {
    d.frequencies.counts["f" + std::to_string(i)] = 1000;
    d.frequencies.counts["r" + std::to_string(i)] = 30;
    d.synonyms.neighbors["r" + std::to_string(i)] = {"f" + std::to_string(i)};
  }
  std::mt19937_64 rng(2);
  auto sentence = [&] {
    Tokens t;
    for (int i = 0; i < 6; ++i) t.push_back("f" + std::to_string(rng() % 20));
    return t;
  };
  for (int i = 0; i < 100; ++i) {
    Tokens v = sentence();
    d.oracle.add(v, {0.9, 0.1});
    d.validation.push_back(v);
  }
  for (int i = 0; i < 50; ++i) {
    Tokens n = sentence();
    d.oracle.add(n, {0.2, 0.8});
    d.test.push_back({"n" + std::to_string(i), n, 0});
    Tokens clean = sentence();
    const int pos = static_cast<int>(rng() % 6);
    Tokens adv = clean;
    adv[pos] = "r" + clean[pos].substr(1);
    d.oracle.add(clean, {0.25, 0.75});
    d.oracle.add(adv, {0.75, 0.25});
    d.test.push_back({"a" + std::to_string(i), adv, 1});
  }
  const FgwsRun r = run_fgws(d, 90);
  EXPECT_EQ(r.threshold, 1000u);
  EXPECT_EQ(r.gamma, 0.0);
  EXPECT_EQ(r.report.tp, 50u);
  EXPECT_EQ(r.report.fp, 0u);
  EXPECT_EQ(r.report.accuracy, 1.0);
}

TEST(EndToEnd, ToyCorpusRoundTripsAndMeetsTargets) {
  TempDir tmp("fgws");
  const FgwsDataset d = gen_fgws_toy(FgwsToyConfig{});
  const auto manifest = write_fgws_dataset(d, tmp.path());
  const FgwsDataset back = load_fgws_dataset(manifest);
  EXPECT_EQ(back.test.size(), d.test.size());
  EXPECT_EQ(back.validation, d.validation);
  EXPECT_EQ(back.frequencies.counts, d.frequencies.counts);
  EXPECT_EQ(back.oracle.to_json(), d.oracle.to_json());

  const FgwsRun r = run_fgws(back, 90);
  EXPECT_EQ(r.report.tp, 500u);
  EXPECT_EQ(r.report.fn, 0u);
  EXPECT_LE(r.report.fp, 50u);
  EXPECT_EQ(run_fgws(back, 90).verdicts_json(back), r.verdicts_json(back));

  const FgwsRun fixed = run_fgws(back, 90, 0.9);
  EXPECT_FALSE(fixed.gamma_calibrated);
  EXPECT_EQ(fixed.gamma, 0.9);
  EXPECT_EQ(fixed.report.tp, 0u);
}
