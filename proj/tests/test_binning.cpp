#include <gtest/gtest.h>

#include <random>

#include "trajektor/binning.hpp"

using namespace trajektor;

namespace {

EventSet sequential(std::size_t n, std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  std::vector<EventRecord> ev;
  for (std::size_t i = 0; i < n; ++i) {
    ev.push_back({"u" + std::to_string(rng() % 7), static_cast<std::int64_t>(i), static_cast<Label>(rng() % 3)});
  }
  return EventSet::build(std::move(ev), std::nullopt);
}

std::vector<std::size_t> sizes(const BinningScheme& b) {
  std::vector<std::size_t> s;
  for (std::size_t p = 0; p < b.periods; ++p) s.push_back(b.window_size(p));
  return s;
}

}  // namespace

TEST(BuildBins, ExactAndBalancedRemainder) {
  EXPECT_EQ(sizes(build_bins(sequential(10), 2)), (std::vector<std::size_t>{5, 5}));
  EXPECT_EQ(sizes(build_bins(sequential(10), 3)), (std::vector<std::size_t>{4, 3, 3}));
}

TEST(BuildBins, FullCorpusWindowSizes) {
  // Integer division of 5,221,256 events into 100 windows.
  const std::size_t n = 5221256, P = 100;
  EXPECT_EQ(n / P, 52212u);
  EXPECT_EQ(n % P, 56u);
  std::vector<EventRecord> ev(n, EventRecord{"u", 0, 0});
  for (std::size_t i = 0; i < n; ++i) ev[i].timestamp = static_cast<std::int64_t>(i);
  const auto b = build_bins(EventSet::build(std::move(ev), std::nullopt), P);
  std::size_t large = 0, small = 0;
  for (auto s : sizes(b)) (s == 52213 ? large : small) += 1;
  EXPECT_EQ(large, 56u);
  EXPECT_EQ(small, 44u);
  EXPECT_EQ(b.window_size(0), 52213u);
  EXPECT_EQ(b.window_size(99), 52212u);
}

TEST(BuildBins, Preconditions) {
  const auto es = sequential(5);
  EXPECT_THROW(build_bins(es, 0), ValidationError);
  EXPECT_THROW(build_bins(es, -2), ValidationError);
  try {
    build_bins(es, 6);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("exceeds event count"), std::string::npos);
  }
}

TEST(BuildBins, SizesSumToNAndDifferByAtMostOne) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng() % 500;
    const auto es = sequential(n, rep);
    const auto P = static_cast<long long>(1 + rng() % n);
    const auto b = build_bins(es, P);
    const auto s = sizes(b);
    std::size_t sum = 0;
    for (auto x : s) sum += x;
    EXPECT_EQ(sum, n);
    EXPECT_LE(*std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end()), 1u);
    EXPECT_EQ(b.boundaries.front(), 0u);
    EXPECT_EQ(b.boundaries.back(), n);
    for (std::size_t p = 0; p < b.periods; ++p) EXPECT_LE(b.window_time_spans[p].first, b.window_time_spans[p].second);
  }
}

TEST(Summarize, WindowRules) {
  const std::vector<std::uint32_t> mixed{1, 1, 1};
  EXPECT_EQ(summarize_window(mixed, SummaryRule::max_class()), 2);
  const std::vector<std::uint32_t> empty{0, 0, 0};
  EXPECT_EQ(summarize_window(empty, SummaryRule::max_class()), 0);
  EXPECT_EQ(summarize_window(empty, SummaryRule::threshold(0.05)), 0);
  const std::vector<std::uint32_t> three_pct{97, 3, 0};
  EXPECT_EQ(summarize_window(three_pct, SummaryRule::threshold(0.05)), 0);
  EXPECT_EQ(summarize_window(three_pct, SummaryRule::max_class()), 1);
  const std::vector<std::uint32_t> five_pct{95, 5, 0};
  EXPECT_EQ(summarize_window(five_pct, SummaryRule::threshold(0.05)), 1);
  EXPECT_THROW(SummaryRule::threshold(0.0), ValidationError);
  EXPECT_THROW(SummaryRule::threshold(1.5), ValidationError);
}

TEST(Summarize, SilentWindowsAreBaselineAndCountsAreConserved) {
  std::vector<EventRecord> ev;
  for (int i = 0; i < 10; ++i) ev.push_back({"busy", i, static_cast<Label>(i % 3)});
  ev.push_back({"quiet", 2, 2});
  const auto es = EventSet::build(ev, std::nullopt);
  const auto bins = build_bins(es, 3);
  const auto m = summarize(es, bins, SummaryRule::max_class());
  ASSERT_EQ(m.users(), (std::vector<std::string>{"busy", "quiet"}));
  EXPECT_EQ(m.obs(1, 0), 2);
  EXPECT_EQ(m.obs(1, 1), 0);
  EXPECT_EQ(m.obs(1, 2), 0);
  EXPECT_EQ(m.total_events(), es.size());
}

TEST(Summarize, MaxClassDominatesThresholdAndIsDeterministic) {
  const auto es = sequential(3000, 9);
  const auto bins = build_bins(es, 40);
  const auto mc = summarize(es, bins, SummaryRule::max_class());
  EXPECT_EQ(mc, summarize(es, bins, SummaryRule::max_class()));
  for (double q : {0.01, 0.05, 0.2, 0.5, 1.0}) {
    const auto th = summarize(es, bins, SummaryRule::threshold(q));
    for (std::size_t u = 0; u < mc.user_count(); ++u) {
      for (std::size_t p = 0; p < mc.periods(); ++p) EXPECT_GE(mc.obs(u, p), th.obs(u, p));
    }
  }
}

TEST(Summarize, CsvRoundTrip) {
  const auto es = sequential(500, 2);
  const auto m = summarize(es, build_bins(es, 7), SummaryRule::max_class());
  const LabelVocabulary v;
  EXPECT_EQ(observations_from_csv(observations_to_csv(m, v), counts_to_csv(m, v), v), m);
  const auto b = build_bins(es, 7);
  const auto b2 = bins_from_csv(bins_to_csv(b));
  EXPECT_EQ(b2.boundaries, b.boundaries);
  EXPECT_EQ(b2.window_time_spans, b.window_time_spans);
}
