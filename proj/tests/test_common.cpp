#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "srcbias/common.hpp"
#include "srcbias/text.hpp"
#include "test_util.hpp"

using namespace srcbias;

TEST(FormatDouble, RoundTripsRandomBitPatterns) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20000; ++i) {
    double x;
    const auto bits = rng();
    std::memcpy(&x, &bits, sizeof x);
    if (!std::isfinite(x)) continue;
    double back = 0.0;
    ASSERT_TRUE(parse_double(format_double(x), back));
    EXPECT_EQ(std::memcmp(&x, &back, sizeof x), 0) << format_double(x);
  }
}

TEST(FormatDouble, ShortForms) {
  EXPECT_EQ(format_double(0.9), "0.9");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(-0.5), "-0.5");
}

TEST(Parse, RejectsTrailingGarbage) {
  double d;
  long long n;
  EXPECT_FALSE(parse_double("1.5x", d));
  EXPECT_FALSE(parse_double("", d));
  EXPECT_TRUE(parse_double("+2", d));
  EXPECT_EQ(d, 2.0);
  EXPECT_FALSE(parse_int("3.0", n));
  EXPECT_TRUE(parse_int("-7", n));
  EXPECT_EQ(n, -7);
}

TEST(Text, TrimAndSplit) {
  EXPECT_EQ(trim("  a b\t\n"), "a b");
  EXPECT_EQ(trim(" \t "), "");
  const auto parts = split_ws("q1\t0  d1 \t2");
  ASSERT_EQ(parts.size(), 4u);
  EXPECT_EQ(parts[2], "d1");
}

TEST(Text, TokenizeLowercasesAndSplitsOnPunctuation) {
  const auto t = text::tokenize("Hello, WORLD! it's 2024-rock'n'roll");
  const std::vector<std::string> want{"hello", "world", "it", "s", "2024", "rock", "n", "roll"};
  EXPECT_EQ(t, want);
}

TEST(Text, TokenizeUnicode) {
  const auto t = text::tokenize("Ångström\u2014ΣΟΦΙΑ «Москва» café");
  const std::vector<std::string> want{"ångström", "σοφια", "москва", "café"};
  EXPECT_EQ(t, want);
  EXPECT_TRUE(text::tokenize("... \u2014 !!").empty());
}

TEST(Text, WhitespaceLength) {
  EXPECT_EQ(text::whitespace_length(""), 0u);
  EXPECT_EQ(text::whitespace_length("  a  b\tc\n"), 3u);
}

TEST(Files, MissingFileNamesPath) {
  try {
    read_file("/nonexistent/srcbias/x.txt");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/srcbias/x.txt"), std::string::npos);
  }
}

TEST(Files, ReadLinesStripsCarriageReturns) {
  testutil::TempDir dir;
  const auto p = dir.write("a.txt", "one\r\n\r\ntwo");
  const auto lines = read_lines(p);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "one");
  EXPECT_EQ(lines[1], "");
  EXPECT_EQ(lines[2], "two");
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  for (unsigned threads : {1u, 2u, 7u}) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  for (unsigned threads : {1u, 4u}) {
    try {
      parallel_for(200, threads, [](std::size_t i) {
        if (i % 50 == 17) throw std::runtime_error(std::to_string(i));
      });
      FAIL();
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "17");
    }
  }
}

TEST(Histogram, EdgesAndClamping) {
  Histogram h{0.0, 1.0, {}};
  h.add(0.0);
  h.add(1.0);
  h.add(0.05);
  h.add(0.999);
  h.add(-3.0);
  EXPECT_EQ(h.counts[0], 2u);
  EXPECT_EQ(h.counts[1], 1u);
  EXPECT_EQ(h.counts[kHistogramBins - 1], 2u);
  EXPECT_EQ(h.total(), 5u);
}
