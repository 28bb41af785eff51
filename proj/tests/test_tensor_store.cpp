#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "ptwd/tensor_store.hpp"
#include "test_util.hpp"

namespace ptwd {
namespace {

SparseTensor parse(const std::string& text, IngestOptions opts = {}) {
  std::istringstream in(text);
  return parse_coo(in, opts);
}

// Independent duplicate scanner: returns the 1-based line of the first record
// whose (i,j,k) was already seen, or 0.
std::size_t first_duplicate_line(const std::string& text) {
  std::set<std::tuple<long, long, long>> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    long i, j, k;
    double v;
    fields >> i >> j >> k >> v;
    if (!seen.insert({i, j, k}).second) return n;
  }
  return 0;
}

// Largest-remainder reference computed in long double. Fractions that agree
// to 1e-12 are equal rationals (n <= 500, ratios <= 9), so they count as a
// tie and the earlier part wins.
std::array<std::size_t, 3> reference_sizes(std::size_t n, std::array<unsigned, 3> r) {
  const long double sum = static_cast<long double>(r[0]) + r[1] + r[2];
  std::array<std::size_t, 3> out{};
  std::vector<std::pair<long double, int>> frac;
  std::size_t used = 0;
  for (int p = 0; p < 3; ++p) {
    const long double q = static_cast<long double>(n) * r[p] / sum;
    out[p] = static_cast<std::size_t>(std::floor(q));
    used += out[p];
    frac.push_back({q - std::floor(q), p});
  }
  std::stable_sort(frac.begin(), frac.end(), [](auto& a, auto& b) { return a.first > b.first + 1e-12L; });
  for (std::size_t u = 0; used < n; ++u, ++used) ++out[frac[u].second];
  return out;
}

TEST(Ingest, SingleRecord) {
  auto t = parse("0 1 2 3.5\n", {Dims{2, 2, 3}});
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0], (Entry{0, 1, 2, 3.5}));
  EXPECT_EQ(t.dims(), (Dims{2, 2, 3}));
  EXPECT_FALSE(t.normalized());
}

TEST(Ingest, EmptyFile) {
  auto t = parse("");
  EXPECT_EQ(t.size(), 0u);
  EXPECT_TRUE(t.empty());
}

TEST(Ingest, DuplicateKeyNamesLine) {
  const std::string text = "0 1 2 3.5\n0 1 2 4.0\n";
  ASSERT_EQ(first_duplicate_line(text), 2u);
  try {
    parse(text);
    FAIL() << "expected DuplicateKeyError";
  } catch (const DuplicateKeyError& e) {
    EXPECT_EQ(e.line(), first_duplicate_line(text));
  }
}

TEST(Ingest, DuplicateDetectionAgreesWithSetScan) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::ostringstream text;
    std::uniform_int_distribution<int> idx(0, 2);
    const int lines = 1 + trial % 12;
    for (int n = 0; n < lines; ++n) text << idx(rng) << ' ' << idx(rng) << ' ' << idx(rng) << " 1.0\n";
    const std::size_t expected = first_duplicate_line(text.str());
    if (expected == 0) {
      EXPECT_EQ(parse(text.str()).size(), static_cast<std::size_t>(lines));
    } else {
      try {
        parse(text.str());
        FAIL() << "expected duplicate error";
      } catch (const DuplicateKeyError& e) {
        EXPECT_EQ(e.line(), expected);
      }
    }
  }
}

TEST(Ingest, KeepLastOverridesDuplicate) {
  auto t = parse("0 1 2 3.5\n1 1 1 2\n0 1 2 4.0\n", {std::nullopt, true});
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].value, 4.0);
  EXPECT_EQ(t[1].value, 2.0);
}

TEST(Ingest, MalformedLinesReportLineNumber) {
  auto expect_line = [](const std::string& text, std::size_t line) {
    try {
      parse(text);
      FAIL() << "expected ParseError for: " << text;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), line) << e.what();
    }
  };
  expect_line("0 0 0 1\n0 0 1\n", 2);
  expect_line("# comment\n0 0 0 1 9\n", 2);
  expect_line("0 0 x 1\n", 1);
  expect_line("0 0 0 abc\n", 1);
  expect_line("-1 0 0 1\n", 1);
  expect_line("0 0 0 1.5\n\n0 0 1 nan\n", 3);
  expect_line("0 0 0 inf\n", 1);
  expect_line("0.5 0 0 1\n", 1);
}

TEST(Ingest, BoundsAgainstDeclaredDims) {
  EXPECT_THROW(parse("0 0 3 1\n", {Dims{1, 1, 3}}), BoundsError);
  EXPECT_THROW(parse("# dims 2 2 2\n2 0 0 1\n"), BoundsError);
  EXPECT_NO_THROW(parse("# dims 2 2 2\n1 1 1 1\n"));
}

TEST(Ingest, DimsHeaderAndInference) {
  EXPECT_EQ(parse("# dims 4 5 6\n0 0 0 1\n").dims(), (Dims{4, 5, 6}));
  EXPECT_EQ(parse("3 0 1 1\n0 4 0 2\n").dims(), (Dims{4, 5, 2}));
  // Explicit dims override the header.
  EXPECT_EQ(parse("# dims 4 5 6\n0 0 0 1\n", {Dims{7, 7, 7}}).dims(), (Dims{7, 7, 7}));
  EXPECT_THROW(parse("# dims 4 0 6\n"), ParseError);
}

TEST(Ingest, CommentsBlankLinesAndCrlf) {
  auto t = parse("# header\r\n\r\n  0 0 0 1.25\r\n# note\n1\t1\t1\t-2e-3\n");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[1].value, -2e-3);
}

TEST(Ingest, EntryCountEqualsRecordLines) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto t = test_util::random_tensor(rng, Dims{5, 4, 3}, 0.5);
    std::ostringstream out;
    out << "# a comment\n";
    write_coo(out, t);
    const std::string text = out.str();
    auto back = parse(text);
    EXPECT_EQ(back.size(), static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) - 2);
    EXPECT_EQ(back, t);
  }
}

TEST(Ingest, MissingFile) { EXPECT_THROW(ingest("/nonexistent/ptwd.coo"), Error); }

TEST(Normalize, KnownValues) {
  SparseTensor t(Dims{3, 1, 1}, {{0, 0, 0, 0.0}, {1, 0, 0, std::numbers::e - 1.0}, {2, 0, 0, 3.5}});
  auto n = normalize(t);
  EXPECT_TRUE(n.normalized());
  EXPECT_EQ(n[0].value, 0.0);
  EXPECT_NEAR(n[1].value, 1.0, 1e-15);
  EXPECT_NEAR(n[2].value, std::log(4.5), 1e-15);
  EXPECT_NEAR(n[2].value, 1.5040773967762742, 1e-15);
}

TEST(Normalize, Errors) {
  SparseTensor neg(Dims{1, 1, 1}, {{0, 0, 0, -0.5}});
  EXPECT_THROW(normalize(neg), DomainError);
  SparseTensor ok(Dims{1, 1, 1}, {{0, 0, 0, 0.5}});
  auto n = normalize(ok);
  EXPECT_THROW(normalize(n), StateError);
  EXPECT_THROW(denormalize(ok), StateError);
}

TEST(Denormalize, KnownValues) {
  SparseTensor t(Dims{2, 1, 1}, {{0, 0, 0, 0.0}, {1, 0, 0, 1.0}}, true);
  auto d = denormalize(t);
  EXPECT_FALSE(d.normalized());
  EXPECT_EQ(d[0].value, 0.0);
  EXPECT_NEAR(d[1].value, std::numbers::e - 1.0, 1e-15);
}

// Absolute 1e-12 holds up to values whose spacing is below that bound; above
// ~4e3 one binary64 ulp already exceeds 1e-12. For large x a rounding error
// of half an ulp in y = ln(1 + x) becomes a relative error of about
// |y| * eps / 2 in x, so the bound there scales with |y|.
TEST(Normalize, RoundTripProperty) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> small(0.0, 1e3);
  std::uniform_real_distribution<double> large(0.0, 1e6);
  std::vector<Entry> a, b;
  for (std::size_t n = 0; n < 2000; ++n) {
    a.push_back({n, 0, 0, small(rng)});
    b.push_back({n, 0, 0, large(rng)});
  }
  SparseTensor ts(Dims{2000, 1, 1}, a), tl(Dims{2000, 1, 1}, b);
  auto rs = denormalize(normalize(ts));
  auto rl = denormalize(normalize(tl));
  for (std::size_t n = 0; n < 2000; ++n) {
    EXPECT_NEAR(rs[n].value, ts[n].value, 1e-12);
    const double y = std::log1p(tl[n].value);
    EXPECT_NEAR(rl[n].value, tl[n].value, (4 + y) * std::numeric_limits<double>::epsilon() * tl[n].value);
  }
}

TEST(Split, DefaultRatioSizes) {
  std::mt19937_64 rng(1);
  auto t100 = test_util::random_tensor_with_count(rng, Dims{10, 10, 10}, 100);
  auto s = split(t100, SplitSpec{{1, 2, 7}, 42});
  EXPECT_EQ(s.train.size(), 10u);
  EXPECT_EQ(s.valid.size(), 20u);
  EXPECT_EQ(s.test.size(), 70u);

  auto t10 = test_util::random_tensor_with_count(rng, Dims{10, 10, 10}, 10);
  auto s10 = split(t10, SplitSpec{{1, 2, 7}, 0});
  EXPECT_EQ(s10.train.size(), 1u);
  EXPECT_EQ(s10.valid.size(), 2u);
  EXPECT_EQ(s10.test.size(), 7u);
}

TEST(Split, LargestRemainderMatchesReference) {
  const auto ref = reference_sizes(101, {1, 2, 7});
  EXPECT_EQ(largest_remainder_sizes(101, {1, 2, 7}), ref);
  EXPECT_EQ(ref, (std::array<std::size_t, 3>{10, 20, 71}));

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<unsigned> ratio(0, 9);
  std::uniform_int_distribution<std::size_t> count(1, 500);
  for (int trial = 0; trial < 500; ++trial) {
    std::array<unsigned, 3> r{ratio(rng), ratio(rng), ratio(rng)};
    if (r[0] + r[1] + r[2] == 0) continue;
    const std::size_t n = count(rng);
    const auto got = largest_remainder_sizes(n, r);
    EXPECT_EQ(got, reference_sizes(n, r)) << n << " " << r[0] << ":" << r[1] << ":" << r[2];
    EXPECT_EQ(got[0] + got[1] + got[2], n);
    for (int p = 0; p < 3; ++p) {
      const double share = static_cast<double>(n) * r[p] / (r[0] + r[1] + r[2]);
      EXPECT_LT(std::abs(static_cast<double>(got[p]) - share), 1.0);
    }
  }
}

TEST(Split, PartitionProperty) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    auto t = test_util::random_tensor(rng, Dims{6, 5, 4}, 0.3);
    if (t.empty()) continue;
    SplitSpec spec{{1 + static_cast<unsigned>(trial % 3), 2, 7}, static_cast<std::uint64_t>(trial)};
    auto s = split(t, spec);
    std::multiset<std::tuple<std::size_t, std::size_t, std::size_t, double>> all, parts;
    for (const auto& e : t.entries()) all.insert({e.i, e.j, e.k, e.value});
    for (const auto* p : {&s.train, &s.valid, &s.test})
      for (const auto& e : p->entries()) parts.insert({e.i, e.j, e.k, e.value});
    EXPECT_EQ(all, parts);
    EXPECT_EQ(s.train.size() + s.valid.size() + s.test.size(), t.size());
  }
}

TEST(Split, DeterministicAndSeedSensitive) {
  std::mt19937_64 rng(4);
  auto t = test_util::random_tensor_with_count(rng, Dims{20, 20, 20}, 300);
  auto a = split(t, SplitSpec{{1, 2, 7}, 17});
  auto b = split(t, SplitSpec{{1, 2, 7}, 17});
  auto c = split(t, SplitSpec{{1, 2, 7}, 18});
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.valid, b.valid);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, c.train);
}

TEST(Split, Errors) {
  SparseTensor empty(Dims{2, 2, 2}, {});
  EXPECT_THROW(split(empty, SplitSpec{}), EmptyInputError);
  SparseTensor one(Dims{2, 2, 2}, {{0, 0, 0, 1.0}});
  EXPECT_THROW(split(one, SplitSpec{{0, 0, 0}, 0}), ParameterError);
}

TEST(Split, ParseRatios) {
  EXPECT_EQ(parse_ratios("1:2:7"), (std::array<unsigned, 3>{1, 2, 7}));
  EXPECT_THROW(parse_ratios("1:2"), ParameterError);
  EXPECT_THROW(parse_ratios("1:2:7:1"), ParameterError);
  EXPECT_THROW(parse_ratios("0:0:0"), ParameterError);
  EXPECT_THROW(parse_ratios("a:2:7"), ParameterError);
}

TEST(SparseTensor, ConstructorInvariants) {
  EXPECT_THROW(SparseTensor(Dims{0, 1, 1}, {}), ParameterError);
  EXPECT_THROW(SparseTensor(Dims{1, 1, 1}, {{0, 1, 0, 1.0}}), BoundsError);
  EXPECT_THROW(SparseTensor(Dims{1, 1, 1}, {{0, 0, 0, NAN}}), DomainError);
  EXPECT_THROW(SparseTensor(Dims{1, 1, 1}, {{0, 0, 0, 1.0}, {0, 0, 0, 2.0}}), ParameterError);
}

}  // namespace
}  // namespace ptwd
