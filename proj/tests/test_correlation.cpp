#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "vismetric/correlation.hpp"

using namespace vismetric;

namespace {

struct PairCounts {
  std::int64_t concordant = 0, discordant = 0, ties_x = 0, ties_y = 0, n0 = 0;
};

// O(n^2) enumeration straight from the definition.
PairCounts enumerate_pairs(const std::vector<double>& x, const std::vector<double>& y) {
  PairCounts c;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      ++c.n0;
      const bool tx = x[i] == x[j], ty = y[i] == y[j];
      if (tx) ++c.ties_x;
      if (ty) ++c.ties_y;
      if (tx || ty) continue;
      if ((x[i] < x[j]) == (y[i] < y[j]))
        ++c.concordant;
      else
        ++c.discordant;
    }
  return c;
}

double oracle_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  const auto c = enumerate_pairs(x, y);
  return static_cast<double>(c.concordant - c.discordant) /
         std::sqrt(static_cast<double>(c.n0 - c.ties_x) * static_cast<double>(c.n0 - c.ties_y));
}

double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

bool constant(const std::vector<double>& v) { return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end(); }

// Tied series: values on a coarse grid, y partly driven by x.
std::pair<std::vector<double>, std::vector<double>> tied_pair(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> levels(2, 12);
  std::uniform_real_distribution<double> mix(-1.0, 1.0);
  std::vector<double> x(n), y(n);
  do {
    const int lx = levels(rng), ly = levels(rng);
    std::uniform_int_distribution<int> gx(0, lx), gy(0, ly);
    const double w = mix(rng);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = gx(rng) * 0.25;
      y[i] = std::round(w * x[i] * ly / lx + gy(rng) * (1 - std::abs(w))) / 4.0;
    }
  } while (constant(x) || constant(y));
  return {x, y};
}

}  // namespace

TEST(Kendall, Examples) {
  const std::vector<double> a = {1, 2, 3}, b = {3, 2, 1};
  EXPECT_EQ(kendall(a, a), 1.0);
  EXPECT_EQ(kendall(a, b), -1.0);
  const std::vector<double> x = {1, 2, 2, 3}, y = {1, 3, 2, 4};
  EXPECT_NEAR(kendall(x, y), 5.0 / std::sqrt(30.0), 1e-15);
  EXPECT_NEAR(kendall(x, y), 0.912871, 1e-6);
  EXPECT_NEAR(kendall(x, y, KendallVariant::kTauA), 5.0 / 6.0, 1e-15);
}

TEST(Kendall, ZeroVarianceAndShape) {
  const std::vector<double> c = {2, 2, 2}, v = {1, 2, 3};
  try {
    kendall(c, v);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_STREQ(e.what(), "zero variance");
  }
  EXPECT_THROW(kendall(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
  EXPECT_THROW(kendall(v, std::vector<double>{1, 2}), ValidationError);
}

TEST(Kendall, MatchesPairEnumerationExactly) {
  std::mt19937_64 rng(20211018);
  std::uniform_int_distribution<std::size_t> size(2, 1000);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = trial == 0 ? 1000 : trial == 1 ? 2 : size(rng);
    auto [x, y] = tied_pair(rng, n);
    const auto c = enumerate_pairs(x, y);
    const auto k = kendall_counts(x, y);
    ASSERT_EQ(k.pairs, c.n0);
    ASSERT_EQ(k.ties_x, c.ties_x);
    ASSERT_EQ(k.ties_y, c.ties_y);
    ASSERT_EQ(k.concordant_minus_discordant, c.concordant - c.discordant) << "trial " << trial << " n=" << n;
    ASSERT_EQ(kendall(x, y), oracle_tau_b(x, y)) << "trial " << trial;
    ASSERT_EQ(kendall(x, y, KendallVariant::kTauA),
              static_cast<double>(c.concordant - c.discordant) / static_cast<double>(c.n0));
  }
}

TEST(Kendall, Invariances) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto [x, y] = tied_pair(rng, 300);
    const double t = kendall(x, y);
    EXPECT_EQ(kendall(y, x), t);
    std::vector<double> fx(x.size()), gy(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      fx[i] = std::exp(x[i]) + 3.0;  // strictly increasing
      gy[i] = y[i] * y[i] * y[i] - 10.0;
    }
    EXPECT_EQ(kendall(fx, gy), t);
  }
}

TEST(Pearson, Examples) {
  const std::vector<double> x = {0, 1, 2, 5.5}, up = {1, 3, 5, 12}, down = {0, -1, -2, -5.5};
  EXPECT_NEAR(pearson(x, up), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, down), -1.0, 1e-15);
  EXPECT_NEAR(pearson(std::vector<double>{0, 1, 2}, std::vector<double>{0, 1, 3}), 0.9819805060619657, 1e-15);
  EXPECT_THROW(pearson(std::vector<double>{1, 1}, std::vector<double>{1, 2}), NumericError);
}

TEST(Pearson, MatchesDirectFormula) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<std::size_t> size(2, 1000);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = size(rng);
    std::vector<double> x(n), y(n);
    const double w = g(rng);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = g(rng) * 3.0 + 10.0;
      y[i] = w * x[i] + g(rng);
    }
    const double r = pearson(x, y);
    ASSERT_LE(std::abs(r - oracle_pearson(x, y)), 1e-12) << "trial " << trial;
    EXPECT_LE(std::abs(pearson(y, x) - r), 1e-12);
    std::vector<double> ax(n);
    for (std::size_t i = 0; i < n; ++i) ax[i] = 2.5 * x[i] - 7.0;
    EXPECT_LE(std::abs(pearson(ax, y) - r), 1e-12);
  }
}

TEST(Correlation, ConstantShiftLeavesBothUnchanged) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto [m, h] = tied_pair(rng, 200);
    std::vector<double> shifted(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) shifted[i] = m[i] + 0.731;
    EXPECT_EQ(kendall(shifted, h), kendall(m, h));
    EXPECT_LE(std::abs(pearson(shifted, h) - pearson(m, h)), 1e-12);
  }
}

TEST(Correlation, PairEnumerationSuiteIsQuick) {
  std::mt19937_64 rng(1);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 20; ++i) {
    auto [x, y] = tied_pair(rng, 1000);
    kendall(x, y);
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 1.0);
}

TEST(Series, AlignmentByIdAndValidation) {
  ScoreSeries a{"d", "m", {"x", "y", "z"}, {1, 2, 3}};
  ScoreSeries b{"d", "h", {"z", "x", "y"}, {30, 10, 20}};
  EXPECT_EQ(b.aligned_to(a.ids), (std::vector<double>{10, 20, 30}));
  EXPECT_EQ(kendall(a, b), 1.0);
  EXPECT_NEAR(pearson(a, b), 1.0, 1e-15);
  ScoreSeries missing{"d", "h", {"x", "y", "w"}, {1, 2, 3}};
  EXPECT_THROW(missing.aligned_to(a.ids), ValidationError);
  ScoreSeries dup{"d", "h", {"x", "x", "y"}, {1, 2, 3}};
  EXPECT_THROW(dup.validate(), ValidationError);
  ScoreSeries nan{"d", "h", {"x", "y", "z"}, {1, NAN, 3}};
  EXPECT_THROW(nan.validate(), ValidationError);
}

TEST(Report, Formatting) {
  EXPECT_EQ(format_scaled(0.13270), "13.270");
  EXPECT_EQ(format_scaled(1.0), "100.000");
  EXPECT_EQ(format_scaled(-0.0000001), "0.000");
  EXPECT_EQ(format_scaled(-0.5), "-50.000");
  EXPECT_EQ(format_cell(std::nullopt), "—");
  EXPECT_EQ(format_cell(std::nullopt, "n/a"), "n/a");
}

TEST(Report, BuildAndRender) {
  const std::vector<std::string> ids = {"a", "b", "c", "d"};
  ScoreSeries humans{"toy", "human", ids, {1.0, 2.0, 3.0, 4.0}};
  ScoreSeries good{"toy", "bleu1", ids, {0.1, 0.2, 0.3, 0.4}};
  ScoreSeries flat{"toy", "rouge1", ids, {0.5, 0.5, 0.5, 0.5}};
  ScoreSeries constant_sim{"toy", "IE_text", ids, {0.2, 0.2, 0.2, 0.2}};
  ScoreSeries anti_sim{"toy", "BERT_text", {"d", "c", "b", "a"}, {0.0, 0.1, 0.2, 0.3}};
  const auto r = build_report("toy", {good, flat}, {constant_sim, anti_sim}, humans, CorrelationKind::kKendall);
  EXPECT_EQ(r.sim_columns, (std::vector<std::string>{"IE_text", "BERT_text"}));
  EXPECT_EQ(*r.row("bleu1")->original, 1.0);
  EXPECT_EQ(r.augmented_cell("bleu1", "IE_text"), r.row("bleu1")->original);  // constant shift
  EXPECT_FALSE(r.row("rouge1")->original);                                    // zero variance -> n/a
  EXPECT_FALSE(r.individual_cell("IE_text"));
  EXPECT_EQ(*r.augmented_cell("rouge1", "BERT_text"), -1.0);

  const auto md = render_markdown(r);
  EXPECT_NE(md.find("segment-level kendall (tau_b)"), std::string::npos);
  EXPECT_NE(md.find("| bleu1 | 100.000 | 100.000 |"), std::string::npos) << md;
  EXPECT_NE(md.find("| rouge1 | — | — | -100.000 |"), std::string::npos) << md;
  EXPECT_NE(md.find("+IE_text"), std::string::npos);

  const auto csv = render_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "dataset,metric,variant,correlation_kind,value");
  EXPECT_NE(csv.find("toy,bleu1,original,kendall_tau_b,100.000\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("toy,rouge1,+IE_text,kendall_tau_b,n/a\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("toy,BERT_text,original,kendall_tau_b,-100.000\n"), std::string::npos) << csv;

  const auto p = build_report("toy", {good}, {}, humans, CorrelationKind::kPearson);
  EXPECT_NE(render_csv(p).find("toy,bleu1,original,pearson,100.000"), std::string::npos);
}

TEST(Histogram, Examples) {
  const std::vector<double> ones(37, 1.0);
  const auto h = histogram(ones, 0.1);
  ASSERT_EQ(h.size(), 20u);
  EXPECT_EQ(h.back().count, 37u);
  EXPECT_NEAR(h.back().lo, 0.9, 1e-12);
  EXPECT_EQ(h.back().hi, 1.0);
  std::size_t nonzero = 0;
  for (const auto& b : h) nonzero += b.count > 0;
  EXPECT_EQ(nonzero, 1u);

  const std::vector<double> two = {0.05, 0.15};
  const auto t = histogram(two, 0.1);
  std::vector<std::size_t> hit;
  for (std::size_t k = 0; k < t.size(); ++k)
    if (t[k].count) {
      EXPECT_EQ(t[k].count, 1u);
      hit.push_back(k);
    }
  ASSERT_EQ(hit.size(), 2u);
  EXPECT_EQ(hit[1], hit[0] + 1);
  EXPECT_LE(t[hit[0]].lo, 0.05);
  EXPECT_GT(t[hit[0]].hi, 0.05);

  const std::vector<double> edges = {-1.0, -0.9, 0.0, 0.5};
  const auto e = histogram(edges, 0.1);
  EXPECT_EQ(e[0].count, 1u);
  EXPECT_EQ(e[1].count, 1u);
  EXPECT_EQ(e[10].count, 1u);
  EXPECT_EQ(e[15].count, 1u);
  EXPECT_THROW(histogram(edges, 0.0), ValidationError);
}

TEST(Histogram, CountsPartitionInput) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double width : {0.1, 0.05, 0.3, 0.7, 2.0}) {
    std::vector<double> v(5000);
    for (auto& x : v) x = u(rng);
    v[0] = 1.0;
    v[1] = -1.0;
    std::size_t total = 0;
    const auto h = histogram(v, width);
    for (const auto& b : h) total += b.count;
    EXPECT_EQ(total, v.size());
    for (double x : v) {
      std::size_t holders = 0;
      for (std::size_t k = 0; k < h.size(); ++k)
        holders += (x >= h[k].lo && x < h[k].hi) || (k + 1 == h.size() && x == h[k].hi);
      EXPECT_EQ(holders, 1u) << x;
    }
  }
  const auto csv = render_histogram_csv(histogram(std::vector<double>{0.0}, 0.5), {{"metric", "IE_text"}});
  EXPECT_EQ(csv, "# metric=IE_text\nbin_lo,bin_hi,count\n-1.000000,-0.500000,0\n-0.500000,0.000000,0\n"
                 "0.000000,0.500000,1\n0.500000,1.000000,0\n");
}
