#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "support.hpp"

using namespace fetalbet;

namespace {

MaskVolume volume_of(const std::vector<Mask>& slices) {
  MaskVolume v;
  v.dims = {slices[0].rows(), slices[0].cols(), slices.size()};
  std::vector<Mask> copy = slices;
  v.labels = stack_slices(copy, v.dims, 2);
  return v;
}

MetricsRow row(std::string subject, std::string stack, std::size_t idx, std::string method, double d,
               std::string seq = "T2W") {
  const double j = d / (2 - d);
  return {std::move(subject), std::move(stack), idx, std::move(seq), d, j, std::move(method), false};
}

}  // namespace

TEST(EvaluatePairs, PerfectSwappedAndCrafted) {
  std::mt19937_64 rng(1);
  std::vector<Mask> a, b;
  for (int i = 0; i < 4; ++i) {
    a.push_back(fbtest::random_mask(10, 12, rng));
    b.push_back(fbtest::random_mask(10, 12, rng));
  }
  const auto va = volume_of(a), vb = volume_of(b);
  for (const auto& r : evaluate_pair(va, va, {"s", "k", "T2W", "m"})) {
    EXPECT_EQ(r.dsc, 1.0);
    EXPECT_EQ(r.iou, 1.0);
  }
  const auto ab = evaluate_pair(va, vb, {"s", "k", "T2W", "m"});
  const auto ba = evaluate_pair(vb, va, {"s", "k", "T2W", "m"});
  EXPECT_EQ(ab, ba);
  for (const auto& r : ab) EXPECT_NEAR(r.dsc, 2 * r.iou / (1 + r.iou), 1e-9);

  Mask p(1, 4), q(1, 4);
  p(0, 0) = p(0, 1) = p(0, 2) = 1;
  q(0, 1) = q(0, 2) = q(0, 3) = 1;
  const auto crafted = evaluate_pair(volume_of({p}), volume_of({q}), {"s", "k", "T2W", "m"});
  ASSERT_EQ(crafted.size(), 1u);
  EXPECT_DOUBLE_EQ(crafted[0].dsc, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(crafted[0].iou, 0.5);
}

TEST(EvaluatePairs, BothEmptyFlaggedAndMismatchNamed) {
  const auto e = volume_of({Mask(4, 4), Mask(4, 4)});
  const auto rows = evaluate_pair(e, e, {"s", "k", "DWI", "m"});
  for (const auto& r : rows) {
    EXPECT_TRUE(r.both_empty);
    EXPECT_EQ(r.dsc, 1.0);
  }
  try {
    evaluate_pair(e, volume_of({Mask(4, 5)}), {"s", "stackX", "DWI", "m"});
    FAIL();
  } catch (const ContractError& err) {
    EXPECT_NE(std::string(err.what()).find("stackX"), std::string::npos);
  }
}

TEST(Aggregate, HandComputedMeans) {
  MetricsTable t{row("s1", "a", 0, "m", 0.9), row("s1", "a", 1, "m", 0.7), row("s1", "b", 0, "m", 0.8),
                 row("s2", "c", 0, "m", 0.6), row("s2", "c", 1, "m", 1.0), row("s2", "c", 2, "m", 0.5)};
  const auto agg = aggregate(t, Unit::stack);
  auto find = [&](const std::string& g) {
    return *std::find_if(agg.rows.begin(), agg.rows.end(), [&](const AggregateRow& r) { return r.group == g; });
  };
  EXPECT_NEAR(find("s1|a").dsc.mean, 0.8, 1e-12);
  EXPECT_NEAR(find("s1|a").dsc.std, std::sqrt(0.02), 1e-12);
  EXPECT_NEAR(find("s1|b").dsc.mean, 0.8, 1e-12);
  EXPECT_NEAR(find("s2|c").dsc.mean, 0.7, 1e-12);
  EXPECT_EQ(find("s2|c").dsc.n, 3u);
  EXPECT_NEAR(find("s2|c").dsc.median, 0.6, 1e-12);
  EXPECT_NEAR(find("ALL").dsc.mean, (0.8 + 0.8 + 0.7) / 3, 1e-12);

  const auto subj = aggregate(t, Unit::subject);
  EXPECT_EQ(subj.rows.size(), 3u);
}

TEST(Aggregate, SingleRowSliceIdentityAndPermutation) {
  const auto one = aggregate({row("s", "a", 0, "m", 0.42)}, Unit::subject);
  EXPECT_DOUBLE_EQ(one.rows[0].dsc.mean, 0.42);
  EXPECT_EQ(one.rows[0].dsc.std, 0.0);

  MetricsTable t;
  for (int i = 0; i < 12; ++i) t.push_back(row("s" + std::to_string(i % 3), "k", i, "m", 0.5 + 0.04 * i));
  const auto slices = aggregate(t, Unit::slice);
  EXPECT_EQ(slices.rows.size(), t.size() + 1);
  for (const auto& r : slices.rows) EXPECT_TRUE(r.group == "ALL" || r.dsc.n == 1);

  auto shuffled = t;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(3));
  const auto a = aggregate(t, Unit::subject), b = aggregate(shuffled, Unit::subject);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_NEAR(a.rows[i].dsc.mean, b.rows[i].dsc.mean, 1e-12);
}

TEST(Aggregate, EmptyGroupsOmittedWithWarning) {
  MetricsTable t{row("s1", "a", 0, "m", 0.9)};
  auto empty = row("s2", "b", 0, "m", 1.0);
  empty.both_empty = true;
  t.push_back(empty);
  const auto agg = aggregate(t, Unit::stack, {false});
  ASSERT_EQ(agg.warnings.size(), 1u);
  EXPECT_NE(agg.warnings[0].find("s2|b"), std::string::npos);
  EXPECT_EQ(agg.rows.size(), 2u);
  EXPECT_THROW(aggregate({}, Unit::stack), ContractError);
}

TEST(TTest, MatchesReferenceImplementation) {
  std::ifstream in(std::string(FETALBET_TEST_DATA) + "/ttest_reference.json");
  ASSERT_TRUE(in);
  const auto j = json::parse(in);
  ASSERT_EQ(j.at("cases").size(), 50u);
  for (const auto& c : j.at("cases")) {
    const auto a = c.at("a").get<std::vector<double>>();
    const auto b = c.at("b").get<std::vector<double>>();
    const auto r = paired_t_test(a, b);
    EXPECT_NEAR(r.t, c.at("t").get<double>(), 1e-6 * std::max(1.0, std::abs(r.t)));
    EXPECT_NEAR(r.p, c.at("p").get<double>(), 1e-6);
  }
}

TEST(TTest, DegenerateAntisymmetricAndContracts) {
  const std::vector<double> a{0.9, 0.8, 0.85, 0.95}, b{0.88, 0.81, 0.80, 0.90};
  EXPECT_THROW(paired_t_test(a, a), DegenerateError);
  const std::vector<double> shifted{1.0, 0.9, 0.95, 1.05};
  EXPECT_THROW(paired_t_test(shifted, a), DegenerateError);
  const auto ab = paired_t_test(a, b), ba = paired_t_test(b, a);
  EXPECT_DOUBLE_EQ(ab.t, -ba.t);
  EXPECT_DOUBLE_EQ(ab.p, ba.p);
  EXPECT_THROW(paired_t_test(a, std::vector<double>{1.0, 2.0}), ContractError);
  EXPECT_THROW(paired_t_test(std::vector<double>{1.0}, std::vector<double>{2.0}), ContractError);
}

TEST(Stars, CaptionBands) {
  EXPECT_EQ(significance_stars(0.2), "ns");
  EXPECT_EQ(significance_stars(0.05), "*");
  EXPECT_EQ(significance_stars(0.0500001), "ns");
  EXPECT_EQ(significance_stars(0.01), "**");
  EXPECT_EQ(significance_stars(0.001), "***");
  EXPECT_EQ(significance_stars(0.0001), "****");
  EXPECT_EQ(significance_stars(0.0), "****");
  EXPECT_EQ(significance_stars(1.0), "ns");
  EXPECT_EQ(significance_stars(2.643e-4), "***");
  EXPECT_EQ(significance_stars(8.585e-01), "ns");
  EXPECT_EQ(significance_stars(2.250e-01), "ns");
  EXPECT_EQ(significance_stars(2.957e-08), "****");
  EXPECT_EQ(significance_stars(5.301e-06), "****");
  EXPECT_EQ(significance_stars(8.494e-04), "***");
  EXPECT_THROW(significance_stars(-0.1), ContractError);
  EXPECT_THROW(significance_stars(1.5), ContractError);
}

TEST(Compare, PerStackPairingAndDegenerate) {
  MetricsTable t;
  const double da[] = {0.90, 0.85, 0.93, 0.88}, db[] = {0.86, 0.84, 0.88, 0.80};
  for (int s = 0; s < 4; ++s)
    for (int k = 0; k < 3; ++k) {
      t.push_back(row("s" + std::to_string(s), "st", k, "A", da[s]));
      t.push_back(row("s" + std::to_string(s), "st", k, "B", db[s]));
    }
  const auto res = compare_methods(t, "A", "B", Unit::stack);
  const auto& pooled = *std::find_if(res.begin(), res.end(),
                                     [](const ComparisonResult& c) { return c.sequence == "all" && c.metric == "dsc"; });
  EXPECT_EQ(pooled.n, 4u);
  const auto ref = paired_t_test(std::vector<double>(da, da + 4), std::vector<double>(db, db + 4));
  EXPECT_NEAR(pooled.t_statistic, ref.t, 1e-12);
  EXPECT_EQ(pooled.stars, significance_stars(ref.p));

  for (auto& r : t) r.method = "A";
  auto copy = t;
  for (auto& r : copy) r.method = "A2";
  t.insert(t.end(), copy.begin(), copy.end());
  for (const auto& c : compare_methods(t, "A", "A2")) EXPECT_EQ(c.status, "degenerate");
}

TEST(Export, RoundTripAndHeaders) {
  const auto dir = fbtest::temp_dir("export");
  MetricsTable t{row("s1", "a,b", 0, "m", 0.9), row("s2", "c\"q", 3, "m", 1.0 / 3.0, "DWI")};
  t[1].both_empty = true;
  export_report(dir.string(), t, aggregate(t, Unit::stack).rows, {});
  EXPECT_EQ(read_metrics_csv((dir / "metrics_per_slice.csv").string()), t);
  std::ifstream cmp(dir / "comparisons.csv");
  std::string line, rest;
  std::getline(cmp, line);
  EXPECT_EQ(line, kComparisonHeader);
  EXPECT_FALSE(std::getline(cmp, rest));
  std::ifstream agg(dir / "metrics_aggregate.csv");
  std::getline(agg, line);
  EXPECT_EQ(line, kAggregateHeader);

  const auto dir2 = fbtest::temp_dir("export2");
  export_report(dir2.string(), t, aggregate(t, Unit::stack).rows, {});
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream f(p);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  EXPECT_EQ(slurp(dir / "metrics_aggregate.csv"), slurp(dir2 / "metrics_aggregate.csv"));
  EXPECT_THROW(write_metrics_csv(t, "/nonexistent/dir/x.csv"), IoError);
}
