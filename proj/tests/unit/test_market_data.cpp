#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "magnet/market_data.hpp"
#include "test_util.hpp"

namespace magnet {
namespace {

using testing::TempDir;

std::filesystem::path write_csv(const TempDir& dir, const std::string& text, const std::string& name = "prices.csv") {
  const auto path = dir.path() / name;
  std::ofstream(path) << text;
  return path;
}

const char* kHeader = "date,ticker,open,high,low,close,volume\n";

TEST(LoadPanel, LongFormatCsv) {
  TempDir dir("load");
  std::string text = kHeader;
  for (const char* date : {"2021-01-04", "2021-01-05", "2021-01-06"}) {
    text += std::string(date) + ",BBB,10,11,9,10.5,1000\n";
    text += std::string(date) + ",AAA,20,21,19,20.5,2000\n";
  }
  const MarketPanel p = load_panel(write_csv(dir, text));
  EXPECT_EQ(p.tickers, (std::vector<std::string>{"AAA", "BBB"}));
  EXPECT_EQ(p.features.shape(), (Shape{2, 3, 5}));
  EXPECT_EQ(p.feature_names, (std::vector<std::string>{"open", "high", "low", "close", "volume"}));
  EXPECT_EQ(p.closes.at({0, 1}), 20.5);
  EXPECT_EQ(p.features.at({1, 2, 4}), 1000.0);
}

TEST(LoadPanel, SelectsFeatureColumns) {
  TempDir dir("columns");
  const std::string text = std::string(kHeader) + "2021-01-04,AAA,1,2,0.5,1.5,7\n2021-01-05,AAA,1,2,0.5,1.6,8\n";
  LoadOptions opt;
  opt.feature_columns = {"volume", "close"};
  const MarketPanel p = load_panel(write_csv(dir, text), opt);
  EXPECT_EQ(p.features.values(), (std::vector<double>{7, 1.5, 8, 1.6}));
  opt.feature_columns = {"rsi"};
  EXPECT_THROW(load_panel(write_csv(dir, text), opt), PanelError);
}

TEST(LoadPanel, IntersectionDropsPartialDates) {
  TempDir dir("intersect");
  const std::string text = std::string(kHeader) +
                           "2021-01-04,AAA,1,1,1,1,1\n2021-01-04,BBB,1,1,1,1,1\n"
                           "2021-01-05,AAA,1,1,1,2,1\n"
                           "2021-01-06,AAA,1,1,1,3,1\n2021-01-06,BBB,1,1,1,4,1\n";
  const MarketPanel p = load_panel(write_csv(dir, text));
  EXPECT_EQ(p.dates, (std::vector<std::string>{"2021-01-04", "2021-01-06"}));
}

TEST(LoadPanel, ForwardFillCopiesPreviousDay) {
  TempDir dir("ffill");
  const std::string text = std::string(kHeader) +
                           "2021-01-04,AAA,1,1,1,1,1\n2021-01-04,BBB,1,1,1,5,1\n"
                           "2021-01-05,AAA,1,1,1,2,1\n"
                           "2021-01-06,AAA,1,1,1,3,1\n2021-01-06,BBB,1,1,1,4,1\n";
  LoadOptions opt;
  opt.missing = MissingPolicy::kForwardFill;
  const MarketPanel p = load_panel(write_csv(dir, text), opt);
  EXPECT_EQ(p.days(), 3u);
  EXPECT_EQ(p.closes.at({1, 1}), 5.0);
}

TEST(LoadPanel, RejectsMalformedInput) {
  TempDir dir("bad");
  const std::string row = "2021-01-04,AAA,1,1,1,1,1\n";
  EXPECT_THROW(load_panel(write_csv(dir, std::string(kHeader) + row + row)), PanelError);  // duplicate
  EXPECT_THROW(load_panel(write_csv(dir, std::string(kHeader) + "2021-13-04,AAA,1,1,1,1,1\n")), PanelError);
  EXPECT_THROW(load_panel(write_csv(dir, std::string(kHeader) + "2021-01-04,AAA,1,1,1,-1,1\n")), PanelError);
  EXPECT_THROW(load_panel(write_csv(dir, std::string(kHeader) + "2021-01-04,AAA,1,1,1,x,1\n")), PanelError);
  EXPECT_THROW(load_panel(write_csv(dir, std::string(kHeader) + "2021-01-04,AAA,1,1,1\n")), PanelError);
  EXPECT_THROW(load_panel(write_csv(dir, "date,ticker,close\n2021-01-04,AAA,1\n")), PanelError);
  EXPECT_THROW(load_panel(write_csv(dir, kHeader)), PanelError);
  EXPECT_THROW(load_panel(dir.path() / "missing.csv"), PanelError);
}

TEST(MakeLabels, DirectionOfNextClose) {
  const Tensor y = make_labels(Tensor::matrix(2, 4, {1, 2, 2, 1, 5, 4, 6, 7}));
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  EXPECT_EQ(y.values(), (std::vector<double>{1, 0, 0, 0, 1, 1}));  // ties count as down
  EXPECT_THROW(make_labels(Tensor::matrix(1, 1, {1})), ShapeError);
}

TEST(SplitBounds, FloorsValAndTest) {
  const SplitBounds b = split_bounds(10, SplitSpec{});
  EXPECT_EQ(b.train_end, 7u);
  EXPECT_EQ(b.val_end, 8u);
  EXPECT_EQ(b.total, 10u);
  const SplitBounds c = split_bounds(15, SplitSpec{});
  EXPECT_EQ(c.train_end, 11u);  // val 1, test 3, remainder to training
  EXPECT_EQ(c.val_end, 12u);
  EXPECT_THROW(split_bounds(5, SplitSpec{}), PanelError);
  EXPECT_THROW(split_bounds(100, SplitSpec{0.5, 0.1, 0.1}), std::invalid_argument);
}

TEST(Normalize, ZeroMeanUnitStdPerFeature) {
  Rng rng(1);
  MarketPanel p = synth_panel(SynthSpec{3, 20, 2, 1, 0.05, 0.01}).panel;
  for (double& v : p.features.mutable_data()) v = 3.0 + 2.0 * v;
  const MarketPanel z = normalize_panel(p, NormalizationPooling::kFeature);
  for (std::size_t k = 0; k < 2; ++k) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t d = 0; d < 20; ++d) mean += z.features.at({i, d, k});
    mean /= 60.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t d = 0; d < 20; ++d) sq += std::pow(z.features.at({i, d, k}) - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / 60.0, 1.0, 1e-12);
  }
  EXPECT_EQ(z.closes, p.closes);
}

TEST(Normalize, ConstantFeatureBecomesZero) {
  MarketPanel p = synth_panel(SynthSpec{2, 10, 1, 1, 0.05, 0.01}).panel;
  for (double& v : p.features.mutable_data()) v = 4.25;
  for (auto pooling : {NormalizationPooling::kFeature, NormalizationPooling::kStockFeature}) {
    const MarketPanel z = normalize_panel(p, pooling);
    for (double v : z.features.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Normalize, StockFeaturePoolingIsPerStock) {
  MarketPanel p = synth_panel(SynthSpec{2, 10, 1, 1, 0.05, 0.01}).panel;
  for (std::size_t d = 0; d < 10; ++d) p.features.at({1, d, 0}) += 100.0;
  const MarketPanel z = normalize_panel(p, NormalizationPooling::kStockFeature);
  for (std::size_t i = 0; i < 2; ++i) {
    double mean = 0.0;
    for (std::size_t d = 0; d < 10; ++d) mean += z.features.at({i, d, 0});
    EXPECT_NEAR(mean / 10.0, 0.0, 1e-12);
  }
}

TEST(SplitAndNormalize, SplitsAreChronological) {
  const MarketPanel p = synth_panel(SynthSpec{2, 50, 2, 3, 0.05, 0.01}).panel;
  const PanelSplits s = split_and_normalize(p, SplitSpec{});
  EXPECT_EQ(s.train.days(), 35u);
  EXPECT_EQ(s.val.days(), 5u);
  EXPECT_EQ(s.test.days(), 10u);
  EXPECT_EQ(s.val.dates.front(), p.dates[35]);
  EXPECT_EQ(s.test.dates.back(), p.dates.back());
}

TEST(Windows, EndsFeaturesAndLabels) {
  const MarketPanel p = synth_panel(SynthSpec{2, 10, 3, 3, 0.05, 0.01}).panel;
  const auto ends = window_ends(p, 4);
  EXPECT_EQ(ends.front(), 3u);
  EXPECT_EQ(ends.back(), 8u);
  EXPECT_EQ(ends.size(), 6u);
  const Tensor x = window_features(p, 5, 4);
  EXPECT_EQ(x.shape(), (Shape{2, 4, 3}));
  EXPECT_EQ(x.at({1, 0, 2}), p.features.at({1, 2, 2}));
  EXPECT_EQ(x.at({1, 3, 2}), p.features.at({1, 5, 2}));
  const auto y = next_day_labels(p, 5);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(y[i], p.closes.at({i, 6}) > p.closes.at({i, 5}) ? 1 : 0);
  EXPECT_TRUE(window_ends(p, 10).empty());
}

TEST(Synth, DeterministicPerSeed) {
  const SynthPanel a = synth_panel(SynthSpec{});
  const SynthPanel b = synth_panel(SynthSpec{});
  EXPECT_EQ(a.panel.features, b.panel.features);
  EXPECT_EQ(a.panel.closes, b.panel.closes);
  SynthSpec other;
  other.seed = 8;
  EXPECT_NE(synth_panel(other).panel.features, a.panel.features);
}

TEST(Synth, ZeroNoiseFollowsRuleExactly) {
  SynthSpec spec;
  spec.noise = 0.0;
  const SynthPanel s = synth_panel(spec);
  EXPECT_EQ(s.rule_accuracy, 1.0);
  const Tensor y = make_labels(s.panel.closes);
  for (std::size_t i = 0; i < spec.stocks; ++i)
    for (std::size_t d = 0; d + 1 < spec.days; ++d) {
      double score = 0.0;
      for (std::size_t k = 0; k < spec.features; ++k) score += s.weights[k] * s.panel.features.at({i, d, k});
      EXPECT_EQ(y.at({i, d}), score > s.threshold ? 1.0 : 0.0);
    }
}

TEST(Synth, LabelsAreBalancedAndRuleIsStrong) {
  const SynthPanel s = synth_panel(SynthSpec{});
  EXPECT_GE(s.up_fraction, 0.4);
  EXPECT_LE(s.up_fraction, 0.6);
  EXPECT_GE(s.rule_accuracy, 0.9);
  double norm = 0.0;
  for (double w : s.weights) norm += w * w;
  EXPECT_NEAR(norm, 1.0, 1e-12);
}

TEST(PanelManifest, SaveLoadRoundTrip) {
  TempDir dir("manifest");
  const SynthSpec spec{3, 12, 2, 5, 0.05, 0.01};
  const SynthPanel s = synth_panel(spec);
  const auto manifest = save_panel(s.panel, dir.path(), "panel", synth_metadata_json(spec, s));
  const PanelManifest m = read_manifest(manifest);
  EXPECT_EQ(m.stocks, 3u);
  EXPECT_EQ(m.days, 12u);
  EXPECT_EQ(m.checksum.rfind("fnv1a64:", 0), 0u);
  EXPECT_EQ(m.checksum.size(), 8u + 16u);
  const MarketPanel back = load_panel_manifest(manifest);
  EXPECT_EQ(back.tickers, s.panel.tickers);
  EXPECT_EQ(back.dates, s.panel.dates);
  EXPECT_EQ(back.features, s.panel.features);
  EXPECT_EQ(back.closes, s.panel.closes);
}

TEST(PanelManifest, DetectsTamperedCsv) {
  TempDir dir("tamper");
  const auto manifest = save_panel(synth_panel(SynthSpec{2, 8, 2, 5, 0.05, 0.01}).panel, dir.path());
  {
    std::ofstream(dir.path() / "panel.csv", std::ios::app) << "\n";
  }
  EXPECT_THROW(load_panel_manifest(manifest), PanelError);
}

TEST(MarketPanel, ValidateCatchesBrokenInvariants) {
  MarketPanel p = synth_panel(SynthSpec{2, 5, 1, 1, 0.05, 0.01}).panel;
  EXPECT_NO_THROW(p.validate());
  MarketPanel unsorted = p;
  std::swap(unsorted.dates[0], unsorted.dates[1]);
  EXPECT_THROW(unsorted.validate(), PanelError);
  MarketPanel bad_close = p;
  bad_close.closes[0] = 0.0;
  EXPECT_THROW(bad_close.validate(), PanelError);
  EXPECT_THROW(p.slice_days(3, 3), PanelError);
  EXPECT_EQ(p.slice_days(1, 3).dates, (std::vector<std::string>{p.dates[1], p.dates[2]}));
}

}  // namespace
}  // namespace magnet
