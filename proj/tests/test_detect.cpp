#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "trajscope/detect.hpp"
#include "trajscope/synth.hpp"

using namespace trajscope;

TEST(FlagRule, AllFourCombinations) {
  EXPECT_EQ(decide_flag(true, 1.0, 2.0), (FlagDecision{Flag::normal, false}));
  EXPECT_EQ(decide_flag(false, 1.0, 2.0), (FlagDecision{Flag::known_anomaly, false}));
  EXPECT_EQ(decide_flag(true, 3.0, 2.0), (FlagDecision{Flag::unknown_anomaly, false}));
  EXPECT_EQ(decide_flag(false, 3.0, 2.0), (FlagDecision{Flag::known_anomaly, true}));
  // The threshold itself is not exceeded.
  EXPECT_EQ(decide_flag(true, 2.0, 2.0).flag, Flag::normal);
}

TEST(FlagRule, StringRoundTrip) {
  for (auto f : {Flag::normal, Flag::known_anomaly, Flag::unknown_anomaly}) EXPECT_EQ(flag_from_string(to_string(f)), f);
  EXPECT_THROW(flag_from_string("odd"), ValidationError);
}

TEST(AnomalyMetrics, MatchHandCounts) {
  const AnomalyCounts c{27, 6, 63, 4};
  EXPECT_EQ(c.total(), 100u);
  EXPECT_DOUBLE_EQ(c.accuracy(), 90.0 / 100.0);
  EXPECT_DOUBLE_EQ(c.precision(), 27.0 / 33.0);
  EXPECT_DOUBLE_EQ(c.recall(), 27.0 / 31.0);
  const AnomalyCounts none{0, 0, 5, 0};
  EXPECT_TRUE(std::isnan(none.precision()));
  EXPECT_TRUE(std::isnan(none.recall()));
  EXPECT_DOUBLE_EQ(none.accuracy(), 1.0);
}

namespace {

Verdict verdict(std::string id, ClassLabel predicted, Flag flag) {
  Verdict v;
  v.id = std::move(id);
  v.predicted = std::move(predicted);
  v.flag = flag;
  return v;
}

}  // namespace

TEST(Evaluate, AllCorrectGivesPerfectScores) {
  const ClassCatalog cat({ClassLabel{std::int64_t{0}}, ClassLabel{std::int64_t{1}}});
  const std::map<std::string, ClassLabel> truth{
      {"a", std::int64_t{0}}, {"b", std::int64_t{1}}, {"x", std::string("anomaly:opposite")}};
  const std::vector<Verdict> v{verdict("a", std::int64_t{0}, Flag::normal), verdict("b", std::int64_t{1}, Flag::normal),
                               verdict("x", std::int64_t{1}, Flag::unknown_anomaly)};
  const auto r = evaluate(v, truth, cat);
  EXPECT_DOUBLE_EQ(r.anomaly.accuracy(), 1.0);
  EXPECT_DOUBLE_EQ(r.anomaly.precision(), 1.0);
  EXPECT_DOUBLE_EQ(r.anomaly.recall(), 1.0);
  EXPECT_DOUBLE_EQ(r.classification_accuracy(), 1.0);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{1, 0}, {0, 1}}));
}

TEST(Evaluate, ConfusionAndBinaryCountsFromMixedVerdicts) {
  const ClassCatalog cat({ClassLabel{std::string("down")}, ClassLabel{std::string("up")}});
  const std::map<std::string, ClassLabel> truth{{"n1", std::string("down")},
                                                {"n2", std::string("down")},
                                                {"n3", std::string("up")},
                                                {"a1", std::string("anomaly:speed")},
                                                {"a2", std::string("anomalous")}};
  const std::vector<Verdict> v{verdict("n1", std::string("down"), Flag::normal),
                               verdict("n2", std::string("up"), Flag::known_anomaly),
                               verdict("n3", std::string("up"), Flag::normal),
                               verdict("a1", std::string("up"), Flag::unknown_anomaly),
                               verdict("a2", std::string("down"), Flag::normal)};
  const auto r = evaluate(v, truth, cat);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{1, 1}, {0, 1}}));
  EXPECT_EQ(r.anomaly.tp, 1u);
  EXPECT_EQ(r.anomaly.fn, 1u);
  EXPECT_EQ(r.anomaly.fp, 1u);
  EXPECT_EQ(r.anomaly.tn, 2u);
  const auto j = to_json(r);
  EXPECT_EQ(j["anomaly"]["recall"], 0.5);
  EXPECT_EQ(j["confusion"][0][1], 1);
  EXPECT_TRUE(j["summary"]["K"].is_null());
}

TEST(Evaluate, RejectsIdMismatch) {
  const ClassCatalog cat({ClassLabel{std::int64_t{0}}, ClassLabel{std::int64_t{1}}});
  EXPECT_THROW(evaluate({verdict("ghost", std::int64_t{0}, Flag::normal)}, {}, cat), ValidationError);
}

TEST(Summary, CountsDurationClassesAndAnomalies) {
  auto spec = junction_scene(3, 2);
  spec.anomalies.opposite_direction = 2;
  const auto ds = synth_generate(spec);
  const auto s = summarize(ds.trajectories, ds.labels, 5);
  EXPECT_EQ(s.trajectories, 26u);
  EXPECT_EQ(s.classes, 8u);
  EXPECT_EQ(s.anomalies, 2u);
  EXPECT_EQ(s.clusters, 5u);
  double lo = 1e300, hi = -1e300;
  for (const auto& t : ds.trajectories) {
    lo = std::min(lo, t.start_time());
    hi = std::max(hi, t.end_time());
  }
  EXPECT_DOUBLE_EQ(s.duration, hi - lo);
}

class DetectFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    raster.width = raster.height = 16;
    raster.thickness = 1;
    raster.bounds = SceneBounds{};
    const auto ds = synth_generate(junction_scene(1, 3));
    trajectories = ds.trajectories;
  }

  RasterConfig raster;
  std::vector<Trajectory> trajectories;
  ClassCatalog catalog{std::vector<ClassLabel>{std::int64_t{0}, std::int64_t{1}, std::int64_t{2}}};
  CnnClassifier<float> cnn{3, 16, 4};
  Vae<float> vae{VaeDims{16, 16, 16, 4}, 5};
};

TEST_F(DetectFixture, DisallowedPredictionIsKnownAnomaly) {
  const auto all = SignalContext::all_of(catalog);
  const auto open = detect(std::span<const Trajectory>(trajectories), cnn, vae, catalog, all, 1e12, raster);
  for (const auto& v : open) EXPECT_EQ(v.flag, Flag::normal);
  for (const auto& v : open) {
    SignalContext ctx{"phase", {}};
    for (const auto& c : catalog.classes())
      if (c != v.predicted) ctx.allowed.push_back(c);
    const auto* tr = &trajectories[&v - open.data()];
    const auto low = detect(*tr, cnn, vae, catalog, ctx, 1e12, raster);
    EXPECT_EQ(low.flag, Flag::known_anomaly);
    EXPECT_FALSE(low.secondary_unknown);
    const auto high = detect(*tr, cnn, vae, catalog, ctx, 1e-6, raster);
    EXPECT_EQ(high.flag, Flag::known_anomaly);
    EXPECT_TRUE(high.secondary_unknown);
    EXPECT_EQ(detect(*tr, cnn, vae, catalog, all, 1e-6, raster).flag, Flag::unknown_anomaly);
  }
}

TEST_F(DetectFixture, ScoresMatchTheModelsDirectly) {
  const auto all = SignalContext::all_of(catalog);
  const auto v = detect(std::span<const Trajectory>(trajectories), cnn, vae, catalog, all, 100.0, raster, 4, 9);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto img = rasterize(trajectories[i], raster);
    EXPECT_EQ(v[i].loss, vae.reconstruction_loss(img, 4, 9));
    EXPECT_EQ(v[i].confidence, cnn.classify(img).confidence);
    EXPECT_EQ(v[i].id, trajectories[i].id());
  }
  const auto csv = verdicts_to_csv(v);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "id,loss,delta,flag");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), v.size() + 1);
  const auto back = verdicts_from_json(verdicts_to_json(v));
  ASSERT_EQ(back.size(), v.size());
  EXPECT_EQ(back[3].loss, v[3].loss);
  EXPECT_EQ(back[3].predicted, v[3].predicted);
}

TEST_F(DetectFixture, ValidatesContextAndResolution) {
  SignalContext bad{"p", {ClassLabel{std::string("nope")}}};
  EXPECT_THROW(detect(trajectories[0], cnn, vae, catalog, bad, 1.0, raster), ValidationError);
  EXPECT_THROW(detect(trajectories[0], cnn, vae, catalog, SignalContext{"p", {}}, 1.0, raster), ValidationError);
  auto wide = raster;
  wide.width = wide.height = 24;
  EXPECT_THROW(detect(trajectories[0], cnn, vae, catalog, SignalContext::all_of(catalog), 1.0, wide), ValidationError);
  EXPECT_THROW(detect(trajectories[0], cnn, vae, catalog, SignalContext::all_of(catalog), 0.0, raster), ValidationError);
}
