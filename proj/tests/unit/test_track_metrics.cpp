#include "playclass/track_metrics.hpp"

#include <gtest/gtest.h>

#include "playclass/synthetic.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

namespace playclass {
namespace {

TrackedMask box(int frame, int id, double x, double y, double w = 10, double h = 10, std::string vid = "v") {
  TrackedMask t;
  t.video_id = std::move(vid);
  t.frame = frame;
  t.track_id = id;
  t.bbox = {x, y, w, h};
  return t;
}

TEST(Similarity, BoxAndMaskIou) {
  const auto a = box(0, 1, 0, 0, 10, 10);
  const auto b = box(0, 2, 5, 0, 10, 10);
  const auto s = pairwise_similarity({&a}, {&b, &a});
  EXPECT_NEAR(s.sim(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(s.sim(0, 1), 1.0);
  EXPECT_EQ(s.box_pairs, 2);

  auto m1 = synthetic::make_record("v", 0, 1, synthetic::rasterize_disc(50, 50, 20, 20, 5));
  auto m2 = synthetic::make_record("v", 0, 2, synthetic::rasterize_disc(50, 50, 40, 40, 5));
  const auto ms = pairwise_similarity({&m1}, {&m1, &m2});
  EXPECT_EQ(ms.sim(0, 0), 1.0);
  EXPECT_EQ(ms.sim(0, 1), 0.0);
  EXPECT_EQ(ms.mask_pairs, 2);
}

TEST(TrackMetrics, PerfectTrackingScoresOne) {
  std::vector<TrackedMask> gt;
  for (int f = 0; f < 10; ++f)
    for (int id = 1; id <= 3; ++id) gt.push_back(box(f, id, 30.0 * id, f));
  const auto rep = evaluate_tracking(gt, gt);
  ASSERT_EQ(rep.videos.size(), 1u);
  EXPECT_EQ(rep.hota_mean, 1.0);
  EXPECT_EQ(rep.idf1_mean, 1.0);
  EXPECT_EQ(rep.similarity, "bbox");
  for (const auto& a : rep.videos[0].per_alpha) {
    EXPECT_EQ(a.det_a, 1.0);
    EXPECT_EQ(a.ass_a, 1.0);
  }
}

TEST(TrackMetrics, SwappedHalfKeepsDetectionLosesAssociation) {
  std::vector<TrackedMask> gt, pred;
  for (int f = 0; f < 10; ++f) {
    gt.push_back(box(f, 1, 0, 0));
    gt.push_back(box(f, 2, 50, 0));
    const bool swapped = f >= 5;
    pred.push_back(box(f, swapped ? 11 : 12, 0, 0));
    pred.push_back(box(f, swapped ? 12 : 11, 50, 0));
  }
  const auto v = evaluate_tracking(gt, pred).videos.at(0);
  const auto brute = oracle::brute_tracking(gt, pred);
  for (int k = 0; k < kNumAlphas; ++k) {
    EXPECT_EQ(v.per_alpha[static_cast<std::size_t>(k)].det_a, 1.0);
    // Each TP's pair lives 5 of 10 frames on both sides: 5 / (5 + 5 + 5).
    EXPECT_NEAR(v.per_alpha[static_cast<std::size_t>(k)].ass_a, 1.0 / 3.0, 1e-12);
  }
  EXPECT_NEAR(v.hota, std::sqrt(1.0 / 3.0), 1e-12);
  EXPECT_NEAR(v.hota, brute.hota, 1e-12);
  EXPECT_EQ(v.idtp, 10);
  EXPECT_EQ(v.idfp, 10);
  EXPECT_EQ(v.idfn, 10);
  EXPECT_DOUBLE_EQ(v.idf1, 0.5);
}

TEST(TrackMetrics, EmptyPredictionsScoreZero) {
  std::vector<TrackedMask> gt{box(0, 1, 0, 0), box(1, 1, 0, 0)};
  const auto rep = evaluate_tracking(gt, {});
  EXPECT_EQ(rep.idf1_mean, 0.0);
  EXPECT_EQ(rep.hota_mean, 0.0);
}

TEST(TrackMetrics, UnannotatedVideoExcludedWithWarning) {
  std::vector<TrackedMask> gt{box(0, 1, 0, 0)};
  std::vector<TrackedMask> pred{box(0, 1, 0, 0), box(0, 1, 0, 0, 10, 10, "other")};
  const auto rep = evaluate_tracking(gt, pred);
  EXPECT_EQ(rep.videos.size(), 1u);
  ASSERT_EQ(rep.warnings.size(), 1u);
  EXPECT_NE(rep.warnings[0].find("other"), std::string::npos);
}

TEST(TrackMetrics, AggregatesMeanAndSampleSd) {
  std::vector<TrackedMask> gt{box(0, 1, 0, 0, 10, 10, "a"), box(0, 1, 0, 0, 10, 10, "b")};
  std::vector<TrackedMask> pred{box(0, 1, 0, 0, 10, 10, "a")};
  const auto rep = evaluate_tracking(gt, pred);
  EXPECT_DOUBLE_EQ(rep.hota_mean, 0.5);
  EXPECT_DOUBLE_EQ(rep.hota_sd, std::sqrt(0.5));
  const auto j = tracking_report_json(rep);
  EXPECT_EQ(j["videos"].size(), 2u);
  EXPECT_EQ(j["videos"][0]["per_alpha"].size(), 19u);
}

TEST(TrackMetrics, MatchesBruteForceOnRandomInstances) {
  Rng rng(99);
  for (int trial = 0; trial < 150; ++trial) {
    const auto inst = oracle::random_tracking_instance(rng);
    const auto rep = evaluate_tracking(inst.gt, inst.pred);
    const auto brute = oracle::brute_tracking(inst.gt, inst.pred);
    const auto& v = rep.videos.at(0);
    for (int k = 0; k < kNumAlphas; ++k) {
      ASSERT_NEAR(v.per_alpha[static_cast<std::size_t>(k)].det_a, brute.det_a[static_cast<std::size_t>(k)], 1e-9) << trial;
      ASSERT_NEAR(v.per_alpha[static_cast<std::size_t>(k)].ass_a, brute.ass_a[static_cast<std::size_t>(k)], 1e-9) << trial;
    }
    ASSERT_NEAR(v.hota, brute.hota, 1e-9) << trial;
    ASSERT_NEAR(v.idf1, brute.idf1, 1e-9) << trial;
  }
}

TEST(TrackMetrics, PredictionIdPermutationInvariant) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = oracle::random_tracking_instance(rng);
    std::vector<int> ids;
    for (const auto& p : inst.pred) ids.push_back(p.track_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    auto perm = ids;
    rng.shuffle(perm);
    auto pred = inst.pred;
    for (auto& p : pred)
      p.track_id = 1000 + perm[static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), p.track_id) - ids.begin())];
    const auto a = evaluate_tracking(inst.gt, inst.pred);
    const auto b = evaluate_tracking(inst.gt, pred);
    ASSERT_EQ(a.hota_mean, b.hota_mean) << trial;
    ASSERT_EQ(a.idf1_mean, b.idf1_mean) << trial;
  }
}

TEST(TrackMetrics, HotaAlphaNonIncreasing) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = oracle::random_tracking_instance(rng);
    const auto v = evaluate_tracking(inst.gt, inst.pred).videos.at(0);
    for (int k = 1; k < kNumAlphas; ++k)
      ASSERT_LE(v.per_alpha[static_cast<std::size_t>(k)].hota, v.per_alpha[static_cast<std::size_t>(k - 1)].hota + 1e-12)
          << trial << " alpha " << k;
  }
}

TEST(TrackMetrics, SpuriousPredictionNeverHelps) {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = oracle::random_tracking_instance(rng);
    const auto before = evaluate_tracking(inst.gt, inst.pred);
    auto pred = inst.pred;
    const auto& anchor = inst.gt[rng.below(inst.gt.size())];
    // A false positive away from every annotated object. (One overlapping a
    // real object can be matched and legitimately raise the score.)
    auto extra = box(anchor.frame, 999, 100 + rng.uniform(0, 80), 100 + rng.uniform(0, 80), rng.uniform(5, 30),
                     rng.uniform(5, 30));
    pred.push_back(extra);
    const auto after = evaluate_tracking(inst.gt, pred);
    ASSERT_LE(after.hota_mean, before.hota_mean + 1e-12) << trial;
    ASSERT_LE(after.idf1_mean, before.idf1_mean + 1e-12) << trial;
  }
}

TEST(TrackMetrics, MaskSimilarityWithBruteForce) {
  Rng rng(3);
  std::vector<TrackedMask> gt, pred;
  for (int f = 0; f < 6; ++f)
    for (int id = 1; id <= 3; ++id) {
      auto g = synthetic::make_record("v", f, id, synthetic::rasterize_disc(80, 80, 20.0 * id, 30 + f, 6));
      auto p = synthetic::make_record("v", f, 10 + (id + f / 3) % 3,
                                      synthetic::rasterize_disc(80, 80, 20.0 * id + rng.uniform(-3, 3), 30 + f, 6));
      gt.push_back(g);
      pred.push_back(p);
    }
  const auto rep = evaluate_tracking(gt, pred);
  EXPECT_EQ(rep.similarity, "mask");
  EXPECT_NEAR(rep.hota_mean, oracle::brute_tracking(gt, pred).hota, 1e-9);
  EXPECT_NEAR(rep.idf1_mean, oracle::brute_tracking(gt, pred).idf1, 1e-9);
}

}  // namespace
}  // namespace playclass
