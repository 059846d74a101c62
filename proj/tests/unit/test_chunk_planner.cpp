#include "playclass/chunk_planner.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <functional>
#include <numeric>
#include <set>
#include <tuple>

#include "playclass/synthetic.hpp"
#include "support/planner_oracles.hpp"
#include "support/test_util.hpp"

namespace playclass {
namespace {

using namespace oracle;

TEST(Grounding, PrefersSeparatedFrame) {
  std::vector<TrackedMask> d;
  for (int k = 0; k < 3; ++k) d.push_back(det(3, k, 100.0 * k, 0, 0.9));   // A: min dist 100
  for (int k = 0; k < 3; ++k) d.push_back(det(9, k, 10.0 * k, 0, 0.95));   // B: min dist 10
  const auto g = score_grounding(group_by_frame(d, "v"));
  EXPECT_EQ(g.frame, 3);
  EXPECT_EQ(g.count_used, 3);
}

TEST(Grounding, RestrictsToFullCount) {
  std::vector<TrackedMask> d;
  for (int f = 0; f < 125; ++f)
    for (int k = 0; k < (f == 7 ? 3 : 2); ++k) d.push_back(det(f, k, (f == 7 ? 5.0 : 500.0) * k, 0));
  EXPECT_EQ(score_grounding(group_by_frame(d, "v")).frame, 7);
}

TEST(Grounding, FallsBackToMaximalCountAndErrorsWhenEmpty) {
  std::vector<TrackedMask> d{det(4, 1, 0, 0), det(4, 2, 300, 0), det(5, 1, 0, 0)};
  const auto g = score_grounding(group_by_frame(d, "v"));
  EXPECT_EQ(g.frame, 4);
  EXPECT_EQ(g.count_used, 2);
  try {
    score_grounding(group_by_frame({det(200, 1, 0, 0)}, "v"));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("no groundable frame"), std::string::npos);
  }
}

TEST(Grounding, ScoreMonotoneInSeparationAndConfidence) {
  const PlannerConfig cfg;
  double last = -1;
  for (double dist : {5.0, 20.0, 60.0, 99.0, 100.0, 400.0}) {
    const auto a = det(0, 1, 0, 0, 0.7), b = det(0, 2, dist, 0, 0.9);
    const double s = separation_score(0, {&a, &b}, cfg).score;
    EXPECT_GE(s, last);
    last = s;
  }
  last = -1;
  for (double c : {0.1, 0.4, 0.9}) {
    const auto a = det(0, 1, 0, 0, c), b = det(0, 2, 50, 0, 1.0);
    const double s = separation_score(0, {&a, &b}, cfg).score;
    EXPECT_GT(s, last);
    last = s;
  }
}

TEST(Grounding, MatchesExhaustiveOracleOnRandomStreams) {
  Rng rng(2024);
  const PlannerConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_stream(rng, 125, trial % 5 == 0 ? 0.05 : 0.9);
    if (s.dets.empty()) s.dets.push_back(det(60, 1, 0, 0));
    ASSERT_EQ(score_grounding(group_by_frame(s.dets, "v"), cfg).frame, oracle_grounding(s.dets, cfg)) << trial;
  }
}

TEST(Boundaries, PeakInsideWindowWins) {
  std::vector<TrackedMask> d;
  for (int f = 1300; f < 1700; ++f) {
    d.push_back(det(f, 1, 0, 0));
    d.push_back(det(f, 2, f == 1460 ? 80 : 50, 0));
  }
  const auto plan = plan_boundaries(group_by_frame(d, "v"), 1700);
  ASSERT_EQ(plan.boundaries, std::vector<int>{1460});
}

TEST(Boundaries, UniformDistancesPickNominal) {
  std::vector<TrackedMask> d;
  for (int f = 0; f < 3200; ++f) {
    d.push_back(det(f, 1, 0, 0));
    d.push_back(det(f, 2, 50, 0));
  }
  const auto plan = plan_boundaries(group_by_frame(d, "v"), 3200);
  EXPECT_EQ(plan.boundaries, (std::vector<int>{1500, 3000}));
  EXPECT_TRUE(plan.warnings.empty());
}

TEST(Boundaries, EmptyWindowFallsBackToNominalWithWarning) {
  const std::vector<TrackedMask> d{det(10, 1, 0, 0), det(10, 2, 40, 0)};
  const auto plan = plan_boundaries(group_by_frame(d, "v"), 2000);
  EXPECT_EQ(plan.boundaries, std::vector<int>{1500});
  EXPECT_EQ(plan.fallback, std::vector<char>{1});
  EXPECT_EQ(plan.warnings.size(), 1u);
}

TEST(Boundaries, MatchesExhaustiveOracleOnRandomStreams) {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    PlannerConfig cfg;
    if (trial % 3 == 1) {
      cfg.chunk_len = 200;  // windows overlap: the prev + 1 clamp matters
      cfg.delta = 150;
    }
    const auto s = random_stream(rng, 4700, trial % 7 == 0 ? 0.004 : 0.6);
    const auto plan = plan_boundaries(group_by_frame(s.dets, "v"), s.frame_count, cfg);
    ASSERT_EQ(plan.boundaries, oracle_boundaries(s.dets, s.frame_count, cfg)) << trial;
    for (std::size_t i = 1; i < plan.boundaries.size(); ++i) ASSERT_GT(plan.boundaries[i], plan.boundaries[i - 1]);
  }
}

TEST(Boundaries, FullLengthVideoMatchesOracle) {
  Rng rng(5);
  std::vector<TrackedMask> d;
  std::array<double, 3> x{100, 300, 500}, y{200, 200, 200};
  for (int f = 0; f < 22500; ++f)
    for (int k = 0; k < 3; ++k) {
      x[static_cast<std::size_t>(k)] = std::clamp(x[static_cast<std::size_t>(k)] + rng.uniform_int(-3, 3), 0.0, 700.0);
      y[static_cast<std::size_t>(k)] = std::clamp(y[static_cast<std::size_t>(k)] + rng.uniform_int(-3, 3), 0.0, 500.0);
      d.push_back(det(f, k + 1, x[static_cast<std::size_t>(k)], y[static_cast<std::size_t>(k)]));
    }
  const PlannerConfig cfg;
  const auto plan = plan_boundaries(group_by_frame(d, "v"), 22500, cfg);
  ASSERT_EQ(plan.boundaries.size(), 14u);
  EXPECT_EQ(plan.boundaries, oracle_boundaries(d, 22500, cfg));
  for (std::size_t i = 0; i < plan.boundaries.size(); ++i)
    EXPECT_LE(std::abs(plan.boundaries[i] - 1500 * static_cast<int>(i + 1)), 125);
}

TEST(Boundaries, TranslationInvariant) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto s = random_stream(rng, 3300, 0.5);
    const auto before = plan_boundaries(group_by_frame(s.dets, "v"), s.frame_count);
    const double dx = rng.uniform_int(-500, 500), dy = rng.uniform_int(-500, 500);
    for (auto& d : s.dets) {
      d.bbox.x += dx;
      d.bbox.y += dy;
    }
    ASSERT_EQ(plan_boundaries(group_by_frame(s.dets, "v"), s.frame_count).boundaries, before.boundaries);
  }
  // Masks translated by whole pixels as well.
  std::vector<TrackedMask> a, b;
  for (int f = 1400; f < 1600; ++f)
    for (int k = 0; k < 3; ++k) {
      auto m = synthetic::rasterize_disc(300, 400, 50 + 90 * k + (f * (k + 1)) % 37, 100 + (f * 7 * k) % 29, 6);
      a.push_back(synthetic::make_record("v", f, k, m));
      b.push_back(synthetic::make_record("v", f, k, m.translated(13, -21)));
    }
  EXPECT_EQ(plan_boundaries(group_by_frame(a, "v"), 1600).boundaries,
            plan_boundaries(group_by_frame(b, "v"), 1600).boundaries);
}

// ---------------------------------------------------------------------------
// Point prompts

TEST(PointPrompt, DistanceTransformMatchesBruteForce) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = testing::random_blob(rng, 40, 50, 300);
    ASSERT_EQ(squared_distance_transform(m), brute_sq_edt(m)) << trial;
  }
}

TEST(PointPrompt, DiscCentre) {
  for (double r : {5.0, 12.0, 30.0}) {
    const auto m = synthetic::rasterize_disc(200, 200, 97, 103, r);
    const auto p = point_prompt(m, 4);
    EXPECT_LE(std::abs(p.x - 97), 1) << r;
    EXPECT_LE(std::abs(p.y - 103), 1) << r;
    EXPECT_EQ(p.track_id, 4);
    EXPECT_FALSE(p.lost);
  }
}

TEST(PointPrompt, CrescentPointInsideMask) {
  const int H = 120, W = 120;
  const auto outer = synthetic::rasterize_disc(H, W, 60, 60, 40);
  const auto inner = synthetic::rasterize_disc(H, W, 72, 60, 36);
  std::vector<std::uint8_t> dense(static_cast<std::size_t>(H) * W, 0);
  double sx = 0, sy = 0, n = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (outer.at(y, x) && !inner.at(y, x)) {
        dense[static_cast<std::size_t>(y) * W + x] = 1;
        sx += x;
        sy += y;
        ++n;
      }
  const auto crescent = BinaryMask::from_dense(H, W, dense);
  ASSERT_FALSE(crescent.at(static_cast<int>(std::lround(sy / n)), static_cast<int>(std::lround(sx / n))));
  const auto p = point_prompt(crescent);
  EXPECT_TRUE(crescent.at(p.y, p.x));
}

TEST(PointPrompt, SinglePixelAndEmpty) {
  std::vector<std::uint8_t> dense(100, 0);
  dense[3 * 10 + 7] = 1;
  const auto p = point_prompt(BinaryMask::from_dense(10, 10, dense));
  EXPECT_EQ(p.x, 7);
  EXPECT_EQ(p.y, 3);
  EXPECT_TRUE(point_prompt(BinaryMask(10, 10)).lost);
}

TEST(PointPrompt, RandomBlobsInsideAndLexicographicTieBreak) {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const auto m = testing::random_blob(rng, 60, 60, 400);
    const auto p = point_prompt(m);
    ASSERT_TRUE(m.at(p.y, p.x)) << trial;
    const auto d = brute_sq_edt(m);
    double best = -1;
    int by = 0, bx = 0;
    for (int y = 0; y < m.crop_height(); ++y)
      for (int x = 0; x < m.crop_width(); ++x)
        if (m.at_local(y, x) && d[static_cast<std::size_t>(y) * m.crop_width() + x] > best) {
          best = d[static_cast<std::size_t>(y) * m.crop_width() + x];
          by = y;
          bx = x;
        }
    ASSERT_EQ(p.y, m.crop_y() + by) << trial;
    ASSERT_EQ(p.x, m.crop_x() + bx) << trial;
  }
}

TEST(PointPrompt, BoxOnlyRecordIsLost) {
  const auto a = det(0, 1, 0, 0);
  const auto b = synthetic::make_record("v", 0, 2, synthetic::rasterize_disc(50, 50, 25, 25, 5));
  const auto prompts = extract_point_prompts({&a, &b});
  ASSERT_EQ(prompts.size(), 2u);
  EXPECT_TRUE(prompts[0].lost);
  EXPECT_FALSE(prompts[1].lost);
  EXPECT_EQ(prompts[1].x, 25);
}

// ---------------------------------------------------------------------------
// Identity matching

std::vector<TrackedMask> disc_set(int frame, const std::vector<std::pair<int, double>>& id_x) {
  std::vector<TrackedMask> out;
  for (auto [id, x] : id_x)
    out.push_back(synthetic::make_record("v", frame, id, synthetic::rasterize_disc(100, 200, x, 50, 8)));
  return out;
}

std::vector<const TrackedMask*> ptrs(const std::vector<TrackedMask>& v) {
  std::vector<const TrackedMask*> out;
  for (const auto& r : v) out.push_back(&r);
  return out;
}

TEST(MatchIdentities, IdenticalSetsGiveIdentity) {
  const auto prev = disc_set(99, {{1, 30}, {2, 90}, {3, 150}});
  auto next = prev;
  for (auto& r : next) r.frame = 100;
  const auto m = match_identities(100, ptrs(prev), ptrs(next));
  ASSERT_EQ(m.assignment().size(), 3u);
  for (const auto& p : m.assignment()) {
    EXPECT_EQ(*p.prev_track_id, p.next_track_id);
    EXPECT_EQ(p.iou, 1.0);
  }
  EXPECT_TRUE(m.flags().empty());
  EXPECT_TRUE(m.unmatched_prev.empty());
}

TEST(MatchIdentities, SwappedPairCrosses) {
  const auto prev = disc_set(99, {{1, 30}, {2, 90}});
  const auto next = disc_set(100, {{1, 91}, {2, 31}});
  const auto m = match_identities(100, ptrs(prev), ptrs(next));
  ASSERT_EQ(m.assignment().size(), 2u);
  // Oracle: of the two permutations, the crossed one has the larger total.
  const double straight = mask_iou(*prev[0].mask, *next[0].mask) + mask_iou(*prev[1].mask, *next[1].mask);
  const double crossed = mask_iou(*prev[0].mask, *next[1].mask) + mask_iou(*prev[1].mask, *next[0].mask);
  ASSERT_GT(crossed, straight);
  EXPECT_EQ(*m.proposals[0].prev_track_id, 2);
  EXPECT_EQ(*m.proposals[1].prev_track_id, 1);
}

TEST(MatchIdentities, DisjointSetsAllFlagged) {
  const auto prev = disc_set(99, {{1, 20}, {2, 50}});
  const auto next = disc_set(100, {{5, 120}, {6, 170}});
  const auto m = match_identities(100, ptrs(prev), ptrs(next));
  EXPECT_TRUE(m.assignment().empty());
  EXPECT_EQ(m.flags(), (std::vector<int>{5, 6}));
  EXPECT_EQ(m.unmatched_prev, (std::vector<int>{1, 2}));
}

TEST(MatchIdentities, TotalIouBeatsEveryInjection) {
  Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    const int np = rng.uniform_int(1, 5), nn = rng.uniform_int(1, 5);
    std::vector<TrackedMask> prev, next;
    for (int i = 0; i < np; ++i) prev.push_back(synthetic::make_record("v", 9, i + 1, testing::random_blob(rng, 30, 30, 120)));
    for (int j = 0; j < nn; ++j) next.push_back(synthetic::make_record("v", 10, j + 1, testing::random_blob(rng, 30, 30, 120)));
    const auto m = match_identities(10, ptrs(prev), ptrs(next), 0.3);
    double total = 0;
    std::set<int> used;
    for (const auto& p : m.proposals) {
      if (!p.prev_track_id) continue;
      ASSERT_TRUE(used.insert(*p.prev_track_id).second) << "prev matched twice";
      total += p.iou;
      ASSERT_EQ(p.flag, p.iou < 0.3);
    }
    // Enumerate every injection of next tracks into prev tracks or nothing.
    double best = 0;
    std::vector<int> choice(static_cast<std::size_t>(nn), -1);
    std::function<void(int, std::vector<char>&, double)> rec = [&](int j, std::vector<char>& taken, double acc) {
      if (j == nn) {
        best = std::max(best, acc);
        return;
      }
      rec(j + 1, taken, acc);
      for (int i = 0; i < np; ++i)
        if (!taken[static_cast<std::size_t>(i)]) {
          taken[static_cast<std::size_t>(i)] = 1;
          rec(j + 1, taken, acc + mask_iou(*prev[static_cast<std::size_t>(i)].mask, *next[static_cast<std::size_t>(j)].mask));
          taken[static_cast<std::size_t>(i)] = 0;
        }
    };
    std::vector<char> taken(static_cast<std::size_t>(np), 0);
    rec(0, taken, 0.0);
    ASSERT_NEAR(total, best, 1e-12) << trial;
  }
}

TEST(PlanJson, RoundTripsBoundaries) {
  ChunkPlan p;
  p.video_id = "v1";
  p.grounding_frame = 12;
  p.boundaries = {1490, 3010};
  p.nominal = {1500, 3000};
  p.fallback = {0, 0};
  PointPrompt pp{2, 40, 41, false};
  const auto j = plan_json(p, {{1490, pp}});
  EXPECT_EQ(j["prompts"][0]["x"], 40);
  const auto back = plan_from_json(j);
  EXPECT_EQ(back.boundaries, p.boundaries);
  EXPECT_EQ(back.grounding_frame, 12);
  auto bad = j;
  bad["boundaries"] = {3010, 1490};
  EXPECT_THROW(plan_from_json(bad), ValidationError);
}

}  // namespace
}  // namespace playclass
