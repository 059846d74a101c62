#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "playclass/dataset_io.hpp"
#include "playclass/hungarian.hpp"
#include "playclass/mask_features.hpp"
#include "playclass/track_metrics.hpp"

namespace playclass {

struct PlannerConfig {
  int expected_birds = 3;
  double d_ref = 100.0;       // px at which separation saturates the grounding score
  int grounding_frames = 125;  // first 5 s
  int chunk_len = 1500;        // 60 s at 25 fps
  int delta = 125;             // boundary search radius, frames
  double tau_match = 0.3;      // minimum mask IoU for identity transfer
};

/// Detections (or tracked masks) of one video, grouped by frame.
using FrameDetections = std::map<int, std::vector<const TrackedMask*>>;

inline FrameDetections group_by_frame(const std::vector<TrackedMask>& dets, const std::string& video_id) {
  FrameDetections out;
  for (const auto& d : dets)
    if (d.video_id == video_id) out[d.frame].push_back(&d);
  for (auto& [f, v] : out)
    std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->track_id < b->track_id; });
  return out;
}

/// Mask centroid when a non-empty mask is present, box centre otherwise.
inline Position detection_position(const TrackedMask& d) {
  if (d.mask && !d.mask->empty()) return Position::of_mask(*d.mask);
  return Position::of_box(d.bbox);
}

/// Minimum pairwise centroid distance; +inf with fewer than two detections.
inline double min_pair_distance(const std::vector<const TrackedMask*>& dets) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<Position> pos;
  for (const auto* d : dets) pos.push_back(detection_position(*d));
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = i + 1; j < pos.size(); ++j) best = std::min(best, distance(pos[i], pos[j]));
  return best;
}

struct FrameSeparationScore {
  int frame = 0;
  double min_pair_dist = 0;
  double min_confidence = 0;
  int n_detected = 0;
  double score = 0;
};

/// score = min_confidence * min(min_pair_dist / d_ref, 1). A lone detection
/// has nothing to be confused with, so its separation factor is 1.
inline FrameSeparationScore separation_score(int frame, const std::vector<const TrackedMask*>& dets,
                                             const PlannerConfig& cfg) {
  FrameSeparationScore s;
  s.frame = frame;
  s.n_detected = static_cast<int>(dets.size());
  if (dets.empty()) return s;
  s.min_confidence = 1.0;
  for (const auto* d : dets) s.min_confidence = std::min(s.min_confidence, d->confidence);
  s.min_pair_dist = min_pair_distance(dets);
  s.score = s.min_confidence * std::min(s.min_pair_dist / cfg.d_ref, 1.0);
  return s;
}

struct GroundingResult {
  int frame = 0;
  int count_used = 0;  // detection count the search was restricted to
  std::vector<FrameSeparationScore> scores;
};

/// Picks the grounding frame among the first `grounding_frames` frames.
/// Frames with exactly the expected bird count compete; if there are none,
/// frames with the largest count do. Ties go to the earliest frame.
inline GroundingResult score_grounding(const FrameDetections& frames, const PlannerConfig& cfg = {}) {
  GroundingResult out;
  int max_count = 0;
  bool has_expected = false;
  for (int f = 0; f < cfg.grounding_frames; ++f) {
    auto it = frames.find(f);
    static const std::vector<const TrackedMask*> none;
    out.scores.push_back(separation_score(f, it == frames.end() ? none : it->second, cfg));
    max_count = std::max(max_count, out.scores.back().n_detected);
    has_expected |= out.scores.back().n_detected == cfg.expected_birds;
  }
  if (max_count == 0) throw ValidationError("no groundable frame: no detections in the first " +
                                            std::to_string(cfg.grounding_frames) + " frames");
  out.count_used = has_expected ? cfg.expected_birds : max_count;
  double best = -1;
  for (const auto& s : out.scores)
    if (s.n_detected == out.count_used && s.score > best) {
      best = s.score;
      out.frame = s.frame;
    }
  return out;
}

struct ChunkPlan {
  std::string video_id;
  int grounding_frame = 0;
  int chunk_len_nominal = 1500;
  int delta = 125;
  std::vector<int> boundaries;
  std::vector<int> nominal;             // nominal frame of each boundary
  std::vector<char> fallback;           // boundary fixed at nominal (empty search window)
  std::vector<std::string> warnings;
};

/// For each nominal boundary n * chunk_len (< frame_count) picks the frame
/// within +-delta maximizing the minimum pairwise centroid distance. Frames
/// with fewer than two detections never win; ties go to the frame closest
/// to nominal, then the earliest.
inline ChunkPlan plan_boundaries(const FrameDetections& frames, int frame_count, const PlannerConfig& cfg = {}) {
  if (cfg.chunk_len <= 0) throw UsageError("chunk length must be positive");
  ChunkPlan plan;
  plan.chunk_len_nominal = cfg.chunk_len;
  plan.delta = cfg.delta;
  int prev = -1;
  for (int nominal = cfg.chunk_len; nominal < frame_count; nominal += cfg.chunk_len) {
    const int lo = std::max({nominal - cfg.delta, prev + 1, 1});
    const int hi = std::min(nominal + cfg.delta, frame_count - 1);
    int chosen = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (int f = lo; f <= hi; ++f) {
      auto it = frames.find(f);
      if (it == frames.end() || it->second.size() < 2) continue;
      const double d = min_pair_distance(it->second);
      const bool better = chosen < 0 || d > best ||
                          (d == best && std::abs(f - nominal) < std::abs(chosen - nominal));
      if (better) {
        best = d;
        chosen = f;
      }
    }
    const bool fell_back = chosen < 0;
    if (fell_back) {
      chosen = std::max(nominal, prev + 1);
      plan.warnings.push_back("no frame with two or more detections near nominal boundary " +
                              std::to_string(nominal) + "; boundary fixed at nominal");
    }
    plan.boundaries.push_back(chosen);
    plan.nominal.push_back(nominal);
    plan.fallback.push_back(fell_back ? 1 : 0);
    prev = chosen;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Point prompts

namespace detail {
// Exact 1-D squared distance transform of sampled function f (lower envelope
// of parabolas).
inline void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  const double inf = std::numeric_limits<double>::infinity();
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  auto meet = [&](int q, int p) {
    return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
  };
  int k = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    double s = meet(q, v[static_cast<std::size_t>(k)]);
    while (s <= z[static_cast<std::size_t>(k)]) {
      --k;
      s = meet(q, v[static_cast<std::size_t>(k)]);
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    d[q] = static_cast<double>(q - p) * (q - p) + f[p];
  }
}
}  // namespace detail

/// Squared Euclidean distance from every crop cell to the nearest
/// background cell centre (cells outside the crop are background). Row-major
/// over the crop; background cells get 0.
inline std::vector<double> squared_distance_transform(const BinaryMask& m) {
  // Pad by one background cell on every side.
  const int h = m.crop_height() + 2, w = m.crop_width() + 2;
  const double big = 1e12;  // exceeds any squared distance, exact in double
  std::vector<double> g(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) g[static_cast<std::size_t>(y) * w + x] = m.at_local(y - 1, x - 1) ? big : 0.0;
  std::vector<int> v;
  std::vector<double> z, col_in(static_cast<std::size_t>(h)), col_out(static_cast<std::size_t>(h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col_in[static_cast<std::size_t>(y)] = g[static_cast<std::size_t>(y) * w + x];
    detail::edt_1d(col_in.data(), col_out.data(), h, v, z);
    for (int y = 0; y < h; ++y) g[static_cast<std::size_t>(y) * w + x] = col_out[static_cast<std::size_t>(y)];
  }
  std::vector<double> row_out(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    detail::edt_1d(g.data() + static_cast<std::size_t>(y) * w, row_out.data(), w, v, z);
    std::copy(row_out.begin(), row_out.end(), g.begin() + static_cast<std::ptrdiff_t>(y) * w);
  }
  std::vector<double> out(static_cast<std::size_t>(m.crop_height()) * m.crop_width());
  for (int y = 0; y < m.crop_height(); ++y)
    for (int x = 0; x < m.crop_width(); ++x)
      out[static_cast<std::size_t>(y) * m.crop_width() + x] = g[static_cast<std::size_t>(y + 1) * w + (x + 1)];
  return out;
}

struct PointPrompt {
  int track_id = 0;
  int x = 0, y = 0;
  bool lost = false;  // empty mask: no prompt possible
};

/// Foreground cell farthest from the background; ties go to the smallest
/// (y, x). Always a foreground cell.
inline PointPrompt point_prompt(const BinaryMask& m, int track_id = 0) {
  PointPrompt p;
  p.track_id = track_id;
  if (m.empty()) {
    p.lost = true;
    return p;
  }
  const auto d = squared_distance_transform(m);
  double best = -1;
  for (int y = 0; y < m.crop_height(); ++y)
    for (int x = 0; x < m.crop_width(); ++x) {
      const double v = d[static_cast<std::size_t>(y) * m.crop_width() + x];
      if (m.at_local(y, x) && v > best) {
        best = v;
        p.x = m.crop_x() + x;
        p.y = m.crop_y() + y;
      }
    }
  return p;
}

/// Prompts for every track at one frame. Box-only or empty records are lost.
inline std::vector<PointPrompt> extract_point_prompts(const std::vector<const TrackedMask*>& final_masks) {
  std::vector<PointPrompt> out;
  for (const auto* r : final_masks) {
    if (r->mask) {
      out.push_back(point_prompt(*r->mask, r->track_id));
    } else {
      PointPrompt p;
      p.track_id = r->track_id;
      p.lost = true;
      out.push_back(p);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Identity transfer across a boundary

struct IdentityProposal {
  std::optional<int> prev_track_id;  // partner in the optimal assignment, if any
  int next_track_id = 0;
  double iou = 0;
  bool flag = false;  // iou below tau_match or no partner
};

struct BoundaryMatch {
  int boundary_frame = 0;
  std::vector<IdentityProposal> proposals;  // one per next-chunk track, by id
  std::vector<int> unmatched_prev;

  std::vector<IdentityProposal> assignment() const {
    std::vector<IdentityProposal> out;
    for (const auto& p : proposals)
      if (!p.flag) out.push_back(p);
    return out;
  }
  std::vector<int> flags() const {
    std::vector<int> out;
    for (const auto& p : proposals)
      if (p.flag) out.push_back(p.next_track_id);
    return out;
  }
};

/// Hungarian assignment of next-chunk tracks to previous-chunk tracks,
/// maximizing total IoU (mask IoU where both sides have masks, box IoU
/// otherwise). Pairs below tau are dropped and the next track flagged.
inline BoundaryMatch match_identities(int boundary_frame, const std::vector<const TrackedMask*>& prev,
                                      const std::vector<const TrackedMask*>& next, double tau = 0.3) {
  BoundaryMatch out;
  out.boundary_frame = boundary_frame;
  auto p = detail::sorted_by_id(prev);
  auto n = detail::sorted_by_id(next);
  const auto s = pairwise_similarity(p, n);
  const auto a = hungarian(s.sim, true);
  std::vector<int> partner(n.size(), -1);
  std::vector<char> prev_used(p.size(), 0);
  for (auto [i, j] : a.pairs()) partner[static_cast<std::size_t>(j)] = i;
  for (std::size_t j = 0; j < n.size(); ++j) {
    IdentityProposal prop;
    prop.next_track_id = n[j]->track_id;
    const int i = partner[j];
    if (i >= 0) {
      prop.prev_track_id = p[static_cast<std::size_t>(i)]->track_id;
      prop.iou = s.sim(i, static_cast<int>(j));
    }
    prop.flag = i < 0 || prop.iou < tau;
    if (!prop.flag) prev_used[static_cast<std::size_t>(i)] = 1;
    out.proposals.push_back(prop);
  }
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!prev_used[i]) out.unmatched_prev.push_back(p[i]->track_id);
  return out;
}

/// Matches the tracks at frame b - 1 against those at frame b for every
/// boundary b of the plan.
inline std::vector<BoundaryMatch> match_plan(const FrameDetections& tracks, const ChunkPlan& plan, double tau) {
  std::vector<BoundaryMatch> out;
  static const std::vector<const TrackedMask*> none;
  for (int b : plan.boundaries) {
    auto ip = tracks.find(b - 1);
    auto in = tracks.find(b);
    out.push_back(match_identities(b, ip == tracks.end() ? none : ip->second, in == tracks.end() ? none : in->second,
                                   tau));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json plan_json(const ChunkPlan& plan, const std::vector<std::pair<int, PointPrompt>>& prompts) {
  nlohmann::json j;
  j["video_id"] = plan.video_id;
  j["grounding_frame"] = plan.grounding_frame;
  j["chunk_len_nominal"] = plan.chunk_len_nominal;
  j["delta"] = plan.delta;
  j["boundaries"] = plan.boundaries;
  j["nominal"] = plan.nominal;
  nlohmann::json fb = nlohmann::json::array();
  for (char f : plan.fallback) fb.push_back(f != 0);
  j["fallback"] = fb;
  j["prompts"] = nlohmann::json::array();
  for (const auto& [b, p] : prompts) {
    nlohmann::json jp{{"boundary", b}, {"track_id", p.track_id}};
    if (p.lost) {
      jp["lost"] = true;
    } else {
      jp["x"] = p.x;
      jp["y"] = p.y;
    }
    j["prompts"].push_back(std::move(jp));
  }
  j["warnings"] = plan.warnings;
  return j;
}

inline ChunkPlan plan_from_json(const nlohmann::json& j) {
  ChunkPlan p;
  try {
    p.video_id = j.at("video_id").get<std::string>();
    p.grounding_frame = j.at("grounding_frame").get<int>();
    p.boundaries = j.at("boundaries").get<std::vector<int>>();
    p.chunk_len_nominal = j.value("chunk_len_nominal", 1500);
    p.delta = j.value("delta", 125);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("plan file: ") + e.what());
  }
  for (std::size_t i = 1; i < p.boundaries.size(); ++i)
    if (p.boundaries[i] <= p.boundaries[i - 1]) throw ValidationError("plan boundaries must be strictly ascending");
  return p;
}

inline nlohmann::json matches_json(const std::string& video_id, double tau, const std::vector<BoundaryMatch>& ms) {
  nlohmann::json j;
  j["video_id"] = video_id;
  j["tau_match"] = tau;
  j["boundaries"] = nlohmann::json::array();
  for (const auto& m : ms) {
    nlohmann::json jb;
    jb["boundary_frame"] = m.boundary_frame;
    jb["assignment"] = nlohmann::json::array();
    for (const auto& p : m.assignment())
      jb["assignment"].push_back({{"prev_track_id", *p.prev_track_id}, {"next_track_id", p.next_track_id}, {"iou", p.iou}});
    jb["flags"] = m.flags();
    jb["unmatched_prev"] = m.unmatched_prev;
    jb["proposals"] = nlohmann::json::array();
    for (const auto& p : m.proposals) {
      nlohmann::json jp{{"next_track_id", p.next_track_id}, {"iou", p.iou}, {"flag", p.flag}};
      jp["prev_track_id"] = p.prev_track_id ? nlohmann::json(*p.prev_track_id) : nlohmann::json(nullptr);
      jb["proposals"].push_back(std::move(jp));
    }
    j["boundaries"].push_back(std::move(jb));
  }
  return j;
}

inline std::vector<BoundaryMatch> matches_from_json(const nlohmann::json& j) {
  std::vector<BoundaryMatch> out;
  try {
    for (const auto& jb : j.at("boundaries")) {
      BoundaryMatch m;
      m.boundary_frame = jb.at("boundary_frame").get<int>();
      for (const auto& jp : jb.at("proposals")) {
        IdentityProposal p;
        p.next_track_id = jp.at("next_track_id").get<int>();
        p.iou = jp.at("iou").get<double>();
        p.flag = jp.at("flag").get<bool>();
        if (!jp.at("prev_track_id").is_null()) p.prev_track_id = jp.at("prev_track_id").get<int>();
        m.proposals.push_back(p);
      }
      m.unmatched_prev = jb.value("unmatched_prev", std::vector<int>{});
      out.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("matches file: ") + e.what());
  }
  return out;
}

}  // namespace playclass
