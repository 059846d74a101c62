#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "playclass/dataset_io.hpp"
#include "playclass/hungarian.hpp"
#include "playclass/numeric.hpp"

namespace playclass {

inline constexpr int kNumAlphas = 19;

/// Localization thresholds 0.05, 0.10, ..., 0.95.
inline double hota_alpha(int k) { return static_cast<double>(k + 1) / 20.0; }

struct Similarity {
  DenseMatrix sim;  // gt x pred
  int mask_pairs = 0, box_pairs = 0;
};

/// Mask IoU where both objects carry a mask, box IoU otherwise.
inline Similarity pairwise_similarity(const std::vector<const TrackedMask*>& gt,
                                      const std::vector<const TrackedMask*>& pred) {
  Similarity s;
  s.sim = DenseMatrix(static_cast<int>(gt.size()), static_cast<int>(pred.size()));
  for (std::size_t i = 0; i < gt.size(); ++i)
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const auto& g = *gt[i];
      const auto& p = *pred[j];
      if (g.mask && p.mask) {
        s.sim(static_cast<int>(i), static_cast<int>(j)) = mask_iou(*g.mask, *p.mask);
        ++s.mask_pairs;
      } else {
        s.sim(static_cast<int>(i), static_cast<int>(j)) = box_iou(g.bbox, p.bbox);
        ++s.box_pairs;
      }
    }
  return s;
}

struct AlphaScores {
  double alpha = 0;
  double det_a = 0, ass_a = 0, hota = 0;
  long tp = 0, fn = 0, fp = 0;
};

struct VideoTrackingScores {
  std::string video_id;
  int annotated_frames = 0;
  std::array<AlphaScores, kNumAlphas> per_alpha{};
  double hota = 0;
  double idf1 = 0;
  long idtp = 0, idfp = 0, idfn = 0;
  int mask_pairs = 0, box_pairs = 0;
};

struct TrackingReport {
  std::string method;
  std::vector<VideoTrackingScores> videos;
  double hota_mean = 0, hota_sd = 0;
  double idf1_mean = 0, idf1_sd = 0;
  std::string similarity;  // "mask", "bbox", "mixed" or "none"
  std::vector<std::string> warnings;
};

struct TrackingEvalConfig {
  double idf1_threshold = 0.5;
};

namespace detail {

struct FrameObjects {
  std::vector<const TrackedMask*> gt, pred;
  Similarity s;
};

inline std::vector<const TrackedMask*> sorted_by_id(std::vector<const TrackedMask*> v) {
  std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->track_id < b->track_id; });
  return v;
}

}  // namespace detail

/// HOTA and IDF1 for one video. Only frames present in `gt` are evaluated;
/// predictions on other frames are ignored.
inline VideoTrackingScores evaluate_video(const std::string& video_id, const std::vector<const TrackedMask*>& gt,
                                          const std::vector<const TrackedMask*>& pred,
                                          const TrackingEvalConfig& cfg = {}) {
  VideoTrackingScores out;
  out.video_id = video_id;
  std::map<int, detail::FrameObjects> frames;
  for (const auto* g : gt) frames[g->frame].gt.push_back(g);
  for (const auto* p : pred) {
    auto it = frames.find(p->frame);
    if (it != frames.end()) it->second.pred.push_back(p);
  }
  out.annotated_frames = static_cast<int>(frames.size());

  std::map<int, long> gt_count, pred_count;
  long n_gt = 0, n_pred = 0;
  for (auto& [f, fo] : frames) {
    fo.gt = detail::sorted_by_id(fo.gt);
    fo.pred = detail::sorted_by_id(fo.pred);
    fo.s = pairwise_similarity(fo.gt, fo.pred);
    out.mask_pairs += fo.s.mask_pairs;
    out.box_pairs += fo.s.box_pairs;
    for (const auto* g : fo.gt) ++gt_count[g->track_id];
    for (const auto* p : fo.pred) ++pred_count[p->track_id];
    n_gt += static_cast<long>(fo.gt.size());
    n_pred += static_cast<long>(fo.pred.size());
  }

  // One max-similarity matching per frame, thresholded at each alpha, so the
  // TP sets are nested and HOTA_alpha cannot rise with alpha.
  struct Match {
    int gt_id, pred_id;
    double sim;
  };
  std::vector<Match> matches;
  for (const auto& [f, fo] : frames)
    for (auto [i, j] : hungarian(fo.s.sim, true).pairs())
      if (fo.s.sim(i, j) > 0)
        matches.push_back({fo.gt[static_cast<std::size_t>(i)]->track_id, fo.pred[static_cast<std::size_t>(j)]->track_id,
                           fo.s.sim(i, j)});

  double hota_sum = 0;
  for (int k = 0; k < kNumAlphas; ++k) {
    const double alpha = hota_alpha(k);
    std::map<std::pair<int, int>, long> pair_tp;  // (gt id, pred id) -> matches
    std::vector<std::pair<int, int>> tps;
    for (const auto& m : matches)
      if (m.sim >= alpha) {
        ++pair_tp[{m.gt_id, m.pred_id}];
        tps.emplace_back(m.gt_id, m.pred_id);
      }
    AlphaScores& sc = out.per_alpha[static_cast<std::size_t>(k)];
    sc.alpha = alpha;
    sc.tp = static_cast<long>(tps.size());
    sc.fn = n_gt - sc.tp;
    sc.fp = n_pred - sc.tp;
    const long det_den = sc.tp + sc.fn + sc.fp;
    sc.det_a = det_den > 0 ? static_cast<double>(sc.tp) / static_cast<double>(det_den) : 0.0;
    double ass_sum = 0;
    for (const auto& key : tps) {
      const long tpa = pair_tp[key];
      const long fna = gt_count[key.first] - tpa;
      const long fpa = pred_count[key.second] - tpa;
      ass_sum += static_cast<double>(tpa) / static_cast<double>(tpa + fna + fpa);
    }
    sc.ass_a = sc.tp > 0 ? ass_sum / static_cast<double>(sc.tp) : 0.0;
    sc.hota = std::sqrt(sc.det_a * sc.ass_a);
    hota_sum += sc.hota;
  }
  out.hota = hota_sum / kNumAlphas;

  // IDF1: one global track-to-track matching maximizing identity-consistent
  // frame matches.
  std::vector<int> gt_ids, pred_ids;
  for (const auto& [id, n] : gt_count) gt_ids.push_back(id);
  for (const auto& [id, n] : pred_count) pred_ids.push_back(id);
  auto index_of = [](const std::vector<int>& ids, int id) {
    return static_cast<int>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
  };
  DenseMatrix overlap(static_cast<int>(gt_ids.size()), static_cast<int>(pred_ids.size()));
  for (const auto& [f, fo] : frames)
    for (std::size_t i = 0; i < fo.gt.size(); ++i)
      for (std::size_t j = 0; j < fo.pred.size(); ++j)
        if (fo.s.sim(static_cast<int>(i), static_cast<int>(j)) >= cfg.idf1_threshold)
          overlap(index_of(gt_ids, fo.gt[i]->track_id), index_of(pred_ids, fo.pred[j]->track_id)) += 1;
  const auto a = hungarian(overlap, true);
  out.idtp = std::lround(a.total);
  out.idfn = n_gt - out.idtp;
  out.idfp = n_pred - out.idtp;
  const long idf_den = 2 * out.idtp + out.idfp + out.idfn;
  out.idf1 = idf_den > 0 ? 2.0 * static_cast<double>(out.idtp) / static_cast<double>(idf_den) : 0.0;
  return out;
}

/// Per-video HOTA / IDF1 over keyframe annotations, aggregated as unweighted
/// mean +- sample SD across videos.
inline TrackingReport evaluate_tracking(const std::vector<TrackedMask>& annotations,
                                        const std::vector<TrackedMask>& predictions, const TrackingEvalConfig& cfg = {},
                                        std::string method = "") {
  TrackingReport rep;
  rep.method = std::move(method);
  std::map<std::string, std::vector<const TrackedMask*>> gt, pred;
  for (const auto& a : annotations) gt[a.video_id].push_back(&a);
  for (const auto& p : predictions) pred[p.video_id].push_back(&p);
  for (const auto& [vid, recs] : pred)
    if (!gt.count(vid)) rep.warnings.push_back("video " + vid + " has no annotated frames; excluded");
  std::vector<double> hotas, idf1s;
  int mask_pairs = 0, box_pairs = 0;
  for (const auto& [vid, g] : gt) {
    auto it = pred.find(vid);
    static const std::vector<const TrackedMask*> none;
    rep.videos.push_back(evaluate_video(vid, g, it == pred.end() ? none : it->second, cfg));
    hotas.push_back(rep.videos.back().hota);
    idf1s.push_back(rep.videos.back().idf1);
    mask_pairs += rep.videos.back().mask_pairs;
    box_pairs += rep.videos.back().box_pairs;
  }
  if (!hotas.empty()) {
    rep.hota_mean = mean(hotas);
    rep.hota_sd = sample_sd(hotas);
    rep.idf1_mean = mean(idf1s);
    rep.idf1_sd = sample_sd(idf1s);
  }
  rep.similarity = mask_pairs && box_pairs ? "mixed" : mask_pairs ? "mask" : box_pairs ? "bbox" : "none";
  return rep;
}

inline nlohmann::json tracking_report_json(const TrackingReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["similarity"] = r.similarity;
  j["HOTA"] = {{"mean", r.hota_mean}, {"sd", r.hota_sd}};
  j["IDF1"] = {{"mean", r.idf1_mean}, {"sd", r.idf1_sd}};
  j["videos"] = nlohmann::json::array();
  for (const auto& v : r.videos) {
    nlohmann::json jv{{"video_id", v.video_id},       {"annotated_frames", v.annotated_frames},
                      {"HOTA", v.hota},               {"IDF1", v.idf1},
                      {"IDTP", v.idtp},               {"IDFP", v.idfp},
                      {"IDFN", v.idfn}};
    jv["per_alpha"] = nlohmann::json::array();
    for (const auto& a : v.per_alpha)
      jv["per_alpha"].push_back(
          {{"alpha", a.alpha}, {"DetA", a.det_a}, {"AssA", a.ass_a}, {"HOTA", a.hota}, {"TP", a.tp}, {"FN", a.fn}, {"FP", a.fp}});
    j["videos"].push_back(std::move(jv));
  }
  j["warnings"] = r.warnings;
  return j;
}

}  // namespace playclass
