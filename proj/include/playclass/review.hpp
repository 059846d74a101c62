#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "playclass/chunk_planner.hpp"
#include "playclass/dataset_io.hpp"

namespace playclass {

// ---------------------------------------------------------------------------
// PNG (8-bit grayscale)

namespace detail {
inline void put_be32(std::string& out, std::uint32_t v) {
  out += static_cast<char>((v >> 24) & 0xff);
  out += static_cast<char>((v >> 16) & 0xff);
  out += static_cast<char>((v >> 8) & 0xff);
  out += static_cast<char>(v & 0xff);
}

inline void png_chunk(std::string& out, const char* type, const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_be32(out, static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                                                 static_cast<uInt>(body.size()))));
}
}  // namespace detail

inline std::string encode_png_gray(int width, int height, const std::vector<std::uint8_t>& pixels) {
  if (width <= 0 || height <= 0 || pixels.size() != static_cast<std::size_t>(width) * height)
    throw ValidationError("PNG: bad image size");
  std::string raw;
  raw.reserve(static_cast<std::size_t>(width + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw += '\0';  // filter: none
    raw.append(reinterpret_cast<const char*>(pixels.data()) + static_cast<std::size_t>(y) * width,
               static_cast<std::size_t>(width));
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::string z(len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &len, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw ValidationError("PNG: zlib compression failed");
  z.resize(len);
  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr += static_cast<char>(8);  // bit depth
  ihdr += static_cast<char>(0);  // grayscale
  ihdr += std::string(3, '\0');
  detail::png_chunk(png, "IHDR", ihdr);
  detail::png_chunk(png, "IDAT", z);
  detail::png_chunk(png, "IEND", "");
  return png;
}

/// Placeholder crop for a record when no video frames are available: the
/// mask in white on black (or the box outline for box-only records), with a
/// few pixels of margin.
inline std::string render_placeholder_crop(const TrackedMask& r, int margin = 4) {
  const Box b = r.mask && !r.mask->empty() ? r.mask->bounds() : r.bbox;
  const int x0 = static_cast<int>(std::floor(b.x)) - margin, y0 = static_cast<int>(std::floor(b.y)) - margin;
  const int w = std::max(1, static_cast<int>(std::ceil(b.w)) + 2 * margin);
  const int h = std::max(1, static_cast<int>(std::ceil(b.h)) + 2 * margin);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool on;
      if (r.mask && !r.mask->empty()) {
        on = r.mask->at(y0 + y, x0 + x);
      } else {
        const bool inside_x = x >= margin && x < w - margin, inside_y = y >= margin && y < h - margin;
        on = inside_x && inside_y && (x == margin || x == w - margin - 1 || y == margin || y == h - margin - 1);
      }
      px[static_cast<std::size_t>(y) * w + x] = on ? 255 : 0;
    }
  return encode_png_gray(w, h, px);
}

// ---------------------------------------------------------------------------
// Review manifest

inline constexpr int kReviewSchemaVersion = 1;

struct CropRef {
  std::string path;  // relative to the review directory
  bool missing = false;
};

struct ReviewProposal {
  std::optional<int> prev_track_id;
  int next_track_id = 0;
  double iou = 0;
  bool flag = false;
  CropRef prev_crop, next_crop;
};

struct ReviewBoundary {
  int boundary_frame = 0;
  std::vector<ReviewProposal> proposals;
  std::vector<int> unmatched_prev;
};

struct ReviewManifest {
  std::string video_id;
  double tau_match = 0.3;
  std::vector<ReviewBoundary> boundaries;
};

inline nlohmann::json manifest_json(const ReviewManifest& m) {
  nlohmann::json j;
  j["schema_version"] = kReviewSchemaVersion;
  j["video_id"] = m.video_id;
  j["tau_match"] = m.tau_match;
  j["boundaries"] = nlohmann::json::array();
  for (const auto& b : m.boundaries) {
    nlohmann::json jb;
    jb["boundary_frame"] = b.boundary_frame;
    jb["unmatched_prev"] = b.unmatched_prev;
    jb["proposals"] = nlohmann::json::array();
    for (const auto& p : b.proposals) {
      nlohmann::json jp;
      jp["prev_track_id"] = p.prev_track_id ? nlohmann::json(*p.prev_track_id) : nlohmann::json(nullptr);
      jp["next_track_id"] = p.next_track_id;
      jp["iou"] = p.iou;
      jp["flag"] = p.flag;
      jp["crops"] = {{"prev", p.prev_crop.path}, {"next", p.next_crop.path}};
      jp["crop_missing"] = {{"prev", p.prev_crop.missing}, {"next", p.next_crop.missing}};
      jb["proposals"].push_back(std::move(jp));
    }
    j["boundaries"].push_back(std::move(jb));
  }
  return j;
}

/// Parses and validates a review manifest; errors name the offending field.
inline ReviewManifest manifest_from_json(const nlohmann::json& j) {
  auto need = [](const nlohmann::json& o, const char* key, const std::string& where) -> const nlohmann::json& {
    if (!o.is_object() || !o.contains(key)) throw ValidationError("manifest: missing field " + where + key);
    return o.at(key);
  };
  ReviewManifest m;
  try {
    const int version = need(j, "schema_version", "").get<int>();
    if (version != kReviewSchemaVersion)
      throw ValidationError("manifest: unsupported schema_version " + std::to_string(version));
    m.video_id = need(j, "video_id", "").get<std::string>();
    m.tau_match = need(j, "tau_match", "").get<double>();
    const auto& bs = need(j, "boundaries", "");
    if (!bs.is_array()) throw ValidationError("manifest: field boundaries must be an array");
    for (std::size_t i = 0; i < bs.size(); ++i) {
      const std::string where = "boundaries[" + std::to_string(i) + "].";
      ReviewBoundary b;
      b.boundary_frame = need(bs[i], "boundary_frame", where).get<int>();
      b.unmatched_prev = bs[i].value("unmatched_prev", std::vector<int>{});
      const auto& ps = need(bs[i], "proposals", where);
      for (std::size_t k = 0; k < ps.size(); ++k) {
        const std::string pw = where + "proposals[" + std::to_string(k) + "].";
        ReviewProposal p;
        const auto& prev = need(ps[k], "prev_track_id", pw);
        if (!prev.is_null()) p.prev_track_id = prev.get<int>();
        p.next_track_id = need(ps[k], "next_track_id", pw).get<int>();
        p.iou = need(ps[k], "iou", pw).get<double>();
        p.flag = need(ps[k], "flag", pw).get<bool>();
        const auto& crops = need(ps[k], "crops", pw);
        p.prev_crop.path = need(crops, "prev", pw + "crops.").get<std::string>();
        p.next_crop.path = need(crops, "next", pw + "crops.").get<std::string>();
        if (ps[k].contains("crop_missing")) {
          p.prev_crop.missing = ps[k]["crop_missing"].value("prev", false);
          p.next_crop.missing = ps[k]["crop_missing"].value("next", false);
        }
        b.proposals.push_back(std::move(p));
      }
      m.boundaries.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  return m;
}

/// Writes review/manifest.json and review/crops/*.png under `review_dir`.
/// Crops come from `crop_source` when it holds a file of the same name,
/// otherwise a placeholder is rendered from the record; a record absent at
/// the needed frame marks the crop missing.
inline ReviewManifest export_review_bundle(const std::filesystem::path& review_dir, const std::string& video_id,
                                           const FrameDetections& tracks, const std::vector<BoundaryMatch>& matches,
                                           double tau, const std::filesystem::path& crop_source = {}) {
  namespace fs = std::filesystem;
  ReviewManifest m;
  m.video_id = video_id;
  m.tau_match = tau;
  fs::create_directories(review_dir / "crops");
  auto crop_for = [&](int frame, std::optional<int> track, const std::string& side, int boundary) {
    CropRef ref;
    const std::string name = "b" + std::to_string(boundary) + "_" + side + "_t" +
                             (track ? std::to_string(*track) : std::string("none")) + ".png";
    ref.path = "crops/" + name;
    const TrackedMask* rec = nullptr;
    if (track)
      if (auto it = tracks.find(frame); it != tracks.end())
        for (const auto* r : it->second)
          if (r->track_id == *track) rec = r;
    if (!crop_source.empty() && fs::exists(crop_source / name)) {
      fs::copy_file(crop_source / name, review_dir / ref.path, fs::copy_options::overwrite_existing);
    } else if (rec) {
      write_file_atomic(review_dir / ref.path, render_placeholder_crop(*rec));
    } else {
      ref.missing = true;
    }
    return ref;
  };
  for (const auto& bm : matches) {
    ReviewBoundary b;
    b.boundary_frame = bm.boundary_frame;
    b.unmatched_prev = bm.unmatched_prev;
    for (const auto& p : bm.proposals) {
      ReviewProposal rp;
      rp.prev_track_id = p.prev_track_id;
      rp.next_track_id = p.next_track_id;
      rp.iou = p.iou;
      rp.flag = p.flag;
      rp.prev_crop = crop_for(bm.boundary_frame - 1, p.prev_track_id, "prev", bm.boundary_frame);
      rp.next_crop = crop_for(bm.boundary_frame, p.next_track_id, "next", bm.boundary_frame);
      b.proposals.push_back(std::move(rp));
    }
    m.boundaries.push_back(std::move(b));
  }
  write_file_atomic(review_dir / "manifest.json", manifest_json(m).dump(2) + "\n");
  return m;
}

// ---------------------------------------------------------------------------
// Corrections
//
// Boundaries are applied in ascending frame order. The edits of a boundary
// rename track ids, as they stand after all earlier boundaries, in every
// frame from that boundary on; the net effect on a frame is the composition
// of all maps at or before it. Boundary 0 may carry the initial mapping of
// tracker ids to protocol bird ids.

enum class Anomaly { Lost, Merged, Spurious };

inline const char* anomaly_name(Anomaly a) {
  switch (a) {
    case Anomaly::Lost: return "lost";
    case Anomaly::Merged: return "merged";
    case Anomaly::Spurious: return "spurious";
  }
  return "lost";
}

inline Anomaly parse_anomaly(const std::string& s) {
  if (s == "lost") return Anomaly::Lost;
  if (s == "merged") return Anomaly::Merged;
  if (s == "spurious") return Anomaly::Spurious;
  throw ValidationError("unknown anomaly kind '" + s + "' (expected lost, merged or spurious)");
}

struct BoundaryCorrection {
  int boundary_frame = 0;
  std::vector<std::pair<int, int>> edits;          // (track_id, bird_id)
  std::vector<std::pair<int, Anomaly>> anomalies;  // (track_id, kind)
};

struct Corrections {
  std::string video_id;
  std::vector<BoundaryCorrection> boundaries;
};

inline nlohmann::json corrections_json(const Corrections& c) {
  nlohmann::json j;
  j["video_id"] = c.video_id;
  j["corrections"] = nlohmann::json::array();
  for (const auto& b : c.boundaries) {
    nlohmann::json jb;
    jb["boundary_frame"] = b.boundary_frame;
    jb["edits"] = nlohmann::json::array();
    for (auto [t, bird] : b.edits) jb["edits"].push_back({{"track_id", t}, {"bird_id", bird}});
    jb["anomalies"] = nlohmann::json::array();
    for (auto [t, a] : b.anomalies) jb["anomalies"].push_back({{"track_id", t}, {"kind", anomaly_name(a)}});
    j["corrections"].push_back(std::move(jb));
  }
  return j;
}

inline Corrections corrections_from_json(const nlohmann::json& j) {
  Corrections c;
  try {
    c.video_id = j.at("video_id").get<std::string>();
    for (const auto& jb : j.at("corrections")) {
      BoundaryCorrection b;
      b.boundary_frame = jb.at("boundary_frame").get<int>();
      for (const auto& e : jb.value("edits", nlohmann::json::array()))
        b.edits.emplace_back(e.at("track_id").get<int>(), e.at("bird_id").get<int>());
      for (const auto& a : jb.value("anomalies", nlohmann::json::array()))
        b.anomalies.emplace_back(a.at("track_id").get<int>(), parse_anomaly(a.at("kind").get<std::string>()));
      c.boundaries.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("corrections file: ") + e.what());
  }
  return c;
}

/// Corrections accepting every proposal as is: one entry per boundary with
/// no edits.
inline Corrections corrections_from_manifest(const ReviewManifest& m) {
  Corrections c;
  c.video_id = m.video_id;
  for (const auto& b : m.boundaries) c.boundaries.push_back({b.boundary_frame, {}, {}});
  return c;
}

struct CorrectionResult {
  std::vector<TrackedMask> tracks;
  std::vector<std::string> warnings;
};

/// Applies corrections to the tracks of one video (records of other videos
/// pass through). Record order is preserved. `plan_boundaries` lists the legal boundary frames; 0 is
/// always legal.
inline CorrectionResult apply_corrections(std::vector<TrackedMask> tracks, const Corrections& corr,
                                          const std::vector<int>& plan_boundaries) {
  CorrectionResult out;
  std::set<int> legal(plan_boundaries.begin(), plan_boundaries.end());
  legal.insert(0);
  auto steps = corr.boundaries;
  std::stable_sort(steps.begin(), steps.end(),
                   [](const auto& a, const auto& b) { return a.boundary_frame < b.boundary_frame; });
  for (std::size_t i = 1; i < steps.size(); ++i)
    if (steps[i].boundary_frame == steps[i - 1].boundary_frame)
      throw ValidationError("corrections list boundary " + std::to_string(steps[i].boundary_frame) + " twice");

  std::vector<char> dropped(tracks.size(), 0);
  for (const auto& step : steps) {
    const int b = step.boundary_frame;
    if (!legal.count(b)) throw ValidationError("correction for boundary " + std::to_string(b) + " not in the plan");
    const auto next_it = legal.upper_bound(b);
    const int chunk_end = next_it == legal.end() ? std::numeric_limits<int>::max() : *next_it;
    // Ids present in the chunk that starts at this boundary.
    std::set<int> present;
    for (std::size_t i = 0; i < tracks.size(); ++i)
      if (!dropped[i] && tracks[i].video_id == corr.video_id && tracks[i].frame >= b && tracks[i].frame < chunk_end)
        present.insert(tracks[i].track_id);

    std::map<int, int> remap;
    std::map<int, int> bird_owner;
    for (auto [t, bird] : step.edits) {
      if (!present.count(t))
        throw ValidationError("boundary " + std::to_string(b) + ": edit references unknown track " + std::to_string(t));
      if (remap.count(t))
        throw ValidationError("boundary " + std::to_string(b) + ": track " + std::to_string(t) + " edited twice");
      if (auto it = bird_owner.find(bird); it != bird_owner.end())
        throw ValidationError("boundary " + std::to_string(b) + ": conflicting edits, tracks " +
                              std::to_string(it->second) + " and " + std::to_string(t) + " both mapped to bird " +
                              std::to_string(bird));
      remap[t] = bird;
      bird_owner[bird] = t;
    }
    std::set<int> spurious;
    for (auto [t, kind] : step.anomalies) {
      if (!present.count(t))
        throw ValidationError("boundary " + std::to_string(b) + ": anomaly references unknown track " +
                              std::to_string(t));
      if (kind == Anomaly::Merged)
        throw ValidationError("boundary " + std::to_string(b) + ": track " + std::to_string(t) +
                              " marked merged; merged masks need re-segmentation, which is not supported");
      if (kind == Anomaly::Spurious) spurious.insert(t);
      if (kind == Anomaly::Lost) out.warnings.push_back("boundary " + std::to_string(b) + ": track " + std::to_string(t) + " lost");
    }
    // An unedited present id keeping its number must not collide with a new one.
    for (int t : present)
      if (!remap.count(t) && !spurious.count(t))
        if (auto it = bird_owner.find(t); it != bird_owner.end())
          throw ValidationError("boundary " + std::to_string(b) + ": conflicting edits, track " +
                                std::to_string(it->second) + " mapped to bird " + std::to_string(t) +
                                " which track " + std::to_string(t) + " still holds");
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      auto& r = tracks[i];
      if (dropped[i] || r.video_id != corr.video_id || r.frame < b) continue;
      if (spurious.count(r.track_id)) {
        dropped[i] = 1;
        continue;
      }
      if (auto it = remap.find(r.track_id); it != remap.end()) r.track_id = it->second;
    }
  }
  for (std::size_t i = 0; i < tracks.size(); ++i)
    if (!dropped[i]) out.tracks.push_back(std::move(tracks[i]));
  std::set<std::tuple<std::string, int, int>> seen;
  for (const auto& r : out.tracks)
    if (!seen.emplace(r.video_id, r.frame, r.track_id).second)
      throw ValidationError("corrections produce duplicate track " + std::to_string(r.track_id) + " at frame " +
                            std::to_string(r.frame));
  return out;
}

/// Edit set that undoes `corr` on `original` (edits only; dropped tracks
/// cannot be restored). The inverse carries one entry per legal boundary:
/// at each, every id then present in the chunk is mapped back to its
/// original value, so chained edits unwind in the same forward order.
inline Corrections invert_corrections(const Corrections& corr, const std::vector<TrackedMask>& original,
                                      const std::vector<int>& plan_boundaries) {
  struct Rec {
    int frame, orig, cur;
    bool dropped = false;
  };
  std::vector<Rec> recs;
  for (const auto& r : original)
    if (r.video_id == corr.video_id) recs.push_back({r.frame, r.track_id, r.track_id});
  auto steps = corr.boundaries;
  std::stable_sort(steps.begin(), steps.end(),
                   [](const auto& a, const auto& b) { return a.boundary_frame < b.boundary_frame; });
  for (const auto& s : steps) {
    std::map<int, int> remap(s.edits.begin(), s.edits.end());
    std::set<int> spurious;
    for (auto [t, kind] : s.anomalies)
      if (kind == Anomaly::Spurious) spurious.insert(t);
    for (auto& r : recs) {
      if (r.dropped || r.frame < s.boundary_frame) continue;
      if (spurious.count(r.cur)) {
        r.dropped = true;
      } else if (auto it = remap.find(r.cur); it != remap.end()) {
        r.cur = it->second;
      }
    }
  }
  std::set<int> legal(plan_boundaries.begin(), plan_boundaries.end());
  legal.insert(0);
  Corrections inv;
  inv.video_id = corr.video_id;
  for (auto it = legal.begin(); it != legal.end(); ++it) {
    const int b = *it;
    const auto next = std::next(it);
    const int end = next == legal.end() ? std::numeric_limits<int>::max() : *next;
    std::map<int, int> back;
    for (const auto& r : recs) {
      if (r.dropped || r.frame < b || r.frame >= end) continue;
      auto [pos, inserted] = back.emplace(r.cur, r.orig);
      if (!inserted && pos->second != r.orig)
        throw ValidationError("corrections are not invertible at boundary " + std::to_string(b));
    }
    BoundaryCorrection step;
    step.boundary_frame = b;
    for (auto [cur, orig] : back)
      if (cur != orig) step.edits.emplace_back(cur, orig);
    if (step.edits.empty()) continue;
    for (auto& r : recs)
      if (!r.dropped && r.frame >= b)
        if (auto f = back.find(r.cur); f != back.end()) r.cur = f->second;
    inv.boundaries.push_back(std::move(step));
  }
  return inv;
}

}  // namespace playclass
