#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "playclass/dataset_io.hpp"
#include "playclass/mask.hpp"
#include "playclass/numeric.hpp"

// Scripted synthetic pens: birds drawn as ellipses whose motion regime per
// 5 s window determines the label (stationary -> none, straight run ->
// object running, erratic frolic -> frolicking).
namespace playclass::synthetic {

inline BinaryMask rasterize_ellipse(int height, int width, double cx, double cy, double semi_major, double semi_minor,
                                    double theta) {
  const double reach = std::max(semi_major, semi_minor) + 1;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + reach)));
  if (x1 < x0 || y1 < y0) return BinaryMask(height, width);
  const int cw = x1 - x0 + 1, ch = y1 - y0 + 1;
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(cw) * ch, 0);
  const double c = std::cos(theta), s = std::sin(theta);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = (c * dx + s * dy) / semi_major;
      const double v = (-s * dx + c * dy) / semi_minor;
      if (u * u + v * v <= 1.0) cells[static_cast<std::size_t>(y - y0) * cw + (x - x0)] = 1;
    }
  return BinaryMask::from_crop(height, width, x0, y0, cw, ch, cells);
}

inline BinaryMask rasterize_disc(int height, int width, double cx, double cy, double radius) {
  return rasterize_ellipse(height, width, cx, cy, radius, radius, 0.0);
}

inline TrackedMask make_record(const std::string& video_id, int frame, int track_id, BinaryMask mask,
                               double confidence = 1.0) {
  TrackedMask t;
  t.video_id = video_id;
  t.frame = frame;
  t.track_id = track_id;
  t.bbox = mask.bounds();
  t.confidence = confidence;
  t.mask = std::move(mask);
  return t;
}

enum class Regime { Stationary = 0, Run = 1, Frolic = 2 };

inline int behaviour_for(Regime r) {
  switch (r) {
    case Regime::Stationary: return kNoneBehaviour;
    case Regime::Run: return behaviour_index("Object running");
    case Regime::Frolic: return behaviour_index("Frolicking");
  }
  return kNoneBehaviour;
}

struct Config {
  int frames = 22500;
  int height = 576;
  int width = 704;
  double semi_major = 22;
  double semi_minor = 12;
  // Regime probabilities per window: stationary, run, frolic.
  double p_stationary = 0.5;
  double p_run = 0.25;
  double run_speed = 4.0;     // px / frame
  double frolic_speed = 7.0;  // px / frame
  int frolic_turn_every = 4;  // frames between random heading changes
  double confidence = 0.95;
};

struct Video {
  std::vector<TrackedMask> tracks;
  std::vector<LabelWindow> labels;
};

/// One video with the given bird ids (used as track ids).
inline Video make_video(const std::string& video_id, const std::vector<int>& bird_ids, const Config& cfg,
                        std::uint64_t seed) {
  Rng rng(seed);
  Video out;
  const int n_windows = cfg.frames / kWindowFrames;
  const double margin = cfg.semi_major + 4;
  for (std::size_t b = 0; b < bird_ids.size(); ++b) {
    const int id = bird_ids[b];
    double x = rng.uniform(margin, cfg.width - margin);
    double y = rng.uniform(margin, cfg.height - margin);
    double heading = rng.uniform(-kPi, kPi);
    double body = heading;
    for (int w = 0; w < n_windows; ++w) {
      const double u = rng.uniform01();
      const Regime regime = u < cfg.p_stationary ? Regime::Stationary
                            : u < cfg.p_stationary + cfg.p_run ? Regime::Run
                                                                : Regime::Frolic;
      LabelWindow lw;
      lw.video_id = video_id;
      lw.bird_id = id;
      lw.start_frame = w * kWindowFrames;
      lw.end_frame = lw.start_frame + kWindowFrames;
      lw.behaviour = behaviour_for(regime);
      lw.category = kBehaviours[static_cast<std::size_t>(lw.behaviour)].category;
      out.labels.push_back(lw);
      if (regime == Regime::Run) heading = rng.uniform(-kPi, kPi);
      for (int i = 0; i < kWindowFrames; ++i) {
        const int frame = w * kWindowFrames + i;
        double speed = 0;
        switch (regime) {
          case Regime::Stationary:
            x += rng.uniform(-0.3, 0.3);
            y += rng.uniform(-0.3, 0.3);
            body += rng.uniform(-0.02, 0.02);
            break;
          case Regime::Run:
            speed = cfg.run_speed * rng.uniform(0.9, 1.1);
            body = heading;
            break;
          case Regime::Frolic:
            if (i % cfg.frolic_turn_every == 0) heading += rng.uniform(-2.5, 2.5);
            speed = cfg.frolic_speed * rng.uniform(0.6, 1.4);
            body += rng.uniform(-0.6, 0.6);
            break;
        }
        x += speed * std::cos(heading);
        y += speed * std::sin(heading);
        // Reflect off the pen walls.
        if (x < margin) {
          x = 2 * margin - x;
          heading = kPi - heading;
        }
        if (x > cfg.width - margin) {
          x = 2 * (cfg.width - margin) - x;
          heading = kPi - heading;
        }
        if (y < margin) {
          y = 2 * margin - y;
          heading = -heading;
        }
        if (y > cfg.height - margin) {
          y = 2 * (cfg.height - margin) - y;
          heading = -heading;
        }
        if (regime == Regime::Run) body = heading;
        auto mask = rasterize_ellipse(cfg.height, cfg.width, x, y, cfg.semi_major, cfg.semi_minor, body);
        out.tracks.push_back(make_record(video_id, frame, id, std::move(mask), cfg.confidence));
      }
    }
  }
  return out;
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<TrackedMask> tracks;
  std::vector<LabelWindow> labels;
};

/// `cages` cages of nine birds; each video films one group of three.
inline Dataset make_dataset(int cages, int videos_per_cage, const Config& cfg, std::uint64_t seed) {
  Dataset d;
  for (int c = 1; c <= cages; ++c) {
    for (int k = 0; k < 9; ++k) d.manifest.birds.push_back({9 * (c - 1) + k + 1, c});
    for (int v = 0; v < videos_per_cage; ++v) {
      const std::string vid = "c" + std::to_string(c) + "v" + std::to_string(v + 1);
      const int day = 28 + v % 2;
      d.manifest.videos.push_back({vid, 25.0, cfg.frames, c, day});
      const int group = v % 3;
      std::vector<int> ids;
      for (int k = 0; k < 3; ++k) ids.push_back(9 * (c - 1) + 3 * group + k + 1);
      auto video = make_video(vid, ids, cfg, derive_seed(seed, static_cast<std::uint64_t>(c * 100 + v)));
      d.tracks.insert(d.tracks.end(), std::make_move_iterator(video.tracks.begin()),
                      std::make_move_iterator(video.tracks.end()));
      d.labels.insert(d.labels.end(), video.labels.begin(), video.labels.end());
    }
  }
  std::sort(d.labels.begin(), d.labels.end(), [](const auto& a, const auto& b) { return a.key() < b.key(); });
  return d;
}

}  // namespace playclass::synthetic
