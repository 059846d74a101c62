#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "playclass/error.hpp"
#include "playclass/mask.hpp"
#include "playclass/numeric.hpp"

namespace playclass {

inline constexpr int kWindowFrames = 125;  // 5 s at 25 fps

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ValidationError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& l : lines)
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  return lines;
}

/// RFC 4180 style field splitting (double quotes, doubled quote escapes).
inline std::vector<std::string> parse_csv_line(std::string_view line, std::size_t line_no = 0) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  out.push_back(std::move(cur));
  return out;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// ---------------------------------------------------------------------------
// Window keys

struct WindowKey {
  std::string video_id;
  int bird_id = 0;
  int start_frame = 0;

  std::string str() const {
    return video_id + ":" + std::to_string(bird_id) + ":" + std::to_string(start_frame);
  }

  static WindowKey parse(std::string_view s, std::size_t line = 0) {
    const auto last = s.rfind(':');
    if (last == std::string_view::npos || last == 0) throw ParseError("bad window key '" + std::string(s) + "'", line);
    const auto mid = s.rfind(':', last - 1);
    if (mid == std::string_view::npos) throw ParseError("bad window key '" + std::string(s) + "'", line);
    WindowKey k;
    k.video_id = std::string(s.substr(0, mid));
    k.bird_id = parse_int<int>(s.substr(mid + 1, last - mid - 1), line);
    k.start_frame = parse_int<int>(s.substr(last + 1), line);
    return k;
  }

  auto tie() const { return std::tie(video_id, bird_id, start_frame); }
  friend bool operator<(const WindowKey& a, const WindowKey& b) { return a.tie() < b.tie(); }
  friend bool operator==(const WindowKey& a, const WindowKey& b) { return a.tie() == b.tie(); }
};

// ---------------------------------------------------------------------------
// Tracks: video_id<TAB>frame<TAB>track_id<TAB>x y w h<TAB>conf<TAB>H W<TAB>rle
//
// H = W = 0 with an empty count list denotes a box-only record (detections,
// box-annotated keyframes).

struct TrackedMask {
  std::string video_id;
  int frame = 0;
  int track_id = 0;
  Box bbox;
  double confidence = 1.0;
  std::optional<BinaryMask> mask;

  bool has_mask() const { return mask.has_value(); }

  auto order_key() const { return std::tie(video_id, track_id, frame); }
};

inline std::string format_track_line(const TrackedMask& t) {
  std::string s;
  s.reserve(128);
  s += t.video_id;
  s += '\t';
  s += std::to_string(t.frame);
  s += '\t';
  s += std::to_string(t.track_id);
  s += '\t';
  s += format_double(t.bbox.x) + ' ' + format_double(t.bbox.y) + ' ' + format_double(t.bbox.w) + ' ' +
       format_double(t.bbox.h);
  s += '\t';
  s += format_double(t.confidence);
  s += '\t';
  if (t.mask) {
    s += std::to_string(t.mask->frame_height()) + ' ' + std::to_string(t.mask->frame_width());
    s += '\t';
    const auto counts = t.mask->rle_counts();
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(counts[i]);
    }
  } else {
    s += "0 0\t";
  }
  return s;
}

inline std::string record_name(const TrackedMask& t) {
  return t.video_id + " frame " + std::to_string(t.frame) + " track " + std::to_string(t.track_id);
}

/// Checks the per-record invariants; throws ValidationError naming the record.
inline void validate_record(const TrackedMask& t) {
  if (!(t.confidence >= 0.0 && t.confidence <= 1.0))
    throw ValidationError(record_name(t) + ": confidence outside [0,1]");
  if (t.frame < 0) throw ValidationError(record_name(t) + ": negative frame");
  if (t.mask && t.mask->bounds() != t.bbox)
    throw ValidationError(record_name(t) + ": bbox is not the tight box of the mask");
}

inline TrackedMask parse_track_line(std::string_view line, std::size_t line_no) {
  const auto f = split(line, '\t');
  if (f.size() != 7) throw ParseError("expected 7 tab-separated fields, got " + std::to_string(f.size()), line_no);
  TrackedMask t;
  t.video_id = std::string(trim(f[0]));
  if (t.video_id.empty()) throw ParseError("empty video_id", line_no);
  t.frame = parse_int<int>(f[1], line_no);
  auto tid = trim(f[2]);
  if (tid.starts_with("gt_")) tid.remove_prefix(3);
  t.track_id = parse_int<int>(tid, line_no);
  const auto box = split_ws(f[3]);
  if (box.size() != 4) throw ParseError("bbox needs 4 values", line_no);
  t.bbox = {parse_double(box[0], line_no), parse_double(box[1], line_no), parse_double(box[2], line_no),
            parse_double(box[3], line_no)};
  t.confidence = parse_double(f[4], line_no);
  const auto hw = split_ws(f[5]);
  if (hw.size() != 2) throw ParseError("mask size needs H and W", line_no);
  const int h = parse_int<int>(hw[0], line_no), w = parse_int<int>(hw[1], line_no);
  const auto rle = trim(f[6]);
  if (h == 0 && w == 0) {
    if (!rle.empty()) throw ParseError("box-only record must have empty RLE", line_no);
  } else {
    std::vector<std::uint64_t> counts;
    for (auto c : split(rle, ',')) counts.push_back(parse_int<std::uint64_t>(c, line_no));
    try {
      t.mask = BinaryMask::from_rle(h, w, counts);
    } catch (const ValidationError& e) {
      throw ValidationError(record_name(t) + ": " + e.what());
    }
  }
  return t;
}

/// Parses, validates and canonically orders track records.
inline std::vector<TrackedMask> parse_tracks(std::string_view text) {
  std::vector<TrackedMask> out;
  std::size_t line_no = 0;
  for (auto line : lines_of(text)) {
    ++line_no;
    if (trim(line).empty() || line.front() == '#') continue;
    out.push_back(parse_track_line(line, line_no));
    validate_record(out.back());
  }
  std::sort(out.begin(), out.end(),
            [](const TrackedMask& a, const TrackedMask& b) { return a.order_key() < b.order_key(); });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].order_key() == out[i - 1].order_key())
      throw ValidationError("duplicate (track_id, frame) pair: " + record_name(out[i]));
  return out;
}

inline std::vector<TrackedMask> load_tracks(const std::filesystem::path& path) {
  return parse_tracks(read_file(path));
}

inline std::string serialize_tracks(const std::vector<TrackedMask>& tracks) {
  std::string out;
  for (const auto& t : tracks) {
    out += format_track_line(t);
    out += '\n';
  }
  return out;
}

inline void write_tracks(const std::filesystem::path& path, const std::vector<TrackedMask>& tracks) {
  write_file_atomic(path, serialize_tracks(tracks));
}

// ---------------------------------------------------------------------------
// Ethogram

enum class Category { Other = 0, Object = 1, Locomotor = 2, Social = 3 };

inline constexpr int kNumClasses = 3;  // other, object, locomotor

inline const char* category_name(Category c) {
  switch (c) {
    case Category::Other: return "other";
    case Category::Object: return "object";
    case Category::Locomotor: return "locomotor";
    case Category::Social: return "social";
  }
  return "?";
}

struct BehaviourInfo {
  std::string_view name;
  Category category;
};

// Sub-behaviours in ethogram order, then "none".
inline constexpr std::array<BehaviourInfo, 15> kBehaviours{{
    {"Frolicking", Category::Locomotor},
    {"Wing flapping", Category::Locomotor},
    {"Running", Category::Locomotor},
    {"Spinning", Category::Locomotor},
    {"Spinning while wing flapping", Category::Locomotor},
    {"Worm pecking", Category::Object},
    {"Object running", Category::Object},
    {"Worm running", Category::Object},
    {"Object/worm chasing", Category::Object},
    {"Object/worm exchange", Category::Object},
    {"Sparring jumping, no contact", Category::Social},
    {"Sparring jumping, with contact", Category::Social},
    {"Sparring stand-off, no contact", Category::Social},
    {"Sparring stand-off, with contact", Category::Social},
    {"none", Category::Other},
}};

inline constexpr int kNoneBehaviour = 14;

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline int behaviour_index(std::string_view name, std::size_t line = 0) {
  const auto key = lower(trim(name));
  for (std::size_t i = 0; i < kBehaviours.size(); ++i)
    if (lower(kBehaviours[i].name) == key) return static_cast<int>(i);
  std::string legal;
  for (const auto& b : kBehaviours) legal += "\n  " + std::string(b.name);
  throw ValidationError((line ? "line " + std::to_string(line) + ": " : std::string()) + "unknown behaviour '" +
                        std::string(name) + "'; legal values:" + legal);
}

inline Category category_of(std::string_view behaviour) {
  return kBehaviours[static_cast<std::size_t>(behaviour_index(behaviour))].category;
}

// ---------------------------------------------------------------------------
// Labels: CSV video_id,bird_id,start_frame,end_frame,behaviour

struct LabelWindow {
  std::string video_id;
  int bird_id = 0;
  int start_frame = 0;
  int end_frame = 0;
  int behaviour = kNoneBehaviour;  // index into kBehaviours
  Category category = Category::Other;

  WindowKey key() const { return {video_id, bird_id, start_frame}; }
  std::string_view behaviour_name() const { return kBehaviours[static_cast<std::size_t>(behaviour)].name; }
  /// Social-category windows are kept but excluded from training and evaluation.
  bool excluded_from_training() const { return category == Category::Social; }
  int class_index() const { return static_cast<int>(category); }
};

inline std::vector<LabelWindow> parse_labels(std::string_view text, int window_frames = kWindowFrames) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw ParseError("empty labels file");
  const auto header = parse_csv_line(lines[0], 1);
  const std::vector<std::string> expected{"video_id", "bird_id", "start_frame", "end_frame", "behaviour"};
  if (header != expected) throw ParseError("labels header must be video_id,bird_id,start_frame,end_frame,behaviour", 1);
  std::vector<LabelWindow> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t ln = i + 1;
    if (trim(lines[i]).empty()) continue;
    const auto f = parse_csv_line(lines[i], ln);
    if (f.size() != 5) throw ParseError("expected 5 fields", ln);
    LabelWindow w;
    w.video_id = f[0];
    w.bird_id = parse_int<int>(f[1], ln);
    w.start_frame = parse_int<int>(f[2], ln);
    w.end_frame = parse_int<int>(f[3], ln);
    w.behaviour = behaviour_index(f[4], ln);
    w.category = kBehaviours[static_cast<std::size_t>(w.behaviour)].category;
    if (w.end_frame - w.start_frame != window_frames)
      throw ValidationError("line " + std::to_string(ln) + ": window must span " + std::to_string(window_frames) +
                            " frames");
    if (w.start_frame < 0 || w.start_frame % window_frames != 0)
      throw ValidationError("line " + std::to_string(ln) + ": window start not aligned to " +
                            std::to_string(window_frames) + "-frame boundaries");
    out.push_back(std::move(w));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.key() < b.key(); });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].key() == out[i - 1].key())
      throw ValidationError("duplicate label window " + out[i].key().str());
  return out;
}

inline std::vector<LabelWindow> load_labels(const std::filesystem::path& path, int window_frames = kWindowFrames) {
  return parse_labels(read_file(path), window_frames);
}

inline std::string serialize_labels(const std::vector<LabelWindow>& labels) {
  std::string out = "video_id,bird_id,start_frame,end_frame,behaviour\n";
  for (const auto& w : labels)
    out += csv_field(w.video_id) + "," + std::to_string(w.bird_id) + "," + std::to_string(w.start_frame) + "," +
           std::to_string(w.end_frame) + "," + csv_field(w.behaviour_name()) + "\n";
  return out;
}

/// Counts per category, indexed by Category (other, object, locomotor, social).
inline std::array<std::size_t, 4> category_histogram(const std::vector<LabelWindow>& labels) {
  std::array<std::size_t, 4> h{};
  for (const auto& w : labels) ++h[static_cast<std::size_t>(w.category)];
  return h;
}

// ---------------------------------------------------------------------------
// Manifest: two CSV blocks in one file,
//   video_id,fps,frame_count,cage_id,day
//   bird_id,cage_id

struct VideoInfo {
  std::string video_id;
  double fps = 25.0;
  int frame_count = 0;
  int cage_id = 0;
  int day = 0;
};

struct BirdInfo {
  int bird_id = 0;
  int cage_id = 0;
};

struct DatasetManifest {
  std::vector<VideoInfo> videos;
  std::vector<BirdInfo> birds;

  const VideoInfo* video(std::string_view id) const {
    for (const auto& v : videos)
      if (v.video_id == id) return &v;
    return nullptr;
  }

  std::vector<int> cages() const {
    std::set<int> s;
    for (const auto& v : videos) s.insert(v.cage_id);
    return {s.begin(), s.end()};
  }
};

inline DatasetManifest parse_manifest(std::string_view text) {
  DatasetManifest m;
  enum { None, Videos, Birds } block = None;
  std::size_t ln = 0;
  for (auto line : lines_of(text)) {
    ++ln;
    if (trim(line).empty() || line.front() == '#') continue;
    const auto f = parse_csv_line(line, ln);
    if (f.size() == 5 && f[0] == "video_id") {
      if (f != std::vector<std::string>{"video_id", "fps", "frame_count", "cage_id", "day"})
        throw ParseError("bad video table header", ln);
      block = Videos;
      continue;
    }
    if (f.size() == 2 && f[0] == "bird_id") {
      if (f[1] != "cage_id") throw ParseError("bad bird table header", ln);
      block = Birds;
      continue;
    }
    if (block == Videos) {
      if (f.size() != 5) throw ParseError("expected 5 fields in video table", ln);
      VideoInfo v{f[0], parse_double(f[1], ln), parse_int<int>(f[2], ln), parse_int<int>(f[3], ln),
                  parse_int<int>(f[4], ln)};
      if (!(v.fps > 0)) throw ValidationError("line " + std::to_string(ln) + ": fps must be positive");
      if (v.frame_count < 0) throw ValidationError("line " + std::to_string(ln) + ": negative frame_count");
      if (m.video(v.video_id)) throw ValidationError("video " + v.video_id + " listed twice (one cage per video)");
      m.videos.push_back(std::move(v));
    } else if (block == Birds) {
      if (f.size() != 2) throw ParseError("expected 2 fields in bird table", ln);
      m.birds.push_back({parse_int<int>(f[0], ln), parse_int<int>(f[1], ln)});
    } else {
      throw ParseError("row before any table header", ln);
    }
  }
  std::sort(m.videos.begin(), m.videos.end(), [](const auto& a, const auto& b) { return a.video_id < b.video_id; });
  std::sort(m.birds.begin(), m.birds.end(), [](const auto& a, const auto& b) { return a.bird_id < b.bird_id; });
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) { return parse_manifest(read_file(path)); }

inline std::string serialize_manifest(const DatasetManifest& m) {
  std::string out = "video_id,fps,frame_count,cage_id,day\n";
  for (const auto& v : m.videos)
    out += csv_field(v.video_id) + "," + format_double(v.fps) + "," + std::to_string(v.frame_count) + "," +
           std::to_string(v.cage_id) + "," + std::to_string(v.day) + "\n";
  out += "\nbird_id,cage_id\n";
  for (const auto& b : m.birds) out += std::to_string(b.bird_id) + "," + std::to_string(b.cage_id) + "\n";
  return out;
}

/// Cross-checks tracks against the manifest (known video, frame < frame_count).
inline void validate_tracks_against_manifest(const std::vector<TrackedMask>& tracks, const DatasetManifest& m) {
  for (const auto& t : tracks) {
    const auto* v = m.video(t.video_id);
    if (!v) throw ValidationError(record_name(t) + ": video not in manifest");
    if (t.frame >= v->frame_count) throw ValidationError(record_name(t) + ": frame beyond video frame count");
  }
}

// ---------------------------------------------------------------------------
// Embedding bundles: <dir>/index.tsv + <dir>/tokens.bin (little-endian f32,
// row-major F_w x D per window).

struct EmbeddingSequence {
  WindowKey key;
  int frames = 0;  // F_w
  int dim = 0;     // D
  std::vector<float> tokens;
  std::string backbone_id;
  int k_in = 1;

  float at(int t, int d) const { return tokens[static_cast<std::size_t>(t) * dim + d]; }
};

struct EmbeddingBundle {
  std::string backbone_id;
  int k_in = 1;
  std::vector<EmbeddingSequence> windows;
  std::vector<std::string> warnings;  // orphan windows etc.

  int dim() const { return windows.empty() ? 0 : windows.front().dim; }
};

namespace detail {
inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}
}  // namespace detail

inline void write_embeddings(const std::filesystem::path& dir, const EmbeddingBundle& bundle) {
  std::vector<const EmbeddingSequence*> order;
  for (const auto& w : bundle.windows) order.push_back(&w);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->key < b->key; });
  std::string index = "#backbone_id=" + bundle.backbone_id + "\tK_in=" + std::to_string(bundle.k_in) + "\n";
  index += "window_key\toffset\tF_w\tD\n";
  std::string payload;
  for (const auto* w : order) {
    if (w->tokens.size() != static_cast<std::size_t>(w->frames) * w->dim)
      throw ValidationError("window " + w->key.str() + ": token count does not match F_w*D");
    index += w->key.str() + "\t" + std::to_string(payload.size()) + "\t" + std::to_string(w->frames) + "\t" +
             std::to_string(w->dim) + "\n";
    for (float v : w->tokens) {
      const std::uint32_t bits = detail::to_le(std::bit_cast<std::uint32_t>(v));
      char b[4];
      std::memcpy(b, &bits, 4);
      payload.append(b, 4);
    }
  }
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "tokens.bin", payload);
  write_file_atomic(dir / "index.tsv", index);
}

/// Loads a bundle. When `labels` is given, windows without a label are
/// reported in `warnings` (not an error).
inline EmbeddingBundle load_embeddings(const std::filesystem::path& dir,
                                       const std::vector<LabelWindow>* labels = nullptr) {
  EmbeddingBundle b;
  const std::string index = read_file(dir / "index.tsv");
  const std::string payload = read_file(dir / "tokens.bin");
  const auto lines = lines_of(index);
  std::size_t i = 0;
  if (i < lines.size() && lines[i].starts_with("#")) {
    for (auto kv : split(lines[i].substr(1), '\t')) {
      const auto eq = kv.find('=');
      if (eq == std::string_view::npos) continue;
      const auto k = trim(kv.substr(0, eq)), v = trim(kv.substr(eq + 1));
      if (k == "backbone_id") b.backbone_id = std::string(v);
      if (k == "K_in") b.k_in = parse_int<int>(v, 1);
    }
    ++i;
  }
  if (i >= lines.size() || lines[i] != "window_key\toffset\tF_w\tD")
    throw ParseError("index.tsv header must be window_key<TAB>offset<TAB>F_w<TAB>D", i + 1);
  ++i;
  std::size_t expected_offset = 0;
  for (; i < lines.size(); ++i) {
    const std::size_t ln = i + 1;
    if (trim(lines[i]).empty()) continue;
    const auto f = split(lines[i], '\t');
    if (f.size() != 4) throw ParseError("expected 4 fields", ln);
    EmbeddingSequence s;
    s.key = WindowKey::parse(f[0], ln);
    const auto offset = parse_int<std::uint64_t>(f[1], ln);
    s.frames = parse_int<int>(f[2], ln);
    s.dim = parse_int<int>(f[3], ln);
    s.backbone_id = b.backbone_id;
    s.k_in = b.k_in;
    if (s.frames < 1 || s.dim < 1) throw ValidationError("window " + s.key.str() + ": F_w and D must be >= 1");
    if (!b.windows.empty() && s.dim != b.windows.front().dim)
      throw ValidationError("window " + s.key.str() + ": D differs within the bundle");
    if (offset != expected_offset)
      throw ValidationError("window " + s.key.str() + ": offset " + std::to_string(offset) +
                            " does not follow the previous record (expected " + std::to_string(expected_offset) + ")");
    const std::size_t nbytes = static_cast<std::size_t>(s.frames) * s.dim * 4;
    if (offset + nbytes > payload.size())
      throw ValidationError("tokens.bin truncated: window " + s.key.str() + " needs bytes [" +
                            std::to_string(offset) + ", " + std::to_string(offset + nbytes) +
                            ") but payload ends at byte offset " + std::to_string(payload.size()));
    s.tokens.resize(static_cast<std::size_t>(s.frames) * s.dim);
    for (std::size_t j = 0; j < s.tokens.size(); ++j) {
      std::uint32_t bits;
      std::memcpy(&bits, payload.data() + offset + 4 * j, 4);
      s.tokens[j] = std::bit_cast<float>(detail::to_le(bits));
      if (!std::isfinite(s.tokens[j]))
        throw ValidationError("window " + s.key.str() + ": non-finite token value at index " + std::to_string(j));
    }
    expected_offset = offset + nbytes;
    b.windows.push_back(std::move(s));
  }
  if (expected_offset != payload.size())
    throw ValidationError("tokens.bin has " + std::to_string(payload.size() - expected_offset) +
                          " trailing bytes after byte offset " + std::to_string(expected_offset));
  std::sort(b.windows.begin(), b.windows.end(), [](const auto& x, const auto& y) { return x.key < y.key; });
  for (std::size_t j = 1; j < b.windows.size(); ++j)
    if (b.windows[j].key == b.windows[j - 1].key)
      throw ValidationError("duplicate window " + b.windows[j].key.str() + " in index");
  if (labels) {
    std::set<std::string> known;
    for (const auto& l : *labels) known.insert(l.key().str());
    for (const auto& w : b.windows)
      if (!known.count(w.key.str())) b.warnings.push_back("orphan window " + w.key.str() + " has no label");
  }
  return b;
}

// ---------------------------------------------------------------------------
// Feature files: window_key,f01_mean,...,f19_max,flag_low_coverage

inline constexpr int kNumFrameFeatures = 19;
inline constexpr int kNumStatistics = 9;
inline constexpr int kFeatureDim = kNumFrameFeatures * kNumStatistics;  // 171

inline constexpr std::array<std::string_view, kNumStatistics> kStatisticNames{
    "mean", "sd", "skew", "kurt", "min", "p25", "median", "p75", "max"};

struct WindowFeatureVector {
  WindowKey key;
  std::array<double, kFeatureDim> values{};
  bool low_coverage = false;
};

inline std::string feature_column_name(int feature, int stat) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "f%02d_", feature + 1);
  return buf + std::string(kStatisticNames[static_cast<std::size_t>(stat)]);
}

inline std::string serialize_features(const std::vector<WindowFeatureVector>& rows) {
  std::string out = "window_key";
  for (int f = 0; f < kNumFrameFeatures; ++f)
    for (int s = 0; s < kNumStatistics; ++s) out += "," + feature_column_name(f, s);
  out += ",flag_low_coverage\n";
  for (const auto& r : rows) {
    out += csv_field(r.key.str());
    for (double v : r.values) out += "," + format_double(v);
    out += r.low_coverage ? ",1\n" : ",0\n";
  }
  return out;
}

inline std::vector<WindowFeatureVector> parse_features(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw ParseError("empty features file");
  const auto header = parse_csv_line(lines[0], 1);
  if (header.size() != kFeatureDim + 2 || header.front() != "window_key" || header.back() != "flag_low_coverage")
    throw ParseError("features header must have window_key, 171 value columns and flag_low_coverage", 1);
  std::vector<WindowFeatureVector> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t ln = i + 1;
    if (trim(lines[i]).empty()) continue;
    const auto f = parse_csv_line(lines[i], ln);
    if (f.size() != kFeatureDim + 2) throw ParseError("expected 173 fields", ln);
    WindowFeatureVector r;
    r.key = WindowKey::parse(f[0], ln);
    for (int j = 0; j < kFeatureDim; ++j) r.values[static_cast<std::size_t>(j)] = parse_double(f[static_cast<std::size_t>(j) + 1], ln);
    r.low_coverage = parse_int<int>(f.back(), ln) != 0;
    out.push_back(r);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return out;
}

inline std::vector<WindowFeatureVector> load_features(const std::filesystem::path& path) {
  return parse_features(read_file(path));
}

}  // namespace playclass
