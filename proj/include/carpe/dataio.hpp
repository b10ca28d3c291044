#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace carpe {

using Point = std::array<double, 2>;
using Path = std::vector<Point>;

// One annotation line: pedestrian ped_id observed at world position (x, y)
// meters in frame frame_id. Frames are sampled every 0.4 s.
struct RawAnnotation {
  long frame_id = 0;
  int ped_id = 0;
  double x = 0.0;
  double y = 0.0;
};

// One pedestrian inside a frame window. observed_* hold the last beta
// positions; future_abs holds the next horizon positions (empty for streaming
// samples, where the future is unknown). observed_rel is observed_abs shifted
// so the first observed position, kept in origin, maps to (0, 0).
struct PedWindow {
  int ped_id = 0;
  Path observed_abs;
  Path observed_rel;
  Path future_abs;
  Point origin{0.0, 0.0};
};

// All pedestrians sharing one observation window, sorted by ped_id. This is
// the unit the model consumes: the graph couples exactly the pedestrians in
// one FrameSample.
struct FrameSample {
  std::string scene_id;
  long window_start_frame = 0;
  std::vector<PedWindow> peds;
};

namespace detail {

inline bool parse_number(std::string_view field, double& out) {
  const std::string buf(field);
  char* end = nullptr;
  out = std::strtod(buf.c_str(), &end);
  return end == buf.c_str() + buf.size() && buf.size() > 0 && std::isfinite(out);
}

inline bool parse_integral(std::string_view field, long& out) {
  double v = 0.0;
  if (!parse_number(field, v)) {
    return false;
  }
  // Annotation ids are integers but often serialized as "10.0".
  if (std::floor(v) != v || std::abs(v) > 9.0e15) {
    return false;
  }
  out = static_cast<long>(v);
  return true;
}

}  // namespace detail

// Parses one whitespace-separated "frame_id ped_id x y" line. Returns nothing
// for blank and '#' comment lines; throws on malformed content.
inline std::optional<RawAnnotation> parse_annotation_line(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> fields;
  std::string field;
  while (is >> field) {
    fields.push_back(field);
  }
  if (fields.empty() || fields[0][0] == '#') {
    return std::nullopt;
  }
  if (fields.size() != 4) {
    throw std::invalid_argument("expected 4 fields, got " + std::to_string(fields.size()));
  }
  RawAnnotation a;
  long ped = 0;
  if (!detail::parse_integral(fields[0], a.frame_id) || a.frame_id < 0) {
    throw std::invalid_argument("bad frame id '" + fields[0] + "'");
  }
  if (!detail::parse_integral(fields[1], ped)) {
    throw std::invalid_argument("bad pedestrian id '" + fields[1] + "'");
  }
  a.ped_id = static_cast<int>(ped);
  if (!detail::parse_number(fields[2], a.x) || !detail::parse_number(fields[3], a.y)) {
    throw std::invalid_argument("bad coordinates '" + fields[2] + " " + fields[3] + "'");
  }
  return a;
}

// Reads a whole annotation file and returns records sorted by (frame, ped).
// Malformed lines and duplicate (frame, ped) pairs are hard errors naming the
// offending line.
inline std::vector<RawAnnotation> parse_annotation_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open annotation file " + path.string());
  }
  std::vector<RawAnnotation> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::optional<RawAnnotation> a;
    try {
      a = parse_annotation_line(line);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (a) {
      out.push_back(*a);
    }
  }
  std::sort(out.begin(), out.end(), [](const RawAnnotation& a, const RawAnnotation& b) {
    return a.frame_id != b.frame_id ? a.frame_id < b.frame_id : a.ped_id < b.ped_id;
  });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].frame_id == out[i - 1].frame_id && out[i].ped_id == out[i - 1].ped_id) {
      throw std::runtime_error(path.string() + ": duplicate record for frame " +
                               std::to_string(out[i].frame_id) + " pedestrian " +
                               std::to_string(out[i].ped_id));
    }
  }
  return out;
}

// Shifts a trajectory so its first point becomes (0, 0). rel[t] is exactly
// abs[t] - abs[0] in double arithmetic.
inline Path to_relative(const Path& abs) {
  if (abs.empty()) {
    throw std::invalid_argument("to_relative: empty trajectory");
  }
  Path rel(abs.size());
  for (std::size_t t = 0; t < abs.size(); ++t) {
    rel[t] = {abs[t][0] - abs[0][0], abs[t][1] - abs[0][1]};
  }
  return rel;
}

namespace detail {

// Annotation files step the frame counter in a fixed raw interval (commonly
// 10). The interval is recovered as the gcd of successive frame differences so
// step indices are dense: frame f maps to (f - f0) / interval.
inline long frame_interval(const std::vector<long>& sorted_unique_frames) {
  long g = 0;
  for (std::size_t i = 1; i < sorted_unique_frames.size(); ++i) {
    g = std::gcd(g, sorted_unique_frames[i] - sorted_unique_frames[i - 1]);
  }
  return g == 0 ? 1 : g;
}

}  // namespace detail

// Slides a window of obs_len + pred_len consecutive time steps over a scene
// and keeps, per window, every pedestrian present at all of its steps. Window
// starts advance by stride steps from the first frame of the scene. Windows
// with no qualifying pedestrian are dropped. Pedestrians within a sample are
// sorted by ped_id, samples by start frame.
inline std::vector<FrameSample> build_windows(const std::vector<RawAnnotation>& annotations,
                                              int obs_len, int pred_len, int stride = 1,
                                              const std::string& scene_id = "") {
  if (obs_len < 1 || pred_len < 1) {
    throw std::invalid_argument("build_windows: obs_len and pred_len must be >= 1");
  }
  if (stride < 1) {
    throw std::invalid_argument("build_windows: stride must be >= 1");
  }
  std::vector<FrameSample> samples;
  if (annotations.empty()) {
    return samples;
  }

  std::vector<long> frames;
  frames.reserve(annotations.size());
  for (const RawAnnotation& a : annotations) {
    frames.push_back(a.frame_id);
  }
  std::sort(frames.begin(), frames.end());
  frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
  const long f0 = frames.front();
  const long interval = detail::frame_interval(frames);

  // Per-pedestrian position indexed by dense step, in step order.
  struct Track {
    std::vector<long> steps;
    std::vector<Point> points;
  };
  std::map<int, Track> tracks;
  {
    std::vector<RawAnnotation> sorted = annotations;
    std::sort(sorted.begin(), sorted.end(), [](const RawAnnotation& a, const RawAnnotation& b) {
      return a.ped_id != b.ped_id ? a.ped_id < b.ped_id : a.frame_id < b.frame_id;
    });
    for (const RawAnnotation& a : sorted) {
      if ((a.frame_id - f0) % interval != 0) {
        throw std::runtime_error("frame " + std::to_string(a.frame_id) +
                                 " is off the detected frame grid (interval " +
                                 std::to_string(interval) + ")");
      }
      Track& t = tracks[a.ped_id];
      t.steps.push_back((a.frame_id - f0) / interval);
      t.points.push_back({a.x, a.y});
    }
  }

  const long total = static_cast<long>(obs_len) + pred_len;
  // Window starts that at least one pedestrian fully covers.
  std::map<long, std::vector<int>> starts;
  for (const auto& [ped_id, track] : tracks) {
    std::size_t run_begin = 0;
    for (std::size_t i = 1; i <= track.steps.size(); ++i) {
      const bool run_ends =
          i == track.steps.size() || track.steps[i] != track.steps[i - 1] + 1;
      if (!run_ends) {
        continue;
      }
      const long lo = track.steps[run_begin];
      const long hi = track.steps[i - 1];
      for (long s = lo; s + total - 1 <= hi; ++s) {
        if (s % stride == 0) {
          starts[s].push_back(ped_id);
        }
      }
      run_begin = i;
    }
  }

  for (const auto& [start, ped_ids] : starts) {
    FrameSample sample;
    sample.scene_id = scene_id;
    sample.window_start_frame = f0 + start * interval;
    for (int ped_id : ped_ids) {
      const Track& track = tracks.at(ped_id);
      const auto it = std::lower_bound(track.steps.begin(), track.steps.end(), start);
      const std::size_t base = static_cast<std::size_t>(it - track.steps.begin());
      PedWindow ped;
      ped.ped_id = ped_id;
      ped.observed_abs.assign(track.points.begin() + base, track.points.begin() + base + obs_len);
      ped.future_abs.assign(track.points.begin() + base + obs_len,
                            track.points.begin() + base + total);
      ped.origin = ped.observed_abs.front();
      ped.observed_rel = to_relative(ped.observed_abs);
      sample.peds.push_back(std::move(ped));
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

// The five benchmark scenes and their leave-one-out split.
inline constexpr std::array<std::string_view, 5> kScenes = {"eth", "hotel", "univ", "zara1", "zara2"};

struct SplitPlan {
  std::string held_out;
  std::vector<std::string> train_scenes;
};

inline SplitPlan leave_one_out_split(const std::string& held_out) {
  SplitPlan plan;
  plan.held_out = held_out;
  bool known = false;
  for (std::string_view scene : kScenes) {
    if (scene == held_out) {
      known = true;
    } else {
      plan.train_scenes.emplace_back(scene);
    }
  }
  if (!known) {
    std::string names;
    for (std::string_view scene : kScenes) {
      names += names.empty() ? std::string(scene) : ", " + std::string(scene);
    }
    throw std::invalid_argument("unknown scene '" + held_out + "' (expected one of " + names + ")");
  }
  return plan;
}

// Lists <root>/<scene>/<split>/*.txt sorted by filename. A missing directory
// is an error naming the expected path.
inline std::vector<std::filesystem::path> list_scene_files(const std::filesystem::path& root,
                                                           const std::string& scene,
                                                           const std::string& split) {
  const std::filesystem::path dir = root / scene / split;
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("missing dataset directory " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Loads every annotation file of the given scenes/split and windows each file
// independently (files are separate recordings; windows never span files).
// Sample scene_id is the scene name, so metrics can be grouped per scene.
inline std::vector<FrameSample> load_split(const std::filesystem::path& root,
                                           const std::vector<std::string>& scenes,
                                           const std::string& split, int obs_len, int pred_len,
                                           int stride = 1) {
  std::vector<FrameSample> samples;
  for (const std::string& scene : scenes) {
    for (const std::filesystem::path& file : list_scene_files(root, scene, split)) {
      std::vector<FrameSample> file_samples =
          build_windows(parse_annotation_file(file), obs_len, pred_len, stride, scene);
      samples.insert(samples.end(), std::make_move_iterator(file_samples.begin()),
                     std::make_move_iterator(file_samples.end()));
    }
  }
  return samples;
}

// One detection for StreamBuffer::push.
struct Detection {
  int ped_id = 0;
  double x = 0.0;
  double y = 0.0;
};

// Online counterpart of build_windows' observation half. Each push is the next
// time step; a pedestrian absent from a push loses its history and starts
// over. Once a pedestrian has obs_len consecutive observations, it appears in
// the returned sample. Frame ids only label pushes (and must increase); gaps
// in the raw numbering do not count as absence.
class StreamBuffer {
 public:
  explicit StreamBuffer(int obs_len) : obs_len_(obs_len) {
    if (obs_len < 1) {
      throw std::invalid_argument("StreamBuffer: obs_len must be >= 1");
    }
  }

  // Returns the frame's sample when at least one pedestrian has a full
  // history, otherwise nothing. The sample's window_start_frame holds the
  // emitting frame id (batch windows store the first observed frame instead;
  // a stream cannot know the raw frame spacing). A repeated ped_id within one
  // push replaces the earlier detection.
  std::optional<FrameSample> push(long frame_id, const std::vector<Detection>& detections) {
    if (has_last_ && frame_id <= last_frame_) {
      throw std::invalid_argument("stream frame " + std::to_string(frame_id) +
                                  " is not after frame " + std::to_string(last_frame_));
    }
    has_last_ = true;
    last_frame_ = frame_id;
    ++push_index_;

    std::map<int, Point> frame_peds;
    for (const Detection& d : detections) {
      frame_peds[d.ped_id] = Point{d.x, d.y};
    }

    FrameSample sample;
    sample.window_start_frame = frame_id;
    for (const auto& [ped_id, point] : frame_peds) {
      TrackBuf& buf = tracks_[ped_id];
      if (buf.last_push != push_index_ - 1) {
        buf.points.clear();
      }
      buf.last_push = push_index_;
      buf.points.push_back(point);
      if (buf.points.size() > static_cast<std::size_t>(obs_len_)) {
        buf.points.erase(buf.points.begin());
      }
      if (buf.points.size() == static_cast<std::size_t>(obs_len_)) {
        PedWindow ped;
        ped.ped_id = ped_id;
        ped.observed_abs = buf.points;
        ped.origin = ped.observed_abs.front();
        ped.observed_rel = to_relative(ped.observed_abs);
        sample.peds.push_back(std::move(ped));
      }
    }
    if (sample.peds.empty()) {
      return std::nullopt;
    }
    return sample;
  }

  int obs_len() const noexcept { return obs_len_; }

 private:
  struct TrackBuf {
    Path points;
    long last_push = -2;  // never adjacent to the first push
  };

  int obs_len_ = 0;
  long push_index_ = -1;
  bool has_last_ = false;
  long last_frame_ = 0;
  std::map<int, TrackBuf> tracks_;
};

}  // namespace carpe
