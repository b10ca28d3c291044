#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "carpe/dataio.hpp"

// Synthetic pedestrian scenes for tests: walkers with exact linear motion or
// gentle sinusoidal sway, serialized in the annotation format.

namespace testsupport {

struct SynthPed {
  int id = 0;
  double x0 = 0.0, y0 = 0.0;
  double vx = 0.0, vy = 0.0;
  double sway = 0.0;   // lateral sinusoid amplitude, 0 for exact lines
  double phase = 0.0;
  long enter_step = 0;
  long exit_step = 0;  // exclusive
};

inline carpe::Point synth_position(const SynthPed& ped, long step) {
  const double t = static_cast<double>(step);
  const double x = ped.x0 + ped.vx * t + ped.sway * std::sin(0.35 * t + ped.phase);
  const double y = ped.y0 + ped.vy * t + ped.sway * std::cos(0.35 * t + ped.phase);
  return {x, y};
}

inline std::vector<carpe::RawAnnotation> synth_scene(const std::vector<SynthPed>& peds, long steps,
                                                     long interval = 10, long frame0 = 0) {
  std::vector<carpe::RawAnnotation> records;
  for (long step = 0; step < steps; ++step) {
    for (const SynthPed& ped : peds) {
      if (step < ped.enter_step || step >= ped.exit_step) {
        continue;
      }
      const carpe::Point pt = synth_position(ped, step);
      records.push_back({frame0 + step * interval, ped.id, pt[0], pt[1]});
    }
  }
  return records;
}

inline void write_annotations(const std::filesystem::path& path,
                              const std::vector<carpe::RawAnnotation>& records) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  char buf[128];
  for (const carpe::RawAnnotation& a : records) {
    std::snprintf(buf, sizeof(buf), "%ld %d %.17g %.17g\n", a.frame_id, a.ped_id, a.x, a.y);
    out << buf;
  }
}

// A small crowd, everyone present the whole time, speeds and headings spread
// by a cheap seeded generator. sway > 0 makes the motion non-linear.
inline std::vector<SynthPed> make_crowd(int count, long steps, unsigned seed, double sway) {
  std::vector<SynthPed> peds;
  unsigned state = seed * 2654435761u + 12345u;
  auto next = [&state]() {
    state = state * 1664525u + 1013904223u;
    return static_cast<double>(state) / 4294967296.0;
  };
  for (int i = 0; i < count; ++i) {
    SynthPed p;
    p.id = i + 1;
    p.x0 = 20.0 * next() - 10.0;
    p.y0 = 20.0 * next() - 10.0;
    const double heading = 6.283185307179586 * next();
    const double speed = 0.3 + 0.5 * next();  // meters per step
    p.vx = speed * std::cos(heading);
    p.vy = speed * std::sin(heading);
    p.sway = sway * (0.5 + next());
    p.phase = 6.283185307179586 * next();
    p.enter_step = 0;
    p.exit_step = steps;
    peds.push_back(p);
  }
  return peds;
}

// Writes a full dataset root: every benchmark scene gets train/val/test
// directories with one synthetic recording each.
inline void write_synthetic_dataset(const std::filesystem::path& root, int peds_per_scene,
                                    long steps, double sway, unsigned seed) {
  unsigned scene_seed = seed;
  for (std::string_view scene : carpe::kScenes) {
    for (std::string_view split : {"train", "val", "test"}) {
      const std::filesystem::path dir = root / scene / split;
      std::filesystem::create_directories(dir);
      scene_seed += 101;
      const auto crowd = make_crowd(peds_per_scene, steps, scene_seed, sway);
      write_annotations(dir / (std::string(scene) + "_0.txt"), synth_scene(crowd, steps));
    }
  }
}

}  // namespace testsupport
