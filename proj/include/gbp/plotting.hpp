#pragma once

#include <string>
#include <vector>

#include "gbp/world_model.hpp"

namespace gbp {

struct PlotOptions {
  int keyframes = 6;
  double margin = 8.0;      // world-space border around the drawn extent
  double pixels_per_meter = 4.0;
};

// Scene snapshot: lane geometry, vehicle footprints at the keyframe time and
// the ego path up to that time.
std::string render_frame_svg(const EpisodeLog& log, const LaneMap& map,
                             int frame_index, const PlotOptions& options);

// Velocity / acceleration / curvature strips for the ego over the episode.
std::string render_metrics_svg(const EpisodeLog& log, const PlotOptions& options);

// Writes `keyframes` evenly spaced frame SVGs plus one metrics SVG using
// `prefix` ("<prefix>_k00.svg", ..., "<prefix>_metrics.svg"). Returns the
// paths written.
std::vector<std::string> write_episode_plots(const EpisodeLog& log, const LaneMap& map,
                                             const std::string& prefix,
                                             const PlotOptions& options);

}  // namespace gbp
