#pragma once

#include <iosfwd>
#include <string>

#include "gbp/planner.hpp"
#include "gbp/sim_env.hpp"

namespace gbp {

// PlannerConfig <-> JSON. Loading starts from defaults and overrides the
// keys present in the document; unknown keys raise ConfigError so typos do
// not silently fall back to defaults.
PlannerConfig planner_config_from_json(const std::string& text);
PlannerConfig load_planner_config_file(const std::string& path);
std::string planner_config_to_json(const PlannerConfig& cfg);

// Standalone scene description consumed by `plan`: a map (inline or file
// reference), vehicles placed either in lane coordinates or Cartesian pose,
// optional per-vehicle beliefs, and the ongoing action.
struct Scene {
  WorldState world;
  BeliefMap beliefs;
  SemanticAction ongoing{LateralAction::kLaneKeep, LongitudinalAction::kMaintain, 2.0};
};

Scene scene_from_json(const std::string& text, const std::string& base_dir = "");
Scene load_scene_file(const std::string& path);

ScenarioConfig scenario_config_from_json(const std::string& text,
                                         const std::string& base_dir = "");
ScenarioConfig load_scenario_config_file(const std::string& path);

// Episode log writer (JSON-lines: header line, frame lines, event lines).
std::string episode_log_to_jsonl(const EpisodeLog& log);
void write_episode_log(const EpisodeLog& log, const std::string& path);

// Per-cycle planner trace writer. One JSON object per line with the
// candidate set, rewards, scenario set, belief snapshot and the emitted ego
// trace.
class TraceWriter {
 public:
  explicit TraceWriter(std::ostream& out) : out_(out) {}
  void write_cycle(const PlanResult* result, const ReplanRecord& record,
                   const BeliefMap& beliefs, const WorldState& world);

 private:
  std::ostream& out_;
};

std::string plan_result_to_json(const PlanResult& result);

}  // namespace gbp
