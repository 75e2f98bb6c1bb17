#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "gbp/planner.hpp"

namespace gbp {

// Built-in benchmark maps.
LaneMap make_ring_map(double radius = 120.0, double lane_width = 3.5,
                      double speed_limit = 15.0);
LaneMap make_double_merge_map(double upstream_length = 450.0,
                              double shared_length = 150.0,
                              double lane_width = 3.5, double speed_limit = 9.0);

struct AgentSpawn {
  int id = 0;
  LaneId lane = kNoLane;
  double s = 0.0;
  double velocity = 0.0;
  double desired_velocity = 0.0;
  double aggressiveness = 0.5;  // 0 timid .. 1 pushy
};

struct EgoSpawn {
  LaneId lane = kNoLane;
  double s = 0.0;
  double velocity = 0.0;
  double desired_velocity = 10.0;
};

struct ScenarioConfig {
  std::string name = "custom";
  std::string map_json;  // serialized LaneMap
  EgoSpawn ego;
  std::vector<AgentSpawn> agents;
  PlannerConfig planner;
  double duration = 75.0;  // simulated seconds
  double env_dt = 0.05;
  std::uint64_t seed = 0;
  // Agent parameter randomization half-width (fraction of nominal).
  double param_spread = 0.3;
};

// Seeded scenario factories used by the benchmark suite.
ScenarioConfig make_ring_scenario(std::uint64_t seed, PlannerMode mode, int agent_count = 10);
ScenarioConfig make_double_merge_scenario(std::uint64_t seed, PlannerMode mode,
                                          int agent_count = 12);

struct MetricThresholds {
  double uncomfortable_decel = 1.6;    // m/s^2
  double curvature_change = 0.12;      // 1/(s*m)
  // Below standstill spacing so queueing at the jam equilibrium never
  // counts; only genuine squeezes and speed tailgating do.
  double min_safe_distance = 1.5;      // m, bumper-to-bumper floor
  double rss_fraction = 0.5;           // unsafe below rss_fraction * RSS gap
  RssParams rss;
  double lateral_overlap = 2.2;
};

struct BenchmarkMetrics {
  double safety_fraction = 0.0;  // fraction of frames below the safe distance
  double avg_velocity = 0.0;     // m/s, ego
  double ud_per_km = 0.0;        // uncomfortable-deceleration events per km
  double lcc_per_km = 0.0;       // large-curvature-change events per km
  double distance_km = 0.0;
  int collisions = 0;
  int emergency_cycles = 0;
};

// Ego-centric metrics from a recorded episode. Distances and gaps are
// measured the same way the online evaluation measures them, so replaying a
// saved log reproduces the numbers exactly.
BenchmarkMetrics compute_metrics(const EpisodeLog& log, const LaneMap& map,
                                 const MetricThresholds& thresholds);

// Multi-agent traffic world. Agents combine IDM, MOBIL lane changes and
// pure-pursuit steering with per-agent randomized parameters; the ego
// replays the planner's latest committed trace.
class Environment : public EnvironmentInterface {
 public:
  explicit Environment(const ScenarioConfig& config);

  WorldState snapshot() const override;
  void commit_trace(const std::vector<TimedEgoState>& trace) override;
  void advance(double dt) override;
  bool done() const override;

  double time() const { return time_; }
  const EpisodeLog& log() const { return log_; }
  bool ego_collided() const { return ego_collided_; }
  int emergency_cycles() const { return emergency_cycles_; }
  // Bumps the counter and appends an "emergency" event line to the log.
  void count_emergency_cycle();
  const LaneMap& map() const { return *map_; }

 private:
  struct Agent {
    Vehicle vehicle;
    IdmParams idm;
    MobilParams mobil;
    PurePursuitParams pursuit;
    double change_threshold = 0.2;
    double decision_period = 0.75;
    double next_decision = 0.0;
    double cooldown_until = 0.0;
    LaneId target_lane = kNoLane;
    std::shared_ptr<const Corridor> corridor;
    int self_hint = -1;
    NoiseStream noise;
    bool retired = false;
  };

  void spawn_agents(const ScenarioConfig& config);
  void step_agent(Agent& agent, const WorldState& world, double dt);
  void maybe_change_lane(Agent& agent, const WorldState& world);
  void record_frame();
  void log_event(const std::string& kind, std::initializer_list<std::pair<const char*, double>> fields);

  LaneMapPtr map_;
  ScenarioConfig config_;
  double time_ = 0.0;
  double duration_ = 75.0;
  Vehicle ego_;
  bool ego_active_ = true;
  bool ego_collided_ = false;
  int emergency_cycles_ = 0;
  std::vector<TimedEgoState> ego_trace_;
  std::vector<Agent> agents_;
  CorridorCache corridors_;
  EpisodeLog log_;
};

struct EpisodeResult {
  EpisodeLog log;
  BenchmarkMetrics metrics;
  std::vector<ReplanRecord> records;
};

// Runs one full planning episode (20 Hz replanning against the environment)
// and computes its metrics.
EpisodeResult run_episode(const ScenarioConfig& config, const CycleSink& sink = nullptr);

struct BenchmarkRow {
  std::string map;
  std::string mode;
  std::uint64_t seed = 0;
  BenchmarkMetrics metrics;
};

struct BenchmarkOptions {
  std::vector<std::string> maps = {"double_merge", "ring"};
  std::vector<PlannerMode> modes = {PlannerMode::kEudm, PlannerMode::kEdm,
                                    PlannerMode::kMpdm};
  int episodes = 10;        // seeds per (map, mode)
  std::uint64_t seed = 1;   // base seed
  double duration = 60.0;
  int agent_count = 0;      // 0: the scenario factory's default
  int threads = 0;          // 0: hardware concurrency
};

std::vector<BenchmarkRow> run_benchmark(const BenchmarkOptions& options);

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows);
std::vector<BenchmarkRow> benchmark_rows_from_csv(const std::string& csv);
std::string benchmark_markdown(const std::vector<BenchmarkRow>& rows);

}  // namespace gbp
