#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gbp/cfb.hpp"
#include "gbp/dcp_tree.hpp"

namespace gbp {

enum class PlannerMode { kEudm, kEdm, kMpdm };

const char* to_string(PlannerMode m);
std::optional<PlannerMode> planner_mode_from_string(const std::string& s);

struct RewardWeights {
  double efficiency = 1.0;   // w_e
  double safety = 2.0;       // w_s
  double consistency = 0.3;  // w_c
  double risky_penalty = 100.0;
};

struct PlannerConfig {
  PlannerMode mode = PlannerMode::kEudm;
  double horizon = 8.0;
  double node_duration = 2.0;
  double sim_resolution = 0.4;
  double replan_dt = 0.05;
  bool parallel = true;
  std::uint64_t seed = 0;

  RewardWeights rewards;
  CfbConfig cfb;
  SimulationParams sim;

  int tree_height() const;
  // horizon = node_duration * height, resolution divides node_duration,
  // replan_dt <= node_duration. Throws ConfigError otherwise.
  void validate() const;
};

struct ScenarioOutcome {
  Scenario scenario;
  double reward = 0.0;
  bool risky = false;      // collision or positive RSS shortfall
  bool collided = false;   // ego footprint overlap
};

struct PolicyEvaluation {
  PolicySequence sequence;
  std::vector<ScenarioOutcome> outcomes;
  double weighted_reward = 0.0;
  bool feasible = true;  // false when every scenario rollout collides
};

// Closed-loop rollout of one (sequence, scenario) pair. Noise streams are
// derived from (seed, sequence index, scenario index, vehicle id) so results
// do not depend on evaluation order.
Rollout rollout_scenario(const WorldState& world, const Scenario& scenario,
                         const PolicySequence& sequence, const PlannerConfig& cfg,
                         const CorridorCache& corridors, std::uint64_t cycle_seed,
                         int sequence_index, int scenario_index);

// Scenario-weighted reward: efficiency (mean |v - v_desired|), safety (mean
// RSS shortfall), consistency (action distance to the previous best), and a
// risky penalty applied inside each scenario term.
PolicyEvaluation evaluate_policy(const PolicySequence& sequence,
                                 const std::vector<Scenario>& scenarios,
                                 const std::vector<Rollout>& rollouts,
                                 const PolicySequence* last_best,
                                 const RewardWeights& weights, double desired_velocity);

struct PlanResult {
  PolicySequence best;
  int best_index = -1;
  SemanticAction next_ongoing;
  LaneId next_ongoing_target = kNoLane;  // lane a lateral next_ongoing steers to
  std::vector<TimedEgoState> ego_trace;  // MAP-scenario rollout of the best
  bool map_rollout_collision = false;
  std::vector<PolicyEvaluation> evaluations;  // per candidate, tree order
  int pruned_sequences = 0;
};

struct PlanContext {
  std::optional<PolicySequence> last_best;
  std::uint64_t cycle_seed = 0;
  // Lane the ongoing lateral action has been steering toward; once the ego's
  // nearest lane equals it, the ongoing action is treated as completed and
  // re-rooted as lane-keep.
  std::optional<LaneId> ongoing_target;
  // Prewarmed corridor cache shared across cycles on the same map; when
  // absent, plan_once builds a fresh one per call.
  std::shared_ptr<const CorridorCache> corridors;
};

// Fully warmed corridor cache sized for the configured horizon. Reusable
// across plan_once calls while the map stays the same.
std::shared_ptr<const CorridorCache> make_plan_corridors(const WorldState& world,
                                                         const PlannerConfig& cfg);

// One full decision cycle: rebuild the action tree from `ongoing`, branch
// scenarios per sequence, roll out, score, and pick the best sequence.
// Throws NoFeasiblePolicy when every sequence collides in every scenario.
PlanResult plan_once(const WorldState& world, const BeliefMap& beliefs,
                     const SemanticAction& ongoing, const PlannerConfig& cfg,
                     const PlanContext& ctx = {});

// Constant-deceleration in-lane fallback trace for cycles without a feasible
// policy.
std::vector<TimedEgoState> emergency_stop_trace(const WorldState& world,
                                                const PlannerConfig& cfg);

// ---- replanning loop ----

class EnvironmentInterface {
 public:
  virtual ~EnvironmentInterface() = default;
  virtual WorldState snapshot() const = 0;
  virtual void commit_trace(const std::vector<TimedEgoState>& trace) = 0;
  virtual void advance(double dt) = 0;
  virtual bool done() const = 0;
};

struct ReplanRecord {
  int cycle = 0;
  double time = 0.0;
  int candidate_count = 0;
  std::string selected_signature;
  double selected_reward = 0.0;
  bool emergency = false;
  int scenario_count = 0;
  double latency_ms = 0.0;
  std::vector<TimedEgoState> ego_trace;
};

// Receives every cycle's full decision context; hook for the trace log.
using CycleSink = std::function<void(const PlanResult*, const ReplanRecord&,
                                     const BeliefMap&, const WorldState&)>;

// Tracks per-vehicle intention beliefs across cycles: new vehicles start at
// the feasibility-uniform prior, vanished vehicles are dropped.
class BeliefTracker {
 public:
  explicit BeliefTracker(BeliefParams params = {}) : params_(params) {}
  void update(const WorldState& world, double dt, const SimulationParams& sim,
              const CorridorCache* corridors = nullptr);
  const BeliefMap& beliefs() const { return beliefs_; }
  BeliefMap& beliefs() { return beliefs_; }

 private:
  BeliefParams params_;
  BeliefMap beliefs_;
};

// Runs plan/commit/advance cycles at replan_dt until the environment is done
// or `max_cycles` is reached. NoFeasiblePolicy cycles commit the emergency
// trace and are marked in the record.
std::vector<ReplanRecord> replan_loop(EnvironmentInterface& env, const PlannerConfig& cfg,
                                      int max_cycles, const CycleSink& sink = nullptr);

}  // namespace gbp
