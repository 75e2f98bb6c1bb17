#include "gbp/planner.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <functional>
#include <mutex>
#include <thread>

#include "gbp/errors.hpp"
#include "gbp/rng.hpp"

namespace gbp {

namespace {

constexpr double kEps = 1e-9;

}  // namespace

const char* to_string(PlannerMode m) {
  switch (m) {
    case PlannerMode::kEudm: return "EUDM";
    case PlannerMode::kEdm: return "EDM";
    case PlannerMode::kMpdm: return "MPDM";
  }
  return "EUDM";
}

std::optional<PlannerMode> planner_mode_from_string(const std::string& s) {
  std::string upper;
  upper.reserve(s.size());
  for (char c : s) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (upper == "EUDM") return PlannerMode::kEudm;
  if (upper == "EDM") return PlannerMode::kEdm;
  if (upper == "MPDM") return PlannerMode::kMpdm;
  return std::nullopt;
}

int PlannerConfig::tree_height() const {
  return std::max(1, static_cast<int>(std::llround(horizon / node_duration)));
}

void PlannerConfig::validate() const {
  if (horizon <= 0.0 || node_duration <= 0.0 || sim_resolution <= 0.0 || replan_dt <= 0.0)
    throw ConfigError("planner durations must be positive");
  if (std::abs(horizon - tree_height() * node_duration) > 1e-9)
    throw ConfigError("horizon must be an integer multiple of node_duration");
  double per_node = node_duration / sim_resolution;
  if (std::abs(per_node - std::llround(per_node)) > 1e-9)
    throw ConfigError("sim_resolution must divide node_duration");
  if (replan_dt > node_duration + 1e-9)
    throw ConfigError("replan_dt must not exceed node_duration");
  if (rewards.efficiency < 0.0 || rewards.safety < 0.0 || rewards.consistency < 0.0 ||
      rewards.risky_penalty < 0.0)
    throw ConfigError("reward weights must be nonnegative");
  if (cfb.top_k < 1) throw ConfigError("cfb top_k must be at least 1");
  if (cfb.uncertainty_threshold <= 0.0 || cfb.uncertainty_threshold > 1.0)
    throw ConfigError("cfb uncertainty_threshold must lie in (0, 1]");
  if (cfb.max_enumerated_vehicles < 0) throw ConfigError("cfb vehicle cap must be nonnegative");
  if (cfb.combination_cap < 1) throw ConfigError("cfb combination cap must be at least 1");
  if (sim.substeps < 1) throw ConfigError("sim substeps must be at least 1");
}

namespace {

using EgoBehaviorFn = std::function<ResolvedBehavior(const SemanticAction&)>;

std::map<int, NoiseStream> make_streams(const WorldState& world, std::uint64_t cycle_seed,
                                        int sequence_index, int scenario_index) {
  std::map<int, NoiseStream> streams;
  for (const Vehicle& veh : world.vehicles) {
    streams.emplace(veh.params.id,
                    NoiseStream::substream(cycle_seed, static_cast<std::uint64_t>(sequence_index),
                                           static_cast<std::uint64_t>(scenario_index),
                                           static_cast<std::uint64_t>(veh.params.id)));
  }
  return streams;
}

// Shared rollout core: agents arrive pre-resolved, the ego behavior is
// rebuilt from `ego_for` at every node boundary with projection hints
// carried over.
Rollout run_policy_rollout(const WorldState& world, BehaviorMap behaviors,
                           const EgoBehaviorFn& ego_for,
                           const std::vector<SemanticAction>& policy, double total_horizon,
                           double resolution, const SimulationParams& sim,
                           std::map<int, NoiseStream> streams) {
  std::vector<SemanticAction> actions = policy;
  if (actions.empty()) actions.push_back({});
  double total = total_horizon;
  if (total <= 0.0) {
    total = 0.0;
    for (const SemanticAction& action : actions) total += action.duration;
  }

  Rollout rollout;
  rollout.step = resolution;
  rollout.states.push_back(world);

  auto ego_it = behaviors.insert_or_assign(world.ego_id, ego_for(actions[0])).first;
  StepAnnotation initial;
  if (ego_it->second.corridor)
    initial = annotate_world(world, *ego_it->second.corridor, sim, -1, &ego_it->second.hints);
  rollout.annotations.push_back(initial);
  rollout.collision |= initial.any_collision;
  rollout.ego_collision |= initial.ego_collision;
  rollout.max_rss_shortfall = std::max(rollout.max_rss_shortfall, initial.rss_shortfall);

  WorldState current = world;
  double elapsed = 0.0;
  std::size_t action_index = 0;
  double action_end = actions[0].duration;
  for (double step_dt : horizon_steps(total, resolution)) {
    while (action_index + 1 < actions.size() && elapsed >= action_end - kEps) {
      ++action_index;
      action_end += actions[action_index].duration;
      ResolvedBehavior next = ego_for(actions[action_index]);
      next.hints = std::move(ego_it->second.hints);
      ego_it->second = std::move(next);
    }
    StepAnnotation annotation;
    current = step_closed_loop(current, behaviors, step_dt, sim,
                               streams.empty() ? nullptr : &streams, &annotation);
    elapsed += step_dt;
    rollout.states.push_back(current);
    rollout.annotations.push_back(annotation);
    rollout.collision |= annotation.any_collision;
    rollout.ego_collision |= annotation.ego_collision;
    rollout.ego_wall_overrun |= annotation.ego_wall_overrun;
    rollout.max_rss_shortfall = std::max(rollout.max_rss_shortfall, annotation.rss_shortfall);
  }
  return rollout;
}

}  // namespace

Rollout rollout_scenario(const WorldState& world, const Scenario& scenario,
                         const PolicySequence& sequence, const PlannerConfig& cfg,
                         const CorridorCache& corridors, std::uint64_t cycle_seed,
                         int sequence_index, int scenario_index) {
  const LaneMap& map = *world.map;
  const Vehicle& ego = world.ego();
  auto origin = nearest_lane(map, ego.state.position);
  if (!origin) throw OffMap("ego is off the map");

  BehaviorMap behaviors;
  for (const Vehicle& veh : world.vehicles) {
    if (veh.params.id == world.ego_id) continue;
    LateralAction lateral = LateralAction::kLaneKeep;
    auto it = scenario.assignment.find(veh.params.id);
    if (it != scenario.assignment.end()) lateral = it->second;
    try {
      behaviors.emplace(veh.params.id,
                        resolve_behavior(world, veh.params.id, lateral,
                                         LongitudinalAction::kMaintain, cfg.sim, corridors));
    } catch (const NoSuchNeighbor&) {
      behaviors.emplace(veh.params.id,
                        resolve_behavior(world, veh.params.id, LateralAction::kLaneKeep,
                                         LongitudinalAction::kMaintain, cfg.sim, corridors));
    } catch (const OffMap&) {
      // Off-map vehicles coast straight ahead without a corridor.
    }
  }

  EgoBehaviorFn ego_for = [&map, &ego, &cfg, &corridors, origin](const SemanticAction& action) {
    LaneId target = action.lateral == LateralAction::kLaneKeep
                        ? *origin
                        : target_lane_for(map, action.lateral, *origin);
    ResolvedBehavior behavior;
    behavior.target_lane = target;
    behavior.corridor = corridors.get(target);
    behavior.desired_velocity = action_target_velocity(
        action.longitudinal, ego.params.desired_velocity, map.lane(target).speed_limit, cfg.sim);
    return behavior;
  };

  return run_policy_rollout(world, std::move(behaviors), ego_for, sequence.actions,
                            sequence.total_horizon, cfg.sim_resolution, cfg.sim,
                            make_streams(world, cycle_seed, sequence_index, scenario_index));
}

PolicyEvaluation evaluate_policy(const PolicySequence& sequence,
                                 const std::vector<Scenario>& scenarios,
                                 const std::vector<Rollout>& rollouts,
                                 const PolicySequence* last_best,
                                 const RewardWeights& weights, double desired_velocity) {
  PolicyEvaluation evaluation;
  evaluation.sequence = sequence;
  double consistency =
      last_best ? static_cast<double>(PolicySequence::action_distance(sequence, *last_best)) : 0.0;

  bool any_clean = false;
  double weighted = 0.0;
  for (std::size_t i = 0; i < scenarios.size() && i < rollouts.size(); ++i) {
    const Rollout& rollout = rollouts[i];
    double efficiency = 0.0;
    double shortfall = 0.0;
    std::size_t steps = rollout.states.size() > 1 ? rollout.states.size() - 1 : 0;
    for (std::size_t k = 1; k < rollout.states.size(); ++k) {
      const Vehicle* ego = rollout.states[k].find(rollout.states[k].ego_id);
      if (ego) efficiency += std::abs(ego->state.velocity - desired_velocity);
      if (k < rollout.annotations.size()) shortfall += rollout.annotations[k].rss_shortfall;
    }
    if (steps > 0) {
      efficiency /= static_cast<double>(steps);
      shortfall /= static_cast<double>(steps);
    }
    ScenarioOutcome outcome;
    outcome.scenario = scenarios[i];
    outcome.collided = rollout.ego_collision;
    outcome.risky =
        rollout.ego_collision || rollout.ego_wall_overrun || rollout.max_rss_shortfall > 0.0;
    outcome.reward = -weights.efficiency * efficiency - weights.safety * shortfall -
                     weights.consistency * consistency;
    if (outcome.risky) outcome.reward -= weights.risky_penalty;
    weighted += scenarios[i].probability * outcome.reward;
    any_clean |= !rollout.ego_collision;
    evaluation.outcomes.push_back(std::move(outcome));
  }
  evaluation.weighted_reward = weighted;
  evaluation.feasible = any_clean && !evaluation.outcomes.empty();
  return evaluation;
}

namespace {

// Per-cycle behavior templates: lateral resolution, corridor lookup and
// desired-velocity bookkeeping hoisted out of the per-rollout loop.
struct AgentTemplates {
  std::array<std::optional<ResolvedBehavior>, 3> by_lateral;
};

struct CandidateResult {
  PolicyEvaluation evaluation;
  std::vector<TimedEgoState> map_trace;
  bool map_collision = false;
};

double corridor_forward_length(const LaneMap& map, const PlannerConfig& cfg) {
  double longest = 0.0;
  double fastest = 0.0;
  for (const Lane& lane : map.lanes) {
    longest = std::max(longest, lane.length());
    fastest = std::max(fastest, lane.speed_limit);
  }
  return longest + cfg.horizon * fastest * cfg.sim.speed_limit_tolerance + 60.0;
}

double corridor_backward_length(const LaneMap& map, const PlannerConfig& cfg) {
  double fastest = 0.0;
  for (const Lane& lane : map.lanes) fastest = std::max(fastest, lane.speed_limit);
  return std::max(cfg.cfb.lookback_time * fastest * cfg.sim.speed_limit_tolerance,
                  cfg.cfb.backward_floor) +
         20.0;
}

}  // namespace

std::shared_ptr<const CorridorCache> make_plan_corridors(const WorldState& world,
                                                         const PlannerConfig& cfg) {
  if (!world.map) throw OffMap("world has no lane map");
  auto corridors = std::make_shared<CorridorCache>(
      world.map, corridor_backward_length(*world.map, cfg),
      corridor_forward_length(*world.map, cfg));
  // Warm every entry up front; afterwards concurrent readers never insert.
  for (const Lane& lane : world.map->lanes) {
    corridors->get(lane.id);
    corridors->ends_at_wall(lane.id);
  }
  return corridors;
}

PlanResult plan_once(const WorldState& world, const BeliefMap& beliefs,
                     const SemanticAction& ongoing, const PlannerConfig& cfg,
                     const PlanContext& ctx) {
  cfg.validate();
  if (!world.map) throw OffMap("world has no lane map");
  const LaneMap& map = *world.map;
  const Vehicle& ego = world.ego();
  auto origin_opt = nearest_lane(map, ego.state.position);
  if (!origin_opt) throw OffMap("ego is off the map");
  LaneId origin = *origin_opt;

  // A lane change whose target lane is now the lane under the ego has been
  // completed; re-root the tree as lane keeping so lateral actions stay
  // anchored to the current lane.
  SemanticAction root = ongoing;
  if (root.lateral != LateralAction::kLaneKeep) {
    if (ctx.ongoing_target && *ctx.ongoing_target == origin)
      root.lateral = LateralAction::kLaneKeep;
    else if (!try_target_lane_for(map, root.lateral, origin))
      root.lateral = LateralAction::kLaneKeep;
  }

  const Lane& origin_lane = map.lane(origin);
  LateralFeasibility feasibility;
  feasibility.lcl = origin_lane.left_neighbor.has_value();
  feasibility.lcr = origin_lane.right_neighbor.has_value();

  int height = cfg.tree_height();
  std::vector<SemanticAction> action_set = full_action_set(cfg.node_duration);
  std::vector<PolicySequence> candidates;
  int pruned = 0;
  if (cfg.mode == PlannerMode::kMpdm) {
    candidates = mpdm_sequences(action_set, height, feasibility);
    pruned = static_cast<int>(action_set.size()) - static_cast<int>(candidates.size());
  } else {
    DcpTree tree = update_dcp_tree(action_set, root, height, feasibility);
    candidates = extract_policy_sequences(tree);
    pruned = tree.pre_prune_leaf_count - tree.leaf_count;
  }

  std::shared_ptr<const CorridorCache> corridor_cache =
      ctx.corridors ? ctx.corridors : make_plan_corridors(world, cfg);
  const CorridorCache& corridors = *corridor_cache;

  std::map<int, AgentTemplates> agent_templates;
  for (const Vehicle& veh : world.vehicles) {
    if (veh.params.id == world.ego_id) continue;
    auto lane = nearest_lane(map, veh.state.position);
    if (!lane) continue;
    AgentTemplates templates;
    for (LateralAction lateral : {LateralAction::kLaneKeep, LateralAction::kLaneChangeLeft,
                                  LateralAction::kLaneChangeRight}) {
      auto target = lateral == LateralAction::kLaneKeep ? lane
                                                        : try_target_lane_for(map, lateral, *lane);
      if (!target) continue;
      ResolvedBehavior behavior;
      behavior.target_lane = *target;
      behavior.corridor = corridors.get(*target);
      behavior.desired_velocity = action_target_velocity(
          LongitudinalAction::kMaintain, veh.params.desired_velocity,
          map.lane(*target).speed_limit, cfg.sim);
      templates.by_lateral[static_cast<int>(lateral)] = std::move(behavior);
    }
    agent_templates.emplace(veh.params.id, std::move(templates));
  }

  std::array<std::optional<ResolvedBehavior>, 9> ego_templates;
  for (LateralAction lateral : {LateralAction::kLaneKeep, LateralAction::kLaneChangeLeft,
                                LateralAction::kLaneChangeRight}) {
    auto target = lateral == LateralAction::kLaneKeep ? origin_opt
                                                      : try_target_lane_for(map, lateral, origin);
    if (!target) continue;
    for (LongitudinalAction lon : {LongitudinalAction::kAccelerate, LongitudinalAction::kMaintain,
                                   LongitudinalAction::kDecelerate}) {
      ResolvedBehavior behavior;
      behavior.target_lane = *target;
      behavior.corridor = corridors.get(*target);
      behavior.desired_velocity = action_target_velocity(
          lon, ego.params.desired_velocity, map.lane(*target).speed_limit, cfg.sim);
      ego_templates[static_cast<int>(lateral) * 3 + static_cast<int>(lon)] = std::move(behavior);
    }
  }
  EgoBehaviorFn ego_for = [&ego_templates](const SemanticAction& action) {
    int index = static_cast<int>(action.lateral) * 3 + static_cast<int>(action.longitudinal);
    if (!ego_templates[index]) index = static_cast<int>(action.longitudinal);  // lane-keep fallback
    return *ego_templates[index];
  };

  // Scenario branching context, shared by every candidate sequence.
  std::vector<int> key = select_key_vehicles(world, cfg.cfb, corridors);
  UncertainSplit split = select_uncertain_vehicles(key, beliefs, cfg.cfb);
  std::map<int, LateralAction> map_assignment = map_assignment_for(key, beliefs);
  // The open-loop probe only gates branching; a single integration substep
  // per simulation step keeps it cheap without moving any decision boundary
  // that the closed-loop evaluation would not redraw anyway.
  SimulationParams probe_sim = cfg.sim;
  probe_sim.substeps = 1;
  // Agents never react in the probes, so their trajectories are shared by
  // every candidate sequence of this cycle.
  std::optional<OpenLoopBackdrop> probe_backdrop;
  if (cfg.mode == PlannerMode::kEudm && !split.uncertain.empty() && !candidates.empty()) {
    probe_backdrop = build_open_loop_backdrop(world, split.uncertain,
                                              candidates.front().total_horizon,
                                              cfg.sim_resolution, probe_sim, corridors);
  }

  auto scenarios_for = [&](const PolicySequence& sequence) -> std::vector<Scenario> {
    if (cfg.mode != PlannerMode::kEudm) {
      Scenario map_scenario;
      map_scenario.assignment = map_assignment;
      map_scenario.probability = 1.0;
      map_scenario.origin = ScenarioOrigin::kMapOnly;
      return {map_scenario};
    }
    std::vector<int> risky;
    for (int vehicle : split.uncertain) {
      for (LateralAction hypothesis : {LateralAction::kLaneKeep, LateralAction::kLaneChangeLeft,
                                       LateralAction::kLaneChangeRight}) {
        if (!open_loop_assess(world, vehicle, hypothesis, sequence.actions, cfg.sim_resolution,
                              probe_sim, corridors,
                              probe_backdrop ? &*probe_backdrop : nullptr)) {
          risky.push_back(vehicle);
          break;
        }
      }
    }
    try {
      return top_k_marginalize(
          enumerate_scenarios(world, risky, beliefs, map_assignment, cfg.cfb.combination_cap),
          cfg.cfb.top_k);
    } catch (const TooManyCombinations&) {
      return cfb_overflow_fallback(world, risky, beliefs, map_assignment);
    }
  };

  auto behaviors_for = [&](const Scenario& scenario) {
    BehaviorMap behaviors;
    for (const auto& [id, templates] : agent_templates) {
      LateralAction lateral = LateralAction::kLaneKeep;
      auto it = scenario.assignment.find(id);
      if (it != scenario.assignment.end()) lateral = it->second;
      const std::optional<ResolvedBehavior>& entry = templates.by_lateral[static_cast<int>(lateral)];
      behaviors.emplace(id, entry ? *entry : *templates.by_lateral[0]);
    }
    return behaviors;
  };

  std::vector<CandidateResult> results(candidates.size());
  // Without a previous plan the consistency term anchors to continuing the
  // ongoing action, so near-ties cannot drift into gratuitous maneuvers on
  // the very first cycle.
  PolicySequence cold_anchor;
  if (!ctx.last_best) {
    cold_anchor.actions.assign(
        static_cast<std::size_t>(height),
        SemanticAction{root.lateral, root.longitudinal, cfg.node_duration});
    cold_anchor.total_horizon = cfg.horizon;
  }
  const PolicySequence* last_best = ctx.last_best ? &*ctx.last_best : &cold_anchor;
  auto evaluate_candidate = [&](std::size_t index) {
    const PolicySequence& sequence = candidates[index];
    std::vector<Scenario> scenarios = scenarios_for(sequence);
    std::vector<Rollout> rollouts;
    rollouts.reserve(scenarios.size());
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
      rollouts.push_back(run_policy_rollout(
          world, behaviors_for(scenarios[s]), ego_for, sequence.actions, sequence.total_horizon,
          cfg.sim_resolution, cfg.sim,
          make_streams(world, ctx.cycle_seed, static_cast<int>(index), static_cast<int>(s))));
    }
    CandidateResult& result = results[index];
    result.evaluation = evaluate_policy(sequence, scenarios, rollouts, last_best, cfg.rewards,
                                        ego.params.desired_velocity);
    std::size_t map_index = 0;
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
      if (scenarios[s].origin == ScenarioOrigin::kMapOnly) {
        map_index = s;
        break;
      }
    }
    if (map_index < rollouts.size()) {
      result.map_trace = rollouts[map_index].ego_trace();
      result.map_collision = rollouts[map_index].ego_collision;
    }
  };

  unsigned workers = 1;
  if (cfg.parallel) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(candidates.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < candidates.size(); ++i) evaluate_candidate(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto run_worker = [&] {
      while (true) {
        std::size_t i = next.fetch_add(1);
        if (i >= candidates.size()) break;
        try {
          evaluate_candidate(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 0; w + 1 < workers; ++w) pool.emplace_back(run_worker);
    run_worker();
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  int best = -1;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].evaluation.feasible) continue;
    if (best < 0) {
      best = static_cast<int>(i);
      continue;
    }
    const PolicyEvaluation& a = results[i].evaluation;
    const PolicyEvaluation& b = results[best].evaluation;
    if (a.weighted_reward > b.weighted_reward) {
      best = static_cast<int>(i);
      continue;
    }
    if (a.weighted_reward < b.weighted_reward) continue;
    bool a_last = last_best && a.sequence.same_actions(*last_best);
    bool b_last = last_best && b.sequence.same_actions(*last_best);
    if (a_last != b_last) {
      if (a_last) best = static_cast<int>(i);
      continue;
    }
    if (PolicySequence::lexicographic_less(a.sequence, b.sequence)) best = static_cast<int>(i);
  }
  if (best < 0)
    throw NoFeasiblePolicy("all " + std::to_string(candidates.size()) +
                           " candidate sequences collide in every scenario");

  PlanResult result;
  result.best = candidates[best];
  result.best_index = best;
  result.next_ongoing = advance_ongoing(result.best, cfg.replan_dt, cfg.node_duration);
  if (result.next_ongoing.lateral != LateralAction::kLaneKeep) {
    if (root.lateral == result.next_ongoing.lateral && ctx.ongoing_target) {
      result.next_ongoing_target = *ctx.ongoing_target;
    } else if (auto target = try_target_lane_for(map, result.next_ongoing.lateral, origin)) {
      result.next_ongoing_target = *target;
    }
  }
  result.ego_trace = std::move(results[best].map_trace);
  result.map_rollout_collision = results[best].map_collision;
  result.evaluations.reserve(results.size());
  for (CandidateResult& candidate : results)
    result.evaluations.push_back(std::move(candidate.evaluation));
  result.pruned_sequences = pruned;
  return result;
}

std::vector<TimedEgoState> emergency_stop_trace(const WorldState& world,
                                                const PlannerConfig& cfg) {
  const Vehicle& ego = world.ego();
  std::shared_ptr<const Corridor> corridor;
  if (world.map) {
    auto lane = nearest_lane(*world.map, ego.state.position);
    if (lane) {
      CorridorCache corridors(world.map, corridor_backward_length(*world.map, cfg),
                              corridor_forward_length(*world.map, cfg));
      corridor = corridors.get(*lane);
    }
  }

  std::vector<TimedEgoState> trace;
  VehicleState state = ego.state;
  trace.push_back({world.time, state});
  const double decel = cfg.sim.idm.comfortable_decel;
  const int substeps = std::max(1, cfg.sim.substeps);
  double elapsed = 0.0;
  for (double step_dt : horizon_steps(cfg.horizon, cfg.sim_resolution)) {
    double sub_dt = step_dt / substeps;
    for (int k = 0; k < substeps; ++k) {
      double steer_cmd = 0.0;
      if (corridor) {
        try {
          steer_cmd = pure_pursuit_steer(state, *corridor, 0.0, cfg.sim.pursuit);
        } catch (const PathExhausted&) {
          steer_cmd = 0.0;
        }
      }
      double steer_step = cfg.sim.max_steer_rate * sub_dt;
      double steer = std::clamp(steer_cmd, state.steering_angle - steer_step,
                                state.steering_angle + steer_step);
      steer = std::clamp(steer, -cfg.sim.pursuit.max_steer, cfg.sim.pursuit.max_steer);
      double velocity = std::max(0.0, state.velocity - decel * sub_dt);
      double wheelbase = std::max(ego.params.wheelbase, 1e-9);
      double heading =
          normalize_angle(state.heading + velocity * std::tan(steer) / wheelbase * sub_dt);
      state.position =
          state.position + Vec2{std::cos(heading), std::sin(heading)} * (velocity * sub_dt);
      state.heading = heading;
      state.velocity = velocity;
      state.acceleration = -decel;
      state.steering_angle = steer;
      state.curvature = std::tan(steer) / wheelbase;
    }
    elapsed += step_dt;
    trace.push_back({world.time + elapsed, state});
  }
  return trace;
}

void BeliefTracker::update(const WorldState& world, double dt, const SimulationParams& sim,
                           const CorridorCache* corridors) {
  BeliefMap next;
  for (const Vehicle& veh : world.vehicles) {
    if (veh.params.id == world.ego_id) continue;
    BeliefFeatures features;
    try {
      features = extract_features(world, veh.params.id, sim, corridors);
    } catch (const PlanningError&) {
      continue;  // off-map vehicles carry no intention estimate
    }
    auto it = beliefs_.find(veh.params.id);
    IntentionBelief prev =
        it != beliefs_.end()
            ? it->second
            : IntentionBelief::uniform_feasible(veh.params.id, features.left.present,
                                                features.right.present);
    next.emplace(veh.params.id, update_belief(prev, features, dt, params_));
  }
  beliefs_ = std::move(next);
}

std::vector<ReplanRecord> replan_loop(EnvironmentInterface& env, const PlannerConfig& cfg,
                                      int max_cycles, const CycleSink& sink) {
  cfg.validate();
  std::vector<ReplanRecord> records;
  BeliefTracker tracker;
  PlanContext ctx;
  SemanticAction ongoing{LateralAction::kLaneKeep, LongitudinalAction::kMaintain,
                         cfg.node_duration};
  const LaneMap* corridors_for = nullptr;
  for (int cycle = 0; cycle < max_cycles && !env.done(); ++cycle) {
    WorldState world = env.snapshot();
    ctx.cycle_seed = hash_combine(cfg.seed, static_cast<std::uint64_t>(cycle));
    if (world.map && corridors_for != world.map.get()) {
      ctx.corridors = make_plan_corridors(world, cfg);
      corridors_for = world.map.get();
    }
    tracker.update(world, cfg.replan_dt, cfg.sim, ctx.corridors.get());

    ReplanRecord record;
    record.cycle = cycle;
    record.time = world.time;

    auto start = std::chrono::steady_clock::now();
    std::optional<PlanResult> result;
    try {
      result = plan_once(world, tracker.beliefs(), ongoing, cfg, ctx);
    } catch (const NoFeasiblePolicy&) {
      result.reset();
    }
    record.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();

    if (result) {
      record.candidate_count = static_cast<int>(result->evaluations.size());
      record.selected_signature = result->best.signature();
      record.selected_reward = result->evaluations[result->best_index].weighted_reward;
      record.scenario_count =
          static_cast<int>(result->evaluations[result->best_index].outcomes.size());
      record.ego_trace = result->ego_trace;
      env.commit_trace(result->ego_trace);
      ongoing = result->next_ongoing;
      ctx.last_best = result->best;
      if (result->next_ongoing_target != kNoLane)
        ctx.ongoing_target = result->next_ongoing_target;
      else
        ctx.ongoing_target.reset();
      if (sink) sink(&*result, record, tracker.beliefs(), world);
    } else {
      record.emergency = true;
      record.selected_signature = "EMERGENCY";
      record.ego_trace = emergency_stop_trace(world, cfg);
      env.commit_trace(record.ego_trace);
      ongoing = SemanticAction{LateralAction::kLaneKeep, LongitudinalAction::kDecelerate,
                               cfg.node_duration};
      ctx.last_best.reset();
      ctx.ongoing_target.reset();
      if (sink) sink(nullptr, record, tracker.beliefs(), world);
    }
    records.push_back(std::move(record));
    env.advance(cfg.replan_dt);
  }
  return records;
}

}  // namespace gbp
