#include "gbp/cfb.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "gbp/errors.hpp"

namespace gbp {

namespace {

const std::vector<LateralAction> kIntentionOrder = {
    LateralAction::kLaneKeep, LateralAction::kLaneChangeLeft, LateralAction::kLaneChangeRight};

// Intentions whose target lane exists at the vehicle's current position.
std::vector<LateralAction> feasible_intentions(const WorldState& world, int vehicle) {
  std::vector<LateralAction> out{LateralAction::kLaneKeep};
  const Vehicle* veh = world.find(vehicle);
  if (!veh) return out;
  auto lane = nearest_lane(*world.map, veh->state.position);
  if (!lane) return out;
  if (try_target_lane_for(*world.map, LateralAction::kLaneChangeLeft, *lane))
    out.push_back(LateralAction::kLaneChangeLeft);
  if (try_target_lane_for(*world.map, LateralAction::kLaneChangeRight, *lane))
    out.push_back(LateralAction::kLaneChangeRight);
  return out;
}

IntentionBelief belief_or_lk(const BeliefMap& beliefs, int vehicle) {
  auto it = beliefs.find(vehicle);
  if (it != beliefs.end()) return it->second;
  IntentionBelief b;
  b.vehicle = vehicle;
  return b;
}

bool assignment_less(const std::map<int, LateralAction>& a,
                     const std::map<int, LateralAction>& b) {
  auto key = [](const std::pair<const int, LateralAction>& e) {
    return std::pair<int, int>(e.first, static_cast<int>(e.second));
  };
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                      [&](const auto& x, const auto& y) { return key(x) < key(y); });
}

}  // namespace

std::vector<int> select_key_vehicles(const WorldState& world, const CfbConfig& cfg,
                                     const CorridorCache& corridors) {
  std::vector<int> out;
  const Vehicle& ego = world.ego();
  const LaneMap& map = *world.map;
  auto ego_lane = nearest_lane(map, ego.state.position);
  if (!ego_lane) return out;
  const Lane& lane = map.lane(*ego_lane);

  std::set<LaneId> watched{*ego_lane};
  if (lane.left_neighbor) watched.insert(*lane.left_neighbor);
  if (lane.right_neighbor) watched.insert(*lane.right_neighbor);

  auto corridor = corridors.get(*ego_lane);
  auto self = corridor->project(ego.state.position, ego.state.heading);
  double forward = std::max(cfg.lookahead_time * ego.state.velocity, cfg.forward_floor);
  double backward = std::max(cfg.lookback_time * ego.state.velocity, cfg.backward_floor);

  for (const Vehicle& veh : world.vehicles) {
    if (veh.params.id == world.ego_id) continue;
    auto veh_lane = nearest_lane(map, veh.state.position);
    if (!veh_lane || !watched.count(*veh_lane)) continue;
    auto proj = corridor->project(veh.state.position, veh.state.heading);
    double along = corridor->arc_delta(self.s, proj.s);
    if (along >= -backward && along <= forward) out.push_back(veh.params.id);
  }
  return out;
}

UncertainSplit select_uncertain_vehicles(const std::vector<int>& key_vehicles,
                                         const BeliefMap& beliefs, const CfbConfig& cfg) {
  UncertainSplit split;
  std::vector<std::pair<double, int>> candidates;  // (max probability, id)
  for (int vehicle : key_vehicles) {
    IntentionBelief belief = belief_or_lk(beliefs, vehicle);
    if (belief.max_prob() < cfg.uncertainty_threshold) {
      candidates.emplace_back(belief.max_prob(), vehicle);
    } else {
      split.confident.emplace(vehicle, map_intention(belief));
    }
  }
  std::sort(candidates.begin(), candidates.end());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    int vehicle = candidates[i].second;
    if (static_cast<int>(i) < cfg.max_enumerated_vehicles) {
      split.uncertain.push_back(vehicle);
    } else {
      split.confident.emplace(vehicle, map_intention(belief_or_lk(beliefs, vehicle)));
    }
  }
  std::sort(split.uncertain.begin(), split.uncertain.end());
  return split;
}

bool open_loop_assess(const WorldState& world, int vehicle, LateralAction hypothesis,
                      const std::vector<SemanticAction>& ego_policy, double resolution,
                      const SimulationParams& sim, const CorridorCache& corridors,
                      const OpenLoopBackdrop* backdrop) {
  Rollout rollout;
  try {
    rollout = simulate_open_loop(world, vehicle, hypothesis, ego_policy, resolution, sim,
                                 corridors, backdrop);
  } catch (const NoSuchNeighbor&) {
    return true;  // lane-infeasible hypotheses are skipped upstream; count as pass
  }
  return !rollout.ego_collision && rollout.max_rss_shortfall <= 0.0;
}

std::vector<Scenario> enumerate_scenarios(const WorldState& world,
                                          const std::vector<int>& risky,
                                          const BeliefMap& beliefs,
                                          const std::map<int, LateralAction>& map_assignment,
                                          int cap) {
  struct Axis {
    int vehicle = 0;
    std::vector<LateralAction> intentions;
    std::vector<double> masses;  // renormalized over the feasible intentions
    LateralAction map = LateralAction::kLaneKeep;
  };
  std::vector<Axis> axes;
  long long combinations = 1;
  std::vector<int> ordered = risky;
  std::sort(ordered.begin(), ordered.end());
  for (int vehicle : ordered) {
    Axis axis;
    axis.vehicle = vehicle;
    axis.intentions = feasible_intentions(world, vehicle);
    IntentionBelief belief = belief_or_lk(beliefs, vehicle);
    double mass = 0.0;
    for (LateralAction a : axis.intentions) mass += belief.prob(a);
    for (LateralAction a : axis.intentions)
      axis.masses.push_back(mass > 0.0 ? belief.prob(a) / mass : 1.0 / axis.intentions.size());
    auto it = map_assignment.find(vehicle);
    axis.map = it != map_assignment.end() ? it->second : map_intention(belief);
    combinations *= static_cast<long long>(axis.intentions.size());
    if (combinations > cap)
      throw TooManyCombinations(std::to_string(combinations) + " intention combinations exceed cap " +
                                std::to_string(cap));
    axes.push_back(std::move(axis));
  }

  std::vector<Scenario> scenarios;
  std::vector<std::size_t> pick(axes.size(), 0);
  while (true) {
    Scenario scenario;
    scenario.assignment = map_assignment;
    scenario.probability = 1.0;
    bool all_map = true;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      LateralAction a = axes[i].intentions[pick[i]];
      scenario.assignment[axes[i].vehicle] = a;
      scenario.probability *= axes[i].masses[pick[i]];
      all_map &= a == axes[i].map;
    }
    scenario.origin = all_map ? ScenarioOrigin::kMapOnly : ScenarioOrigin::kCfbBranched;
    scenarios.push_back(std::move(scenario));

    std::size_t axis = 0;
    while (axis < axes.size() && ++pick[axis] == axes[axis].intentions.size()) {
      pick[axis] = 0;
      ++axis;
    }
    if (axis == axes.size()) break;
  }
  return scenarios;
}

std::vector<Scenario> top_k_marginalize(std::vector<Scenario> scenarios, int k) {
  std::stable_sort(scenarios.begin(), scenarios.end(), [](const Scenario& a, const Scenario& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    return assignment_less(a.assignment, b.assignment);
  });
  if (k >= 1 && static_cast<int>(scenarios.size()) > k)
    scenarios.resize(static_cast<std::size_t>(k));
  double total = 0.0;
  for (const Scenario& s : scenarios) total += s.probability;
  if (total > 0.0)
    for (Scenario& s : scenarios) s.probability /= total;
  else if (!scenarios.empty())
    for (Scenario& s : scenarios) s.probability = 1.0 / scenarios.size();
  return scenarios;
}

std::map<int, LateralAction> map_assignment_for(const std::vector<int>& key_vehicles,
                                                const BeliefMap& beliefs) {
  std::map<int, LateralAction> assignment;
  for (int vehicle : key_vehicles)
    assignment.emplace(vehicle, map_intention(belief_or_lk(beliefs, vehicle)));
  return assignment;
}

std::vector<Scenario> cfb(const WorldState& world, const BeliefMap& beliefs,
                          const std::vector<SemanticAction>& ego_policy,
                          double resolution, const CfbConfig& cfg,
                          const SimulationParams& sim, const CorridorCache& corridors) {
  std::vector<int> key = select_key_vehicles(world, cfg, corridors);
  std::map<int, LateralAction> map_assignment = map_assignment_for(key, beliefs);
  if (key.empty()) {
    Scenario only;
    only.probability = 1.0;
    only.origin = ScenarioOrigin::kMapOnly;
    return {only};
  }

  UncertainSplit split = select_uncertain_vehicles(key, beliefs, cfg);
  std::vector<int> risky;
  if (!split.uncertain.empty()) {
    std::vector<SemanticAction> policy = ego_policy;
    if (policy.empty()) policy.push_back({});
    double total = 0.0;
    for (const SemanticAction& action : policy) total += action.duration;
    OpenLoopBackdrop backdrop =
        build_open_loop_backdrop(world, split.uncertain, total, resolution, sim, corridors);
    for (int vehicle : split.uncertain) {
      for (LateralAction hypothesis : feasible_intentions(world, vehicle)) {
        if (!open_loop_assess(world, vehicle, hypothesis, ego_policy, resolution, sim, corridors,
                              &backdrop)) {
          risky.push_back(vehicle);
          break;
        }
      }
    }
  }

  std::vector<Scenario> scenarios =
      enumerate_scenarios(world, risky, beliefs, map_assignment, cfg.combination_cap);
  return top_k_marginalize(std::move(scenarios), cfg.top_k);
}

std::vector<Scenario> cfb_overflow_fallback(const WorldState& world,
                                            const std::vector<int>& risky,
                                            const BeliefMap& beliefs,
                                            const std::map<int, LateralAction>& map_assignment) {
  Scenario map_scenario;
  map_scenario.assignment = map_assignment;
  map_scenario.probability = 1.0;
  map_scenario.origin = ScenarioOrigin::kMapOnly;

  // Most probable single-vehicle deviation from MAP: the flip with the best
  // probability ratio against that vehicle's MAP intention.
  double best_ratio = -1.0;
  int best_vehicle = -1;
  LateralAction best_intention = LateralAction::kLaneKeep;
  std::vector<int> ordered = risky;
  std::sort(ordered.begin(), ordered.end());
  for (int vehicle : ordered) {
    IntentionBelief belief = belief_or_lk(beliefs, vehicle);
    auto mit = map_assignment.find(vehicle);
    LateralAction map_a = mit != map_assignment.end() ? mit->second : map_intention(belief);
    double map_p = std::max(belief.prob(map_a), 1e-12);
    for (LateralAction a : feasible_intentions(world, vehicle)) {
      if (a == map_a) continue;
      double ratio = belief.prob(a) / map_p;
      if (ratio > best_ratio) {
        best_ratio = ratio;
        best_vehicle = vehicle;
        best_intention = a;
      }
    }
  }
  if (best_vehicle < 0) {
    map_scenario.probability = 1.0;
    return {map_scenario};
  }

  Scenario deviation = map_scenario;
  deviation.assignment[best_vehicle] = best_intention;
  deviation.origin = ScenarioOrigin::kCfbBranched;
  double map_mass = 1.0;
  double dev_mass = std::max(best_ratio, 0.0);
  double total = map_mass + dev_mass;
  map_scenario.probability = map_mass / total;
  deviation.probability = dev_mass / total;
  return {map_scenario, deviation};
}

}  // namespace gbp
