#pragma once

#include <map>
#include <vector>

#include "gbp/belief.hpp"
#include "gbp/dcp_tree.hpp"
#include "gbp/sim_models.hpp"

namespace gbp {

enum class ScenarioOrigin { kMapOnly, kCfbBranched };

// Joint intention hypothesis: one lateral intention per key vehicle plus the
// probability weight of the combination.
struct Scenario {
  std::map<int, LateralAction> assignment;
  double probability = 1.0;
  ScenarioOrigin origin = ScenarioOrigin::kMapOnly;
};

struct CfbConfig {
  double lookahead_time = 8.0;   // s
  double lookback_time = 4.0;    // s
  double forward_floor = 30.0;   // m
  double backward_floor = 20.0;  // m
  double uncertainty_threshold = 0.75;
  int max_enumerated_vehicles = 4;
  int combination_cap = 81;
  int top_k = 6;
};

// Vehicles on the ego's current or neighbor lanes within the speed-scaled
// arc window. Sorted by id.
std::vector<int> select_key_vehicles(const WorldState& world, const CfbConfig& cfg,
                                     const CorridorCache& corridors);

struct UncertainSplit {
  std::vector<int> uncertain;               // candidates for enumeration
  std::map<int, LateralAction> confident;   // collapsed to MAP intention
};

// Splits key vehicles by belief peakedness and caps the enumeration set at
// max_enumerated_vehicles, keeping the lowest-max-probability vehicles.
UncertainSplit select_uncertain_vehicles(const std::vector<int>& key_vehicles,
                                         const BeliefMap& beliefs, const CfbConfig& cfg);

// Open-loop safety probe of one (vehicle, hypothesis) pair under the ego
// policy. Returns true when the rollout stays collision-free and never dips
// below the RSS-safe gap. A backdrop built from the same world snapshot lets
// repeated probes share the agent trajectories.
bool open_loop_assess(const WorldState& world, int vehicle, LateralAction hypothesis,
                      const std::vector<SemanticAction>& ego_policy, double resolution,
                      const SimulationParams& sim, const CorridorCache& corridors,
                      const OpenLoopBackdrop* backdrop = nullptr);

// Cartesian product of feasible intentions over `risky` vehicles; everyone
// else rides at MAP. Probabilities multiply renormalized per-vehicle masses.
// Throws TooManyCombinations above `cap`.
std::vector<Scenario> enumerate_scenarios(const WorldState& world,
                                          const std::vector<int>& risky,
                                          const BeliefMap& beliefs,
                                          const std::map<int, LateralAction>& map_assignment,
                                          int cap);

// Keeps the k most probable scenarios (ties broken by assignment order) and
// renormalizes their weights to sum to one.
std::vector<Scenario> top_k_marginalize(std::vector<Scenario> scenarios, int k);

// Conditional focused branching for one ego policy sequence: key-vehicle
// selection, uncertainty split, per-hypothesis open-loop assessment,
// enumeration over the failing vehicles, then top-k truncation. The all-MAP
// scenario is always present and tagged kMapOnly.
std::vector<Scenario> cfb(const WorldState& world, const BeliefMap& beliefs,
                          const std::vector<SemanticAction>& ego_policy,
                          double resolution, const CfbConfig& cfg,
                          const SimulationParams& sim, const CorridorCache& corridors);

// Degenerate scenario set used when enumeration overflows the cap: the
// all-MAP scenario plus the single most probable one-vehicle deviation.
std::vector<Scenario> cfb_overflow_fallback(const WorldState& world,
                                            const std::vector<int>& risky,
                                            const BeliefMap& beliefs,
                                            const std::map<int, LateralAction>& map_assignment);

// MAP intention for every key vehicle (helper shared by all modes).
std::map<int, LateralAction> map_assignment_for(const std::vector<int>& key_vehicles,
                                                const BeliefMap& beliefs);

}  // namespace gbp
