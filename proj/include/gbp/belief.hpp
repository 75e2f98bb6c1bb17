#pragma once

#include <map>
#include <optional>

#include "gbp/sim_models.hpp"
#include "gbp/world_model.hpp"

namespace gbp {

// Discrete distribution over a vehicle's lateral intention.
struct IntentionBelief {
  int vehicle = 0;
  double p_lk = 1.0;
  double p_lcl = 0.0;
  double p_lcr = 0.0;

  double prob(LateralAction a) const;
  double& prob_ref(LateralAction a);
  double max_prob() const;
  void normalize();

  static IntentionBelief uniform_feasible(int vehicle, bool lcl_possible,
                                          bool lcr_possible);
};

using BeliefMap = std::map<int, IntentionBelief>;

struct LaneObservation {
  bool present = false;
  std::optional<double> leader_gap;    // bumper-to-bumper
  std::optional<double> follower_gap;  // bumper-to-bumper
  std::optional<double> leader_velocity_delta;  // v_leader - v_self
  bool rss_ok = true;
};

struct BeliefFeatures {
  int vehicle = 0;
  LaneObservation current;
  LaneObservation left;
  LaneObservation right;
  std::optional<double> incentive_left;
  std::optional<double> incentive_right;
  bool veto_left = false;
  bool veto_right = false;
  double lateral_trend = 0.0;  // signed d-velocity, left positive (m/s)
  // Distance left in the vehicle's lane chain when it dead-ends at a merge
  // wall; vehicles there must leave the lane regardless of incentive.
  std::optional<double> wall_remaining;
  bool left_dies = false;
  bool right_dies = false;
};

struct BeliefParams {
  double w_incentive = 1.5;
  double w_drift = 2.0;
  double w_rss = 0.5;
  double w_urgency = 2.5;
  double w_veto = 1.0;
  double temperature = 1.0;
  double smoothing_rate = 0.7;  // per second
  // Keeps the undisturbed fixed point confidently lane-keeping
  // (softmax over (2, 0.5, 0.5) puts 0.787 on LK); intention branching then
  // needs actual incentive, drift or forced-merge evidence.
  double lk_bias = 2.0;
  double urgency_range = 130.0;  // m before a wall where lane keeping decays
};

// Observation features for one vehicle: leader/follower structure on the
// current and neighbor lanes, MOBIL incentives, RSS feasibility, the lateral
// drift rate and, when a corridor cache is supplied, how much of a dying
// lane chain is left.
BeliefFeatures extract_features(const WorldState& world, int vehicle,
                                const SimulationParams& sim,
                                const CorridorCache* corridors = nullptr);

// One smoothing step of the rule-based intention tracker. Instantaneous
// scores pass through a softmax, blend into `prev` with rate lambda, and
// intentions without a target lane are clamped to exactly zero before the
// final renormalization.
IntentionBelief update_belief(const IntentionBelief& prev, const BeliefFeatures& feat,
                              double dt, const BeliefParams& p = {});

// Most probable intention; ties resolve LK > LCL > LCR.
LateralAction map_intention(const IntentionBelief& belief);

}  // namespace gbp
