#pragma once

#include <string>
#include <vector>

#include "gbp/world_model.hpp"

namespace gbp {

struct PolicySequence {
  std::vector<SemanticAction> actions;
  double total_horizon = 0.0;

  // Action active at time t from sequence start; the last action absorbs
  // any trailing time.
  const SemanticAction& action_at(double t) const;

  // Compact form like "KM-LA-LA-LA" (lateral + longitudinal per node).
  std::string signature() const;

  bool same_actions(const PolicySequence& o) const;
  // Number of node positions whose (lateral, longitudinal) pair differs.
  static int action_distance(const PolicySequence& a, const PolicySequence& b);
  // Ordering on the action templates, used for deterministic tie-breaks.
  static bool lexicographic_less(const PolicySequence& a, const PolicySequence& b);
};

struct LateralFeasibility {
  bool lcl = true;
  bool lcr = true;

  bool allows(LateralAction a) const {
    if (a == LateralAction::kLaneChangeLeft) return lcl;
    if (a == LateralAction::kLaneChangeRight) return lcr;
    return true;
  }
};

// Guided action tree: rooted at the ongoing action, every root-to-leaf trace
// changes action at most once, and a changed action repeats until the leaf.
struct DcpTree {
  struct Node {
    SemanticAction action;
    int parent = -1;
    int depth = 0;  // root depth 0
    std::vector<int> children;
  };

  SemanticAction root;
  int height = 4;  // nodes per trace, root included
  std::vector<SemanticAction> action_set;
  std::vector<Node> nodes;

  int pre_prune_leaf_count = 0;  // closed-form count before lane pruning
  int leaf_count = 0;            // actual leaves after lane pruning
};

// The 9 semantic actions: lateral {LK, LCL, LCR} x longitudinal
// {Accelerate, Maintain, Decelerate}, each with `node_duration` seconds.
std::vector<SemanticAction> full_action_set(double node_duration = 2.0);

// Rebuilds the tree for a planning cycle with `ongoing` as root (keeping its
// remaining duration). Branches whose lateral action `feasibility` rejects
// are pruned. Throws EmptyActionSet when action_set is empty.
DcpTree update_dcp_tree(const std::vector<SemanticAction>& action_set,
                        const SemanticAction& ongoing, int height,
                        const LateralFeasibility& feasibility = {});

// Depth-first leaf traces; continuation child first, then the remaining
// actions in action-set order. Root keeps the ongoing duration, later nodes
// their template duration.
std::vector<PolicySequence> extract_policy_sequences(const DcpTree& tree);

// Ongoing-action bookkeeping between replan cycles: consume `replan_dt`
// from the best sequence's first action, switching to its second action
// (full duration) once the remainder is used up.
SemanticAction advance_ongoing(const PolicySequence& best, double replan_dt,
                               double node_duration);

// Baseline candidate set: one constant-action sequence per action, subject
// to the same lateral pruning.
std::vector<PolicySequence> mpdm_sequences(const std::vector<SemanticAction>& action_set,
                                           int height,
                                           const LateralFeasibility& feasibility = {});

}  // namespace gbp
