#include "gbp/dcp_tree.hpp"

#include <algorithm>
#include <cmath>

#include "gbp/errors.hpp"

namespace gbp {

const SemanticAction& PolicySequence::action_at(double t) const {
  if (actions.empty()) throw PlanningError("policy sequence has no actions");
  double end = 0.0;
  for (const SemanticAction& action : actions) {
    end += action.duration;
    if (t < end) return action;
  }
  return actions.back();
}

std::string PolicySequence::signature() const {
  std::string out;
  for (const SemanticAction& action : actions) {
    if (!out.empty()) out.push_back('-');
    out.push_back(short_code(action.lateral));
    out.push_back(short_code(action.longitudinal));
  }
  return out;
}

bool PolicySequence::same_actions(const PolicySequence& o) const {
  if (actions.size() != o.actions.size()) return false;
  for (std::size_t i = 0; i < actions.size(); ++i)
    if (!actions[i].same_template(o.actions[i])) return false;
  return true;
}

int PolicySequence::action_distance(const PolicySequence& a, const PolicySequence& b) {
  std::size_t shared = std::min(a.actions.size(), b.actions.size());
  int distance = static_cast<int>(std::max(a.actions.size(), b.actions.size()) - shared);
  for (std::size_t i = 0; i < shared; ++i)
    if (!a.actions[i].same_template(b.actions[i])) ++distance;
  return distance;
}

bool PolicySequence::lexicographic_less(const PolicySequence& a, const PolicySequence& b) {
  std::size_t shared = std::min(a.actions.size(), b.actions.size());
  for (std::size_t i = 0; i < shared; ++i) {
    auto key = [](const SemanticAction& action) {
      return std::pair<int, int>(static_cast<int>(action.lateral),
                                 static_cast<int>(action.longitudinal));
    };
    if (key(a.actions[i]) != key(b.actions[i])) return key(a.actions[i]) < key(b.actions[i]);
  }
  return a.actions.size() < b.actions.size();
}

std::vector<SemanticAction> full_action_set(double node_duration) {
  std::vector<SemanticAction> set;
  set.reserve(9);
  for (LateralAction lat : {LateralAction::kLaneKeep, LateralAction::kLaneChangeLeft,
                            LateralAction::kLaneChangeRight}) {
    for (LongitudinalAction lon : {LongitudinalAction::kAccelerate, LongitudinalAction::kMaintain,
                                   LongitudinalAction::kDecelerate}) {
      set.push_back({lat, lon, node_duration});
    }
  }
  return set;
}

DcpTree update_dcp_tree(const std::vector<SemanticAction>& action_set,
                        const SemanticAction& ongoing, int height,
                        const LateralFeasibility& feasibility) {
  if (action_set.empty()) throw EmptyActionSet("action set is empty");
  DcpTree tree;
  tree.root = ongoing;
  tree.height = std::max(1, height);
  tree.action_set = action_set;
  int n = static_cast<int>(action_set.size());
  tree.pre_prune_leaf_count = tree.height > 1 ? (n - 1) * (tree.height - 2) + n : 1;

  // Continuation nodes reuse the ongoing action's template at its full
  // duration; only the root keeps the (possibly shortened) remainder.
  SemanticAction continuation{ongoing.lateral, ongoing.longitudinal, action_set.front().duration};
  for (const SemanticAction& action : action_set) {
    if (action.same_template(ongoing)) {
      continuation = action;
      break;
    }
  }

  tree.nodes.push_back({ongoing, -1, 0, {}});
  int leaves = tree.height == 1 ? 1 : 0;
  int cont = 0;
  for (int depth = 1; depth < tree.height; ++depth) {
    int next_cont = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({continuation, cont, depth, {}});
    tree.nodes[cont].children.push_back(next_cont);
    if (depth == tree.height - 1) ++leaves;

    for (const SemanticAction& action : action_set) {
      if (action.same_template(ongoing)) continue;
      if (!feasibility.allows(action.lateral)) continue;
      // A change at this depth repeats the changed action down to the leaf.
      int parent = cont;
      for (int d = depth; d < tree.height; ++d) {
        int node = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({action, parent, d, {}});
        tree.nodes[parent].children.push_back(node);
        parent = node;
      }
      ++leaves;
    }
    cont = next_cont;
  }
  tree.leaf_count = leaves;
  return tree;
}

std::vector<PolicySequence> extract_policy_sequences(const DcpTree& tree) {
  std::vector<PolicySequence> sequences;
  if (tree.nodes.empty()) return sequences;

  std::vector<SemanticAction> path;
  auto dfs = [&](auto&& self, int index) -> void {
    const DcpTree::Node& node = tree.nodes[index];
    path.push_back(node.action);
    if (node.children.empty()) {
      PolicySequence seq;
      seq.actions = path;
      for (const SemanticAction& action : path) seq.total_horizon += action.duration;
      sequences.push_back(std::move(seq));
    } else {
      for (int child : node.children) self(self, child);
    }
    path.pop_back();
  };
  dfs(dfs, 0);
  return sequences;
}

SemanticAction advance_ongoing(const PolicySequence& best, double replan_dt,
                               double node_duration) {
  if (best.actions.empty()) throw PlanningError("policy sequence has no actions");
  SemanticAction current = best.actions.front();
  double remaining = current.duration - replan_dt;
  if (remaining > 1e-9) {
    current.duration = remaining;
    return current;
  }
  if (best.actions.size() > 1) {
    SemanticAction next = best.actions[1];
    next.duration = node_duration;
    return next;
  }
  current.duration = node_duration;
  return current;
}

std::vector<PolicySequence> mpdm_sequences(const std::vector<SemanticAction>& action_set,
                                           int height,
                                           const LateralFeasibility& feasibility) {
  std::vector<PolicySequence> sequences;
  int nodes = std::max(1, height);
  for (const SemanticAction& action : action_set) {
    if (!feasibility.allows(action.lateral)) continue;
    PolicySequence seq;
    seq.actions.assign(nodes, action);
    seq.total_horizon = nodes * action.duration;
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

}  // namespace gbp
