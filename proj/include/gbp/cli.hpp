#pragma once

#include <string>
#include <vector>

namespace gbp {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitBadInput = 2;
inline constexpr int kExitNoFeasiblePolicy = 3;

struct CommonArgs {
  std::string config_path;
  std::string map_path;
  std::string out_path;
  std::string mode;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

struct PlanArgs {
  CommonArgs common;
  std::string scene_path;
};

struct SimArgs {
  CommonArgs common;
  std::string scenario_path;  // built-in name or scenario JSON path
  double duration = 0.0;      // 0: keep scenario default
  int agent_count = 0;        // 0: keep scenario default
  std::string trace_path;
};

struct BenchArgs {
  CommonArgs common;
  int episodes = 10;
  double duration = 0.0;
  int agent_count = 0;  // 0: keep the factory default
  int threads = 0;      // 0: hardware concurrency
  std::vector<std::string> maps;
  std::vector<std::string> modes;
  std::string markdown_path;
  std::string from_csv;  // summarize an existing results table instead of running
};

struct ReplayArgs {
  CommonArgs common;
  std::string log_path;
  int ego_id = 0;
  bool ego_id_set = false;
};

struct PlotArgs {
  CommonArgs common;
  std::string log_path;
  int keyframes = 6;
};

// Subcommand implementations; `main` translates exceptions that escape into
// exit codes and a one-line "error: ..." message on stderr.
int cmd_plan(const PlanArgs& args);
int cmd_sim(const SimArgs& args);
int cmd_bench(const BenchArgs& args);
int cmd_replay(const ReplayArgs& args);
int cmd_plot(const PlotArgs& args);

}  // namespace gbp
