#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "gbp/cli.hpp"
#include "gbp/errors.hpp"

namespace {

std::string single_line(std::string text) {
  for (char& c : text)
    if (c == '\n' || c == '\r') c = ' ';
  return text;
}

CLI::Option* add_planner_flags(CLI::App* cmd, gbp::CommonArgs& common) {
  cmd->add_option("--config", common.config_path, "planner config json file");
  cmd->add_option("--mode", common.mode, "planner mode: eudm, edm or mpdm");
  return cmd->add_option("--seed", common.seed, "random seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic-level behavioral planner: guided action branching with "
               "conditional intention-aware simulation"};
  app.require_subcommand(1);

  gbp::PlanArgs plan_args;
  auto* plan = app.add_subcommand("plan", "run one decision cycle on a scene file");
  plan->add_option("scene", plan_args.scene_path, "scene json file")->required();
  CLI::Option* plan_seed = add_planner_flags(plan, plan_args.common);
  plan->add_option("--map", plan_args.common.map_path, "lane map json file override");
  plan->add_option("--out", plan_args.common.out_path, "write the decision json here");

  gbp::SimArgs sim_args;
  auto* sim = app.add_subcommand("sim", "run a closed-loop episode");
  sim->add_option("scenario", sim_args.scenario_path,
                  "built-in scenario (ring, double_merge) or scenario json file")
      ->required();
  CLI::Option* sim_seed = add_planner_flags(sim, sim_args.common);
  sim->add_option("--map", sim_args.common.map_path, "lane map json file override");
  sim->add_option("--out", sim_args.common.out_path, "write the episode log here");
  sim->add_option("--duration", sim_args.duration, "episode length in seconds");
  sim->add_option("--agents", sim_args.agent_count,
                  "agent count for the built-in scenarios");
  sim->add_option("--trace", sim_args.trace_path, "write the per-cycle planner trace here");

  gbp::BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "run the benchmark suite");
  CLI::Option* bench_seed =
      bench->add_option("--seed", bench_args.common.seed, "base random seed");
  bench->add_option("--episodes", bench_args.episodes, "episodes per (map, mode) pair");
  bench->add_option("--duration", bench_args.duration, "episode length in seconds");
  bench->add_option("--agents", bench_args.agent_count, "agents per episode");
  bench->add_option("--threads", bench_args.threads, "worker threads (0: all cores)");
  bench->add_option("--map,--maps", bench_args.maps, "maps to run (ring, double_merge)")
      ->delimiter(',');
  bench->add_option("--mode,--modes", bench_args.modes, "modes to run (eudm, edm, mpdm)")
      ->delimiter(',');
  bench->add_option("--out", bench_args.common.out_path, "write the results csv here");
  bench->add_option("--markdown", bench_args.markdown_path, "write the summary table here");
  bench->add_option("--from", bench_args.from_csv,
                    "summarize an existing results csv instead of running");

  gbp::ReplayArgs replay_args;
  auto* replay = app.add_subcommand("replay", "open-loop planning over a recorded log");
  replay->add_option("log", replay_args.log_path, "episode log (json-lines)")->required();
  CLI::Option* replay_seed = add_planner_flags(replay, replay_args.common);
  replay->add_option("--map", replay_args.common.map_path,
                     "lane map json file (required when the log embeds none)");
  replay->add_option("--out", replay_args.common.out_path, "write the decision report here");
  CLI::Option* replay_ego =
      replay->add_option("--ego", replay_args.ego_id, "ego vehicle id in the log");

  gbp::PlotArgs plot_args;
  auto* plot = app.add_subcommand("plot", "render an episode log to svg");
  plot->add_option("log", plot_args.log_path, "episode log (json-lines)")->required();
  plot->add_option("--map", plot_args.common.map_path,
                   "lane map json file (required when the log embeds none)");
  plot->add_option("--out", plot_args.common.out_path, "output path prefix");
  plot->add_option("--keyframes", plot_args.keyframes, "number of scene snapshots");

  int rc = gbp::kExitOk;
  plan->callback([&]() {
    plan_args.common.seed_set = plan_seed->count() > 0;
    rc = gbp::cmd_plan(plan_args);
  });
  sim->callback([&]() {
    sim_args.common.seed_set = sim_seed->count() > 0;
    rc = gbp::cmd_sim(sim_args);
  });
  bench->callback([&]() {
    bench_args.common.seed_set = bench_seed->count() > 0;
    rc = gbp::cmd_bench(bench_args);
  });
  replay->callback([&]() {
    replay_args.common.seed_set = replay_seed->count() > 0;
    replay_args.ego_id_set = replay_ego->count() > 0;
    rc = gbp::cmd_replay(replay_args);
  });
  plot->callback([&]() { rc = gbp::cmd_plot(plot_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << single_line(e.what()) << std::endl;
    return gbp::kExitBadInput;
  } catch (const gbp::NoFeasiblePolicy& e) {
    std::cerr << "error: " << single_line(e.what()) << std::endl;
    return gbp::kExitNoFeasiblePolicy;
  } catch (const gbp::PlanningError& e) {
    std::cerr << "error: " << single_line(e.what()) << std::endl;
    return gbp::kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << single_line(e.what()) << std::endl;
    return gbp::kExitBadInput;
  }
  return rc;
}
