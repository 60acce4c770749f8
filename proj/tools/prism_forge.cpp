// prism-forge: command-line entry point for the real-to-sim-to-real pipeline.

#include "prism/pipeline.hpp"

#include <CLI11.hpp>
#include <omp.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <iostream>

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kStageFailure = 3;
constexpr int kAcceptanceFailure = 4;

struct Global {
  std::string config;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string run_dir = "run";
  bool resume = false;
};

prism::RunConfig load(const Global& g) {
  prism::RunConfig c;
  if (!g.config.empty()) c = prism::load_run_config(g.config);
  if (g.seed != 0) c.seed = g.seed;
  return c;
}

int run_stage(const Global& g, prism::PipelineStage last) {
  const auto cfg = load(g);
  const auto out = prism::run_pipeline(cfg, {g.run_dir, g.resume}, last);
  for (const auto& s : out.skipped) spdlog::info("stage {} already complete", s);
  if (last == prism::PipelineStage::policy_eval && out.eval_success && *out.eval_success < cfg.min_success) {
    spdlog::error("eval success {:.3f} below the required {:.3f}", *out.eval_success, cfg.min_success);
    return kAcceptanceFailure;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::info);
  if (const char* lvl = std::getenv("PRISM_FORGE_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));

  CLI::App app{"prism-forge: scene grounding, refinement, reward learning and policy training"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--config", g.config, "run config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed (overrides the config; >= 1)");
  app.add_option("--threads", g.threads, "OpenMP threads (default: logical cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--run-dir", g.run_dir, "run directory");
  app.add_flag("--resume", g.resume, "continue a partially completed run");

  std::function<int()> action;
  auto stage_cmd = [&](CLI::App* parent, const char* name, const char* desc, prism::PipelineStage s) {
    parent->add_subcommand(name, desc)->callback([&, s] { action = [&, s] { return run_stage(g, s); }; });
  };

  auto* scene = app.add_subcommand("scene", "scene grounding")->require_subcommand(1);
  stage_cmd(scene, "ground", "noisy pose estimates of the demonstration scene", prism::PipelineStage::scene_ground);
  stage_cmd(&app, "refine", "constraint-based pose refinement", prism::PipelineStage::refine);
  auto* demo = app.add_subcommand("demo", "demonstrations")->require_subcommand(1);
  stage_cmd(demo, "generate", "scripted demonstrations in the ground-truth scene", prism::PipelineStage::demo_generate);
  stage_cmd(demo, "replay", "replay demonstrations in the refined scene", prism::PipelineStage::demo_replay);
  auto* reward = app.add_subcommand("reward", "reward model")->require_subcommand(1);
  stage_cmd(reward, "bootstrap", "label demonstration frames and build the initial dataset",
            prism::PipelineStage::reward_bootstrap);
  auto* policy = app.add_subcommand("policy", "policy learning")->require_subcommand(1);
  stage_cmd(policy, "train", "alternating reward and BC-SAC training", prism::PipelineStage::policy_train);
  stage_cmd(policy, "eval", "evaluate the trained policy", prism::PipelineStage::policy_eval);
  stage_cmd(&app, "pipeline", "run every stage", prism::PipelineStage::policy_eval);

  auto* study = app.add_subcommand("study", "labeling studies")->require_subcommand(1);
  study->add_subcommand("views", "label accuracy against the number of camera views")->callback([&] {
    action = [&] {
      const auto cfg = load(g);
      prism::run_view_study(cfg, std::filesystem::path(g.run_dir) / "study");
      return kOk;
    };
  });
  auto* plot = app.add_subcommand("plot", "plot data")->require_subcommand(1);
  plot->add_subcommand("emit", "write plots/summary.json for a run directory")->callback([&] {
    action = [&] {
      prism::emit_plots(g.run_dir);
      return kOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  if (g.threads > 0) omp_set_num_threads(g.threads);

  try {
    return action();
  } catch (const prism::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigError;
  } catch (const prism::StageError& e) {
    spdlog::error("{}", e.what());
    return kStageFailure;
  } catch (const std::exception& e) {
    spdlog::error("failure: {}", e.what());
    return kStageFailure;
  }
}
