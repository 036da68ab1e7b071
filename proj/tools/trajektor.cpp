// Command-line front end: `run` executes the whole pipeline, the other
// subcommands run one group of stages against an existing run directory.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <map>

#include "trajektor/pipeline.hpp"
#include "trajektor/synth.hpp"

namespace fs = std::filesystem;
namespace pl = trajektor::pipeline;

namespace {

std::shared_ptr<spdlog::logger> make_logger() {
  auto logger = spdlog::stderr_color_mt("trajektor");
  logger->set_pattern("[%l] %v");
  const char* env = std::getenv("TRAJEKTOR_LOG");
  logger->set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
  return logger;
}

pl::LogSink sink_for(const std::shared_ptr<spdlog::logger>& logger) {
  return [logger](pl::LogLevel level, const std::string& msg) {
    switch (level) {
      case pl::LogLevel::debug: logger->debug(msg); break;
      case pl::LogLevel::info: logger->info(msg); break;
      case pl::LogLevel::warn: logger->error(msg); break;
    }
  };
}

// Options shared by every pipeline subcommand: --config, --out and one flag
// per configuration key.
struct StageCommand {
  CLI::App* app = nullptr;
  std::vector<std::string> stages;
  std::string config;
  std::string out;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;

  pl::Settings settings() const {
    pl::Settings s;
    if (!config.empty()) s = pl::load_config(config);
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) s.set(key, flags.at(key));
    }
    return s;
  }
};

StageCommand& add_stage_command(CLI::App& root, std::vector<std::unique_ptr<StageCommand>>& cmds,
                                const std::string& name, const std::string& help, std::vector<std::string> stages,
                                bool is_run) {
  auto cmd = std::make_unique<StageCommand>();
  cmd->app = root.add_subcommand(name, help);
  cmd->stages = std::move(stages);
  auto* cfg = cmd->app->add_option("--config", cmd->config, "key = value configuration file")->check(CLI::ExistingFile);
  auto* out = cmd->app->add_option("--out", cmd->out, "run directory")->required();
  (void)out;
  if (is_run) cfg->required();
  for (const auto& k : pl::config_keys()) {
    auto* opt = cmd->app->add_option(std::string("--") + k.key, cmd->flags[k.key], k.help);
    if (is_run && std::string_view(k.key) == "seed") opt->required();
    cmd->options[k.key] = opt;
  }
  cmds.push_back(std::move(cmd));
  return *cmds.back();
}

int run_synth(const std::string& kind, std::size_t users, std::size_t periods, std::uint64_t seed,
              const std::string& model_path, const std::string& output, const std::string& truth,
              const std::string& format) {
  using namespace trajektor;
  const auto fmt = parse_event_format(format);
  const auto span = synth::year_span();
  if (kind == "typology") {
    synth::TypologyConfig cfg;
    cfg.users = users;
    cfg.periods = periods;
    cfg.seed = seed;
    auto corpus = synth::generate_typology(cfg);
    csv::write_file(output, serialize_events(EventSet::build(std::move(corpus.events), corpus.span), fmt));
    if (!truth.empty()) csv::write_file(truth, types_to_csv(corpus.truth));
  } else if (kind == "lmm") {
    const auto model = model_path.empty() ? reference_model()
                                          : model_from_json(nlohmann::json::parse(csv::read_file(model_path))).model;
    const auto panel = generate(model, users, periods, seed);
    csv::write_file(output, serialize_events(EventSet::build(synth::panel_events(panel.observations, span), span), fmt));
    if (!truth.empty()) {
      std::vector<StateTrajectory> trajs;
      for (std::size_t u = 0; u < users; ++u) trajs.push_back({panel.observations.users()[u], panel.states[u]});
      csv::write_file(truth, trajectories_to_csv(trajs));
    }
  } else {
    throw ValidationError("synth: unknown kind '" + kind + "' (expected typology or lmm)");
  }
  return pl::kSuccess;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = make_logger();
  CLI::App app{"trajektor: typing longitudinal categorical behaviour"};
  app.set_version_flag("--version", TRAJEKTOR_VERSION);
  app.require_subcommand(1);

  std::vector<std::unique_ptr<StageCommand>> cmds;
  add_stage_command(app, cmds, "run", "run the whole pipeline", pl::stage_names(), true);
  add_stage_command(app, cmds, "ingest", "parse events and apply the bot filter", {"ingest", "filter"}, false);
  add_stage_command(app, cmds, "bin", "equal-event windows and window summaries", {"bin", "summarize"}, false);
  add_stage_command(app, cmds, "fit", "pre-separate users and fit the latent Markov model", {"pre-separate", "em-fit"},
                    false);
  add_stage_command(app, cmds, "decode", "decode state trajectories with the selected model", {"decode"}, false);
  add_stage_command(app, cmds, "cluster", "k-modes clustering and the WSS curve", {"cluster", "wss-curve"}, false);
  add_stage_command(app, cmds, "score", "cluster TScores and user types", {"tscore", "types"}, false);
  add_stage_command(app, cmds, "report", "type summaries, Gini and rank tests", {"summaries", "stats"}, false);

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic event corpus");
  std::string kind = "typology", model_path, output, truth, format = "csv";
  std::size_t users = 2000, periods = 100;
  std::uint64_t seed = 1;
  synth_cmd->add_option("--kind", kind, "typology (seven planted user types) or lmm (latent Markov panel)")
      ->check(CLI::IsMember({"typology", "lmm"}));
  synth_cmd->add_option("--users", users, "number of users")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--periods", periods, "number of periods")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", seed, "random seed");
  synth_cmd->add_option("--model", model_path, "model JSON for --kind lmm (default: reference model)")
      ->check(CLI::ExistingFile);
  synth_cmd->add_option("--output", output, "event file to write")->required();
  synth_cmd->add_option("--truth", truth, "optional file for the planted types or states");
  synth_cmd->add_option("--format", format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return pl::kValidation;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(kind, users, periods, seed, model_path, output, truth, format);
    for (const auto& cmd : cmds) {
      if (!cmd->app->parsed()) continue;
      const bool full = cmd->app->get_name() == "run";
      const int code = pl::execute(cmd->settings(), cmd->out, cmd->stages, full, sink_for(logger));
      if (code == pl::kSuccess) logger->info("done: artifacts in {}", cmd->out);
      return code;
    }
  } catch (const trajektor::ValidationError& e) {
    logger->error("{}", e.what());
    return pl::kValidation;
  } catch (const std::exception& e) {
    logger->error("{}", e.what());
    return pl::kStageFailure;
  }
  return pl::kValidation;
}
