#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"
#include "conceptkit/pipeline.hpp"

namespace pl = conceptkit::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"conceptkit: concept decomposition, probing and interventions on VLM activations"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string out;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--threads", threads, "worker threads (0 = all cores)");
  app.add_option("--out", out, "override the output directory");

  struct Stage {
    const char* name;
    const char* help;
    void (*run)(const pl::RunConfig&);
  };
  const Stage stages[] = {
      {"decompose", "fit patch and full-image Semi-NMF, write activations and thresholds", pl::cmd_decompose},
      {"probe", "train raw and binarized linear probes", pl::cmd_probe},
      {"intervene", "run concept interventions through the tail", pl::cmd_intervene},
      {"bridge", "link full-image and patch concepts", pl::cmd_bridge},
      {"map", "2-D concept map with style tags", pl::cmd_map},
      {"report", "concept cards and plots", pl::cmd_report},
      {"study", "user-study bundles", pl::cmd_study},
      {"run", "all stages in order", pl::run_all},
  };
  std::vector<std::pair<CLI::App*, const Stage*>> commands;
  for (const auto& s : stages) commands.emplace_back(app.add_subcommand(s.name, s.help), &s);
  auto* validate = app.add_subcommand("validate", "check the config and its inputs");

  auto* synth = app.add_subcommand("synth", "write the planted synthetic dataset and a config");
  std::string synth_dir;
  synth->add_option("dir", synth_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      pl::cmd_synth(synth_dir, seed.value_or(7));
      return 0;
    }
    if (config_path.empty()) {
      std::cerr << "error: --config is required\n";
      return 1;
    }
    pl::RunConfig config = pl::load_config(config_path);
    if (seed) config.seed = seed;
    if (threads) config.threads = *threads;
    if (!out.empty()) config.out = out;

    if (validate->parsed()) {
      std::cout << pl::cmd_validate(config).dump(1) << '\n';
      return 0;
    }
    for (const auto& [cmd, stage] : commands)
      if (cmd->parsed()) stage->run(config);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pl::exit_code_for(e);
  }
}
