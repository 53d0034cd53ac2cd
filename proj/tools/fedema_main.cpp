// fedema: federated continual-learning simulator front end.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fedema/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated EMA continual-learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, axis, values_text;
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_flag("--quiet", quiet);

  auto* ablate = app.add_subcommand("ablate", "Sweep lambda or the EMA window");
  ablate->add_option("--config", config_path, "Experiment config (JSON)")->required();
  ablate->add_option("--axis", axis, "lambda or window")->required()->check(CLI::IsMember({"lambda", "window"}));
  ablate->add_option("--values", values_text, "Comma-separated sweep values")->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_option("--seed", seed, "Override the config seed");
  ablate->add_flag("--quiet", quiet);

  std::uint64_t check_seed = 0;
  bool corrupt = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  gradcheck->add_option("--seed", check_seed, "Random seed");
  gradcheck->add_flag("--corrupt-gradient", corrupt, "Test hook: perturb the analytic gradient")->group("");

  std::size_t phase = 0, count = 16;
  auto* export_cmd = app.add_subcommand("export-scenes", "Write generated scenes as scenes.bin + scenes.json");
  export_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required();
  export_cmd->add_option("--out", out_dir, "Output directory")->required();
  export_cmd->add_option("--phase", phase, "Drift phase index");
  export_cmd->add_option("--count", count, "Number of scenes");
  export_cmd->add_option("--seed", seed, "Override the config seed");
  export_cmd->add_flag("--quiet", quiet);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return fedema::kExitBadConfig;
  }

  const fedema::RunOptions options{seed, quiet};
  if (*run) return fedema::cmd_run(config_path, out_dir, options, std::cout, std::cerr);
  if (*ablate) {
    std::vector<std::string> values;
    std::string item;
    for (char ch : values_text + ",") {
      if (ch == ',') {
        if (!item.empty()) values.push_back(item);
        item.clear();
      } else if (ch != ' ') {
        item += ch;
      }
    }
    return fedema::cmd_ablate(config_path, axis, values, out_dir, options, std::cout, std::cerr);
  }
  if (*gradcheck) return fedema::cmd_gradcheck(check_seed, corrupt, std::cout, std::cerr);
  return fedema::cmd_export_scenes(config_path, out_dir, phase, count, options, std::cout, std::cerr);
}
