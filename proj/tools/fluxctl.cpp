#include <CLI11.hpp>

#include <iostream>

#include "fluxctl/cli.hpp"

int main(int argc, char** argv) {
  namespace cli = fluxctl::cli;
  CLI::App app{"Hybrid flux-balance surrogate modeling and dynamic flux control"};
  app.set_version_flag("--version", FLUXCTL_VERSION);
  app.require_subcommand(1);

  cli::RunOptions opts;
  std::uint64_t seed = 0;
  for (const auto& name : cli::command_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " step");
    sub->add_option("--config", opts.config_path, "JSON config file")->required();
    sub->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "seed overriding the config");
  }

  std::string command = argc > 1 ? argv[1] : "";
  const auto& names = cli::command_names();
  if (!command.empty() && command[0] != '-' && std::find(names.begin(), names.end(), command) == names.end()) {
    std::cerr << cli::error_line(cli::kExitUsage, "usage", command, "unknown command '" + command + "'") << '\n';
    return cli::kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << cli::error_line(cli::kExitUsage, "usage", command, e.what()) << '\n';
    return cli::kExitUsage;
  }

  const auto* chosen = app.get_subcommands().front();
  command = chosen->get_name();
  if (chosen->count("--seed") > 0) opts.seed = seed;

  const cli::RunOutcome out = cli::run_command(command, opts);
  if (out.exit_code != cli::kExitOk) {
    std::cerr << out.error_line << '\n';
    return out.exit_code;
  }
  std::cout << out.result.dump() << '\n';
  return cli::kExitOk;
}
