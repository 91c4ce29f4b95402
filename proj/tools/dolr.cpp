#include "dolr/acceptance.hpp"
#include "dolr/runner.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

int main(int argc, char** argv) {
  CLI::App app{"Dynamically orthogonal low-rank SDE engine"};
  app.set_version_flag("--version", std::string(dolr::build_id()));
  bool self_test = false;
  std::vector<int> only;
  app.add_flag("--self-test", self_test, "Run the acceptance suite");
  app.add_option("--criterion", only, "Restrict --self-test to these criterion ids");

  std::string config_path;
  std::string output_override;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Integrate one scheme and write trajectory, diagnostics and events"},
      {"compare", "Compare two schemes with common noise under dt-halving"},
      {"picard-demo", "Picard iterates on the local existence window"},
      {"lipschitz-harness", "Random projector-Lipschitz trials"},
      {"explosion-study", "DO run with explosion monitoring and rank restart"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output", output_override, "Override output.dir");
  }
  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : dolr::kExitConfig;
  }

  if (self_test) {
    const auto results = dolr::run_acceptance(std::cout, only);
    for (const auto& r : results)
      if (!r.pass) return dolr::kExitSelfTest;
    return dolr::kExitOk;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return dolr::kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  std::ifstream in(config_path);
  std::stringstream text;
  text << in.rdbuf();
  dolr::RunConfig cfg;
  try {
    cfg = dolr::parse_config(text.str());
  } catch (const dolr::Error& e) {
    std::cerr << "error kind=" << dolr::to_string(e.kind()) << " message=\"" << e.what() << "\"\n";
    return dolr::kExitConfig;
  }
  if (!output_override.empty()) cfg.output_dir = output_override;
  return dolr::run_command(command, cfg, std::cerr);
}
