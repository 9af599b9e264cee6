#include <exception>
#include <iostream>

#include "commands.hpp"

using namespace ctxattn::cli;

int main(int argc, char** argv) {
  CLI::App app{"ctxattn: context-aware NMT with supervised attention"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file; options of a subcommand go in its [section]");
  app.set_version_flag("--version", CTXATTN_VERSION);

  Globals g;
  app.add_option("--seed", g.seed, "Global seed, recorded in every report")->capture_default_str();
  app.add_option("--report-dir", g.report_dir,
                 std::string("Report directory (the ") + kReportDirEnv + " environment variable overrides it)")
      ->capture_default_str();

  std::vector<Command> commands;
  add_train(app, g, commands);
  add_align_audit(app, g, commands);
  add_contrastive(app, g, commands);
  add_translate(app, g, commands);
  add_forge_wsd(app, g, commands);
  add_scat_stats(app, g, commands);
  add_convert_scat(app, g, commands);
  add_synth(app, g, commands);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  for (auto& cmd : commands) {
    if (!cmd.sub->parsed()) continue;
    try {
      if (cmd.validate) cmd.validate();
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitValidation;
    }
    try {
      cmd.run();
    } catch (const ValidationError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitValidation;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
    return kExitOk;
  }
  return kExitValidation;
}
