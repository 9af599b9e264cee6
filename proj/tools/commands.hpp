#pragma once

#include <functional>
#include <vector>

#include "report.hpp"

namespace ctxattn::cli {

struct Command {
  CLI::App* sub = nullptr;
  std::function<void()> validate;  // throws -> exit 1
  std::function<void()> run;       // throws -> exit 2
};

void add_train(CLI::App& app, const Globals& g, std::vector<Command>& out);
void add_align_audit(CLI::App& app, const Globals& g, std::vector<Command>& out);
void add_contrastive(CLI::App& app, const Globals& g, std::vector<Command>& out);
void add_translate(CLI::App& app, const Globals& g, std::vector<Command>& out);
void add_forge_wsd(CLI::App& app, const Globals& g, std::vector<Command>& out);
void add_scat_stats(CLI::App& app, const Globals& g, std::vector<Command>& out);
void add_convert_scat(CLI::App& app, const Globals& g, std::vector<Command>& out);
void add_synth(CLI::App& app, const Globals& g, std::vector<Command>& out);

}  // namespace ctxattn::cli
