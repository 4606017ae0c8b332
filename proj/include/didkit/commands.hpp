#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "didkit/config.hpp"
#include "didkit/panel.hpp"

namespace didkit {

struct CommandResult {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
  int exit_code = 0;
};

// Each command reads its inputs from the config's data section and writes
// into `out_dir` (created if needed). Errors propagate as didkit::Error.

/// micro + parishes (+ sites, anchors) -> panel.csv with outcome columns,
/// dist_<anchor> and ma_<kind> columns.
CommandResult cmd_build_panel(const Config& cfg, const std::filesystem::path& out_dir);
/// estimates.csv / estimates.json, plus cross_section.csv when configured.
CommandResult cmd_estimate(const Config& cfg, const std::filesystem::path& out_dir);
/// event_study.csv and group_time.csv.
CommandResult cmd_event_study(const Config& cfg, const std::filesystem::path& out_dir);
/// balance.csv, ks.csv, summary.csv, density.csv.
CommandResult cmd_diagnostics(const Config& cfg, const std::filesystem::path& out_dir);
/// simulation.json.
CommandResult cmd_simulate(const Config& cfg, const std::filesystem::path& out_dir);
/// validation.json; exit code 2 when the report has errors.
CommandResult cmd_validate(const Config& cfg, const std::filesystem::path& out_dir);

/// Panel built from the config's data section (used by build-panel).
PanelDataset assemble_panel(const Config& cfg, std::vector<std::string>& warnings);

}  // namespace didkit
