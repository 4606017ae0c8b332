#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include "didkit/commands.hpp"
#include "didkit/config.hpp"
#include "didkit/error.hpp"

namespace {

void print_error(const std::string& code, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = {{"code", code}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Staggered difference-in-differences toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  int threads = 0;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "Seed for bootstrap and simulation");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)")
      ->check(CLI::NonNegativeNumber);

  using Command = didkit::CommandResult (*)(const didkit::Config&, const std::filesystem::path&);
  const std::pair<const char*, Command> verbs[] = {
      {"build-panel", didkit::cmd_build_panel}, {"estimate", didkit::cmd_estimate},
      {"event-study", didkit::cmd_event_study}, {"diagnostics", didkit::cmd_diagnostics},
      {"simulate", didkit::cmd_simulate},       {"validate", didkit::cmd_validate}};
  const char* help[] = {"Aggregate micro records into a panel CSV",
                        "TWFE and group-time estimates per outcome",
                        "Event-study series with uniform bands",
                        "Balance, KS, summary and density tables",
                        "Monte Carlo report on a synthetic design",
                        "Validate a panel CSV"};
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(verbs); ++i) {
    auto* sub = app.add_subcommand(verbs[i].first, help[i]);
    sub->fallthrough();
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("USAGE_ERROR", e.what());
    return 64;
  }

  if (config_path.empty() && !subs[4]->parsed()) {
    print_error("USAGE_ERROR", "--config is required for this command");
    return 64;
  }

  try {
    if (threads > 0) omp_set_num_threads(threads);
    didkit::Config cfg;
    if (!config_path.empty()) cfg = didkit::load_config(config_path);
    if (seed) cfg.set_seed(*seed);
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      const auto result = verbs[i].second(cfg, out_dir);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
      for (const auto& p : result.written) std::cout << p.string() << "\n";
      return result.exit_code;
    }
  } catch (const didkit::Error& e) {
    print_error(e.code(), e.message());
    return 1;
  } catch (const std::exception& e) {
    print_error("INTERNAL_ERROR", e.what());
    return 1;
  }
  return 0;
}
