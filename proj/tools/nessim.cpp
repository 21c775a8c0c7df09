#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "nessim/nessim.hpp"

namespace {

int report(const char* kind, const std::exception& e, int code) {
  std::cerr << "nessim: " << kind << ": " << e.what() << '\n';
  return code;
}

template <class Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const nessim::ConfigError& e) {
    return report("invalid configuration", e, 2);
  } catch (const nessim::NonQuadratic& e) {
    return report("invalid configuration", e, 2);
  } catch (const nessim::BlowUp& e) {
    return report("numerical failure", e, 3);
  } catch (const nessim::NotHurwitz& e) {
    return report("numerical failure", e, 3);
  } catch (const nessim::DomainError& e) {
    return report("invalid input", e, 2);
  } catch (const std::exception& e) {
    return report("error", e, 1);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator for anharmonic chains coupled to two heat reservoirs"};
  app.set_version_flag("--version", std::string(nessim::kVersion));
  app.require_subcommand(1);

  std::string run_path;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  auto* run = app.add_subcommand("run", "Run the experiment described by a configuration file");
  run->add_option("config", run_path, "Configuration file")->required()->check(CLI::ExistingFile);
  run->add_option("--output-dir,-o", output_dir, "Override [run] output_dir");
  run->add_option("--seed", seed, "Override [run] seed");
  run->add_option("--threads,-j", threads, "Override [run] threads")->check(CLI::PositiveNumber);

  std::string validate_path;
  bool print_resolved = false;
  auto* validate = app.add_subcommand("validate", "Check a configuration file without running it");
  validate->add_option("config", validate_path, "Configuration file")->required()->check(CLI::ExistingFile);
  validate->add_flag("--print", print_resolved, "Also print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*validate) {
    return guarded([&] {
      const auto cfg = nessim::load_config_file(validate_path);
      for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
      if (print_resolved) std::cout << cfg.resolved_ini;
      std::cout << "ok\n";
      return 0;
    });
  }
  return guarded([&] {
    const auto cfg = nessim::load_config_file(run_path, {seed, threads, output_dir});
    for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
    const auto summary = nessim::run_experiment(cfg);
    std::cout << summary["results"].dump(2) << '\n';
    std::cout << "wrote " << cfg.output_dir << "/summary.json\n";
    return 0;
  });
}
