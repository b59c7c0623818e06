#include "fwi/driver.hpp"
#include "fwi/verify.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>

namespace {

void print_summary(const fwi::InversionResult& r, const std::string& curve) {
  const auto& last = r.records.back();
  std::cout << std::setprecision(17) << fwi::to_string(r.method) << ": " << r.records.size() - 1
            << " iterations, misfit " << r.records.front().misfit << " -> " << last.misfit
            << ", model rms " << last.model_rms << " m/s, " << std::setprecision(3)
            << r.wall_seconds << " s\ncurve: " << curve << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-domain acoustic full-waveform inversion"};
  app.require_subcommand(1);

  std::string config_path;
  auto* synth = app.add_subcommand("synth", "Generate observed data for a configuration");
  synth->add_option("--config", config_path, "Configuration file")->required();

  std::string method;
  std::string out_dir;
  auto* inv = app.add_subcommand("invert", "Run an inversion");
  inv->add_option("--config", config_path, "Configuration file")->required();
  inv->add_option("--method", method, "psd, gn, fn, agn, agn-seq or wri (overrides the config)");
  inv->add_option("--out", out_dir, "Output directory (overrides the config)");

  std::string check;
  auto* ver = app.add_subcommand("verify", "Run an oracle suite and print a JSON report");
  ver->add_option("--check", check, "gradient, hessian, identity, equivalence or limits")->required();

  std::vector<std::string> configs;
  std::string csv;
  auto* cmp = app.add_subcommand("compare", "Run several configurations and tabulate misfits");
  cmp->add_option("--configs", configs, "Configuration files")->required()->delimiter(',');
  cmp->add_option("--out", csv, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  try {
    if (*synth) {
      for (const auto& p : fwi::synthesize(fwi::load_config(config_path))) std::cout << p << '\n';
    } else if (*inv) {
      auto config = fwi::load_config(config_path);
      if (!method.empty()) config.method = fwi::parse_method(method);
      if (!out_dir.empty()) config.out_dir = out_dir;
      config.validate();
      print_summary(fwi::invert(config), fwi::curve_path(config));
    } else if (*ver) {
      const auto report = fwi::verify(fwi::parse_check(check));
      std::cout << report.to_json() << '\n';
      if (!report.passed()) return 2;
    } else if (*cmp) {
      std::vector<fwi::InversionConfig> list;
      for (const auto& p : configs) list.push_back(fwi::load_config(p));
      std::cout << fwi::compare(list, csv) << '\n';
    }
  } catch (const fwi::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 3;
  } catch (const fwi::VerificationError& e) {
    std::cerr << "verification failed: " << e.what() << '\n';
    return 2;
  } catch (const fwi::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const std::domain_error& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
