#pragma once

#include "fwi/grid_model.hpp"
#include "fwi/hessians.hpp"
#include "fwi/sensitivity.hpp"
#include "fwi/updaters.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fwi {

enum class ExperimentKind { inclusion, concrete, custom };
enum class Method { psd, gn, fn, agn, agn_seq, wri };

const char* to_string(ExperimentKind kind);
const char* to_string(Method method);
Method parse_method(const std::string& tag);

struct InversionConfig {
  ExperimentKind experiment = ExperimentKind::inclusion;
  Method method = Method::psd;
  std::vector<double> frequencies_hz{5.0};
  /// Outer iterations per frequency.
  int iterations = 20;

  /// Absolute damping of the scattering source. When unset,
  /// ε = eps_relative · mean(diag SSᴴ), evaluated at the first iteration of
  /// each frequency and held for the rest of it.
  std::optional<double> eps;
  double eps_relative = 1e-3;
  /// WRI penalty; defaults to the ε above.
  std::optional<double> mu;
  /// μ_k = μ₀ ρᵏ within a frequency (ρ = 1 keeps μ fixed).
  double mu_growth = 1.0;

  double lambda0 = 1e-3;
  bool symmetrize = true;
  int pml_width = 10;
  double pml_strength = 4.0;

  /// Grid override for the built-in experiments.
  std::optional<Grid2D> grid;
  /// Clamp velocities to [0.5 v_min, 1.5 v_max] of the true model.
  bool velocity_clamp = false;
  /// Record ‖H_agn δm + g‖ / ‖g‖ for agn-seq steps (dense, desk scale).
  bool report_agn_gap = false;
  /// Model used by `synthesize`: the true model, or the initial one.
  bool synthesize_from_initial = false;

  std::string data_dir = "data";
  std::string out_dir = "out";
  // Custom experiments read their models and geometry from files.
  std::string true_model_path;
  std::string initial_model_path;
  std::string geometry_path;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys, repeated
/// keys and malformed values are configuration errors.
InversionConfig parse_config(std::istream& in);
InversionConfig load_config(const std::string& path);
void write_config(std::ostream& out, const InversionConfig& config);

Experiment load_experiment(const InversionConfig& config);
std::string data_path(const InversionConfig& config, double frequency_hz);

/// Writes one data file per frequency, plus the models and geometry.
/// Returns the data file paths.
std::vector<std::string> synthesize(const InversionConfig& config);
std::vector<ObservedData> load_data(const InversionConfig& config);

struct IterationRecord {
  int iteration = 0;
  double frequency_hz = 0.0;
  double misfit = 0.0;
  /// RMS velocity error (m/s) over the physical nodes.
  double model_rms = 0.0;
  std::optional<ModelUpdate> update;
};

struct InversionResult {
  Method method = Method::psd;
  /// Entry 0 is the starting model; one entry per iteration follows.
  std::vector<IterationRecord> records;
  Model final_model;
  double wall_seconds = 0.0;
};

/// State handed to an observer after every iteration.
struct IterationContext {
  int iteration = 0;
  const FrequencyState& state;  // at the model before the step
  const ModelUpdate& update;
  const Model& next_model;
};
using IterationObserver = std::function<void(const IterationContext&)>;

double model_rms(const Model& model, const Model& reference);

InversionResult invert(const InversionConfig& config, const Experiment& experiment,
                       const std::vector<ObservedData>& data,
                       const IterationObserver& observer = {});
/// Loads the experiment and data, inverts, and writes the curve and final model
/// into out_dir. Partial results are written before a numerical error propagates.
InversionResult invert(const InversionConfig& config, const IterationObserver& observer = {});

/// Header "iter,freq_hz,misfit,model_rms", 17 significant digits.
void write_curve(std::ostream& out, const InversionResult& result);
std::string curve_path(const InversionConfig& config);

/// Runs every configuration and writes one CSV with an iteration column and one
/// misfit column per run, plus a plotting script next to it. Returns the CSV path.
std::string compare(const std::vector<InversionConfig>& configs, const std::string& csv_path);
void write_comparison(std::ostream& out, const std::vector<InversionResult>& results);

}  // namespace fwi
