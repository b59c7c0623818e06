#include "fwi/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace fwi {

const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::inclusion: return "inclusion";
    case ExperimentKind::concrete: return "concrete";
    case ExperimentKind::custom: return "custom";
  }
  return "?";
}

const char* to_string(Method method) {
  switch (method) {
    case Method::psd: return "psd";
    case Method::gn: return "gn";
    case Method::fn: return "fn";
    case Method::agn: return "agn";
    case Method::agn_seq: return "agn-seq";
    case Method::wri: return "wri";
  }
  return "?";
}

Method parse_method(const std::string& tag) {
  for (Method m : {Method::psd, Method::gn, Method::fn, Method::agn, Method::agn_seq, Method::wri}) {
    if (tag == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + tag + "'");
}

namespace {

ExperimentKind parse_experiment(const std::string& tag) {
  for (auto k : {ExperimentKind::inclusion, ExperimentKind::concrete, ExperimentKind::custom}) {
    if (tag == to_string(k)) return k;
  }
  throw ConfigError("unknown experiment '" + tag + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("bad number for '" + key + "': " + v);
  }
  if (used != v.size() || !std::isfinite(x)) throw ConfigError("bad number for '" + key + "': " + v);
  return x;
}

int parse_int(const std::string& key, const std::string& v) {
  const double x = parse_double(key, v);
  if (x != std::floor(x) || std::abs(x) > 1e9) throw ConfigError("bad integer for '" + key + "': " + v);
  return static_cast<int>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("bad boolean for '" + key + "': " + v);
}

std::vector<double> parse_list(const std::string& key, std::string v) {
  std::replace(v.begin(), v.end(), ',', ' ');
  std::istringstream in(v);
  std::vector<double> out;
  for (std::string item; in >> item;) out.push_back(parse_double(key, item));
  return out;
}

std::string format_double(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

}  // namespace

void InversionConfig::validate() const {
  if (frequencies_hz.empty()) throw ConfigError("frequencies_hz is empty");
  for (size_t k = 0; k < frequencies_hz.size(); ++k) {
    if (!(frequencies_hz[k] > 0.0)) throw ConfigError("frequencies must be positive");
    if (k > 0 && !(frequencies_hz[k] > frequencies_hz[k - 1])) {
      throw ConfigError("frequencies must be strictly increasing");
    }
  }
  if (iterations < 0) throw ConfigError("iterations must be nonnegative");
  if (eps && !(*eps >= 0.0)) throw ConfigError("eps must be nonnegative");
  if (!(eps_relative > 0.0)) throw ConfigError("eps_relative must be positive");
  if (mu && !(*mu > 0.0)) throw ConfigError("mu must be positive");
  if (!(mu_growth >= 1.0)) throw ConfigError("mu_growth must be at least 1");
  if (!(lambda0 >= 0.0)) throw ConfigError("lambda0 must be nonnegative");
  if (pml_width < 0 || !(pml_strength >= 0.0)) throw ConfigError("bad pml settings");
  if (method == Method::wri && eps && *eps == 0.0 && !mu) {
    throw ConfigError("wri needs a positive mu");
  }
  if (grid) grid->validate();
  if (experiment == ExperimentKind::custom &&
      (true_model_path.empty() || initial_model_path.empty() || geometry_path.empty())) {
    throw ConfigError("custom experiments need true_model_path, initial_model_path, geometry_path");
  }
}

InversionConfig parse_config(std::istream& in) {
  InversionConfig c;
  std::map<std::string, std::string> seen;
  std::optional<int> nx, nz;
  std::optional<double> dx, dz;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (!seen.emplace(key, v).second) throw ConfigError("repeated key '" + key + "'");

    if (key == "experiment") c.experiment = parse_experiment(v);
    else if (key == "method") c.method = parse_method(v);
    else if (key == "frequencies_hz") c.frequencies_hz = parse_list(key, v);
    else if (key == "iterations") c.iterations = parse_int(key, v);
    else if (key == "eps") c.eps = parse_double(key, v);
    else if (key == "eps_relative") c.eps_relative = parse_double(key, v);
    else if (key == "mu") c.mu = parse_double(key, v);
    else if (key == "mu_growth") c.mu_growth = parse_double(key, v);
    else if (key == "lambda0") c.lambda0 = parse_double(key, v);
    else if (key == "symmetrize") c.symmetrize = parse_bool(key, v);
    else if (key == "pml_width") c.pml_width = parse_int(key, v);
    else if (key == "pml_strength") c.pml_strength = parse_double(key, v);
    else if (key == "grid_nx") nx = parse_int(key, v);
    else if (key == "grid_nz") nz = parse_int(key, v);
    else if (key == "grid_dx") dx = parse_double(key, v);
    else if (key == "grid_dz") dz = parse_double(key, v);
    else if (key == "velocity_clamp") c.velocity_clamp = parse_bool(key, v);
    else if (key == "report_agn_gap") c.report_agn_gap = parse_bool(key, v);
    else if (key == "synthesize_from") {
      if (v != "true" && v != "initial") throw ConfigError("synthesize_from is 'true' or 'initial'");
      c.synthesize_from_initial = v == "initial";
    }
    else if (key == "data_dir") c.data_dir = v;
    else if (key == "out_dir") c.out_dir = v;
    else if (key == "true_model_path") c.true_model_path = v;
    else if (key == "initial_model_path") c.initial_model_path = v;
    else if (key == "geometry_path") c.geometry_path = v;
    else throw ConfigError("unknown key '" + key + "'");
  }
  const int given = nx.has_value() + nz.has_value() + dx.has_value() + dz.has_value();
  if (given == 4) {
    c.grid = Grid2D{*nx, *nz, *dx, *dz};
  } else if (given != 0) {
    throw ConfigError("grid override needs grid_nx, grid_nz, grid_dx and grid_dz");
  }
  c.validate();
  return c;
}

InversionConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_config(in);
}

void write_config(std::ostream& out, const InversionConfig& c) {
  out << "experiment = " << to_string(c.experiment) << '\n';
  out << "method = " << to_string(c.method) << '\n';
  out << "frequencies_hz =";
  for (size_t k = 0; k < c.frequencies_hz.size(); ++k) {
    out << (k ? ", " : " ") << format_double(c.frequencies_hz[k]);
  }
  out << '\n';
  out << "iterations = " << c.iterations << '\n';
  if (c.eps) out << "eps = " << format_double(*c.eps) << '\n';
  out << "eps_relative = " << format_double(c.eps_relative) << '\n';
  if (c.mu) out << "mu = " << format_double(*c.mu) << '\n';
  out << "mu_growth = " << format_double(c.mu_growth) << '\n';
  out << "lambda0 = " << format_double(c.lambda0) << '\n';
  out << "symmetrize = " << (c.symmetrize ? "true" : "false") << '\n';
  out << "pml_width = " << c.pml_width << '\n';
  out << "pml_strength = " << format_double(c.pml_strength) << '\n';
  if (c.grid) {
    out << "grid_nx = " << c.grid->nx << "\ngrid_nz = " << c.grid->nz
        << "\ngrid_dx = " << format_double(c.grid->dx) << "\ngrid_dz = " << format_double(c.grid->dz)
        << '\n';
  }
  out << "velocity_clamp = " << (c.velocity_clamp ? "true" : "false") << '\n';
  out << "report_agn_gap = " << (c.report_agn_gap ? "true" : "false") << '\n';
  out << "synthesize_from = " << (c.synthesize_from_initial ? "initial" : "true") << '\n';
  out << "data_dir = " << c.data_dir << '\n';
  out << "out_dir = " << c.out_dir << '\n';
  if (!c.true_model_path.empty()) out << "true_model_path = " << c.true_model_path << '\n';
  if (!c.initial_model_path.empty()) out << "initial_model_path = " << c.initial_model_path << '\n';
  if (!c.geometry_path.empty()) out << "geometry_path = " << c.geometry_path << '\n';
}

Experiment load_experiment(const InversionConfig& config) {
  switch (config.experiment) {
    case ExperimentKind::inclusion: return build_inclusion_model(config.grid);
    case ExperimentKind::concrete: return build_concrete_model(config.grid);
    case ExperimentKind::custom: {
      Experiment e;
      e.true_model = read_velocity_grid(config.true_model_path);
      e.initial_model = read_velocity_grid(config.initial_model_path);
      if (!(e.true_model.grid == e.initial_model.grid)) {
        throw ConfigError("true and initial models are on different grids");
      }
      e.geometry = read_geometry(config.geometry_path, e.true_model.grid);
      return e;
    }
  }
  throw ConfigError("unknown experiment");
}

std::string data_path(const InversionConfig& config, double frequency_hz) {
  std::ostringstream name;
  name << "data_" << frequency_hz << "hz.txt";
  return (std::filesystem::path(config.data_dir) / name.str()).string();
}

std::vector<std::string> synthesize(const InversionConfig& config) {
  config.validate();
  const Experiment e = load_experiment(config);
  std::filesystem::create_directories(config.data_dir);
  const Model& source = config.synthesize_from_initial ? e.initial_model : e.true_model;
  const PmlConfig pml{config.pml_width, config.pml_strength, e.initial_model.values};
  std::vector<std::string> paths;
  for (double f : config.frequencies_hz) {
    const auto fact = factorize(assemble(source, f, pml));
    paths.push_back(data_path(config, f));
    write_observed(paths.back(), ObservedData{f, synthetic_data(fact, e.geometry)});
  }
  const std::filesystem::path dir(config.data_dir);
  write_velocity_grid((dir / "true_model.txt").string(), e.true_model);
  write_velocity_grid((dir / "initial_model.txt").string(), e.initial_model);
  write_geometry((dir / "geometry.txt").string(), e.geometry);
  return paths;
}

std::vector<ObservedData> load_data(const InversionConfig& config) {
  std::vector<ObservedData> data;
  for (double f : config.frequencies_hz) {
    data.push_back(read_observed(data_path(config, f)));
    if (data.back().frequency_hz != f) {
      throw ConfigError("data file " + data_path(config, f) + " holds another frequency");
    }
  }
  return data;
}

double model_rms(const Model& model, const Model& reference) {
  const VectorXd dv = model_to_velocity(model) - model_to_velocity(reference);
  return std::sqrt(dv.squaredNorm() / static_cast<double>(dv.size()));
}

namespace {

bool needs_kernel(Method m) {
  return m == Method::gn || m == Method::fn || m == Method::agn;
}

bool needs_scattering(Method m) { return m == Method::agn || m == Method::agn_seq; }

struct Bounds {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
};

class Inversion {
 public:
  Inversion(const InversionConfig& config, const Experiment& e,
            const std::vector<ObservedData>& data, const IterationObserver& observer,
            InversionResult& result)
      : config_(config), e_(e), data_(data), observer_(observer), result_(result),
        pml_{config.pml_width, config.pml_strength, e.initial_model.values} {
    if (config.velocity_clamp) {
      const VectorXd v = model_to_velocity(e.true_model);
      bounds_.lo = 1.0 / std::pow(1.5 * v.maxCoeff(), 2);
      bounds_.hi = 1.0 / std::pow(0.5 * v.minCoeff(), 2);
    }
  }

  void run() {
    const auto t0 = std::chrono::steady_clock::now();
    Model m = e_.initial_model;
    result_.method = config_.method;
    result_.final_model = m;
    result_.records.push_back(
        {0, config_.frequencies_hz.front(), misfit(m, e_.geometry, data_.front(), pml_),
         model_rms(m, e_.true_model), std::nullopt});

    int iteration = 0;
    for (size_t k = 0; k < data_.size(); ++k) {
      std::optional<double> eps = config_.eps;
      std::optional<ModelUpdate> stalled;
      for (int it = 0; it < config_.iterations; ++it) {
        ++iteration;
        const FrequencyState st = prepare(m, data_[k], eps);
        if (st.data_hessian && !eps) eps = st.data_hessian->eps;

        ModelUpdate up;
        if (stalled && !(config_.method == Method::wri && config_.mu_growth != 1.0)) {
          // Same model and settings as the failed step: the outcome repeats.
          up = *stalled;
        } else {
          up = step(st, data_[k], eps, it);
        }
        stalled.reset();
        if (up.diagnostics.stagnated) stalled = up;

        Model next(m.grid, apply(m.values, up.delta));
        up.delta = next.values - m.values;
        if (observer_) observer_({iteration, st, up, next});
        m = std::move(next);
        result_.final_model = m;
        result_.records.push_back({iteration, data_[k].frequency_hz, up.diagnostics.misfit_after,
                                   model_rms(m, e_.true_model), std::move(up)});
      }
    }
    result_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

 private:
  VectorXd apply(const VectorXd& m, const VectorXd& delta) const {
    VectorXd next = m + delta;
    if (config_.velocity_clamp) next = next.cwiseMax(bounds_.lo).cwiseMin(bounds_.hi);
    return next;
  }

  FrequencyState prepare(const Model& m, const ObservedData& d,
                         const std::optional<double>& eps) const {
    StateOptions o;
    o.pml = pml_;
    o.kernel = needs_kernel(config_.method) ||
               (config_.method == Method::agn_seq && config_.report_agn_gap);
    const bool wri_needs_eps = config_.method == Method::wri && !config_.mu && !eps;
    if (needs_scattering(config_.method) || wri_needs_eps) {
      if (eps) {
        o.eps = eps;
      } else {
        o.eps_relative = config_.eps_relative;
      }
    }
    return prepare_state(m, e_.geometry, d, o);
  }

  double trial(const VectorXd& m, const VectorXd& delta, const ObservedData& d) const {
    const VectorXd next = apply(m, delta);
    if (!next.allFinite() || (next.array() <= 0.0).any()) {
      return std::numeric_limits<double>::infinity();
    }
    return misfit(Model(e_.true_model.grid, next), e_.geometry, d, pml_);
  }

  ModelUpdate step(const FrequencyState& st, const ObservedData& d,
                   const std::optional<double>& eps, int it) const {
    const std::span<const FrequencyState> states(&st, 1);
    const VectorXd& m = st.model.values;
    const double before = st.misfit();
    const TrialMisfit trial_fn = [&](const VectorXd& delta) { return trial(m, delta, d); };
    const NewtonOptions newton{config_.lambda0, 10.0, 8, config_.symmetrize};

    switch (config_.method) {
      case Method::psd: {
        const auto curvature = [&](const VectorXd& p) { return gauss_newton_curvature(states, p); };
        return psd_step(pseudo_hessian(states), gradient(states), trial_fn, before, curvature);
      }
      case Method::gn:
        return newton_step(gn_hessian(states), gradient(states), newton, trial_fn, before);
      case Method::fn:
        return newton_step(full_hessian(states), gradient(states), newton, trial_fn, before);
      case Method::agn:
        return newton_step(agn_hessian(states), gradient(states), newton, trial_fn, before);
      case Method::agn_seq: {
        ModelUpdate up = sequential_step(states);
        if (config_.report_agn_gap) {
          const VectorXd g = gradient(states);
          const double gn = g.norm();
          if (gn > 0.0) up.diagnostics.agn_residual = (agn_hessian(states).apply(up.delta) + g).norm() / gn;
        }
        return accept_by_halving(std::move(up), trial_fn, before);
      }
      case Method::wri: {
        const double mu = (config_.mu ? *config_.mu : *eps) * std::pow(config_.mu_growth, it);
        const WriSystem system(st.fact.op(), st.geometry, mu);
        WriFrequency f{&st.fact.op(), MatrixXcd(st.layout().size(), st.geometry.source_count())};
        for (int s = 0; s < st.geometry.source_count(); ++s) {
          f.u_e.col(s) =
              system.assimilate(d.values.col(s), source_vector(st.geometry, s, st.layout())).u_e;
        }
        const WriUpdate w = wri_update({&f, 1}, st.geometry, st.model);
        ModelUpdate up;
        up.method = "wri";
        up.delta = w.delta_source_residual;
        up.diagnostics.dead_nodes = w.dead_nodes;
        up.diagnostics.scattering_norm =
            (st.fact.op().matrix * f.u_e - source_matrix(st.geometry, st.layout())).colwise().norm().sum();
        return accept_by_halving(std::move(up), trial_fn, before);
      }
    }
    throw ConfigError("unknown method");
  }

  const InversionConfig& config_;
  const Experiment& e_;
  const std::vector<ObservedData>& data_;
  const IterationObserver& observer_;
  InversionResult& result_;
  PmlConfig pml_;
  Bounds bounds_;
};

}  // namespace

InversionResult invert(const InversionConfig& config, const Experiment& experiment,
                       const std::vector<ObservedData>& data, const IterationObserver& observer) {
  config.validate();
  if (data.size() != config.frequencies_hz.size()) {
    throw ConfigError("one dataset per configured frequency is required");
  }
  for (size_t k = 0; k < data.size(); ++k) {
    if (data[k].frequency_hz != config.frequencies_hz[k]) {
      throw ConfigError("dataset frequencies do not match the configuration");
    }
  }
  InversionResult result;
  Inversion(config, experiment, data, observer, result).run();
  return result;
}

std::string curve_path(const InversionConfig& config) {
  return (std::filesystem::path(config.out_dir) /
          (std::string("curve_") + to_string(config.method) + ".csv"))
      .string();
}

namespace {

void persist(const InversionConfig& config, const InversionResult& result) {
  std::filesystem::create_directories(config.out_dir);
  std::ofstream curve(curve_path(config));
  if (!curve) throw ConfigError("cannot write " + curve_path(config));
  write_curve(curve, result);
  write_velocity_grid((std::filesystem::path(config.out_dir) /
                       (std::string("model_") + to_string(config.method) + ".txt"))
                          .string(),
                      result.final_model);
}

}  // namespace

InversionResult invert(const InversionConfig& config, const IterationObserver& observer) {
  config.validate();
  const Experiment e = load_experiment(config);
  const auto data = load_data(config);
  InversionResult result;
  try {
    Inversion(config, e, data, observer, result).run();
  } catch (const NumericalError&) {
    if (!result.records.empty()) persist(config, result);
    throw;
  }
  persist(config, result);
  return result;
}

void write_curve(std::ostream& out, const InversionResult& result) {
  out << "iter,freq_hz,misfit,model_rms\n" << std::setprecision(17);
  for (const auto& r : result.records) {
    out << r.iteration << ',' << r.frequency_hz << ',' << r.misfit << ',' << r.model_rms << '\n';
  }
}

void write_comparison(std::ostream& out, const std::vector<InversionResult>& results) {
  std::map<std::string, int> uses;
  out << "iter";
  for (const auto& r : results) {
    std::string name = to_string(r.method);
    if (const int n = uses[name]++; n > 0) name += "_" + std::to_string(n + 1);
    out << ',' << name;
  }
  out << '\n' << std::setprecision(17);
  size_t rows = 0;
  for (const auto& r : results) rows = std::max(rows, r.records.size());
  for (size_t i = 0; i < rows; ++i) {
    out << i;
    for (const auto& r : results) {
      out << ',';
      if (i < r.records.size()) out << r.records[i].misfit;
    }
    out << '\n';
  }
}

std::string compare(const std::vector<InversionConfig>& configs, const std::string& csv_path) {
  if (configs.empty()) throw ConfigError("nothing to compare");
  const auto& first = configs.front();
  for (const auto& c : configs) {
    if (c.experiment != first.experiment || c.frequencies_hz != first.frequencies_hz ||
        c.data_dir != first.data_dir || c.grid != first.grid || c.iterations != first.iterations) {
      throw ConfigError("compared runs must share experiment, data, grid and iterations");
    }
  }
  std::vector<InversionResult> results;
  for (const auto& c : configs) results.push_back(invert(c));

  const std::filesystem::path csv(csv_path);
  if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
  {
    std::ofstream out(csv);
    if (!out) throw ConfigError("cannot write " + csv_path);
    write_comparison(out, results);
  }
  std::filesystem::path script = csv;
  script.replace_extension(".py");
  std::ofstream py(script);
  py << "import sys\n"
        "import pandas as pd\n"
        "import matplotlib\n"
        "matplotlib.use('Agg')\n"
        "import matplotlib.pyplot as plt\n\n"
        "csv = sys.argv[1] if len(sys.argv) > 1 else '"
     << csv.filename().string()
     << "'\n"
        "table = pd.read_csv(csv)\n"
        "fig, ax = plt.subplots(figsize=(6, 4))\n"
        "for name in table.columns[1:]:\n"
        "    ax.semilogy(table['iter'], table[name], label=name)\n"
        "ax.set_xlabel('iteration')\n"
        "ax.set_ylabel('misfit')\n"
        "ax.legend()\n"
        "fig.tight_layout()\n"
        "fig.savefig(csv.rsplit('.', 1)[0] + '.png', dpi=150)\n";
  return csv.string();
}

}  // namespace fwi
