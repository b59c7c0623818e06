#include "fwi/verify.hpp"

#include <json.hpp>

#include <sstream>

namespace fwi {

const char* to_string(Check check) {
  switch (check) {
    case Check::gradient: return "gradient";
    case Check::hessian: return "hessian";
    case Check::identity: return "identity";
    case Check::equivalence: return "equivalence";
    case Check::limits: return "limits";
  }
  return "?";
}

Check parse_check(const std::string& tag) {
  for (Check c : {Check::gradient, Check::hessian, Check::identity, Check::equivalence, Check::limits}) {
    if (tag == to_string(c)) return c;
  }
  throw ConfigError("unknown check '" + tag + "'");
}

bool VerificationReport::passed() const {
  for (const auto& m : measurements) {
    if (!m.passed()) return false;
  }
  return !measurements.empty();
}

std::string VerificationReport::to_json() const {
  nlohmann::json j;
  j["check"] = to_string(check);
  j["passed"] = passed();
  j["measurements"] = nlohmann::json::array();
  for (const auto& m : measurements) {
    j["measurements"].push_back(
        {{"name", m.name}, {"value", m.value}, {"tolerance", m.tolerance}, {"passed", m.passed()}});
  }
  return j.dump(2);
}

namespace {

// 10×10 Dirichlet grid with a 3×3 fast block and a mildly rough start model.
struct Tiny {
  Grid2D grid{10, 10, 10.0, 10.0};
  double frequency_hz = 13.0;
  PmlConfig pml{0, 0.0, std::nullopt};
  Model true_model;
  Model start_model;
  AcquisitionGeometry geometry;
  ObservedData observed;

  Tiny() {
    VectorXd v = VectorXd::Constant(grid.size(), 1500.0);
    for (int j = 4; j < 7; ++j)
      for (int i = 3; i < 6; ++i) v(grid.index(i, j)) = 2000.0;
    true_model = velocity_to_model(grid, v);
    VectorXd v0 = VectorXd::Constant(grid.size(), 1500.0);
    for (int k = 0; k < grid.size(); ++k) v0(k) += 7.0 * ((k * 37) % 11);
    start_model = velocity_to_model(grid, v0);
    geometry.grid = grid;
    geometry.sources = {{{1, 1}}, {{8, 2}}, {{3, 8}}};
    geometry.receivers = {{1, 5}, {5, 1}, {8, 8}, {5, 8}, {8, 5}};
    observed = {frequency_hz,
                synthetic_data(factorize(assemble(true_model, frequency_hz, pml)), geometry)};
  }

  FrequencyState state(const Model& m, std::optional<double> eps = std::nullopt) const {
    StateOptions o;
    o.pml = pml;
    o.eps = eps;
    return prepare_state(m, geometry, observed, o);
  }
};

struct Inclusion {
  Experiment e = build_inclusion_model(Grid2D{51, 51, 40.0, 40.0});
  double frequency_hz = 5.0;
  PmlConfig pml;
  ObservedData observed;

  Inclusion() {
    pml.collar_reference = e.initial_model.values;
    observed = {frequency_hz,
                synthetic_data(factorize(assemble(e.true_model, frequency_hz, pml)), e.geometry)};
  }

  FrequencyState state(std::optional<double> eps) const {
    StateOptions o;
    o.pml = pml;
    o.eps = eps;
    return prepare_state(e.initial_model, e.geometry, observed, o);
  }
};

std::span<const FrequencyState> one(const FrequencyState& st) { return {&st, 1}; }

double mean_gram(const FrequencyState& st) {
  return st.kernel->adjoint_greens.colwise().squaredNorm().mean();
}

double gram_norm(const FrequencyState& st) {
  const MatrixXcd& k = st.kernel->adjoint_greens;
  return (k.adjoint() * k).norm();
}

std::string mu_label(double rel) {
  std::ostringstream s;
  s << rel;
  return s.str();
}

void gradient_check(VerificationReport& r) {
  const Tiny fx;
  const auto st = fx.state(fx.start_model);
  const auto f = misfit_function(fx.start_model, fx.geometry, {fx.observed}, fx.pml);
  const VectorXd fd = fd_gradient(f, fx.start_model.values, 1e-6 * fx.start_model.values);
  r.measurements.push_back(
      {"gradient_vs_fd_max_rel", max_relative_component_error(gradient(one(st)), fd), 1e-5});
}

void hessian_check(VerificationReport& r) {
  const Tiny fx;
  const auto st = fx.state(fx.start_model, 0.0);
  const auto fd = fd_hessian_oracle(fx.start_model, fx.geometry, {fx.observed}, fx.pml, 1e-4);
  r.measurements.push_back(
      {"full_vs_fd_rel_frobenius", relative_error(full_hessian(one(st)).dense, fd.dense), 1e-4});
  r.measurements.push_back({"r_direct_vs_decomposed_rel_frobenius",
                            relative_error(full_R_decomposed(one(st)).total(), full_R_direct(one(st))),
                            1e-8});
  const auto at_truth = fx.state(fx.true_model);
  const auto fd_truth = fd_hessian_oracle(fx.true_model, fx.geometry, {fx.observed}, fx.pml, 1e-4);
  r.measurements.push_back({"gn_vs_fd_at_true_model_rel_frobenius",
                            relative_error(gn_hessian(one(at_truth)).dense, fd_truth.dense), 1e-4});
}

void identity_check(VerificationReport& r) {
  const Inclusion fx;
  const double scale = mean_gram(fx.state(std::nullopt));
  for (double rel : {1e-4, 1e-2, 1.0}) {
    const double mu = rel * scale;
    const auto st = fx.state(mu);
    const WriSystem system(st.fact.op(), fx.e.geometry, mu);
    double identity = 0.0;
    double wavefield = 0.0;
    double normal = 0.0;
    for (int s = 0; s < fx.e.geometry.source_count(); ++s) {
      const auto& b = st.bundles[s];
      const auto ue = system.assimilate(fx.observed.values.col(s),
                                        source_vector(fx.e.geometry, s, st.layout()));
      identity = std::max(identity, assimilation_identity_residual(st.fact, fx.e.geometry,
                                                                   *st.data_hessian, s, ue.u_e,
                                                                   b.residual));
      wavefield = std::max(wavefield, (ue.u_e - (b.u + b.delta_u)).norm() / b.u.norm());
      normal = std::max(normal, ue.normal_residual);
    }
    r.measurements.push_back({"source_identity_residual_mu_" + mu_label(rel), identity, 1e-9});
    r.measurements.push_back({"assimilated_vs_u_plus_du_mu_" + mu_label(rel), wavefield, 1e-10});
    r.measurements.push_back({"normal_equation_residual_mu_" + mu_label(rel), normal, 1e-10});
  }
}

void equivalence_check(VerificationReport& r) {
  const Inclusion fx;
  const double scale = mean_gram(fx.state(std::nullopt));
  for (double rel : {1e-4, 1e-2, 1.0}) {
    const double mu = rel * scale;
    const auto st = fx.state(mu);
    const WriSystem system(st.fact.op(), fx.e.geometry, mu);
    WriFrequency f{&st.fact.op(), MatrixXcd(st.layout().size(), fx.e.geometry.source_count())};
    for (int s = 0; s < fx.e.geometry.source_count(); ++s) {
      f.u_e.col(s) = system
                         .assimilate(fx.observed.values.col(s),
                                     source_vector(fx.e.geometry, s, st.layout()))
                         .u_e;
    }
    const auto w = wri_update({&f, 1}, fx.e.geometry, fx.e.initial_model);
    const auto seq = sequential_step(one(st));
    r.measurements.push_back({"sequential_vs_wri_max_rel_mu_" + mu_label(rel),
                              max_relative_component_error(seq.delta, w.delta_source_residual),
                              1e-10});
    r.measurements.push_back({"wri_routes_max_rel_mu_" + mu_label(rel),
                              max_relative_component_error(w.delta_source_residual,
                                                           w.delta_scattering),
                              1e-10});
  }
}

void limits_check(VerificationReport& r) {
  const Tiny fx;
  const auto probe = fx.state(fx.start_model);
  const double big = 1e8 * gram_norm(probe);
  const auto st = fx.state(fx.start_model, big);
  r.measurements.push_back({"agn_vs_gn_large_eps_rel_frobenius",
                            relative_error(agn_hessian(one(st)).dense, gn_hessian(one(st)).dense),
                            1e-6});

  const double eps = 1e6 * gram_norm(probe);
  const auto damped = fx.state(fx.start_model, eps);
  double worst = 0.0;
  for (const auto& b : damped.bundles) {
    const double sh_dd = (probe.kernel->adjoint_greens * b.residual).norm();
    worst = std::max(worst, std::abs(b.delta_b.norm() * eps / sh_dd - 1.0));
  }
  r.measurements.push_back({"scattering_source_large_eps_scaling", worst, 1e-3});

  const Inclusion inc;
  const auto fact = factorize(assemble(inc.e.initial_model, inc.frequency_hz, inc.pml));
  const auto& a = fact.op().matrix;
  const double mu = 1e10 / (SparseMatrix<Complex>(a.adjoint()) * a).norm();
  const auto ue = wri_assimilated_wavefield(fact.op(), inc.e.geometry, inc.observed, 0, mu);
  const VectorXcd u = fact.solve_forward(source_vector(inc.e.geometry, 0, fact.layout()));
  r.measurements.push_back({"assimilated_large_mu_vs_forward", (ue.u_e - u).norm() / u.norm(), 1e-3});
}

}  // namespace

VerificationReport verify(Check check) {
  VerificationReport r;
  r.check = check;
  switch (check) {
    case Check::gradient: gradient_check(r); break;
    case Check::hessian: hessian_check(r); break;
    case Check::identity: identity_check(r); break;
    case Check::equivalence: equivalence_check(r); break;
    case Check::limits: limits_check(r); break;
  }
  return r;
}

}  // namespace fwi
