#include "fwi/updaters.hpp"

#include <Eigen/LU>

#include <cmath>

namespace fwi {

namespace {

// Solves (a + diag(damping)) x = −g; Cholesky first when `try_cholesky`.
VectorXd damped_solve(const MatrixXd& a0, const VectorXd& damping, const VectorXd& g,
                      bool try_cholesky, double* rcond) {
  MatrixXd a = a0;
  a.diagonal() += damping;
  if (try_cholesky) {
    Eigen::LLT<Eigen::Ref<MatrixXd>> llt(a);
    if (llt.info() == Eigen::Success) {
      if (rcond) *rcond = llt.rcond();
      return -llt.solve(g);
    }
    a = a0;
    a.diagonal() += damping;
  }
  Eigen::PartialPivLU<Eigen::Ref<MatrixXd>> lu(a);
  if (rcond) *rcond = lu.rcond();
  return -lu.solve(g);
}

MatrixXd symmetric_part(const MatrixXd& h) {
  MatrixXd s = h;
  s += h.transpose();
  s *= 0.5;
  return s;
}

}  // namespace

VectorXd newton_direction(const HessianMatrix& h, const VectorXd& g, double lambda,
                          bool symmetrize, double* rcond) {
  if (h.size() != g.size()) throw ConfigError("Hessian and gradient sizes differ");
  if (lambda < 0.0) throw ConfigError("damping must be nonnegative");

  if (h.is_diagonal()) {
    const VectorXd d = h.diagonal + lambda * h.diagonal.cwiseAbs();
    if (rcond) *rcond = d.cwiseAbs().minCoeff() / d.cwiseAbs().maxCoeff();
    return -g.cwiseQuotient(d);
  }
  const VectorXd damping = lambda * h.dense.diagonal().cwiseAbs();
  if (symmetrize) return damped_solve(symmetric_part(h.dense), damping, g, true, rcond);
  return damped_solve(h.dense, damping, g, false, rcond);
}

ModelUpdate newton_step(const HessianMatrix& h, const VectorXd& g, const NewtonOptions& options,
                        const TrialMisfit& trial, double misfit_before) {
  if (h.size() != g.size()) throw ConfigError("Hessian and gradient sizes differ");
  ModelUpdate up;
  up.method = to_string(h.kind);
  up.delta = VectorXd::Zero(g.size());
  up.step = options.lambda0;
  up.diagnostics.misfit_before = misfit_before;
  up.diagnostics.misfit_after = misfit_before;
  if (g.isZero(0.0)) return up;

  // Symmetrize once; every backoff factors a fresh copy.
  const bool dense = !h.is_diagonal();
  MatrixXd sym;
  if (dense && options.symmetrize) sym = symmetric_part(h.dense);
  auto direction = [&](double lambda, double* rcond) -> VectorXd {
    if (!dense) return newton_direction(h, g, lambda, false, rcond);
    const VectorXd damping = lambda * h.dense.diagonal().cwiseAbs();
    return options.symmetrize ? damped_solve(sym, damping, g, true, rcond)
                              : damped_solve(h.dense, damping, g, false, rcond);
  };

  double lambda = options.lambda0;
  for (int k = 0; k <= options.max_backoffs; ++k) {
    double rcond = 0.0;
    VectorXd delta = direction(lambda, &rcond);
    if (k == 0) up.diagnostics.rcond = rcond;
    if (delta.allFinite()) {
      const double f = trial(delta);
      if (std::isfinite(f) && f < misfit_before) {
        up.delta = std::move(delta);
        up.step = lambda;
        up.diagnostics.misfit_after = f;
        up.diagnostics.backoffs = k;
        up.diagnostics.rcond = rcond;
        return up;
      }
    }
    lambda = lambda > 0.0 ? lambda * options.growth : 1e-6;
  }
  up.diagnostics.backoffs = options.max_backoffs;
  up.diagnostics.stagnated = true;
  return up;
}

ModelUpdate sequential_step(std::span<const FrequencyState> states) {
  if (states.empty()) throw ConfigError("no frequency states supplied");
  const int n = states.front().layout().physical_size();
  VectorXd num = VectorXd::Zero(n);
  VectorXd den = VectorXd::Zero(n);
  double scattering = 0.0;
  for (const auto& st : states) {
    if (!st.data_hessian) throw ConfigError("sequential step needs scattering sources (eps)");
    const auto& layout = st.layout();
    const double w2 = st.omega() * st.omega();
    for (const auto& b : st.bundles) {
      const VectorXcd a = -w2 * layout.restrict(VectorXcd(b.u + b.delta_u));
      const VectorXcd db = layout.restrict(b.delta_b);
      num += (a.conjugate().array() * db.array()).real().matrix();
      den += a.cwiseAbs2();
      scattering += b.delta_b.norm();
    }
  }
  ModelUpdate up;
  up.method = "agn-seq";
  const double eta = kDenominatorFloor * den.maxCoeff();
  up.delta = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (den(i) > 0.0) {
      up.delta(i) = -num(i) / (den(i) + eta);
    } else {
      ++up.diagnostics.dead_nodes;
    }
  }
  up.diagnostics.scattering_norm = scattering;
  return up;
}

WriSystem::WriSystem(const HelmholtzOperator& op, const AcquisitionGeometry& geom, double mu)
    : op_(op), geom_(geom), mu_(mu),
      llt_(std::make_shared<Eigen::SimplicialLLT<SparseMatrix<Complex>>>()) {
  if (!(mu > 0.0)) throw ConfigError("penalty mu must be positive");
  const auto& layout = op_.layout;
  SparseMatrix<Complex> ata = SparseMatrix<Complex>(op_.matrix.adjoint()) * op_.matrix;
  normal_ = mu * ata;
  for (const auto& r : geom_.receivers) normal_.coeffRef(layout.node_of(r), layout.node_of(r)) += 1.0;
  normal_.makeCompressed();
  llt_->compute(normal_);
  if (llt_->info() != Eigen::Success) throw NumericalError("WRI normal-equation factorization failed");
}

AssimilatedWavefield WriSystem::assimilate(const VectorXcd& data, const VectorXcd& source) const {
  const auto& layout = op_.layout;
  const VectorXcd rhs =
      inject(data, geom_, layout) + mu_ * (op_.matrix.adjoint() * source);
  VectorXcd x = llt_->solve(rhs);
  // Two steps of iterative refinement on the normal equations.
  for (int k = 0; k < 2; ++k) {
    const VectorXcd r = rhs - normal_ * x;
    x += llt_->solve(r);
  }
  AssimilatedWavefield out;
  out.mu = mu_;
  const double scale = rhs.norm();
  out.normal_residual = scale > 0.0 ? (rhs - normal_ * x).norm() / scale : 0.0;
  out.u_e = std::move(x);
  return out;
}

AssimilatedWavefield wri_assimilated_wavefield(const HelmholtzOperator& op,
                                               const AcquisitionGeometry& geom,
                                               const ObservedData& observed, int source,
                                               double mu) {
  const WriSystem system(op, geom, mu);
  return system.assimilate(observed.values.col(source), source_vector(geom, source, op.layout));
}

double assimilation_identity_residual(const HelmholtzFactorization& fact,
                                      const AcquisitionGeometry& geom, const DataHessian& dh,
                                      int source, const VectorXcd& u_e,
                                      const VectorXcd& data_residual) {
  const VectorXcd b = source_vector(geom, source, fact.layout());
  const VectorXcd db = scattering_source(dh, data_residual, fact, geom);
  const VectorXcd r = fact.op().matrix * u_e - b - db;
  return r.norm() / b.norm();
}

WriUpdate wri_update(std::span<const WriFrequency> fields, const AcquisitionGeometry& geom,
                     const Model& model) {
  if (fields.empty()) throw ConfigError("no assimilated wavefields supplied");
  const int n = model.size();
  VectorXd num_source = VectorXd::Zero(n);
  VectorXd num_scatter = VectorXd::Zero(n);
  VectorXd den = VectorXd::Zero(n);
  for (const auto& f : fields) {
    const auto& op = *f.op;
    const auto& layout = op.layout;
    if (layout.physical_size() != n) throw ConfigError("wavefield and model sizes differ");
    const double w2 = op.omega * op.omega;
    const MatrixXcd b = source_matrix(geom, layout);
    // Δ_h uᵉ + b* = b* − K uᵉ, and δb = A(m_k) uᵉ − b*.
    const MatrixXcd lap_plus_b = b - op.stiffness * f.u_e;
    const MatrixXcd db = op.matrix * f.u_e - b;
    for (Eigen::Index s = 0; s < f.u_e.cols(); ++s) {
      const VectorXcd a = -w2 * layout.restrict(VectorXcd(f.u_e.col(s)));
      const VectorXcd c = layout.restrict(VectorXcd(lap_plus_b.col(s)));
      const VectorXcd d = layout.restrict(VectorXcd(db.col(s)));
      num_source += (a.conjugate().array() * c.array()).real().matrix();
      num_scatter += (a.conjugate().array() * d.array()).real().matrix();
      den += a.cwiseAbs2();
    }
  }
  WriUpdate out;
  const double eta = kDenominatorFloor * den.maxCoeff();
  out.next_model = model.values;
  out.delta_scattering = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (den(i) > 0.0) {
      // The floor regularizes toward m_k so both routes share one minimizer.
      out.next_model(i) = (num_source(i) + eta * model.values(i)) / (den(i) + eta);
      out.delta_scattering(i) = -num_scatter(i) / (den(i) + eta);
    } else {
      ++out.dead_nodes;
    }
  }
  out.delta_source_residual = out.next_model - model.values;
  return out;
}

ModelUpdate accept_by_halving(ModelUpdate update, const TrialMisfit& trial, double misfit_before,
                              int max_halvings) {
  update.diagnostics.misfit_before = misfit_before;
  update.diagnostics.misfit_after = misfit_before;
  if (update.delta.isZero(0.0)) {
    update.step = 0.0;
    return update;
  }
  double alpha = 1.0;
  for (int k = 0; k <= max_halvings; ++k) {
    const VectorXd delta = alpha * update.delta;
    const double f = trial(delta);
    if (std::isfinite(f) && f < misfit_before) {
      update.delta = delta;
      update.step = alpha;
      update.diagnostics.misfit_after = f;
      update.diagnostics.backoffs = k;
      return update;
    }
    alpha *= 0.5;
  }
  update.delta.setZero();
  update.step = 0.0;
  update.diagnostics.backoffs = max_halvings;
  update.diagnostics.stagnated = true;
  return update;
}

double gauss_newton_curvature(std::span<const FrequencyState> states, const VectorXd& direction) {
  double total = 0.0;
  for (const auto& st : states) {
    const auto& layout = st.layout();
    MatrixXcd rhs(layout.size(), static_cast<Eigen::Index>(st.bundles.size()));
    for (size_t s = 0; s < st.bundles.size(); ++s) {
      rhs.col(s) = layout.extend(
          VectorXcd(st.bundles[s].virtual_src.cwiseProduct(direction.cast<Complex>())));
    }
    total += sample(MatrixXcd(st.fact.solve_forward(rhs)), st.geometry, layout).squaredNorm();
  }
  return total;
}

VectorXd psd_direction(const HessianMatrix& pseudo, const VectorXd& g) {
  if (!pseudo.is_diagonal()) throw ConfigError("psd step expects the diagonal pseudo-Hessian");
  const double eta = kDenominatorFloor * pseudo.diagonal.maxCoeff();
  return -g.cwiseQuotient((pseudo.diagonal.array() + eta).matrix());
}

ModelUpdate psd_step(const HessianMatrix& pseudo, const VectorXd& g, const TrialMisfit& trial,
                     double misfit_before,
                     const std::function<double(const VectorXd&)>& curvature,
                     const LineSearchOptions& options) {
  ModelUpdate up;
  up.method = "psd";
  up.delta = VectorXd::Zero(g.size());
  up.step = 0.0;
  up.diagnostics.misfit_before = misfit_before;
  up.diagnostics.misfit_after = misfit_before;
  if (g.isZero(0.0)) return up;

  const VectorXd p = psd_direction(pseudo, g);
  const double slope = g.dot(p);
  double alpha = 1.0;
  if (curvature) {
    const double c = curvature(p);
    if (c > 0.0) alpha = -slope / c;
  }
  for (int k = 0; k <= options.max_halvings; ++k) {
    const VectorXd delta = alpha * p;
    const double f = trial(delta);
    if (std::isfinite(f) && f <= misfit_before + options.armijo * alpha * slope &&
        f < misfit_before) {
      up.delta = delta;
      up.step = alpha;
      up.diagnostics.misfit_after = f;
      up.diagnostics.backoffs = k;
      return up;
    }
    alpha *= 0.5;
  }
  up.diagnostics.backoffs = options.max_halvings;
  up.diagnostics.stagnated = true;
  return up;
}

}  // namespace fwi
