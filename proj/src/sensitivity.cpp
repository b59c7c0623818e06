#include "fwi/sensitivity.hpp"

#include <Eigen/Eigenvalues>

#include <fstream>
#include <iomanip>

namespace fwi {

void write_observed(std::ostream& out, const ObservedData& data) {
  out << std::setprecision(17);
  out << data.frequency_hz << ' ' << data.values.cols() << ' ' << data.values.rows() << '\n';
  for (Eigen::Index s = 0; s < data.values.cols(); ++s) {
    for (Eigen::Index r = 0; r < data.values.rows(); ++r) {
      const Complex v = data.values(r, s);
      out << s << ' ' << r << ' ' << v.real() << ' ' << v.imag() << '\n';
    }
  }
}

void write_observed(const std::string& path, const ObservedData& data) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  write_observed(out, data);
}

ObservedData read_observed(std::istream& in) {
  ObservedData data;
  long n_src = 0;
  long n_rec = 0;
  if (!(in >> data.frequency_hz >> n_src >> n_rec) || n_src < 0 || n_rec < 0) {
    throw ConfigError("malformed observed-data header");
  }
  data.values = MatrixXcd::Zero(n_rec, n_src);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> seen =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n_rec, n_src, false);
  long s = 0;
  long r = 0;
  double re = 0.0;
  double im = 0.0;
  for (long k = 0; k < n_src * n_rec; ++k) {
    if (!(in >> s >> r >> re >> im)) throw ConfigError("observed-data file truncated");
    if (s < 0 || s >= n_src || r < 0 || r >= n_rec) {
      throw ConfigError("observed-data index out of range");
    }
    data.values(r, s) = {re, im};
    seen(r, s) = true;
  }
  if (!seen.all()) throw ConfigError("observed-data file has duplicate entries");
  return data;
}

ObservedData read_observed(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return read_observed(in);
}

MatrixXcd simulate(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom) {
  return fact.solve_forward(source_matrix(geom, fact.layout()));
}

MatrixXcd synthetic_data(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom) {
  return sample(simulate(fact, geom), geom, fact.layout());
}

MatrixXcd residual(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom,
                   const ObservedData& observed) {
  if (observed.values.rows() != geom.receiver_count() ||
      observed.values.cols() != geom.source_count()) {
    throw ConfigError("observed data does not match the acquisition geometry");
  }
  return observed.values - synthetic_data(fact, geom);
}

ReceiverKernel receiver_kernel(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom) {
  const MatrixXcd unit = MatrixXcd::Identity(geom.receiver_count(), geom.receiver_count());
  return {fact.solve_adjoint(inject(unit, geom, fact.layout()))};
}

DataHessian data_hessian(const HelmholtzFactorization& fact, const ReceiverKernel& kernel,
                         double eps) {
  if (eps < 0.0) throw ConfigError("damping must be nonnegative");
  DataHessian dh;
  dh.omega = fact.omega();
  dh.eps = eps;
  // SSᴴ = (Sᴴ)ᴴ Sᴴ, the Gram matrix of the kernel columns.
  dh.matrix = kernel.adjoint_greens.adjoint() * kernel.adjoint_greens;
  dh.matrix = (0.5 * (dh.matrix + dh.matrix.adjoint())).eval();
  if (eps == 0.0) {
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(dh.matrix, Eigen::EigenvaluesOnly);
    const double hi = es.eigenvalues().maxCoeff();
    const double lo = es.eigenvalues().minCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12) {
      throw NumericalError("SS^H is ill-conditioned; use a damping eps > 0");
    }
  }
  dh.matrix.diagonal().array() += eps;
  dh.factor.compute(dh.matrix);
  if (dh.factor.info() != Eigen::Success) {
    throw NumericalError("data-space Hessian is not positive definite");
  }
  return dh;
}

DataHessian data_hessian(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom,
                         double eps) {
  return data_hessian(fact, receiver_kernel(fact, geom), eps);
}

VectorXcd scattering_source(const DataHessian& dh, const VectorXcd& data_residual,
                            const HelmholtzFactorization& fact, const AcquisitionGeometry& geom) {
  if (dh.omega != fact.omega()) throw ConfigError("data Hessian and factorization frequencies differ");
  return fact.solve_adjoint(inject(dh.solve(data_residual), geom, fact.layout()));
}

VectorXcd scattered_wavefield(const HelmholtzFactorization& fact, const VectorXcd& scattering) {
  return fact.solve_forward(scattering);
}

VectorXcd virtual_source(const VectorXcd& wavefield, double omega, const PaddedLayout& layout) {
  return (-omega * omega) * layout.restrict(wavefield);
}

MatrixXcd jacobian_dense(const ReceiverKernel& kernel, const VectorXcd& virtual_src,
                         const PaddedLayout& layout) {
  if (layout.physical_size() > kDenseModelLimit) {
    throw ConfigError("model too large for a dense Jacobian; use matrix-free products");
  }
  // Row r of S is (Sᴴ e_r)ᴴ.
  const MatrixXcd s_phys = layout.restrict_rows(kernel.adjoint_greens).adjoint();
  return s_phys * virtual_src.asDiagonal();
}

MatrixXcd jacobian_dense_columns(const HelmholtzFactorization& fact, const VectorXcd& virtual_src,
                                 const AcquisitionGeometry& geom) {
  const auto& layout = fact.layout();
  if (layout.physical_size() > kDenseModelLimit) {
    throw ConfigError("model too large for a dense Jacobian; use matrix-free products");
  }
  MatrixXcd rhs = MatrixXcd::Zero(layout.size(), layout.physical_size());
  for (int i = 0; i < layout.physical_size(); ++i) {
    rhs(layout.physical_nodes()[i], i) = virtual_src(i);
  }
  return sample(fact.solve_forward(rhs), geom, layout);
}

double FrequencyState::misfit() const {
  double total = 0.0;
  for (const auto& b : bundles) total += 0.5 * b.residual.squaredNorm();
  return total;
}

FrequencyState prepare_state(const Model& model, const AcquisitionGeometry& geom,
                             const ObservedData& observed, const StateOptions& options) {
  FrequencyState st{model,
                    geom,
                    observed.frequency_hz,
                    options.pml,
                    factorize(assemble(model, observed.frequency_hz, options.pml)),
                    std::nullopt,
                    std::nullopt,
                    {}};
  const auto& layout = st.layout();
  const double omega = st.omega();

  const MatrixXcd u = simulate(st.fact, geom);
  if (observed.values.rows() != geom.receiver_count() ||
      observed.values.cols() != geom.source_count()) {
    throw ConfigError("observed data does not match the acquisition geometry");
  }
  const MatrixXcd dd = observed.values - sample(u, geom, layout);
  const MatrixXcd lambda = st.fact.solve_adjoint(inject(dd, geom, layout));

  const bool want_scattering = options.eps.has_value() || options.eps_relative.has_value();
  if (options.kernel || want_scattering) st.kernel = receiver_kernel(st.fact, geom);
  if (want_scattering) {
    double eps = 0.0;
    if (options.eps) {
      eps = *options.eps;
    } else {
      const MatrixXcd& k = st.kernel->adjoint_greens;
      eps = *options.eps_relative * k.colwise().squaredNorm().mean();
    }
    st.data_hessian = data_hessian(st.fact, *st.kernel, eps);
  }

  st.bundles.resize(geom.source_count());
  MatrixXcd delta_b;
  MatrixXcd delta_u;
  if (st.data_hessian) {
    const MatrixXcd y = st.data_hessian->factor.solve(dd);
    delta_b = st.fact.solve_adjoint(inject(y, geom, layout));
    delta_u = st.fact.solve_forward(delta_b);
  }
  for (int s = 0; s < geom.source_count(); ++s) {
    auto& b = st.bundles[s];
    b.source = s;
    b.omega = omega;
    b.u = u.col(s);
    b.residual = dd.col(s);
    b.back_residual = lambda.col(s);
    b.virtual_src = virtual_source(b.u, omega, layout);
    if (st.data_hessian) {
      b.eps = st.data_hessian->eps;
      b.delta_b = delta_b.col(s);
      b.delta_u = delta_u.col(s);
      b.delta_virtual_src = delta_virtual_source(b.delta_u, omega, layout);
    }
  }
  return st;
}

double misfit(const Model& model, const AcquisitionGeometry& geom, const ObservedData& observed,
              const PmlConfig& pml) {
  const auto fact = factorize(assemble(model, observed.frequency_hz, pml));
  return misfit_value(residual(fact, geom, observed));
}

}  // namespace fwi
