#pragma once

#include "fwi/grid_model.hpp"
#include "fwi/helmholtz.hpp"
#include "fwi/types.hpp"

#include <Eigen/Cholesky>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fwi {

/// Recorded data at one frequency; values(r, s) is receiver r of source s.
struct ObservedData {
  double frequency_hz = 0.0;
  MatrixXcd values;
};

// Text format: "freq_hz n_src n_rec" then one "s r re im" line per trace
// sample, sources outermost.
void write_observed(std::ostream& out, const ObservedData& data);
void write_observed(const std::string& path, const ObservedData& data);
ObservedData read_observed(std::istream& in);
ObservedData read_observed(const std::string& path);

/// u_s = A⁻¹ b*_s for every source, as padded columns.
MatrixXcd simulate(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom);
/// d = P A⁻¹ b*, receivers × sources.
MatrixXcd synthetic_data(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom);

/// δd = d* − P A⁻¹ b* per source (columns).
MatrixXcd residual(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom,
                   const ObservedData& observed);
/// ½ Σ_s ‖δd_s‖².
inline double misfit_value(const MatrixXcd& residuals) { return 0.5 * residuals.squaredNorm(); }

/// Sᴴ = A⁻ᴴ Pᴴ as padded × receivers, from one adjoint solve per receiver.
/// Source independent, so it is built once per (model, frequency).
struct ReceiverKernel {
  MatrixXcd adjoint_greens;
};
ReceiverKernel receiver_kernel(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom);

/// SSᴴ + εI on the receiver space, with its Cholesky factor.
struct DataHessian {
  double omega = 0.0;
  double eps = 0.0;
  MatrixXcd matrix;
  Eigen::LLT<MatrixXcd> factor;

  VectorXcd solve(const VectorXcd& rhs) const { return factor.solve(rhs); }
  double mean_gram_diagonal() const { return (matrix.diagonal().real().array() - eps).mean(); }
};

/// Throws NumericalError when ε = 0 and SSᴴ is numerically singular.
DataHessian data_hessian(const HelmholtzFactorization& fact, const ReceiverKernel& kernel, double eps);
DataHessian data_hessian(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom,
                         double eps);

/// δb = Sᴴ (SSᴴ + εI)⁻¹ δd, the damped least-squares solution of S δb = δd.
VectorXcd scattering_source(const DataHessian& dh, const VectorXcd& data_residual,
                            const HelmholtzFactorization& fact, const AcquisitionGeometry& geom);
/// δu = A⁻¹ δb.
VectorXcd scattered_wavefield(const HelmholtzFactorization& fact, const VectorXcd& scattering);
/// Diagonal of ∂A/∂m · w on the physical nodes: −ω² w_i.
VectorXcd virtual_source(const VectorXcd& wavefield, double omega, const PaddedLayout& layout);
inline VectorXcd delta_virtual_source(const VectorXcd& scattered, double omega,
                                      const PaddedLayout& layout) {
  return virtual_source(scattered, omega, layout);
}

/// Largest physical model for which dense Jacobians and Hessians are formed.
inline constexpr int kDenseModelLimit = 20000;

/// J = S L restricted to physical nodes (receivers × model), assembled from the
/// receiver kernel (rows).
MatrixXcd jacobian_dense(const ReceiverKernel& kernel, const VectorXcd& virtual_src,
                         const PaddedLayout& layout);
/// Same matrix from one forward solve per model parameter (columns).
MatrixXcd jacobian_dense_columns(const HelmholtzFactorization& fact, const VectorXcd& virtual_src,
                                 const AcquisitionGeometry& geom);

/// Per-source, per-frequency first-order quantities.
struct SensitivityBundle {
  int source = 0;
  double omega = 0.0;
  VectorXcd u;              // padded
  VectorXcd residual;       // receivers
  VectorXcd back_residual;  // Sᴴ δd, padded
  VectorXcd virtual_src;    // L, physical

  // Present when a damping ε was supplied.
  std::optional<double> eps;
  VectorXcd delta_b;              // padded
  VectorXcd delta_u;              // padded
  VectorXcd delta_virtual_src;    // δL, physical
};

struct StateOptions {
  PmlConfig pml;
  /// Build the receiver kernel (needed for dense Hessians and δb).
  bool kernel = true;
  /// Absolute damping. When unset and `eps_relative` is set, ε is
  /// eps_relative · mean(diag(SSᴴ)). When neither is set no δb is formed.
  std::optional<double> eps;
  std::optional<double> eps_relative;
};

/// Everything derived from one (model, frequency): factorization, kernel, data
/// Hessian and the bundle of every source.
struct FrequencyState {
  Model model;
  AcquisitionGeometry geometry;
  double frequency_hz = 0.0;
  PmlConfig pml;
  HelmholtzFactorization fact;
  std::optional<ReceiverKernel> kernel;
  std::optional<DataHessian> data_hessian;
  std::vector<SensitivityBundle> bundles;

  double omega() const { return fact.omega(); }
  const PaddedLayout& layout() const { return fact.layout(); }
  double misfit() const;
};

FrequencyState prepare_state(const Model& model, const AcquisitionGeometry& geom,
                             const ObservedData& observed, const StateOptions& options);

/// Misfit ½‖d* − P A(m)⁻¹ b*‖² at one frequency.
double misfit(const Model& model, const AcquisitionGeometry& geom, const ObservedData& observed,
              const PmlConfig& pml);

}  // namespace fwi
