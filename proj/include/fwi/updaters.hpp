#pragma once

#include "fwi/hessians.hpp"
#include "fwi/sensitivity.hpp"
#include "fwi/types.hpp"

#include <Eigen/SparseCholesky>

#include <functional>
#include <optional>
#include <span>
#include <string>

namespace fwi {

struct StepDiagnostics {
  double misfit_before = 0.0;
  double misfit_after = 0.0;
  int backoffs = 0;
  bool stagnated = false;
  /// Σ ‖δb‖ over sources (sequential and WRI updates).
  double scattering_norm = 0.0;
  /// Nodes with no wavefield coverage, left unchanged.
  int dead_nodes = 0;
  /// Reciprocal condition estimate of the damped Newton matrix.
  std::optional<double> rcond;
  /// ‖H_agn δm + g‖ / ‖g‖ for a sequential step, when requested.
  std::optional<double> agn_residual;
};

struct ModelUpdate {
  VectorXd delta;
  std::string method;
  /// Damping λ for Newton-type steps, step length otherwise.
  double step = 1.0;
  StepDiagnostics diagnostics;
};

/// Misfit of the model m_k + δm.
using TrialMisfit = std::function<double(const VectorXd& delta)>;

struct NewtonOptions {
  double lambda0 = 1e-3;
  double growth = 10.0;
  int max_backoffs = 8;
  /// Solve with (H + Hᵀ)/2; otherwise H itself (LU).
  bool symmetrize = true;
};

/// Solves (H_s + λ·diag|H_ii|) δm = −g, H_s the (optionally) symmetrized H.
/// Positive definite systems use Cholesky, the rest partial-pivot LU.
VectorXd newton_direction(const HessianMatrix& h, const VectorXd& g, double lambda,
                          bool symmetrize = true, double* rcond = nullptr);

/// Damped Newton step with backoff: λ = λ₀, λ₀·10, … until the misfit drops.
/// Returns a zero step flagged as stagnated when every backoff fails.
ModelUpdate newton_step(const HessianMatrix& h, const VectorXd& g, const NewtonOptions& options,
                        const TrialMisfit& trial, double misfit_before);

/// Relative denominator floor of the pointwise updates.
inline constexpr double kDenominatorFloor = 1e-10;

/// Pointwise solve of (L + δL) δm = −δb, stacked over sources and frequencies:
///   δm_i = −Σ Re(conj(−ω²(u+δu)_i) δb_i) / (Σ ω⁴|u+δu|²_i + η).
ModelUpdate sequential_step(std::span<const FrequencyState> states);

/// Wavefield jointly fitting data and wave equation for penalty μ, i.e. the
/// solution of (PᴴP + μAᴴA) uᵉ = Pᴴd* + μAᴴb*.
struct AssimilatedWavefield {
  VectorXcd u_e;
  double mu = 0.0;
  /// Relative residual of the normal equations.
  double normal_residual = 0.0;
};

/// Sparse Cholesky of PᴴP + μAᴴA; source independent for fixed receivers.
class WriSystem {
 public:
  WriSystem(const HelmholtzOperator& op, const AcquisitionGeometry& geom, double mu);

  AssimilatedWavefield assimilate(const VectorXcd& data, const VectorXcd& source) const;
  double mu() const { return mu_; }
  const HelmholtzOperator& op() const { return op_; }

 private:
  HelmholtzOperator op_;
  AcquisitionGeometry geom_;
  double mu_;
  SparseMatrix<Complex> normal_;
  std::shared_ptr<Eigen::SimplicialLLT<SparseMatrix<Complex>>> llt_;
};

AssimilatedWavefield wri_assimilated_wavefield(const HelmholtzOperator& op,
                                               const AcquisitionGeometry& geom,
                                               const ObservedData& observed, int source,
                                               double mu);

/// ‖A uᵉ − b* − Sᴴ(SSᴴ + μI)⁻¹ δd‖ / ‖b*‖, with `dh` built for ε = μ.
double assimilation_identity_residual(const HelmholtzFactorization& fact,
                                      const AcquisitionGeometry& geom, const DataHessian& dh,
                                      int source, const VectorXcd& u_e,
                                      const VectorXcd& data_residual);

/// Assimilated wavefields of one frequency (columns per source).
struct WriFrequency {
  const HelmholtzOperator* op = nullptr;
  MatrixXcd u_e;
};

struct WriUpdate {
  /// m_{k+1} minimizing the source residual ‖A(m)uᵉ − b*‖ pointwise.
  VectorXd next_model;
  /// m_{k+1} − m_k from the route above.
  VectorXd delta_source_residual;
  /// −Σ Re(conj(−ω²uᵉ) δb) / Σ ω⁴|uᵉ|² with δb = A(m_k)uᵉ − b*.
  VectorXd delta_scattering;
  int dead_nodes = 0;
};

WriUpdate wri_update(std::span<const WriFrequency> fields, const AcquisitionGeometry& geom,
                     const Model& model);

/// Misfit-decreasing acceptance by step halving (no sufficient-decrease test).
ModelUpdate accept_by_halving(ModelUpdate update, const TrialMisfit& trial, double misfit_before,
                              int max_halvings = 12);

struct LineSearchOptions {
  int max_halvings = 12;
  double armijo = 1e-4;
};

/// ‖J p‖² summed over states: the Gauss-Newton curvature along p.
double gauss_newton_curvature(std::span<const FrequencyState> states, const VectorXd& direction);

/// δm = −g / (diag(H_pseudo) + η) with Armijo backtracking. The first trial
/// length minimizes the Gauss-Newton model along the direction when
/// `curvature` (p ↦ ‖J p‖²) is given and positive, otherwise it is 1.
ModelUpdate psd_step(const HessianMatrix& pseudo, const VectorXd& g, const TrialMisfit& trial,
                     double misfit_before,
                     const std::function<double(const VectorXd&)>& curvature = {},
                     const LineSearchOptions& options = {});

/// The preconditioned direction used by psd_step.
VectorXd psd_direction(const HessianMatrix& pseudo, const VectorXd& g);

}  // namespace fwi
