#pragma once

#include "fwi/sensitivity.hpp"
#include "fwi/types.hpp"

#include <functional>
#include <span>
#include <vector>

namespace fwi {

// Sign convention. With J = ∂δd/∂m = S L, the Hessian of ½‖δd‖² is
//
//   H = Re(Jᴴ J) + R,     R_ij = Re((∂²δd/∂m_i∂m_j)ᴴ δd),
//
// and R splits exactly (ε = 0) into R11 + R12 + R21 + R22 with
// R11 = Re(Lᴴ SᴴS δL). The augmented Gauss-Newton Hessian is Re(Jᴴ J) + R11.
// A is linear in m, so the second-derivative-of-A term vanishes.

enum class HessianKind { pseudo, gn, full, agn, fd_oracle };

const char* to_string(HessianKind kind);

struct HessianMatrix {
  HessianKind kind = HessianKind::gn;
  /// Dense n_model × n_model matrix; empty for the diagonal pseudo-Hessian.
  MatrixXd dense;
  /// Diagonal entries (pseudo-Hessian only).
  VectorXd diagonal;
  std::optional<double> eps;
  std::vector<double> frequencies_hz;

  bool is_diagonal() const { return kind == HessianKind::pseudo; }
  int size() const { return static_cast<int>(is_diagonal() ? diagonal.size() : dense.rows()); }
  VectorXd apply(const VectorXd& x) const;
};

/// g = Σ Re(Jᴴ δd) over sources and frequencies; −g is a descent direction.
VectorXd gradient(std::span<const FrequencyState> states);

/// Diagonal Lᴴ L: Σ ω⁴ |u_i|².
HessianMatrix pseudo_hessian(std::span<const FrequencyState> states);

/// Re(Σ Jᴴ J), assembled as Re((SᴴS) ∘ Σ_s conj(l_s) l_sᵀ).
HessianMatrix gn_hessian(std::span<const FrequencyState> states);

/// Nonlinear term R from back-propagated residuals λ = Sᴴ δd and the
/// physical block of A⁻¹:  R = −ω⁴ Re(conj(A⁻¹) ∘ (conj(u) λᵀ + λ conj(u)ᵀ)).
MatrixXd full_R_direct(std::span<const FrequencyState> states);

enum class SensitivityDerivative { analytic, finite_difference };

struct RDecomposition {
  MatrixXd r11;
  MatrixXd r12;
  MatrixXd r21;
  MatrixXd r22;
  MatrixXd total() const { return r11 + r12 + r21 + r22; }
};

/// The four-term split of R built from δb and δu. States must carry bundles
/// with scattering quantities; with ε = 0 the sum equals full_R_direct.
/// `fd_step` is the relative model step of the finite-difference route.
RDecomposition full_R_decomposed(std::span<const FrequencyState> states,
                                 SensitivityDerivative route = SensitivityDerivative::analytic,
                                 double fd_step = 1e-6);

/// Re(Jᴴ J) + R.
HessianMatrix full_hessian(std::span<const FrequencyState> states);

/// Re(Σ Lᴴ SᴴS (L + δL)). Generally nonsymmetric.
HessianMatrix agn_hessian(std::span<const FrequencyState> states);
/// The augmentation Re(Σ Lᴴ SᴴS δL) alone.
MatrixXd agn_augmentation(std::span<const FrequencyState> states);

// Finite-difference oracles.
using ScalarField = std::function<double(const VectorXd&)>;

/// Central differences with per-component steps.
VectorXd fd_gradient(const ScalarField& f, const VectorXd& x, const VectorXd& steps);
/// Central second differences, symmetric by construction.
MatrixXd fd_hessian(const ScalarField& f, const VectorXd& x, const VectorXd& steps);

/// Summed misfit over the given datasets as a function of squared slowness.
ScalarField misfit_function(const Model& model, const AcquisitionGeometry& geom,
                            std::vector<ObservedData> observed, const PmlConfig& pml);

inline constexpr int kFdHessianLimit = 200;

/// FD Hessian of the misfit with steps h_i = relative_step · m_i.
HessianMatrix fd_hessian_oracle(const Model& model, const AcquisitionGeometry& geom,
                                const std::vector<ObservedData>& observed, const PmlConfig& pml,
                                double relative_step);

}  // namespace fwi
