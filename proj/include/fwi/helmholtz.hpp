#pragma once

#include "fwi/grid_model.hpp"
#include "fwi/types.hpp"

#include <Eigen/SparseLU>

#include <memory>
#include <optional>
#include <vector>

namespace fwi {

/// Absorbing collar. width = 0 gives homogeneous Dirichlet conditions on the
/// grid boundary.
struct PmlConfig {
  int width = 10;
  /// Peak imaginary part of the coordinate stretch, s = 1 + i·strength·(d/width)².
  double strength = 4.0;
  /// Squared slowness used to fill the collar by edge replication. When unset
  /// the model being assembled is replicated instead, which makes the collar a
  /// (weak) function of the edge parameters.
  std::optional<VectorXd> collar_reference;
};

/// Physical grid embedded in a grid padded by `width` cells on every side.
class PaddedLayout {
 public:
  PaddedLayout() = default;
  PaddedLayout(const Grid2D& physical, int width);

  const Grid2D& physical() const { return physical_; }
  int width() const { return width_; }
  int nx() const { return nx_; }
  int nz() const { return nz_; }
  int size() const { return nx_ * nz_; }
  int physical_size() const { return physical_.size(); }

  int padded_index(int i, int j) const { return (j + width_) * nx_ + (i + width_); }
  int node_of(const Station& s) const { return padded_index(s.ix, s.iz); }
  /// Padded index of every physical node, in physical flat order.
  const std::vector<int>& physical_nodes() const { return physical_nodes_; }

  template <typename Scalar>
  Vector<Scalar> restrict(const Vector<Scalar>& padded) const {
    Vector<Scalar> out(physical_size());
    for (int k = 0; k < physical_size(); ++k) out(k) = padded(physical_nodes_[k]);
    return out;
  }
  template <typename Scalar>
  Matrix<Scalar> restrict_rows(const Matrix<Scalar>& padded) const {
    Matrix<Scalar> out(physical_size(), padded.cols());
    for (int k = 0; k < physical_size(); ++k) out.row(k) = padded.row(physical_nodes_[k]);
    return out;
  }
  template <typename Scalar>
  Vector<Scalar> extend(const Vector<Scalar>& physical) const {
    Vector<Scalar> out = Vector<Scalar>::Zero(size());
    for (int k = 0; k < physical_size(); ++k) out(physical_nodes_[k]) = physical(k);
    return out;
  }

 private:
  Grid2D physical_;
  int width_ = 0;
  int nx_ = 0;
  int nz_ = 0;
  std::vector<int> physical_nodes_;
};

/// Discrete A(m, ω) = K − ω²·diag(s_x s_z m) on the padded grid, where K is the
/// stretched 5-point negative Laplacian. Both K and A are complex symmetric.
struct HelmholtzOperator {
  PaddedLayout layout;
  double omega = 0.0;
  SparseMatrix<Complex> stiffness;
  /// s_x·s_z per padded node (1 inside the physical region).
  VectorXcd stretch;
  /// Squared slowness per padded node (physical values plus collar fill).
  VectorXd slowness2;
  SparseMatrix<Complex> matrix;
  /// Nodes per wavelength at the slowest velocity; below ~4 is undersampled.
  double points_per_wavelength = 0.0;

  bool undersampled() const { return points_per_wavelength < 4.0; }
};

HelmholtzOperator assemble(const Model& model, double frequency_hz, const PmlConfig& pml = {});

/// Sparse LU of A, reusable for any number of forward and adjoint solves.
/// Solves are const and may run concurrently.
class HelmholtzFactorization {
 public:
  explicit HelmholtzFactorization(HelmholtzOperator op);

  const HelmholtzOperator& op() const { return op_; }
  const PaddedLayout& layout() const { return op_.layout; }
  double omega() const { return op_.omega; }

  /// x = A⁻¹ b.
  MatrixXcd solve_forward(const MatrixXcd& rhs) const;
  VectorXcd solve_forward(const VectorXcd& rhs) const;
  /// x = A⁻ᴴ b, realized as conj(A⁻¹ conj(b)) since A is complex symmetric.
  MatrixXcd solve_adjoint(const MatrixXcd& rhs) const;
  VectorXcd solve_adjoint(const VectorXcd& rhs) const;

 private:
  HelmholtzOperator op_;
  std::shared_ptr<Eigen::SparseLU<SparseMatrix<Complex>, Eigen::COLAMDOrdering<int>>> lu_;
};

/// Throws NumericalError if A is singular.
HelmholtzFactorization factorize(HelmholtzOperator op);

// Sampling operator P and its adjoint.
VectorXcd sample(const VectorXcd& wavefield, const AcquisitionGeometry& geom,
                 const PaddedLayout& layout);
MatrixXcd sample(const MatrixXcd& wavefields, const AcquisitionGeometry& geom,
                 const PaddedLayout& layout);
VectorXcd inject(const VectorXcd& data, const AcquisitionGeometry& geom,
                 const PaddedLayout& layout);
MatrixXcd inject(const MatrixXcd& data, const AcquisitionGeometry& geom,
                 const PaddedLayout& layout);

/// b* for one source, and for all sources as columns.
VectorXcd source_vector(const AcquisitionGeometry& geom, int source, const PaddedLayout& layout);
MatrixXcd source_matrix(const AcquisitionGeometry& geom, const PaddedLayout& layout);

}  // namespace fwi
