#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <complex>
#include <stdexcept>
#include <string>

namespace fwi {

using Complex = std::complex<double>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using SparseMatrix = Eigen::SparseMatrix<Scalar, Eigen::ColMajor, int>;

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using Eigen::VectorXi;

// Error categories map onto the CLI exit codes (3, 4 and 2 respectively).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VerificationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// ‖a − b‖ / ‖b‖ in the Frobenius norm; returns ‖a‖ when b vanishes.
template <typename DerivedA, typename DerivedB>
double relative_error(const Eigen::MatrixBase<DerivedA>& a,
                      const Eigen::MatrixBase<DerivedB>& b) {
  const double ref = b.norm();
  const double diff = (a - b).norm();
  return ref > 0.0 ? diff / ref : diff;
}

/// max_i |a_i − b_i| / max_i |b_i|. Components are compared on the scale of
/// the largest reference entry so near-zero entries do not dominate.
template <typename DerivedA, typename DerivedB>
double max_relative_component_error(const Eigen::MatrixBase<DerivedA>& a,
                                    const Eigen::MatrixBase<DerivedB>& b) {
  const double ref = b.cwiseAbs().maxCoeff();
  const double diff = (a - b).cwiseAbs().maxCoeff();
  return ref > 0.0 ? diff / ref : diff;
}

}  // namespace fwi
