#include "fwi/helmholtz.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fwi {

PaddedLayout::PaddedLayout(const Grid2D& physical, int width)
    : physical_(physical), width_(width), nx_(physical.nx + 2 * width),
      nz_(physical.nz + 2 * width) {
  if (width < 0) throw ConfigError("PML width must be nonnegative");
  physical_nodes_.resize(physical.size());
  for (int j = 0; j < physical.nz; ++j) {
    for (int i = 0; i < physical.nx; ++i) {
      physical_nodes_[physical.index(i, j)] = padded_index(i, j);
    }
  }
}

namespace {

// Stretch factor at padded coordinate p (in cells, may be half-integer) for an
// axis whose physical nodes occupy [lo, hi].
Complex stretch_at(double p, double lo, double hi, const PmlConfig& pml) {
  if (pml.width == 0) return {1.0, 0.0};
  const double d = std::max({lo - p, p - hi, 0.0});
  const double r = d / pml.width;
  return {1.0, pml.strength * r * r};
}

}  // namespace

HelmholtzOperator assemble(const Model& model, double frequency_hz, const PmlConfig& pml) {
  if (!(frequency_hz > 0.0)) throw ConfigError("frequency must be positive");
  if (pml.strength < 0.0) throw ConfigError("PML strength must be nonnegative");

  HelmholtzOperator op;
  op.layout = PaddedLayout(model.grid, pml.width);
  op.omega = 2.0 * std::numbers::pi * frequency_hz;
  const auto& L = op.layout;
  const Grid2D& g = model.grid;
  const int w = pml.width;
  const double xlo = w;
  const double xhi = w + g.nx - 1;
  const double zlo = w;
  const double zhi = w + g.nz - 1;

  const VectorXd& collar = pml.collar_reference ? *pml.collar_reference : model.values;
  if (collar.size() != g.size()) throw ConfigError("collar reference size does not match grid");

  op.slowness2.resize(L.size());
  op.stretch.resize(L.size());
  for (int q = 0; q < L.nz(); ++q) {
    for (int p = 0; p < L.nx(); ++p) {
      const int i = std::clamp(p - w, 0, g.nx - 1);
      const int j = std::clamp(q - w, 0, g.nz - 1);
      const bool inside = (p - w) == i && (q - w) == j;
      const int k = q * L.nx() + p;
      op.slowness2(k) = inside ? model.values(g.index(i, j)) : collar(g.index(i, j));
      op.stretch(k) = stretch_at(p, xlo, xhi, pml) * stretch_at(q, zlo, zhi, pml);
    }
  }

  const double idx2 = 1.0 / (g.dx * g.dx);
  const double idz2 = 1.0 / (g.dz * g.dz);
  std::vector<Eigen::Triplet<Complex>> triplets;
  triplets.reserve(static_cast<size_t>(L.size()) * 5);
  VectorXcd diag = VectorXcd::Zero(L.size());
  for (int q = 0; q < L.nz(); ++q) {
    const Complex sz = stretch_at(q, zlo, zhi, pml);
    for (int p = 0; p < L.nx(); ++p) {
      const Complex sx = stretch_at(p, xlo, xhi, pml);
      const int k = q * L.nx() + p;
      // Couplings to the right and lower neighbours; ghost nodes beyond the
      // padded boundary are zero (Dirichlet) and only add to the diagonal.
      const Complex cx_right = sz / stretch_at(p + 0.5, xlo, xhi, pml) * idx2;
      const Complex cx_left = sz / stretch_at(p - 0.5, xlo, xhi, pml) * idx2;
      const Complex cz_down = sx / stretch_at(q + 0.5, zlo, zhi, pml) * idz2;
      const Complex cz_up = sx / stretch_at(q - 0.5, zlo, zhi, pml) * idz2;
      diag(k) += cx_right + cx_left + cz_down + cz_up;
      if (p + 1 < L.nx()) {
        triplets.emplace_back(k, k + 1, -cx_right);
        triplets.emplace_back(k + 1, k, -cx_right);
      }
      if (q + 1 < L.nz()) {
        triplets.emplace_back(k, k + L.nx(), -cz_down);
        triplets.emplace_back(k + L.nx(), k, -cz_down);
      }
    }
  }
  for (int k = 0; k < L.size(); ++k) triplets.emplace_back(k, k, diag(k));
  op.stiffness.resize(L.size(), L.size());
  op.stiffness.setFromTriplets(triplets.begin(), triplets.end());
  op.stiffness.makeCompressed();

  const double w2 = op.omega * op.omega;
  VectorXcd mass = -w2 * (op.stretch.array() * op.slowness2.array().cast<Complex>()).matrix();
  op.matrix = op.stiffness;
  for (int k = 0; k < L.size(); ++k) op.matrix.coeffRef(k, k) += mass(k);
  op.matrix.makeCompressed();

  const double vmin = 1.0 / std::sqrt(model.values.maxCoeff());
  op.points_per_wavelength = vmin / (frequency_hz * std::max(g.dx, g.dz));
  return op;
}

HelmholtzFactorization::HelmholtzFactorization(HelmholtzOperator op)
    : op_(std::move(op)),
      lu_(std::make_shared<Eigen::SparseLU<SparseMatrix<Complex>, Eigen::COLAMDOrdering<int>>>()) {
  lu_->compute(op_.matrix);
  if (lu_->info() != Eigen::Success) {
    throw NumericalError("Helmholtz factorization failed: " + lu_->lastErrorMessage());
  }
}

MatrixXcd HelmholtzFactorization::solve_forward(const MatrixXcd& rhs) const {
  MatrixXcd x = lu_->solve(rhs);
  return x;
}

VectorXcd HelmholtzFactorization::solve_forward(const VectorXcd& rhs) const {
  VectorXcd x = lu_->solve(rhs);
  return x;
}

MatrixXcd HelmholtzFactorization::solve_adjoint(const MatrixXcd& rhs) const {
  MatrixXcd x = lu_->solve(rhs.conjugate());
  return x.conjugate();
}

VectorXcd HelmholtzFactorization::solve_adjoint(const VectorXcd& rhs) const {
  VectorXcd x = lu_->solve(rhs.conjugate());
  return x.conjugate();
}

HelmholtzFactorization factorize(HelmholtzOperator op) {
  return HelmholtzFactorization(std::move(op));
}

VectorXcd sample(const VectorXcd& wavefield, const AcquisitionGeometry& geom,
                 const PaddedLayout& layout) {
  VectorXcd d(geom.receiver_count());
  for (int r = 0; r < geom.receiver_count(); ++r) d(r) = wavefield(layout.node_of(geom.receivers[r]));
  return d;
}

MatrixXcd sample(const MatrixXcd& wavefields, const AcquisitionGeometry& geom,
                 const PaddedLayout& layout) {
  MatrixXcd d(geom.receiver_count(), wavefields.cols());
  for (int r = 0; r < geom.receiver_count(); ++r) {
    d.row(r) = wavefields.row(layout.node_of(geom.receivers[r]));
  }
  return d;
}

VectorXcd inject(const VectorXcd& data, const AcquisitionGeometry& geom,
                 const PaddedLayout& layout) {
  VectorXcd w = VectorXcd::Zero(layout.size());
  for (int r = 0; r < geom.receiver_count(); ++r) w(layout.node_of(geom.receivers[r])) += data(r);
  return w;
}

MatrixXcd inject(const MatrixXcd& data, const AcquisitionGeometry& geom,
                 const PaddedLayout& layout) {
  MatrixXcd w = MatrixXcd::Zero(layout.size(), data.cols());
  for (int r = 0; r < geom.receiver_count(); ++r) {
    w.row(layout.node_of(geom.receivers[r])) += data.row(r);
  }
  return w;
}

VectorXcd source_vector(const AcquisitionGeometry& geom, int source, const PaddedLayout& layout) {
  VectorXcd b = VectorXcd::Zero(layout.size());
  const auto& s = geom.sources.at(source);
  b(layout.node_of(s.position)) = s.amplitude;
  return b;
}

MatrixXcd source_matrix(const AcquisitionGeometry& geom, const PaddedLayout& layout) {
  MatrixXcd b = MatrixXcd::Zero(layout.size(), geom.source_count());
  for (int s = 0; s < geom.source_count(); ++s) {
    b(layout.node_of(geom.sources[s].position), s) = geom.sources[s].amplitude;
  }
  return b;
}

}  // namespace fwi
