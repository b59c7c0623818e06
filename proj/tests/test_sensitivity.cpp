#include "fixtures.hpp"
#include "fwi/sensitivity.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace fwi;
using fwi::testing::random_complex;
using fwi::testing::TinyFixture;

namespace {

// Explicit S = P A⁻¹ (receivers × nodes) from one forward solve per node.
MatrixXcd dense_s(const HelmholtzFactorization& fact, const AcquisitionGeometry& geom) {
  const int n = fact.layout().size();
  return sample(MatrixXcd(fact.solve_forward(MatrixXcd(MatrixXcd::Identity(n, n)))), geom,
                fact.layout());
}

}  // namespace

TEST(Sensitivity, ResidualVanishesAtTrueModel) {
  const TinyFixture fx;
  const auto fact = factorize(assemble(fx.true_model, fx.frequency_hz, fx.pml));
  EXPECT_EQ(residual(fact, fx.geometry, fx.observed).norm(), 0.0);
  const auto start = factorize(assemble(fx.start_model, fx.frequency_hz, fx.pml));
  EXPECT_GT(residual(start, fx.geometry, fx.observed).norm(), 0.0);
}

TEST(Sensitivity, ResidualOnInclusionStartIsNonzero) {
  const auto e = build_inclusion_model(Grid2D{51, 51, 40.0, 40.0});
  const auto truth = factorize(assemble(e.true_model, 5.0, {}));
  const ObservedData d{5.0, synthetic_data(truth, e.geometry)};
  const auto start = factorize(assemble(e.initial_model, 5.0, {}));
  EXPECT_GT(residual(start, e.geometry, d).norm(), 1e-3 * d.values.norm());
}

TEST(Sensitivity, ResidualIsLinearInSourceAmplitude) {
  const TinyFixture fx;
  const auto fact = factorize(assemble(fx.start_model, fx.frequency_hz, fx.pml));
  const MatrixXcd r1 = residual(fact, fx.geometry, fx.observed);
  AcquisitionGeometry doubled = fx.geometry;
  for (auto& s : doubled.sources) s.amplitude *= 2.0;
  const auto truth = factorize(assemble(fx.true_model, fx.frequency_hz, fx.pml));
  const ObservedData d2{fx.frequency_hz, synthetic_data(truth, doubled)};
  const MatrixXcd r2 = residual(fact, doubled, d2);
  EXPECT_LT((r2 - 2.0 * r1).norm() / r1.norm(), 1e-13);
}

TEST(Sensitivity, ResidualShapeMismatchThrows) {
  const TinyFixture fx;
  const auto fact = factorize(assemble(fx.start_model, fx.frequency_hz, fx.pml));
  ObservedData bad = fx.observed;
  bad.values = bad.values.topRows(2).eval();
  EXPECT_THROW(residual(fact, fx.geometry, bad), ConfigError);
}

TEST(Sensitivity, DataHessianIsHermitianAndShifted) {
  const auto e = build_inclusion_model(Grid2D{51, 51, 40.0, 40.0});
  const auto fact = factorize(assemble(e.initial_model, 5.0, {}));
  const auto kernel = receiver_kernel(fact, e.geometry);
  const double gram_scale = kernel.adjoint_greens.colwise().squaredNorm().mean();
  const double eps = 1e-3 * gram_scale;
  const auto dh = data_hessian(fact, kernel, eps);
  EXPECT_LE((dh.matrix - dh.matrix.adjoint()).cwiseAbs().maxCoeff(), 1e-12 * dh.matrix.norm());
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(dh.matrix, Eigen::EigenvaluesOnly);
  EXPECT_GE(es.eigenvalues().minCoeff(), eps * (1.0 - 1e-8));
  EXPECT_NEAR(dh.mean_gram_diagonal(), gram_scale, 1e-12 * gram_scale);

  // Operator route: S then Sᴴ by two solves.
  const VectorXcd y = random_complex(e.geometry.receiver_count(), 11);
  const VectorXcd via_solves =
      sample(fact.solve_forward(fact.solve_adjoint(inject(y, e.geometry, fact.layout()))),
             e.geometry, fact.layout()) +
      eps * y;
  EXPECT_LT(relative_error(dh.matrix * y, via_solves), 1e-10);
}

TEST(Sensitivity, ZeroDampingNeedsWellPosedGram) {
  const TinyFixture fx;
  const auto fact = factorize(assemble(fx.start_model, fx.frequency_hz, fx.pml));
  EXPECT_NO_THROW(data_hessian(fact, fx.geometry, 0.0));
  // Two receivers on the same node make SSᴴ singular.
  AcquisitionGeometry dup = fx.geometry;
  dup.receivers.push_back(dup.receivers.front());
  EXPECT_THROW(data_hessian(fact, dup, 0.0), NumericalError);
  EXPECT_THROW(data_hessian(fact, fx.geometry, -1.0), ConfigError);
}

TEST(Sensitivity, ScatteringSourceZeroResidual) {
  const TinyFixture fx;
  const auto fact = factorize(assemble(fx.start_model, fx.frequency_hz, fx.pml));
  const auto dh = data_hessian(fact, fx.geometry, 1e-3);
  const VectorXcd db = scattering_source(dh, VectorXcd::Zero(5), fact, fx.geometry);
  EXPECT_TRUE(db.isZero(0.0));
  const VectorXcd du = scattered_wavefield(fact, db);
  EXPECT_TRUE(du.isZero(0.0));
  EXPECT_TRUE(delta_virtual_source(du, fact.omega(), fact.layout()).isZero(0.0));
}

TEST(Sensitivity, ScatteringSourceTwoRoutesAgainstDenseOracle) {
  const TinyFixture fx;
  const auto fact = factorize(assemble(fx.start_model, fx.frequency_hz, fx.pml));
  const MatrixXcd s = dense_s(fact, fx.geometry);
  const VectorXcd dd = residual(fact, fx.geometry, fx.observed).col(0);
  const double eps = 1e-2 * (s * s.adjoint()).diagonal().real().mean();
  const int n = static_cast<int>(s.cols());

  // (SᴴS + εI)⁻¹ Sᴴ δd in model space, and Sᴴ (SSᴴ + εI)⁻¹ δd in data space.
  const MatrixXcd shs = s.adjoint() * s + eps * MatrixXcd::Identity(n, n);
  const VectorXcd model_route = shs.partialPivLu().solve(s.adjoint() * dd);
  const MatrixXcd ssh = s * s.adjoint() + eps * MatrixXcd::Identity(5, 5);
  const VectorXcd data_route = s.adjoint() * ssh.partialPivLu().solve(dd);
  EXPECT_LT(relative_error(model_route, data_route), 1e-10);

  const auto dh = data_hessian(fact, fx.geometry, eps);
  const VectorXcd db = scattering_source(dh, dd, fact, fx.geometry);
  EXPECT_LT(relative_error(db, data_route), 1e-10);
}

TEST(Sensitivity, ScatteringSourceLargeDampingLimit) {
  const TinyFixture fx;
  const auto fact = factorize(assemble(fx.start_model, fx.frequency_hz, fx.pml));
  const auto kernel = receiver_kernel(fact, fx.geometry);
  const VectorXcd dd = residual(fact, fx.geometry, fx.observed).col(1);
  const double gram_norm = (kernel.adjoint_greens.adjoint() * kernel.adjoint_greens).norm();
  const double eps = 1e6 * gram_norm;
  const VectorXcd db = scattering_source(data_hessian(fact, kernel, eps), dd, fact, fx.geometry);
  const VectorXcd sh_dd = kernel.adjoint_greens * dd;
  EXPECT_NEAR(db.norm() * eps / sh_dd.norm(), 1.0, 1e-3);
}

TEST(Sensitivity, DataFitImprovesAsDampingDecreases) {
  const TinyFixture fx;
  const auto fact = factorize(assemble(fx.start_model, fx.frequency_hz, fx.pml));
  const auto kernel = receiver_kernel(fact, fx.geometry);
  const VectorXcd dd = residual(fact, fx.geometry, fx.observed).col(2);
  const double scale = kernel.adjoint_greens.colwise().squaredNorm().mean();
  double prev = INFINITY;
  for (double rel = 1e2; rel >= 1e-4; rel /= 10.0) {
    const VectorXcd db = scattering_source(data_hessian(fact, kernel, rel * scale), dd, fact, fx.geometry);
    const double misfit = (sample(scattered_wavefield(fact, db), fx.geometry, fact.layout()) - dd).norm();
    EXPECT_LE(misfit, dd.norm());
    EXPECT_LE(misfit, prev * (1.0 + 1e-12));
    prev = misfit;
  }
}

TEST(Sensitivity, ScatteredWavefieldSolvesWaveEquation) {
  const TinyFixture fx;
  const auto st = fx.state(fx.start_model, 1e-3);
  const auto& a = st.fact.op().matrix;
  for (const auto& b : st.bundles) {
    EXPECT_LT((a * b.delta_u - b.delta_b).norm() / b.delta_b.norm(), 1e-10);
    const VectorXcd du = st.layout().restrict(b.delta_u);
    for (Eigen::Index i = 0; i < du.size(); ++i) {
      if (du(i) != Complex(0.0)) {
        EXPECT_LT(std::abs(b.delta_virtual_src(i) / du(i) + st.omega() * st.omega()),
                  1e-12 * st.omega() * st.omega());
      }
    }
    // L = −ω² u exactly.
    EXPECT_EQ(b.virtual_src, ((-st.omega() * st.omega()) * st.layout().restrict(b.u)).eval());
  }
}

TEST(Sensitivity, JacobianMatchesCentralDifferences) {
  const TinyFixture fx;
  const auto st = fx.state(fx.start_model);
  const auto& b = st.bundles[0];
  const MatrixXcd j = jacobian_dense(*st.kernel, b.virtual_src, st.layout());

  auto data_at = [&](const VectorXd& m) {
    const auto f = factorize(assemble(Model(fx.grid, m), fx.frequency_hz, fx.pml));
    return VectorXcd(synthetic_data(f, fx.geometry).col(0));
  };
  double worst = 0.0;
  for (int i = 0; i < fx.grid.size(); ++i) {
    const double h = 1e-6 * fx.start_model.values(i);
    VectorXd mp = fx.start_model.values;
    VectorXd mm = fx.start_model.values;
    mp(i) += h;
    mm(i) -= h;
    // J = ∂δd/∂m = −∂d/∂m.
    const VectorXcd fd = -(data_at(mp) - data_at(mm)) / (2.0 * h);
    worst = std::max(worst, relative_error(j.col(i), fd));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Sensitivity, JacobianRowAndColumnRoutesAgree) {
  const TinyFixture fx;
  const auto st = fx.state(fx.start_model);
  const auto& b = st.bundles[1];
  const MatrixXcd rows = jacobian_dense(*st.kernel, b.virtual_src, st.layout());
  const MatrixXcd cols = jacobian_dense_columns(st.fact, b.virtual_src, fx.geometry);
  EXPECT_LT(relative_error(rows, cols), 1e-10);
}

TEST(Sensitivity, JacobianVanishesWithoutIllumination) {
  const TinyFixture fx;
  AcquisitionGeometry silent = fx.geometry;
  for (auto& s : silent.sources) s.amplitude = 0.0;
  ObservedData d = fx.observed;
  d.values.setZero();
  auto options = fx.options();
  const auto st = prepare_state(fx.start_model, silent, d, options);
  EXPECT_TRUE(jacobian_dense(*st.kernel, st.bundles[0].virtual_src, st.layout()).isZero(0.0));
}

TEST(Sensitivity, InverseDerivativeIdentity) {
  // ∂A⁻¹/∂m_k b = −A⁻¹ (∂A/∂m_k) A⁻¹ b, checked by central differences.
  const TinyFixture fx;
  const auto fact = factorize(assemble(fx.start_model, fx.frequency_hz, fx.pml));
  const VectorXcd b = random_complex(fact.layout().size(), 5);
  const VectorXcd x = fact.solve_forward(b);
  const double w2 = fact.omega() * fact.omega();
  for (int k : {0, 23, 55, 99}) {
    VectorXcd dA_x = VectorXcd::Zero(x.size());
    dA_x(k) = -w2 * x(k);
    const VectorXcd analytic = -fact.solve_forward(dA_x);
    const double h = 1e-6 * fx.start_model.values(k);
    Model mp = fx.start_model;
    Model mm = fx.start_model;
    mp.values(k) += h;
    mm.values(k) -= h;
    const VectorXcd fd = (factorize(assemble(mp, fx.frequency_hz, fx.pml)).solve_forward(b) -
                          factorize(assemble(mm, fx.frequency_hz, fx.pml)).solve_forward(b)) /
                         (2.0 * h);
    EXPECT_LT(relative_error(fd, analytic), 1e-5) << "node " << k;
  }
}

TEST(Sensitivity, ObservedDataRoundTrip) {
  const TinyFixture fx;
  std::stringstream ss;
  write_observed(ss, fx.observed);
  const auto back = read_observed(ss);
  EXPECT_EQ(back.frequency_hz, fx.observed.frequency_hz);
  EXPECT_EQ(back.values, fx.observed.values);

  std::stringstream header;
  write_observed(header, fx.observed);
  std::string first;
  std::getline(header, first);
  EXPECT_EQ(first, "13 3 5");
}

TEST(Sensitivity, ObservedDataRejectsBadIndices) {
  std::stringstream ss("5 1 1\n0 3 1.0 2.0\n");
  EXPECT_THROW(read_observed(ss), ConfigError);
  std::stringstream truncated("5 2 1\n0 0 1.0 2.0\n");
  EXPECT_THROW(read_observed(truncated), ConfigError);
}
