#pragma once

#include "fwi/grid_model.hpp"
#include "fwi/helmholtz.hpp"
#include "fwi/sensitivity.hpp"

#include <random>

namespace fwi::testing {

/// 10×10 Dirichlet grid, 3 sources, 5 receivers, one frequency, with a 3×3
/// fast block in the true model so the residual of the homogeneous starting
/// model is far from zero.
struct TinyFixture {
  Grid2D grid{10, 10, 10.0, 10.0};
  double frequency_hz = 13.0;
  PmlConfig pml{0, 0.0, std::nullopt};
  Model true_model;
  Model start_model;
  AcquisitionGeometry geometry;
  ObservedData observed;

  TinyFixture() {
    VectorXd v = VectorXd::Constant(grid.size(), 1500.0);
    for (int j = 4; j < 7; ++j)
      for (int i = 3; i < 6; ++i) v(grid.index(i, j)) = 2000.0;
    true_model = velocity_to_model(grid, v);
    // Mildly heterogeneous start so no symmetry hides errors.
    VectorXd v0 = VectorXd::Constant(grid.size(), 1500.0);
    for (int k = 0; k < grid.size(); ++k) v0(k) += 7.0 * ((k * 37) % 11);
    start_model = velocity_to_model(grid, v0);

    geometry.grid = grid;
    geometry.sources = {{{1, 1}}, {{8, 2}}, {{3, 8}}};
    geometry.receivers = {{1, 5}, {5, 1}, {8, 8}, {5, 8}, {8, 5}};
    observed = observe(true_model);
  }

  ObservedData observe(const Model& m) const {
    const auto fact = factorize(assemble(m, frequency_hz, pml));
    return {frequency_hz, synthetic_data(fact, geometry)};
  }

  StateOptions options(std::optional<double> eps = std::nullopt) const {
    StateOptions o;
    o.pml = pml;
    o.eps = eps;
    return o;
  }

  FrequencyState state(const Model& m, std::optional<double> eps = std::nullopt) const {
    return prepare_state(m, geometry, observed, options(eps));
  }
};

inline VectorXcd random_complex(Eigen::Index n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> dist;
  VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = {dist(rng), dist(rng)};
  return v;
}

inline VectorXd random_real(Eigen::Index n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> dist;
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

}  // namespace fwi::testing
