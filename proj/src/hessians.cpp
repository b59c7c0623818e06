#include "fwi/hessians.hpp"

#include <algorithm>

namespace fwi {

const char* to_string(HessianKind kind) {
  switch (kind) {
    case HessianKind::pseudo: return "pseudo";
    case HessianKind::gn: return "gn";
    case HessianKind::full: return "full";
    case HessianKind::agn: return "agn";
    case HessianKind::fd_oracle: return "fd_oracle";
  }
  return "?";
}

VectorXd HessianMatrix::apply(const VectorXd& x) const {
  if (is_diagonal()) return diagonal.cwiseProduct(x);
  return dense * x;
}

namespace {

constexpr int kBlock = 256;

void require_states(std::span<const FrequencyState> states) {
  if (states.empty()) throw ConfigError("no frequency states supplied");
  const int n = states.front().layout().physical_size();
  for (const auto& st : states) {
    if (st.bundles.empty()) throw ConfigError("empty bundle set");
    if (st.layout().physical_size() != n) throw ConfigError("states disagree on model size");
  }
}

void require_dense(std::span<const FrequencyState> states) {
  require_states(states);
  if (states.front().layout().physical_size() > kDenseModelLimit) {
    throw ConfigError("model too large for a dense Hessian");
  }
  for (const auto& st : states) {
    if (!st.kernel) throw ConfigError("dense Hessians need the receiver kernel");
  }
}

void require_scattering(const FrequencyState& st) {
  if (!st.data_hessian) throw ConfigError("bundles carry no scattering source; supply eps");
}

std::vector<double> frequencies(std::span<const FrequencyState> states) {
  std::vector<double> f;
  for (const auto& st : states) f.push_back(st.frequency_hz);
  return f;
}

// Columns of per-source physical quantities.
template <typename Getter>
MatrixXcd stack(const FrequencyState& st, Getter get) {
  const int n = st.layout().physical_size();
  MatrixXcd out(n, static_cast<Eigen::Index>(st.bundles.size()));
  for (size_t s = 0; s < st.bundles.size(); ++s) out.col(s) = get(st.bundles[s]);
  return out;
}

// X Yᵀ kept as factors.
struct LowRank {
  MatrixXcd left;
  MatrixXcd right;

  MatrixXcd block(Eigen::Index row0, Eigen::Index col0, Eigen::Index cols) const {
    return left.bottomRows(left.rows() - row0) * right.middleRows(col0, cols).transpose();
  }
};

// Accumulates H += scale · Re(F ∘ W), with both factors given block-wise as
// functions of (row0, col0, cols). When `lower` is set only rows ≥ col0 are
// formed; the caller mirrors afterwards.
template <typename FBlock, typename WBlock>
void accumulate_hadamard(MatrixXd& h, double scale, FBlock f_block, WBlock w_block, bool lower) {
  const Eigen::Index n = h.rows();
  for (Eigen::Index c0 = 0; c0 < n; c0 += kBlock) {
    const Eigen::Index cols = std::min<Eigen::Index>(kBlock, n - c0);
    const Eigen::Index r0 = lower ? c0 : 0;
    const MatrixXcd f = f_block(r0, c0, cols);
    const MatrixXcd w = w_block(r0, c0, cols);
    h.block(r0, c0, n - r0, cols) += scale * (f.array() * w.array()).real().matrix();
  }
}

void mirror_lower(MatrixXd& h) {
  h.triangularView<Eigen::StrictlyUpper>() = h.transpose();
}

// SᴴS on the physical nodes as Sᴴ_phys (Sᴴ_phys)ᴴ.
LowRank sensitivity_gram(const FrequencyState& st) {
  const MatrixXcd sh = st.layout().restrict_rows(st.kernel->adjoint_greens);
  return {sh, sh.conjugate()};
}

// Physical block of A⁻¹ (complex symmetric), rows row0.. and columns
// col0..col0+cols, one forward solve per column.
MatrixXcd inverse_block(const FrequencyState& st, Eigen::Index row0, Eigen::Index col0,
                        Eigen::Index cols) {
  const auto& layout = st.layout();
  MatrixXcd rhs = MatrixXcd::Zero(layout.size(), cols);
  for (Eigen::Index c = 0; c < cols; ++c) rhs(layout.physical_nodes()[col0 + c], c) = 1.0;
  const MatrixXcd x = layout.restrict_rows(MatrixXcd(st.fact.solve_forward(rhs)));
  return x.bottomRows(x.rows() - row0);
}

}  // namespace

VectorXd gradient(std::span<const FrequencyState> states) {
  require_states(states);
  VectorXd g = VectorXd::Zero(states.front().layout().physical_size());
  for (const auto& st : states) {
    for (const auto& b : st.bundles) {
      const VectorXcd lambda = st.layout().restrict(b.back_residual);
      g += (b.virtual_src.conjugate().array() * lambda.array()).real().matrix();
    }
  }
  return g;
}

HessianMatrix pseudo_hessian(std::span<const FrequencyState> states) {
  require_states(states);
  HessianMatrix h;
  h.kind = HessianKind::pseudo;
  h.frequencies_hz = frequencies(states);
  h.diagonal = VectorXd::Zero(states.front().layout().physical_size());
  for (const auto& st : states) {
    for (const auto& b : st.bundles) h.diagonal += b.virtual_src.cwiseAbs2();
  }
  return h;
}

HessianMatrix gn_hessian(std::span<const FrequencyState> states) {
  require_dense(states);
  const int n = states.front().layout().physical_size();
  HessianMatrix h;
  h.kind = HessianKind::gn;
  h.frequencies_hz = frequencies(states);
  h.dense = MatrixXd::Zero(n, n);
  for (const auto& st : states) {
    const LowRank gram = sensitivity_gram(st);
    const MatrixXcd l = stack(st, [](const SensitivityBundle& b) { return b.virtual_src; });
    const LowRank weights{l.conjugate(), l};
    accumulate_hadamard(
        h.dense, 1.0, [&](auto r0, auto c0, auto c) { return gram.block(r0, c0, c); },
        [&](auto r0, auto c0, auto c) { return weights.block(r0, c0, c); }, true);
  }
  mirror_lower(h.dense);
  return h;
}

MatrixXd full_R_direct(std::span<const FrequencyState> states) {
  require_dense(states);
  const int n = states.front().layout().physical_size();
  MatrixXd r = MatrixXd::Zero(n, n);
  for (const auto& st : states) {
    const auto& layout = st.layout();
    const double w4 = std::pow(st.omega(), 4);
    const MatrixXcd u = stack(st, [&](const SensitivityBundle& b) {
      return VectorXcd(layout.restrict(b.u).conjugate());
    });
    const MatrixXcd lambda =
        stack(st, [&](const SensitivityBundle& b) { return layout.restrict(b.back_residual); });
    // conj(u) λᵀ + λ conj(u)ᵀ as one factor pair.
    MatrixXcd left(n, 2 * u.cols());
    MatrixXcd right(n, 2 * u.cols());
    left << u, lambda;
    right << lambda, u;
    const LowRank weights{left, right};
    accumulate_hadamard(
        r, -w4,
        [&](auto r0, auto c0, auto c) {
          return MatrixXcd(inverse_block(st, r0, c0, c).conjugate());
        },
        [&](auto r0, auto c0, auto c) { return weights.block(r0, c0, c); }, true);
  }
  mirror_lower(r);
  return r;
}

RDecomposition full_R_decomposed(std::span<const FrequencyState> states,
                                 SensitivityDerivative route, double fd_step) {
  require_dense(states);
  const int n = states.front().layout().physical_size();
  RDecomposition parts;
  parts.r11 = MatrixXd::Zero(n, n);
  parts.r12 = MatrixXd::Zero(n, n);

  for (const auto& st : states) {
    require_scattering(st);
    const auto& layout = st.layout();
    const auto& geom = st.geometry;
    const double w2 = st.omega() * st.omega();
    const double w4 = w2 * w2;
    const LowRank gram = sensitivity_gram(st);
    const MatrixXcd u_conj = stack(st, [&](const SensitivityBundle& b) {
      return VectorXcd(layout.restrict(b.u).conjugate());
    });
    const MatrixXcd du =
        stack(st, [&](const SensitivityBundle& b) { return layout.restrict(b.delta_u); });
    const LowRank u_du{u_conj, du};

    // R11_ij = ω⁴ Re(conj(u_i) (SᴴS)_ij δu_j)
    accumulate_hadamard(
        parts.r11, w4, [&](auto r0, auto c0, auto c) { return gram.block(r0, c0, c); },
        [&](auto r0, auto c0, auto c) { return u_du.block(r0, c0, c); }, false);

    if (route == SensitivityDerivative::analytic) {
      // ∂(SᴴS)/∂m_j δb = ω² [ (SᴴS δb)_j conj(A⁻¹) e_j + δu_j SᴴS e_j ], so
      // R12_ij = −ω⁴ Re(conj(u_i) [conj(A⁻¹_ij) w_j + (SᴴS)_ij δu_j]),  w = SᴴS δb.
      const MatrixXcd& sh = st.kernel->adjoint_greens;
      MatrixXcd w(n, static_cast<Eigen::Index>(st.bundles.size()));
      for (size_t s = 0; s < st.bundles.size(); ++s) {
        const VectorXcd s_db = sample(st.bundles[s].delta_u, geom, layout);
        w.col(s) = layout.restrict(VectorXcd(sh * s_db));
      }
      const LowRank u_w{u_conj, w};
      accumulate_hadamard(
          parts.r12, -w4,
          [&](auto r0, auto c0, auto c) {
            return MatrixXcd(inverse_block(st, r0, c0, c).conjugate());
          },
          [&](auto r0, auto c0, auto c) { return u_w.block(r0, c0, c); }, false);
      accumulate_hadamard(
          parts.r12, -w4, [&](auto r0, auto c0, auto c) { return gram.block(r0, c0, c); },
          [&](auto r0, auto c0, auto c) { return u_du.block(r0, c0, c); }, false);
    } else {
      // Central differences of SᴴS δb in each model parameter.
      MatrixXcd delta_b(layout.size(), static_cast<Eigen::Index>(st.bundles.size()));
      for (size_t s = 0; s < st.bundles.size(); ++s) delta_b.col(s) = st.bundles[s].delta_b;
      PmlConfig pml = st.pml;
      if (!pml.collar_reference) pml.collar_reference = st.model.values;
      auto gram_times = [&](const Model& m) {
        const auto fact = factorize(assemble(m, st.frequency_hz, pml));
        const MatrixXcd sh = receiver_kernel(fact, geom).adjoint_greens;
        return layout.restrict_rows(MatrixXcd(sh * (sh.adjoint() * delta_b)));
      };
      const MatrixXcd l_conj = -w2 * u_conj;
      for (int j = 0; j < n; ++j) {
        const double h = fd_step * st.model.values(j);
        Model plus = st.model;
        Model minus = st.model;
        plus.values(j) += h;
        minus.values(j) -= h;
        const MatrixXcd d = (gram_times(plus) - gram_times(minus)) / (2.0 * h);
        parts.r12.col(j) += (l_conj.array() * d.array()).rowwise().sum().real().matrix();
      }
    }
  }
  parts.r21 = parts.r11.transpose();
  parts.r22 = parts.r12.transpose();
  return parts;
}

HessianMatrix full_hessian(std::span<const FrequencyState> states) {
  HessianMatrix h = gn_hessian(states);
  h.kind = HessianKind::full;
  h.dense += full_R_direct(states);
  return h;
}

MatrixXd agn_augmentation(std::span<const FrequencyState> states) {
  require_dense(states);
  const int n = states.front().layout().physical_size();
  MatrixXd aug = MatrixXd::Zero(n, n);
  for (const auto& st : states) {
    require_scattering(st);
    const LowRank gram = sensitivity_gram(st);
    const MatrixXcd l = stack(st, [](const SensitivityBundle& b) { return b.virtual_src; });
    const MatrixXcd dl =
        stack(st, [](const SensitivityBundle& b) { return b.delta_virtual_src; });
    const LowRank weights{l.conjugate(), dl};
    accumulate_hadamard(
        aug, 1.0, [&](auto r0, auto c0, auto c) { return gram.block(r0, c0, c); },
        [&](auto r0, auto c0, auto c) { return weights.block(r0, c0, c); }, false);
  }
  return aug;
}

HessianMatrix agn_hessian(std::span<const FrequencyState> states) {
  HessianMatrix h = gn_hessian(states);
  h.kind = HessianKind::agn;
  h.dense += agn_augmentation(states);
  h.eps = states.front().data_hessian->eps;
  return h;
}

VectorXd fd_gradient(const ScalarField& f, const VectorXd& x, const VectorXd& steps) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd xp = x;
    VectorXd xm = x;
    xp(i) += steps(i);
    xm(i) -= steps(i);
    g(i) = (f(xp) - f(xm)) / (2.0 * steps(i));
  }
  return g;
}

MatrixXd fd_hessian(const ScalarField& f, const VectorXd& x, const VectorXd& steps) {
  const Eigen::Index n = x.size();
  MatrixXd h(n, n);
  const double f0 = f(x);
  auto shifted = [&](Eigen::Index i, double si, Eigen::Index j, double sj) {
    VectorXd y = x;
    y(i) += si * steps(i);
    y(j) += sj * steps(j);
    return f(y);
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    h(i, i) = (shifted(i, 1, i, 0) - 2.0 * f0 + shifted(i, -1, i, 0)) / (steps(i) * steps(i));
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = (shifted(i, 1, j, 1) - shifted(i, 1, j, -1) - shifted(i, -1, j, 1) +
                        shifted(i, -1, j, -1)) /
                       (4.0 * steps(i) * steps(j));
      h(i, j) = v;
      h(j, i) = v;
    }
  }
  return h;
}

ScalarField misfit_function(const Model& model, const AcquisitionGeometry& geom,
                            std::vector<ObservedData> observed, const PmlConfig& pml) {
  PmlConfig frozen = pml;
  if (!frozen.collar_reference && frozen.width > 0) frozen.collar_reference = model.values;
  return [grid = model.grid, geom, observed = std::move(observed), frozen](const VectorXd& m) {
    const Model trial(grid, m);
    double total = 0.0;
    for (const auto& d : observed) total += misfit(trial, geom, d, frozen);
    return total;
  };
}

HessianMatrix fd_hessian_oracle(const Model& model, const AcquisitionGeometry& geom,
                                const std::vector<ObservedData>& observed, const PmlConfig& pml,
                                double relative_step) {
  if (model.size() > kFdHessianLimit) {
    throw ConfigError("finite-difference Hessian limited to " + std::to_string(kFdHessianLimit) +
                      " parameters");
  }
  HessianMatrix h;
  h.kind = HessianKind::fd_oracle;
  for (const auto& d : observed) h.frequencies_hz.push_back(d.frequency_hz);
  h.dense = fd_hessian(misfit_function(model, geom, observed, pml), model.values,
                       relative_step * model.values);
  return h;
}

}  // namespace fwi
