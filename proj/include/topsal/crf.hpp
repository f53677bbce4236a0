#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "topsal/errors.hpp"
#include "topsal/imgfeat.hpp"
#include "topsal/sparsecode.hpp"

namespace topsal {

/// Per-category CRF on the 4-connected patch lattice.
///
/// Energy of a labelling Y in {-1,+1}^t given codes Z:
///   E(Y) = sum_j -y_j * (w . [z_j; 1]) + gamma * sum_{(j,k)} [y_j != y_k]
/// The last entry of w is the bias; gamma is fixed at 1.
struct CrfModel {
  int category = 0;
  Eigen::VectorXd w;  // length r + 1
  double gamma = 1.0;

  int code_size() const { return static_cast<int>(w.size()) - 1; }

  friend bool operator==(const CrfModel& a, const CrfModel& b) {
    return a.category == b.category && a.gamma == b.gamma && a.w.size() == b.w.size() && a.w == b.w;
  }
};

/// Per-patch labels in {-1, +1}.
using LabelField = std::vector<int>;

/// Node potential a_j = w . [z_j; 1].
inline double node_potential(const CrfModel& model, const SparseCode& z) {
  if (z.dict_size != model.code_size()) throw DimensionError("code size does not match CRF weights");
  double a = model.w[model.code_size()];
  for (std::size_t p = 0; p < z.support.size(); ++p) a += model.w[z.support[p]] * z.coeffs[p];
  return a;
}

inline std::vector<double> node_potentials(const CrfModel& model, std::span<const SparseCode> codes) {
  std::vector<double> a(codes.size());
  for (std::size_t j = 0; j < codes.size(); ++j) a[j] = node_potential(model, codes[j]);
  return a;
}

namespace detail {

inline void check_sizes(const PatchGrid& grid, std::size_t n) {
  if (static_cast<std::size_t>(grid.count()) != n) throw DimensionError("field size does not match grid");
}

inline double energy_from_potentials(std::span<const int> y, std::span<const double> a, const PatchGrid& grid,
                                     double gamma) {
  double e = 0.0;
  for (int j = 0; j < grid.count(); ++j) e -= y[static_cast<std::size_t>(j)] * a[static_cast<std::size_t>(j)];
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const int j = r * grid.cols + c;
      if (c + 1 < grid.cols && y[static_cast<std::size_t>(j)] != y[static_cast<std::size_t>(j + 1)]) e += gamma;
      if (r + 1 < grid.rows && y[static_cast<std::size_t>(j)] != y[static_cast<std::size_t>(j + grid.cols)]) e += gamma;
    }
  }
  return e;
}

inline double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Direction order: left, right, up, down. opposite(d) = d ^ 1.
inline int neighbour(const PatchGrid& g, int j, int d) {
  const int r = j / g.cols, c = j % g.cols;
  switch (d) {
    case 0: return c > 0 ? j - 1 : -1;
    case 1: return c + 1 < g.cols ? j + 1 : -1;
    case 2: return r > 0 ? j - g.cols : -1;
    default: return r + 1 < g.rows ? j + g.cols : -1;
  }
}

}  // namespace detail

inline double energy(std::span<const int> y, std::span<const SparseCode> codes, const CrfModel& model,
                     const PatchGrid& grid) {
  detail::check_sizes(grid, y.size());
  detail::check_sizes(grid, codes.size());
  const auto a = node_potentials(model, codes);
  return detail::energy_from_potentials(y, a, grid, model.gamma);
}

/// Hamming margin between two labellings.
inline int hamming(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw DimensionError("label fields differ in size");
  int d = 0;
  for (std::size_t j = 0; j < a.size(); ++j) d += a[j] != b[j] ? 1 : 0;
  return d;
}

struct BpOptions {
  double damping = 0.5;
  double tolerance = 1e-5;
  int max_sweeps = 50;
};

struct BpResult {
  std::vector<double> log_odds;  // log P(+1) - log P(-1) per node
  int sweeps = 0;
  bool converged = false;
};

enum class BpKind { kSumProduct, kMaxProduct };

/// Synchronous loopy belief propagation on the grid with Potts coupling
/// gamma and node log-odds 2 a_j. Messages are scalar log-ratios. Damping is
/// applied only when the lattice has cycles; on a 1 x n chain undamped
/// synchronous BP reaches the exact fixed point in n sweeps.
inline BpResult run_bp(std::span<const double> a, const PatchGrid& grid, double gamma, BpKind kind,
                       const BpOptions& opt = {}) {
  const int t = grid.count();
  detail::check_sizes(grid, a.size());
  const bool loopy = grid.rows > 1 && grid.cols > 1;
  const double damping = loopy ? opt.damping : 0.0;
  // in[j * 4 + d]: message into j from its neighbour in direction d.
  std::vector<double> in(static_cast<std::size_t>(t) * 4, 0.0), next(in.size(), 0.0);
  std::vector<std::array<int, 4>> nb(static_cast<std::size_t>(t));
  for (int j = 0; j < t; ++j)
    for (int d = 0; d < 4; ++d) nb[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)] = detail::neighbour(grid, j, d);

  const auto outgoing = [&](double cavity) {
    // Unnormalised log beliefs +-cavity/2; edge factor exp(-gamma [y != y']).
    const double hp = 0.5 * cavity, hm = -0.5 * cavity;
    if (kind == BpKind::kSumProduct) {
      return detail::log_add_exp(hp, hm - gamma) - detail::log_add_exp(hp - gamma, hm);
    }
    return std::max(hp, hm - gamma) - std::max(hp - gamma, hm);
  };

  BpResult res;
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    double change = 0.0;
    for (int j = 0; j < t; ++j) {
      const auto& nj = nb[static_cast<std::size_t>(j)];
      double total = 2.0 * a[static_cast<std::size_t>(j)];
      for (int d = 0; d < 4; ++d)
        if (nj[static_cast<std::size_t>(d)] >= 0) total += in[static_cast<std::size_t>(j * 4 + d)];
      for (int d = 0; d < 4; ++d) {
        const int k = nj[static_cast<std::size_t>(d)];
        if (k < 0) continue;
        const double msg = outgoing(total - in[static_cast<std::size_t>(j * 4 + d)]);
        const auto slot = static_cast<std::size_t>(k * 4 + (d ^ 1));
        const double updated = damping * in[slot] + (1.0 - damping) * msg;
        change = std::max(change, std::abs(updated - in[slot]));
        next[slot] = updated;
      }
    }
    in.swap(next);
    res.sweeps = sweep + 1;
    if (change < opt.tolerance) {
      res.converged = true;
      break;
    }
  }
  res.log_odds.resize(static_cast<std::size_t>(t));
  for (int j = 0; j < t; ++j) {
    double total = 2.0 * a[static_cast<std::size_t>(j)];
    for (int d = 0; d < 4; ++d)
      if (nb[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)] >= 0) total += in[static_cast<std::size_t>(j * 4 + d)];
    res.log_odds[static_cast<std::size_t>(j)] = total;
  }
  return res;
}

struct MarginalResult {
  std::vector<double> saliency;  // P(y_j = +1)
  bool converged = false;
  int sweeps = 0;
};

inline double logistic(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline MarginalResult infer_marginals_from_potentials(std::span<const double> a, const PatchGrid& grid, double gamma,
                                                      const BpOptions& opt = {}) {
  const BpResult bp = run_bp(a, grid, gamma, BpKind::kSumProduct, opt);
  MarginalResult out;
  out.converged = bp.converged;
  out.sweeps = bp.sweeps;
  out.saliency.resize(bp.log_odds.size());
  for (std::size_t j = 0; j < bp.log_odds.size(); ++j) out.saliency[j] = logistic(bp.log_odds[j]);
  return out;
}

/// Per-patch saliency P(y_j = +1 | Z, w) by sum-product loopy BP.
inline MarginalResult infer_marginals(std::span<const SparseCode> codes, const CrfModel& model, const PatchGrid& grid,
                                      const BpOptions& opt = {}) {
  detail::check_sizes(grid, codes.size());
  const auto a = node_potentials(model, codes);
  return infer_marginals_from_potentials(a, grid, model.gamma, opt);
}

inline constexpr int kExactMapMaxNodes = 16;

/// Exhaustive minimisation of E(Y) - Delta(Y, gt) over all 2^t labellings
/// (bit set = +1). Ties keep the first labelling in enumeration order.
inline LabelField exact_loss_augmented_map(std::span<const double> a, std::span<const int> gt, const PatchGrid& grid,
                                           double gamma) {
  const int t = grid.count();
  if (t > 24) throw DimensionError("exhaustive search limited to 24 nodes");
  LabelField y(static_cast<std::size_t>(t)), best;
  double best_v = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 0; mask < (1u << t); ++mask) {
    for (int j = 0; j < t; ++j) y[static_cast<std::size_t>(j)] = (mask >> j) & 1u ? 1 : -1;
    const double v = detail::energy_from_potentials(y, a, grid, gamma) - hamming(y, gt);
    if (v < best_v) {
      best_v = v;
      best = y;
    }
  }
  return best;
}

/// Most violated labelling argmin_Y E(Y) - Delta(Y, gt). The Hamming term is
/// folded into the node potentials (a_j - gt_j / 2, constant dropped) and
/// decoded with max-product BP; grids of at most 16 nodes are solved exactly.
/// Ties in decoding go to -1.
inline LabelField loss_augmented_map(std::span<const SparseCode> codes, const CrfModel& model,
                                     std::span<const int> gt, const PatchGrid& grid, const BpOptions& opt = {}) {
  detail::check_sizes(grid, codes.size());
  detail::check_sizes(grid, gt.size());
  auto a = node_potentials(model, codes);
  if (grid.count() <= kExactMapMaxNodes) return exact_loss_augmented_map(a, gt, grid, model.gamma);
  for (std::size_t j = 0; j < a.size(); ++j) a[j] -= 0.5 * gt[j];
  const BpResult bp = run_bp(a, grid, model.gamma, BpKind::kMaxProduct, opt);
  LabelField y(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) y[j] = bp.log_odds[j] > 0.0 ? 1 : -1;
  return y;
}

struct StructuredLoss {
  double beta = 0.0;   // E(Y_hat) - E(Y_gt)
  double hinge = 0.0;  // Delta(Y_hat, Y_gt) - beta
};

inline StructuredLoss structured_loss(std::span<const int> y_hat, std::span<const int> y_gt,
                                      std::span<const SparseCode> codes, const CrfModel& model, const PatchGrid& grid) {
  StructuredLoss l;
  l.beta = energy(y_hat, codes, model, grid) - energy(y_gt, codes, model, grid);
  l.hinge = hamming(y_hat, y_gt) - l.beta;
  return l;
}

/// d beta / d w = sum_j (gt_j - yhat_j) [z_j; 1].
inline Eigen::VectorXd grad_w(std::span<const int> y_hat, std::span<const int> y_gt, std::span<const SparseCode> codes) {
  if (y_hat.size() != y_gt.size() || y_hat.size() != codes.size()) throw DimensionError("inconsistent field sizes");
  const int r = codes.empty() ? 0 : codes.front().dict_size;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(r + 1);
  for (std::size_t j = 0; j < codes.size(); ++j) {
    const int s = y_gt[j] - y_hat[j];
    if (s == 0) continue;
    if (codes[j].dict_size != r) throw DimensionError("codes disagree on dictionary size");
    for (std::size_t p = 0; p < codes[j].support.size(); ++p) g[codes[j].support[p]] += s * codes[j].coeffs[p];
    g[r] += s;
  }
  return g;
}

struct DictionaryGradient {
  Eigen::MatrixXd grad;      // k x r
  int skipped_patches = 0;   // singular active-set Gram
};

/// d beta / d D by implicit differentiation of each lasso code on its fixed
/// active set A. With G = D_A^T D_A, u = d beta / d z_A and q = G^{-1} u:
///   d beta / d D_A = (f - D_A z_A) q^T - (D_A q) z_A^T.
inline DictionaryGradient grad_D(std::span<const int> y_hat, std::span<const int> y_gt,
                                 std::span<const SparseCode> codes, const CrfModel& model,
                                 const CategoryDictionary& dict, const Eigen::MatrixXd& features) {
  if (y_hat.size() != y_gt.size() || y_hat.size() != codes.size() ||
      static_cast<Eigen::Index>(codes.size()) != features.cols()) {
    throw DimensionError("inconsistent field sizes");
  }
  if (model.code_size() != dict.size() || features.rows() != dict.dim()) {
    throw DimensionError("model, dictionary and features disagree");
  }
  DictionaryGradient out;
  out.grad = Eigen::MatrixXd::Zero(dict.dim(), dict.size());
  const Eigen::MatrixXd& D = dict.atoms();
  for (std::size_t j = 0; j < codes.size(); ++j) {
    const int s = y_gt[j] - y_hat[j];
    const SparseCode& z = codes[j];
    if (s == 0 || z.empty()) continue;
    const auto n = static_cast<Eigen::Index>(z.support.size());
    Eigen::MatrixXd Da(D.rows(), n);
    Eigen::VectorXd za(n), u(n);
    for (Eigen::Index p = 0; p < n; ++p) {
      Da.col(p) = D.col(z.support[static_cast<std::size_t>(p)]);
      za[p] = z.coeffs[static_cast<std::size_t>(p)];
      u[p] = s * model.w[z.support[static_cast<std::size_t>(p)]];
    }
    const Eigen::MatrixXd G = Da.transpose() * Da;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    const Eigen::VectorXd piv = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || piv.minCoeff() <= 1e-12 * std::max(1.0, piv.maxCoeff())) {
      ++out.skipped_patches;
      continue;
    }
    const Eigen::VectorXd q = ldlt.solve(u);
    const Eigen::VectorXd resid = features.col(static_cast<Eigen::Index>(j)) - Da * za;
    const Eigen::VectorXd Dq = Da * q;
    for (Eigen::Index p = 0; p < n; ++p) {
      out.grad.col(z.support[static_cast<std::size_t>(p)]) += resid * q[p] - Dq * za[p];
    }
  }
  return out;
}

/// One max-margin step: ascend beta (equivalently descend the structured
/// hinge Delta - beta for fixed Y_hat), then renormalise the atoms.
inline std::pair<CrfModel, CategoryDictionary> apply_update(const CrfModel& model, const CategoryDictionary& dict,
                                                            const Eigen::VectorXd& gw, const Eigen::MatrixXd& gD,
                                                            double rho0) {
  if (!(rho0 > 0.0)) throw DimensionError("learning rate must be positive");
  if (gw.size() != model.w.size() || gD.rows() != dict.dim() || gD.cols() != dict.size()) {
    throw DimensionError("gradient shape mismatch");
  }
  CrfModel next = model;
  next.w = model.w + rho0 * gw;
  if (gD.isZero(0.0)) return {next, dict};
  Eigen::MatrixXd atoms = dict.atoms() + rho0 * gD;
  return {next, CategoryDictionary::normalized(dict.category(), std::move(atoms))};
}

}  // namespace topsal
