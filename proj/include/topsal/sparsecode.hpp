#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "topsal/errors.hpp"
#include "topsal/random.hpp"

namespace topsal {

inline constexpr double kAtomNormTolerance = 1e-6;

/// Sparse coefficient vector over a dictionary of `dict_size` atoms.
/// Support indices are strictly increasing and no stored coefficient is zero.
struct SparseCode {
  std::vector<int> support;
  std::vector<double> coeffs;
  int dict_size = 0;

  SparseCode() = default;
  explicit SparseCode(int size) : dict_size(size) {}
  SparseCode(std::vector<int> idx, std::vector<double> val, int size)
      : support(std::move(idx)), coeffs(std::move(val)), dict_size(size) {
    validate();
  }

  static SparseCode from_dense(const Eigen::VectorXd& z) {
    SparseCode c(static_cast<int>(z.size()));
    for (Eigen::Index m = 0; m < z.size(); ++m) {
      if (z[m] != 0.0) {
        c.support.push_back(static_cast<int>(m));
        c.coeffs.push_back(z[m]);
      }
    }
    return c;
  }

  int sparsity() const { return static_cast<int>(support.size()); }
  bool empty() const { return support.empty(); }

  Eigen::VectorXd dense() const {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(dict_size);
    for (std::size_t p = 0; p < support.size(); ++p) z[support[p]] = coeffs[p];
    return z;
  }

  double l1() const {
    double s = 0.0;
    for (double c : coeffs) s += std::abs(c);
    return s;
  }

  /// Returns the coefficient at atom m (zero when m is outside the support).
  double at(int m) const {
    const auto it = std::lower_bound(support.begin(), support.end(), m);
    return (it != support.end() && *it == m) ? coeffs[static_cast<std::size_t>(it - support.begin())] : 0.0;
  }

  void validate() const {
    if (support.size() != coeffs.size()) throw DimensionError("sparse code support/coeff size mismatch");
    for (std::size_t p = 0; p < support.size(); ++p) {
      if (support[p] < 0 || support[p] >= dict_size) throw DimensionError("sparse code index out of range");
      if (p > 0 && support[p] <= support[p - 1]) throw DimensionError("sparse code indices not increasing");
      if (coeffs[p] == 0.0) throw DimensionError("sparse code stores a zero coefficient");
    }
  }

  friend bool operator==(const SparseCode&, const SparseCode&) = default;
};

/// Unit-norm atoms (columns) owned by one category, or by the background.
/// Immutable; the Gram matrix is computed once at construction.
class CategoryDictionary {
 public:
  CategoryDictionary() = default;

  CategoryDictionary(int category, Eigen::MatrixXd atoms) : category_(category), atoms_(std::move(atoms)) {
    if (atoms_.cols() == 0 || atoms_.rows() == 0) throw DimensionError("empty dictionary");
    for (Eigen::Index m = 0; m < atoms_.cols(); ++m) {
      const double n = atoms_.col(m).norm();
      if (!(std::abs(n - 1.0) <= kAtomNormTolerance)) {
        throw DimensionError("dictionary atom " + std::to_string(m) + " is not unit norm");
      }
    }
    gram_ = atoms_.transpose() * atoms_;
  }

  /// Normalises every column to unit norm first; a zero column is an error.
  static CategoryDictionary normalized(int category, Eigen::MatrixXd atoms) {
    for (Eigen::Index m = 0; m < atoms.cols(); ++m) {
      const double n = atoms.col(m).norm();
      if (n == 0.0) throw DimensionError("cannot normalise a zero atom");
      atoms.col(m) /= n;
    }
    return CategoryDictionary(category, std::move(atoms));
  }

  int category() const { return category_; }
  int dim() const { return static_cast<int>(atoms_.rows()); }
  int size() const { return static_cast<int>(atoms_.cols()); }
  const Eigen::MatrixXd& atoms() const { return atoms_; }
  const Eigen::MatrixXd& gram() const { return gram_; }

  friend bool operator==(const CategoryDictionary& a, const CategoryDictionary& b) {
    return a.category_ == b.category_ && a.atoms_.rows() == b.atoms_.rows() &&
           a.atoms_.cols() == b.atoms_.cols() && a.atoms_ == b.atoms_;
  }

 private:
  int category_ = 0;
  Eigen::MatrixXd atoms_;
  Eigen::MatrixXd gram_;
};

struct CodingConfig {
  double lambda = 0.15;
  int kmeans_iters = 20;
  std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// Feature-sign search for  min_z ||f - D z||^2 + lambda ||z||_1.
// ---------------------------------------------------------------------------

namespace detail {

// Objective restricted to the index set `idx`, without the constant ||f||^2.
inline double restricted_objective(const Eigen::MatrixXd& G, const Eigen::VectorXd& b, std::span<const int> idx,
                                   const Eigen::VectorXd& x, double lambda) {
  double quad = 0.0, lin = 0.0, l1 = 0.0;
  for (std::size_t p = 0; p < idx.size(); ++p) {
    const double xp = x[static_cast<Eigen::Index>(p)];
    if (xp == 0.0) continue;
    double row = 0.0;
    for (std::size_t q = 0; q < idx.size(); ++q) row += G(idx[p], idx[q]) * x[static_cast<Eigen::Index>(q)];
    quad += xp * row;
    lin += b[idx[p]] * xp;
    l1 += std::abs(xp);
  }
  return quad - 2.0 * lin + lambda * l1;
}

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Feature-sign search on a precomputed Gram matrix G = D^T D and
/// correlation b = D^T f. Returns the dense minimiser.
inline Eigen::VectorXd feature_sign_gram(const Eigen::MatrixXd& G, const Eigen::VectorXd& b, double lambda) {
  if (!(lambda > 0.0)) throw DimensionError("lambda must be positive");
  if (G.rows() != G.cols() || G.rows() != b.size()) throw DimensionError("Gram/correlation size mismatch");
  const int r = static_cast<int>(b.size());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(r);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(r);
  std::vector<char> active(static_cast<std::size_t>(r), 0);

  // Activation requires |grad| to exceed lambda by a margin, which keeps
  // round-off from re-activating coefficients that just left the set.
  const double activate_tol = 1e-10 * std::max(1.0, lambda);
  const double opt_tol = 1e-9 * std::max(1.0, lambda);
  const int max_outer = 10 * r + 100;

  const auto gradient = [&](int i) {
    double g = -b[i];
    for (int m = 0; m < r; ++m) {
      if (x[m] != 0.0) g += G(i, m) * x[m];
    }
    return 2.0 * g;
  };
  const auto active_list = [&] {
    std::vector<int> idx;
    for (int m = 0; m < r; ++m)
      if (active[static_cast<std::size_t>(m)]) idx.push_back(m);
    return idx;
  };
  const auto active_optimal = [&] {
    for (int m = 0; m < r; ++m) {
      if (x[m] != 0.0 && std::abs(gradient(m) + lambda * detail::sgn(x[m])) > opt_tol) return false;
    }
    return true;
  };

  for (int outer = 0; outer < max_outer; ++outer) {
    // Activate the zero coefficient with the steepest violation.
    int best = -1;
    double best_abs = lambda + activate_tol;
    for (int m = 0; m < r; ++m) {
      if (x[m] != 0.0) continue;
      const double g = std::abs(gradient(m));
      if (g > best_abs) {
        best_abs = g;
        best = m;
      }
    }
    if (best < 0) {
      if (active_optimal()) break;
    } else {
      active[static_cast<std::size_t>(best)] = 1;
      theta[best] = -detail::sgn(gradient(best));
    }

    for (int inner = 0; inner < max_outer; ++inner) {
      const std::vector<int> idx = active_list();
      if (idx.empty()) break;
      const auto n = static_cast<Eigen::Index>(idx.size());
      Eigen::MatrixXd Ga(n, n);
      Eigen::VectorXd rhs(n), xa(n), tha(n);
      for (Eigen::Index p = 0; p < n; ++p) {
        for (Eigen::Index q = 0; q < n; ++q) Ga(p, q) = G(idx[p], idx[q]);
        rhs[p] = b[idx[p]] - 0.5 * lambda * theta[idx[p]];
        xa[p] = x[idx[p]];
        tha[p] = theta[idx[p]];
      }

      Eigen::LDLT<Eigen::MatrixXd> ldlt(Ga);
      const Eigen::VectorXd piv = ldlt.vectorD().cwiseAbs();
      const bool singular = ldlt.info() != Eigen::Success || piv.minCoeff() <= 1e-12 * std::max(1.0, piv.maxCoeff());

      Eigen::VectorXd xnext;
      if (!singular) {
        const Eigen::VectorXd xnew = ldlt.solve(rhs);
        // Discrete line search over xa -> xnew: the endpoint plus every sign change.
        double best_obj = detail::restricted_objective(G, b, idx, xnew, lambda);
        xnext = xnew;
        for (Eigen::Index p = 0; p < n; ++p) {
          if (xa[p] == 0.0 || detail::sgn(xa[p]) == detail::sgn(xnew[p])) continue;
          const double t = xa[p] / (xa[p] - xnew[p]);
          Eigen::VectorXd cand = xa + t * (xnew - xa);
          cand[p] = 0.0;
          const double obj = detail::restricted_objective(G, b, idx, cand, lambda);
          if (obj < best_obj) {
            best_obj = obj;
            xnext = cand;
          }
        }
      } else {
        // The newest atom is linearly dependent on the active ones. Move
        // along the null direction that lowers the l1 term until an older
        // coefficient reaches zero; the quadratic part is constant there.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Ga);
        const Eigen::VectorXd v = eig.eigenvectors().col(0);
        double sigma = 0.0, zero_mass = 0.0;
        for (Eigen::Index p = 0; p < n; ++p) {
          if (xa[p] != 0.0) sigma += detail::sgn(xa[p]) * v[p];
          else zero_mass += std::abs(v[p]);
        }
        const Eigen::VectorXd d = (sigma > 0.0 ? -1.0 : 1.0) * v;
        double tstar = std::numeric_limits<double>::infinity();
        Eigen::Index hit = -1;
        for (Eigen::Index p = 0; p < n; ++p) {
          if (xa[p] != 0.0 && xa[p] * d[p] < 0.0) {
            const double t = -xa[p] / d[p];
            if (t < tstar) {
              tstar = t;
              hit = p;
            }
          }
        }
        if (hit < 0 || zero_mass >= std::abs(sigma)) {
          // Not a descent direction: drop the zero-valued members instead.
          for (Eigen::Index p = 0; p < n; ++p) {
            if (xa[p] == 0.0) {
              active[static_cast<std::size_t>(idx[p])] = 0;
              theta[idx[p]] = 0.0;
            }
          }
          break;
        }
        xnext = xa + tstar * d;
        xnext[hit] = 0.0;
      }

      for (Eigen::Index p = 0; p < n; ++p) {
        const int m = idx[p];
        x[m] = xnext[p];
        if (x[m] == 0.0) {
          active[static_cast<std::size_t>(m)] = 0;
          theta[m] = 0.0;
        } else {
          theta[m] = detail::sgn(x[m]);
        }
      }
      if (active_optimal()) break;
    }
  }
  return x;
}

/// Feature-sign search of `f` against a dictionary with precomputed Gram.
inline SparseCode feature_sign(const Eigen::VectorXd& f, const CategoryDictionary& dict, double lambda) {
  if (f.size() != dict.dim()) throw DimensionError("feature dimension does not match dictionary");
  const Eigen::VectorXd b = dict.atoms().transpose() * f;
  return SparseCode::from_dense(feature_sign_gram(dict.gram(), b, lambda));
}

/// Feature-sign search against raw atoms (Gram computed on the fly).
inline SparseCode feature_sign(const Eigen::VectorXd& f, const Eigen::MatrixXd& atoms, double lambda) {
  if (atoms.cols() == 0) throw DimensionError("empty dictionary");
  if (f.size() != atoms.rows()) throw DimensionError("feature dimension does not match dictionary");
  const Eigen::MatrixXd G = atoms.transpose() * atoms;
  const Eigen::VectorXd b = atoms.transpose() * f;
  return SparseCode::from_dense(feature_sign_gram(G, b, lambda));
}

/// ||f - D z||^2 + lambda ||z||_1
inline double lasso_objective(const Eigen::VectorXd& f, const Eigen::MatrixXd& atoms, const SparseCode& z,
                              double lambda) {
  Eigen::VectorXd resid = f;
  for (std::size_t p = 0; p < z.support.size(); ++p) resid -= z.coeffs[p] * atoms.col(z.support[p]);
  return resid.squaredNorm() + lambda * z.l1();
}

// ---------------------------------------------------------------------------
// k-means dictionary initialisation
// ---------------------------------------------------------------------------

/// Lloyd's k-means with k-means++ seeding over the columns of `points`;
/// returns the unit-normalised centroids as a dictionary. Empty clusters are
/// reseeded from the point farthest from its centroid; assignment ties go
/// to the lowest centroid index. A centroid that lands exactly on the origin
/// is replaced by the nearest data point of largest norm in its cluster.
inline CategoryDictionary kmeans_init(const Eigen::MatrixXd& points, int r, std::uint64_t seed, int iters,
                                      int category = 0) {
  const auto n = points.cols();
  const auto k = points.rows();
  if (r < 1) throw CapacityError("k-means needs at least one centroid");
  if (n < r) {
    throw CapacityError("k-means needs at least " + std::to_string(r) + " descriptors, got " + std::to_string(n));
  }
  Rng rng(seed);
  Eigen::MatrixXd C(k, r);
  const Eigen::VectorXd pnorm = points.colwise().squaredNorm().transpose();

  // k-means++ seeding.
  Eigen::VectorXd dist2(n);
  {
    const auto first = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    C.col(0) = points.col(first);
    dist2 = (points.colwise() - C.col(0)).colwise().squaredNorm().transpose();
    for (int c = 1; c < r; ++c) {
      const double total = dist2.sum();
      Eigen::Index pick = 0;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
          u -= dist2[i];
          if (u < 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
      }
      C.col(c) = points.col(pick);
      dist2 = dist2.cwiseMin((points.colwise() - C.col(c)).colwise().squaredNorm().transpose());
    }
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  Eigen::VectorXd best_d(n);
  const auto assign_all = [&] {
    const Eigen::MatrixXd cross = C.transpose() * points;  // r x n
    const Eigen::VectorXd cnorm = C.colwise().squaredNorm().transpose();
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int arg = 0;
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < r; ++c) {
        const double d = pnorm[i] - 2.0 * cross(c, i) + cnorm[c];
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      best_d[i] = std::max(0.0, best);
      if (assign[static_cast<std::size_t>(i)] != arg) changed = true;
      assign[static_cast<std::size_t>(i)] = arg;
    }
    return changed;
  };

  for (int it = 0; it < std::max(1, iters); ++it) {
    const bool changed = assign_all();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, r);
    std::vector<int> count(static_cast<std::size_t>(r), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.col(assign[static_cast<std::size_t>(i)]) += points.col(i);
      ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < r; ++c) {
      if (count[static_cast<std::size_t>(c)] > 0) {
        C.col(c) = sum.col(c) / count[static_cast<std::size_t>(c)];
        continue;
      }
      Eigen::Index far = 0;
      for (Eigen::Index i = 1; i < n; ++i)
        if (best_d[i] > best_d[far]) far = i;
      C.col(c) = points.col(far);
      best_d[far] = 0.0;
    }
    if (!changed && it > 0) break;
  }

  for (int c = 0; c < r; ++c) {
    if (C.col(c).norm() > 0.0) continue;
    // Degenerate centroid at the origin: fall back to the largest-norm member.
    Eigen::Index pick = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (assign[static_cast<std::size_t>(i)] == c && (pick < 0 || pnorm[i] > pnorm[pick])) pick = i;
    }
    if (pick >= 0 && pnorm[pick] > 0.0) {
      C.col(c) = points.col(pick);
    } else {
      C.col(c).setZero();
      C(c % k, c) = 1.0;
    }
  }
  return CategoryDictionary::normalized(category, std::move(C));
}

// ---------------------------------------------------------------------------
// Global dictionary and category-aware coding
// ---------------------------------------------------------------------------

/// Ordered concatenation [D_1, ..., D_N, D_bg]. Atom ownership is a set of
/// contiguous ranges; part N is the background.
class GlobalDictionary {
 public:
  GlobalDictionary() = default;

  explicit GlobalDictionary(const std::vector<CategoryDictionary>& parts) {
    if (parts.empty()) throw DimensionError("global dictionary needs at least one part");
    const int k = parts.front().dim();
    offsets_.push_back(0);
    for (const auto& p : parts) {
      if (p.dim() != k) throw DimensionError("dictionaries disagree on feature dimension");
      offsets_.push_back(offsets_.back() + p.size());
    }
    atoms_.resize(k, offsets_.back());
    for (std::size_t n = 0; n < parts.size(); ++n) {
      atoms_.middleCols(offsets_[n], parts[n].size()) = parts[n].atoms();
      sizes_.push_back(parts[n].size());
    }
    gram_ = atoms_.transpose() * atoms_;
    owner_.resize(static_cast<std::size_t>(offsets_.back()));
    for (std::size_t n = 0; n < parts.size(); ++n)
      for (int m = offsets_[n]; m < offsets_[n + 1]; ++m) owner_[static_cast<std::size_t>(m)] = static_cast<int>(n);
  }

  int size() const { return static_cast<int>(atoms_.cols()); }
  int dim() const { return static_cast<int>(atoms_.rows()); }
  int part_count() const { return static_cast<int>(sizes_.size()); }
  int offset(int part) const { return offsets_[static_cast<std::size_t>(part)]; }
  int part_size(int part) const { return sizes_[static_cast<std::size_t>(part)]; }
  int owner(int atom) const { return owner_[static_cast<std::size_t>(atom)]; }
  const Eigen::MatrixXd& atoms() const { return atoms_; }
  const Eigen::MatrixXd& gram() const { return gram_; }

 private:
  Eigen::MatrixXd atoms_;
  Eigen::MatrixXd gram_;
  std::vector<int> offsets_;
  std::vector<int> sizes_;
  std::vector<int> owner_;
};

/// Feature-sign search against the whole concatenated dictionary.
inline SparseCode feature_sign(const Eigen::VectorXd& f, const GlobalDictionary& global, double lambda) {
  if (f.size() != global.dim()) throw DimensionError("feature dimension does not match dictionary");
  const Eigen::VectorXd b = global.atoms().transpose() * f;
  return SparseCode::from_dense(feature_sign_gram(global.gram(), b, lambda));
}

/// Independent feature-sign code of f against every dictionary, in order.
inline std::vector<SparseCode> code_all_categories(const Eigen::VectorXd& f,
                                                   std::span<const CategoryDictionary> dicts, double lambda) {
  std::vector<SparseCode> out;
  out.reserve(dicts.size());
  for (const auto& d : dicts) {
    if (d.dim() != dicts.front().dim()) throw DimensionError("dictionaries disagree on feature dimension");
    out.push_back(feature_sign(f, d, lambda));
  }
  return out;
}

/// Stacks per-part codes into one code over the global dictionary
/// (local atom m of part n -> global offset(n) + m).
inline SparseCode concat_codes(std::span<const SparseCode> codes, const GlobalDictionary& global) {
  if (static_cast<int>(codes.size()) != global.part_count()) {
    throw DimensionError("expected one code per dictionary part");
  }
  SparseCode z(global.size());
  for (std::size_t n = 0; n < codes.size(); ++n) {
    if (codes[n].dict_size != global.part_size(static_cast<int>(n))) {
      throw DimensionError("code size does not match its dictionary");
    }
    for (std::size_t p = 0; p < codes[n].support.size(); ++p) {
      z.support.push_back(global.offset(static_cast<int>(n)) + codes[n].support[p]);
      z.coeffs.push_back(codes[n].coeffs[p]);
    }
  }
  return z;
}

/// Atoms of the global dictionary picked by a code's support, in order.
struct SubDictionary {
  Eigen::MatrixXd atoms;
  Eigen::MatrixXd gram;
  std::vector<int> to_global;  // sub index p -> global atom index

  int size() const { return static_cast<int>(to_global.size()); }
};

inline SubDictionary build_sub_dictionary(const SparseCode& z_con, const GlobalDictionary& global) {
  if (z_con.dict_size != global.size()) throw DimensionError("code does not match global dictionary");
  SubDictionary sub;
  sub.to_global = z_con.support;
  const auto s = static_cast<Eigen::Index>(sub.to_global.size());
  sub.atoms.resize(global.dim(), s);
  sub.gram.resize(s, s);
  for (Eigen::Index p = 0; p < s; ++p) {
    sub.atoms.col(p) = global.atoms().col(sub.to_global[static_cast<std::size_t>(p)]);
    for (Eigen::Index q = 0; q < s; ++q) {
      sub.gram(p, q) = global.gram()(sub.to_global[static_cast<std::size_t>(p)], sub.to_global[static_cast<std::size_t>(q)]);
    }
  }
  return sub;
}

/// Places a code over the sub-dictionary back at its global atom positions.
inline SparseCode scatter_code(const SparseCode& z_sub, const SubDictionary& sub, int global_size) {
  if (z_sub.dict_size != sub.size()) throw DimensionError("sub-code does not match sub-dictionary");
  SparseCode z(global_size);
  for (std::size_t p = 0; p < z_sub.support.size(); ++p) {
    z.support.push_back(sub.to_global[static_cast<std::size_t>(z_sub.support[p])]);
    z.coeffs.push_back(z_sub.coeffs[p]);
  }
  return z;
}

/// Two-step category-aware code: concatenate the per-category codes,
/// restrict the global dictionary to their support, re-solve there and
/// scatter back. An empty concatenated code yields an empty result.
inline SparseCode category_aware_code(const Eigen::VectorXd& f, const GlobalDictionary& global,
                                      std::span<const SparseCode> codes, double lambda) {
  if (f.size() != global.dim()) throw DimensionError("feature dimension does not match dictionary");
  const SparseCode z_con = concat_codes(codes, global);
  if (z_con.empty()) return SparseCode(global.size());
  const SubDictionary sub = build_sub_dictionary(z_con, global);
  const Eigen::VectorXd b = sub.atoms.transpose() * f;
  const SparseCode z_sub = SparseCode::from_dense(feature_sign_gram(sub.gram, b, lambda));
  return scatter_code(z_sub, sub, global.size());
}

/// Direct category-aware objective with squared losses, lambda1 = lambda3 =
/// lambda and lambda2 = 1. Sums the per-category terms over the first
/// `categories` parts (the background is excluded). Used for verification.
inline double category_aware_objective(const Eigen::VectorXd& f, const GlobalDictionary& global,
                                       const SparseCode& z, double lambda, int categories) {
  double obj = lasso_objective(f, global.atoms(), z, lambda);
  for (int n = 0; n < categories; ++n) {
    SparseCode zn(global.size());
    for (std::size_t p = 0; p < z.support.size(); ++p) {
      if (global.owner(z.support[p]) == n) {
        zn.support.push_back(z.support[p]);
        zn.coeffs.push_back(z.coeffs[p]);
      }
    }
    obj += lasso_objective(f, global.atoms(), zn, lambda);
  }
  return obj;
}

}  // namespace topsal
