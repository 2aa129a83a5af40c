#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mixuplr/error.hpp"
#include "mixuplr/format.hpp"
#include "mixuplr/numeric.hpp"
#include "mixuplr/random.hpp"
#include "mixuplr/tensor.hpp"

namespace mixuplr {

/// Features [n x d] with one-hot labels [n x S] for every point. Which labels a
/// learner may see is decided by an SslSplit.
struct Dataset {
  Tensor features;
  Tensor labels;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::size_t num_classes() const noexcept { return labels.cols(); }
  std::size_t label_of(std::size_t i) const { return argmax(labels.row(i)); }
};

/// Features with labels, used for supervised evaluation and attacks.
struct LabeledSet {
  Tensor features;
  Tensor labels;
};

struct SslSplit {
  std::vector<std::size_t> labeled_idx;
  std::vector<std::size_t> unlabeled_idx;
  std::vector<std::size_t> holdout_idx;
};

/// The view a semi-supervised learner trains on. It carries no labels for the
/// unlabeled pool, so training code cannot read them.
struct SslTrainingData {
  Tensor labeled_x;
  Tensor labeled_y;
  Tensor unlabeled_x;
};

struct AugmentSpec {
  double jitter_sigma = 0.0;
  double rotate_max_radians = 0.0;

  void validate() const {
    if (!(jitter_sigma >= 0.0) || !(rotate_max_radians >= 0.0)) {
      throw DomainError("AugmentSpec fields must be nonnegative");
    }
  }
};

namespace detail {
inline Tensor one_hot(const std::vector<std::size_t>& classes, std::size_t num_classes) {
  Tensor y({classes.size(), num_classes});
  for (std::size_t i = 0; i < classes.size(); ++i) y(i, classes[i]) = 1.0;
  return y;
}

// n evenly spaced angles on [0, stop] (endpoint included) or [0, stop).
inline double spaced_angle(std::size_t i, std::size_t n, double stop, bool endpoint) {
  if (n <= 1) return 0.0;
  return stop * static_cast<double>(i) / static_cast<double>(endpoint ? n - 1 : n);
}
}  // namespace detail

/// Two interleaving half circles: class 0 on the unit upper arc, class 1 on the
/// mirrored arc shifted by (1, 0.5). Angles are evenly spaced; Gaussian noise
/// of the given sigma is added per coordinate.
inline Dataset make_two_moons(std::size_t n, double noise, RngState& rng) {
  if (n < 2) throw DomainError("make_two_moons: n must be >= 2");
  if (!(noise >= 0.0)) throw DomainError("make_two_moons: noise must be >= 0");
  const std::size_t n_upper = (n + 1) / 2;
  const std::size_t n_lower = n / 2;
  Tensor x({n, 2});
  std::vector<std::size_t> cls(n);
  for (std::size_t i = 0; i < n_upper; ++i) {
    const double t = detail::spaced_angle(i, n_upper, std::numbers::pi, true);
    x(i, 0) = std::cos(t);
    x(i, 1) = std::sin(t);
    cls[i] = 0;
  }
  for (std::size_t i = 0; i < n_lower; ++i) {
    const double t = detail::spaced_angle(i, n_lower, std::numbers::pi, true);
    x(n_upper + i, 0) = 1.0 - std::cos(t);
    x(n_upper + i, 1) = 0.5 - std::sin(t);
    cls[n_upper + i] = 1;
  }
  if (noise > 0.0) {
    for (double& v : x.values()) v += noise * rng.normal();
  }
  return {std::move(x), detail::one_hot(cls, 2)};
}

/// Two concentric circles; class 0 outer (radius 1), class 1 inner (radius factor).
inline Dataset make_circles(std::size_t n, double noise, double factor, RngState& rng) {
  if (n < 2) throw DomainError("make_circles: n must be >= 2");
  if (!(factor > 0.0 && factor < 1.0)) throw DomainError("make_circles: factor must lie in (0, 1)");
  if (!(noise >= 0.0)) throw DomainError("make_circles: noise must be >= 0");
  const std::size_t n_outer = (n + 1) / 2;
  const std::size_t n_inner = n / 2;
  Tensor x({n, 2});
  std::vector<std::size_t> cls(n);
  for (std::size_t i = 0; i < n_outer; ++i) {
    const double t = detail::spaced_angle(i, n_outer, 2.0 * std::numbers::pi, false);
    x(i, 0) = std::cos(t);
    x(i, 1) = std::sin(t);
    cls[i] = 0;
  }
  for (std::size_t i = 0; i < n_inner; ++i) {
    const double t = detail::spaced_angle(i, n_inner, 2.0 * std::numbers::pi, false);
    x(n_outer + i, 0) = factor * std::cos(t);
    x(n_outer + i, 1) = factor * std::sin(t);
    cls[n_outer + i] = 1;
  }
  if (noise > 0.0) {
    for (double& v : x.values()) v += noise * rng.normal();
  }
  return {std::move(x), detail::one_hot(cls, 2)};
}

/// Isotropic Gaussian blobs around the rows of `centers`; points are assigned to
/// centers in contiguous blocks, earlier centers getting the remainder.
inline Dataset make_blobs(std::size_t n, const Tensor& centers, double sigma, RngState& rng) {
  require_matrix(centers, "make_blobs centers");
  const std::size_t k = centers.rows();
  if (k == 0 || n < k) throw DomainError("make_blobs: need at least one point per center");
  if (!(sigma >= 0.0)) throw DomainError("make_blobs: sigma must be >= 0");
  Tensor x({n, centers.cols()});
  std::vector<std::size_t> cls(n);
  std::size_t row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t count = n / k + (c < n % k ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i, ++row) {
      cls[row] = c;
      for (std::size_t j = 0; j < centers.cols(); ++j) x(row, j) = centers(c, j) + sigma * rng.normal();
    }
  }
  return {std::move(x), detail::one_hot(cls, k)};
}

/// k centers drawn uniformly from [-box, box]^dim.
inline Tensor make_blob_centers(std::size_t k, std::size_t dim, double box, RngState& rng) {
  Tensor c({k, dim});
  for (double& v : c.values()) v = rng.uniform(-box, box);
  return c;
}

/// Random labeled / unlabeled / holdout partition. The holdout takes
/// floor(holdout_fraction * n) points; with `balanced` each class receives
/// floor(m/S) or ceil(m/S) labels (lower class indices get the remainder).
inline SslSplit split_ssl(const Dataset& data, std::size_t m, bool balanced, RngState& rng,
                          double holdout_fraction = 0.0) {
  const std::size_t n = data.size();
  const std::size_t s = data.num_classes();
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw DomainError("split_ssl: holdout_fraction must lie in [0, 1)");
  const auto n_holdout = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(n)));
  if (m + n_holdout > n) throw DomainError("split_ssl: labeled count plus holdout exceeds dataset size");
  if (balanced && m < s) throw DomainError("split_ssl: balanced split needs at least one label per class");

  const auto perm = random_permutation(n, rng);
  SslSplit split;
  split.holdout_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_holdout));
  if (!balanced) {
    split.labeled_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_holdout),
                             perm.begin() + static_cast<std::ptrdiff_t>(n_holdout + m));
    split.unlabeled_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_holdout + m), perm.end());
    return split;
  }
  std::vector<std::size_t> quota(s);
  for (std::size_t c = 0; c < s; ++c) quota[c] = m / s + (c < m % s ? 1 : 0);
  for (std::size_t i = n_holdout; i < n; ++i) {
    const std::size_t idx = perm[i];
    const std::size_t c = data.label_of(idx);
    if (quota[c] > 0) {
      --quota[c];
      split.labeled_idx.push_back(idx);
    } else {
      split.unlabeled_idx.push_back(idx);
    }
  }
  for (std::size_t c = 0; c < s; ++c) {
    if (quota[c] > 0) throw DomainError("split_ssl: class " + std::to_string(c) + " has too few points for a balanced split");
  }
  return split;
}

inline SslTrainingData training_view(const Dataset& data, const SslSplit& split) {
  return {gather_rows(data.features, split.labeled_idx), gather_rows(data.labels, split.labeled_idx),
          gather_rows(data.features, split.unlabeled_idx)};
}

inline LabeledSet labeled_subset(const Dataset& data, const std::vector<std::size_t>& idx) {
  return {gather_rows(data.features, idx), gather_rows(data.labels, idx)};
}

/// Gaussian jitter, then one rotation of the whole batch about its centroid by
/// an angle drawn from Uniform(-max, max). Rotation requires 2-D inputs.
inline Tensor augment(const Tensor& x, const AugmentSpec& spec, RngState& rng) {
  spec.validate();
  require_matrix(x, "augment input");
  if (spec.rotate_max_radians > 0.0 && x.cols() != 2) throw ShapeError("augment: rotation requires 2-D features");
  Tensor out = x;
  if (spec.jitter_sigma > 0.0) {
    for (double& v : out.values()) v += spec.jitter_sigma * rng.normal();
  }
  if (spec.rotate_max_radians > 0.0 && out.rows() > 0) {
    const double angle = rng.uniform(-spec.rotate_max_radians, spec.rotate_max_radians);
    double cx = 0.0, cy = 0.0;
    for (std::size_t r = 0; r < out.rows(); ++r) {
      cx += out(r, 0);
      cy += out(r, 1);
    }
    cx /= static_cast<double>(out.rows());
    cy /= static_cast<double>(out.rows());
    const double c = std::cos(angle), s = std::sin(angle);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      const double dx = out(r, 0) - cx, dy = out(r, 1) - cy;
      out(r, 0) = cx + c * dx - s * dy;
      out(r, 1) = cy + s * dx + c * dy;
    }
  }
  return out;
}

// ---- CSV / index-file I/O -------------------------------------------------

/// Writes `x0,...,x{d-1},label` with one row per point (label = class index).
inline void write_dataset_csv(std::ostream& os, const Dataset& data) {
  for (std::size_t j = 0; j < data.dim(); ++j) os << 'x' << j << ',';
  os << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) os << format_float(data.features(i, j)) << ',';
    os << data.label_of(i) << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& is, std::size_t num_classes = 0) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("dataset csv: empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header.back() != "label") throw ConfigError("dataset csv: header must end with 'label'");
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "x" + std::to_string(j)) throw ConfigError("dataset csv: bad header column " + header[j]);
  }
  std::vector<double> feats;
  std::vector<std::size_t> cls;
  std::size_t max_class = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != d + 1) throw ConfigError("dataset csv: wrong column count");
    for (std::size_t j = 0; j < d; ++j) feats.push_back(parse_double(cells[j]));
    const auto c = static_cast<std::size_t>(std::stoul(cells[d]));
    cls.push_back(c);
    max_class = std::max(max_class, c);
  }
  if (cls.empty()) throw ConfigError("dataset csv: no rows");
  const std::size_t s = std::max(num_classes, max_class + 1);
  return {Tensor({cls.size(), d}, std::move(feats)), detail::one_hot(cls, s)};
}

inline void write_indices(std::ostream& os, const std::vector<std::size_t>& idx) {
  for (std::size_t i : idx) os << i << '\n';
}

inline std::vector<std::size_t> read_indices(std::istream& is) {
  std::vector<std::size_t> idx;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    idx.push_back(static_cast<std::size_t>(std::stoul(line)));
  }
  return idx;
}

}  // namespace mixuplr
