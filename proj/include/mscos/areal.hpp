#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mscos/common.hpp"

namespace mscos {

struct Rect {
  double xmin = 0.0, ymin = 0.0, xmax = 1.0, ymax = 1.0;
};

// A finite areal support: ordered units with positive areas, centroids, and
// a symmetric 0/1 adjacency with zero diagonal.
class ArealSupport {
 public:
  ArealSupport() = default;

  ArealSupport(std::vector<std::string> ids, Eigen::VectorXd areas,
               Eigen::MatrixX2d centroids, Eigen::MatrixXd adjacency)
      : ids_(std::move(ids)),
        areas_(std::move(areas)),
        centroids_(std::move(centroids)),
        adjacency_(std::move(adjacency)) {
    validate();
    for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], i);
    if (index_.size() != ids_.size())
      throw std::invalid_argument("ArealSupport: duplicate unit id");
  }

  Eigen::Index n() const { return static_cast<Eigen::Index>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }
  const Eigen::VectorXd& areas() const { return areas_; }
  const Eigen::MatrixX2d& centroids() const { return centroids_; }
  const Eigen::MatrixXd& adjacency() const { return adjacency_; }

  Eigen::Index index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end())
      throw std::invalid_argument("ArealSupport: unknown unit id '" + id + "'");
    return static_cast<Eigen::Index>(it->second);
  }

  bool contains(const std::string& id) const { return index_.count(id) > 0; }

 private:
  void validate() const {
    const auto n = static_cast<Eigen::Index>(ids_.size());
    if (areas_.size() != n || centroids_.rows() != n ||
        adjacency_.rows() != n || adjacency_.cols() != n)
      throw std::invalid_argument("ArealSupport: inconsistent field sizes");
    if ((areas_.array() <= 0.0).any())
      throw std::invalid_argument("ArealSupport: areas must be strictly positive");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (adjacency_(i, i) != 0.0)
        throw std::invalid_argument("ArealSupport: adjacency diagonal must be zero");
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double w = adjacency_(i, j);
        if (w != adjacency_(j, i))
          throw std::invalid_argument("ArealSupport: adjacency must be symmetric");
        if (w != 0.0 && w != 1.0)
          throw std::invalid_argument("ArealSupport: adjacency entries must be 0 or 1");
      }
    }
  }

  std::vector<std::string> ids_;
  Eigen::VectorXd areas_;
  Eigen::MatrixX2d centroids_;
  Eigen::MatrixXd adjacency_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Regular rows x cols grid over `bounds` with rook adjacency. Unit ids are
// "r{row}c{col}", row-major from the bottom-left corner.
inline ArealSupport build_grid_support(int rows, int cols, const Rect& bounds) {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("build_grid_support: rows and cols must be >= 1");
  if (!(bounds.xmax > bounds.xmin) || !(bounds.ymax > bounds.ymin))
    throw std::invalid_argument("build_grid_support: degenerate bounds");

  const double dx = (bounds.xmax - bounds.xmin) / cols;
  const double dy = (bounds.ymax - bounds.ymin) / rows;
  const Eigen::Index n = static_cast<Eigen::Index>(rows) * cols;

  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(n));
  Eigen::VectorXd areas = Eigen::VectorXd::Constant(n, dx * dy);
  Eigen::MatrixX2d centroids(n, 2);
  Eigen::MatrixXd adjacency = Eigen::MatrixXd::Zero(n, n);

  auto cell = [cols](int i, int j) {
    return static_cast<Eigen::Index>(i) * cols + j;
  };
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const Eigen::Index k = cell(i, j);
      ids.push_back("r" + std::to_string(i) + "c" + std::to_string(j));
      centroids(k, 0) = bounds.xmin + (j + 0.5) * dx;
      centroids(k, 1) = bounds.ymin + (i + 0.5) * dy;
      if (i + 1 < rows) adjacency(k, cell(i + 1, j)) = adjacency(cell(i + 1, j), k) = 1.0;
      if (j + 1 < cols) adjacency(k, cell(i, j + 1)) = adjacency(cell(i, j + 1), k) = 1.0;
    }
  }
  return ArealSupport(std::move(ids), std::move(areas), std::move(centroids),
                      std::move(adjacency));
}

struct OverlapRow {
  std::string fine_id;
  std::string coarse_id;
  double overlap_area = 0.0;
};

using OverlapTable = std::vector<OverlapRow>;

// Area-weighted aggregation operator: row i holds the weights of the fine
// units inside coarse unit i, each row summing to 1. Columns have at most one
// nonzero (coarse units are disjoint), so P*P' is diagonal.
class PartitionMatrix {
 public:
  PartitionMatrix() = default;

  PartitionMatrix(Eigen::SparseMatrix<double> weights,
                  std::vector<std::string> coarse_ids,
                  std::vector<std::string> fine_ids)
      : weights_(std::move(weights)),
        coarse_ids_(std::move(coarse_ids)),
        fine_ids_(std::move(fine_ids)) {
    validate();
  }

  bool empty() const { return weights_.rows() == 0; }
  Eigen::Index rows() const { return weights_.rows(); }
  Eigen::Index cols() const { return weights_.cols(); }
  const Eigen::SparseMatrix<double>& matrix() const { return weights_; }
  const std::vector<std::string>& coarse_ids() const { return coarse_ids_; }
  const std::vector<std::string>& fine_ids() const { return fine_ids_; }

  // Eq.-style aggregation y_coarse = P * y_fine.
  Eigen::VectorXd aggregate(const Eigen::VectorXd& fine_values) const {
    if (fine_values.size() != weights_.cols())
      throw std::invalid_argument("PartitionMatrix::aggregate: size mismatch");
    return weights_ * fine_values;
  }

 private:
  void validate() const {
    if (weights_.rows() != static_cast<Eigen::Index>(coarse_ids_.size()) ||
        weights_.cols() != static_cast<Eigen::Index>(fine_ids_.size()))
      throw std::invalid_argument("PartitionMatrix: id/matrix size mismatch");
    Eigen::VectorXd row_sums = Eigen::VectorXd::Zero(weights_.rows());
    Eigen::VectorXi col_nonzeros = Eigen::VectorXi::Zero(weights_.cols());
    for (int k = 0; k < weights_.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(weights_, k); it; ++it) {
        if (it.value() < 0.0)
          throw std::invalid_argument("PartitionMatrix: negative weight");
        if (it.value() > 0.0) col_nonzeros[it.col()] += 1;
        row_sums[it.row()] += it.value();
      }
    }
    for (Eigen::Index i = 0; i < weights_.rows(); ++i) {
      if (std::abs(row_sums[i] - 1.0) > tol::kRowSum)
        throw std::invalid_argument("PartitionMatrix: row " + coarse_ids_[i] +
                                    " does not sum to 1");
    }
    for (Eigen::Index j = 0; j < weights_.cols(); ++j) {
      if (col_nonzeros[j] > 1)
        throw DisjointnessError("PartitionMatrix: fine unit " + fine_ids_[j] +
                                " belongs to more than one coarse unit");
    }
  }

  Eigen::SparseMatrix<double> weights_;
  std::vector<std::string> coarse_ids_;
  std::vector<std::string> fine_ids_;
};

// Build P from an overlap table: entry (i,l) = overlap(l,i) / sum of coarse
// unit i's overlaps. Unless `allow_partial_coverage`, the overlap total of
// each coarse unit must match its stored area within 1e-9 relative; setting
// the flag re-normalizes rows over the observed overlap only (coarse units
// that extend beyond the modeled region).
inline PartitionMatrix build_partition_matrix(const ArealSupport& coarse,
                                              const ArealSupport& fine,
                                              const OverlapTable& overlaps,
                                              bool allow_partial_coverage = false) {
  const Eigen::Index nc = coarse.n();
  const Eigen::Index nf = fine.n();
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(overlaps.size());
  Eigen::VectorXd coarse_total = Eigen::VectorXd::Zero(nc);
  std::vector<int> fine_seen(static_cast<std::size_t>(nf), -1);

  for (const OverlapRow& row : overlaps) {
    const Eigen::Index l = fine.index_of(row.fine_id);
    const Eigen::Index i = coarse.index_of(row.coarse_id);
    if (!(row.overlap_area > 0.0))
      throw InconsistentOverlapError("overlap table: non-positive area for (" +
                                     row.fine_id + ", " + row.coarse_id + ")");
    if (fine_seen[static_cast<std::size_t>(l)] >= 0)
      throw InconsistentOverlapError("overlap table: fine unit " + row.fine_id +
                                     " listed under more than one coarse unit");
    fine_seen[static_cast<std::size_t>(l)] = static_cast<int>(i);
    coarse_total[i] += row.overlap_area;
    entries.emplace_back(static_cast<int>(i), static_cast<int>(l), row.overlap_area);
  }

  for (Eigen::Index i = 0; i < nc; ++i) {
    if (coarse_total[i] <= 0.0)
      throw InconsistentOverlapError("overlap table: coarse unit " +
                                     coarse.ids()[static_cast<std::size_t>(i)] +
                                     " has no overlap rows");
    if (!allow_partial_coverage) {
      const double rel = std::abs(coarse_total[i] - coarse.areas()[i]) /
                         coarse.areas()[i];
      if (rel > tol::kRowSum)
        throw InconsistentOverlapError(
            "overlap table: overlaps of coarse unit " +
            coarse.ids()[static_cast<std::size_t>(i)] +
            " do not add up to its area");
    }
  }

  for (auto& t : entries)
    t = Eigen::Triplet<double>(t.row(), t.col(), t.value() / coarse_total[t.row()]);

  Eigen::SparseMatrix<double> w(nc, nf);
  w.setFromTriplets(entries.begin(), entries.end());
  w.makeCompressed();
  return PartitionMatrix(std::move(w), coarse.ids(), fine.ids());
}

// Block-diagonal [[P1, 0], [0, P2]] of dimension (n1+n2) x 2*n3. Both inputs
// must target the same fine support.
inline PartitionMatrix assemble_block_partition(const PartitionMatrix& p1,
                                                const PartitionMatrix& p2) {
  if (p1.fine_ids() != p2.fine_ids())
    throw std::invalid_argument("assemble_block_partition: mismatched fine supports");
  const Eigen::Index n1 = p1.rows(), n2 = p2.rows(), n3 = p1.cols();

  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(p1.matrix().nonZeros() +
                                           p2.matrix().nonZeros()));
  for (int k = 0; k < p1.matrix().outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p1.matrix(), k); it; ++it)
      entries.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                           it.value());
  for (int k = 0; k < p2.matrix().outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p2.matrix(), k); it; ++it)
      entries.emplace_back(static_cast<int>(n1 + it.row()),
                           static_cast<int>(n3 + it.col()), it.value());

  Eigen::SparseMatrix<double> w(n1 + n2, 2 * n3);
  w.setFromTriplets(entries.begin(), entries.end());
  w.makeCompressed();

  std::vector<std::string> coarse_ids;
  coarse_ids.reserve(static_cast<std::size_t>(n1 + n2));
  for (const auto& id : p1.coarse_ids()) coarse_ids.push_back("y1:" + id);
  for (const auto& id : p2.coarse_ids()) coarse_ids.push_back("y2:" + id);
  std::vector<std::string> fine_ids;
  fine_ids.reserve(static_cast<std::size_t>(2 * n3));
  for (const auto& id : p1.fine_ids()) fine_ids.push_back("y1:" + id);
  for (const auto& id : p2.fine_ids()) fine_ids.push_back("y2:" + id);
  return PartitionMatrix(std::move(w), std::move(coarse_ids), std::move(fine_ids));
}

// Diagonal of P*P'. Verifies the off-diagonal mass is below 1e-12; the data
// models rely on P*P' being diagonal.
inline Eigen::VectorXd diag_ppt(const PartitionMatrix& p) {
  const Eigen::SparseMatrix<double>& w = p.matrix();
  Eigen::SparseMatrix<double> ppt = (w * Eigen::SparseMatrix<double>(w.transpose())).pruned(0.0);
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(w.rows());
  for (int k = 0; k < ppt.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(ppt, k); it; ++it) {
      if (it.row() == it.col()) {
        diag[it.row()] = it.value();
      } else if (std::abs(it.value()) >= tol::kOffDiagonal) {
        throw DisjointnessError("diag_ppt: P*P' is not diagonal (units " +
                                p.coarse_ids()[static_cast<std::size_t>(it.row())] +
                                ", " +
                                p.coarse_ids()[static_cast<std::size_t>(it.col())] +
                                ")");
      }
    }
  }
  return diag;
}

}  // namespace mscos
