#pragma once

// Shared small geometries for tests: the nine-unit partition example
// (coarse supports B1..B4 and C1..C2 over partition units A1..A9) and
// misaligned grid toys.

#include <memory>
#include <string>
#include <vector>

#include "mscos/areal.hpp"
#include "mscos/basis.hpp"
#include "mscos/model.hpp"

namespace fixtures {

struct NineUnit {
  mscos::ArealSupport fine;    // A1..A9
  mscos::ArealSupport b;       // B1..B4: {A1}, {A2,A3}, {A4,A7}, {A5,A6}
  mscos::ArealSupport c;       // C1..C2: {A3,A4,A5,A8}, {A9}
  mscos::OverlapTable table_b;
  mscos::OverlapTable table_c;
};

inline NineUnit nine_unit() {
  using namespace mscos;
  const std::vector<double> area = {1.0, 0.5, 0.7, 0.6, 0.4, 0.8, 0.3, 0.9, 1.1};
  std::vector<std::string> ids;
  Eigen::VectorXd areas(9);
  Eigen::MatrixX2d centroids(9, 2);
  for (int i = 0; i < 9; ++i) {
    ids.push_back("A" + std::to_string(i + 1));
    areas[i] = area[static_cast<std::size_t>(i)];
    centroids(i, 0) = static_cast<double>(i % 3);
    centroids(i, 1) = static_cast<double>(i / 3);
  }
  NineUnit out;
  out.fine = ArealSupport(ids, areas, centroids, Eigen::MatrixXd::Zero(9, 9));

  const std::vector<std::vector<int>> b_members = {{1}, {2, 3}, {4, 7}, {5, 6}};
  const std::vector<std::vector<int>> c_members = {{3, 4, 5, 8}, {9}};
  auto build_coarse = [&](const std::vector<std::vector<int>>& members,
                          const std::string& prefix, OverlapTable& table) {
    const auto n = static_cast<Eigen::Index>(members.size());
    std::vector<std::string> cids;
    Eigen::VectorXd careas = Eigen::VectorXd::Zero(n);
    Eigen::MatrixX2d ccent = Eigen::MatrixX2d::Zero(n, 2);
    for (Eigen::Index k = 0; k < n; ++k) {
      cids.push_back(prefix + std::to_string(k + 1));
      for (int a : members[static_cast<std::size_t>(k)]) {
        careas[k] += area[static_cast<std::size_t>(a - 1)];
        table.push_back({"A" + std::to_string(a), cids.back(),
                         area[static_cast<std::size_t>(a - 1)]});
      }
      ccent.row(k) = centroids.row(members[static_cast<std::size_t>(k)][0] - 1);
    }
    return ArealSupport(cids, careas, ccent, Eigen::MatrixXd::Zero(n, n));
  };
  out.b = build_coarse(b_members, "B", out.table_b);
  out.c = build_coarse(c_members, "C", out.table_c);
  return out;
}

// D_A a rows x cols grid over the unit square; one coarse support built from
// groups of whole grid cells. `groups[k]` lists the flat cell indices of
// coarse unit k.
inline mscos::OverlapTable grid_overlap(const mscos::ArealSupport& fine,
                                        const std::vector<std::vector<int>>& groups,
                                        const std::vector<std::string>& coarse_ids) {
  mscos::OverlapTable table;
  for (std::size_t k = 0; k < groups.size(); ++k)
    for (int cell : groups[k])
      table.push_back({fine.ids()[static_cast<std::size_t>(cell)], coarse_ids[k],
                       fine.areas()[cell]});
  return table;
}

inline mscos::ArealSupport group_support(const mscos::ArealSupport& fine,
                                         const std::vector<std::vector<int>>& groups,
                                         const std::vector<std::string>& ids) {
  const auto n = static_cast<Eigen::Index>(groups.size());
  Eigen::VectorXd areas = Eigen::VectorXd::Zero(n);
  Eigen::MatrixX2d cent = Eigen::MatrixX2d::Zero(n, 2);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (int cell : groups[static_cast<std::size_t>(k)]) {
      areas[k] += fine.areas()[cell];
      cent.row(k) += fine.areas()[cell] * fine.centroids().row(cell);
    }
    cent.row(k) /= areas[k];
  }
  return mscos::ArealSupport(ids, areas, cent, Eigen::MatrixXd::Zero(n, n));
}

// Misaligned toy: D_A = 4x4 grid; D_1 = the four quadrants; D_2 = four
// horizontal strips. n1 = n2 = 4, n3 = 16.
struct Toy {
  mscos::ArealSupport da;
  mscos::ArealSupport d1;
  mscos::ArealSupport d2;
  mscos::PartitionMatrix p1;
  mscos::PartitionMatrix p2;
};

inline Toy misaligned_toy() {
  using namespace mscos;
  Toy out;
  out.da = build_grid_support(4, 4, Rect{});
  auto cell = [](int row, int col) { return row * 4 + col; };
  std::vector<std::vector<int>> quadrants(4);
  for (int row = 0; row < 4; ++row)
    for (int col = 0; col < 4; ++col)
      quadrants[static_cast<std::size_t>((row / 2) * 2 + col / 2)].push_back(cell(row, col));
  std::vector<std::vector<int>> strips(4);
  for (int row = 0; row < 4; ++row)
    for (int col = 0; col < 4; ++col)
      strips[static_cast<std::size_t>(row)].push_back(cell(row, col));
  const std::vector<std::string> qids = {"Q1", "Q2", "Q3", "Q4"};
  const std::vector<std::string> sids = {"S1", "S2", "S3", "S4"};
  out.d1 = group_support(out.da, quadrants, qids);
  out.d2 = group_support(out.da, strips, sids);
  out.p1 = build_partition_matrix(out.d1, out.da, grid_overlap(out.da, quadrants, qids));
  out.p2 = build_partition_matrix(out.d2, out.da, grid_overlap(out.da, strips, sids));
  return out;
}

// Both observed supports are the 2x2 quadrants of a 4x4 partition grid.
inline Toy quadrant_toy() {
  using namespace mscos;
  Toy out;
  out.da = build_grid_support(4, 4, Rect{});
  auto cell = [](int row, int col) { return row * 4 + col; };
  std::vector<std::vector<int>> quadrants(4);
  for (int row = 0; row < 4; ++row)
    for (int col = 0; col < 4; ++col)
      quadrants[static_cast<std::size_t>((row / 2) * 2 + col / 2)].push_back(cell(row, col));
  const std::vector<std::string> qids = {"Q1", "Q2", "Q3", "Q4"};
  out.d1 = group_support(out.da, quadrants, qids);
  out.d2 = out.d1;
  out.p1 = build_partition_matrix(out.d1, out.da, grid_overlap(out.da, quadrants, qids));
  out.p2 = out.p1;
  return out;
}

inline mscos::ModelSpec toy_spec(const Toy& toy, mscos::ModelKind kind, int r = 2,
                                 mscos::Arity arity = mscos::Arity::Bivariate,
                                 mscos::Hyperparams hyper = {}) {
  using namespace mscos;
  if (kind == ModelKind::MCAR) {
    auto car = std::make_shared<CarStructure>(toy.da);
    return make_model_spec(kind, arity, hyper, toy.p1, toy.p2, nullptr, car);
  }
  auto basis = std::make_shared<BasisSet>(build_basis(toy.da, r, 7));
  return make_model_spec(kind, arity, hyper, toy.p1, toy.p2, basis, nullptr);
}

}  // namespace fixtures
