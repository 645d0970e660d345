#include <catch2/catch_amalgamated.hpp>

#include "mscos/areal.hpp"
#include "fixtures.hpp"

using namespace mscos;

TEST_CASE("grid support basics") {
  const ArealSupport grid = build_grid_support(10, 10, Rect{});
  REQUIRE(grid.n() == 100);
  for (Eigen::Index i = 0; i < grid.n(); ++i)
    REQUIRE(grid.areas()[i] == Catch::Approx(0.01).margin(1e-15));

  const ArealSupport single = build_grid_support(1, 1, Rect{});
  REQUIRE(single.n() == 1);
  REQUIRE(single.adjacency().cwiseAbs().sum() == 0.0);

  REQUIRE_THROWS_AS(build_grid_support(0, 3, Rect{}), std::invalid_argument);
  REQUIRE_THROWS_AS(build_grid_support(2, 2, Rect{0.0, 0.0, 0.0, 1.0}),
                    std::invalid_argument);
}

TEST_CASE("grid adjacency matches brute-force edge sharing") {
  const ArealSupport grid = build_grid_support(20, 20, Rect{});
  REQUIRE(grid.n() == 400);
  // Independent oracle: cells share an edge iff their centroids differ by one
  // cell pitch along exactly one axis.
  const double pitch = 1.0 / 20.0;
  int interior_with_4 = 0;
  for (Eigen::Index i = 0; i < grid.n(); ++i) {
    int neighbors = 0;
    for (Eigen::Index j = 0; j < grid.n(); ++j) {
      if (i == j) continue;
      const double dx = std::abs(grid.centroids()(i, 0) - grid.centroids()(j, 0));
      const double dy = std::abs(grid.centroids()(i, 1) - grid.centroids()(j, 1));
      const bool share_edge = (std::abs(dx - pitch) < 1e-12 && dy < 1e-12) ||
                              (std::abs(dy - pitch) < 1e-12 && dx < 1e-12);
      REQUIRE(grid.adjacency()(i, j) == (share_edge ? 1.0 : 0.0));
      if (share_edge) ++neighbors;
    }
    if (neighbors == 4) ++interior_with_4;
  }
  REQUIRE(interior_with_4 == 18 * 18);
}

TEST_CASE("nine-unit partition matrices") {
  const auto fig = fixtures::nine_unit();
  const PartitionMatrix p1 = build_partition_matrix(fig.b, fig.fine, fig.table_b);
  const PartitionMatrix p2 = build_partition_matrix(fig.c, fig.fine, fig.table_c);

  // B1 contains exactly A1, so its row is the first unit vector.
  const Eigen::VectorXd row_b1 = Eigen::MatrixXd(p1.matrix()).row(0);
  REQUIRE(row_b1[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(row_b1.tail(8).cwiseAbs().maxCoeff() < 1e-15);

  // C1 averages A3, A4, A5, A8 with area weights.
  const Eigen::VectorXd row_c1 = Eigen::MatrixXd(p2.matrix()).row(0);
  const double total = 0.7 + 0.6 + 0.4 + 0.9;
  REQUIRE(row_c1[2] == Catch::Approx(0.7 / total));
  REQUIRE(row_c1[3] == Catch::Approx(0.6 / total));
  REQUIRE(row_c1[4] == Catch::Approx(0.4 / total));
  REQUIRE(row_c1[7] == Catch::Approx(0.9 / total));
  REQUIRE(row_c1[0] == 0.0);

  SECTION("row sums and disjoint columns") {
    for (const auto* p : {&p1, &p2}) {
      const Eigen::MatrixXd dense(p->matrix());
      for (Eigen::Index i = 0; i < dense.rows(); ++i)
        REQUIRE(std::abs(dense.row(i).sum() - 1.0) < 1e-9);
      for (Eigen::Index j = 0; j < dense.cols(); ++j) {
        int nonzeros = 0;
        for (Eigen::Index i = 0; i < dense.rows(); ++i)
          if (dense(i, j) != 0.0) ++nonzeros;
        REQUIRE(nonzeros <= 1);
      }
    }
  }

  SECTION("aggregation equals area-weighted means, brute force") {
    Eigen::VectorXd y(9);
    for (int i = 0; i < 9; ++i) y[i] = std::sin(1.0 + i);
    const Eigen::VectorXd agg = p2.aggregate(y);
    double expected = (0.7 * y[2] + 0.6 * y[3] + 0.4 * y[4] + 0.9 * y[7]) / total;
    REQUIRE(agg[0] == Catch::Approx(expected).epsilon(1e-12));
    REQUIRE(agg[1] == Catch::Approx(y[8]).epsilon(1e-12));
  }

  SECTION("P P' is diagonal with entries in (0, 1]") {
    for (const auto* p : {&p1, &p2}) {
      const Eigen::MatrixXd dense(p->matrix());
      const Eigen::MatrixXd ppt = dense * dense.transpose();
      for (Eigen::Index i = 0; i < ppt.rows(); ++i)
        for (Eigen::Index j = 0; j < ppt.cols(); ++j)
          if (i != j) REQUIRE(std::abs(ppt(i, j)) < 1e-12);
      const Eigen::VectorXd diag = diag_ppt(*p);
      REQUIRE((diag.array() > 0.0).all());
      REQUIRE((diag.array() <= 1.0 + 1e-12).all());
      REQUIRE(diag.isApprox(ppt.diagonal(), 1e-12));
    }
  }
}

TEST_CASE("partition matrix error paths") {
  const auto fig = fixtures::nine_unit();

  SECTION("unknown ids") {
    OverlapTable bad = fig.table_b;
    bad.push_back({"A999", "B1", 0.1});
    REQUIRE_THROWS_AS(build_partition_matrix(fig.b, fig.fine, bad),
                      std::invalid_argument);
  }

  SECTION("fine unit under two coarse units") {
    OverlapTable bad = fig.table_b;
    bad.push_back({"A1", "B2", 0.2});
    REQUIRE_THROWS_AS(build_partition_matrix(fig.b, fig.fine, bad),
                      InconsistentOverlapError);
  }

  SECTION("overlap sum mismatch names the coarse unit") {
    OverlapTable bad = fig.table_c;
    bad[0].overlap_area *= 1.5;
    try {
      build_partition_matrix(fig.c, fig.fine, bad);
      FAIL("expected InconsistentOverlapError");
    } catch (const InconsistentOverlapError& e) {
      REQUIRE(std::string(e.what()).find("C1") != std::string::npos);
    }
    // The partial-coverage mode re-normalizes instead.
    const PartitionMatrix p = build_partition_matrix(fig.c, fig.fine, bad, true);
    REQUIRE(Eigen::MatrixXd(p.matrix()).row(0).sum() == Catch::Approx(1.0));
  }

  SECTION("non-positive overlap area") {
    OverlapTable bad = fig.table_b;
    bad[0].overlap_area = 0.0;
    REQUIRE_THROWS_AS(build_partition_matrix(fig.b, fig.fine, bad),
                      InconsistentOverlapError);
  }
}

TEST_CASE("equal-area aggregation rows") {
  const ArealSupport fine = build_grid_support(2, 2, Rect{});
  std::vector<std::string> one_id = {"whole"};
  const auto groups = std::vector<std::vector<int>>{{0, 1, 2, 3}};
  const ArealSupport coarse = fixtures::group_support(fine, groups, one_id);
  const PartitionMatrix p = build_partition_matrix(
      coarse, fine, fixtures::grid_overlap(fine, groups, one_id));
  const Eigen::MatrixXd dense(p.matrix());
  for (int j = 0; j < 4; ++j) REQUIRE(dense(0, j) == Catch::Approx(0.25));
  REQUIRE(diag_ppt(p)[0] == Catch::Approx(0.25));
}

TEST_CASE("block partition assembly") {
  SECTION("1x1 identities give the 2x2 identity") {
    const ArealSupport cell = build_grid_support(1, 1, Rect{});
    const OverlapTable t = {{"r0c0", "r0c0", 1.0}};
    const PartitionMatrix p = build_partition_matrix(cell, cell, t);
    const PartitionMatrix block = assemble_block_partition(p, p);
    REQUIRE(block.rows() == 2);
    REQUIRE(block.cols() == 2);
    REQUIRE(Eigen::MatrixXd(block.matrix()).isApprox(Eigen::MatrixXd::Identity(2, 2)));
  }

  SECTION("nine-unit example gives a 6x18 block") {
    const auto fig = fixtures::nine_unit();
    const PartitionMatrix p1 = build_partition_matrix(fig.b, fig.fine, fig.table_b);
    const PartitionMatrix p2 = build_partition_matrix(fig.c, fig.fine, fig.table_c);
    const PartitionMatrix block = assemble_block_partition(p1, p2);
    REQUIRE(block.rows() == 6);
    REQUIRE(block.cols() == 18);
    const Eigen::MatrixXd dense(block.matrix());
    // Off-diagonal blocks are zero and every column keeps at most 1 nonzero.
    REQUIRE(dense.block(0, 9, 4, 9).cwiseAbs().sum() == 0.0);
    REQUIRE(dense.block(4, 0, 2, 9).cwiseAbs().sum() == 0.0);
    for (Eigen::Index j = 0; j < 18; ++j) {
      int nonzeros = 0;
      for (Eigen::Index i = 0; i < 6; ++i)
        if (dense(i, j) != 0.0) ++nonzeros;
      REQUIRE(nonzeros <= 1);
    }
  }

  SECTION("mismatched fine supports are rejected") {
    const auto fig = fixtures::nine_unit();
    const PartitionMatrix p1 = build_partition_matrix(fig.b, fig.fine, fig.table_b);
    const auto toy = fixtures::misaligned_toy();
    REQUIRE_THROWS_AS(assemble_block_partition(p1, toy.p2), std::invalid_argument);
  }
}

TEST_CASE("diag_ppt flags overlapping coarse units") {
  // Two "coarse" units sharing a fine unit cannot come from
  // build_partition_matrix, so construct the weights directly.
  std::vector<Eigen::Triplet<double>> trips = {
      {0, 0, 0.5}, {0, 1, 0.5}, {1, 1, 0.5}, {1, 2, 0.5}};
  Eigen::SparseMatrix<double> w(2, 3);
  w.setFromTriplets(trips.begin(), trips.end());
  REQUIRE_THROWS_AS(PartitionMatrix(w, {"u", "v"}, {"a", "b", "c"}),
                    DisjointnessError);
}

TEST_CASE("partition invariants hold for random overlays") {
  // Property check: random grids with distorted cell areas, partitioned
  // into random contiguous runs of cells, always give rows summing to 1,
  // diagonal P P', diag entries in (0, 1], and area-weighted aggregation.
  std::mt19937_64 gen(2024);
  for (int rep = 0; rep < 25; ++rep) {
    const int rows = 2 + static_cast<int>(gen() % 4);
    const int cols = 2 + static_cast<int>(gen() % 4);
    const ArealSupport base = build_grid_support(rows, cols, Rect{});
    const Eigen::Index n = base.n();
    // distort the areas so equal-weight shortcuts cannot hide bugs
    Eigen::VectorXd areas(n);
    for (Eigen::Index i = 0; i < n; ++i)
      areas[i] = 0.1 + static_cast<double>(gen() % 1000) / 250.0;
    const ArealSupport fine(base.ids(), areas, base.centroids(),
                            base.adjacency());

    std::vector<std::vector<int>> groups;
    std::vector<std::string> gids;
    for (Eigen::Index i = 0; i < n;) {
      const Eigen::Index extent = std::min<Eigen::Index>(1 + gen() % 4, n - i);
      std::vector<int> members;
      for (Eigen::Index k = 0; k < extent; ++k) members.push_back(static_cast<int>(i + k));
      groups.push_back(std::move(members));
      gids.push_back("g" + std::to_string(groups.size()));
      i += extent;
    }
    const ArealSupport coarse = fixtures::group_support(fine, groups, gids);
    const PartitionMatrix p = build_partition_matrix(
        coarse, fine, fixtures::grid_overlap(fine, groups, gids));

    const Eigen::MatrixXd dense(p.matrix());
    for (Eigen::Index i = 0; i < dense.rows(); ++i)
      REQUIRE(std::abs(dense.row(i).sum() - 1.0) < 1e-9);
    const Eigen::MatrixXd ppt = dense * dense.transpose();
    REQUIRE((ppt - Eigen::MatrixXd(ppt.diagonal().asDiagonal()))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
    const Eigen::VectorXd diag = diag_ppt(p);
    REQUIRE((diag.array() > 0.0).all());
    REQUIRE((diag.array() <= 1.0 + 1e-12).all());

    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = std::cos(0.7 * static_cast<double>(i));
    const Eigen::VectorXd agg = p.aggregate(y);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      double num = 0.0, den = 0.0;
      for (int cell : groups[g]) {
        num += fine.areas()[cell] * y[cell];
        den += fine.areas()[cell];
      }
      REQUIRE(agg[static_cast<Eigen::Index>(g)] ==
              Catch::Approx(num / den).epsilon(1e-12));
    }
  }
}

TEST_CASE("identity partition has unit diag") {
  const ArealSupport grid = build_grid_support(3, 3, Rect{});
  OverlapTable t;
  for (Eigen::Index i = 0; i < grid.n(); ++i)
    t.push_back({grid.ids()[static_cast<std::size_t>(i)],
                 grid.ids()[static_cast<std::size_t>(i)], grid.areas()[i]});
  const PartitionMatrix p = build_partition_matrix(grid, grid, t);
  REQUIRE(diag_ppt(p).isApprox(Eigen::VectorXd::Ones(9)));
}
