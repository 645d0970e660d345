#include <catch2/catch_amalgamated.hpp>

#include "mscos/simulate.hpp"

using namespace mscos;

namespace {

// Brute-force rectangle intersection area between a D1 cell and a partition
// cell, from the grid geometry alone.
double rect_overlap(double ax0, double ay0, double ax1, double ay1, double bx0,
                    double by0, double bx1, double by1) {
  const double w = std::min(ax1, bx1) - std::max(ax0, bx0);
  const double h = std::min(ay1, by1) - std::max(ay0, by0);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

}  // namespace

TEST_CASE("simulation supports reproduce the design dimensions") {
  const SimSupports sims = build_sim_supports();
  REQUIRE(sims.d1.n() == 100);
  REQUIRE(sims.d2.n() == 225);
  REQUIRE(sims.da.n() == 400);
  REQUIRE(sims.p.rows() == 325);
  REQUIRE(sims.p.cols() == 800);

  SECTION("partition invariants") {
    for (const PartitionMatrix* p : {&sims.p1, &sims.p2, &sims.p}) {
      const Eigen::SparseMatrix<double>& w = p->matrix();
      Eigen::VectorXd row_sums = Eigen::VectorXd::Zero(w.rows());
      Eigen::VectorXi col_nonzeros = Eigen::VectorXi::Zero(w.cols());
      for (int k = 0; k < w.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(w, k); it; ++it) {
          row_sums[it.row()] += it.value();
          col_nonzeros[it.col()] += 1;
        }
      REQUIRE((row_sums.array() - 1.0).abs().maxCoeff() < 1e-9);
      REQUIRE(col_nonzeros.maxCoeff() <= 1);
      REQUIRE(col_nonzeros.minCoeff() == 1);  // the grids tile the square
    }
  }

  SECTION("each first-support row has four quarter weights, by rectangle oracle") {
    const Eigen::MatrixXd p1(sims.p1.matrix());
    for (int row = 0; row < 10; ++row) {
      for (int col = 0; col < 10; ++col) {
        const Eigen::Index i = sims.d1.index_of(
            "r" + std::to_string(row) + "c" + std::to_string(col));
        int nonzeros = 0;
        for (Eigen::Index l = 0; l < 400; ++l) {
          // geometric overlap of the D1 cell and the partition cell
          const int arow = static_cast<int>(l) / 20, acol = static_cast<int>(l) % 20;
          const double overlap = rect_overlap(
              col * 0.1, row * 0.1, (col + 1) * 0.1, (row + 1) * 0.1,
              acol * 0.05, arow * 0.05, (acol + 1) * 0.05, (arow + 1) * 0.05);
          const Eigen::Index lcol =
              sims.da.index_of("r" + std::to_string(arow) + "c" + std::to_string(acol));
          if (overlap > 1e-15) {
            ++nonzeros;
            REQUIRE(p1(i, lcol) == Catch::Approx(overlap / 0.01).epsilon(1e-9));
          } else {
            REQUIRE(p1(i, lcol) == 0.0);
          }
        }
        REQUIRE(nonzeros == 4);
      }
    }
  }

  SECTION("motif pieces are rook-connected unions of partition cells") {
    // Every D2 unit's area is a whole number of partition cells; the block
    // motif covers each 0.2 block exactly.
    const double cell = 0.05 * 0.05;
    double total = 0.0;
    for (Eigen::Index u = 0; u < sims.d2.n(); ++u) {
      const double cells = sims.d2.areas()[u] / cell;
      REQUIRE(cells == Catch::Approx(std::round(cells)).margin(1e-9));
      total += sims.d2.areas()[u];
    }
    REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
    // piece sizes within one block: 4 cells for the center, 2 for the edge
    // dominoes, 1 for the corners
    const std::vector<double> expected = {4, 2, 2, 2, 2, 1, 1, 1, 1};
    for (int piece = 1; piece <= 9; ++piece) {
      const Eigen::Index u = sims.d2.index_of("m2_3_p" + std::to_string(piece));
      REQUIRE(sims.d2.areas()[u] / cell ==
              Catch::Approx(expected[static_cast<std::size_t>(piece - 1)]).margin(1e-9));
    }
  }
}

TEST_CASE("dataset generation") {
  const SimSupports sims = build_sim_supports();
  const BasisSet basis = build_basis(sims.da, 50, 1);
  const CarStructure car(sims.da);

  SECTION("aggregation identity holds exactly") {
    for (ModelKind kind : {ModelKind::SRE, ModelKind::MCAR, ModelKind::OH}) {
      const SimulatedDataset sim = generate_dataset(
          kind, TruthParams::defaults_for(kind), sims, &basis, &car, 42);
      const Eigen::VectorXd y1 = sims.p1.aggregate(sim.ya1);
      const Eigen::VectorXd y2 = sims.p2.aggregate(sim.ya2);
      REQUIRE((sim.data.y1 - y1).cwiseAbs().maxCoeff() == 0.0);
      REQUIRE((sim.data.y2 - y2).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SECTION("deterministic given seed") {
    const SimulatedDataset a = generate_dataset(
        ModelKind::SRE, TruthParams::defaults_for(ModelKind::SRE), sims, &basis,
        &car, 7);
    const SimulatedDataset b = generate_dataset(
        ModelKind::SRE, TruthParams::defaults_for(ModelKind::SRE), sims, &basis,
        &car, 7);
    REQUIRE((a.data.y1.array() == b.data.y1.array()).all());
    REQUIRE((a.ya2.array() == b.ya2.array()).all());
  }

  SECTION("signal-to-noise ratio tracks the requested value") {
    // The generator pins var(mu)/sigma2 = snr exactly, so the reconstructed
    // ratio var(Y_A)/sigma2 - 1 stays near snr up to noise-sampling error.
    double mean_error_sum = 0.0;
    double se = 0.0;
    TruthParams truth = TruthParams::defaults_for(ModelKind::SRE);
    truth.snr = 5.0;
    for (int rep = 0; rep < 20; ++rep) {
      const SimulatedDataset sim =
          generate_dataset(ModelKind::SRE, truth, sims, &basis, &car, 100 + rep);
      const double var_ya1 = (sim.ya1.array() - sim.ya1.mean()).square().sum() / 399.0;
      const double snr = var_ya1 / sim.sigma2_1 - 1.0;
      REQUIRE(snr > 4.0);
      REQUIRE(snr < 6.0);
      // The basis columns are intercept-orthogonal, so mean(Y1) = 2 + noise
      // with standard error sqrt(sigma2 / n3).
      se = std::sqrt(sim.sigma2_1 / 400.0);
      REQUIRE(std::abs(sim.data.y1.mean() - 2.0) < 4.5 * se);
      mean_error_sum += sim.data.y1.mean() - 2.0;
    }
    REQUIRE(std::abs(mean_error_sum / 20.0) < 3.0 * se / std::sqrt(20.0));
  }

  SECTION("default truth calibration uses the amplitude reading") {
    const SimulatedDataset sim = generate_dataset(
        ModelKind::SRE, TruthParams::defaults_for(ModelKind::SRE), sims, &basis,
        &car, 5);
    const double var_ya1 = (sim.ya1.array() - sim.ya1.mean()).square().sum() / 399.0;
    const double ratio = var_ya1 / sim.sigma2_1 - 1.0;
    REQUIRE(ratio > 20.0);
    REQUIRE(ratio < 30.0);
  }
}

TEST_CASE("scenario plan and a one-cell run") {
  const SimSupports sims = build_sim_supports();

  SECTION("full study grid has 180 runs") {
    ScenarioConfig config;
    config.n_datasets = 20;
    REQUIRE(scenario_plan(config).size() == 180);
  }

  SECTION("single truth, dataset, and fit") {
    ScenarioConfig config;
    config.truths = {ModelKind::SRE};
    config.fits = {ModelKind::SRE};
    config.n_datasets = 1;
    config.r = 10;
    config.seed = 5;
    config.mcmc.n_iter = 120;
    config.mcmc.burn_in = 20;
    const ScenarioResult result = run_scenario(config, sims);
    REQUIRE(result.runs.size() == 1);
    REQUIRE(result.runs[0].ok);
    REQUIRE(result.runs[0].rmse_y1_partition > 0.0);
    REQUIRE(result.table.size() == 4);  // one cell x {variable, scale}
    for (const ScenarioCell& cell : result.table) REQUIRE(cell.completed == 1);
  }
}
