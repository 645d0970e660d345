#include <catch2/catch_amalgamated.hpp>

#include "mscos/model.hpp"
#include "mscos/sampler.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace mscos;

namespace {

Hyperparams proper_hyper() {
  Hyperparams h;
  h.sigma2_beta = 4.0;
  h.a_sigma = h.b_sigma = 2.0;
  h.a_eta = h.b_eta = 2.0;
  h.a_nu = h.b_nu = 2.0;
  h.a_phi = 0.05;
  h.b_phi = 5.0;
  h.a_rho = 0.0;
  h.b_rho = 0.95;
  h.a_tau = -0.9;
  h.b_tau = 0.9;
  return h;
}

}  // namespace

TEST_CASE("pointwise likelihood basics") {
  const auto toy = fixtures::misaligned_toy();
  const ModelSpec spec = fixtures::toy_spec(toy, ModelKind::SRE);

  SECTION("datum at its mean scores the normalizing constant") {
    ChainState s;
    s.process = Eigen::VectorXd::Zero(2);
    s.beta1 = 1.3;
    s.beta2 = -0.4;
    s.sigma2_1 = 0.7;
    s.sigma2_2 = 1.9;
    Dataset data;
    data.y1 = obs_mean1(spec, s);
    data.y2 = obs_mean2(spec, s);
    const Eigen::VectorXd ll = log_likelihood_pointwise(spec, s, data);
    REQUIRE(ll.size() == 8);
    for (Eigen::Index i = 0; i < 4; ++i) {
      const double v = s.sigma2_1 * spec.d1[i];
      REQUIRE(ll[i] == Catch::Approx(-0.5 * std::log(2.0 * M_PI * v)).margin(1e-12));
    }
  }

  SECTION("missing entries are skipped") {
    Rng rng(1);
    ChainState s = draw_state_from_prior(spec, rng);
    Dataset data = draw_observations(spec, s, rng);
    data.y1[2] = std::numeric_limits<double>::quiet_NaN();
    const Eigen::VectorXd ll = log_likelihood_pointwise(spec, s, data);
    REQUIRE(ll.size() == 7);
  }

  SECTION("sum matches a dense independent-normal oracle") {
    Rng rng(2);
    const ChainState s = draw_state_from_prior(spec, rng);
    const Dataset data = draw_observations(spec, s, rng);
    const Eigen::VectorXd mean1 = obs_mean1(spec, s);
    const Eigen::VectorXd mean2 = obs_mean2(spec, s);
    Eigen::VectorXd mean(8), y(8);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(8, 8);
    for (int i = 0; i < 4; ++i) {
      mean[i] = mean1[i];
      y[i] = data.y1[i];
      cov(i, i) = s.sigma2_1 * spec.d1[i];
      mean[4 + i] = mean2[i];
      y[4 + i] = data.y2[i];
      cov(4 + i, 4 + i) = s.sigma2_2 * spec.d2[i];
    }
    REQUIRE(log_likelihood(spec, s, data) ==
            Catch::Approx(oracle::dense_mvn_log_pdf(y, mean, cov)).margin(1e-10));
  }
}

TEST_CASE("ordered model reduces to the shared-mean model") {
  const auto toy = fixtures::misaligned_toy();
  const ModelSpec sre = fixtures::toy_spec(toy, ModelKind::SRE, 2);
  const ModelSpec oh = fixtures::toy_spec(toy, ModelKind::OH, 2);

  Rng rng(3);
  ChainState s = draw_state_from_prior(sre, rng);
  // With beta0 = 0 and beta2 = 1 the OH DM2 mean is beta1 + g'eta, i.e. the
  // SRE DM with G2 = G1 and beta2 = beta1.
  ChainState s_oh = s;
  s_oh.beta0 = 0.0;
  s_oh.beta2 = 1.0;
  ChainState s_sre = s;
  s_sre.beta2 = s.beta1;

  const Dataset data = draw_observations(sre, s_sre, rng);
  const Eigen::VectorXd ll_oh = log_likelihood_pointwise(oh, s_oh, data);
  const Eigen::VectorXd ll_sre = log_likelihood_pointwise(sre, s_sre, data);
  REQUIRE(ll_oh.size() == ll_sre.size());
  for (Eigen::Index k = 0; k < ll_oh.size(); ++k)
    REQUIRE(ll_oh[k] == Catch::Approx(ll_sre[k]).margin(1e-12));
}

TEST_CASE("univariate reduction equals bivariate with the other variable missing") {
  const auto toy = fixtures::misaligned_toy();
  const ModelSpec bi = fixtures::toy_spec(toy, ModelKind::SRE, 2);
  const ModelSpec uni =
      fixtures::toy_spec(toy, ModelKind::SRE, 2, Arity::Univariate1);

  Rng rng(4);
  const ChainState s = draw_state_from_prior(bi, rng);
  Dataset data = draw_observations(bi, s, rng);
  data.y2.setConstant(std::numeric_limits<double>::quiet_NaN());

  Dataset data1;
  data1.y1 = data.y1;
  REQUIRE(log_likelihood(bi, s, data) ==
          Catch::Approx(log_likelihood(uni, s, data1)).margin(1e-12));
}

TEST_CASE("log prior") {
  const auto toy = fixtures::misaligned_toy();
  const Hyperparams h = proper_hyper();
  const ModelSpec spec = fixtures::toy_spec(toy, ModelKind::SRE, 2, Arity::Bivariate, h);

  SECTION("bounded parameters outside their support give -inf") {
    Rng rng(5);
    ChainState s = draw_state_from_prior(spec, rng);
    s.phi = h.b_phi + 0.1;
    REQUIRE(std::isinf(log_prior(spec, s)));
    s.phi = h.a_phi - 0.01;
    REQUIRE(std::isinf(log_prior(spec, s)));
    s.phi = 0.5 * (h.a_phi + h.b_phi);
    s.sigma2_1 = -1.0;
    REQUIRE(std::isinf(log_prior(spec, s)));
  }

  SECTION("zero process with near-identity correlation") {
    Rng rng(6);
    ChainState s = draw_state_from_prior(spec, rng);
    s.process.setZero();
    s.sigma2_eta = 1.0;
    s.phi = 4.9;  // knots far apart at this range: R is near identity
    const double lp = log_prior(spec, s);
    // Subtract every scalar-prior term; the remainder is the process term.
    const double scalar_terms =
        normal_log_pdf(s.beta1, 0.0, h.sigma2_beta) +
        normal_log_pdf(s.beta2, 0.0, h.sigma2_beta) +
        inv_gamma_log_pdf(s.sigma2_1, h.a_sigma, h.b_sigma) +
        inv_gamma_log_pdf(s.sigma2_2, h.a_sigma, h.b_sigma) +
        inv_gamma_log_pdf(s.sigma2_eta, h.a_eta, h.b_eta) -
        std::log(h.b_phi - h.a_phi);
    const double process_term = lp - scalar_terms;
    const double expected =
        -std::log(2.0 * M_PI) -
        0.5 * std::log(
                  exp_covariance(spec.basis1->knots, {1.0, 4.9}).determinant());
    REQUIRE(process_term == Catch::Approx(expected).margin(1e-6));
  }

  SECTION("mcar process prior matches the dense oracle on n3 = 4") {
    const ArealSupport da = build_grid_support(2, 2, Rect{});
    const auto groups = std::vector<std::vector<int>>{{0, 1, 2, 3}};
    const std::vector<std::string> wid = {"whole"};
    const ArealSupport coarse = fixtures::group_support(da, groups, wid);
    const PartitionMatrix p =
        build_partition_matrix(coarse, da, fixtures::grid_overlap(da, groups, wid));
    auto car = std::make_shared<CarStructure>(da);
    const ModelSpec mcar =
        make_model_spec(ModelKind::MCAR, Arity::Bivariate, h, p, p, nullptr, car);

    Rng rng(7);
    const ChainState s = draw_state_from_prior(mcar, rng);
    const double lp = log_prior(mcar, s);
    const double scalar_terms =
        normal_log_pdf(s.beta1, 0.0, h.sigma2_beta) +
        normal_log_pdf(s.beta2, 0.0, h.sigma2_beta) +
        inv_gamma_log_pdf(s.sigma2_1, h.a_sigma, h.b_sigma) +
        inv_gamma_log_pdf(s.sigma2_2, h.a_sigma, h.b_sigma) +
        inv_gamma_log_pdf(s.nu2, h.a_nu, h.b_nu) -
        std::log(h.b_rho - h.a_rho) - std::log(h.b_tau - h.a_tau);
    const Eigen::MatrixXd q =
        Eigen::MatrixXd(Eigen::VectorXd(da.adjacency().rowwise().sum()).asDiagonal()) -
        s.rho * da.adjacency();
    Eigen::Matrix2d sigma;
    sigma << s.nu2, s.nu2 * s.tau, s.nu2 * s.tau, s.nu2;
    const Eigen::MatrixXd cov = oracle::kron(sigma, q.inverse());
    REQUIRE(lp - scalar_terms ==
            Catch::Approx(oracle::dense_mvn_log_pdf(
                              s.process, Eigen::VectorXd::Zero(8), cov))
                .margin(1e-10));
  }

  SECTION("likelihood plus prior is finite on interior states") {
    for (ModelKind kind : {ModelKind::SRE, ModelKind::MCAR, ModelKind::OH}) {
      const ModelSpec m = fixtures::toy_spec(toy, kind, 2, Arity::Bivariate, h);
      Rng rng(8);
      for (int rep = 0; rep < 5; ++rep) {
        const ChainState s = draw_state_from_prior(m, rng);
        const Dataset data = draw_observations(m, s, rng);
        REQUIRE(std::isfinite(log_likelihood(m, s, data)));
        REQUIRE(std::isfinite(log_prior(m, s)));
      }
    }
  }
}

TEST_CASE("model spec validation") {
  const auto toy = fixtures::misaligned_toy();
  auto basis = std::make_shared<BasisSet>(build_basis(toy.da, 2, 7));
  auto car = std::make_shared<CarStructure>(toy.da);

  REQUIRE_THROWS_AS(make_model_spec(ModelKind::OH, Arity::Univariate1,
                                    Hyperparams{}, toy.p1, toy.p2, basis, nullptr),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(make_model_spec(ModelKind::SRE, Arity::Bivariate,
                                    Hyperparams{}, toy.p1, toy.p2, nullptr, nullptr),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(make_model_spec(ModelKind::MCAR, Arity::Bivariate,
                                    Hyperparams{}, toy.p1, toy.p2, nullptr, nullptr),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(build_basis(toy.da, 16, 7), std::invalid_argument);

  Hyperparams bad;
  bad.a_phi = 3.0;
  bad.b_phi = 1.0;
  REQUIRE_THROWS_AS(make_model_spec(ModelKind::SRE, Arity::Bivariate, bad, toy.p1,
                                    toy.p2, basis, nullptr),
                    std::invalid_argument);

  SECTION("dataset shape and observedness") {
    const ModelSpec spec = fixtures::toy_spec(toy, ModelKind::SRE);
    Dataset data;
    data.y1 = Eigen::VectorXd::Zero(4);
    data.y2 = Eigen::VectorXd::Zero(3);
    REQUIRE_THROWS_AS(validate_dataset(spec, data), std::invalid_argument);
    data.y2 = Eigen::VectorXd::Constant(4, std::numeric_limits<double>::quiet_NaN());
    REQUIRE_THROWS_AS(validate_dataset(spec, data), std::invalid_argument);
    data.y2[1] = 0.5;
    REQUIRE_NOTHROW(validate_dataset(spec, data));
  }

  SECTION("distinct second basis is accepted for the shared-effects model") {
    auto basis2 = std::make_shared<BasisSet>(build_basis(toy.da, 2, 99));
    const ModelSpec spec =
        make_model_spec(ModelKind::SRE, Arity::Bivariate, Hyperparams{}, toy.p1,
                        toy.p2, basis, nullptr, basis2);
    REQUIRE(spec.basis2 == basis2);
    REQUIRE_THROWS_AS(make_model_spec(ModelKind::OH, Arity::Bivariate,
                                      Hyperparams{}, toy.p1, toy.p2, basis,
                                      nullptr, basis2),
                      std::invalid_argument);
  }
}
