#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "mscos/areal.hpp"
#include "mscos/basis.hpp"
#include "mscos/common.hpp"

namespace mscos {

enum class ModelKind { SRE, MCAR, OH };
enum class Arity { Bivariate, Univariate1, Univariate2 };

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::SRE: return "ms-sre";
    case ModelKind::MCAR: return "ms-mcar";
    case ModelKind::OH: return "ms-oh";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "ms-sre") return ModelKind::SRE;
  if (s == "ms-mcar") return ModelKind::MCAR;
  if (s == "ms-oh") return ModelKind::OH;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

inline std::string to_string(Arity arity) {
  switch (arity) {
    case Arity::Bivariate: return "bivariate";
    case Arity::Univariate1: return "univariate1";
    case Arity::Univariate2: return "univariate2";
  }
  return "?";
}

inline Arity arity_from_string(const std::string& s) {
  if (s == "bivariate") return Arity::Bivariate;
  if (s == "univariate1") return Arity::Univariate1;
  if (s == "univariate2") return Arity::Univariate2;
  throw std::invalid_argument("unknown arity '" + s + "'");
}

// Hyperparameters of all three hierarchies; defaults give the flat
// noninformative specification.
struct Hyperparams {
  double sigma2_beta = 1e6;
  double a_eta = 1.0, b_eta = 1.0;
  double a_sigma = 1.0, b_sigma = 1.0;
  double a_nu = 1.0, b_nu = 1.0;
  double a_phi = 0.0, b_phi = 10.0;
  double a_rho = 0.0, b_rho = 1.0;
  double a_tau = -1.0, b_tau = 1.0;

  void validate() const {
    if (!(sigma2_beta > 0.0)) throw std::invalid_argument("hyper: sigma2_beta <= 0");
    if (!(a_eta > 0.0 && b_eta > 0.0)) throw std::invalid_argument("hyper: eta IG params");
    if (!(a_sigma > 0.0 && b_sigma > 0.0)) throw std::invalid_argument("hyper: sigma IG params");
    if (!(a_nu > 0.0 && b_nu > 0.0)) throw std::invalid_argument("hyper: nu IG params");
    if (!(a_phi < b_phi) || a_phi < 0.0) throw std::invalid_argument("hyper: phi bounds");
    if (!(a_rho < b_rho) || a_rho < 0.0 || b_rho > 1.0)
      throw std::invalid_argument("hyper: rho bounds");
    if (!(a_tau < b_tau) || a_tau < -1.0 || b_tau > 1.0)
      throw std::invalid_argument("hyper: tau bounds");
  }
};

// Which hierarchy to fit, over which geometry. Immutable once built;
// `basis2` defaults to `basis1` (single shared Moran basis) but distinct
// bases can be supplied.
struct ModelSpec {
  ModelKind kind = ModelKind::SRE;
  Arity arity = Arity::Bivariate;
  Hyperparams hyper;

  PartitionMatrix p1;  // D_A -> D_1 (unused under Univariate2)
  PartitionMatrix p2;  // D_A -> D_2 (unused under Univariate1)
  Eigen::VectorXd d1;  // diag(P1 P1')
  Eigen::VectorXd d2;  // diag(P2 P2')

  std::shared_ptr<const BasisSet> basis1;  // SRE/OH
  std::shared_ptr<const BasisSet> basis2;  // SRE only; == basis1 by default
  std::shared_ptr<const CarStructure> car;  // MCAR

  Eigen::Index n3 = 0;

  // Cached observation-scale bases: row i of P*G is g(B_i)'.
  Eigen::MatrixXd pg1;  // n1 x r
  Eigen::MatrixXd pg2;  // n2 x r (P2*G2 for SRE, P2*G1 for OH)

  bool uses_var1() const { return arity != Arity::Univariate2; }
  bool uses_var2() const { return arity != Arity::Univariate1; }
  bool uses_basis() const { return kind != ModelKind::MCAR; }
  int rank() const { return uses_basis() ? basis1->r : 0; }
  Eigen::Index process_dim() const {
    if (uses_basis()) return basis1->r;
    return arity == Arity::Bivariate ? 2 * n3 : n3;
  }
  Eigen::Index n1() const { return p1.rows(); }
  Eigen::Index n2() const { return p2.rows(); }
};

inline ModelSpec make_model_spec(ModelKind kind, Arity arity,
                                 const Hyperparams& hyper,
                                 PartitionMatrix p1, PartitionMatrix p2,
                                 std::shared_ptr<const BasisSet> basis1,
                                 std::shared_ptr<const CarStructure> car,
                                 std::shared_ptr<const BasisSet> basis2 = nullptr) {
  hyper.validate();
  if (kind == ModelKind::OH && arity != Arity::Bivariate)
    throw std::invalid_argument(
        "model: the univariate ordered model coincides with univariate ms-sre; "
        "use kind ms-sre");
  ModelSpec spec;
  spec.kind = kind;
  spec.arity = arity;
  spec.hyper = hyper;
  spec.p1 = std::move(p1);
  spec.p2 = std::move(p2);

  if (spec.uses_var1()) {
    if (spec.p1.empty()) throw std::invalid_argument("model: P1 required");
    spec.d1 = diag_ppt(spec.p1);
    spec.n3 = spec.p1.cols();
  }
  if (spec.uses_var2()) {
    if (spec.p2.empty()) throw std::invalid_argument("model: P2 required");
    spec.d2 = diag_ppt(spec.p2);
    if (spec.n3 != 0 && spec.p2.cols() != spec.n3)
      throw std::invalid_argument("model: P1 and P2 disagree on the fine support");
    spec.n3 = spec.p2.cols();
  }

  if (kind == ModelKind::MCAR) {
    if (!car) throw std::invalid_argument("model: ms-mcar requires a CarStructure");
    if (car->n() != spec.n3)
      throw std::invalid_argument("model: CarStructure size differs from n3");
    car->check_positive_definite(hyper.b_rho);
    spec.car = std::move(car);
  } else {
    if (!basis1) throw std::invalid_argument("model: basis required");
    if (basis1->g.rows() != spec.n3)
      throw std::invalid_argument("model: basis size differs from n3");
    if (basis1->r > spec.n3 - 1)
      throw std::invalid_argument("model: basis rank must be <= n3 - 1");
    spec.basis1 = std::move(basis1);
    if (kind == ModelKind::OH && basis2)
      throw std::invalid_argument("model: ms-oh uses a single basis");
    spec.basis2 = basis2 ? std::move(basis2) : spec.basis1;
    if (spec.basis2->g.rows() != spec.n3 || spec.basis2->r != spec.basis1->r)
      throw std::invalid_argument("model: second basis shape mismatch");
    if (spec.uses_var1()) spec.pg1 = spec.p1.matrix() * spec.basis1->g;
    if (spec.uses_var2()) {
      const Eigen::MatrixXd& g2 =
          (kind == ModelKind::OH) ? spec.basis1->g : spec.basis2->g;
      spec.pg2 = spec.p2.matrix() * g2;
    }
  }
  return spec;
}

// Observations on the two coarse supports; NaN marks a missing entry.
struct Dataset {
  Eigen::VectorXd y1;
  Eigen::VectorXd y2;

  static bool observed(double v) { return std::isfinite(v); }

  std::vector<Eigen::Index> observed1() const { return observed_of(y1); }
  std::vector<Eigen::Index> observed2() const { return observed_of(y2); }

 private:
  static std::vector<Eigen::Index> observed_of(const Eigen::VectorXd& y) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (observed(y[i])) idx.push_back(i);
    return idx;
  }
};

inline void validate_dataset(const ModelSpec& spec, const Dataset& data) {
  if (spec.uses_var1()) {
    if (data.y1.size() != spec.n1())
      throw std::invalid_argument("dataset: y1 length differs from n1");
    if (data.observed1().empty())
      throw std::invalid_argument("dataset: y1 has no observed entries");
  }
  if (spec.uses_var2()) {
    if (data.y2.size() != spec.n2())
      throw std::invalid_argument("dataset: y2 length differs from n2");
    if (data.observed2().empty())
      throw std::invalid_argument("dataset: y2 has no observed entries");
  }
}

// Current values of every unknown. Fields not used by a given kind/arity
// stay at their defaults and are ignored.
struct ChainState {
  Eigen::VectorXd process;  // eta (r) for SRE/OH, psi (2*n3 or n3) for MCAR
  double beta0 = 0.0;       // OH only
  double beta1 = 0.0;
  double beta2 = 0.0;
  double sigma2_1 = 1.0;
  double sigma2_2 = 1.0;
  double sigma2_eta = 1.0;  // SRE/OH
  double phi = 1.0;         // SRE/OH
  double rho = 0.5;         // MCAR
  double tau = 0.0;         // MCAR
  double nu2 = 1.0;         // MCAR
};

// Data-model mean on the observation scale for variable 1 / variable 2.
inline Eigen::VectorXd obs_mean1(const ModelSpec& spec, const ChainState& state) {
  if (spec.kind == ModelKind::MCAR) {
    const auto psi1 = state.process.head(spec.n3);
    return (state.beta1 + (spec.p1.matrix() * psi1).array()).matrix();
  }
  return (state.beta1 + (spec.pg1 * state.process).array()).matrix();
}

inline Eigen::VectorXd obs_mean2(const ModelSpec& spec, const ChainState& state) {
  if (spec.kind == ModelKind::MCAR) {
    const auto psi2 = spec.arity == Arity::Bivariate
                          ? state.process.tail(spec.n3)
                          : state.process.head(spec.n3);
    return (state.beta2 + (spec.p2.matrix() * psi2).array()).matrix();
  }
  if (spec.kind == ModelKind::OH)
    return (state.beta0 +
            state.beta2 * (state.beta1 + (spec.pg2 * state.process).array()))
        .matrix();
  return (state.beta2 + (spec.pg2 * state.process).array()).matrix();
}

inline double normal_log_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * d * d / var;
}

inline double inv_gamma_log_pdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - rate / x;
}

// Per-observation Gaussian log densities with the diag(P P')-scaled
// variances; missing entries are skipped. Variable-1 entries first.
inline Eigen::VectorXd log_likelihood_pointwise(const ModelSpec& spec,
                                                const ChainState& state,
                                                const Dataset& data) {
  std::vector<double> out;
  if (spec.uses_var1()) {
    const Eigen::VectorXd mean = obs_mean1(spec, state);
    for (Eigen::Index i = 0; i < data.y1.size(); ++i)
      if (Dataset::observed(data.y1[i]))
        out.push_back(normal_log_pdf(data.y1[i], mean[i],
                                     state.sigma2_1 * spec.d1[i]));
  }
  if (spec.uses_var2()) {
    const Eigen::VectorXd mean = obs_mean2(spec, state);
    for (Eigen::Index j = 0; j < data.y2.size(); ++j)
      if (Dataset::observed(data.y2[j]))
        out.push_back(normal_log_pdf(data.y2[j], mean[j],
                                     state.sigma2_2 * spec.d2[j]));
  }
  if (out.empty()) return Eigen::VectorXd();
  return Eigen::Map<const Eigen::VectorXd>(out.data(),
                                           static_cast<Eigen::Index>(out.size()));
}

inline double log_likelihood(const ModelSpec& spec, const ChainState& state,
                             const Dataset& data) {
  return log_likelihood_pointwise(spec, state, data).sum();
}

// Joint log density of the process prior and all parameter priors; -inf
// outside the uniform bounds or for non-positive variances.
inline double log_prior(const ModelSpec& spec, const ChainState& state) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const Hyperparams& h = spec.hyper;
  double lp = 0.0;

  if (spec.uses_var1()) {
    if (!(state.sigma2_1 > 0.0)) return kNegInf;
    lp += normal_log_pdf(state.beta1, 0.0, h.sigma2_beta);
    lp += inv_gamma_log_pdf(state.sigma2_1, h.a_sigma, h.b_sigma);
  }
  if (spec.uses_var2()) {
    if (!(state.sigma2_2 > 0.0)) return kNegInf;
    lp += normal_log_pdf(state.beta2, 0.0, h.sigma2_beta);
    lp += inv_gamma_log_pdf(state.sigma2_2, h.a_sigma, h.b_sigma);
  }
  if (spec.kind == ModelKind::OH) lp += normal_log_pdf(state.beta0, 0.0, h.sigma2_beta);

  if (spec.uses_basis()) {
    if (!(state.sigma2_eta > 0.0)) return kNegInf;
    if (state.phi < h.a_phi || state.phi > h.b_phi) return kNegInf;
    lp += inv_gamma_log_pdf(state.sigma2_eta, h.a_eta, h.b_eta);
    lp += -std::log(h.b_phi - h.a_phi);
    // eta ~ MVN(0, sigma2_eta * (R(phi) + jitter I))
    const CorrelationFactor corr(spec.basis1->knots, state.phi);
    const double r = static_cast<double>(spec.basis1->r);
    lp += -0.5 * r * std::log(2.0 * M_PI) -
          0.5 * (r * std::log(state.sigma2_eta) + corr.log_det()) -
          0.5 * corr.quad_form(state.process) / state.sigma2_eta;
  } else {
    if (!(state.nu2 > 0.0)) return kNegInf;
    if (state.rho < h.a_rho || state.rho > h.b_rho) return kNegInf;
    const bool bivariate = spec.arity == Arity::Bivariate;
    if (bivariate) {
      if (state.tau < h.a_tau || state.tau > h.b_tau) return kNegInf;
      lp += -std::log(h.b_tau - h.a_tau);
    }
    lp += -std::log(h.b_rho - h.a_rho);
    lp += inv_gamma_log_pdf(state.nu2, h.a_nu, h.b_nu);
    try {
      const McarPrecision prior(*spec.car, state.rho, state.tau, state.nu2,
                                bivariate);
      lp += prior.log_pdf(state.process);
    } catch (const std::invalid_argument&) {
      // rho at the singular boundary or |tau| = 1
      return kNegInf;
    }
  }
  return lp;
}

}  // namespace mscos
