#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mscos/common.hpp"
#include "mscos/model.hpp"
#include "mscos/rng.hpp"

namespace mscos {

struct McmcConfig {
  int n_iter = 5000;
  int burn_in = 1000;
  int thin = 1;
  std::uint64_t seed = 0;
  int chains = 2;
  bool adapt = true;  // adapt MH steps during burn-in only
  double step_phi = 0.5;
  double step_rho = 0.1;
  double step_tau = 0.2;

  void validate() const {
    if (n_iter < 1) throw std::invalid_argument("mcmc: n_iter must be >= 1");
    if (burn_in < 0 || burn_in >= n_iter)
      throw std::invalid_argument("mcmc: require 0 <= burn_in < n_iter");
    if (thin < 1) throw std::invalid_argument("mcmc: thin must be >= 1");
    if (chains < 1) throw std::invalid_argument("mcmc: chains must be >= 1");
    if (!(step_phi > 0.0 && step_rho > 0.0 && step_tau > 0.0))
      throw std::invalid_argument("mcmc: step sizes must be positive");
  }
};

enum class MhTarget { Phi, Rho, Tau };

// Post-burn-in draws of one chain, stored column-per-parameter, plus the
// Metropolis-Hastings acceptance rates and the configuration echo.
struct PosteriorDraws {
  std::vector<std::string> scalar_names;
  Eigen::MatrixXd scalars;   // n_kept x scalar_names.size()
  std::string process_name;  // "eta" or "psi"
  Eigen::MatrixXd process;   // n_kept x process_dim
  std::map<std::string, double> acceptance;  // per MH target
  int numerical_rejections = 0;
  McmcConfig config;
  std::uint64_t chain_seed = 0;

  Eigen::Index n_draws() const { return scalars.rows(); }

  Eigen::Index column(const std::string& name) const {
    for (std::size_t k = 0; k < scalar_names.size(); ++k)
      if (scalar_names[k] == name) return static_cast<Eigen::Index>(k);
    throw std::invalid_argument("draws: no column named '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& n : scalar_names)
      if (n == name) return true;
    return false;
  }
};

inline std::vector<std::string> scalar_names_for(const ModelSpec& spec) {
  std::vector<std::string> names;
  if (spec.kind == ModelKind::OH) names.push_back("beta0");
  if (spec.uses_var1()) names.push_back("beta1");
  if (spec.uses_var2()) names.push_back("beta2");
  if (spec.uses_var1()) names.push_back("sigma2_1");
  if (spec.uses_var2()) names.push_back("sigma2_2");
  if (spec.uses_basis()) {
    names.push_back("sigma2_eta");
    names.push_back("phi");
  } else {
    names.push_back("nu2");
    names.push_back("rho");
    if (spec.arity == Arity::Bivariate) names.push_back("tau");
  }
  return names;
}

inline Eigen::VectorXd pack_scalars(const ModelSpec& spec, const ChainState& s) {
  std::vector<double> v;
  if (spec.kind == ModelKind::OH) v.push_back(s.beta0);
  if (spec.uses_var1()) v.push_back(s.beta1);
  if (spec.uses_var2()) v.push_back(s.beta2);
  if (spec.uses_var1()) v.push_back(s.sigma2_1);
  if (spec.uses_var2()) v.push_back(s.sigma2_2);
  if (spec.uses_basis()) {
    v.push_back(s.sigma2_eta);
    v.push_back(s.phi);
  } else {
    v.push_back(s.nu2);
    v.push_back(s.rho);
    if (spec.arity == Arity::Bivariate) v.push_back(s.tau);
  }
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline ChainState unpack_scalars(const ModelSpec& spec,
                                 const Eigen::VectorXd& scalars,
                                 const Eigen::VectorXd& process) {
  ChainState s;
  Eigen::Index k = 0;
  if (spec.kind == ModelKind::OH) s.beta0 = scalars[k++];
  if (spec.uses_var1()) s.beta1 = scalars[k++];
  if (spec.uses_var2()) s.beta2 = scalars[k++];
  if (spec.uses_var1()) s.sigma2_1 = scalars[k++];
  if (spec.uses_var2()) s.sigma2_2 = scalars[k++];
  if (spec.uses_basis()) {
    s.sigma2_eta = scalars[k++];
    s.phi = scalars[k++];
  } else {
    s.nu2 = scalars[k++];
    s.rho = scalars[k++];
    if (spec.arity == Arity::Bivariate) s.tau = scalars[k++];
  }
  s.process = process;
  return s;
}

inline ChainState state_at(const ModelSpec& spec, const PosteriorDraws& draws,
                           Eigen::Index row) {
  return unpack_scalars(spec, draws.scalars.row(row).transpose(),
                        draws.process.row(row).transpose());
}

// Metropolis-within-Gibbs sampler for one chain. Holds the data-dependent
// workspace (observed-row Gram matrices, sparse patterns), the adaptive MH
// step sizes, and acceptance counters; one instance per chain.
class GibbsSampler {
 public:
  GibbsSampler(const ModelSpec& spec, const Dataset& data,
               const McmcConfig& config = McmcConfig{})
      : spec_(&spec), data_(&data) {
    validate_dataset(spec, data);
    steps_[0] = config.step_phi;
    steps_[1] = config.step_rho;
    steps_[2] = config.step_tau;
    build_workspace();
  }

  const ModelSpec& spec() const { return *spec_; }

  // Swap in a new response vector with the same missingness pattern (the
  // successive-conditional Geweke loop regenerates data every sweep).
  void set_data(const Dataset& data) {
    if (spec_->uses_var1()) {
      if (data.y1.size() != data_->y1.size())
        throw std::invalid_argument("set_data: y1 length changed");
      for (std::size_t k = 0; k < obs1_.size(); ++k)
        y1o_[static_cast<Eigen::Index>(k)] = data.y1[obs1_[k]];
    }
    if (spec_->uses_var2()) {
      if (data.y2.size() != data_->y2.size())
        throw std::invalid_argument("set_data: y2 length changed");
      for (std::size_t k = 0; k < obs2_.size(); ++k)
        y2o_[static_cast<Eigen::Index>(k)] = data.y2[obs2_[k]];
    }
  }

  void set_adapt(bool on) { adapting_ = on; }

  void reset_acceptance() {
    for (auto& c : counters_) c = Counter{};
    numerical_rejections_ = 0;
  }

  double acceptance(MhTarget t) const {
    const Counter& c = counters_[static_cast<int>(t)];
    return c.attempts > 0 ? c.accepted / c.attempts : std::nan("");
  }

  int numerical_rejections() const { return numerical_rejections_; }
  double step_size(MhTarget t) const { return steps_[static_cast<int>(t)]; }

  // Initialization: empirical data means/variances for the regression and
  // noise parameters, zero process, midpoint/interior values for the bounded
  // parameters.
  ChainState initial_state() const {
    const Hyperparams& h = spec_->hyper;
    ChainState s;
    s.process = Eigen::VectorXd::Zero(spec_->process_dim());
    if (spec_->uses_var1()) {
      s.beta1 = y1o_.mean();
      s.sigma2_1 = half_variance(y1o_);
    }
    if (spec_->uses_var2()) {
      s.beta2 = spec_->kind == ModelKind::OH ? 1.0 : y2o_.mean();
      s.sigma2_2 = half_variance(y2o_);
    }
    s.beta0 = 0.0;
    s.sigma2_eta = 1.0;
    s.phi = 0.5 * (h.a_phi + h.b_phi);
    s.rho = (h.a_rho < 0.5 && 0.5 < h.b_rho) ? 0.5 : 0.5 * (h.a_rho + h.b_rho);
    s.tau = (h.a_tau < 0.0 && 0.0 < h.b_tau) ? 0.0 : 0.5 * (h.a_tau + h.b_tau);
    s.nu2 = 1.0;
    return s;
  }

  // One full Gibbs scan: process vector, then betas, then variances, then
  // the bounded parameters via Metropolis-Hastings.
  void sweep(ChainState& s, Rng& rng) {
    ++iteration_;
    update_process(s, rng);
    if (spec_->kind == ModelKind::OH) s.beta0 = draw_scalar_normal(beta_conditional(0, s), rng);
    if (spec_->uses_var1()) s.beta1 = draw_scalar_normal(beta_conditional(1, s), rng);
    if (spec_->uses_var2()) s.beta2 = draw_scalar_normal(beta_conditional(2, s), rng);
    if (spec_->uses_basis())
      s.sigma2_eta = draw_inv_gamma(sigma2_eta_conditional(s), rng);
    else
      s.nu2 = draw_inv_gamma(nu2_conditional(s), rng);
    if (spec_->uses_var1()) s.sigma2_1 = draw_inv_gamma(sigma2_conditional(1, s), rng);
    if (spec_->uses_var2()) s.sigma2_2 = draw_inv_gamma(sigma2_conditional(2, s), rng);
    if (spec_->uses_basis()) {
      mh_update(MhTarget::Phi, s, rng);
    } else {
      mh_update(MhTarget::Rho, s, rng);
      if (spec_->arity == Arity::Bivariate) mh_update(MhTarget::Tau, s, rng);
    }
  }

  // ---- full conditionals ----------------------------------------------

  struct MvnConditional {
    Eigen::VectorXd b;          // linear term
    Eigen::MatrixXd precision;  // B^{-1} (dense; intended for inspection)
  };

  struct ScalarNormal {
    double mean = 0.0;
    double var = 1.0;
  };

  struct InvGammaParams {
    double shape = 1.0;
    double rate = 1.0;
  };

  // Dense view of the process full conditional MVN(B b, B); the sampling
  // path itself uses the sparse assembly for MCAR.
  MvnConditional process_conditional(const ChainState& s) const {
    MvnConditional out;
    if (spec_->uses_basis()) {
      const CorrelationFactor corr(spec_->basis1->knots, s.phi);
      out.precision = corr.inverse() / s.sigma2_eta;
      out.b = Eigen::VectorXd::Zero(spec_->basis1->r);
      if (spec_->uses_var1()) {
        out.precision += m1_ / s.sigma2_1;
        out.b += g1o_.transpose() *
                 (w1o_.array() * (y1o_.array() - s.beta1)).matrix() / s.sigma2_1;
      }
      if (spec_->uses_var2()) {
        if (spec_->kind == ModelKind::OH) {
          out.precision += (s.beta2 * s.beta2 / s.sigma2_2) * m2_;
          out.b += (s.beta2 / s.sigma2_2) *
                   (g2o_.transpose() *
                    (w2o_.array() * (y2o_.array() - s.beta0 - s.beta1 * s.beta2))
                        .matrix());
        } else {
          out.precision += m2_ / s.sigma2_2;
          out.b += g2o_.transpose() *
                   (w2o_.array() * (y2o_.array() - s.beta2)).matrix() / s.sigma2_2;
        }
      }
    } else {
      out.precision = Eigen::MatrixXd(assemble_psi_precision(s));
      out.b = assemble_psi_b(s);
    }
    return out;
  }

  Eigen::VectorXd process_conditional_mean(const ChainState& s) const {
    const MvnConditional c = process_conditional(s);
    Eigen::LLT<Eigen::MatrixXd> llt(c.precision);
    if (llt.info() != Eigen::Success)
      throw NumericalError("process conditional precision not SPD");
    return llt.solve(c.b);
  }

  // Scalar normal N(b/2a, -1/2a) for beta0 (OH), beta1, beta2.
  ScalarNormal beta_conditional(int which, const ChainState& s) const {
    const Hyperparams& h = spec_->hyper;
    double sum_w = 0.0;   // quadratic coefficient (data part)
    double sum_r = 0.0;   // linear coefficient (data part)
    switch (which) {
      case 0: {  // OH intercept of variable 2
        require(spec_->kind == ModelKind::OH, "beta0 is MS-OH only");
        const Eigen::VectorXd ge = g2o_ * s.process;
        for (Eigen::Index j = 0; j < y2o_.size(); ++j) {
          const double w = w2o_[j] / s.sigma2_2;
          sum_w += w;
          sum_r += w * (y2o_[j] - s.beta1 * s.beta2 - s.beta2 * ge[j]);
        }
        break;
      }
      case 1: {
        require(spec_->uses_var1(), "beta1 unused by this spec");
        const Eigen::VectorXd fit = process_fit1(s);
        for (Eigen::Index i = 0; i < y1o_.size(); ++i) {
          const double w = w1o_[i] / s.sigma2_1;
          sum_w += w;
          sum_r += w * (y1o_[i] - fit[i]);
        }
        if (spec_->kind == ModelKind::OH) {
          const Eigen::VectorXd ge = g2o_ * s.process;
          for (Eigen::Index j = 0; j < y2o_.size(); ++j) {
            const double w = w2o_[j] / s.sigma2_2;
            sum_w += w * s.beta2 * s.beta2;
            sum_r += w * s.beta2 * (y2o_[j] - s.beta0 - s.beta2 * ge[j]);
          }
        }
        break;
      }
      case 2: {
        require(spec_->uses_var2(), "beta2 unused by this spec");
        if (spec_->kind == ModelKind::OH) {
          const Eigen::VectorXd ge = g2o_ * s.process;
          for (Eigen::Index j = 0; j < y2o_.size(); ++j) {
            const double w = w2o_[j] / s.sigma2_2;
            const double m = s.beta1 + ge[j];
            sum_w += w * m * m;
            sum_r += w * m * (y2o_[j] - s.beta0);
          }
        } else {
          const Eigen::VectorXd fit = process_fit2(s);
          for (Eigen::Index j = 0; j < y2o_.size(); ++j) {
            const double w = w2o_[j] / s.sigma2_2;
            sum_w += w;
            sum_r += w * (y2o_[j] - fit[j]);
          }
        }
        break;
      }
      default:
        throw std::invalid_argument("beta_conditional: which must be 0, 1 or 2");
    }
    ScalarNormal out;
    out.var = 1.0 / (sum_w + 1.0 / h.sigma2_beta);
    out.mean = out.var * sum_r;
    return out;
  }

  // IG(a_sigma + n_obs/2, b_sigma + sum resid^2 / (2 d)).
  InvGammaParams sigma2_conditional(int which, const ChainState& s) const {
    const Hyperparams& h = spec_->hyper;
    InvGammaParams out;
    if (which == 1) {
      require(spec_->uses_var1(), "sigma2_1 unused by this spec");
      const Eigen::VectorXd resid = y1o_ - mean1_obs(s);
      out.shape = h.a_sigma + 0.5 * static_cast<double>(y1o_.size());
      out.rate = h.b_sigma + 0.5 * resid.cwiseProduct(resid).dot(w1o_);
    } else if (which == 2) {
      require(spec_->uses_var2(), "sigma2_2 unused by this spec");
      const Eigen::VectorXd resid = y2o_ - mean2_obs(s);
      out.shape = h.a_sigma + 0.5 * static_cast<double>(y2o_.size());
      out.rate = h.b_sigma + 0.5 * resid.cwiseProduct(resid).dot(w2o_);
    } else {
      throw std::invalid_argument("sigma2_conditional: which must be 1 or 2");
    }
    return out;
  }

  // IG(a_eta + r/2, b_eta + eta' R(phi)^{-1} eta / 2).
  InvGammaParams sigma2_eta_conditional(const ChainState& s) const {
    require(spec_->uses_basis(), "sigma2_eta is SRE/OH only");
    const CorrelationFactor corr(spec_->basis1->knots, s.phi);
    InvGammaParams out;
    out.shape = spec_->hyper.a_eta + 0.5 * static_cast<double>(spec_->basis1->r);
    out.rate = spec_->hyper.b_eta + 0.5 * corr.quad_form(s.process);
    return out;
  }

  // Bivariate: IG(a_nu + n3, b_nu + psi' [T(tau)^{-1} (x) Q(rho)] psi / 2);
  // the univariate reduction has shape a_nu + n3/2 and plain CAR quadratic.
  InvGammaParams nu2_conditional(const ChainState& s) const {
    require(!spec_->uses_basis(), "nu2 is MCAR only");
    const Eigen::SparseMatrix<double> q = spec_->car->precision_factor(s.rho);
    const double n3 = static_cast<double>(spec_->n3);
    InvGammaParams out;
    if (spec_->arity == Arity::Bivariate) {
      const auto psi1 = s.process.head(spec_->n3);
      const auto psi2 = s.process.tail(spec_->n3);
      const Eigen::VectorXd q1 = q * psi1;
      const Eigen::VectorXd q2 = q * psi2;
      const double quad = (psi1.dot(q1) - 2.0 * s.tau * psi1.dot(q2) +
                           psi2.dot(q2)) / (1.0 - s.tau * s.tau);
      out.shape = spec_->hyper.a_nu + n3;
      out.rate = spec_->hyper.b_nu + 0.5 * quad;
    } else {
      out.shape = spec_->hyper.a_nu + 0.5 * n3;
      out.rate = spec_->hyper.b_nu + 0.5 * s.process.dot(q * s.process);
    }
    return out;
  }

  // Log full-conditional kernel of a bounded parameter (process prior
  // density at the given value; the flat prior contributes a constant).
  double mh_log_target(MhTarget target, double value, const ChainState& s) const {
    switch (target) {
      case MhTarget::Phi: {
        require(spec_->uses_basis(), "phi is SRE/OH only");
        const CorrelationFactor corr(spec_->basis1->knots, value);
        const double r = static_cast<double>(spec_->basis1->r);
        return -0.5 * (r * std::log(s.sigma2_eta) + corr.log_det()) -
               0.5 * corr.quad_form(s.process) / s.sigma2_eta;
      }
      case MhTarget::Rho: {
        require(!spec_->uses_basis(), "rho is MCAR only");
        const McarPrecision prior(*spec_->car, value, s.tau, s.nu2,
                                  spec_->arity == Arity::Bivariate);
        return 0.5 * prior.log_det() - 0.5 * prior.quad_form(s.process);
      }
      case MhTarget::Tau: {
        require(!spec_->uses_basis() && spec_->arity == Arity::Bivariate,
                "tau is bivariate MCAR only");
        const McarPrecision prior(*spec_->car, s.rho, value, s.nu2, true);
        return 0.5 * prior.log_det() - 0.5 * prior.quad_form(s.process);
      }
    }
    throw std::invalid_argument("mh_log_target: bad target");
  }

  std::pair<double, double> mh_bounds(MhTarget target) const {
    const Hyperparams& h = spec_->hyper;
    switch (target) {
      case MhTarget::Phi: return {h.a_phi, h.b_phi};
      case MhTarget::Rho: return {h.a_rho, h.b_rho};
      case MhTarget::Tau: return {h.a_tau, h.b_tau};
    }
    throw std::invalid_argument("mh_bounds: bad target");
  }

  // ---- updates ---------------------------------------------------------

  void update_process(ChainState& s, Rng& rng) {
    if (spec_->uses_basis()) {
      const MvnConditional c = process_conditional(s);
      Eigen::LLT<Eigen::MatrixXd> llt(c.precision);
      if (llt.info() != Eigen::Success)
        throw NumericalError("update eta: conditional precision not SPD (" +
                             state_summary(s) + ")");
      const Eigen::VectorXd mean = llt.solve(c.b);
      s.process = mean + llt.matrixU().solve(rng.standard_normal(c.b.size()));
    } else {
      const Eigen::SparseMatrix<double> prec = assemble_psi_precision(s);
      const Eigen::VectorXd b = assemble_psi_b(s);
      if (!psi_pattern_ready_) {
        psi_solver_.analyzePattern(prec);
        psi_pattern_ready_ = true;
      }
      psi_solver_.factorize(prec);
      if (psi_solver_.info() != Eigen::Success ||
          psi_solver_.vectorD().minCoeff() <= 0.0)
        throw NumericalError("update psi: conditional precision not SPD (" +
                             state_summary(s) + ")");
      const Eigen::VectorXd mean = psi_solver_.solve(b);
      Eigen::VectorXd z = rng.standard_normal(b.size());
      z.array() /= psi_solver_.vectorD().array().sqrt();
      s.process = mean + psi_solver_.permutationPinv() * psi_solver_.matrixU().solve(z).eval();
    }
  }

  // Gaussian random walk with reflection-free rejection outside the uniform
  // support; Robbins-Monro adaptation of the log step toward 0.44 acceptance
  // while adapting (burn-in), frozen afterwards.
  bool mh_update(MhTarget target, ChainState& s, Rng& rng) {
    const int t = static_cast<int>(target);
    double& value = mh_value(target, s);
    const auto [lo, hi] = mh_bounds(target);
    const double current = value;
    const double proposal = current + steps_[t] * rng.normal();
    double alpha = 0.0;
    bool accepted = false;
    if (proposal >= lo && proposal <= hi) {
      try {
        const double lt_cur = mh_log_target(target, current, s);
        const double lt_prop = mh_log_target(target, proposal, s);
        alpha = std::min(1.0, std::exp(lt_prop - lt_cur));
      } catch (const std::invalid_argument&) {
        ++numerical_rejections_;
        alpha = 0.0;
      } catch (const NumericalError&) {
        ++numerical_rejections_;
        alpha = 0.0;
      }
      if (alpha > 0.0 && rng.uniform() < alpha) {
        value = proposal;
        accepted = true;
      }
    }
    Counter& c = counters_[t];
    c.attempts += 1.0;
    if (accepted) c.accepted += 1.0;
    if (adapting_) {
      adapt_count_[t] += 1.0;
      const double gamma = std::pow(adapt_count_[t], -0.6);
      steps_[t] *= std::exp(gamma * (alpha - 0.44));
    }
    return accepted;
  }

  static double draw_scalar_normal(const ScalarNormal& p, Rng& rng) {
    return rng.normal(p.mean, std::sqrt(p.var));
  }

  static double draw_inv_gamma(const InvGammaParams& p, Rng& rng) {
    return rng.inv_gamma(p.shape, p.rate);
  }

 private:
  struct Counter {
    double attempts = 0.0;
    double accepted = 0.0;
  };

  static void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
  }

  static double half_variance(const Eigen::VectorXd& y) {
    if (y.size() < 2) return 1.0;
    const double mean = y.mean();
    const double var = (y.array() - mean).square().sum() /
                       static_cast<double>(y.size() - 1);
    return var > 0.0 ? 0.5 * var : 1.0;
  }

  std::string state_summary(const ChainState& s) const {
    std::string out = "iter=" + std::to_string(iteration_);
    const Eigen::VectorXd sc = pack_scalars(*spec_, s);
    const auto names = scalar_names_for(*spec_);
    for (std::size_t k = 0; k < names.size(); ++k)
      out += " " + names[k] + "=" + std::to_string(sc[static_cast<Eigen::Index>(k)]);
    return out;
  }

  double& mh_value(MhTarget target, ChainState& s) const {
    switch (target) {
      case MhTarget::Phi: return s.phi;
      case MhTarget::Rho: return s.rho;
      case MhTarget::Tau: return s.tau;
    }
    throw std::invalid_argument("mh_value: bad target");
  }

  // Fitted process contribution to the variable-1 / variable-2 mean on the
  // observed rows, excluding the intercepts.
  Eigen::VectorXd process_fit1(const ChainState& s) const {
    if (spec_->uses_basis()) return g1o_ * s.process;
    return p1o_ * s.process.head(spec_->n3);
  }

  Eigen::VectorXd process_fit2(const ChainState& s) const {
    if (spec_->uses_basis()) return g2o_ * s.process;
    const auto psi2 = spec_->arity == Arity::Bivariate
                          ? s.process.tail(spec_->n3)
                          : s.process.head(spec_->n3);
    return p2o_ * psi2;
  }

  Eigen::VectorXd mean1_obs(const ChainState& s) const {
    return (s.beta1 + process_fit1(s).array()).matrix();
  }

  Eigen::VectorXd mean2_obs(const ChainState& s) const {
    if (spec_->kind == ModelKind::OH)
      return (s.beta0 + s.beta2 * (s.beta1 + (g2o_ * s.process).array())).matrix();
    return (s.beta2 + process_fit2(s).array()).matrix();
  }

  // Sparse B^{-1} for the psi update: data Gram blocks plus
  // Sigma^{-1} (x) Q(rho).
  Eigen::SparseMatrix<double> assemble_psi_precision(const ChainState& s) const {
    const Eigen::Index n = spec_->n3;
    const Eigen::SparseMatrix<double> q = spec_->car->precision_factor(s.rho);
    std::vector<Eigen::Triplet<double>> trips;
    const bool bivariate = spec_->arity == Arity::Bivariate;
    const Eigen::Index dim = bivariate ? 2 * n : n;
    trips.reserve(static_cast<std::size_t>(4 * q.nonZeros() + s1_.nonZeros() + s2_.nonZeros()));

    Eigen::Matrix2d si;
    if (bivariate) {
      const double c = 1.0 / (s.nu2 * (1.0 - s.tau * s.tau));
      si << c, -c * s.tau, -c * s.tau, c;
    } else {
      si << 1.0 / s.nu2, 0.0, 0.0, 0.0;
    }

    // Zero-scale blocks are still inserted: the assembled pattern must not
    // change across iterations (tau = 0 would otherwise drop the
    // cross-variable blocks and stale the analyzed pattern).
    auto add_block = [&](const Eigen::SparseMatrix<double>& a, double scale,
                         Eigen::Index row0, Eigen::Index col0) {
      for (int k = 0; k < a.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it)
          trips.emplace_back(static_cast<int>(row0 + it.row()),
                             static_cast<int>(col0 + it.col()),
                             scale * it.value());
    };

    if (spec_->uses_var1()) add_block(s1_, 1.0 / s.sigma2_1, 0, 0);
    if (bivariate) {
      add_block(s2_, 1.0 / s.sigma2_2, n, n);
      add_block(q, si(0, 0), 0, 0);
      add_block(q, si(1, 1), n, n);
      add_block(q, si(0, 1), 0, n);
      add_block(q, si(1, 0), n, 0);
    } else {
      if (spec_->uses_var2()) add_block(s2_, 1.0 / s.sigma2_2, 0, 0);
      add_block(q, si(0, 0), 0, 0);
    }

    Eigen::SparseMatrix<double> prec(dim, dim);
    prec.setFromTriplets(trips.begin(), trips.end());
    prec.makeCompressed();
    return prec;
  }

  Eigen::VectorXd assemble_psi_b(const ChainState& s) const {
    const Eigen::Index n = spec_->n3;
    const bool bivariate = spec_->arity == Arity::Bivariate;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(bivariate ? 2 * n : n);
    if (spec_->uses_var1())
      b.head(n) += p1o_.transpose() *
                   (w1o_.array() * (y1o_.array() - s.beta1)).matrix() / s.sigma2_1;
    if (spec_->uses_var2()) {
      Eigen::VectorXd b2 = p2o_.transpose() *
                           (w2o_.array() * (y2o_.array() - s.beta2)).matrix() /
                           s.sigma2_2;
      if (bivariate)
        b.tail(n) += b2;
      else
        b.head(n) += b2;
    }
    return b;
  }

  void build_workspace() {
    const ModelSpec& spec = *spec_;
    if (spec.uses_var1()) {
      obs1_ = data_->observed1();
      const auto m = static_cast<Eigen::Index>(obs1_.size());
      y1o_.resize(m);
      w1o_.resize(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        y1o_[k] = data_->y1[obs1_[static_cast<std::size_t>(k)]];
        w1o_[k] = 1.0 / spec.d1[obs1_[static_cast<std::size_t>(k)]];
      }
      if (spec.uses_basis()) {
        g1o_.resize(m, spec.basis1->r);
        for (Eigen::Index k = 0; k < m; ++k)
          g1o_.row(k) = spec.pg1.row(obs1_[static_cast<std::size_t>(k)]);
        m1_ = g1o_.transpose() * w1o_.asDiagonal() * g1o_;
      } else {
        p1o_ = select_rows(spec.p1.matrix(), obs1_);
        s1_ = Eigen::SparseMatrix<double>(
            p1o_.transpose() * w1o_.asDiagonal() * p1o_);
      }
    }
    if (spec.uses_var2()) {
      obs2_ = data_->observed2();
      const auto m = static_cast<Eigen::Index>(obs2_.size());
      y2o_.resize(m);
      w2o_.resize(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        y2o_[k] = data_->y2[obs2_[static_cast<std::size_t>(k)]];
        w2o_[k] = 1.0 / spec.d2[obs2_[static_cast<std::size_t>(k)]];
      }
      if (spec.uses_basis()) {
        g2o_.resize(m, spec.basis1->r);
        for (Eigen::Index k = 0; k < m; ++k)
          g2o_.row(k) = spec.pg2.row(obs2_[static_cast<std::size_t>(k)]);
        m2_ = g2o_.transpose() * w2o_.asDiagonal() * g2o_;
      } else {
        p2o_ = select_rows(spec.p2.matrix(), obs2_);
        s2_ = Eigen::SparseMatrix<double>(
            p2o_.transpose() * w2o_.asDiagonal() * p2o_);
      }
    }
  }

  static Eigen::SparseMatrix<double> select_rows(
      const Eigen::SparseMatrix<double>& a, const std::vector<Eigen::Index>& rows) {
    std::vector<Eigen::Triplet<double>> trips;
    std::vector<Eigen::Index> position(static_cast<std::size_t>(a.rows()), -1);
    for (std::size_t k = 0; k < rows.size(); ++k)
      position[static_cast<std::size_t>(rows[k])] = static_cast<Eigen::Index>(k);
    for (int k = 0; k < a.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it) {
        const Eigen::Index pos = position[static_cast<std::size_t>(it.row())];
        if (pos >= 0)
          trips.emplace_back(static_cast<int>(pos), static_cast<int>(it.col()), it.value());
      }
    Eigen::SparseMatrix<double> out(static_cast<Eigen::Index>(rows.size()), a.cols());
    out.setFromTriplets(trips.begin(), trips.end());
    out.makeCompressed();
    return out;
  }

  const ModelSpec* spec_;
  const Dataset* data_;

  std::vector<Eigen::Index> obs1_, obs2_;
  Eigen::VectorXd y1o_, y2o_, w1o_, w2o_;
  Eigen::MatrixXd g1o_, g2o_;  // observed rows of P*G
  Eigen::MatrixXd m1_, m2_;    // sum g g'/d over observed rows
  Eigen::SparseMatrix<double> p1o_, p2o_;  // observed rows of P (MCAR)
  Eigen::SparseMatrix<double> s1_, s2_;    // P' diag(1/d) P over observed rows

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> psi_solver_;
  bool psi_pattern_ready_ = false;

  bool adapting_ = true;
  double steps_[3] = {0.5, 0.1, 0.2};
  double adapt_count_[3] = {0.0, 0.0, 0.0};
  Counter counters_[3];
  int numerical_rejections_ = 0;
  long iteration_ = 0;
};

// Draw a state from the joint prior (Geweke's marginal-conditional side and
// a convenient over-dispersed initializer).
inline ChainState draw_state_from_prior(const ModelSpec& spec, Rng& rng) {
  const Hyperparams& h = spec.hyper;
  ChainState s;
  if (spec.kind == ModelKind::OH) s.beta0 = rng.normal(0.0, std::sqrt(h.sigma2_beta));
  if (spec.uses_var1()) {
    s.beta1 = rng.normal(0.0, std::sqrt(h.sigma2_beta));
    s.sigma2_1 = rng.inv_gamma(h.a_sigma, h.b_sigma);
  }
  if (spec.uses_var2()) {
    s.beta2 = rng.normal(0.0, std::sqrt(h.sigma2_beta));
    s.sigma2_2 = rng.inv_gamma(h.a_sigma, h.b_sigma);
  }
  if (spec.uses_basis()) {
    s.sigma2_eta = rng.inv_gamma(h.a_eta, h.b_eta);
    s.phi = rng.uniform(h.a_phi, h.b_phi);
    const CorrelationFactor corr(spec.basis1->knots, s.phi);
    s.process = std::sqrt(s.sigma2_eta) * corr.sample(rng);
  } else {
    s.nu2 = rng.inv_gamma(h.a_nu, h.b_nu);
    s.rho = rng.uniform(h.a_rho, h.b_rho);
    const bool bivariate = spec.arity == Arity::Bivariate;
    if (bivariate) s.tau = rng.uniform(h.a_tau, h.b_tau);
    const McarPrecision prior(*spec.car, s.rho, s.tau, s.nu2, bivariate);
    s.process = prior.sample(rng);
  }
  return s;
}

// Draw observations from the data models at the given state; `mask` (if
// supplied) transfers its missingness pattern.
inline Dataset draw_observations(const ModelSpec& spec, const ChainState& s,
                                 Rng& rng, const Dataset* mask = nullptr) {
  Dataset data;
  if (spec.uses_var1()) {
    const Eigen::VectorXd mean = obs_mean1(spec, s);
    data.y1.resize(spec.n1());
    for (Eigen::Index i = 0; i < spec.n1(); ++i) {
      if (mask && !Dataset::observed(mask->y1[i]))
        data.y1[i] = std::numeric_limits<double>::quiet_NaN();
      else
        data.y1[i] = rng.normal(mean[i], std::sqrt(s.sigma2_1 * spec.d1[i]));
    }
  }
  if (spec.uses_var2()) {
    const Eigen::VectorXd mean = obs_mean2(spec, s);
    data.y2.resize(spec.n2());
    for (Eigen::Index j = 0; j < spec.n2(); ++j) {
      if (mask && !Dataset::observed(mask->y2[j]))
        data.y2[j] = std::numeric_limits<double>::quiet_NaN();
      else
        data.y2[j] = rng.normal(mean[j], std::sqrt(s.sigma2_2 * spec.d2[j]));
    }
  }
  return data;
}

// Run one chain: deterministic given the seed, draws recorded after burn-in
// with thinning, numerical failures abort with the iteration and state.
inline PosteriorDraws run_chain(const ModelSpec& spec, const Dataset& data,
                                const McmcConfig& config) {
  config.validate();
  GibbsSampler sampler(spec, data, config);
  Rng rng(config.seed);
  ChainState state = sampler.initial_state();
  sampler.set_adapt(config.adapt);

  const Eigen::Index n_kept =
      (config.n_iter - config.burn_in + config.thin - 1) / config.thin;
  PosteriorDraws draws;
  draws.scalar_names = scalar_names_for(spec);
  draws.process_name = spec.uses_basis() ? "eta" : "psi";
  draws.scalars.resize(n_kept, static_cast<Eigen::Index>(draws.scalar_names.size()));
  draws.process.resize(n_kept, spec.process_dim());
  draws.config = config;
  draws.chain_seed = config.seed;

  Eigen::Index kept = 0;
  for (int iter = 0; iter < config.n_iter; ++iter) {
    if (iter == config.burn_in) {
      sampler.set_adapt(false);
      sampler.reset_acceptance();
    }
    try {
      sampler.sweep(state, rng);
    } catch (const NumericalError& e) {
      throw NumericalError("chain aborted at iteration " + std::to_string(iter) +
                           ": " + e.what());
    }
    if (iter >= config.burn_in && (iter - config.burn_in) % config.thin == 0) {
      draws.scalars.row(kept) = pack_scalars(spec, state).transpose();
      draws.process.row(kept) = state.process.transpose();
      ++kept;
    }
  }

  if (spec.uses_basis()) {
    draws.acceptance["phi"] = sampler.acceptance(MhTarget::Phi);
  } else {
    draws.acceptance["rho"] = sampler.acceptance(MhTarget::Rho);
    if (spec.arity == Arity::Bivariate)
      draws.acceptance["tau"] = sampler.acceptance(MhTarget::Tau);
  }
  draws.numerical_rejections = sampler.numerical_rejections();
  return draws;
}

// Multiple chains with per-chain derived seeds; chains run in parallel and
// results are merged in chain order.
inline std::vector<PosteriorDraws> run_chains(const ModelSpec& spec,
                                              const Dataset& data,
                                              const McmcConfig& config,
                                              int threads = 1) {
  config.validate();
  std::vector<PosteriorDraws> out(static_cast<std::size_t>(config.chains));
  std::vector<std::string> errors(static_cast<std::size_t>(config.chains));
  auto work = [&](int c) {
    McmcConfig chain_config = config;
    chain_config.seed = derive_seed(config.seed, static_cast<std::uint64_t>(c));
    try {
      out[static_cast<std::size_t>(c)] = run_chain(spec, data, chain_config);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(c)] = e.what();
    }
  };
  if (threads <= 1 || config.chains == 1) {
    for (int c = 0; c < config.chains; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int workers = std::min(threads, config.chains);
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&]() {
        for (int c = next.fetch_add(1); c < config.chains; c = next.fetch_add(1))
          work(c);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw NumericalError(e);
  return out;
}

}  // namespace mscos
