#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mscos/model.hpp"
#include "mscos/rng.hpp"
#include "mscos/sampler.hpp"

namespace mscos {

// Posterior predictive summaries per target unit: mean, sd and the central
// 95% interval, for each active variable.
struct PredictionResult {
  std::vector<std::string> unit_ids;
  Eigen::VectorXd mean1, sd1, lo1, hi1;
  Eigen::VectorXd mean2, sd2, lo2, hi2;
  Eigen::MatrixXd draws1;  // n_draws x n_units; kept only on request
  Eigen::MatrixXd draws2;
  bool has_var1 = false;
  bool has_var2 = false;
};

struct PredictOptions {
  std::uint64_t seed = 0;
  bool keep_draws = false;
  // Summarize the latent mean surface instead of predictive realizations
  // (the alternative RMSE target; default follows composition sampling).
  bool use_latent_mean = false;
  int thin = 1;     // additional thinning over retained draws
  int threads = 1;  // draws are independent given their substream seeds
};

namespace detail {

// Type-7 (linear interpolation) empirical quantile of unsorted values.
inline double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  const double h = p * (static_cast<double>(v.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Summary {
  Eigen::VectorXd mean, sd, lo, hi;
};

inline Summary summarize(const Eigen::MatrixXd& draws) {
  const Eigen::Index n_draws = draws.rows();
  const Eigen::Index n_units = draws.cols();
  Summary out;
  out.mean = draws.colwise().mean();
  out.sd.resize(n_units);
  out.lo.resize(n_units);
  out.hi.resize(n_units);
  for (Eigen::Index u = 0; u < n_units; ++u) {
    const double m = out.mean[u];
    out.sd[u] = n_draws > 1
                    ? std::sqrt((draws.col(u).array() - m).square().sum() /
                                static_cast<double>(n_draws - 1))
                    : 0.0;
    std::vector<double> col(draws.col(u).data(), draws.col(u).data() + n_draws);
    out.lo[u] = quantile(col, 0.025);
    out.hi[u] = quantile(std::move(col), 0.975);
  }
  return out;
}

}  // namespace detail

// DA-scale latent mean surfaces of the two variables at one posterior draw.
inline Eigen::VectorXd predictive_mean1(const ModelSpec& spec, const ChainState& s) {
  if (spec.kind == ModelKind::MCAR)
    return (s.beta1 + s.process.head(spec.n3).array()).matrix();
  return (s.beta1 + (spec.basis1->g * s.process).array()).matrix();
}

inline Eigen::VectorXd predictive_mean2(const ModelSpec& spec, const ChainState& s) {
  if (spec.kind == ModelKind::MCAR) {
    const auto psi2 = spec.arity == Arity::Bivariate
                          ? s.process.tail(spec.n3)
                          : s.process.head(spec.n3);
    return (s.beta2 + psi2.array()).matrix();
  }
  const Eigen::MatrixXd& g =
      spec.kind == ModelKind::OH ? spec.basis1->g : spec.basis2->g;
  if (spec.kind == ModelKind::OH)
    return (s.beta0 + s.beta2 * (s.beta1 + (g * s.process).array())).matrix();
  return (s.beta2 + (g * s.process).array()).matrix();
}

// Change-of-support prediction: per retained draw, sample Y_A from the
// model's predictive normal on the partition scale, optionally aggregate
// onto a user target support, then summarize. Per-draw RNG substreams keep
// the result deterministic and order-independent.
inline PredictionResult cos_predict(const ModelSpec& spec,
                                    const PosteriorDraws& draws,
                                    const PredictOptions& options = {},
                                    const PartitionMatrix* target = nullptr) {
  if (draws.n_draws() < 1) throw std::invalid_argument("cos_predict: no draws");
  if (draws.process.cols() != spec.process_dim())
    throw std::invalid_argument("cos_predict: draws do not match the model spec");
  if (target && target->cols() != spec.n3)
    throw std::invalid_argument("cos_predict: target partition matrix must map "
                                "the partition scale");

  const Eigen::Index n_units = target ? target->rows() : spec.n3;
  std::vector<Eigen::Index> rows;
  for (Eigen::Index s = 0; s < draws.n_draws(); s += options.thin) rows.push_back(s);
  const auto n_kept = static_cast<Eigen::Index>(rows.size());

  PredictionResult out;
  out.has_var1 = spec.uses_var1();
  out.has_var2 = spec.uses_var2();
  out.unit_ids = target ? target->coarse_ids()
                        : (spec.uses_var1() ? spec.p1.fine_ids() : spec.p2.fine_ids());

  Eigen::MatrixXd draws1, draws2;
  if (out.has_var1) draws1.resize(n_kept, n_units);
  if (out.has_var2) draws2.resize(n_kept, n_units);

  // Per-draw substreams: each retained draw k uses an independent RNG
  // derived from (seed, source row), so the result is the same regardless
  // of the worker count or iteration order.
  auto predict_one = [&](Eigen::Index k) {
    const ChainState s = state_at(spec, draws, rows[static_cast<std::size_t>(k)]);
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(rows[static_cast<std::size_t>(k)])));
    if (out.has_var1) {
      Eigen::VectorXd ya = predictive_mean1(spec, s);
      if (!options.use_latent_mean) {
        const double sd = std::sqrt(std::max(s.sigma2_1, 1e-12));
        ya += sd * rng.standard_normal(spec.n3);
      }
      if (target)
        draws1.row(k) = (target->matrix() * ya).transpose();
      else
        draws1.row(k) = ya.transpose();
    }
    if (out.has_var2) {
      Eigen::VectorXd ya = predictive_mean2(spec, s);
      if (!options.use_latent_mean) {
        const double sd = std::sqrt(std::max(s.sigma2_2, 1e-12));
        ya += sd * rng.standard_normal(spec.n3);
      }
      if (target)
        draws2.row(k) = (target->matrix() * ya).transpose();
      else
        draws2.row(k) = ya.transpose();
    }
  };
  if (options.threads <= 1) {
    for (Eigen::Index k = 0; k < n_kept; ++k) predict_one(k);
  } else {
    std::atomic<Eigen::Index> next{0};
    std::vector<std::thread> pool;
    const int workers =
        std::min<Eigen::Index>(options.threads, n_kept);
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&]() {
        for (Eigen::Index k = next.fetch_add(1); k < n_kept; k = next.fetch_add(1))
          predict_one(k);
      });
    for (auto& th : pool) th.join();
  }

  if (out.has_var1) {
    const detail::Summary s1 = detail::summarize(draws1);
    out.mean1 = s1.mean; out.sd1 = s1.sd; out.lo1 = s1.lo; out.hi1 = s1.hi;
    if (options.keep_draws) out.draws1 = std::move(draws1);
  }
  if (out.has_var2) {
    const detail::Summary s2 = detail::summarize(draws2);
    out.mean2 = s2.mean; out.sd2 = s2.sd; out.lo2 = s2.lo; out.hi2 = s2.hi;
    if (options.keep_draws) out.draws2 = std::move(draws2);
  }
  return out;
}

struct LogLikMatrix {
  Eigen::MatrixXd values;  // n_draws x n_obs
  Eigen::Index n_obs1 = 0;  // leading columns belong to variable 1
  Eigen::Index n_obs2 = 0;
};

// Observed-data pointwise log likelihood at every retained draw; feeds WAIC.
inline LogLikMatrix predictive_ll_matrix(const ModelSpec& spec,
                                         const PosteriorDraws& draws,
                                         const Dataset& data) {
  validate_dataset(spec, data);
  LogLikMatrix out;
  out.n_obs1 = spec.uses_var1()
                   ? static_cast<Eigen::Index>(data.observed1().size())
                   : 0;
  out.n_obs2 = spec.uses_var2()
                   ? static_cast<Eigen::Index>(data.observed2().size())
                   : 0;
  out.values.resize(draws.n_draws(), out.n_obs1 + out.n_obs2);
  for (Eigen::Index s = 0; s < draws.n_draws(); ++s) {
    const ChainState state = state_at(spec, draws, s);
    out.values.row(s) = log_likelihood_pointwise(spec, state, data).transpose();
  }
  return out;
}

}  // namespace mscos
