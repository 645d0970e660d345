#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mscos/common.hpp"

namespace mscos {

// Root mean square error over the pairwise non-missing entries.
inline double rmse(const Eigen::VectorXd& truth, const Eigen::VectorXd& pred) {
  if (truth.size() != pred.size())
    throw std::invalid_argument("rmse: length mismatch");
  double sum = 0.0;
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    if (std::isfinite(truth[i]) && std::isfinite(pred[i])) {
      const double d = truth[i] - pred[i];
      sum += d * d;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("rmse: no non-missing pairs");
  return std::sqrt(sum / static_cast<double>(n));
}

struct WaicResult {
  double waic = 0.0;
  double lppd = 0.0;
  double p_waic = 0.0;
};

// WAIC with the variance penalty (pWAIC2): lppd from max-shifted
// log-mean-exp per observation, p_waic the sample variance of the
// pointwise log likelihoods over draws.
inline WaicResult waic(const Eigen::MatrixXd& ll_matrix) {
  const Eigen::Index n_draws = ll_matrix.rows();
  const Eigen::Index n_obs = ll_matrix.cols();
  if (n_draws < 2) throw std::invalid_argument("waic: need at least 2 draws");
  if (n_obs < 1) throw std::invalid_argument("waic: need at least 1 observation");

  WaicResult out;
  for (Eigen::Index i = 0; i < n_obs; ++i) {
    const auto col = ll_matrix.col(i);
    const double shift = col.maxCoeff();
    out.lppd += shift + std::log((col.array() - shift).exp().mean());
    const double mean = col.mean();
    out.p_waic += (col.array() - mean).square().sum() /
                  static_cast<double>(n_draws - 1);
  }
  out.waic = -2.0 * (out.lppd - out.p_waic);
  return out;
}

// Classic potential scale reduction factor over m chains of equal length n:
// sqrt((((n-1)/n) W + B/n) / W), floored at 1. A zero-variance chain yields
// +inf (degenerate-chain flag).
inline double gelman_rubin(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.size() < 2)
    throw std::invalid_argument("gelman_rubin: need at least 2 chains");
  const Eigen::Index n = chains[0].size();
  if (n < 10) throw std::invalid_argument("gelman_rubin: chains too short");
  for (const auto& c : chains)
    if (c.size() != n)
      throw std::invalid_argument("gelman_rubin: unequal chain lengths");

  const double m = static_cast<double>(chains.size());
  const double nn = static_cast<double>(n);
  double w = 0.0;
  Eigen::VectorXd means(chains.size());
  for (std::size_t j = 0; j < chains.size(); ++j) {
    const double mean = chains[j].mean();
    means[static_cast<Eigen::Index>(j)] = mean;
    w += (chains[j].array() - mean).square().sum() / (nn - 1.0);
  }
  w /= m;
  if (!(w > 0.0)) return std::numeric_limits<double>::infinity();
  const double grand = means.mean();
  const double b = nn * (means.array() - grand).square().sum() / (m - 1.0);
  const double var_plus = (nn - 1.0) / nn * w + b / nn;
  return std::max(1.0, std::sqrt(var_plus / w));
}

// Flat metric bundle for one evaluated run; written as JSON and as a flat
// CSV row for tabulation across scenario runs.
struct MetricReport {
  std::map<std::string, double> rmse;   // e.g. "y1_partition", "y2_observed"
  std::map<std::string, WaicResult> waic;  // "y1", "y2", "combined"
  std::map<std::string, double> gelman_rubin;  // per parameter
  std::map<std::string, std::string> config;   // effective config echo
};

}  // namespace mscos
