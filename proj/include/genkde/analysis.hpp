#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <vector>

#include "genkde/bandwidth.hpp"
#include "genkde/divergence.hpp"
#include "genkde/nn.hpp"

namespace genkde {

/// Leave-one-out KDE entropy in nats:
/// -(1/m) sum_i log (1/(m-1)) sum_{j != i} G_h(z_j - z_i).
inline double kde_entropy(const SampleSet& s, double h) {
  require(s.size() >= 2, "kde_entropy: need at least two samples");
  require(h > 0.0 && std::isfinite(h), "kde_entropy: bandwidth must be positive");
  std::vector<double> logs(s.size());
  parallel_for(s.size(), [&](std::size_t i) { logs[i] = leave_one_out_stats(s, i, h).log_mean_kernel; });
  return -stable_mean(logs);
}

/// Entropy of a standard normal in l dimensions, (l/2) ln(2 pi e).
inline double normal_entropy(std::size_t l) { return 0.5 * static_cast<double>(l) * (kLog2Pi + 1.0); }

struct EntropyReport {
  double entropy;
  double bandwidth;
  bool converged;
};

/// Entropy at the entropy-optimal bandwidth, optionally whitening first.
inline EntropyReport entropy_at_optimal_bandwidth(const SampleSet& s, bool whiten_first = false) {
  const SampleSet data = whiten_first ? whiten(s) : s;
  const auto bw = entropy_bandwidth_fixed_point(data);
  return {kde_entropy(data, bw.h_opt), bw.h_opt, bw.converged};
}

struct LatentVarianceLaw {
  Vector mean;
  Vector per_dim_variance;
  double predicted;    // 1 - h^2
  double max_abs_dev;  // max_k |variance_k - predicted|
};

/// Encodes holdout and compares each latent coordinate's variance with the
/// stationary value 1 - h^2 expected under a standard-normal target.
inline LatentVarianceLaw latent_variance_law_check(const Mlp& encoder, const SampleSet& holdout, double h) {
  require(h > 0.0, "variance law: bandwidth must be positive");
  if (h >= 1.0) throw InvalidArgument("variance law: degenerate for h >= 1 (predicted variance 1 - h^2 <= 0)");
  require(holdout.size() >= 2, "variance law: need at least two holdout samples");
  const SampleSet codes(encoder.forward(holdout.points()));
  LatentVarianceLaw r;
  r.mean = sample_mean(codes);
  r.per_dim_variance = sample_covariance(codes).diagonal();
  r.predicted = 1.0 - h * h;
  r.max_abs_dev = (r.per_dim_variance.array() - r.predicted).abs().maxCoeff();
  return r;
}

struct Correlation {
  double r;
  double p_value;  // two-sided, t-distribution with n - 2 degrees of freedom
};

inline Correlation pearson(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), "pearson: series lengths differ");
  require(x.size() >= 3, "pearson: need at least three points");
  const double n = static_cast<double>(x.size());
  const double mx = stable_mean(x), my = stable_mean(y);
  std::vector<double> sxy(x.size()), sxx(x.size()), syy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy[i] = (x[i] - mx) * (y[i] - my);
    sxx[i] = (x[i] - mx) * (x[i] - mx);
    syy[i] = (y[i] - my) * (y[i] - my);
  }
  const double vx = stable_sum(sxx), vy = stable_sum(syy);
  if (!(vx > 0.0) || !(vy > 0.0)) throw InvalidArgument("pearson: zero-variance input");
  const double r = std::clamp(stable_sum(sxy) / std::sqrt(vx * vy), -1.0, 1.0);
  if (std::abs(r) == 1.0) return {r, 0.0};
  const double t = r * std::sqrt((n - 2.0) / (1.0 - r * r));
  const boost::math::students_t dist(n - 2.0);
  return {r, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)))};
}

/// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline Correlation spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

// --- separation study ---

struct CorrelationStudyConfig {
  std::vector<std::size_t> dims{5};
  std::vector<std::size_t> sample_sizes{1000};
  std::vector<double> separations{0, 1, 2, 3, 4, 5, 6};
  std::size_t trials = 20;
  std::uint64_t seed = 42;
  std::size_t bandwidth_trials = 10;
  std::map<std::pair<std::size_t, std::size_t>, double> bandwidths;  // (l, m) overrides

  void validate() const {
    require(!dims.empty() && !sample_sizes.empty(), "study: need at least one dimension and sample size");
    for (auto l : dims) require(l >= 1, "study: dimensions must be positive");
    for (auto m : sample_sizes) require(m >= 10, "study: sample sizes must be at least 10");
    require(separations.size() >= 2, "study: need at least two separations");
    require(std::is_sorted(separations.begin(), separations.end()), "study: separations must be sorted");
    require(separations.front() == 0.0, "study: separations must include 0");
    require(separations.back() <= 6.0 && separations.front() >= 0.0, "study: separations must lie in [0, 6]");
    require(trials >= 2, "study: need at least two trials");
  }
};

struct StudyObservation {
  std::size_t dim, samples;
  double separation;
  std::size_t trial;
  double jsd;
};

struct SeparationStats {
  double separation, mean, stddev;
};

struct StudyCell {
  std::size_t dim, samples;
  double bandwidth;
  Correlation correlation;
  std::vector<SeparationStats> per_separation;
};

struct StudyResult {
  std::vector<StudyObservation> observations;
  std::vector<StudyCell> cells;
};

/// Two equal-weight unit Gaussians at +-(s/2) e_1.
inline TargetDistribution separated_pair(std::size_t l, double s) {
  Vector a = Vector::Zero(static_cast<Eigen::Index>(l)), b = a;
  a[0] = -0.5 * s;
  b[0] = 0.5 * s;
  return TargetDistribution::mixture({{0.5, a, 1.0}, {0.5, b, 1.0}});
}

/// Estimator for one (l, m, s, trial) observation.
using StudyEstimator = std::function<double(std::size_t l, std::size_t m, double s, double h, Rng& rng)>;

/// Normalized KDE-JSD between a whitened two-mode set and the standard
/// normal. Support and evaluation batch are separate draws, each whitened
/// on its own so both have exactly identity sample covariance.
inline double separation_jsd(std::size_t l, std::size_t m, double s, double h, Rng& rng) {
  const auto source = separated_pair(l, s);
  const auto normal = TargetDistribution::standard_normal(l);
  const SampleSet support = whiten(source.sample(m, rng));
  const SampleSet encoded = whiten(source.sample(m, rng));
  const SampleSet reference = normal.sample(m, rng);
  return jsd_estimate(GaussianKde(support, h), normal, encoded, reference).normalized;
}

inline StudyResult run_correlation_study(const CorrelationStudyConfig& cfg, const StudyEstimator& estimator = separation_jsd) {
  cfg.validate();
  StudyResult out;
  std::uint64_t cell_index = 0;
  for (auto l : cfg.dims)
    for (auto m : cfg.sample_sizes) {
      const auto normal = TargetDistribution::standard_normal(l);
      double h;
      if (const auto it = cfg.bandwidths.find({l, m}); it != cfg.bandwidths.end())
        h = it->second;
      else
        h = optimal_bandwidth_root_trap(normal, m, cfg.bandwidth_trials, derive_seed(cfg.seed, 1000 + cell_index)).mean;
      StudyCell cell{l, m, h, {}, {}};
      std::vector<double> xs, ys;
      for (std::size_t si = 0; si < cfg.separations.size(); ++si) {
        const double s = cfg.separations[si];
        std::vector<double> vals;
        for (std::size_t t = 0; t < cfg.trials; ++t) {
          Rng rng(derive_seed(derive_seed(cfg.seed, cell_index), si * cfg.trials + t));
          const double v = estimator(l, m, s, h, rng);
          out.observations.push_back({l, m, s, t, v});
          vals.push_back(v);
          xs.push_back(s);
          ys.push_back(v);
        }
        const double mean = stable_mean(vals);
        std::vector<double> sq;
        for (double v : vals) sq.push_back((v - mean) * (v - mean));
        cell.per_separation.push_back({s, mean, std::sqrt(stable_sum(sq) / static_cast<double>(vals.size() - 1))});
      }
      cell.correlation = pearson(xs, ys);
      out.cells.push_back(std::move(cell));
      ++cell_index;
    }
  return out;
}

inline void write_study_observations(std::ostream& os, const StudyResult& r) {
  os << "l,m,s,trial,jsd\n" << std::setprecision(10);
  for (const auto& o : r.observations) os << o.dim << ',' << o.samples << ',' << o.separation << ',' << o.trial << ',' << o.jsd << '\n';
}

inline void write_study_summary(std::ostream& os, const StudyResult& r) {
  os << "l,m,r,p\n" << std::setprecision(10);
  for (const auto& c : r.cells) os << c.dim << ',' << c.samples << ',' << c.correlation.r << ',' << c.correlation.p_value << '\n';
}

inline void write_study_separations(std::ostream& os, const StudyResult& r) {
  os << "l,m,h,s,mean_jsd,std_jsd\n" << std::setprecision(10);
  for (const auto& c : r.cells)
    for (const auto& s : c.per_separation)
      os << c.dim << ',' << c.samples << ',' << c.bandwidth << ',' << s.separation << ',' << s.mean << ',' << s.stddev << '\n';
}

}  // namespace genkde
