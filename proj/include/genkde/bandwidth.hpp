#pragma once

#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "genkde/divergence.hpp"

namespace genkde {

struct BandwidthResult {
  double h_opt = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  // h_opt >= 1 under a standard-normal target, or the solver ran into the
  // top of its admissible range.
  bool saturated = false;
};

/// Mean and sample standard deviation of a solver over independent trials.
struct BandwidthSummary {
  double mean = 0.0;
  double stddev = 0.0;
  bool saturated = false;
  std::vector<BandwidthResult> trials;
};

/// The three sample sets a bandwidth solve works on: the KDE support and
/// two evaluation batches, all drawn from the target and each of size m.
struct BandwidthProblem {
  SampleSet support;
  SampleSet encoded;
  SampleSet reference;
};

inline BandwidthProblem draw_bandwidth_problem(const TargetDistribution& target, std::size_t m, Rng& rng) {
  auto support = target.sample(m, rng);
  auto encoded = target.sample(m, rng);
  auto reference = target.sample(m, rng);
  return {std::move(support), std::move(encoded), std::move(reference)};
}

inline double bandwidth_derivative(const BandwidthProblem& p, const TargetDistribution& target, double h) {
  return djsd_dh(GaussianKde(p.support, h), target, p.encoded, p.reference);
}

struct RootTrapOptions {
  double lower = 0.01;
  double upper = 2.0;
  double tolerance = 1e-3;  // final bracket width
};

inline bool saturates(const TargetDistribution& target, double h, double upper) {
  return (target.is_standard_normal() && h >= 1.0) || h >= upper;
}

/// Bisection on the sign of dJSD/dh inside [lower, upper].
inline BandwidthResult solve_root_trap(const BandwidthProblem& p, const TargetDistribution& target,
                                       const RootTrapOptions& opt = {}) {
  require(opt.lower > 0.0 && opt.upper > opt.lower && opt.tolerance > 0.0, "root trap: invalid bracket");
  double lo = opt.lower, hi = opt.upper;
  const double d_hi = bandwidth_derivative(p, target, hi);
  if (d_hi > 0.0) return {hi, 1, true, true};
  const double d_lo = bandwidth_derivative(p, target, lo);
  if (d_lo < 0.0) {
    std::ostringstream msg;
    msg << "root trap: no sign change in [" << lo << ", " << hi << "], derivative " << d_lo << " at lower end";
    throw NumericError(msg.str());
  }
  std::size_t evals = 2;
  while (hi - lo >= opt.tolerance) {
    const double mid = 0.5 * (lo + hi);
    (bandwidth_derivative(p, target, mid) > 0.0 ? lo : hi) = mid;
    ++evals;
  }
  const double h = 0.5 * (lo + hi);
  return {h, evals, true, saturates(target, h, opt.upper)};
}

struct FixedPointOptions {
  double h0 = 0.5;
  double tolerance = 1e-4;
  std::size_t max_iterations = 100;
  double damping = 0.5;  // step multiplier applied each time dh changes sign
  double upper = 2.0;
};

/// Damped iteration h <- sqrt(next(h)). next returns the proposed h^2; a
/// non-positive proposal halves h instead.
template <typename Next>
BandwidthResult iterate_fixed_point(Next&& next, const FixedPointOptions& opt) {
  require(opt.h0 > 0.0 && opt.h0 <= opt.upper, "fixed point: h0 must lie in (0, upper]");
  double h = opt.h0, step = 1.0, prev_delta = 0.0;
  for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
    const double h2 = next(h);
    const double proposal = h2 > 0.0 ? std::sqrt(h2) : 0.5 * h;
    const double delta = proposal - h;
    if (delta * prev_delta < 0.0) step *= opt.damping;
    prev_delta = delta;
    const double h_new = std::min(opt.upper, h + step * delta);
    if (!(h_new > 0.0) || !std::isfinite(h_new)) throw NumericError("fixed point: bandwidth left (0, inf)");
    const bool done = std::abs(h_new - h) < opt.tolerance;
    h = h_new;
    if (done) return {h, it, true, false};
  }
  return {h, opt.max_iterations, false, false};
}

/// Fixed-point form of dJSD/dh = 0: h^2 <- numerator / factor.
inline BandwidthResult solve_fixed_point(const BandwidthProblem& p, const TargetDistribution& target,
                                         const FixedPointOptions& opt = {}) {
  auto r = iterate_fixed_point(
      [&](double h) {
        const auto terms = jsd_bandwidth_update_terms(GaussianKde(p.support, h), target, p.encoded, p.reference);
        if (!(terms.factor > 0.0)) {
          std::ostringstream msg;
          msg << "fixed point: non-positive factor " << terms.factor << " at h = " << h;
          throw NumericError(msg.str());
        }
        return terms.numerator / terms.factor;
      },
      opt);
  r.saturated = saturates(target, r.h_opt, opt.upper);
  return r;
}

inline BandwidthSummary summarize(std::vector<BandwidthResult> trials, const TargetDistribution& target) {
  BandwidthSummary s;
  std::vector<double> hs;
  for (const auto& t : trials) hs.push_back(t.h_opt);
  s.mean = stable_mean(hs);
  if (hs.size() > 1) {
    std::vector<double> sq;
    for (double h : hs) sq.push_back((h - s.mean) * (h - s.mean));
    s.stddev = std::sqrt(stable_sum(sq) / static_cast<double>(hs.size() - 1));
  }
  s.saturated = target.is_standard_normal() ? s.mean >= 1.0 : false;
  for (const auto& t : trials) s.saturated = s.saturated || (!target.is_standard_normal() && t.saturated);
  s.trials = std::move(trials);
  return s;
}

inline void check_bandwidth_request(const TargetDistribution& target, std::size_t m, std::size_t n_trials) {
  require(target.dim() >= 1, "bandwidth: dimension must be positive");
  require(m >= 10, "bandwidth: need at least 10 samples");
  require(n_trials >= 1, "bandwidth: need at least one trial");
}

/// Root trapping over independent trials; trial t draws from a sub-seed of
/// `seed`, so results do not depend on trial order.
inline BandwidthSummary optimal_bandwidth_root_trap(const TargetDistribution& target, std::size_t m,
                                                    std::size_t n_trials, std::uint64_t seed,
                                                    const RootTrapOptions& opt = {}) {
  check_bandwidth_request(target, m, n_trials);
  std::vector<BandwidthResult> trials;
  for (std::size_t t = 0; t < n_trials; ++t) {
    Rng rng(derive_seed(seed, t));
    trials.push_back(solve_root_trap(draw_bandwidth_problem(target, m, rng), target, opt));
  }
  return summarize(std::move(trials), target);
}

/// Single-trial fixed point on freshly drawn sets.
inline BandwidthResult optimal_bandwidth_fixed_point(const TargetDistribution& target, std::size_t m, Rng& rng,
                                                     const FixedPointOptions& opt = {}) {
  check_bandwidth_request(target, m, 1);
  return solve_fixed_point(draw_bandwidth_problem(target, m, rng), target, opt);
}

inline BandwidthSummary optimal_bandwidth_fixed_point(const TargetDistribution& target, std::size_t m,
                                                      std::size_t n_trials, std::uint64_t seed,
                                                      const FixedPointOptions& opt = {}) {
  check_bandwidth_request(target, m, n_trials);
  std::vector<BandwidthResult> trials;
  for (std::size_t t = 0; t < n_trials; ++t) {
    Rng rng(derive_seed(seed, t));
    trials.push_back(solve_fixed_point(draw_bandwidth_problem(target, m, rng), target, opt));
  }
  return summarize(std::move(trials), target);
}

// --- leave-one-out kernel sums (entropy bandwidth and entropy estimate) ---

struct LeaveOneOutStats {
  double log_mean_kernel;  // log (1/(m-1)) sum_{j != i} G_h(z_j - z_i)
  double mean_sq_dist;     // kernel-weighted mean of |z_j - z_i|^2 over j != i
};

inline LeaveOneOutStats leave_one_out_stats(const SampleSet& s, std::size_t i, double h) {
  const std::size_t m = s.size(), l = s.dim();
  thread_local std::vector<double> logk, d2;
  logk.resize(m);
  d2.resize(m);
  const double inv2h2 = 1.0 / (2.0 * h * h);
  const double* z = s.points().data();
  const double* zi = z + i * l;
  double hi = kNegInf;
  for (std::size_t j = 0; j < m; ++j) {
    if (j == i) continue;
    const double* zj = z + j * l;
    double acc = 0.0;
    for (std::size_t k = 0; k < l; ++k) {
      const double d = zj[k] - zi[k];
      acc += d * d;
    }
    d2[j] = acc;
    logk[j] = -acc * inv2h2;
    hi = std::max(hi, logk[j]);
  }
  double sum = 0.0, wd2 = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    if (j == i) continue;
    const double w = std::exp(logk[j] - hi);
    sum += w;
    wd2 += w * d2[j];
  }
  const double log_norm = -0.5 * static_cast<double>(l) * (kLog2Pi + 2.0 * std::log(h));
  return {hi + std::log(sum) - std::log(static_cast<double>(m - 1)) + log_norm, wd2 / sum};
}

/// Right-hand side of the entropy fixed point:
/// (1/(l m)) sum_i [sum_{j!=i} |z_j - z_i|^2 G_h / sum_{j!=i} G_h].
inline double entropy_bandwidth_update(const SampleSet& s, double h) {
  std::vector<double> msd(s.size());
  parallel_for(s.size(), [&](std::size_t i) { msd[i] = leave_one_out_stats(s, i, h).mean_sq_dist; });
  return stable_sum(msd) / static_cast<double>(s.dim() * s.size());
}

/// Bandwidth that minimizes the leave-one-out KDE entropy of s.
inline BandwidthResult entropy_bandwidth_fixed_point(const SampleSet& s, FixedPointOptions opt = {}) {
  require(s.size() >= 3, "entropy bandwidth: need at least 3 samples");
  bool spread = false;
  for (std::size_t i = 1; i < s.size() && !spread; ++i) spread = squared_distance(s.row(0), s.row(i)) > 0.0;
  if (!spread) throw NumericError("entropy bandwidth: all pairwise distances are zero");
  opt.upper = std::numeric_limits<double>::max();
  return iterate_fixed_point([&](double h) { return entropy_bandwidth_update(s, h); }, opt);
}

// --- table output ---

struct BandwidthCell {
  std::size_t dim;
  std::size_t samples;
  BandwidthSummary summary;
};

/// Rows by dimension, columns by sample size, cells "mean±std", and a final
/// column listing the sample sizes whose cell saturated.
inline void write_bandwidth_table(std::ostream& os, const std::vector<BandwidthCell>& cells) {
  std::set<std::size_t> dims, sizes;
  std::map<std::pair<std::size_t, std::size_t>, const BandwidthSummary*> at;
  for (const auto& c : cells) {
    dims.insert(c.dim);
    sizes.insert(c.samples);
    at[{c.dim, c.samples}] = &c.summary;
  }
  os << "l";
  for (auto m : sizes) os << ',' << m;
  os << ",saturated\n";
  for (auto l : dims) {
    os << l;
    std::string sat;
    for (auto m : sizes) {
      os << ',';
      const auto it = at.find({l, m});
      if (it == at.end()) continue;
      os << std::fixed << std::setprecision(3) << it->second->mean << "±" << it->second->stddev;
      if (it->second->saturated) sat += (sat.empty() ? "" : ";") + std::to_string(m);
    }
    os << ',' << sat << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

/// One row per cell: l,m,mean,std,trials,saturated.
inline void write_bandwidth_long(std::ostream& os, const std::vector<BandwidthCell>& cells) {
  os << "l,m,mean,std,trials,saturated\n";
  for (const auto& c : cells)
    os << c.dim << ',' << c.samples << ',' << std::fixed << std::setprecision(6) << c.summary.mean << ','
       << c.summary.stddev << ',' << c.summary.trials.size() << ',' << (c.summary.saturated ? 1 : 0) << '\n';
  os.unsetf(std::ios::floatfield);
}

}  // namespace genkde
