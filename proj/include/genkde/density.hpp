#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genkde/core.hpp"

namespace genkde {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

inline std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// A non-empty set of points in R^l, one sample per row.
class SampleSet {
 public:
  explicit SampleSet(Matrix points) : points_(std::move(points)) {
    require(points_.rows() >= 1, "SampleSet: need at least one sample");
    require(points_.cols() >= 1, "SampleSet: dimension must be positive");
    require(points_.allFinite(), "SampleSet: non-finite entry");
  }

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }
  const Matrix& points() const { return points_; }
  std::span<const double> row(std::size_t i) const {
    return row_span(points_, static_cast<Eigen::Index>(i));
  }

  /// Rows [first, first + count).
  SampleSet slice(std::size_t first, std::size_t count) const {
    require(first + count <= size() && count > 0, "SampleSet::slice out of range");
    return SampleSet(points_.middleRows(static_cast<Eigen::Index>(first),
                                        static_cast<Eigen::Index>(count)));
  }

 private:
  Matrix points_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    d2 += d * d;
  }
  return d2;
}

/// log of (2 pi h^2)^(-l/2) exp(-|diff|^2 / (2 h^2)).
inline double log_gaussian_kernel(double h, std::span<const double> diff) {
  if (!(h > 0.0) || !std::isfinite(h)) throw InvalidArgument("bandwidth must be positive and finite");
  double d2 = 0.0;
  for (double d : diff) d2 += d * d;
  const double l = static_cast<double>(diff.size());
  return -0.5 * l * (kLog2Pi + 2.0 * std::log(h)) - d2 / (2.0 * h * h);
}

/// Softmax-weighted kernel moments at a query point. The weights are
/// w_i = G_h(q - z_i) / sum_j G_h(q - z_j), so the moments stay finite
/// even when every kernel value underflows.
struct KernelStats {
  double log_density;   // log (1/m) sum_i G_h(q - z_i)
  double mean_sq_dist;  // sum_i w_i |q - z_i|^2
};

/// Isotropic Gaussian KDE over a fixed support set.
class GaussianKde {
 public:
  GaussianKde(SampleSet support, double bandwidth)
      : support_(std::move(support)), h_(bandwidth) {
    if (!(h_ > 0.0) || !std::isfinite(h_))
      throw InvalidArgument("GaussianKde: bandwidth must be positive and finite");
    log_norm_ = -0.5 * static_cast<double>(dim()) * (kLog2Pi + 2.0 * std::log(h_)) -
                std::log(static_cast<double>(support_.size()));
  }

  const SampleSet& support() const { return support_; }
  double bandwidth() const { return h_; }
  std::size_t dim() const { return support_.dim(); }
  std::size_t size() const { return support_.size(); }

  double log_density(std::span<const double> q) const { return stats(q).log_density; }

  KernelStats stats(std::span<const double> q) const { return evaluate(q, nullptr); }

  /// Also writes sum_i w_i (q - z_i) into mean_offset (length l).
  KernelStats stats(std::span<const double> q, std::span<double> mean_offset) const {
    return evaluate(q, mean_offset.data());
  }

 private:
  KernelStats evaluate(std::span<const double> q, double* offset) const {
    if (q.size() != dim()) throw InvalidArgument("GaussianKde: query dimension mismatch");
    const std::size_t m = size(), l = dim();
    thread_local std::vector<double> d2;
    thread_local std::vector<double> logk;
    d2.resize(m);
    logk.resize(m);
    const double inv2h2 = 1.0 / (2.0 * h_ * h_);
    const double* z = support_.points().data();
    double hi = kNegInf;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      const double* zi = z + i * l;
      for (std::size_t k = 0; k < l; ++k) {
        const double d = q[k] - zi[k];
        s += d * d;
      }
      d2[i] = s;
      logk[i] = -s * inv2h2;
      hi = std::max(hi, logk[i]);
    }
    double sum = 0.0, wd2 = 0.0;
    if (offset) std::fill(offset, offset + l, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double w = std::exp(logk[i] - hi);
      sum += w;
      wd2 += w * d2[i];
      if (offset) {
        const double* zi = z + i * l;
        for (std::size_t k = 0; k < l; ++k) offset[k] += w * (q[k] - zi[k]);
      }
    }
    if (offset)
      for (std::size_t k = 0; k < l; ++k) offset[k] /= sum;
    return {hi + std::log(sum) + log_norm_, wd2 / sum};
  }

  SampleSet support_;
  double h_;
  double log_norm_;
};

inline double kde_log_density(const GaussianKde& kde, std::span<const double> query) {
  return kde.log_density(query);
}

/// One isotropic Gaussian component of a target mixture.
struct MixtureComponent {
  double weight;
  Vector mean;
  double stddev;
};

/// Analytic latent target: the standard normal or an isotropic Gaussian
/// mixture.
class TargetDistribution {
 public:
  static TargetDistribution standard_normal(std::size_t dim) {
    require(dim >= 1, "standard_normal: dimension must be positive");
    TargetDistribution t;
    t.standard_ = true;
    t.components_.push_back({1.0, Vector::Zero(static_cast<Eigen::Index>(dim)), 1.0});
    t.finish();
    return t;
  }

  static TargetDistribution mixture(std::vector<MixtureComponent> components) {
    require(!components.empty(), "mixture: need at least one component");
    const auto dim = components.front().mean.size();
    double total = 0.0;
    for (const auto& c : components) {
      require(c.mean.size() == dim && dim >= 1, "mixture: component dimensions differ");
      require(c.weight > 0.0 && c.weight <= 1.0, "mixture: weights must lie in (0, 1]");
      require(c.stddev > 0.0 && std::isfinite(c.stddev), "mixture: stddev must be positive");
      require(c.mean.allFinite(), "mixture: non-finite mean");
      total += c.weight;
    }
    require(std::abs(total - 1.0) <= 1e-12, "mixture: weights must sum to 1");
    TargetDistribution t;
    t.components_ = std::move(components);
    t.finish();
    return t;
  }

  /// k equal-weight components on a circle of the given radius in the first
  /// two coordinates (the first coordinate alone when dim == 1).
  static TargetDistribution ring(std::size_t dim, std::size_t k, double radius, double stddev) {
    require(dim >= 1 && k >= 1, "ring: need dim >= 1 and k >= 1");
    std::vector<MixtureComponent> comps;
    const double pi = std::acos(-1.0);
    for (std::size_t j = 0; j < k; ++j) {
      Vector mu = Vector::Zero(static_cast<Eigen::Index>(dim));
      const double a = 2.0 * pi * static_cast<double>(j) / static_cast<double>(k);
      if (dim == 1) {
        mu[0] = k == 1 ? 0.0 : -radius + 2.0 * radius * static_cast<double>(j) / static_cast<double>(k - 1);
      } else {
        mu[0] = radius * std::cos(a);
        mu[1] = radius * std::sin(a);
      }
      comps.push_back({1.0 / static_cast<double>(k), mu, stddev});
    }
    // the weights 1/k may not sum to exactly 1 in floating point
    double total = 0.0;
    for (const auto& c : comps) total += c.weight;
    comps.back().weight += 1.0 - total;
    return mixture(std::move(comps));
  }

  bool is_standard_normal() const { return standard_; }
  bool is_mixture() const { return !standard_; }
  std::size_t dim() const { return static_cast<std::size_t>(components_.front().mean.size()); }
  std::size_t component_count() const { return components_.size(); }
  const std::vector<MixtureComponent>& components() const { return components_; }

  /// The k-th component as a unimodal target.
  TargetDistribution component(std::size_t k) const {
    require(k < components_.size(), "component index out of range");
    auto c = components_[k];
    c.weight = 1.0;
    return mixture({c});
  }

  double component_log_density(std::size_t k, std::span<const double> q) const {
    const auto& c = components_[k];
    double d2 = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double d = q[i] - c.mean[static_cast<Eigen::Index>(i)];
      d2 += d * d;
    }
    return log_norm_[k] - d2 / (2.0 * c.stddev * c.stddev);
  }

  double log_density(std::span<const double> q) const {
    check_dim(q);
    if (components_.size() == 1) return std::log(components_[0].weight) + component_log_density(0, q);
    thread_local std::vector<double> terms;
    terms.resize(components_.size());
    for (std::size_t k = 0; k < components_.size(); ++k)
      terms[k] = std::log(components_[k].weight) + component_log_density(k, q);
    return log_sum_exp(terms);
  }

  /// Posterior component probabilities at q.
  std::vector<double> responsibilities(std::span<const double> q) const {
    check_dim(q);
    std::vector<double> r(components_.size());
    for (std::size_t k = 0; k < r.size(); ++k)
      r[k] = std::log(components_[k].weight) + component_log_density(k, q);
    const double lse = log_sum_exp(r);
    for (double& v : r) v = std::exp(v - lse);
    return r;
  }

  /// Gradient of log p_t at q, written into out.
  void score(std::span<const double> q, std::span<double> out) const {
    check_dim(q);
    std::fill(out.begin(), out.end(), 0.0);
    const auto resp = responsibilities(q);
    for (std::size_t k = 0; k < components_.size(); ++k) {
      const auto& c = components_[k];
      const double s = resp[k] / (c.stddev * c.stddev);
      for (std::size_t i = 0; i < q.size(); ++i) out[i] -= s * (q[i] - c.mean[static_cast<Eigen::Index>(i)]);
    }
  }

  SampleSet sample(std::size_t n, Rng& rng) const {
    require(n >= 1, "sample: n must be at least 1");
    const auto l = static_cast<Eigen::Index>(dim());
    Matrix out(static_cast<Eigen::Index>(n), l);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      std::size_t k = 0;
      if (components_.size() > 1) {
        const double u = unif(rng);
        double acc = 0.0;
        k = components_.size() - 1;
        for (std::size_t j = 0; j < components_.size(); ++j) {
          acc += components_[j].weight;
          if (u < acc) {
            k = j;
            break;
          }
        }
      }
      const auto& c = components_[k];
      for (Eigen::Index i = 0; i < l; ++i) out(r, i) = c.mean[i] + c.stddev * normal(rng);
    }
    return SampleSet(std::move(out));
  }

 private:
  TargetDistribution() = default;

  void finish() {
    const double l = static_cast<double>(dim());
    log_norm_.clear();
    for (const auto& c : components_)
      log_norm_.push_back(-0.5 * l * (kLog2Pi + 2.0 * std::log(c.stddev)));
  }

  void check_dim(std::span<const double> q) const {
    if (q.size() != dim()) throw InvalidArgument("target: query dimension mismatch");
  }

  bool standard_ = false;
  std::vector<MixtureComponent> components_;
  std::vector<double> log_norm_;
};

inline double target_log_density(const TargetDistribution& t, std::span<const double> query) {
  return t.log_density(query);
}

inline SampleSet sample(const TargetDistribution& t, std::size_t n, Rng& rng) { return t.sample(n, rng); }

inline Vector sample_mean(const SampleSet& s) { return s.points().colwise().mean().transpose(); }

/// Unbiased (m - 1) sample covariance.
inline Eigen::MatrixXd sample_covariance(const SampleSet& s) {
  require(s.size() >= 2, "sample_covariance: need at least two samples");
  const Matrix centered = s.points().rowwise() - s.points().colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(s.size() - 1);
}

/// Affine PCA whitening map x -> (x - mean) V diag(lambda)^(-1/2).
struct Whitening {
  Vector mean;
  Eigen::MatrixXd transform;  // l x l, applied on the right of row vectors

  static constexpr double kEigenFloor = 1e-8;

  static Whitening fit(const SampleSet& s) {
    require(s.size() > s.dim(), "whiten: need more samples than dimensions");
    const Eigen::MatrixXd cov = sample_covariance(s);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("whiten: eigendecomposition failed");
    Vector lambda = eig.eigenvalues();
    if (lambda.maxCoeff() < kEigenFloor) throw NumericError("whiten: degenerate covariance");
    lambda = lambda.cwiseMax(kEigenFloor);
    return {sample_mean(s), eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal()};
  }

  SampleSet apply(const SampleSet& s) const {
    require(s.dim() == static_cast<std::size_t>(mean.size()), "whiten: dimension mismatch");
    Matrix out = (s.points().rowwise() - mean.transpose()) * transform;
    return SampleSet(std::move(out));
  }
};

inline SampleSet whiten(const SampleSet& s) { return Whitening::fit(s).apply(s); }

}  // namespace genkde
