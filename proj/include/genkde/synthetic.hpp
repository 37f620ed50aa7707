#pragma once

#include <Eigen/Cholesky>

#include <cmath>
#include <vector>

#include "genkde/density.hpp"

namespace genkde {

struct LabeledSamples {
  SampleSet data;
  std::vector<int> labels;
};

/// Gaussian clusters in a 2-D source plane, embedded in R^d by a fixed
/// random linear map and blurred by isotropic ambient noise. The exact
/// generating density is available, which makes it a ground truth for
/// novelty scores.
class SyntheticBenchmark {
 public:
  struct Options {
    std::size_t ambient_dim = 10;
    std::size_t clusters = 3;
    double radius = 2.0;        // cluster centers on a circle in the source plane
    double cluster_std = 0.5;   // per-coordinate source spread
    double noise_std = 0.05;    // ambient noise
    double offset = 0.5;        // x = offset + scale * (A s + noise), inside (0, 1)
    double scale = 0.1;
    std::uint64_t map_seed = 7;
  };

  SyntheticBenchmark() : SyntheticBenchmark(Options{}) {}

  explicit SyntheticBenchmark(Options opt) : opt_(opt) {
    require(opt.ambient_dim >= 2 && opt.clusters >= 1, "synthetic: need d >= 2 and at least one cluster");
    require(opt.cluster_std > 0.0 && opt.noise_std > 0.0, "synthetic: spreads must be positive");
    require(opt.scale > 0.0, "synthetic: scale must be positive");
    Rng rng(opt.map_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto d = static_cast<Eigen::Index>(opt.ambient_dim);
    map_.resize(d, 2);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < 2; ++c) map_(r, c) = normal(rng) / std::sqrt(2.0);
    sources_ = TargetDistribution::ring(2, opt.clusters, opt.radius, opt.cluster_std);
    const Eigen::MatrixXd cov = opt.cluster_std * opt.cluster_std * map_ * map_.transpose() +
                                opt.noise_std * opt.noise_std * Eigen::MatrixXd::Identity(d, d);
    chol_ = cov.llt();
    if (chol_.info() != Eigen::Success) throw NumericError("synthetic: covariance not positive definite");
    const Eigen::MatrixXd L = chol_.matrixL();
    log_norm_ = -0.5 * static_cast<double>(d) * (kLog2Pi + 2.0 * std::log(opt.scale)) - L.diagonal().array().log().sum();
  }

  const Options& options() const { return opt_; }
  const Eigen::MatrixXd& map() const { return map_; }
  std::size_t dim() const { return opt_.ambient_dim; }

  /// Cluster center in data space.
  Vector center(std::size_t k) const {
    return (opt_.offset + opt_.scale * (map_ * sources_.components()[k].mean).array()).matrix();
  }

  LabeledSamples sample(std::size_t n, Rng& rng) const {
    require(n >= 1, "synthetic: n must be at least 1");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(opt_.clusters) - 1);
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim()));
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int k = pick(rng);
      labels[i] = k;
      Eigen::Vector2d s = sources_.components()[static_cast<std::size_t>(k)].mean;
      s[0] += opt_.cluster_std * normal(rng);
      s[1] += opt_.cluster_std * normal(rng);
      Vector xi = map_ * s;
      for (Eigen::Index c = 0; c < xi.size(); ++c) xi[c] = opt_.offset + opt_.scale * (xi[c] + opt_.noise_std * normal(rng));
      x.row(static_cast<Eigen::Index>(i)) = xi.transpose();
    }
    return {SampleSet(std::move(x)), std::move(labels)};
  }

  /// Exact log-density of the generating distribution at x.
  double log_density(std::span<const double> x) const {
    require(x.size() == dim(), "synthetic: dimension mismatch");
    const Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    std::vector<double> terms;
    for (std::size_t k = 0; k < opt_.clusters; ++k) {
      const Vector diff = ((xv - center(k)) / opt_.scale).eval();
      const Vector white = chol_.matrixL().solve(diff);
      terms.push_back(std::log(sources_.components()[k].weight) + log_norm_ - 0.5 * white.squaredNorm());
    }
    return log_sum_exp(terms);
  }

 private:
  Options opt_;
  Eigen::MatrixXd map_;
  TargetDistribution sources_ = TargetDistribution::standard_normal(2);
  Eigen::LLT<Eigen::MatrixXd> chol_;
  double log_norm_ = 0.0;
};

}  // namespace genkde
