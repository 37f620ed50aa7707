#pragma once

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <vector>

#include "genkde/density.hpp"
#include "genkde/nn.hpp"

namespace genkde {

class SingularManifold : public NumericError {
 public:
  using NumericError::NumericError;
};

/// d x l Jacobian of the decoder at z. The point is replicated once per
/// output coordinate so a single batched reverse pass with an identity
/// output gradient yields every row.
inline Eigen::MatrixXd decoder_jacobian(const Mlp& decoder, std::span<const double> z) {
  require(z.size() == decoder.input_dim(), "decoder_jacobian: latent dimension mismatch");
  const auto d = static_cast<Eigen::Index>(decoder.output_dim());
  Matrix batch(d, static_cast<Eigen::Index>(z.size()));
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < batch.cols(); ++c) batch(r, c) = z[static_cast<std::size_t>(c)];
  require(batch.allFinite(), "decoder_jacobian: non-finite latent point");
  ForwardCache cache;
  const Matrix out = decoder.forward(batch, &cache);
  if (!out.allFinite()) throw NumericError("decoder_jacobian: non-finite activations");
  const auto back = decoder.backward(cache, Matrix::Identity(d, d));
  return back.input_grad;
}

/// (1/2) log |det(A^T A)|, the log volume element of the map whose
/// Jacobian is A. Uses a column-pivoted QR of A: det(A^T A) = prod R_ii^2.
inline double log_det_first_fundamental(const Eigen::MatrixXd& a) {
  require(a.rows() >= a.cols() && a.cols() >= 1, "first fundamental form: need d >= l >= 1");
  require(a.allFinite(), "first fundamental form: non-finite Jacobian");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < a.cols()) throw SingularManifold("first fundamental form: rank-deficient Jacobian");
  const Eigen::MatrixXd& r = qr.matrixQR();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) log_det += std::log(std::abs(r(i, i)));
  if (2.0 * log_det < std::log(1e-300)) throw SingularManifold("first fundamental form: |det B| below 1e-300");
  return log_det;
}

/// -log p(x) split into its parts:
/// p(x) = p_t(z') |det B|^(-1/2) N(x; x', sigma^2 I), z' = E(x), x' = D(z').
struct NoveltyScore {
  double score;
  double log_latent;
  double log_jacobian_penalty;
  double log_off_manifold;
};

inline NoveltyScore novelty_score(const Autoencoder& model, const TargetDistribution& target,
                                  std::span<const double> x, double sigma) {
  require(sigma > 0.0 && std::isfinite(sigma), "novelty: sigma must be positive");
  require(x.size() == model.data_dim(), "novelty: data dimension mismatch");
  require(target.dim() == model.latent_dim(), "novelty: target dimension differs from latent dimension");
  const Matrix xrow = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const Matrix z = model.encoder.forward(xrow);
  const Matrix xr = model.decoder.forward(z);
  const auto zs = row_span(z, 0);
  NoveltyScore s{};
  s.log_latent = target.log_density(zs);
  s.log_jacobian_penalty = -log_det_first_fundamental(decoder_jacobian(model.decoder, zs));
  const double d = static_cast<double>(x.size());
  s.log_off_manifold = -0.5 * d * (kLog2Pi + 2.0 * std::log(sigma)) - (xrow - xr).squaredNorm() / (2.0 * sigma * sigma);
  s.score = -(s.log_latent + s.log_jacobian_penalty + s.log_off_manifold);
  return s;
}

/// Residual scale sqrt(mean squared reconstruction error per coordinate).
inline double calibrate_sigma(const Autoencoder& model, const SampleSet& calibration) {
  const Matrix resid = model.reconstruct(calibration.points()) - calibration.points();
  const double sigma = std::sqrt(resid.squaredNorm() / static_cast<double>(resid.size()));
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw NumericError("calibrate_sigma: degenerate residual scale");
  return sigma;
}

inline std::vector<NoveltyScore> score_batch(const Autoencoder& model, const TargetDistribution& target,
                                             const SampleSet& batch, double sigma) {
  std::vector<NoveltyScore> out(batch.size());
  // the first call validates shapes so that the parallel part cannot throw
  out[0] = novelty_score(model, target, batch.row(0), sigma);
  std::vector<int> failed(batch.size(), 0);
  parallel_for(batch.size() - 1, [&](std::size_t i) {
    try {
      out[i + 1] = novelty_score(model, target, batch.row(i + 1), sigma);
    } catch (const SingularManifold&) {
      failed[i + 1] = 1;
    }
  });
  for (std::size_t i = 0; i < failed.size(); ++i)
    if (failed[i]) throw SingularManifold("novelty: singular decoder Jacobian at sample " + std::to_string(i));
  return out;
}

/// Indices sorted by ascending score; equal scores keep index order.
inline std::vector<std::size_t> score_order(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return idx;
}

struct OutlierRanking {
  std::vector<std::size_t> lowest;   // k most probable, lowest score first
  std::vector<std::size_t> highest;  // k least probable, highest score first
};

inline OutlierRanking rank_by_score(const std::vector<double>& scores, std::size_t k) {
  require(k >= 1 && scores.size() >= 2 * k, "rank_outliers: batch must hold at least 2k samples");
  const auto order = score_order(scores);
  OutlierRanking r;
  r.lowest.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  r.highest.assign(order.rbegin(), order.rbegin() + static_cast<std::ptrdiff_t>(k));
  return r;
}

inline OutlierRanking rank_outliers(const Autoencoder& model, const TargetDistribution& target, const SampleSet& batch,
                                    double sigma, std::size_t k) {
  require(k >= 1 && batch.size() >= 2 * k, "rank_outliers: batch must hold at least 2k samples");
  std::vector<double> scores;
  for (const auto& s : score_batch(model, target, batch, sigma)) scores.push_back(s.score);
  return rank_by_score(scores, k);
}

/// index,score,log_latent,log_jacobian_penalty,log_off_manifold sorted by
/// ascending score.
inline void write_novelty_csv(std::ostream& os, const std::vector<NoveltyScore>& scores) {
  std::vector<double> s;
  for (const auto& v : scores) s.push_back(v.score);
  os << "index,score,log_latent,log_jacobian_penalty,log_off_manifold\n" << std::setprecision(12);
  for (auto i : score_order(s))
    os << i << ',' << scores[i].score << ',' << scores[i].log_latent << ',' << scores[i].log_jacobian_penalty << ','
       << scores[i].log_off_manifold << '\n';
}

}  // namespace genkde
