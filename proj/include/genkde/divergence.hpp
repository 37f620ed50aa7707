#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "genkde/density.hpp"

namespace genkde {

/// KDE-based Jensen-Shannon estimate between an encoded distribution
/// (represented by a KDE and a batch of encoded points) and an analytic
/// target (represented by its density and a batch of its samples).
struct JsdEstimate {
  double raw_two_term;  // term_encoded + term_target
  double normalized;    // log 2 + raw_two_term / 2, the JSD on its natural [0, log 2] scale
  double term_encoded;  // mean over z' of log[S(z') / (p_t(z') + S(z'))]
  double term_target;   // mean over z'' of log[p_t(z'') / (p_t(z'') + S(z''))]
};

/// Everything the estimator and its derivatives need at one query point.
struct QueryTerms {
  double log_kde;       // log S(q)
  double log_target;    // log p_t(q)
  double log_mix;       // log(S(q) + p_t(q))
  double kde_share;     // S / (S + p_t), in [0, 1]
  double mean_sq_dist;  // kernel-weighted mean of |q - z_i|^2
};

inline QueryTerms query_terms(const GaussianKde& kde, const TargetDistribution& target,
                              std::span<const double> q) {
  const KernelStats st = kde.stats(q);
  const double lp = target.log_density(q);
  const double mix = log_add(st.log_density, lp);
  return {st.log_density, lp, mix, std::exp(st.log_density - mix), st.mean_sq_dist};
}

namespace detail {

inline void check_inputs(const GaussianKde& kde, const TargetDistribution& target, const SampleSet& batch) {
  if (kde.dim() != target.dim() || batch.dim() != kde.dim())
    throw InvalidArgument("divergence: dimension mismatch between KDE, target and batch");
}

inline std::vector<QueryTerms> batch_terms(const GaussianKde& kde, const TargetDistribution& target,
                                           const SampleSet& batch) {
  std::vector<QueryTerms> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { out[i] = query_terms(kde, target, batch.row(i)); });
  return out;
}

template <typename Fn>
double mean_of(const std::vector<QueryTerms>& terms, Fn&& fn) {
  std::vector<double> v(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) v[i] = fn(terms[i]);
  return stable_mean(v);
}

}  // namespace detail

inline JsdEstimate jsd_estimate(const GaussianKde& kde, const TargetDistribution& target,
                                const SampleSet& encoded_batch, const SampleSet& target_batch) {
  detail::check_inputs(kde, target, encoded_batch);
  detail::check_inputs(kde, target, target_batch);
  const auto enc = detail::batch_terms(kde, target, encoded_batch);
  const auto tgt = detail::batch_terms(kde, target, target_batch);
  const double te = detail::mean_of(enc, [](const QueryTerms& t) { return t.log_kde - t.log_mix; });
  const double tt = detail::mean_of(tgt, [](const QueryTerms& t) { return t.log_target - t.log_mix; });
  return {te + tt, kLn2 + 0.5 * (te + tt), te, tt};
}

/// Derivative of raw_two_term with respect to the bandwidth. The five
/// expectations are accumulated separately, in the order they arise from
/// differentiating log G_h: d/dh log G_h(d) = |d|^2/h^3 - l/h.
inline double djsd_dh(const GaussianKde& kde, const TargetDistribution& target, const SampleSet& encoded_batch,
                      const SampleSet& target_batch) {
  detail::check_inputs(kde, target, encoded_batch);
  detail::check_inputs(kde, target, target_batch);
  const double h = kde.bandwidth(), h3 = h * h * h;
  const double l = static_cast<double>(kde.dim());
  const auto enc = detail::batch_terms(kde, target, encoded_batch);
  const auto tgt = detail::batch_terms(kde, target, target_batch);
  const double t1 = detail::mean_of(enc, [&](const QueryTerms& t) { return t.mean_sq_dist / h3 - l / h; });
  const double t2 = -detail::mean_of(enc, [&](const QueryTerms& t) { return t.kde_share * t.mean_sq_dist / h3; });
  const double t3 = detail::mean_of(enc, [&](const QueryTerms& t) { return t.kde_share * l / h; });
  const double t4 = -detail::mean_of(tgt, [&](const QueryTerms& t) { return t.kde_share * t.mean_sq_dist / h3; });
  const double t5 = detail::mean_of(tgt, [&](const QueryTerms& t) { return t.kde_share * l / h; });
  return t1 + t2 + t3 + t4 + t5;
}

/// The pieces of the bandwidth fixed-point update h^2 <- numerator / factor,
/// obtained by setting djsd_dh to zero and multiplying through by h^3.
struct BandwidthUpdateTerms {
  double factor;     // l - l E'[share] - l E''[share]
  double numerator;  // E'[msd] - E'[share msd] - E''[share msd]
};

inline BandwidthUpdateTerms jsd_bandwidth_update_terms(const GaussianKde& kde, const TargetDistribution& target,
                                                       const SampleSet& encoded_batch,
                                                       const SampleSet& target_batch) {
  detail::check_inputs(kde, target, encoded_batch);
  detail::check_inputs(kde, target, target_batch);
  const double l = static_cast<double>(kde.dim());
  const auto enc = detail::batch_terms(kde, target, encoded_batch);
  const auto tgt = detail::batch_terms(kde, target, target_batch);
  const double share_e = detail::mean_of(enc, [](const QueryTerms& t) { return t.kde_share; });
  const double share_t = detail::mean_of(tgt, [](const QueryTerms& t) { return t.kde_share; });
  const double msd_e = detail::mean_of(enc, [](const QueryTerms& t) { return t.mean_sq_dist; });
  const double smsd_e = detail::mean_of(enc, [](const QueryTerms& t) { return t.kde_share * t.mean_sq_dist; });
  const double smsd_t = detail::mean_of(tgt, [](const QueryTerms& t) { return t.kde_share * t.mean_sq_dist; });
  return {l - l * share_e - l * share_t, msd_e - smsd_e - smsd_t};
}

/// Mean encoded term over a batch and its gradient with respect to every
/// batch row. Each row may be scored against its own target (used for
/// labelled samples in semi-supervised training).
struct EncodedTerm {
  double value;  // (1/n) sum_i log[S(z_i) / (p_t(z_i) + S(z_i))]
  Matrix grad;   // row i = d value / d z_i
};

inline EncodedTerm encoded_term(const GaussianKde& kde, const SampleSet& batch,
                                const std::function<const TargetDistribution&(std::size_t)>& target_of_row) {
  const std::size_t n = batch.size(), l = batch.dim();
  if (l != kde.dim()) throw InvalidArgument("divergence: dimension mismatch between KDE and batch");
  for (std::size_t i = 0; i < n; ++i)
    if (target_of_row(i).dim() != l) throw InvalidArgument("divergence: dimension mismatch with target");
  Matrix grad(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(l));
  std::vector<double> values(n);
  const double inv_h2 = 1.0 / (kde.bandwidth() * kde.bandwidth());
  const double inv_n = 1.0 / static_cast<double>(n);
  parallel_for(n, [&](std::size_t i) {
    const auto q = batch.row(i);
    const auto& target = target_of_row(i);
    std::vector<double> offset(l), score(l);
    const KernelStats st = kde.stats(q, offset);
    const double lp = target.log_density(q);
    const double mix = log_add(st.log_density, lp);
    values[i] = st.log_density - mix;
    // d/dz log[S/(S+p)] = (1 - S/(S+p)) (grad log S - grad log p)
    const double weight = -std::expm1(st.log_density - mix);
    target.score(q, score);
    for (std::size_t k = 0; k < l; ++k)
      grad(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          inv_n * weight * (-offset[k] * inv_h2 - score[k]);
  });
  return {stable_mean(values), std::move(grad)};
}

inline EncodedTerm encoded_term(const GaussianKde& kde, const TargetDistribution& target, const SampleSet& batch) {
  return encoded_term(kde, batch, [&](std::size_t) -> const TargetDistribution& { return target; });
}

/// Gradient of term_encoded with respect to each encoded point.
inline Matrix jsd_grad_queries(const GaussianKde& kde, const TargetDistribution& target,
                               const SampleSet& encoded_batch) {
  detail::check_inputs(kde, target, encoded_batch);
  return encoded_term(kde, target, encoded_batch).grad;
}

}  // namespace genkde
