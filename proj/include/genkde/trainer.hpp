#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "genkde/bandwidth.hpp"
#include "genkde/checkpoint.hpp"
#include "genkde/config.hpp"
#include "genkde/divergence.hpp"
#include "genkde/nn.hpp"

namespace genkde {

struct TrainConfig {
  std::size_t latent_dim = 2;
  std::size_t kde_support_size = 1000;  // m
  std::size_t minibatch_size = 100;     // n_b
  std::size_t lag_interval = 10;        // k_b
  double jsd_weight = 0.01;             // lambda
  std::optional<double> bandwidth;      // empty: solve by root trapping at startup
  std::size_t bandwidth_trials = 10;
  AdamSettings adam;
  std::size_t epochs = 50;
  std::uint64_t seed = 42;
  TargetDistribution target = TargetDistribution::standard_normal(2);
  double label_fraction = 0.0;
  Architecture arch;
  double grad_clip = 10.0;

  void validate(std::size_t n_train) const {
    require(latent_dim >= 1, "train: latent_dim must be positive");
    require(target.dim() == latent_dim, "train: target dimension differs from latent_dim");
    require(kde_support_size >= 2 && kde_support_size <= n_train, "train: need 2 <= m <= training-set size");
    require(minibatch_size >= 1, "train: minibatch size must be positive");
    require(lag_interval >= 1, "train: lag interval must be positive");
    require(jsd_weight >= 0.0, "train: jsd weight must be non-negative");
    require(!bandwidth || (*bandwidth > 0.0 && std::isfinite(*bandwidth)), "train: bandwidth must be positive");
    require(bandwidth_trials >= 1, "train: bandwidth trials must be positive");
    require(epochs >= 1, "train: need at least one epoch");
    require(label_fraction >= 0.0 && label_fraction <= 1.0, "train: label fraction must lie in [0, 1]");
    require(grad_clip > 0.0, "train: gradient clip must be positive");
  }
};

struct TrainReport {
  double bandwidth = 0.0;
  std::vector<double> reconstruction_loss;  // per epoch, mean over minibatches
  std::vector<double> jsd_term;             // per epoch, mean encoded JSD term
  std::vector<Vector> latent_mean;          // per epoch, over the training set
  std::vector<Vector> latent_variance;
  std::vector<double> wall_seconds;         // cumulative
  std::size_t updates = 0;
  std::size_t support_refreshes = 0;

  std::size_t epochs() const { return reconstruction_loss.size(); }

  /// One row per epoch. Timing is opt-in so that reruns stay byte-identical.
  void write_csv(std::ostream& os, bool with_timing = false) const {
    os << "epoch,reconstruction_loss,jsd_term";
    const auto l = latent_mean.empty() ? 0 : latent_mean.front().size();
    for (Eigen::Index k = 0; k < l; ++k) os << ",mean_" << k;
    for (Eigen::Index k = 0; k < l; ++k) os << ",var_" << k;
    if (with_timing) os << ",wall_seconds";
    os << '\n' << std::setprecision(10);
    for (std::size_t e = 0; e < epochs(); ++e) {
      os << e + 1 << ',' << reconstruction_loss[e] << ',' << jsd_term[e];
      for (Eigen::Index k = 0; k < l; ++k) os << ',' << latent_mean[e][k];
      for (Eigen::Index k = 0; k < l; ++k) os << ',' << latent_variance[e][k];
      if (with_timing) os << ',' << wall_seconds[e];
      os << '\n';
    }
  }
};

class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, TrainReport partial) : NumericError(what), report(std::move(partial)) {}
  TrainReport report;
};

/// Per-update instrumentation hook.
struct StepInfo {
  std::size_t update;           // minibatch index b
  bool refreshed;               // support re-encoded after this update
  std::uint64_t support_hash;   // of the support used by this update
  double reconstruction;
  double penalty;               // encoded JSD term of this minibatch
  const Matrix* codes;          // encoded minibatch
  std::vector<int> row_target;  // -1: full target, k: mixture component k
  double bandwidth;
};

inline std::uint64_t hash_matrix(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Fisher-Yates with an explicit uniform draw; std::shuffle's algorithm is
  // implementation-defined.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

/// Bandwidth used by training: the configured value, or the mean root-trap
/// optimum for (target, m) on a sub-seed of the training seed.
inline double resolve_bandwidth(const TrainConfig& cfg) {
  if (cfg.bandwidth) return *cfg.bandwidth;
  return optimal_bandwidth_root_trap(cfg.target, cfg.kde_support_size, cfg.bandwidth_trials,
                                     derive_seed(cfg.seed, 0xB4D))
      .mean;
}

struct TrainResult {
  Autoencoder model;
  TrainReport report;
};

/// Minibatch training of reconstruction + lambda * encoded JSD term against
/// a KDE over m lagged encodings that are refreshed every k_b updates.
///
/// labels (optional) must hold one class index per sample when
/// cfg.label_fraction > 0; labelled samples are scored against their class
/// component of the mixture target, all others against the full target.
inline TrainResult train_gen(const SampleSet& data, const TrainConfig& cfg, const std::vector<int>* labels = nullptr,
                             const std::function<void(const StepInfo&)>& observer = {}) {
  const std::size_t n = data.size();
  cfg.validate(n);
  if (cfg.label_fraction > 0.0) {
    require(labels && labels->size() == n, "train: label_fraction > 0 needs one label per sample");
    require(cfg.target.is_mixture(), "train: semi-supervised training needs a mixture target");
    for (int y : *labels)
      require(y >= 0 && static_cast<std::size_t>(y) < cfg.target.component_count(),
              "train: label outside the mixture's component range");
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.bandwidth = resolve_bandwidth(cfg);
  const double h = report.bandwidth;

  Rng rng(cfg.seed);
  Autoencoder model = make_autoencoder(data.dim(), cfg.latent_dim, cfg.arch, rng);
  AdamState enc_opt(model.encoder, cfg.adam), dec_opt(model.decoder, cfg.adam);

  const Matrix& x = data.points();
  const auto order = shuffled_indices(n, rng);
  const std::vector<std::size_t> support_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.kde_support_size));
  const Matrix support_x = gather_rows(x, support_idx);

  std::vector<int> row_class(n, -1);
  if (cfg.label_fraction > 0.0) {
    const auto pick = shuffled_indices(n, rng);
    const auto n_labeled = static_cast<std::size_t>(std::ceil(cfg.label_fraction * static_cast<double>(n)));
    for (std::size_t i = 0; i < n_labeled; ++i) row_class[pick[i]] = (*labels)[pick[i]];
  }
  std::vector<TargetDistribution> class_targets;
  if (cfg.label_fraction > 0.0)
    for (std::size_t k = 0; k < cfg.target.component_count(); ++k) class_targets.push_back(cfg.target.component(k));

  Matrix support = model.encoder.forward(support_x);
  std::size_t b = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = shuffled_indices(n, rng);
    std::vector<double> recon_losses, penalties;
    for (std::size_t start = 0; start < n; start += cfg.minibatch_size) {
      const std::size_t nb = std::min(cfg.minibatch_size, n - start);
      const std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                         perm.begin() + static_cast<std::ptrdiff_t>(start + nb));
      const Matrix xb = gather_rows(x, idx);

      ForwardCache enc_cache, dec_cache;
      const Matrix codes = model.encoder.forward(xb, &enc_cache);
      const Matrix recon = model.decoder.forward(codes, &dec_cache);
      const Matrix resid = recon - xb;
      const double recon_loss = resid.squaredNorm() / static_cast<double>(nb);
      const auto dec_back = model.decoder.backward(dec_cache, (2.0 / static_cast<double>(nb)) * resid);

      std::vector<int> row_target(nb, -1);
      for (std::size_t i = 0; i < nb; ++i) row_target[i] = row_class[idx[i]];
      if (!codes.allFinite()) throw TrainingAborted("train: non-finite latent codes at update " + std::to_string(b), report);
      const GaussianKde kde(SampleSet(support), h);
      const auto term = encoded_term(kde, SampleSet(codes), [&](std::size_t i) -> const TargetDistribution& {
        return row_target[i] < 0 ? cfg.target : class_targets[static_cast<std::size_t>(row_target[i])];
      });
      if (!std::isfinite(recon_loss) || !std::isfinite(term.value))
        throw TrainingAborted("train: non-finite loss at update " + std::to_string(b), report);

      Matrix latent_grad = dec_back.input_grad;
      if (cfg.jsd_weight > 0.0) latent_grad += cfg.jsd_weight * term.grad;
      auto enc_back = model.encoder.backward(enc_cache, latent_grad);
      auto dec_grads = dec_back.params;
      clip_global_norm({&enc_back.params, &dec_grads}, cfg.grad_clip);
      const std::uint64_t used_support = observer ? hash_matrix(support) : 0;
      try {
        adam_step(model.encoder, enc_back.params, enc_opt);
        adam_step(model.decoder, dec_grads, dec_opt);
      } catch (const NumericError& e) {
        throw TrainingAborted(std::string("train: ") + e.what(), report);
      }

      const bool refresh = b % cfg.lag_interval == 0;
      if (refresh) {
        support = model.encoder.forward(support_x);
        ++report.support_refreshes;
      }
      if (observer) observer({b, refresh, used_support, recon_loss, term.value, &codes, row_target, h});
      recon_losses.push_back(recon_loss);
      penalties.push_back(term.value);
      ++b;
    }
    const Matrix all = model.encoder.forward(x);
    if (!all.allFinite()) throw TrainingAborted("train: non-finite latent codes after epoch " + std::to_string(epoch + 1), report);
    const SampleSet codes(all);
    report.reconstruction_loss.push_back(stable_mean(recon_losses));
    report.jsd_term.push_back(stable_mean(penalties));
    report.latent_mean.push_back(sample_mean(codes));
    report.latent_variance.push_back(sample_covariance(codes).diagonal());
    report.wall_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  report.updates = b;
  return {std::move(model), std::move(report)};
}

/// Index of the mixture component with the highest posterior at each
/// encoded query; ties go to the lower index.
inline std::vector<std::size_t> assign_modes(const Mlp& encoder, const TargetDistribution& target,
                                             const SampleSet& queries) {
  require(target.is_mixture(), "assign_modes: target must be a mixture");
  require(encoder.output_dim() == target.dim(), "assign_modes: encoder output differs from target dimension");
  const Matrix codes = encoder.forward(queries.points());
  std::vector<std::size_t> out(queries.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto q = row_span(codes, static_cast<Eigen::Index>(i));
    double best = kNegInf;
    for (std::size_t k = 0; k < target.component_count(); ++k) {
      const double s = std::log(target.components()[k].weight) + target.component_log_density(k, q);
      if (s > best) {
        best = s;
        out[i] = k;
      }
    }
  }
  return out;
}

/// Builds a TrainConfig from a `key = value` record. Unknown keys are
/// rejected so that typos do not silently fall back to defaults.
inline TrainConfig train_config_from(const KeyValueConfig& kv) {
  static const std::set<std::string> known{
      "latent_dim", "kde_support_size", "minibatch_size", "lag_interval", "jsd_weight", "bandwidth",
      "bandwidth_trials", "learning_rate", "beta1", "beta2", "epsilon", "epochs", "seed", "target",
      "label_fraction", "hidden", "hidden_activation", "output_activation", "grad_clip", "data", "labels",
      "checkpoint", "report", "format"};
  for (const auto& [k, v] : kv.values())
    if (!known.count(k)) throw InvalidArgument("config: unknown key '" + k + "'");
  TrainConfig c;
  c.latent_dim = kv.get_uint("latent_dim", c.latent_dim);
  c.kde_support_size = kv.get_uint("kde_support_size", c.kde_support_size);
  c.minibatch_size = kv.get_uint("minibatch_size", c.minibatch_size);
  c.lag_interval = kv.get_uint("lag_interval", c.lag_interval);
  c.jsd_weight = kv.get_double("jsd_weight", c.jsd_weight);
  const auto bw = kv.get_string("bandwidth", "auto");
  if (bw != "auto") c.bandwidth = KeyValueConfig::to_double("bandwidth", bw);
  c.bandwidth_trials = kv.get_uint("bandwidth_trials", c.bandwidth_trials);
  c.adam.learning_rate = kv.get_double("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = kv.get_double("beta1", c.adam.beta1);
  c.adam.beta2 = kv.get_double("beta2", c.adam.beta2);
  c.adam.epsilon = kv.get_double("epsilon", c.adam.epsilon);
  c.epochs = kv.get_uint("epochs", c.epochs);
  c.seed = kv.get_uint("seed", c.seed);
  c.target = parse_target(kv.get_string("target", "normal"), c.latent_dim);
  c.label_fraction = kv.get_double("label_fraction", c.label_fraction);
  if (kv.has("hidden")) {
    c.arch.hidden.clear();
    for (const auto& w : split(kv.get_string("hidden", ""), ',')) {
      const auto v = KeyValueConfig::to_double("hidden", w);
      require(v >= 1 && v == std::floor(v), "config: hidden widths must be positive integers");
      c.arch.hidden.push_back(static_cast<std::size_t>(v));
    }
  }
  c.arch.hidden_activation = parse_activation(kv.get_string("hidden_activation", "tanh"));
  c.arch.output_activation = parse_activation(kv.get_string("output_activation", "sigmoid"));
  c.grad_clip = kv.get_double("grad_clip", c.grad_clip);
  return c;
}

}  // namespace genkde
