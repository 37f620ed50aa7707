#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "genkde/genkde.hpp"

using namespace genkde;
namespace fs = std::filesystem;

namespace {

// Usage and validation problems exit 2, numeric failures exit 1.
constexpr int kOk = 0;
constexpr int kNumeric = 1;
constexpr int kUsage = 2;

Format parse_format(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "binary") return Format::binary;
  throw InvalidArgument("unknown format '" + s + "' (csv or binary)");
}

/// Writes text to path atomically, or to stdout when path is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  write_atomically(path, [&](std::ostream& os) { os << text; });
}

std::vector<int> read_labels(const fs::path& path) {
  const Matrix m = read_matrix_file(path);
  require(m.cols() == 1, "labels: expected a single column");
  std::vector<int> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double v = m(i, 0);
    require(v >= 0 && v == std::floor(v), "labels: entries must be non-negative integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

TargetDistribution checkpoint_target(const Checkpoint& ck) {
  return parse_target(ck.metadata.get_string("target", "normal"), ck.model.latent_dim());
}

double parse_auto(const std::string& name, const std::string& s) {
  if (s == "auto") return 0.0;
  const double v = KeyValueConfig::to_double(name, s);
  require(v > 0.0, name + " must be positive or 'auto'");
  return v;
}

// --- bandwidth ---

struct BandwidthArgs {
  std::vector<std::size_t> dims{2, 5, 10, 20};
  std::vector<std::size_t> samples{250, 1000, 4000};
  std::size_t trials = 10;
  std::string method = "root-trap";
  std::string target = "normal";
  std::uint64_t seed = 42;
  std::string layout = "table";
  std::string out;
};

int run_bandwidth(const BandwidthArgs& a) {
  require(a.method == "root-trap" || a.method == "fixed-point", "bandwidth: method must be root-trap or fixed-point");
  require(a.layout == "table" || a.layout == "long", "bandwidth: layout must be table or long");
  require(!a.dims.empty() && !a.samples.empty(), "bandwidth: need at least one dimension and sample size");
  for (auto l : a.dims)
    for (auto m : a.samples) check_bandwidth_request(parse_target(a.target, l), m, a.trials);
  std::vector<BandwidthCell> cells;
  for (auto l : a.dims)
    for (auto m : a.samples) {
      const auto target = parse_target(a.target, l);
      // the cell seed depends on (l, m) only, so cells are reproducible alone
      const auto seed = derive_seed(a.seed, l * 1'000'000 + m);
      cells.push_back({l, m,
                       a.method == "root-trap" ? optimal_bandwidth_root_trap(target, m, a.trials, seed)
                                               : optimal_bandwidth_fixed_point(target, m, a.trials, seed)});
    }
  std::ostringstream os;
  if (a.layout == "table")
    write_bandwidth_table(os, cells);
  else
    write_bandwidth_long(os, cells);
  emit(a.out, os.str());
  return kOk;
}

// --- train ---

struct TrainArgs {
  std::string config, data, labels, checkpoint, report;
  bool timing = false;
};

int run_train(const TrainArgs& a) {
  std::ifstream in(a.config);
  if (!in) throw IoError("cannot open config " + a.config);
  auto kv = KeyValueConfig::parse(in);
  if (!a.data.empty()) kv.set("data", a.data);
  if (!a.labels.empty()) kv.set("labels", a.labels);
  if (!a.checkpoint.empty()) kv.set("checkpoint", a.checkpoint);
  if (!a.report.empty()) kv.set("report", a.report);
  const auto cfg = train_config_from(kv);
  const auto data = read_samples(kv.require_string("data"));
  const auto checkpoint = kv.get_string("checkpoint", "model.gnet");
  const auto report_path = kv.get_string("report", checkpoint + ".report.csv");
  std::vector<int> labels;
  if (kv.has("labels")) labels = read_labels(kv.get_string("labels", ""));
  require(labels.empty() || labels.size() == data.size(), "labels: count differs from the number of samples");

  TrainResult result;
  try {
    result = train_gen(data, cfg, labels.empty() ? nullptr : &labels);
  } catch (const TrainingAborted& e) {
    write_atomically(report_path, [&](std::ostream& os) { e.report.write_csv(os, a.timing); });
    throw;
  }
  const auto& r = result.report;
  auto meta = kv;
  meta.set("target", format_target(cfg.target));
  std::ostringstream h;
  h << std::setprecision(17) << r.bandwidth;
  meta.set("bandwidth", h.str());
  std::ostringstream fp;
  fp << std::hex << fnv1a(kv.to_string());
  meta.set("config_fingerprint", fp.str());
  save_checkpoint(checkpoint, result.model, meta);
  write_atomically(report_path, [&](std::ostream& os) { r.write_csv(os, a.timing); });
  std::cout << std::setprecision(6) << "epochs=" << r.epochs() << " updates=" << r.updates << " bandwidth=" << r.bandwidth
            << " reconstruction=" << r.reconstruction_loss.back() << " jsd_first=" << r.jsd_term.front()
            << " jsd_last=" << r.jsd_term.back() << " checkpoint=" << checkpoint << '\n';
  return kOk;
}

// --- generate ---

struct GenerateArgs {
  std::string checkpoint, out, format = "csv";
  std::size_t n = 1000;
  std::uint64_t seed = 42;
};

int run_generate(const GenerateArgs& a) {
  const auto fmt = parse_format(a.format);
  const auto ck = load_checkpoint(a.checkpoint);
  const auto target = checkpoint_target(ck);
  Matrix x(0, static_cast<Eigen::Index>(ck.model.data_dim()));
  if (a.n > 0) {
    Rng rng(a.seed);
    x = ck.model.decode(target.sample(a.n, rng).points());
  }
  if (a.out.empty()) {
    require(fmt == Format::csv, "generate: binary output needs --out");
    write_csv(std::cout, x);
  } else {
    write_matrix_file(a.out, x, fmt);
  }
  return kOk;
}

// --- entropy ---

struct EntropyArgs {
  std::string samples, bandwidth = "auto", out;
  bool whiten = false;
};

int run_entropy(const EntropyArgs& a) {
  const double fixed = parse_auto("bandwidth", a.bandwidth);
  const auto raw = read_samples(a.samples);
  const SampleSet s = a.whiten ? whiten(raw) : raw;
  double h = fixed;
  bool converged = true;
  std::size_t iterations = 0;
  if (fixed == 0.0) {
    const auto bw = entropy_bandwidth_fixed_point(s);
    h = bw.h_opt;
    converged = bw.converged;
    iterations = bw.iterations;
  }
  const double e = kde_entropy(s, h);
  std::ostringstream os;
  os << "samples,dim,whitened,bandwidth,iterations,converged,entropy,normal_entropy\n" << std::setprecision(10)
     << s.size() << ',' << s.dim() << ',' << (a.whiten ? 1 : 0) << ',' << h << ',' << iterations << ','
     << (converged ? 1 : 0) << ',' << e << ',' << normal_entropy(s.dim()) << '\n';
  emit(a.out, os.str());
  return kOk;
}

// --- correlate ---

struct CorrelateArgs {
  std::string config, out_dir;
  std::vector<std::size_t> dims, samples;
  std::vector<double> separations;
  std::size_t trials = 0, bandwidth_trials = 0;
  std::uint64_t seed = 0;
  double bandwidth = 0.0;
};

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& s) {
  std::vector<T> out;
  for (const auto& f : split(s, ',')) {
    const double v = KeyValueConfig::to_double(key, f);
    if constexpr (std::is_integral_v<T>) require(v >= 0 && v == std::floor(v), key + ": expected integers");
    out.push_back(static_cast<T>(v));
  }
  return out;
}

int run_correlate(const CorrelateArgs& a, const CLI::App& sub) {
  CorrelationStudyConfig cfg;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw IoError("cannot open config " + a.config);
    const auto kv = KeyValueConfig::parse(in);
    static const std::set<std::string> known{"dims", "samples", "separations", "trials", "seed", "bandwidth_trials",
                                             "bandwidth"};
    for (const auto& [k, v] : kv.values())
      if (!known.count(k)) throw InvalidArgument("config: unknown key '" + k + "'");
    if (kv.has("dims")) cfg.dims = parse_list<std::size_t>("dims", kv.get_string("dims", ""));
    if (kv.has("samples")) cfg.sample_sizes = parse_list<std::size_t>("samples", kv.get_string("samples", ""));
    if (kv.has("separations")) cfg.separations = parse_list<double>("separations", kv.get_string("separations", ""));
    cfg.trials = kv.get_uint("trials", cfg.trials);
    cfg.seed = kv.get_uint("seed", cfg.seed);
    cfg.bandwidth_trials = kv.get_uint("bandwidth_trials", cfg.bandwidth_trials);
    if (kv.has("bandwidth")) {
      const double h = parse_auto("bandwidth", kv.get_string("bandwidth", "auto"));
      if (h > 0)
        for (auto l : cfg.dims)
          for (auto m : cfg.sample_sizes) cfg.bandwidths[{l, m}] = h;
    }
  }
  if (sub.count("--dims")) cfg.dims = a.dims;
  if (sub.count("--samples")) cfg.sample_sizes = a.samples;
  if (sub.count("--separations")) cfg.separations = a.separations;
  if (sub.count("--trials")) cfg.trials = a.trials;
  if (sub.count("--seed")) cfg.seed = a.seed;
  if (sub.count("--bandwidth-trials")) cfg.bandwidth_trials = a.bandwidth_trials;
  if (sub.count("--bandwidth")) {
    require(a.bandwidth > 0.0, "bandwidth must be positive");
    cfg.bandwidths.clear();
    for (auto l : cfg.dims)
      for (auto m : cfg.sample_sizes) cfg.bandwidths[{l, m}] = a.bandwidth;
  }
  cfg.validate();
  const auto result = run_correlation_study(cfg);
  std::ostringstream summary;
  write_study_summary(summary, result);
  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    const fs::path dir(a.out_dir);
    write_atomically(dir / "observations.csv", [&](std::ostream& os) { write_study_observations(os, result); });
    write_atomically(dir / "separations.csv", [&](std::ostream& os) { write_study_separations(os, result); });
    write_atomically(dir / "summary.csv", [&](std::ostream& os) { os << summary.str(); });
  }
  std::cout << summary.str();
  return kOk;
}

// --- novelty ---

struct NoveltyArgs {
  std::string checkpoint, data, calibration, sigma = "auto", out, ranking;
  std::size_t k = 100;
};

int run_novelty(const NoveltyArgs& a) {
  const double fixed = parse_auto("sigma", a.sigma);
  const auto ck = load_checkpoint(a.checkpoint);
  const auto target = checkpoint_target(ck);
  const auto data = read_samples(a.data);
  double sigma = fixed;
  if (sigma == 0.0) sigma = calibrate_sigma(ck.model, a.calibration.empty() ? data : read_samples(a.calibration));
  const auto scores = score_batch(ck.model, target, data, sigma);
  std::ostringstream os;
  write_novelty_csv(os, scores);
  emit(a.out, os.str());
  if (!a.ranking.empty()) {
    std::vector<double> s;
    for (const auto& v : scores) s.push_back(v.score);
    const auto r = rank_by_score(s, a.k);
    write_atomically(a.ranking, [&](std::ostream& o) {
      o << "rank,lowest,highest\n";
      for (std::size_t i = 0; i < a.k; ++i) o << i + 1 << ',' << r.lowest[i] << ',' << r.highest[i] << '\n';
    });
  }
  std::cerr << "sigma=" << std::setprecision(6) << sigma << '\n';
  return kOk;
}

// --- synth ---

struct SynthArgs {
  SyntheticBenchmark::Options opt;
  std::size_t n = 5000;
  std::uint64_t seed = 42;
  std::string out, labels, log_density, format = "csv";
};

int run_synth(const SynthArgs& a) {
  const auto fmt = parse_format(a.format);
  require(!a.out.empty(), "synth: --out is required");
  const SyntheticBenchmark bench(a.opt);
  Rng rng(a.seed);
  const auto s = bench.sample(a.n, rng);
  write_matrix_file(a.out, s.data.points(), fmt);
  if (!a.labels.empty()) {
    Matrix y(static_cast<Eigen::Index>(a.n), 1);
    for (std::size_t i = 0; i < a.n; ++i) y(static_cast<Eigen::Index>(i), 0) = s.labels[i];
    write_matrix_file(a.labels, y, Format::csv);
  }
  if (!a.log_density.empty()) {
    Matrix d(static_cast<Eigen::Index>(a.n), 1);
    for (std::size_t i = 0; i < a.n; ++i) d(static_cast<Eigen::Index>(i), 0) = bench.log_density(s.data.row(i));
    write_matrix_file(a.log_density, d, Format::csv);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel-density JSD estimation, bandwidth selection and generative encoder training"};
  app.require_subcommand(1);
  std::function<int()> action;

  BandwidthArgs bw;
  auto* c_bw = app.add_subcommand("bandwidth", "Optimal-bandwidth table over dimensions and sample sizes");
  c_bw->add_option("--dims", bw.dims, "Latent dimensions")->delimiter(',');
  c_bw->add_option("--samples", bw.samples, "Sample sizes m")->delimiter(',');
  c_bw->add_option("--trials", bw.trials, "Trials per cell");
  c_bw->add_option("--method", bw.method, "root-trap or fixed-point");
  c_bw->add_option("--target", bw.target, "normal, ring:K:R:S or mixture:...");
  c_bw->add_option("--seed", bw.seed);
  c_bw->add_option("--layout", bw.layout, "table or long");
  c_bw->add_option("--out", bw.out, "Output CSV (stdout if omitted)");
  c_bw->callback([&] { action = [&] { return run_bandwidth(bw); }; });

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a generative encoder from a key = value config");
  c_tr->add_option("config", tr.config, "Config file")->required();
  c_tr->add_option("--data", tr.data, "Training samples (overrides config)");
  c_tr->add_option("--labels", tr.labels, "Class labels, one per row");
  c_tr->add_option("--checkpoint", tr.checkpoint, "Checkpoint path");
  c_tr->add_option("--report", tr.report, "Per-epoch report CSV");
  c_tr->add_flag("--timing", tr.timing, "Add wall-clock seconds to the report");
  c_tr->callback([&] { action = [&] { return run_train(tr); }; });

  GenerateArgs ge;
  auto* c_ge = app.add_subcommand("generate", "Decode draws from the latent target");
  c_ge->add_option("--checkpoint", ge.checkpoint)->required();
  c_ge->add_option("-n,--count", ge.n, "Number of samples");
  c_ge->add_option("--seed", ge.seed);
  c_ge->add_option("--out", ge.out, "Output file (stdout if omitted)");
  c_ge->add_option("--format", ge.format, "csv or binary");
  c_ge->callback([&] { action = [&] { return run_generate(ge); }; });

  EntropyArgs en;
  auto* c_en = app.add_subcommand("entropy", "Leave-one-out KDE entropy of a sample set");
  c_en->add_option("samples", en.samples, "Samples file")->required();
  c_en->add_option("--bandwidth", en.bandwidth, "auto or a positive value");
  c_en->add_flag("--whiten", en.whiten, "Whiten before estimating");
  c_en->add_option("--out", en.out);
  c_en->callback([&] { action = [&] { return run_entropy(en); }; });

  CorrelateArgs co;
  auto* c_co = app.add_subcommand("correlate", "JSD against separation for two-mode sets");
  c_co->add_option("--config", co.config, "Study config file");
  c_co->add_option("--dims", co.dims)->delimiter(',');
  c_co->add_option("--samples", co.samples)->delimiter(',');
  c_co->add_option("--separations", co.separations)->delimiter(',');
  c_co->add_option("--trials", co.trials);
  c_co->add_option("--seed", co.seed);
  c_co->add_option("--bandwidth-trials", co.bandwidth_trials);
  c_co->add_option("--bandwidth", co.bandwidth, "Fixed bandwidth for every cell");
  c_co->add_option("--out-dir", co.out_dir);
  c_co->callback([&] { action = [&] { return run_correlate(co, *c_co); }; });

  NoveltyArgs no;
  auto* c_no = app.add_subcommand("novelty", "Score samples by negative data-space log-probability");
  c_no->add_option("--checkpoint", no.checkpoint)->required();
  c_no->add_option("--data", no.data)->required();
  c_no->add_option("--sigma", no.sigma, "auto or a positive value");
  c_no->add_option("--calibration", no.calibration, "Samples used to fit sigma");
  c_no->add_option("-k", no.k, "Size of the lowest/highest lists");
  c_no->add_option("--out", no.out, "Scores CSV (stdout if omitted)");
  c_no->add_option("--ranking", no.ranking, "Lowest/highest index CSV");
  c_no->callback([&] { action = [&] { return run_novelty(no); }; });

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("synth", "Sample the synthetic clustered benchmark");
  c_sy->add_option("-n,--count", sy.n);
  c_sy->add_option("--seed", sy.seed);
  c_sy->add_option("--out", sy.out)->required();
  c_sy->add_option("--labels", sy.labels);
  c_sy->add_option("--log-density", sy.log_density, "Exact log-density per row");
  c_sy->add_option("--format", sy.format);
  c_sy->add_option("--ambient-dim", sy.opt.ambient_dim);
  c_sy->add_option("--clusters", sy.opt.clusters);
  c_sy->add_option("--radius", sy.opt.radius);
  c_sy->add_option("--cluster-std", sy.opt.cluster_std);
  c_sy->add_option("--noise-std", sy.opt.noise_std);
  c_sy->add_option("--scale", sy.opt.scale);
  c_sy->add_option("--offset", sy.opt.offset);
  c_sy->add_option("--map-seed", sy.opt.map_seed);
  c_sy->callback([&] { action = [&] { return run_synth(sy); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    return action();
  } catch (const NumericError& e) {
    std::cerr << "genkde: " << e.what() << '\n';
    return kNumeric;
  } catch (const InvalidArgument& e) {
    std::cerr << "genkde: " << e.what() << '\n';
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "genkde: " << e.what() << '\n';
    return kUsage;
  }
}
