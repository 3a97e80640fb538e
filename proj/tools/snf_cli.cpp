// Experiment driver: config-described problems and chains, with commands for
// oracle checks, training, sampling, evaluation and baseline generation. All
// randomness derives from the experiment seed, so (config, seed) determines
// every output file byte for byte.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "snf/chain.hpp"
#include "snf/config.hpp"
#include "snf/experiment.hpp"
#include "snf/metrics.hpp"
#include "snf/serialize.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  int threads = 1;
  bool deterministic = false;
};

snf::ExperimentConfig load_with_overrides(const CommonOptions& opt) {
  snf::ExperimentConfig cfg = snf::load_config(opt.config_path);
  if (opt.seed) cfg.seed = *opt.seed;
  cfg.validate();
  return cfg;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/" + name;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  return os;
}

Eigen::VectorXd parse_vector(const std::string& text, int expected_dim) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
  if (static_cast<int>(vals.size()) != expected_dim)
    throw std::runtime_error("observation has " + std::to_string(vals.size()) +
                             " entries, expected " + std::to_string(expected_dim));
  return Eigen::Map<Eigen::VectorXd>(vals.data(), vals.size());
}

void write_loss_trace(const std::string& dir, const std::vector<double>& trace) {
  std::ofstream os = open_out(dir, "loss_trace.csv");
  os << "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i)
    os << i << "," << fmt_double(trace[i]) << "\n";
}

void write_samples_csv(std::ostream& os, const Eigen::MatrixXd& samples,
                       const std::string& header_meta, int dim) {
  os << header_meta;
  for (int i = 0; i < dim; ++i) os << (i ? "," : "") << "x_" << (i + 1);
  os << "\n";
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
      os << (i ? "," : "") << fmt_double(samples(i, j));
    os << "\n";
  }
}

int cmd_oracle_check(const CommonOptions& opt) {
  const snf::ExperimentConfig cfg = load_with_overrides(opt);
  if (cfg.problem_type != snf::ExperimentConfig::ProblemType::kLinearGaussian) {
    std::cerr << "oracle-check: not applicable, the analytic posterior exists "
                 "only for Gaussian-mixture (linear_gaussian) problems\n";
    return 2;
  }
  if (cfg.dim_x > 2) {
    std::cerr << "oracle-check: the grid quadrature oracle needs dim_x <= 2\n";
    return 2;
  }
  const snf::BuiltProblem built = snf::build_problem(cfg);
  const auto& problem =
      dynamic_cast<const snf::LinearGaussianProblem&>(*built.problem);

  if (problem.a().cwiseAbs().maxCoeff() == 0.0) {
    // Uninformative observations: the posterior must coincide with the prior.
    const Eigen::VectorXd y = Eigen::VectorXd::Zero(problem.dim_y());
    const auto post = snf::analytic_posterior(problem, y);
    const auto& prior = problem.mixture_prior();
    double err = (post->means() - prior.means()).cwiseAbs().maxCoeff();
    err = std::max(err, (post->weights() - prior.weights()).cwiseAbs().maxCoeff());
    for (int k = 0; k < prior.num_components(); ++k)
      err = std::max(err, (post->cov(k) - prior.cov(k)).cwiseAbs().maxCoeff());
    std::cout << "A = 0: posterior equals the prior (max deviation " << err
              << ")\n"
              << (err <= 1e-10 ? "PASS" : "FAIL") << "\n";
    return err <= 1e-10 ? 0 : 1;
  }

  const int n_checks = std::min(cfg.n_y, 20);
  const Eigen::MatrixXd ys = snf::draw_observations(
      *built.problem, n_checks,
      snf::RngStream(cfg.seed).substream(snf::streams::kObservations));
  double worst = 0.0;
  for (int i = 0; i < n_checks; ++i) {
    const auto post = snf::analytic_posterior(problem, ys.col(i));
    double spread = 0.0;
    for (int k = 0; k < post->num_components(); ++k)
      spread = std::max(
          spread,
          std::sqrt(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(post->cov(k))
                        .eigenvalues()
                        .maxCoeff()));
    const Eigen::VectorXd lo =
        post->means().rowwise().minCoeff().array() - 8.0 * spread;
    const Eigen::VectorXd hi =
        post->means().rowwise().maxCoeff().array() + 8.0 * spread;
    const double tv = snf::posterior_grid_tv(problem, ys.col(i), lo, hi, 200);
    worst = std::max(worst, tv);
    std::cout << "y[" << i << "]: TV(analytic, quadrature Bayes) = " << tv << "\n";
  }
  const bool pass = worst <= 1e-4;
  std::cout << (pass ? "PASS" : "FAIL") << ", max TV error = " << worst
            << (pass ? " <= 1e-4" : " > 1e-4") << "\n";
  return pass ? 0 : 1;
}

int cmd_train(const CommonOptions& opt) {
  const snf::ExperimentConfig cfg = load_with_overrides(opt);
  const snf::BuiltProblem built = snf::build_problem(cfg);
  if (cfg.problem_type == snf::ExperimentConfig::ProblemType::kMixedNoise)
    std::cout << "surrogate fit: train rmse " << built.surrogate_train_rmse
              << ", holdout rmse " << built.surrogate_holdout_rmse << "\n";
  snf::Chain chain = snf::build_chain(cfg, built.problem);

  snf::TrainConfig train_cfg;
  train_cfg.lambda = cfg.lambda;
  train_cfg.batch = cfg.train_batch;
  train_cfg.steps = cfg.train_steps;
  train_cfg.lr = cfg.lr;

  open_out(opt.out_dir, "resolved_config.txt") << snf::resolved_config_text(cfg);
  snf::RngStream train_rng =
      snf::RngStream(cfg.seed).substream(snf::streams::kTrain);
  try {
    const snf::TrainResult result =
        snf::train(chain, snf::ProblemSampler(*built.problem), train_cfg,
                   train_rng, built.problem.get());
    write_loss_trace(opt.out_dir, result.loss_trace);
  } catch (const snf::TrainingDiverged& e) {
    write_loss_trace(opt.out_dir, e.loss_trace);
    std::cerr << "training diverged: " << e.what() << " (partial trace written)\n";
    return 1;
  }
  snf::save_model(opt.out_dir + "/model.snf", chain, *built.problem);
  std::cout << "wrote " << opt.out_dir
            << "/model.snf, loss_trace.csv, resolved_config.txt\n";
  return 0;
}

int cmd_sample(const std::string& model_path, const std::string& y_text,
               int n_samples, std::uint64_t seed, const std::string& out_path) {
  const snf::Model model = snf::load_model(model_path);
  const Eigen::VectorXd y = parse_vector(y_text, model.problem->dim_y());
  snf::RngStream rng =
      snf::RngStream(seed).substream(snf::streams::kSampleCommand);
  Eigen::MatrixXd samples(model.chain.dim, 0);
  if (n_samples > 0) samples = snf::chain_sample(model.chain, n_samples, rng, y);

  std::ostringstream meta;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, snf::fnv1a_file(model_path));
  meta << "# model_hash=" << buf << "\n# y=" << y_text << "\n# seed=" << seed
       << "\n";

  if (out_path.empty()) {
    write_samples_csv(std::cout, samples, meta.str(), model.chain.dim);
  } else {
    std::ofstream os(out_path);
    if (!os) throw std::runtime_error("cannot open " + out_path);
    write_samples_csv(os, samples, meta.str(), model.chain.dim);
    std::cout << "wrote " << out_path << " (" << n_samples << " samples)\n";
  }
  return 0;
}

int cmd_evaluate(const CommonOptions& opt, const std::string& model_path) {
  const snf::ExperimentConfig cfg = load_with_overrides(opt);
  const snf::Model model = snf::load_model(model_path);
  const Eigen::MatrixXd ys = snf::draw_observations(
      *model.problem, cfg.n_y,
      snf::RngStream(cfg.seed).substream(snf::streams::kObservations));
  snf::RngStream eval_rng =
      snf::RngStream(cfg.seed).substream(snf::streams::kEval);
  const snf::EvalConfig eval_cfg =
      snf::to_eval_config(cfg, opt.deterministic ? 1 : opt.threads);
  const snf::EvalReport report =
      snf::evaluate_run(model.chain, *model.problem, ys, eval_cfg, eval_rng);

  const std::string metric =
      cfg.metric == snf::ExperimentConfig::Metric::kW1 ? "w1" : "binned_kl";
  std::ofstream os = open_out(opt.out_dir, "metrics.csv");
  os << "y_index,metric,value,noise_floor\n";
  for (const snf::EvalRow& row : report.rows)
    os << row.y_index << "," << metric << "," << fmt_double(row.value) << ","
       << fmt_double(row.floor_value) << "\n";
  os << "aggregate," << metric << "_mean," << fmt_double(report.mean) << ","
     << fmt_double(report.floor_mean) << "\n";
  os << "aggregate," << metric << "_std," << fmt_double(report.stddev) << ","
     << fmt_double(report.floor_stddev) << "\n";
  std::cout << metric << ": " << report.mean << " +/- " << report.stddev
            << " (noise floor " << report.floor_mean << " +/- "
            << report.floor_stddev << ") over " << cfg.n_y << " observations\n";
  return 0;
}

int cmd_baseline(const CommonOptions& opt, const std::string& y_text) {
  const snf::ExperimentConfig cfg = load_with_overrides(opt);
  const snf::BuiltProblem built = snf::build_problem(cfg);
  snf::RngStream rng = snf::RngStream(cfg.seed).substream(snf::streams::kBaseline);
  Eigen::VectorXd y;
  if (y_text.empty()) {
    y = snf::draw_observations(
            *built.problem, 1,
            snf::RngStream(cfg.seed).substream(snf::streams::kObservations))
            .col(0);
  } else {
    y = parse_vector(y_text, built.problem->dim_y());
  }

  const auto target = built.problem->posterior_family().at(y);
  const Eigen::MatrixXd x0 = built.problem->sample_prior(cfg.samples_per_y, rng);
  snf::MhConfig mh;
  mh.proposal = snf::MhConfig::Proposal::kRandomWalk;
  mh.sigma = cfg.eval_mh_sigma;
  const Eigen::MatrixXd samples =
      snf::mh_baseline(*target, x0, cfg.eval_mh_steps, mh, rng);

  std::ostringstream meta;
  meta << "# reference=metropolis_hastings steps=" << cfg.eval_mh_steps
       << " sigma=" << fmt_double(cfg.eval_mh_sigma) << "\n# y=";
  for (int i = 0; i < y.size(); ++i) meta << (i ? "," : "") << fmt_double(y[i]);
  meta << "\n# seed=" << cfg.seed << "\n";
  std::ofstream os = open_out(opt.out_dir, "baseline_samples.csv");
  write_samples_csv(os, samples, meta.str(), built.problem->dim_x());
  std::cout << "wrote " << opt.out_dir << "/baseline_samples.csv ("
            << samples.cols() << " samples)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic normalizing flows for Bayesian inverse problems"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::string model_path, y_text, out_path;
  int n_samples = 0;
  std::uint64_t sample_seed = 0;
  std::uint64_t seed_override = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "experiment config file")
        ->required();
    sub->add_option("--seed", seed_override, "override the config seed")
        ->each([&](const std::string&) { opt.seed = seed_override; });
    sub->add_option("--out-dir", opt.out_dir, "output directory");
    sub->add_option("--threads", opt.threads, "worker threads for evaluation");
    sub->add_flag("--deterministic", opt.deterministic,
                  "force single-threaded, deterministic-order evaluation");
  };

  CLI::App* oracle = app.add_subcommand(
      "oracle-check",
      "compare the analytic posterior against grid-quadrature Bayes");
  add_common(oracle);

  CLI::App* train = app.add_subcommand("train", "train the chain per the config");
  add_common(train);

  CLI::App* sample =
      app.add_subcommand("sample", "draw posterior samples from a trained model");
  sample->add_option("--model", model_path, "model file")->required();
  sample->add_option("--y", y_text, "observation, comma-separated")->required();
  sample->add_option("-n,--num", n_samples, "number of samples")->required();
  sample->add_option("--seed", sample_seed, "sampling seed");
  sample->add_option("--out", out_path, "output CSV (default stdout)");

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "metric between model and reference posteriors");
  evaluate->add_option("--model", model_path, "model file")->required();
  add_common(evaluate);

  CLI::App* baseline = app.add_subcommand(
      "baseline", "Metropolis-Hastings reference samples for one observation");
  add_common(baseline);
  baseline->add_option(
      "--y", y_text, "observation, comma-separated (default: drawn from the seed)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(oracle)) return cmd_oracle_check(opt);
    if (app.got_subcommand(train)) return cmd_train(opt);
    if (app.got_subcommand(sample))
      return cmd_sample(model_path, y_text, n_samples, sample_seed, out_path);
    if (app.got_subcommand(evaluate)) return cmd_evaluate(opt, model_path);
    if (app.got_subcommand(baseline)) return cmd_baseline(opt, y_text);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
