#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "phid/io.hpp"
#include "phid/linear_ident.hpp"
#include "phid/msd.hpp"
#include "phid/ph_construct.hpp"
#include "phid/training.hpp"

namespace fs = std::filesystem;
using namespace phid;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_file;
  std::string out_dir;
  std::optional<double> snr;
  std::optional<std::uint64_t> data_seed;
  std::optional<int> iterations;
  std::optional<int> pretrain_iterations;
};

ExperimentConfig resolve_config(const Options& opt) {
  ExperimentConfig cfg;
  if (!opt.config_file.empty())
    cfg = config_from_json(read_json_file(opt.config_file));
  if (opt.snr) cfg.msd.snr_db = *opt.snr;
  if (opt.data_seed) cfg.msd.seed = *opt.data_seed;
  if (opt.iterations) cfg.train.iterations = *opt.iterations;
  if (opt.pretrain_iterations)
    cfg.train.pretrain_iterations = *opt.pretrain_iterations;
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  if (const char* root = std::getenv("PHID_OUT_ROOT"))
    if (!fs::path(cfg.out_dir).is_absolute())
      cfg.out_dir = (fs::path(root) / cfg.out_dir).string();
  return cfg;
}

fs::path data_dir(const ExperimentConfig& cfg) {
  return fs::path(cfg.out_dir) / "data";
}

void write_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_json_file(fs::path(cfg.out_dir) / "config.json", config_to_json(cfg));
}

std::vector<Dataset> generate_datasets(const ExperimentConfig& cfg) {
  return make_experiment_set(cfg.msd);
}

std::vector<Dataset> load_datasets(const ExperimentConfig& cfg) {
  std::vector<Dataset> out;
  for (int i = 0; i < 8; ++i) {
    const fs::path file = data_dir(cfg) / ("rec" + std::to_string(i) + ".csv");
    if (!fs::exists(file))
      throw UsageError("dataset missing: " + file.string() +
                       " (run `phid generate` first)");
    out.push_back(read_dataset_csv(file));
  }
  return out;
}

std::vector<Dataset> split(const std::vector<Dataset>& all,
                           const std::string& role) {
  std::vector<Dataset> out;
  for (const Dataset& d : all)
    if (d.role == role) out.push_back(d);
  return out;
}

struct PreparedData {
  Standardizer st;
  std::vector<Dataset> train, val, test;
};

PreparedData prepare(const std::vector<Dataset>& all) {
  PreparedData p;
  const std::vector<Dataset> train_raw = split(all, "train");
  p.st = fit_standardizer(train_raw);
  for (const Dataset& d : train_raw) p.train.push_back(p.st.apply(d));
  for (const Dataset& d : split(all, "val")) p.val.push_back(p.st.apply(d));
  for (const Dataset& d : split(all, "test")) p.test.push_back(p.st.apply(d));
  return p;
}

LinearPH estimate_linear_ph(const PreparedData& data,
                            const ExperimentConfig& cfg,
                            std::vector<std::string>* warnings) {
  const DtStateSpace dt =
      subspace_id(data.train, cfg.dims.n_x, cfg.horizon);
  if (warnings)
    warnings->insert(warnings->end(), dt.warnings.begin(), dt.warnings.end());

  // Pad the scalar force to the full port count before the passivity step.
  CtStateSpace ct = d2c(dt);
  const int n_p = cfg.dims.n_p;
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(ct.A.rows(), n_p);
  b.leftCols(ct.B.cols()) = ct.B;
  ct.B = b;
  ct.D = Eigen::MatrixXd::Zero(n_p, n_p);
  return ph_from_estimate(ct);
}

int run_generate(const Options& opt) {
  const ExperimentConfig cfg = resolve_config(opt);
  write_config(cfg);
  fs::create_directories(data_dir(cfg));
  const std::string hash = config_hash(cfg);
  const std::vector<Dataset> sets = generate_datasets(cfg);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const fs::path file = data_dir(cfg) / ("rec" + std::to_string(i) + ".csv");
    write_dataset_csv(file, sets[i], hash);
  }
  std::cout << "wrote " << sets.size() << " records to " << data_dir(cfg)
            << " (snr " << cfg.msd.snr_db << " dB, seed " << cfg.msd.seed
            << ", hash " << hash << ")\n";
  return 0;
}

int run_linest(const Options& opt, bool direct) {
  const ExperimentConfig cfg = resolve_config(opt);
  const PreparedData data = prepare(load_datasets(cfg));
  const std::string hash = config_hash(cfg);
  const fs::path out = fs::path(cfg.out_dir) / "linear_ph.json";

  LinearPH lin;
  if (direct) {
    // Train the constant-matrix PHNN and export its factors as a LinearPH.
    PhnnParams params =
        init_params(Mode::LinearDirect, cfg.train.seed, cfg.dims);
    const TrainState st = train(params, cfg.train, data.train, data.val);
    const PhnnParams& best = st.best;
    const Eigen::MatrixXd ac = best.theta[static_cast<std::size_t>(best.idx_ac)];
    const Eigen::MatrixXd bc = best.theta[static_cast<std::size_t>(best.idx_bc)];
    const Eigen::MatrixXd lc = best.theta[static_cast<std::size_t>(best.idx_lc)];
    PhMatrices ph;
    ph.J = ac - ac.transpose();
    ph.R = bc * bc.transpose();
    ph.G = best.theta[static_cast<std::size_t>(best.idx_gc)];
    ph.P = best.theta[static_cast<std::size_t>(best.idx_pc)];
    ph.S = Eigen::MatrixXd::Zero(cfg.dims.n_p, cfg.dims.n_p);
    ph.N = ph.S;
    const Eigen::MatrixXd q = nearest_psd(lc * lc.transpose());
    lin = cholesky_normalize(ph, q);
    lin.diag.kyp_feasible = true;  // PSD by construction
    std::cout << "linear-direct training: best val NRMSE " << st.best_val_nrmse
              << "\n";
  } else {
    std::vector<std::string> warnings;
    lin = estimate_linear_ph(data, cfg, &warnings);
    for (const std::string& w : warnings) std::cout << "warning: " << w << "\n";
    if (!lin.diag.kyp_feasible)
      std::cout << "warning: KYP inequality not certified feasible "
                << "(neg mass " << lin.diag.kyp_neg_mass
                << "); proceeding with the projected metric\n";
  }

  const PassivityReport rep = passivity_report(lin);
  write_linear_ph(out, lin, data.st, hash, rep.summary);
  std::cout << rep.summary << "\n";
  std::cout << "wrote " << out << "\n";
  return 0;
}

fs::path run_dir(const ExperimentConfig& cfg, const std::string& mode,
                 std::uint64_t seed) {
  return fs::path(cfg.out_dir) / "runs" /
         (mode + "-seed" + std::to_string(seed));
}

struct RunResult {
  double test_nrmse = 0.0;
  double best_val_nrmse = 0.0;
  double pretrain_seconds = 0.0;
  double train_seconds = 0.0;
};

RunResult execute_training(const ExperimentConfig& cfg, Mode mode,
                           std::uint64_t seed, const PreparedData& data,
                           const LinearPH* lin, const fs::path& dir) {
  TrainConfig tcfg = cfg.train;
  tcfg.seed = seed;

  PhnnParams params = mode == Mode::NnLinearInit
                          ? init_params(mode, seed, cfg.dims, *lin)
                          : init_params(mode, seed, cfg.dims);

  TrainState timing;
  if (mode == Mode::NnLinearInit)
    pretrain_encoder(params, *lin, data.train, tcfg, &timing);

  TrainState st = train(std::move(params), tcfg, data.train, data.val);
  st.pretrain_seconds = timing.pretrain_seconds;

  fs::create_directories(dir);
  const std::string hash = config_hash(cfg);
  write_checkpoint(dir / "checkpoint.json", st.best, data.st, hash, seed);
  write_log_csv(dir / "log.csv", st.log);

  // Test-segment free-run trace (measured vs simulated, standardized units).
  RunResult res;
  res.best_val_nrmse = st.best_val_nrmse;
  res.pretrain_seconds = st.pretrain_seconds;
  res.train_seconds = st.train_seconds;
  res.test_nrmse = simulation_nrmse(st.best, data.test, tcfg);
  {
    const Dataset& ds = data.test.front();
    const Eigen::MatrixXd yhat = simulate_model(st.best, ds, tcfg);
    const int t0 = ds.n_samples() - static_cast<int>(yhat.rows());
    std::ofstream f(dir / "test_sim.csv");
    f << "t";
    for (int i = 1; i <= ds.y.cols(); ++i) f << ",y" << i;
    for (int i = 1; i <= ds.y.cols(); ++i) f << ",yhat" << i;
    f << "\n";
    f.precision(12);
    for (Eigen::Index k = 0; k < yhat.rows(); ++k) {
      f << (t0 + k) * ds.ts;
      for (Eigen::Index i = 0; i < ds.y.cols(); ++i)
        f << "," << ds.y(t0 + k, i);
      for (Eigen::Index i = 0; i < yhat.cols(); ++i) f << "," << yhat(k, i);
      f << "\n";
    }
  }
  write_json_file(dir / "run_summary.json",
                  json{{"mode", to_string(mode)},
                       {"seed", seed},
                       {"test_nrmse", res.test_nrmse},
                       {"best_val_nrmse", res.best_val_nrmse},
                       {"pretrain_seconds", res.pretrain_seconds},
                       {"train_seconds", res.train_seconds},
                       {"skipped_steps", st.skipped_steps},
                       {"config_hash", hash}});
  return res;
}

int run_train(const Options& opt, const std::string& mode_name,
              std::uint64_t seed) {
  const ExperimentConfig cfg = resolve_config(opt);
  const Mode mode = mode_from_string(mode_name);
  const PreparedData data = prepare(load_datasets(cfg));

  LinearPH lin;
  if (mode == Mode::NnLinearInit) {
    const fs::path lin_file = fs::path(cfg.out_dir) / "linear_ph.json";
    if (!fs::exists(lin_file))
      throw UsageError("linear PH estimate missing: " + lin_file.string() +
                       " (run `phid linest` first)");
    lin = read_linear_ph(lin_file).ph;
  }

  const fs::path dir = run_dir(cfg, mode_name, seed);
  const RunResult res = execute_training(
      cfg, mode, seed, data, mode == Mode::NnLinearInit ? &lin : nullptr, dir);
  std::cout << "mode " << mode_name << " seed " << seed << ": val NRMSE "
            << res.best_val_nrmse << ", test NRMSE " << res.test_nrmse
            << " (pretrain " << res.pretrain_seconds << " s, train "
            << res.train_seconds << " s)\n";
  std::cout << "artifacts in " << dir << "\n";
  return 0;
}

int run_sweep(const Options& opt, int n_seeds) {
  ExperimentConfig cfg = resolve_config(opt);
  if (n_seeds > 0) {
    cfg.seeds.resize(static_cast<std::size_t>(n_seeds));
    for (int i = 0; i < n_seeds; ++i)
      cfg.seeds[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(i + 1);
  }
  write_config(cfg);
  const fs::path sweep_dir = fs::path(cfg.out_dir) / "sweep";
  fs::create_directories(sweep_dir);

  std::ofstream cells(sweep_dir / "cells.csv");
  cells << "snr_db,seed,test_nrmse,status\n";
  cells.precision(12);

  std::ostringstream table;
  table << "snr_db,mean_nrmse,min_nrmse,noise_floor,n_ok\n";
  table.precision(12);

  for (double snr : cfg.snr_sweep) {
    std::vector<double> scores;
    for (std::uint64_t seed : cfg.seeds) {
      ExperimentConfig cell = cfg;
      cell.msd.snr_db = snr;
      cell.msd.seed = seed;  // fresh data realization per seed, as in the study
      try {
        const PreparedData data = prepare(generate_datasets(cell));
        const LinearPH lin = estimate_linear_ph(data, cell, nullptr);
        const fs::path dir =
            sweep_dir / ("snr" + std::to_string(static_cast<int>(snr)) +
                         "-seed" + std::to_string(seed));
        const RunResult res = execute_training(cell, Mode::NnLinearInit, seed,
                                               data, &lin, dir);
        scores.push_back(res.test_nrmse);
        cells << snr << "," << seed << "," << res.test_nrmse << ",ok\n";
        std::cout << "snr " << snr << " seed " << seed << ": test NRMSE "
                  << res.test_nrmse << "\n";
      } catch (const std::exception& e) {
        cells << snr << "," << seed << ",,failed\n";
        std::cout << "snr " << snr << " seed " << seed
                  << ": failed: " << e.what() << "\n";
      }
    }
    const double floor = std::pow(10.0, -snr / 20.0);
    if (scores.empty()) {
      table << snr << ",,," << floor << ",0\n";
    } else {
      double mean = 0.0, mn = scores.front();
      for (double s : scores) {
        mean += s;
        mn = std::min(mn, s);
      }
      mean /= static_cast<double>(scores.size());
      table << snr << "," << mean << "," << mn << "," << floor << ","
            << scores.size() << "\n";
    }
  }
  std::ofstream f(sweep_dir / "table.csv");
  f << table.str();
  std::cout << "\n" << table.str();
  std::cout << "sweep artifacts in " << sweep_dir << "\n";
  return 0;
}

int run_report(const Options& opt) {
  const ExperimentConfig cfg = resolve_config(opt);
  const fs::path runs = fs::path(cfg.out_dir) / "runs";
  if (!fs::exists(runs))
    throw UsageError("no runs directory at " + runs.string());
  const fs::path rep_dir = fs::path(cfg.out_dir) / "report";
  fs::create_directories(rep_dir);

  struct Run {
    std::string mode;
    std::uint64_t seed;
    double test_nrmse;
    fs::path dir;
  };
  std::vector<Run> found;
  std::vector<std::string> incomplete;
  for (const auto& entry : fs::directory_iterator(runs)) {
    if (!entry.is_directory()) continue;
    const fs::path summary = entry.path() / "run_summary.json";
    if (!fs::exists(summary) || !fs::exists(entry.path() / "log.csv") ||
        !fs::exists(entry.path() / "test_sim.csv")) {
      incomplete.push_back(entry.path().filename().string());
      continue;
    }
    const json s = read_json_file(summary);
    found.push_back({s.at("mode").get<std::string>(),
                     s.at("seed").get<std::uint64_t>(),
                     s.at("test_nrmse").get<double>(), entry.path()});
  }
  for (const std::string& name : incomplete)
    std::cout << "warning: incomplete run skipped: " << name << "\n";
  if (found.empty()) throw UsageError("no completed runs found");

  // Convergence curves in long format.
  {
    std::ofstream f(rep_dir / "convergence.csv");
    f << "mode,seed,iter,train_loss,val_nrmse\n";
    for (const Run& r : found) {
      std::ifstream in(r.dir / "log.csv");
      std::string line;
      std::getline(in, line);  // header
      while (std::getline(in, line))
        if (!line.empty()) f << r.mode << "," << r.seed << "," << line << "\n";
    }
  }

  // Test traces: per mode and time step, mean and std across seeds.
  std::vector<std::string> modes;
  for (const Run& r : found)
    if (std::find(modes.begin(), modes.end(), r.mode) == modes.end())
      modes.push_back(r.mode);
  {
    std::ofstream f(rep_dir / "test_traces.csv");
    f << "mode,t,channel,y,yhat_mean,yhat_std\n";
    f.precision(12);
    for (const std::string& mode : modes) {
      std::vector<Eigen::MatrixXd> traces;  // columns: t, y*, yhat*
      for (const Run& r : found) {
        if (r.mode != mode) continue;
        std::ifstream in(r.dir / "test_sim.csv");
        std::string line;
        std::getline(in, line);
        std::vector<std::vector<double>> rows;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          std::vector<double> row;
          std::stringstream ls(line);
          std::string tok;
          while (std::getline(ls, tok, ',')) row.push_back(std::stod(tok));
          rows.push_back(std::move(row));
        }
        Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                rows[i][j];
        traces.push_back(std::move(m));
      }
      if (traces.empty()) continue;
      const Eigen::Index n = traces[0].rows();
      const int n_y = static_cast<int>((traces[0].cols() - 1) / 2);
      for (Eigen::Index k = 0; k < n; ++k) {
        for (int ch = 0; ch < n_y; ++ch) {
          double mean = 0.0, sq = 0.0;
          for (const Eigen::MatrixXd& tr : traces) {
            const double v = tr(k, 1 + n_y + ch);
            mean += v;
            sq += v * v;
          }
          const double cnt = static_cast<double>(traces.size());
          mean /= cnt;
          const double var = std::max(0.0, sq / cnt - mean * mean);
          f << mode << "," << traces[0](k, 0) << "," << (ch + 1) << ","
            << traces[0](k, 1 + ch) << "," << mean << "," << std::sqrt(var)
            << "\n";
        }
      }
    }
  }

  // Boxplot five-number summary of test NRMSE per mode.
  {
    std::ofstream f(rep_dir / "boxplot.csv");
    f << "mode,n,min,q1,median,q3,max\n";
    f.precision(12);
    auto quantile = [](std::vector<double> v, double q) {
      std::sort(v.begin(), v.end());
      const double pos = q * (static_cast<double>(v.size()) - 1.0);
      const std::size_t lo = static_cast<std::size_t>(pos);
      const std::size_t hi = std::min(lo + 1, v.size() - 1);
      const double frac = pos - static_cast<double>(lo);
      return v[lo] * (1.0 - frac) + v[hi] * frac;
    };
    for (const std::string& mode : modes) {
      std::vector<double> scores;
      for (const Run& r : found)
        if (r.mode == mode) scores.push_back(r.test_nrmse);
      f << mode << "," << scores.size() << "," << quantile(scores, 0.0) << ","
        << quantile(scores, 0.25) << "," << quantile(scores, 0.5) << ","
        << quantile(scores, 0.75) << "," << quantile(scores, 1.0) << "\n";
    }
  }
  std::cout << "report written to " << rep_dir << " (" << found.size()
            << " runs, " << modes.size() << " modes)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"port-Hamiltonian system identification experiments"};
  app.require_subcommand(1);

  Options opt;
  app.add_option("-c,--config", opt.config_file, "JSON config file");
  app.add_option("-o,--out", opt.out_dir, "output directory (overrides config)");
  app.add_option("--snr", opt.snr, "measurement SNR in dB (overrides config)");
  app.add_option("--data-seed", opt.data_seed,
                 "data generation seed (overrides config)");
  app.add_option("--iterations", opt.iterations,
                 "training iterations (overrides config)");
  app.add_option("--pretrain-iterations", opt.pretrain_iterations,
                 "encoder pretraining iterations (overrides config)");

  CLI::App* generate = app.add_subcommand("generate", "write the 8 benchmark records");

  CLI::App* linest =
      app.add_subcommand("linest", "estimate the passivized linear PH model");
  bool direct = false;
  linest->add_flag("--direct", direct,
                   "train the constant-matrix PHNN instead of the subspace path");

  CLI::App* train_cmd = app.add_subcommand("train", "train one PHNN model");
  std::string mode = "nn-linear-init";
  std::uint64_t seed = 1;
  train_cmd->add_option("--mode", mode,
                        "linear-direct | nn-random | nn-linear-init");
  train_cmd->add_option("--seed", seed, "training seed");

  CLI::App* sweep = app.add_subcommand(
      "sweep", "SNR sweep: generate + linest + train per (SNR, seed) cell");
  int n_seeds = 0;
  sweep->add_option("--seeds", n_seeds, "number of seeds (default: config list)");

  CLI::App* report =
      app.add_subcommand("report", "aggregate completed runs into figure CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (generate->parsed()) return run_generate(opt);
    if (linest->parsed()) return run_linest(opt, direct);
    if (train_cmd->parsed()) return run_train(opt, mode, seed);
    if (sweep->parsed()) return run_sweep(opt, n_seeds);
    if (report->parsed()) return run_report(opt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
  return 0;
}
