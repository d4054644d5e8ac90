#include "phid/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace phid {

namespace {

std::string to_hex(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double from_hex(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) ok = true;
    if (!ok)
      throw std::invalid_argument("config: unknown key '" + item.key() +
                                  "' in " + where);
  }
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json j = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

json net_to_json(const PhnnParams::Net& n) {
  return json{{"w", n.w}, {"b", n.b}};
}

PhnnParams::Net net_from_json(const json& j) {
  PhnnParams::Net n;
  n.w = j.at("w").get<std::vector<int>>();
  n.b = j.at("b").get<std::vector<int>>();
  return n;
}

json standardizer_to_json(const Standardizer& st) {
  return json{{"u_mean", vector_to_json(st.u_mean)},
              {"u_std", vector_to_json(st.u_std)},
              {"y_mean", vector_to_json(st.y_mean)},
              {"y_std", vector_to_json(st.y_std)}};
}

Standardizer standardizer_from_json(const json& j) {
  Standardizer st;
  st.u_mean = vector_from_json(j.at("u_mean"));
  st.u_std = vector_from_json(j.at("u_std"));
  st.y_mean = vector_from_json(j.at("y_mean"));
  st.y_std = vector_from_json(j.at("y_std"));
  return st;
}

json linear_ph_to_json(const LinearPH& ph) {
  return json{{"J", matrix_to_json_exact(ph.J)},
              {"R", matrix_to_json_exact(ph.R)},
              {"G", matrix_to_json_exact(ph.G)},
              {"P", matrix_to_json_exact(ph.P)},
              {"S", matrix_to_json_exact(ph.S)},
              {"N", matrix_to_json_exact(ph.N)},
              {"V", matrix_to_json_exact(ph.V)},
              {"diagnostics",
               {{"kyp_feasible", ph.diag.kyp_feasible},
                {"kyp_converged", ph.diag.kyp_converged},
                {"kyp_sweeps", ph.diag.kyp_sweeps},
                {"kyp_neg_mass", ph.diag.kyp_neg_mass},
                {"q_projection_dist", ph.diag.q_projection_dist},
                {"r_projection_dist", ph.diag.r_projection_dist},
                {"io_discrepancy", ph.diag.io_discrepancy}}}};
}

LinearPH linear_ph_from_json(const json& j) {
  LinearPH ph;
  ph.J = matrix_from_json_exact(j.at("J"));
  ph.R = matrix_from_json_exact(j.at("R"));
  ph.G = matrix_from_json_exact(j.at("G"));
  ph.P = matrix_from_json_exact(j.at("P"));
  ph.S = matrix_from_json_exact(j.at("S"));
  ph.N = matrix_from_json_exact(j.at("N"));
  ph.V = matrix_from_json_exact(j.at("V"));
  const json& d = j.at("diagnostics");
  ph.diag.kyp_feasible = d.at("kyp_feasible").get<bool>();
  ph.diag.kyp_converged = d.at("kyp_converged").get<bool>();
  ph.diag.kyp_sweeps = d.at("kyp_sweeps").get<int>();
  ph.diag.kyp_neg_mass = d.at("kyp_neg_mass").get<double>();
  ph.diag.q_projection_dist = d.at("q_projection_dist").get<double>();
  ph.diag.r_projection_dist = d.at("r_projection_dist").get<double>();
  ph.diag.io_discrepancy = d.at("io_discrepancy").get<double>();
  return ph;
}

}  // namespace

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
  return m;
}

json matrix_to_json_exact(const Eigen::MatrixXd& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  json vals = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) vals.push_back(to_hex(m(r, c)));
  j["values"] = std::move(vals);
  return j;
}

Eigen::MatrixXd matrix_from_json_exact(const json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  Eigen::MatrixXd m(rows, cols);
  const json& vals = j.at("values");
  std::size_t k = 0;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      m(r, c) = from_hex(vals[k++].get<std::string>());
  return m;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  check_keys(j, {"msd", "train", "model", "horizon", "modes", "seeds",
                 "snr_sweep", "out_dir"},
             "root");
  if (j.contains("msd")) {
    const json& m = j["msd"];
    check_keys(m,
               {"n_masses", "mass", "stiffness", "damping", "f0_hz", "n_lines",
                "duration_s", "sample_rate_hz", "substeps", "snr_db", "seed"},
               "msd");
    if (m.contains("n_masses")) cfg.msd.n_masses = m["n_masses"].get<int>();
    auto vec_or_const = [&](const char* key, double fallback) {
      if (!m.contains(key))
        return Eigen::VectorXd(Eigen::VectorXd::Constant(cfg.msd.n_masses, fallback));
      if (m[key].is_number())
        return Eigen::VectorXd(
            Eigen::VectorXd::Constant(cfg.msd.n_masses, m[key].get<double>()));
      return Eigen::VectorXd(vector_from_json(m[key]));
    };
    cfg.msd.mass = vec_or_const("mass", 2.0);
    cfg.msd.stiffness = vec_or_const("stiffness", 1.0);
    cfg.msd.damping = vec_or_const("damping", 0.5);
    if (m.contains("f0_hz")) cfg.msd.f0_hz = m["f0_hz"].get<double>();
    if (m.contains("n_lines")) cfg.msd.n_lines = m["n_lines"].get<int>();
    if (m.contains("duration_s")) cfg.msd.duration_s = m["duration_s"].get<double>();
    if (m.contains("sample_rate_hz"))
      cfg.msd.sample_rate_hz = m["sample_rate_hz"].get<double>();
    if (m.contains("substeps")) cfg.msd.substeps = m["substeps"].get<int>();
    if (m.contains("snr_db")) cfg.msd.snr_db = m["snr_db"].get<double>();
    if (m.contains("seed")) cfg.msd.seed = m["seed"].get<std::uint64_t>();
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t,
               {"truncation", "batch", "lr", "iterations",
                "pretrain_iterations", "val_period", "rk4_steps_per_sample",
                "seed"},
               "train");
    if (t.contains("truncation")) cfg.train.truncation = t["truncation"].get<int>();
    if (t.contains("batch")) cfg.train.batch = t["batch"].get<int>();
    if (t.contains("lr")) cfg.train.lr = t["lr"].get<double>();
    if (t.contains("iterations")) cfg.train.iterations = t["iterations"].get<int>();
    if (t.contains("pretrain_iterations"))
      cfg.train.pretrain_iterations = t["pretrain_iterations"].get<int>();
    if (t.contains("val_period")) cfg.train.val_period = t["val_period"].get<int>();
    if (t.contains("rk4_steps_per_sample"))
      cfg.train.rk4_steps_per_sample = t["rk4_steps_per_sample"].get<int>();
    if (t.contains("seed")) cfg.train.seed = t["seed"].get<std::uint64_t>();
  }
  if (j.contains("model")) {
    const json& d = j["model"];
    check_keys(d, {"n_x", "n_a", "n_b", "enc_hidden", "mat_hidden"}, "model");
    if (d.contains("n_x")) cfg.dims.n_x = d["n_x"].get<int>();
    if (d.contains("n_a")) cfg.dims.n_a = d["n_a"].get<int>();
    if (d.contains("n_b")) cfg.dims.n_b = d["n_b"].get<int>();
    if (d.contains("enc_hidden")) cfg.dims.enc_hidden = d["enc_hidden"].get<int>();
    if (d.contains("mat_hidden")) cfg.dims.mat_hidden = d["mat_hidden"].get<int>();
  }
  if (j.contains("horizon")) cfg.horizon = j["horizon"].get<int>();
  if (j.contains("modes")) cfg.modes = j["modes"].get<std::vector<std::string>>();
  if (j.contains("seeds"))
    cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("snr_sweep"))
    cfg.snr_sweep = j["snr_sweep"].get<std::vector<double>>();
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  for (const std::string& m : cfg.modes) mode_from_string(m);  // validate
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["msd"] = {{"n_masses", cfg.msd.n_masses},
              {"mass", vector_to_json(cfg.msd.mass)},
              {"stiffness", vector_to_json(cfg.msd.stiffness)},
              {"damping", vector_to_json(cfg.msd.damping)},
              {"f0_hz", cfg.msd.f0_hz},
              {"n_lines", cfg.msd.n_lines},
              {"duration_s", cfg.msd.duration_s},
              {"sample_rate_hz", cfg.msd.sample_rate_hz},
              {"substeps", cfg.msd.substeps},
              {"snr_db", cfg.msd.snr_db},
              {"seed", cfg.msd.seed}};
  j["train"] = {{"truncation", cfg.train.truncation},
                {"batch", cfg.train.batch},
                {"lr", cfg.train.lr},
                {"iterations", cfg.train.iterations},
                {"pretrain_iterations", cfg.train.pretrain_iterations},
                {"val_period", cfg.train.val_period},
                {"rk4_steps_per_sample", cfg.train.rk4_steps_per_sample},
                {"seed", cfg.train.seed}};
  j["model"] = {{"n_x", cfg.dims.n_x},
                {"n_a", cfg.dims.n_a},
                {"n_b", cfg.dims.n_b},
                {"enc_hidden", cfg.dims.enc_hidden},
                {"mat_hidden", cfg.dims.mat_hidden}};
  j["horizon"] = cfg.horizon;
  j["modes"] = cfg.modes;
  j["seeds"] = cfg.seeds;
  j["snr_sweep"] = cfg.snr_sweep;
  j["out_dir"] = cfg.out_dir;
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string s = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds,
                       const std::string& hash) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  const int n_u = static_cast<int>(ds.u.cols());
  const int n_y = static_cast<int>(ds.y.cols());
  const bool clean = ds.y_clean.size() > 0;
  f << "t";
  for (int i = 1; i <= n_u; ++i) f << ",u" << i;
  for (int i = 1; i <= n_y; ++i) f << ",y" << i;
  if (clean)
    for (int i = 1; i <= n_y; ++i) f << ",y" << i << "_clean";
  f << "\n";
  f.precision(17);
  for (int k = 0; k < ds.n_samples(); ++k) {
    f << k * ds.ts;
    for (int i = 0; i < n_u; ++i) f << "," << ds.u(k, i);
    for (int i = 0; i < n_y; ++i) f << "," << ds.y(k, i);
    if (clean)
      for (int i = 0; i < n_y; ++i) f << "," << ds.y_clean(k, i);
    f << "\n";
  }
  json meta = {{"ts", ds.ts},
               {"role", ds.role},
               {"seed", ds.seed},
               {"config_hash", hash}};
  write_json_file(path.string() + ".meta.json", meta);
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  std::string header;
  std::getline(f, header);
  int n_u = 0, n_y = 0, n_clean = 0;
  {
    std::stringstream hs(header);
    std::string tok;
    while (std::getline(hs, tok, ',')) {
      if (tok.rfind("u", 0) == 0) ++n_u;
      else if (tok.rfind("y", 0) == 0 && tok.find("_clean") != std::string::npos) ++n_clean;
      else if (tok.rfind("y", 0) == 0) ++n_y;
    }
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) row.push_back(std::stod(tok));
    rows.push_back(std::move(row));
  }
  Dataset ds;
  const int n = static_cast<int>(rows.size());
  ds.u.resize(n, n_u);
  ds.y.resize(n, n_y);
  if (n_clean > 0) ds.y_clean.resize(n, n_clean);
  for (int k = 0; k < n; ++k) {
    int c = 1;
    for (int i = 0; i < n_u; ++i) ds.u(k, i) = rows[static_cast<std::size_t>(k)][static_cast<std::size_t>(c++)];
    for (int i = 0; i < n_y; ++i) ds.y(k, i) = rows[static_cast<std::size_t>(k)][static_cast<std::size_t>(c++)];
    for (int i = 0; i < n_clean; ++i)
      ds.y_clean(k, i) = rows[static_cast<std::size_t>(k)][static_cast<std::size_t>(c++)];
  }
  const json meta = read_json_file(path.string() + ".meta.json");
  ds.ts = meta.at("ts").get<double>();
  ds.role = meta.at("role").get<std::string>();
  ds.seed = meta.at("seed").get<std::uint64_t>();
  return ds;
}

void write_linear_ph(const std::filesystem::path& path, const LinearPH& ph,
                     const Standardizer& st, const std::string& hash,
                     const std::string& report) {
  json j = {{"format", "phid-linear-ph"},
            {"version", 1},
            {"linear_ph", linear_ph_to_json(ph)},
            {"standardizer", standardizer_to_json(st)},
            {"config_hash", hash},
            {"passivity_report", report}};
  write_json_file(path, j);
}

LinearPhFile read_linear_ph(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  if (j.at("format").get<std::string>() != "phid-linear-ph")
    throw std::runtime_error("not a linear PH file: " + path.string());
  LinearPhFile out;
  out.ph = linear_ph_from_json(j.at("linear_ph"));
  out.st = standardizer_from_json(j.at("standardizer"));
  out.hash = j.at("config_hash").get<std::string>();
  out.report = j.at("passivity_report").get<std::string>();
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const PhnnParams& p,
                      const Standardizer& st, const std::string& hash,
                      std::uint64_t seed) {
  json j;
  j["format"] = "phid-checkpoint";
  j["version"] = 1;
  j["mode"] = to_string(p.mode);
  j["dims"] = {{"n_x", p.n_x}, {"n_p", p.n_p}, {"n_y", p.n_y},
               {"n_u", p.n_u}, {"n_a", p.n_a}, {"n_b", p.n_b}};
  json theta = json::array();
  for (const Eigen::MatrixXd& m : p.theta) theta.push_back(matrix_to_json_exact(m));
  j["theta"] = std::move(theta);
  j["nets"] = {{"enc_lin", net_to_json(p.enc_lin)},
               {"enc_mlp", net_to_json(p.enc_mlp)},
               {"net_a", net_to_json(p.net_a)},
               {"net_b", net_to_json(p.net_b)},
               {"net_g", net_to_json(p.net_g)},
               {"net_p", net_to_json(p.net_p)},
               {"net_h", net_to_json(p.net_h)}};
  j["const_idx"] = {p.idx_ac, p.idx_bc, p.idx_gc, p.idx_pc, p.idx_lc};
  if (p.mode == Mode::NnLinearInit) j["linear_ph"] = linear_ph_to_json(p.lin);
  j["standardizer"] = standardizer_to_json(st);
  j["config_hash"] = hash;
  j["seed"] = seed;
  write_json_file(path, j);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  if (j.at("format").get<std::string>() != "phid-checkpoint")
    throw std::runtime_error("not a checkpoint file: " + path.string());
  CheckpointFile out;
  PhnnParams& p = out.params;
  p.mode = mode_from_string(j.at("mode").get<std::string>());
  const json& d = j.at("dims");
  p.n_x = d.at("n_x").get<int>();
  p.n_p = d.at("n_p").get<int>();
  p.n_y = d.at("n_y").get<int>();
  p.n_u = d.at("n_u").get<int>();
  p.n_a = d.at("n_a").get<int>();
  p.n_b = d.at("n_b").get<int>();
  for (const json& m : j.at("theta")) p.theta.push_back(matrix_from_json_exact(m));
  const json& nets = j.at("nets");
  p.enc_lin = net_from_json(nets.at("enc_lin"));
  p.enc_mlp = net_from_json(nets.at("enc_mlp"));
  p.net_a = net_from_json(nets.at("net_a"));
  p.net_b = net_from_json(nets.at("net_b"));
  p.net_g = net_from_json(nets.at("net_g"));
  p.net_p = net_from_json(nets.at("net_p"));
  p.net_h = net_from_json(nets.at("net_h"));
  const auto idx = j.at("const_idx").get<std::vector<int>>();
  p.idx_ac = idx[0];
  p.idx_bc = idx[1];
  p.idx_gc = idx[2];
  p.idx_pc = idx[3];
  p.idx_lc = idx[4];
  if (p.mode == Mode::NnLinearInit)
    p.lin = linear_ph_from_json(j.at("linear_ph"));
  out.st = standardizer_from_json(j.at("standardizer"));
  out.hash = j.at("config_hash").get<std::string>();
  out.seed = j.at("seed").get<std::uint64_t>();
  return out;
}

void write_log_csv(const std::filesystem::path& path,
                   const std::vector<LogEntry>& log) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << "iter,train_loss,val_nrmse\n";
  f.precision(12);
  for (const LogEntry& e : log) {
    f << e.iter << "," << e.train_loss << ",";
    if (std::isfinite(e.val_nrmse)) f << e.val_nrmse;
    f << "\n";
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  json j;
  f >> j;
  return j;
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << j.dump(2) << "\n";
}

}  // namespace phid
