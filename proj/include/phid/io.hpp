#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "phid/linear_ident.hpp"
#include "phid/model.hpp"
#include "phid/msd.hpp"
#include "phid/training.hpp"

namespace phid {

using nlohmann::json;

// ---- JSON matrix helpers -------------------------------------------------

json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);

// Bit-exact round trip via hexfloat strings.
json matrix_to_json_exact(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json_exact(const json& j);

// ---- Experiment configuration ---------------------------------------------

struct ExperimentConfig {
  MsdConfig msd;
  TrainConfig train;
  ModelDims dims;
  int horizon = 20;
  std::vector<std::string> modes = {"linear-direct", "nn-random",
                                    "nn-linear-init"};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<double> snr_sweep = {10.0, 20.0, 30.0, 40.0};
  std::string out_dir = "out";
};

// Schema-validated parse; unknown keys are rejected.
ExperimentConfig config_from_json(const json& j);
json config_to_json(const ExperimentConfig& cfg);

// FNV-1a hash of the canonical config serialization; embedded in every
// artifact for provenance.
std::string config_hash(const ExperimentConfig& cfg);

// ---- Datasets ---------------------------------------------------------------

// CSV with header t,u1,y1..y_ny[,y1_clean..]; metadata in <path>.meta.json.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds,
                       const std::string& hash);
Dataset read_dataset_csv(const std::filesystem::path& path);

// ---- Linear PH estimate ------------------------------------------------------

void write_linear_ph(const std::filesystem::path& path, const LinearPH& ph,
                     const Standardizer& st, const std::string& hash,
                     const std::string& report);
struct LinearPhFile {
  LinearPH ph;
  Standardizer st;
  std::string hash;
  std::string report;
};
LinearPhFile read_linear_ph(const std::filesystem::path& path);

// ---- Checkpoints -------------------------------------------------------------

// Versioned, bit-exact parameter checkpoint with the embedded LinearPH,
// mode flag, and standardizer.
void write_checkpoint(const std::filesystem::path& path, const PhnnParams& p,
                      const Standardizer& st, const std::string& hash,
                      std::uint64_t seed);
struct CheckpointFile {
  PhnnParams params;
  Standardizer st;
  std::string hash;
  std::uint64_t seed = 0;
};
CheckpointFile read_checkpoint(const std::filesystem::path& path);

// ---- Logs ---------------------------------------------------------------------

void write_log_csv(const std::filesystem::path& path,
                   const std::vector<LogEntry>& log);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);

}  // namespace phid
