#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "robustaug/attack.hpp"
#include "robustaug/augment.hpp"
#include "robustaug/data.hpp"
#include "robustaug/diagnostics.hpp"
#include "robustaug/model.hpp"
#include "robustaug/trainer.hpp"

namespace robustaug::cli {

struct DataConfig {
  // "synthetic" or "cifar10".
  std::string source = "synthetic";
  std::string kind = "gaussian_blobs_img";
  // The pool holds train_size + val_size examples; validation is drawn from
  // it with the run seed. The test set is separate and keeps true labels.
  std::size_t train_size = 320;
  std::size_t val_size = 128;
  std::size_t test_size = 256;
  std::size_t num_classes = 2;
  std::size_t image_size = 16;
  double signal = 0.25;
  double noise = 0.2;
  double label_noise = 0.15;
  std::uint64_t data_seed = 1234;
  // cifar10 only: classes kept (relabelled in order) and the data directory
  // (empty: ROBUSTAUG_DATA_DIR).
  std::vector<int> classes = {0, 1};
  std::string dir;
};

struct EvalConfig {
  std::vector<CascadeStage> cascade;
  // "test" or "validation".
  std::string split = "test";
};

struct DiagConfig {
  std::vector<double> eps_radii;
  std::vector<std::size_t> step_counts;
  LandscapeSpec landscape;
  std::size_t landscape_example = 0;
  std::vector<double> wa_taus;
  std::vector<std::vector<AugmentSpec>> wa_augments;
};

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  DataConfig data;
  ArchSpec model;
  TrainConfig trainer;
  EvalConfig eval;
  DiagConfig diagnostics;

  std::filesystem::path run_dir() const;
};

// Defaults for every key; trainer.trades_beta is set to 6.
RunConfig default_run_config();

// Strict parse: unknown keys and type mismatches raise ConfigError naming the
// key path (e.g. "trainer.foo").
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
// Every key, defaults expanded. Parsing the result reproduces the config.
nlohmann::json to_json(const RunConfig& cfg);

nlohmann::json attack_to_json(const AttackConfig& a);
nlohmann::json augment_to_json(const AugmentSpec& a);

struct LoadedData {
  Dataset pool;
  Dataset test;
  Split split;
};

LoadedData load_data(const RunConfig& cfg);
// Architecture with the input geometry and class count of the data.
ArchSpec resolved_arch(const RunConfig& cfg, const Dataset& ds);

}  // namespace robustaug::cli
