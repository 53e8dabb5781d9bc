#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "robustaug/trainer.hpp"
#include "run_config.hpp"

namespace robustaug::cli {

enum ExitCode : int { kOk = 0, kConfig = 2, kIo = 3, kNumerical = 4 };

// Maps a library exception to its exit code.
int exit_code_for(const std::exception& e);

// Trains into cfg.run_dir(): config.json (resolved), train_log.csv,
// {step}.ckpt / {step}.ema.ckpt, best.ckpt, best.ema.ckpt and finally a
// `done` marker.
TrainLog train_run(const RunConfig& cfg);

struct ReproRun {
  std::string name;
  RunConfig config;
};

// Config matrix of a figure: fig2a, fig3, fig5, fig6, fig9.
std::vector<ReproRun> repro_matrix(const std::string& figure, const RunConfig& base);

// Writes `text` to `path` through a temporary file and a rename.
void write_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Entry point shared by the executable and the tests.
int run_cli(int argc, const char* const* argv);

}  // namespace robustaug::cli
