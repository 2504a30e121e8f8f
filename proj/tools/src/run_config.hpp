#pragma once

#include <filesystem>
#include <string_view>

#include "spectrum/network.hpp"
#include "spectrum/signal_pipeline.hpp"
#include "spectrum/training.hpp"

namespace spectrum::cli {

/// Everything the train command reads from its JSON config.
struct RunConfig {
  net::ModelConfig model;
  train::TrainConfig train;
  signal::PreprocessOptions preprocess;
};

/// Parses a config of the form
/// {"model": {...}, "train": {..., "batch": {...}}, "preprocess": {...}}.
/// Every key is optional; unknown keys are errors.
RunConfig parse_run_config(std::string_view text, std::string_view source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace spectrum::cli
