#pragma once

// Model checkpoints as versioned JSON documents. Layout is described in
// docs/checkpoint_format.md.

#include <filesystem>
#include <string>

#include "lercp/estimation.hpp"

namespace lercp {

inline constexpr int kCheckpointVersion = 1;

std::string to_checkpoint(const DifficultyModel& model);
std::string to_checkpoint(const QuantileNet& net);

DifficultyModel difficulty_from_checkpoint(const std::string& text);
QuantileNet quantile_from_checkpoint(const std::string& text);

void save_text(const std::filesystem::path& path, const std::string& text);
std::string load_text(const std::filesystem::path& path);

}  // namespace lercp
