#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mfsc/envs/gridworld.hpp"

namespace mfsc::envs {

/// 8-bit RGB PNG, rows top to bottom.
void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb);

/// Writes layout.png (the full map), render_table.png (one row per state,
/// every view side by side, first frame only) and manifest.json.
void export_render_table(const GridWorld& env, const std::filesystem::path& dir);

}  // namespace mfsc::envs
