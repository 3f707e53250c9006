#pragma once

#include <filesystem>
#include <span>
#include <string_view>

namespace somforge::raster {

/// Binary 8-bit PGM (P5, maxval 255) with linear min-max scaling. The range
/// is written to a sidecar "<path>.txt" as "min=...\nmax=...\n" followed by
/// `provenance`.
void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t width,
               std::size_t height, std::string_view provenance = {});

}  // namespace somforge::raster
