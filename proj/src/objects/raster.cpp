#include "somforge/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "somforge/error.hpp"
#include "somforge/somt.hpp"

namespace somforge::raster {

void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t width,
               std::size_t height, std::string_view provenance) {
  if (pixels.size() != width * height || pixels.empty()) throw ShapeError("PGM: pixel count does not match size");
  const auto [lo_it, hi_it] = std::minmax_element(pixels.begin(), pixels.end());
  const double lo = *lo_it, hi = *hi_it;
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (double v : pixels) {
    const double u = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0))));
  }
  somt::write_file_atomic(path, out);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "min=%.17g\nmax=%.17g\n", lo, hi);
  std::filesystem::path side = path;
  side += ".txt";
  somt::write_file_atomic(side, std::string(buf) + std::string(provenance));
}

}  // namespace somforge::raster
