#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace faciesgan {

// Facies codes used throughout.
enum FaciesCode : uint8_t {
  kFloodplain = 0,
  kChannel = 1,
  kLevee = 2,
  kSplay = 3,
};
inline constexpr int kNumFaciesCodes = 4;

// 2D categorical field of facies codes, row-major.
struct FaciesGrid {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> cells;

  FaciesGrid() = default;
  FaciesGrid(int h, int w) : height(h), width(w), cells(static_cast<size_t>(h) * w, 0) {}

  uint8_t& at(int r, int c) { return cells[static_cast<size_t>(r) * width + c]; }
  uint8_t at(int r, int c) const { return cells[static_cast<size_t>(r) * width + c]; }
  long size() const { return static_cast<long>(height) * width; }

  bool operator==(const FaciesGrid& o) const {
    return height == o.height && width == o.width && cells == o.cells;
  }
};

// Fraction of cells equal to `code`. Total on valid inputs.
double facies_proportion(const FaciesGrid& grid, int code);

// Binary portable graymap: text header "P5 <w> <h> 255\n" followed by
// row-major 8-bit facies codes. Round-trips bit-exactly.
void write_pgm(const std::filesystem::path& path, const FaciesGrid& grid);
FaciesGrid read_pgm(const std::filesystem::path& path);

}  // namespace faciesgan
