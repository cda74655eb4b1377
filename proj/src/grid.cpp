#include "faciesgan/grid.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace faciesgan {

double facies_proportion(const FaciesGrid& grid, int code) {
  if (code < 0 || code >= kNumFaciesCodes)
    throw std::invalid_argument("facies_proportion: code out of range");
  if (grid.size() == 0) throw std::invalid_argument("facies_proportion: empty grid");
  long count = 0;
  for (uint8_t c : grid.cells) count += (c == code);
  return static_cast<double>(count) / static_cast<double>(grid.size());
}

void write_pgm(const std::filesystem::path& path, const FaciesGrid& grid) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path.string());
  os << "P5 " << grid.width << " " << grid.height << " 255\n";
  os.write(reinterpret_cast<const char*>(grid.cells.data()),
           static_cast<std::streamsize>(grid.cells.size()));
  if (!os) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

FaciesGrid read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_pgm: cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("read_pgm: malformed header in " + path.string());
  is.get();  // single whitespace after maxval
  FaciesGrid grid(h, w);
  is.read(reinterpret_cast<char*>(grid.cells.data()),
          static_cast<std::streamsize>(grid.cells.size()));
  if (is.gcount() != static_cast<std::streamsize>(grid.cells.size()))
    throw std::runtime_error("read_pgm: truncated payload in " + path.string());
  return grid;
}

}  // namespace faciesgan
