#include "treefield/grid.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

namespace treefield {

namespace {
constexpr char kMagic[4] = {'V', 'O', 'X', '1'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& in, const std::string& path, const char* field) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(path + ": truncated reading " + field);
  return v;
}

int64_t grid_numel(int d, int64_t n) {
  int64_t c = 1;
  for (int i = 0; i < d; ++i) c *= n;
  return c;
}
}  // namespace

VoxelGrid::VoxelGrid(int d_, int64_t n_) : d(d_), n(n_) {
  if (d != 2 && d != 3) throw ShapeError("VoxelGrid: d must be 2 or 3");
  if (n < 1) throw ShapeError("VoxelGrid: resolution must be positive");
  values.assign(grid_numel(d, n), 0.0f);
}

void save_grid(const VoxelGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<uint32_t>(grid.d));
  write_u32(out, static_cast<uint32_t>(grid.n));
  out.write(reinterpret_cast<const char*>(grid.values.data()),
            static_cast<std::streamsize>(grid.values.size() * sizeof(float)));
  if (!out) throw DataError("write failed for " + path);
}

VoxelGrid load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError(path + ": bad magic, not a VOX1 grid");
  const uint32_t version = read_u32(in, path, "version");
  if (version != kVersion)
    throw DataError(path + ": unsupported grid version " + std::to_string(version));
  const uint32_t d = read_u32(in, path, "dimension");
  const uint32_t n = read_u32(in, path, "resolution");
  if (d != 2 && d != 3) throw DataError(path + ": dimension must be 2 or 3, got " + std::to_string(d));
  if (n < 1) throw DataError(path + ": resolution must be positive");

  VoxelGrid grid(static_cast<int>(d), static_cast<int64_t>(n));
  in.read(reinterpret_cast<char*>(grid.values.data()),
          static_cast<std::streamsize>(grid.values.size() * sizeof(float)));
  if (!in) throw DataError(path + ": truncated value payload");
  char extra = 0;
  if (in.read(&extra, 1)) throw DataError(path + ": trailing bytes after value payload");
  for (float v : grid.values)
    if (!std::isfinite(v)) throw DataError(path + ": non-finite grid value");
  return grid;
}

void save_pgm(const VoxelGrid& grid, const std::string& path) {
  if (grid.d != 2) throw ShapeError("save_pgm: 2D grids only");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "P5\n" << grid.n << " " << grid.n << "\n255\n";
  std::vector<unsigned char> row(grid.n);
  for (int64_t y = grid.n - 1; y >= 0; --y) {
    for (int64_t x = 0; x < grid.n; ++x) {
      float v = grid.at2(x, y);
      v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace treefield
